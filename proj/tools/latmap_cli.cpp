#include <cstdint>
#include <filesystem>
#include <iostream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "latmap/errors.hpp"
#include "latmap/pipeline.hpp"

namespace fs = std::filesystem;
using namespace latmap;

namespace {

struct CommonArgs {
  std::string config_path;
  std::string out_dir;
  std::uint64_t seed = 0;
  std::string method = "all";
  int budget = -1;
  std::vector<CLI::Option*> seed_opts;

  bool seed_given() const {
    for (const CLI::Option* o : seed_opts)
      if (o->count() > 0) return true;
    return false;
  }
};

void add_common(CLI::App* sub, CommonArgs& a, bool with_method) {
  sub->add_option("--config", a.config_path, "experiment config JSON");
  sub->add_option("--out", a.out_dir, "run directory (default run/<name>)");
  a.seed_opts.push_back(sub->add_option("--seed", a.seed, "override the config seed"));
  if (with_method)
    sub->add_option("--method", a.method, "conformal, lddmm, ot, or all");
}

std::vector<std::string> pick_methods(const std::string& m) {
  if (m == "all") return pipeline::kMethods;
  pipeline::method_code(m);  // validates
  return {m};
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"domain-mapping operator-learning experiment pipeline"};
  app.require_subcommand(1);

  CommonArgs a;
  CLI::App* c_gen = app.add_subcommand("generate", "draw domains, solve the PDE");
  add_common(c_gen, a, false);
  CLI::App* c_map = app.add_subcommand("map", "transport solutions to the annulus");
  add_common(c_map, a, true);
  CLI::App* c_train = app.add_subcommand("train", "fit the latent operator");
  add_common(c_train, a, true);
  c_train->add_option("--budget", a.budget, "train on the first N samples only");
  CLI::App* c_eval = app.add_subcommand("eval", "score the held-out samples");
  add_common(c_eval, a, true);
  c_eval->add_option("--budget", a.budget, "evaluate the budget-N model");
  CLI::App* c_report = app.add_subcommand("report", "consolidate results");
  add_common(c_report, a, false);
  CLI::App* c_sweep = app.add_subcommand("sweep", "sample-efficiency sweep");
  add_common(c_sweep, a, false);
  CLI::App* c_run = app.add_subcommand("run", "generate, map, train, eval, report");
  add_common(c_run, a, true);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 2;
  }

  try {
    pipeline::ExperimentConfig cfg;
    if (!a.config_path.empty()) cfg = pipeline::load_config_file(a.config_path);
    if (a.seed_given()) cfg.seed = a.seed;
    cfg.validate();
    const fs::path out =
        a.out_dir.empty() ? fs::path("run") / cfg.name : fs::path(a.out_dir);

    if (c_gen->parsed()) {
      pipeline::cmd_generate(cfg, out);
      std::cout << "dataset ready under " << out.string() << "\n";
    } else if (c_map->parsed()) {
      for (const auto& m : pick_methods(a.method)) {
        pipeline::cmd_map(cfg, out, m);
        std::cout << "mapped " << m << "\n";
      }
    } else if (c_train->parsed()) {
      for (const auto& m : pick_methods(a.method)) {
        pipeline::cmd_train(cfg, out, m, a.budget);
        std::cout << "trained " << m << "\n";
      }
    } else if (c_eval->parsed()) {
      for (const auto& m : pick_methods(a.method)) {
        const auto s = pipeline::cmd_eval(cfg, out, m, a.budget);
        std::cout << m << " budget=" << s.budget << " n_test=" << s.n_test
                  << " latent_rel_l2=" << s.latent_mean
                  << " domain_rel_l2=" << s.domain_mean << "\n";
      }
    } else if (c_report->parsed()) {
      pipeline::cmd_report(cfg, out);
      std::cout << "report written to " << (out / "report").string() << "\n";
    } else if (c_sweep->parsed()) {
      pipeline::cmd_sweep(cfg, out);
      std::cout << "sweep written to " << (out / "report" / "sweep.csv").string() << "\n";
    } else if (c_run->parsed()) {
      pipeline::run_all(cfg, out, pick_methods(a.method));
      std::cout << "full run complete under " << out.string() << "\n";
    }
  } catch (const config_error& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return 2;
  } catch (const artifact_error& e) {
    std::cerr << "missing artifact: " << e.what() << "\n";
    return 4;
  } catch (const numeric_error& e) {
    std::cerr << "numerical failure: " << e.what() << "\n";
    return 3;
  } catch (const nlohmann::json::exception& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "failure: " << e.what() << "\n";
    return 3;
  }
  return 0;
}
