#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include <json.hpp>

#include "latmap/conformal.hpp"
#include "latmap/lddmm.hpp"
#include "latmap/nn.hpp"

namespace latmap::pipeline {

// Everything a run needs, JSON-serializable. Unknown keys in a config file
// are rejected so typos cannot silently fall back to defaults.
struct ExperimentConfig {
  std::string name = "run";
  std::uint64_t seed = 1;
  int n_train = 80;
  int n_test = 40;
  conformal::ReferenceAnnulus grid;  // 48 x 96 on [1, 2] by default
  int mesh_refine = 2;               // FEM grid refinement over the latent grid
  int fourier_modes = 6;             // boundary-data series length
  int boundary_samples = 256;        // curve sampling density
  conformal::FitOptions fit;
  int pca_modes = 10;  // geometry code length for the registration backends
  int landmarks_per_curve = 64;
  double snap_tol = 0.1;  // pullback boundary snap allowance
  int max_retries = 32;   // shape redraws per sample index
  lddmm::KernelConfig kernel;
  nn::TrainConfig train;  // train.epochs is ignored, see epochs_for
  int epochs_conformal = 500;
  int epochs_lddmm = 2000;
  int epochs_ot = 5000;
  std::vector<int> sweep_budgets = {20, 40, 80};
  std::vector<std::string> sweep_methods = {"conformal", "lddmm"};

  int epochs_for(const std::string& method) const;
  void validate() const;
};

extern const std::vector<std::string> kMethods;  // conformal, lddmm, ot
int method_code(const std::string& method);      // index into kMethods

ExperimentConfig config_from_json(const nlohmann::json& j);
nlohmann::json config_to_json(const ExperimentConfig& cfg);
ExperimentConfig load_config_file(const std::filesystem::path& path);

// On-disk layout of one experiment directory.
struct RunPaths {
  std::filesystem::path root;

  std::filesystem::path config() const { return root / "config.json"; }
  std::filesystem::path dataset() const { return root / "dataset"; }
  std::filesystem::path sample(int id) const;
  std::filesystem::path rejected() const { return dataset() / "rejected.json"; }
  std::filesystem::path dataset_manifest() const { return dataset() / "manifest.json"; }
  std::filesystem::path latent_root(const std::string& method) const;
  std::filesystem::path latent_sample(const std::string& method, int id) const;
  std::filesystem::path model_dir(const std::string& tag) const;
  std::filesystem::path report() const { return root / "report"; }
  std::filesystem::path timings() const { return report() / "timings.json"; }
};

// Per-sample base seed; independent of n_train/n_test so nested-budget and
// shared-test-set subsets are literal prefixes of the same sample stream.
std::uint64_t sample_seed(const ExperimentConfig& cfg, int sample_id);

// "conformal" for the full training budget, "conformal_n20" for a sweep
// point.
std::string model_tag(const ExperimentConfig& cfg, const std::string& method, int budget);

// Stage entry points. Each validates the config, writes or checks the
// config.json echo in the run directory, and records its wall time in
// report/timings.json (the only non-deterministic artifact).
void cmd_generate(const ExperimentConfig& cfg, const std::filesystem::path& out_root);
void cmd_map(const ExperimentConfig& cfg, const std::filesystem::path& out_root,
             const std::string& method);
void cmd_train(const ExperimentConfig& cfg, const std::filesystem::path& out_root,
               const std::string& method, int budget = -1);

struct EvalSummary {
  std::string method;
  int budget = 0;
  int n_test = 0;
  double latent_mean = 0.0, latent_sd = 0.0;
  double domain_mean = 0.0, domain_sd = 0.0;
};
EvalSummary cmd_eval(const ExperimentConfig& cfg, const std::filesystem::path& out_root,
                     const std::string& method, int budget = -1);

void cmd_report(const ExperimentConfig& cfg, const std::filesystem::path& out_root);

// Nested-budget retraining for the sample-efficiency curve. Generates and
// maps on demand, trains and evaluates every (sweep method, budget) pair,
// then rebuilds the report. The budget equal to n_train doubles as the
// headline model.
void cmd_sweep(const ExperimentConfig& cfg, const std::filesystem::path& out_root);

// Convenience driver: generate, then map/train/eval for the given methods,
// then report.
void run_all(const ExperimentConfig& cfg, const std::filesystem::path& out_root,
             const std::vector<std::string>& methods);

}  // namespace latmap::pipeline
