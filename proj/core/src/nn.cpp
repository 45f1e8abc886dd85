#include "latmap/nn.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <limits>
#include <sstream>

#include <json.hpp>

#include "latmap/errors.hpp"
#include "latmap/io_util.hpp"
#include "latmap/rng.hpp"

namespace latmap::nn {

using Eigen::MatrixXd;
using Eigen::RowVectorXd;
using Eigen::VectorXd;
using nlohmann::json;

int Tape::push(MatrixXd value, bool needs_grad, std::function<void(Tape&, int)> back) {
  Node n;
  n.val = std::move(value);
  n.needs_grad = needs_grad;
  n.back = std::move(back);
  nodes_.push_back(std::move(n));
  return static_cast<int>(nodes_.size()) - 1;
}

int Tape::leaf(MatrixXd value) { return push(std::move(value), true, nullptr); }

int Tape::constant(MatrixXd value) { return push(std::move(value), false, nullptr); }

MatrixXd& Tape::grad_ref(int id) {
  Node& n = nodes_[id];
  if (n.grad.size() == 0) n.grad = MatrixXd::Zero(n.val.rows(), n.val.cols());
  return n.grad;
}

const MatrixXd& Tape::grad(int id) const {
  const Node& n = nodes_[id];
  if (n.grad.size() == 0)
    throw config_error("gradient requested for a node backward never reached");
  return n.grad;
}

bool Tape::needs(int id) const { return nodes_[id].needs_grad; }

int Tape::matmul(int a, int b) {
  if (nodes_[a].val.cols() != nodes_[b].val.rows())
    throw config_error("matmul inner dimensions disagree");
  MatrixXd v = nodes_[a].val * nodes_[b].val;
  bool ng = needs(a) || needs(b);
  return push(std::move(v), ng, [a, b](Tape& t, int self) {
    const MatrixXd& g = t.nodes_[self].grad;
    if (t.needs(a)) t.grad_ref(a).noalias() += g * t.nodes_[b].val.transpose();
    if (t.needs(b)) t.grad_ref(b).noalias() += t.nodes_[a].val.transpose() * g;
  });
}

int Tape::matmul_bt(int a, int b) {
  if (nodes_[a].val.cols() != nodes_[b].val.cols())
    throw config_error("matmul_bt inner dimensions disagree");
  MatrixXd v = nodes_[a].val * nodes_[b].val.transpose();
  bool ng = needs(a) || needs(b);
  return push(std::move(v), ng, [a, b](Tape& t, int self) {
    const MatrixXd& g = t.nodes_[self].grad;
    if (t.needs(a)) t.grad_ref(a).noalias() += g * t.nodes_[b].val;
    if (t.needs(b)) t.grad_ref(b).noalias() += g.transpose() * t.nodes_[a].val;
  });
}

namespace {
void require_same_shape(const Eigen::MatrixXd& a, const Eigen::MatrixXd& b, const char* op) {
  if (a.rows() != b.rows() || a.cols() != b.cols())
    throw config_error(std::string(op) + " wants operands of one shape");
}
}  // namespace

int Tape::add(int a, int b) {
  require_same_shape(nodes_[a].val, nodes_[b].val, "add");
  MatrixXd v = nodes_[a].val + nodes_[b].val;
  return push(std::move(v), needs(a) || needs(b), [a, b](Tape& t, int self) {
    const MatrixXd& g = t.nodes_[self].grad;
    if (t.needs(a)) t.grad_ref(a) += g;
    if (t.needs(b)) t.grad_ref(b) += g;
  });
}

int Tape::sub(int a, int b) {
  require_same_shape(nodes_[a].val, nodes_[b].val, "sub");
  MatrixXd v = nodes_[a].val - nodes_[b].val;
  return push(std::move(v), needs(a) || needs(b), [a, b](Tape& t, int self) {
    const MatrixXd& g = t.nodes_[self].grad;
    if (t.needs(a)) t.grad_ref(a) += g;
    if (t.needs(b)) t.grad_ref(b) -= g;
  });
}

int Tape::hadamard(int a, int b) {
  require_same_shape(nodes_[a].val, nodes_[b].val, "hadamard");
  MatrixXd v = nodes_[a].val.cwiseProduct(nodes_[b].val);
  return push(std::move(v), needs(a) || needs(b), [a, b](Tape& t, int self) {
    const MatrixXd& g = t.nodes_[self].grad;
    if (t.needs(a)) t.grad_ref(a) += g.cwiseProduct(t.nodes_[b].val);
    if (t.needs(b)) t.grad_ref(b) += g.cwiseProduct(t.nodes_[a].val);
  });
}

int Tape::add_rowvec(int a, int r) {
  if (nodes_[r].val.rows() != 1 || nodes_[r].val.cols() != nodes_[a].val.cols())
    throw config_error("add_rowvec wants a 1 x cols(A) operand");
  MatrixXd v = nodes_[a].val.rowwise() + nodes_[r].val.row(0);
  return push(std::move(v), needs(a) || needs(r), [a, r](Tape& t, int self) {
    const MatrixXd& g = t.nodes_[self].grad;
    if (t.needs(a)) t.grad_ref(a) += g;
    if (t.needs(r)) t.grad_ref(r) += g.colwise().sum();
  });
}

int Tape::tanh_act(int a) {
  MatrixXd v = nodes_[a].val.array().tanh();
  return push(std::move(v), needs(a), [a](Tape& t, int self) {
    if (!t.needs(a)) return;
    const Node& n = t.nodes_[self];
    t.grad_ref(a).array() += n.grad.array() * (1.0 - n.val.array().square());
  });
}

int Tape::relu_act(int a) {
  MatrixXd v = nodes_[a].val.cwiseMax(0.0);
  return push(std::move(v), needs(a), [a](Tape& t, int self) {
    if (!t.needs(a)) return;
    const MatrixXd& g = t.nodes_[self].grad;
    t.grad_ref(a).array() +=
        g.array() * (t.nodes_[a].val.array() > 0.0).cast<double>();
  });
}

int Tape::affine_scalar(int a, int s, int c) {
  if (nodes_[s].val.size() != 1 || nodes_[c].val.size() != 1)
    throw config_error("affine_scalar wants 1 x 1 scale and shift nodes");
  const double s0 = nodes_[s].val(0, 0);
  const double c0 = nodes_[c].val(0, 0);
  MatrixXd v = (s0 * nodes_[a].val).array() + c0;
  bool ng = needs(a) || needs(s) || needs(c);
  return push(std::move(v), ng, [a, s, c, s0](Tape& t, int self) {
    const MatrixXd& g = t.nodes_[self].grad;
    if (t.needs(a)) t.grad_ref(a) += s0 * g;
    if (t.needs(s)) t.grad_ref(s)(0, 0) += g.cwiseProduct(t.nodes_[a].val).sum();
    if (t.needs(c)) t.grad_ref(c)(0, 0) += g.sum();
  });
}

int Tape::mse(int a, const MatrixXd& target) {
  const MatrixXd& av = nodes_[a].val;
  if (av.rows() != target.rows() || av.cols() != target.cols())
    throw config_error("mse shape mismatch");
  MatrixXd diff = av - target;
  const double inv_n = 1.0 / static_cast<double>(diff.size());
  MatrixXd v(1, 1);
  v(0, 0) = diff.squaredNorm() * inv_n;
  return push(std::move(v), needs(a),
              [a, inv_n, diff = std::move(diff)](Tape& t, int self) {
                if (!t.needs(a)) return;
                const double g = t.nodes_[self].grad(0, 0);
                t.grad_ref(a) += (2.0 * inv_n * g) * diff;
              });
}

void Tape::backward(int loss_id) {
  if (ran_backward_)
    throw config_error("tape already backpropagated, build a fresh one per step");
  if (loss_id < 0 || loss_id >= size()) throw config_error("backward: bad node id");
  if (nodes_[loss_id].val.size() != 1)
    throw config_error("backward starts from a scalar node");
  ran_backward_ = true;
  grad_ref(loss_id).setOnes();
  for (int i = loss_id; i >= 0; --i) {
    Node& n = nodes_[i];
    if (n.grad.size() == 0 || !n.back) continue;
    n.back(*this, i);
  }
}

double relative_l2(const VectorXd& approx, const VectorXd& truth) {
  const double denom = truth.norm();
  if (!(denom > 0.0)) throw numeric_error("relative_l2 against a zero field");
  return (approx - truth).norm() / denom;
}

Mlp make_mlp(int in_dim, const std::vector<int>& hidden, int out_dim,
             const std::string& activation, Rng& rng) {
  if (in_dim < 1 || out_dim < 1) throw config_error("mlp dims must be positive");
  if (activation != "tanh" && activation != "relu")
    throw config_error("unknown activation: " + activation);
  std::vector<int> dims;
  dims.push_back(in_dim);
  for (int h : hidden) {
    if (h < 1) throw config_error("mlp hidden width must be positive");
    dims.push_back(h);
  }
  dims.push_back(out_dim);

  Mlp net;
  net.activation = activation;
  for (std::size_t l = 0; l + 1 < dims.size(); ++l) {
    const int fi = dims[l], fo = dims[l + 1];
    const double s = 1.0 / std::sqrt(static_cast<double>(fi));
    MatrixXd w(fi, fo);
    for (int r = 0; r < fi; ++r)
      for (int c = 0; c < fo; ++c) w(r, c) = rng.uniform(-s, s);
    MatrixXd b(1, fo);
    for (int c = 0; c < fo; ++c) b(0, c) = rng.uniform(-s, s);
    net.w.push_back(std::move(w));
    net.b.push_back(std::move(b));
  }
  return net;
}

void TrainConfig::validate() const {
  if (epochs < 0) throw config_error("epochs must be >= 0");
  if (batch_size < 1) throw config_error("batch_size must be >= 1");
  if (!(learning_rate > 0.0)) throw config_error("learning_rate must be positive");
  if (!(beta1 >= 0.0 && beta1 < 1.0) || !(beta2 >= 0.0 && beta2 < 1.0))
    throw config_error("adam betas must lie in [0, 1)");
  if (!(adam_eps > 0.0)) throw config_error("adam_eps must be positive");
  if (n_basis < 1) throw config_error("n_basis must be >= 1");
  if (activation != "tanh" && activation != "relu")
    throw config_error("unknown activation: " + activation);
  if (val_every < 1) throw config_error("val_every must be >= 1");
}

LatentOperatorModel make_model(const conformal::ReferenceAnnulus& ref, int geo_dim,
                               const TrainConfig& cfg) {
  cfg.validate();
  if (geo_dim < 0) throw config_error("geo_dim must be >= 0");
  LatentOperatorModel m;
  m.ref = ref;
  m.n_basis = cfg.n_basis;
  Rng rng(mix_seed(cfg.seed, 0x6d6f64656cull, 0));  // weight-init stream
  m.phys = make_mlp(ref.n_theta, cfg.hidden_branch, cfg.n_basis, cfg.activation, rng);
  if (geo_dim > 0)
    m.geo = make_mlp(geo_dim, cfg.hidden_branch, cfg.n_basis, cfg.activation, rng);
  m.trunk = make_mlp(3, cfg.hidden_trunk, cfg.n_basis, cfg.activation, rng);
  m.out_scale = MatrixXd::Ones(1, 1);
  m.out_bias = MatrixXd::Zero(1, 1);

  m.trunk_in.resize(ref.node_count(), 3);
  for (int i = 0; i < ref.n_rho; ++i) {
    const double rn = 2.0 * (ref.rho(i) - 1.0) / (ref.r_outer - 1.0) - 1.0;
    for (int j = 0; j < ref.n_theta; ++j) {
      const double th = ref.theta(j);
      const int k = ref.node_index(i, j);
      m.trunk_in(k, 0) = rn;
      m.trunk_in(k, 1) = std::cos(th);
      m.trunk_in(k, 2) = std::sin(th);
    }
  }
  return m;
}

std::vector<MatrixXd*> model_params(LatentOperatorModel& model) {
  std::vector<MatrixXd*> ps;
  auto take = [&ps](Mlp& net) {
    for (std::size_t l = 0; l < net.w.size(); ++l) {
      ps.push_back(&net.w[l]);
      ps.push_back(&net.b[l]);
    }
  };
  take(model.phys);
  if (model.geo_dim() > 0) take(model.geo);
  take(model.trunk);
  ps.push_back(&model.out_scale);
  ps.push_back(&model.out_bias);
  return ps;
}

AdamState make_adam_state(LatentOperatorModel& model) {
  AdamState st;
  for (MatrixXd* p : model_params(model)) {
    st.m.push_back(MatrixXd::Zero(p->rows(), p->cols()));
    st.v.push_back(MatrixXd::Zero(p->rows(), p->cols()));
  }
  return st;
}

namespace {

MatrixXd standardize_rows(const MatrixXd& x, const RowVectorXd& mu,
                          const RowVectorXd& sd) {
  MatrixXd out = x.rowwise() - mu;
  out.array().rowwise() /= sd.array();
  return out;
}

void column_stats(const MatrixXd& x, RowVectorXd& mu, RowVectorXd& sd) {
  mu = x.colwise().mean();
  MatrixXd c = x.rowwise() - mu;
  sd = (c.array().square().colwise().mean()).sqrt();
  sd = sd.cwiseMax(1e-8);
}

int mlp_forward(Tape& t, const Mlp& net, int x, std::vector<int>* param_ids) {
  const bool relu = net.activation == "relu";
  for (std::size_t l = 0; l < net.w.size(); ++l) {
    const int wi = t.leaf(net.w[l]);
    const int bi = t.leaf(net.b[l]);
    if (param_ids) {
      param_ids->push_back(wi);
      param_ids->push_back(bi);
    }
    x = t.add_rowvec(t.matmul(x, wi), bi);
    if (l + 1 < net.w.size()) x = relu ? t.relu_act(x) : t.tanh_act(x);
  }
  return x;
}

// Shared forward pass on pre-standardized inputs. param_ids, when asked
// for, comes back aligned with model_params().
int forward_graph(Tape& t, const LatentOperatorModel& model, const MatrixXd& phys_std,
                  const MatrixXd& geo_std, std::vector<int>* param_ids) {
  int coeff = mlp_forward(t, model.phys, t.constant(phys_std), param_ids);
  if (model.geo_dim() > 0) {
    int gc = mlp_forward(t, model.geo, t.constant(geo_std), param_ids);
    coeff = t.hadamard(coeff, gc);
  }
  const int trunk = mlp_forward(t, model.trunk, t.constant(model.trunk_in), param_ids);
  const int pred = t.matmul_bt(coeff, trunk);
  const int s = t.leaf(model.out_scale);
  const int c = t.leaf(model.out_bias);
  if (param_ids) {
    param_ids->push_back(s);
    param_ids->push_back(c);
  }
  return t.affine_scalar(pred, s, c);
}

void check_inputs(const LatentOperatorModel& model, const MatrixXd& bc0,
                  const MatrixXd& geo) {
  if (bc0.cols() != model.phys.in_dim())
    throw config_error("boundary input width does not match the model");
  if (model.geo_dim() > 0) {
    if (geo.rows() != bc0.rows() || geo.cols() != model.geo_dim())
      throw config_error("geometry input shape does not match the model");
  }
  if (!model.standardized())
    throw config_error("model has no input statistics yet, train or load first");
}

double loss_and_grads_std(LatentOperatorModel& model, const MatrixXd& phys_std,
                          const MatrixXd& geo_std, const MatrixXd& targets,
                          std::vector<MatrixXd>* grads) {
  Tape t;
  std::vector<int> ids;
  const int out = forward_graph(t, model, phys_std, geo_std, &ids);
  const int loss = t.mse(out, targets);
  const double value = t.value(loss)(0, 0);
  if (grads) {
    t.backward(loss);
    grads->clear();
    for (int id : ids) {
      if (t.node_grad_size(id) == 0)
        grads->push_back(MatrixXd::Zero(t.value(id).rows(), t.value(id).cols()));
      else
        grads->push_back(t.grad(id));
    }
  }
  return value;
}

}  // namespace

void set_standardization(LatentOperatorModel& model, const MatrixXd& bc0,
                         const MatrixXd& geo) {
  column_stats(bc0, model.phys_mu, model.phys_sd);
  if (model.geo_dim() > 0) {
    if (geo.cols() != model.geo_dim())
      throw config_error("geometry width does not match the model");
    column_stats(geo, model.geo_mu, model.geo_sd);
  } else {
    model.geo_mu.resize(0);
    model.geo_sd.resize(0);
  }
}

double loss_and_gradients(LatentOperatorModel& model, const MatrixXd& bc0,
                          const MatrixXd& geo, const MatrixXd& targets,
                          std::vector<MatrixXd>* grads) {
  check_inputs(model, bc0, geo);
  MatrixXd xp = standardize_rows(bc0, model.phys_mu, model.phys_sd);
  MatrixXd xg;
  if (model.geo_dim() > 0) xg = standardize_rows(geo, model.geo_mu, model.geo_sd);
  return loss_and_grads_std(model, xp, xg, targets, grads);
}

MatrixXd predict_batch(const LatentOperatorModel& model, const MatrixXd& bc0,
                       const MatrixXd& geo) {
  check_inputs(model, bc0, geo);
  MatrixXd xp = standardize_rows(bc0, model.phys_mu, model.phys_sd);
  MatrixXd xg;
  if (model.geo_dim() > 0) xg = standardize_rows(geo, model.geo_mu, model.geo_sd);
  Tape t;
  const int out = forward_graph(t, model, xp, xg, nullptr);
  return t.value(out);
}

VectorXd predict(const LatentOperatorModel& model, const VectorXd& bc0,
                 const VectorXd& geo) {
  MatrixXd bp = bc0.transpose();
  MatrixXd gp;
  if (geo.size() > 0) gp = geo.transpose();
  MatrixXd out = predict_batch(model, bp, gp);
  return out.row(0).transpose();
}

std::vector<int> holdout_indices(int n_samples) {
  if (n_samples < 4) return {};
  int k = std::clamp(n_samples / 10, 1, 8);
  std::vector<int> idx;
  for (int i = n_samples - k; i < n_samples; ++i) idx.push_back(i);
  return idx;
}

TrainResult train(LatentOperatorModel& model, AdamState& adam,
                  const std::vector<latent::LatentSample>& samples,
                  const TrainConfig& cfg, int start_epoch, int stop_epoch) {
  cfg.validate();
  const int until = stop_epoch < 0 ? cfg.epochs : std::min(stop_epoch, cfg.epochs);
  if (samples.empty()) throw config_error("no training samples");
  const int n = static_cast<int>(samples.size());
  const int grid_n = model.ref.node_count();
  const int q = model.geo_dim();
  for (const auto& s : samples) {
    if (s.u0.size() != grid_n || s.bc0.size() != model.phys.in_dim() ||
        s.geo.size() != q)
      throw config_error("sample shapes do not match the model");
  }

  const std::vector<int> hold = holdout_indices(n);
  std::vector<int> grad_idx;
  for (int i = 0; i < n; ++i)
    if (hold.empty() || i < hold.front()) grad_idx.push_back(i);

  MatrixXd bc0(n, model.phys.in_dim()), geo(n, q), u0(n, grid_n);
  for (int i = 0; i < n; ++i) {
    bc0.row(i) = samples[i].bc0.transpose();
    if (q > 0) geo.row(i) = samples[i].geo.transpose();
    u0.row(i) = samples[i].u0.transpose();
  }

  if (!model.standardized()) {
    MatrixXd bg(grad_idx.size(), bc0.cols()), gg(grad_idx.size(), q);
    for (std::size_t r = 0; r < grad_idx.size(); ++r) {
      bg.row(r) = bc0.row(grad_idx[r]);
      if (q > 0) gg.row(r) = geo.row(grad_idx[r]);
    }
    set_standardization(model, bg, gg);
  }
  MatrixXd xp = standardize_rows(bc0, model.phys_mu, model.phys_sd);
  MatrixXd xg;
  if (q > 0) xg = standardize_rows(geo, model.geo_mu, model.geo_sd);

  auto params = model_params(model);
  if (adam.m.size() != params.size())
    throw config_error("optimizer state does not match the model");

  auto eval_rel = [&](const std::vector<int>& idx) {
    if (idx.empty()) return std::numeric_limits<double>::quiet_NaN();
    MatrixXd bp(idx.size(), xp.cols()), gp(idx.size(), q);
    for (std::size_t r = 0; r < idx.size(); ++r) {
      bp.row(r) = xp.row(idx[r]);
      if (q > 0) gp.row(r) = xg.row(idx[r]);
    }
    Tape t;
    const int out = forward_graph(t, model, bp, gp, nullptr);
    const MatrixXd& pred = t.value(out);
    double acc = 0.0;
    for (std::size_t r = 0; r < idx.size(); ++r)
      acc += relative_l2(pred.row(r).transpose(), u0.row(idx[r]).transpose());
    return acc / static_cast<double>(idx.size());
  };

  TrainResult result;
  double last_val = std::numeric_limits<double>::quiet_NaN();
  std::vector<MatrixXd> grads;
  std::vector<int> order = grad_idx;

  for (int epoch = start_epoch; epoch < until; ++epoch) {
    // cosine decay from the configured rate to zero. Without it the last
    // few hundred Adam steps oscillate around the basin and the final
    // weights land wherever the last step happened to point.
    const double lr = cfg.learning_rate * 0.5 *
                      (1.0 + std::cos(M_PI * static_cast<double>(epoch) /
                                      static_cast<double>(cfg.epochs)));
    // the permutation must depend on the epoch alone so that resumed runs
    // replay the exact same batches
    order = grad_idx;
    Rng rng(mix_seed(cfg.seed, 0x736875666cull, static_cast<std::uint64_t>(epoch)));
    for (int i = static_cast<int>(order.size()) - 1; i > 0; --i) {
      const int j = static_cast<int>(rng.below(static_cast<std::uint64_t>(i + 1)));
      std::swap(order[i], order[j]);
    }

    double mse_sum = 0.0;
    int seen = 0;
    for (std::size_t start = 0; start < order.size(); start += cfg.batch_size) {
      const int bsz =
          static_cast<int>(std::min<std::size_t>(cfg.batch_size, order.size() - start));
      MatrixXd bp(bsz, xp.cols()), gp(bsz, q), bt(bsz, grid_n);
      for (int r = 0; r < bsz; ++r) {
        const int s = order[start + r];
        bp.row(r) = xp.row(s);
        if (q > 0) gp.row(r) = xg.row(s);
        bt.row(r) = u0.row(s);
      }

      const double loss = loss_and_grads_std(model, bp, gp, bt, &grads);
      if (!std::isfinite(loss))
        throw numeric_error("training loss diverged at epoch " + std::to_string(epoch));
      mse_sum += loss * bsz;
      seen += bsz;

      adam.step += 1;
      const double bc1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(adam.step));
      const double bc2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(adam.step));
      for (std::size_t k = 0; k < params.size(); ++k) {
        adam.m[k] = cfg.beta1 * adam.m[k] + (1.0 - cfg.beta1) * grads[k];
        adam.v[k].array() = cfg.beta2 * adam.v[k].array() +
                            (1.0 - cfg.beta2) * grads[k].array().square();
        params[k]->array() -= lr * (adam.m[k].array() / bc1) /
                              ((adam.v[k].array() / bc2).sqrt() + cfg.adam_eps);
      }
    }

    const bool val_now = ((epoch + 1) % cfg.val_every == 0) || (epoch + 1 == until);
    if (val_now) last_val = eval_rel(hold.empty() ? grad_idx : hold);

    TraceRow row;
    row.epoch = epoch + 1;
    row.train_mse = seen > 0 ? mse_sum / seen : 0.0;
    row.val_rel_l2 = last_val;
    result.trace.push_back(row);
  }
  result.epochs_done = until;
  return result;
}

namespace {

json mlp_dims(const Mlp& net) {
  json dims = json::array();
  for (const auto& w : net.w) dims.push_back({w.rows(), w.cols()});
  return dims;
}

json rowvec_to_json(const RowVectorXd& v) {
  json a = json::array();
  for (Eigen::Index i = 0; i < v.size(); ++i) a.push_back(v[i]);
  return a;
}

RowVectorXd rowvec_from_json(const json& a) {
  RowVectorXd v(a.size());
  for (std::size_t i = 0; i < a.size(); ++i) v[static_cast<Eigen::Index>(i)] = a[i];
  return v;
}

void append_matrix(std::string& buf, const MatrixXd& m) {
  buf.append(reinterpret_cast<const char*>(m.data()),
             sizeof(double) * static_cast<std::size_t>(m.size()));
}

void read_matrix(const std::string& buf, std::size_t& off, MatrixXd& m) {
  const std::size_t bytes = sizeof(double) * static_cast<std::size_t>(m.size());
  std::memcpy(m.data(), buf.data() + off, bytes);
  off += bytes;
}

}  // namespace

void write_checkpoint(const std::filesystem::path& dir, const LatentOperatorModel& model,
                      const AdamState& adam, const TrainConfig& cfg, int epochs_done) {
  auto params = model_params(const_cast<LatentOperatorModel&>(model));
  std::size_t count = 0;
  for (const MatrixXd* p : params) count += static_cast<std::size_t>(p->size());

  json j;
  j["format"] = 1;
  j["grid"] = {{"r_outer", model.ref.r_outer},
               {"n_rho", model.ref.n_rho},
               {"n_theta", model.ref.n_theta}};
  j["n_basis"] = model.n_basis;
  j["geo_dim"] = model.geo_dim();
  j["activation"] = cfg.activation;
  j["hidden_branch"] = cfg.hidden_branch;
  j["hidden_trunk"] = cfg.hidden_trunk;
  j["phys_dims"] = mlp_dims(model.phys);
  j["trunk_dims"] = mlp_dims(model.trunk);
  j["train"] = {{"epochs", cfg.epochs},
                {"batch_size", cfg.batch_size},
                {"learning_rate", cfg.learning_rate},
                {"beta1", cfg.beta1},
                {"beta2", cfg.beta2},
                {"adam_eps", cfg.adam_eps},
                {"seed", cfg.seed},
                {"val_every", cfg.val_every}};
  j["epochs_done"] = epochs_done;
  j["adam_step"] = adam.step;
  j["param_count"] = count;
  j["phys_mu"] = rowvec_to_json(model.phys_mu);
  j["phys_sd"] = rowvec_to_json(model.phys_sd);
  j["geo_mu"] = rowvec_to_json(model.geo_mu);
  j["geo_sd"] = rowvec_to_json(model.geo_sd);
  io::write_json(dir / "checkpoint.json", j);

  std::string buf;
  buf.reserve(3 * count * sizeof(double));
  for (const MatrixXd* p : params) append_matrix(buf, *p);
  for (const MatrixXd& m : adam.m) append_matrix(buf, m);
  for (const MatrixXd& v : adam.v) append_matrix(buf, v);
  io::write_file_atomic(dir / "weights.bin", buf);
}

Checkpoint read_checkpoint(const std::filesystem::path& dir) {
  const json j = io::read_json(dir / "checkpoint.json");
  if (j.value("format", 0) != 1) throw artifact_error("unknown checkpoint format");

  TrainConfig cfg;
  const json& t = j.at("train");
  cfg.epochs = t.at("epochs");
  cfg.batch_size = t.at("batch_size");
  cfg.learning_rate = t.at("learning_rate");
  cfg.beta1 = t.at("beta1");
  cfg.beta2 = t.at("beta2");
  cfg.adam_eps = t.at("adam_eps");
  cfg.seed = t.at("seed");
  cfg.val_every = t.at("val_every");
  cfg.n_basis = j.at("n_basis");
  cfg.activation = j.at("activation");
  cfg.hidden_branch = j.at("hidden_branch").get<std::vector<int>>();
  cfg.hidden_trunk = j.at("hidden_trunk").get<std::vector<int>>();

  conformal::ReferenceAnnulus ref;
  ref.r_outer = j.at("grid").at("r_outer");
  ref.n_rho = j.at("grid").at("n_rho");
  ref.n_theta = j.at("grid").at("n_theta");

  Checkpoint ck;
  ck.cfg = cfg;
  ck.epochs_done = j.at("epochs_done");
  ck.model = make_model(ref, j.at("geo_dim"), cfg);
  ck.model.phys_mu = rowvec_from_json(j.at("phys_mu"));
  ck.model.phys_sd = rowvec_from_json(j.at("phys_sd"));
  ck.model.geo_mu = rowvec_from_json(j.at("geo_mu"));
  ck.model.geo_sd = rowvec_from_json(j.at("geo_sd"));
  ck.adam = make_adam_state(ck.model);
  ck.adam.step = j.at("adam_step");

  auto params = model_params(ck.model);
  std::size_t count = 0;
  for (const MatrixXd* p : params) count += static_cast<std::size_t>(p->size());
  if (count != j.at("param_count").get<std::size_t>())
    throw artifact_error("checkpoint parameter count mismatch");

  const std::string buf = io::read_file(dir / "weights.bin");
  if (buf.size() != 3 * count * sizeof(double))
    throw artifact_error("weights.bin size does not match the manifest");
  std::size_t off = 0;
  for (MatrixXd* p : params) read_matrix(buf, off, *p);
  for (MatrixXd& m : ck.adam.m) read_matrix(buf, off, m);
  for (MatrixXd& v : ck.adam.v) read_matrix(buf, off, v);
  return ck;
}

void write_trace_csv(const std::filesystem::path& path, const std::vector<TraceRow>& rows,
                     bool append) {
  std::string content;
  if (append && std::filesystem::exists(path)) {
    content = io::read_file(path);
  } else {
    content = "epoch,train_mse,val_rel_l2\n";
  }
  std::ostringstream os;
  os << content;
  for (const TraceRow& r : rows) {
    os << r.epoch << ',' << io::fmt_double(r.train_mse) << ','
       << io::fmt_double(r.val_rel_l2) << '\n';
  }
  io::write_file_atomic(path, os.str());
}

std::vector<TraceRow> read_trace_csv(const std::filesystem::path& path) {
  io::Csv csv = io::read_csv(path);
  if (csv.columns.size() != 3) throw artifact_error("trace csv wants 3 columns");
  std::vector<TraceRow> rows;
  for (const auto& r : csv.rows) {
    TraceRow t;
    t.epoch = static_cast<int>(r[0]);
    t.train_mse = r[1];
    t.val_rel_l2 = r[2];
    rows.push_back(t);
  }
  return rows;
}

}  // namespace latmap::nn
