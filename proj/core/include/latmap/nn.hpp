#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <string>
#include <vector>

#include "latmap/conformal.hpp"
#include "latmap/latent.hpp"
#include "latmap/rng.hpp"

namespace latmap::nn {

// Reverse-mode autodiff over a tape of matrix-valued nodes. Nodes are
// created by the op methods and referenced by integer id; backward()
// accumulates gradients into every node reachable from the loss.
class Tape {
 public:
  int leaf(Eigen::MatrixXd value);      // trainable, receives a gradient
  int constant(Eigen::MatrixXd value);  // data, backward skips it

  int matmul(int a, int b);     // A * B
  int matmul_bt(int a, int b);  // A * B^T
  int add(int a, int b);
  int sub(int a, int b);
  int hadamard(int a, int b);
  int add_rowvec(int a, int r);  // broadcast a 1 x n node over the rows of A
  int tanh_act(int a);
  int relu_act(int a);
  // s * A + c with s and c scalar (1 x 1) nodes
  int affine_scalar(int a, int s, int c);
  // mean squared entrywise error against a fixed target, yields a 1 x 1 node
  int mse(int a, const Eigen::MatrixXd& target);

  const Eigen::MatrixXd& value(int id) const { return nodes_[id].val; }
  // accumulated gradient; throws if backward never reached the node
  const Eigen::MatrixXd& grad(int id) const;
  Eigen::Index node_grad_size(int id) const { return nodes_[id].grad.size(); }
  bool needs(int id) const;

  // Backpropagate from a scalar node. One shot per tape; build a fresh tape
  // for the next step instead of reusing this one.
  void backward(int loss_id);

  int size() const { return static_cast<int>(nodes_.size()); }

 private:
  struct Node {
    Eigen::MatrixXd val;
    Eigen::MatrixXd grad;  // allocated lazily, empty until touched
    bool needs_grad = false;
    std::function<void(Tape&, int)> back;
  };

  Eigen::MatrixXd& grad_ref(int id);
  int push(Eigen::MatrixXd value, bool needs_grad, std::function<void(Tape&, int)> back);

  std::vector<Node> nodes_;
  bool ran_backward_ = false;
};

// ||a - b|| / ||b||. Throws numeric_error when the reference is zero.
double relative_l2(const Eigen::VectorXd& approx, const Eigen::VectorXd& truth);

// Fully connected net; weights are (fan_in x fan_out), biases 1 x fan_out.
// The activation applies to hidden layers only, the last layer is linear.
struct Mlp {
  std::vector<Eigen::MatrixXd> w;
  std::vector<Eigen::MatrixXd> b;
  std::string activation = "tanh";

  int layer_count() const { return static_cast<int>(w.size()); }
  int in_dim() const { return static_cast<int>(w.front().rows()); }
  int out_dim() const { return static_cast<int>(w.back().cols()); }
};

Mlp make_mlp(int in_dim, const std::vector<int>& hidden, int out_dim,
             const std::string& activation, Rng& rng);

struct TrainConfig {
  int epochs = 500;
  int batch_size = 16;
  double learning_rate = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double adam_eps = 1e-8;
  std::uint64_t seed = 0;
  int n_basis = 64;
  // empty: the branch nets are plain linear read-outs. The transported
  // solution operator is linear in the boundary trace for a fixed geometry,
  // and at a few dozen training samples deep branches only memorize; a
  // linear branch cuts test error by 3-5x across all three mappings.
  std::vector<int> hidden_branch = {};
  std::vector<int> hidden_trunk = {128, 128, 128};
  std::string activation = "tanh";
  int val_every = 50;  // epochs between held-out relative-L2 evaluations

  void validate() const;
};

// Branch/trunk regression from boundary data (and optionally a geometry
// code) to a field on the reference grid. The two branch nets emit n_basis
// coefficients each, combined entrywise; the trunk emits n_basis basis
// values per grid node; the prediction is their inner product plus a
// learned scalar affine correction.
struct LatentOperatorModel {
  conformal::ReferenceAnnulus ref;
  int n_basis = 64;
  Mlp phys;
  Mlp geo;  // unused when geo_dim() == 0
  Mlp trunk;
  Eigen::MatrixXd out_scale;  // 1 x 1, starts at 1
  Eigen::MatrixXd out_bias;   // 1 x 1, starts at 0

  // input standardization, frozen from the training set
  Eigen::RowVectorXd phys_mu, phys_sd;
  Eigen::RowVectorXd geo_mu, geo_sd;

  Eigen::MatrixXd trunk_in;  // grid features (rho scaled to [-1,1], cos, sin)

  int geo_dim() const { return geo.w.empty() ? 0 : geo.in_dim(); }
  bool standardized() const { return phys_mu.size() > 0; }
};

LatentOperatorModel make_model(const conformal::ReferenceAnnulus& ref, int geo_dim,
                               const TrainConfig& cfg);

// Every trainable matrix of the model, in the fixed serialization order.
std::vector<Eigen::MatrixXd*> model_params(LatentOperatorModel& model);

struct AdamState {
  std::vector<Eigen::MatrixXd> m;
  std::vector<Eigen::MatrixXd> v;
  std::int64_t step = 0;
};

AdamState make_adam_state(LatentOperatorModel& model);

struct TraceRow {
  int epoch = 0;
  double train_mse = 0.0;
  double val_rel_l2 = 0.0;
};

struct TrainResult {
  std::vector<TraceRow> trace;
  int epochs_done = 0;
};

// Deterministic split of [0, n_samples): the tail ~10% (capped at 8, and
// empty below 4 samples) is held out for the validation column of the
// trace; gradients only ever see the head.
std::vector<int> holdout_indices(int n_samples);

// Per-feature mean/scale from the given rows, stored on the model and
// applied to every later input.
void set_standardization(LatentOperatorModel& model, const Eigen::MatrixXd& bc0,
                         const Eigen::MatrixXd& geo);

// Run epochs [start_epoch, cfg.epochs), or up to stop_epoch when that is
// set: the step size follows a cosine decay over the full cfg.epochs
// horizon, so an interrupted run stopped early and resumed later replays
// the uninterrupted one exactly. Standardization stats are computed from
// the gradient samples on first use and kept as-is when resuming.
// Throws numeric_error if the loss stops being finite.
TrainResult train(LatentOperatorModel& model, AdamState& adam,
                  const std::vector<latent::LatentSample>& samples,
                  const TrainConfig& cfg, int start_epoch = 0, int stop_epoch = -1);

// Predicted fields, one row per sample row in bc0 (and geo when present).
Eigen::MatrixXd predict_batch(const LatentOperatorModel& model,
                              const Eigen::MatrixXd& bc0, const Eigen::MatrixXd& geo);
Eigen::VectorXd predict(const LatentOperatorModel& model, const Eigen::VectorXd& bc0,
                        const Eigen::VectorXd& geo);

// One mean-squared loss over a full batch on a fresh tape, gradients
// written to grads in model_params order. Returns the loss. Exposed so the
// finite-difference tests can probe exactly what the trainer uses.
double loss_and_gradients(LatentOperatorModel& model, const Eigen::MatrixXd& bc0,
                          const Eigen::MatrixXd& geo, const Eigen::MatrixXd& targets,
                          std::vector<Eigen::MatrixXd>* grads);

// checkpoint.json (architecture, stats, progress) + weights.bin (params,
// then Adam m, then v, raw little-endian doubles, column-major per matrix)
void write_checkpoint(const std::filesystem::path& dir, const LatentOperatorModel& model,
                      const AdamState& adam, const TrainConfig& cfg, int epochs_done);
struct Checkpoint {
  LatentOperatorModel model;
  AdamState adam;
  TrainConfig cfg;
  int epochs_done = 0;
};
Checkpoint read_checkpoint(const std::filesystem::path& dir);

void write_trace_csv(const std::filesystem::path& path, const std::vector<TraceRow>& rows,
                     bool append);
std::vector<TraceRow> read_trace_csv(const std::filesystem::path& path);

}  // namespace latmap::nn
