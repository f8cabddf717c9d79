#pragma once

#include <cstddef>
#include <functional>
#include <span>
#include <vector>

#include "gridfed/env.hpp"
#include "gridfed/neural.hpp"

namespace gridfed {

struct PpoConfig {
  double clip_eps = 0.2;
  double policy_lr = 3e-4;
  double value_lr = 1e-3;
  int epochs_per_batch = 10;
  double entropy_coef = 0.0;
  double gae_lambda = 0.95;

  void validate() const;
};

struct TrpoConfig {
  double max_kl = 0.01;
  int cg_iters = 10;
  double cg_tol = 1e-8;
  double damping = 0.1;
  double backtrack_coef = 0.8;
  int backtrack_steps = 10;
  double value_lr = 1e-3;
  int value_epochs = 10;
  double gae_lambda = 0.95;

  void validate() const;
};

struct AdvantageEstimate {
  std::vector<double> advantages;  // normalized over the batch when requested
  std::vector<double> returns;     // undiscounted reward-to-go
};

// GAE with gamma = 1; the value after the last step of an episode is 0.
// Steps are flattened in trajectory order.
AdvantageEstimate compute_advantages(std::span<const Trajectory> trajectories, double gae_lambda,
                                     bool normalize = true);

// Flattened training batch.
struct Batch {
  Matrix obs;
  std::vector<int> building_ids;
  Vector actions;
  Vector log_prob_old;
  Vector advantages;
  Vector returns;

  std::size_t size() const { return static_cast<std::size_t>(actions.size()); }
};

Batch make_batch(std::span<const Trajectory> trajectories, double gae_lambda);

// Concatenated batches, rows in argument order.
Batch concat_batches(std::span<const Batch> batches);

class Adam {
 public:
  Adam() = default;
  Adam(std::size_t size, double lr, double beta1 = 0.9, double beta2 = 0.999, double eps = 1e-8);

  // Moves `params` along -grad (descent) or +grad (ascent).
  void descend(ParamVector& params, const ParamVector& grad);
  void ascend(ParamVector& params, const ParamVector& grad);
  double learning_rate() const { return lr_; }
  bool operator==(const Adam&) const = default;

 private:
  void update(ParamVector& params, const ParamVector& grad, double sign);

  std::vector<double> m_;
  std::vector<double> v_;
  double lr_ = 1e-3;
  double beta1_ = 0.9;
  double beta2_ = 0.999;
  double eps_ = 1e-8;
  long long t_ = 0;
};

struct SurrogateResult {
  double value = 0.0;
  ParamVector grad;
};

// mean(ratio * advantage) at `params` against the batch's sampling log-probs.
SurrogateResult surrogate_and_grad(const Network& net, const ParamVector& params, const Batch& batch);

// Mean KL(old || new) over the batch rows, where `old_params` define the
// reference distribution.
double mean_kl(const Network& net, const ParamVector& old_params, const ParamVector& new_params, const Batch& batch);

// Gradient of mean_kl with respect to `new_params`.
ParamVector mean_kl_grad(const Network& net, const ParamVector& old_params, const ParamVector& new_params,
                         const Batch& batch);

// Hessian-vector products of the mean KL at new == old, plus damping. At that
// point the KL Hessian equals the Fisher information J^T F J of the Gaussian
// head, so the product is a forward-mode pass followed by a reverse pass.
class FisherOperator {
 public:
  FisherOperator(const Network& net, const ParamVector& params, const Batch& batch, double damping);
  Vector apply(const Vector& v) const;
  std::size_t dim() const { return params_.size(); }

 private:
  const Network& net_;
  ParamVector params_;
  ForwardCache cache_;
  double damping_;
};

Vector fisher_vector_product(const Network& net, const ParamVector& params, const Batch& batch, const Vector& v,
                             double damping);

struct CgResult {
  Vector x;
  int iterations = 0;
  double residual_norm = 0.0;
  double rhs_norm = 0.0;
  std::vector<double> residual_history;  // ||r_k|| after each iteration
  std::vector<double> error_a_norm;      // ||x_k - x*||_A proxy: 0.5 x'Ax - b'x
};

// Standard conjugate gradient for symmetric positive definite operators.
// Stops once ||r|| <= tol * ||b|| or after `iters` iterations.
CgResult conjugate_gradient(const std::function<Vector(const Vector&)>& apply_a, const Vector& b, int iters,
                            double tol);

struct PpoDiagnostics {
  double clip_fraction = 0.0;
  double approx_kl = 0.0;
  double surrogate = 0.0;
  double entropy = 0.0;
  double value_loss = 0.0;
};

// Full-batch Adam ascent on the clipped surrogate, then value regression.
PpoDiagnostics ppo_update(const Network& policy_net, ParamVector& policy, Adam& policy_opt, const Network& value_net,
                          ParamVector& value, Adam& value_opt, const Batch& batch, const PpoConfig& config);

struct TrpoDiagnostics {
  bool accepted = false;
  double kl = 0.0;
  double surrogate_before = 0.0;
  double surrogate_after = 0.0;
  int backtracks = 0;
  int cg_iterations = 0;
  double cg_residual = 0.0;
  double cg_rhs_norm = 0.0;
  double value_loss = 0.0;

  double improvement() const { return surrogate_after - surrogate_before; }
};

// Natural-gradient step scaled to the KL radius, backtracked until the KL
// bound holds and the surrogate improves. A rejected step leaves `policy`
// unchanged.
TrpoDiagnostics trpo_step(const Network& policy_net, ParamVector& policy, const Batch& batch, const TrpoConfig& config);

// trpo_step followed by value regression.
TrpoDiagnostics trpo_update(const Network& policy_net, ParamVector& policy, const Network& value_net,
                            ParamVector& value, Adam& value_opt, const Batch& batch, const TrpoConfig& config);

// Squared-error value regression on the batch returns; returns the final loss.
double fit_value(const Network& value_net, ParamVector& value, Adam& value_opt, const Batch& batch, int epochs);

// 0.5 * mean((V - R)^2) and its gradient.
double value_loss_and_grad(const Network& value_net, const ParamVector& value, const Batch& batch,
                           ParamVector* grad);

}  // namespace gridfed
