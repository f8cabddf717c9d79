#include "gridfed/policyopt.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "gridfed/error.hpp"

namespace gridfed {

namespace {

Vector to_eigen(const std::vector<double>& v) { return Eigen::Map<const Vector>(v.data(), static_cast<Eigen::Index>(v.size())); }

ParamVector from_eigen(const ParamLayout& layout, const Vector& v) {
  return ParamVector{std::vector<double>(v.data(), v.data() + v.size()), layout};
}

Vector as_eigen(const ParamVector& p) { return to_eigen(p.values); }

std::span<const int> ids_for(const Network& net, const Batch& batch) {
  return net.config().personal ? std::span<const int>(batch.building_ids) : std::span<const int>();
}

void require_finite(double x, const char* what) {
  if (!std::isfinite(x)) throw DivergenceError(std::string("non-finite ") + what);
}

void require_finite(const ParamVector& p, const char* what) {
  for (double x : p.values) {
    if (!std::isfinite(x)) throw DivergenceError(std::string("non-finite ") + what);
  }
}

// Per-row d log pi / d mean and the d log pi / d log_std term.
struct LogProbParts {
  Vector log_prob;
  Vector d_mean;
  Vector d_log_std;
};

LogProbParts log_prob_parts(const ForwardCache& c, const Vector& actions) {
  const auto n = static_cast<Eigen::Index>(c.rows());
  LogProbParts p{Vector(n), Vector(n), Vector(n)};
  const double inv_var = std::exp(-2.0 * c.log_std);
  for (Eigen::Index i = 0; i < n; ++i) {
    const GaussianPolicyOutput out = c.policy(static_cast<std::size_t>(i));
    const double diff = actions[i] - out.mean;
    p.log_prob[i] = gaussian_log_prob(out, actions[i]);
    p.d_mean[i] = diff * inv_var;
    p.d_log_std[i] = diff * diff * inv_var - 1.0;
  }
  return p;
}

}  // namespace

void PpoConfig::validate() const {
  if (!(clip_eps > 0.0 && clip_eps < 1.0)) throw ConfigError("ppo clip_eps must lie in (0, 1)");
  if (!(policy_lr > 0.0) || !(value_lr > 0.0)) throw ConfigError("ppo learning rates must be positive");
  if (epochs_per_batch < 1) throw ConfigError("ppo epochs_per_batch must be at least 1");
  if (!(gae_lambda >= 0.0 && gae_lambda <= 1.0)) throw ConfigError("gae_lambda must lie in [0, 1]");
  if (!(entropy_coef >= 0.0)) throw ConfigError("entropy_coef must be nonnegative");
}

void TrpoConfig::validate() const {
  if (!(max_kl > 0.0)) throw ConfigError("trpo max_kl must be positive");
  if (!(damping >= 0.0)) throw ConfigError("trpo damping must be nonnegative");
  if (!(backtrack_coef > 0.0 && backtrack_coef < 1.0)) throw ConfigError("trpo backtrack_coef must lie in (0, 1)");
  if (cg_iters < 1 || backtrack_steps < 1 || value_epochs < 0) throw ConfigError("trpo iteration counts invalid");
  if (!(cg_tol >= 0.0)) throw ConfigError("trpo cg_tol must be nonnegative");
  if (!(value_lr > 0.0)) throw ConfigError("trpo value_lr must be positive");
  if (!(gae_lambda >= 0.0 && gae_lambda <= 1.0)) throw ConfigError("gae_lambda must lie in [0, 1]");
}

AdvantageEstimate compute_advantages(std::span<const Trajectory> trajectories, double gae_lambda, bool normalize) {
  AdvantageEstimate est;
  for (const auto& traj : trajectories) {
    const std::size_t n = traj.steps.size();
    std::vector<double> adv(n);
    std::vector<double> ret(n);
    double next_value = 0.0;
    double running_adv = 0.0;
    double running_ret = 0.0;
    for (std::size_t k = n; k-- > 0;) {
      const auto& s = traj.steps[k];
      const double delta = s.reward + next_value - s.value;
      running_adv = delta + gae_lambda * running_adv;
      running_ret += s.reward;
      adv[k] = running_adv;
      ret[k] = running_ret;
      next_value = s.value;
    }
    est.advantages.insert(est.advantages.end(), adv.begin(), adv.end());
    est.returns.insert(est.returns.end(), ret.begin(), ret.end());
  }
  if (normalize && !est.advantages.empty()) {
    double mean = 0.0;
    for (double a : est.advantages) mean += a;
    mean /= static_cast<double>(est.advantages.size());
    double var = 0.0;
    for (double a : est.advantages) var += (a - mean) * (a - mean);
    var /= static_cast<double>(est.advantages.size());
    const double scale = 1.0 / (std::sqrt(var) + 1e-8);
    for (double& a : est.advantages) a = (a - mean) * scale;
  }
  return est;
}

Batch make_batch(std::span<const Trajectory> trajectories, double gae_lambda) {
  const AdvantageEstimate est = compute_advantages(trajectories, gae_lambda, true);
  std::size_t n = 0;
  for (const auto& t : trajectories) n += t.steps.size();
  Batch b;
  b.obs.resize(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(kObservationDim));
  b.building_ids.reserve(n);
  b.actions.resize(static_cast<Eigen::Index>(n));
  b.log_prob_old.resize(static_cast<Eigen::Index>(n));
  Eigen::Index row = 0;
  for (const auto& t : trajectories) {
    for (const auto& s : t.steps) {
      for (std::size_t c = 0; c < kObservationDim; ++c) b.obs(row, static_cast<Eigen::Index>(c)) = s.obs_vec[c];
      b.building_ids.push_back(s.building_id);
      b.actions[row] = s.action;
      b.log_prob_old[row] = s.log_prob;
      ++row;
    }
  }
  b.advantages = to_eigen(est.advantages);
  b.returns = to_eigen(est.returns);
  return b;
}

Batch concat_batches(std::span<const Batch> batches) {
  Eigen::Index n = 0;
  for (const auto& b : batches) n += static_cast<Eigen::Index>(b.size());
  Batch out;
  out.obs.resize(n, static_cast<Eigen::Index>(kObservationDim));
  out.actions.resize(n);
  out.log_prob_old.resize(n);
  out.advantages.resize(n);
  out.returns.resize(n);
  Eigen::Index row = 0;
  for (const auto& b : batches) {
    const auto m = static_cast<Eigen::Index>(b.size());
    out.obs.middleRows(row, m) = b.obs;
    out.actions.segment(row, m) = b.actions;
    out.log_prob_old.segment(row, m) = b.log_prob_old;
    out.advantages.segment(row, m) = b.advantages;
    out.returns.segment(row, m) = b.returns;
    out.building_ids.insert(out.building_ids.end(), b.building_ids.begin(), b.building_ids.end());
    row += m;
  }
  return out;
}

Adam::Adam(std::size_t size, double lr, double beta1, double beta2, double eps)
    : m_(size, 0.0), v_(size, 0.0), lr_(lr), beta1_(beta1), beta2_(beta2), eps_(eps) {}

void Adam::descend(ParamVector& params, const ParamVector& grad) { update(params, grad, -1.0); }
void Adam::ascend(ParamVector& params, const ParamVector& grad) { update(params, grad, 1.0); }

void Adam::update(ParamVector& params, const ParamVector& grad, double sign) {
  if (params.size() != m_.size() || grad.size() != m_.size()) throw DomainError("Adam: size mismatch");
  ++t_;
  const double c1 = 1.0 - std::pow(beta1_, static_cast<double>(t_));
  const double c2 = 1.0 - std::pow(beta2_, static_cast<double>(t_));
  for (std::size_t i = 0; i < m_.size(); ++i) {
    const double g = grad.values[i];
    m_[i] = beta1_ * m_[i] + (1.0 - beta1_) * g;
    v_[i] = beta2_ * v_[i] + (1.0 - beta2_) * g * g;
    params.values[i] += sign * lr_ * (m_[i] / c1) / (std::sqrt(v_[i] / c2) + eps_);
  }
}

SurrogateResult surrogate_and_grad(const Network& net, const ParamVector& params, const Batch& batch) {
  const auto cache = net.forward(params, batch.obs, ids_for(net, batch));
  const LogProbParts lp = log_prob_parts(cache, batch.actions);
  const auto n = static_cast<Eigen::Index>(batch.size());
  const double inv_n = 1.0 / static_cast<double>(n);
  Vector d_out(n);
  double d_log_std = 0.0;
  double value = 0.0;
  for (Eigen::Index i = 0; i < n; ++i) {
    const double ratio = std::exp(lp.log_prob[i] - batch.log_prob_old[i]);
    const double w = ratio * batch.advantages[i] * inv_n;
    value += ratio * batch.advantages[i];
    d_out[i] = w * lp.d_mean[i];
    d_log_std += w * lp.d_log_std[i];
  }
  value *= inv_n;
  require_finite(value, "surrogate");
  return {value, net.backward(params, cache, d_out, d_log_std).params};
}

double mean_kl(const Network& net, const ParamVector& old_params, const ParamVector& new_params, const Batch& batch) {
  const auto ids = ids_for(net, batch);
  const auto old_c = net.forward(old_params, batch.obs, ids);
  const auto new_c = net.forward(new_params, batch.obs, ids);
  double total = 0.0;
  for (std::size_t i = 0; i < old_c.rows(); ++i) total += gaussian_kl(old_c.policy(i), new_c.policy(i));
  return total / static_cast<double>(old_c.rows());
}

ParamVector mean_kl_grad(const Network& net, const ParamVector& old_params, const ParamVector& new_params,
                         const Batch& batch) {
  const auto ids = ids_for(net, batch);
  const auto old_c = net.forward(old_params, batch.obs, ids);
  const auto new_c = net.forward(new_params, batch.obs, ids);
  const auto n = static_cast<Eigen::Index>(old_c.rows());
  const double inv_n = 1.0 / static_cast<double>(n);
  Vector d_out(n);
  double d_log_std = 0.0;
  const double var_old = std::exp(2.0 * old_c.log_std);
  const double inv_var_new = std::exp(-2.0 * new_c.log_std);
  for (Eigen::Index i = 0; i < n; ++i) {
    const double diff = new_c.output[i] - old_c.output[i];
    d_out[i] = diff * inv_var_new * inv_n;
    d_log_std += (1.0 - (var_old + diff * diff) * inv_var_new) * inv_n;
  }
  return net.backward(new_params, new_c, d_out, d_log_std).params;
}

FisherOperator::FisherOperator(const Network& net, const ParamVector& params, const Batch& batch, double damping)
    : net_(net), params_(params), cache_(net.forward(params, batch.obs, ids_for(net, batch))), damping_(damping) {
  if (net.config().head != HeadKind::GaussianPolicy) throw DomainError("FisherOperator needs a policy network");
}

Vector FisherOperator::apply(const Vector& v) const {
  if (static_cast<std::size_t>(v.size()) != params_.size()) {
    throw DomainError("fisher_vector_product: vector has " + std::to_string(v.size()) + " entries, expected " +
                      std::to_string(params_.size()));
  }
  const ParamVector tangent = from_eigen(params_.layout, v);
  double d_log_std = 0.0;
  const Vector jv = net_.jvp(params_, cache_, tangent, &d_log_std);
  const double inv_n = 1.0 / static_cast<double>(cache_.rows());
  const double inv_var = std::exp(-2.0 * cache_.log_std);
  // KL curvature in (mean, log_std): 1/sigma^2 and 2.
  const Vector upstream = jv * (inv_var * inv_n);
  const Gradient g = net_.backward(params_, cache_, upstream, 2.0 * d_log_std);
  return as_eigen(g.params) + damping_ * v;
}

Vector fisher_vector_product(const Network& net, const ParamVector& params, const Batch& batch, const Vector& v,
                             double damping) {
  return FisherOperator(net, params, batch, damping).apply(v);
}

CgResult conjugate_gradient(const std::function<Vector(const Vector&)>& apply_a, const Vector& b, int iters,
                            double tol) {
  CgResult res;
  res.x = Vector::Zero(b.size());
  res.rhs_norm = b.norm();
  Vector r = b;
  Vector p = r;
  double rr = r.squaredNorm();
  res.residual_norm = std::sqrt(rr);
  if (res.residual_norm <= tol * res.rhs_norm) return res;
  for (int k = 0; k < iters; ++k) {
    const Vector ap = apply_a(p);
    const double pap = p.dot(ap);
    if (!std::isfinite(pap) || pap <= 0.0) {
      throw DivergenceError("conjugate_gradient: operator is not positive definite along the search direction");
    }
    const double alpha = rr / pap;
    res.x += alpha * p;
    r -= alpha * ap;
    const double rr_new = r.squaredNorm();
    ++res.iterations;
    res.residual_norm = std::sqrt(rr_new);
    if (!std::isfinite(res.residual_norm)) throw DivergenceError("conjugate_gradient: non-finite residual");
    res.residual_history.push_back(res.residual_norm);
    // Quadratic objective 0.5 x'Ax - b'x, using Ax = b - r.
    res.error_a_norm.push_back(-0.5 * res.x.dot(b + r));
    if (res.residual_norm <= tol * res.rhs_norm) break;
    p = r + (rr_new / rr) * p;
    rr = rr_new;
  }
  return res;
}

double value_loss_and_grad(const Network& value_net, const ParamVector& value, const Batch& batch,
                           ParamVector* grad) {
  const auto cache = value_net.forward(value, batch.obs, ids_for(value_net, batch));
  const Vector err = cache.output - batch.returns;
  const double n = static_cast<double>(batch.size());
  const double loss = 0.5 * err.squaredNorm() / n;
  require_finite(loss, "value loss");
  if (grad) *grad = value_net.backward(value, cache, err / n).params;
  return loss;
}

double fit_value(const Network& value_net, ParamVector& value, Adam& value_opt, const Batch& batch, int epochs) {
  ParamVector grad;
  for (int e = 0; e < epochs; ++e) {
    value_loss_and_grad(value_net, value, batch, &grad);
    value_opt.descend(value, grad);
  }
  require_finite(value, "value parameters");
  return value_loss_and_grad(value_net, value, batch, nullptr);
}

PpoDiagnostics ppo_update(const Network& policy_net, ParamVector& policy, Adam& policy_opt, const Network& value_net,
                          ParamVector& value, Adam& value_opt, const Batch& batch, const PpoConfig& config) {
  config.validate();
  PpoDiagnostics diag;
  const auto n = static_cast<Eigen::Index>(batch.size());
  if (n == 0) throw DomainError("ppo_update: empty batch");
  const double inv_n = 1.0 / static_cast<double>(n);
  const auto ids = ids_for(policy_net, batch);

  for (int epoch = 0; epoch < config.epochs_per_batch; ++epoch) {
    const auto cache = policy_net.forward(policy, batch.obs, ids);
    const LogProbParts lp = log_prob_parts(cache, batch.actions);
    Vector d_out(n);
    double d_log_std = 0.0;
    double surrogate = 0.0;
    int clipped = 0;
    for (Eigen::Index i = 0; i < n; ++i) {
      const double a = batch.advantages[i];
      const double ratio = std::exp(lp.log_prob[i] - batch.log_prob_old[i]);
      const double clipped_ratio = std::clamp(ratio, 1.0 - config.clip_eps, 1.0 + config.clip_eps);
      surrogate += std::min(ratio * a, clipped_ratio * a);
      if (clipped_ratio != ratio) ++clipped;
      // The clipped branch is selected (and flat) once the ratio has moved
      // past the bound in the direction the advantage favours.
      const bool flat = (a >= 0.0 && ratio > 1.0 + config.clip_eps) || (a < 0.0 && ratio < 1.0 - config.clip_eps);
      const double w = flat ? 0.0 : ratio * a * inv_n;
      d_out[i] = w * lp.d_mean[i];
      d_log_std += w * lp.d_log_std[i];
    }
    surrogate *= inv_n;
    require_finite(surrogate, "ppo surrogate");
    const double entropy = gaussian_entropy({0.0, cache.log_std});
    d_log_std += config.entropy_coef;

    ParamVector grad = policy_net.backward(policy, cache, d_out, d_log_std).params;
    require_finite(grad, "ppo gradient");
    policy_opt.ascend(policy, grad);

    diag.surrogate = surrogate + config.entropy_coef * entropy;
    diag.entropy = entropy;
    diag.clip_fraction = static_cast<double>(clipped) * inv_n;
    diag.approx_kl = (batch.log_prob_old - lp.log_prob).mean();
  }
  require_finite(policy, "policy parameters");
  diag.value_loss = fit_value(value_net, value, value_opt, batch, config.epochs_per_batch);
  return diag;
}

TrpoDiagnostics trpo_step(const Network& policy_net, ParamVector& policy, const Batch& batch,
                          const TrpoConfig& config) {
  config.validate();
  TrpoDiagnostics diag;
  const SurrogateResult base = surrogate_and_grad(policy_net, policy, batch);
  diag.surrogate_before = base.value;
  diag.surrogate_after = base.value;
  const Vector g = as_eigen(base.grad);
  if (g.squaredNorm() == 0.0) return diag;

  const FisherOperator fisher(policy_net, policy, batch, config.damping);
  const CgResult cg =
      conjugate_gradient([&](const Vector& v) { return fisher.apply(v); }, g, config.cg_iters, config.cg_tol);
  diag.cg_iterations = cg.iterations;
  diag.cg_residual = cg.residual_norm;
  diag.cg_rhs_norm = cg.rhs_norm;

  const double curvature = cg.x.dot(fisher.apply(cg.x));
  if (!std::isfinite(curvature) || curvature <= 0.0) throw DivergenceError("trpo: non-positive step curvature");
  const double full_scale = std::sqrt(2.0 * config.max_kl / curvature);

  const Vector theta = as_eigen(policy);
  double scale = full_scale;
  for (int k = 0; k < config.backtrack_steps; ++k, scale *= config.backtrack_coef) {
    const ParamVector candidate = from_eigen(policy.layout, theta + scale * cg.x);
    const double kl = mean_kl(policy_net, policy, candidate, batch);
    const double surr = surrogate_and_grad(policy_net, candidate, batch).value;
    if (std::isfinite(kl) && kl <= config.max_kl && surr > base.value) {
      diag.accepted = true;
      diag.kl = kl;
      diag.surrogate_after = surr;
      diag.backtracks = k;
      policy = candidate;
      return diag;
    }
  }
  diag.backtracks = config.backtrack_steps;
  return diag;
}

TrpoDiagnostics trpo_update(const Network& policy_net, ParamVector& policy, const Network& value_net,
                            ParamVector& value, Adam& value_opt, const Batch& batch, const TrpoConfig& config) {
  TrpoDiagnostics diag = trpo_step(policy_net, policy, batch, config);
  diag.value_loss = fit_value(value_net, value, value_opt, batch, config.value_epochs);
  return diag;
}

}  // namespace gridfed
