#include "gridfed/neural.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

#include "gridfed/error.hpp"

namespace gridfed {

namespace {

using ConstMap = Eigen::Map<const Matrix>;
using MutMap = Eigen::Map<Matrix>;
using ConstVecMap = Eigen::Map<const Vector>;
using MutVecMap = Eigen::Map<Vector>;

std::string group_name(std::size_t g, const char* what) { return "group" + std::to_string(g) + "." + what; }
std::string trunk_name(std::size_t l, const char* what) { return "trunk" + std::to_string(l) + "." + what; }

ConstMap weight(const ParamVector& p, const std::string& name, std::size_t rows, std::size_t cols) {
  const auto s = p.segment(name);
  return ConstMap(s.data(), static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(cols));
}

MutMap weight(ParamVector& p, const std::string& name, std::size_t rows, std::size_t cols) {
  const auto s = p.segment(name);
  return MutMap(s.data(), static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(cols));
}

ConstVecMap bias(const ParamVector& p, const std::string& name) {
  const auto s = p.segment(name);
  return ConstVecMap(s.data(), static_cast<Eigen::Index>(s.size()));
}

MutVecMap bias(ParamVector& p, const std::string& name) {
  const auto s = p.segment(name);
  return MutVecMap(s.data(), static_cast<Eigen::Index>(s.size()));
}

Matrix affine(const Matrix& x, const ConstMap& w, const ConstVecMap& b) {
  Matrix z = x * w.transpose();
  z.rowwise() += b.transpose();
  return z;
}

Matrix tanh_of(const Matrix& z) { return z.array().tanh().matrix(); }

// Derivative of tanh expressed through its output.
Matrix tanh_grad(const Matrix& h, const Matrix& upstream) {
  return (upstream.array() * (1.0 - h.array().square())).matrix();
}

bool log_std_active(double raw) { return raw > kLogStdMin && raw < kLogStdMax; }

}  // namespace

std::size_t ParamLayout::size() const {
  return segments.empty() ? 0 : segments.back().offset + segments.back().length;
}

std::size_t ParamLayout::public_size() const {
  std::size_t n = 0;
  for (const auto& s : segments) n += s.visibility == Visibility::Public ? s.length : 0;
  return n;
}

std::size_t ParamLayout::private_size() const { return size() - public_size(); }

const Segment& ParamLayout::find(const std::string& name) const {
  for (const auto& s : segments) {
    if (s.name == name) return s;
  }
  throw DomainError("parameter layout has no segment '" + name + "'");
}

bool ParamLayout::contains(const std::string& name) const {
  return std::any_of(segments.begin(), segments.end(), [&](const Segment& s) { return s.name == name; });
}

void ParamLayout::check() const {
  std::size_t offset = 0;
  for (const auto& s : segments) {
    if (s.offset != offset) throw DomainError("segment '" + s.name + "' does not start where the previous ends");
    offset += s.length;
  }
}

std::span<double> ParamVector::segment(const std::string& name) {
  const auto& s = layout.find(name);
  return std::span<double>(values).subspan(s.offset, s.length);
}

std::span<const double> ParamVector::segment(const std::string& name) const {
  const auto& s = layout.find(name);
  return std::span<const double>(values).subspan(s.offset, s.length);
}

std::vector<double> flatten(const ParamVector& params) { return params.values; }

ParamVector unflatten(const ParamLayout& layout, std::span<const double> values) {
  layout.check();
  if (values.size() != layout.size()) {
    throw DomainError("unflatten: " + std::to_string(values.size()) + " values for a layout of " +
                      std::to_string(layout.size()));
  }
  return ParamVector{std::vector<double>(values.begin(), values.end()), layout};
}

VisibilitySplit split_visibility(const ParamVector& params) {
  if (params.values.size() != params.layout.size()) throw DomainError("split_visibility: layout mismatch");
  VisibilitySplit out;
  for (const auto& s : params.layout.segments) {
    auto& dst = s.visibility == Visibility::Public ? out.public_values : out.private_values;
    dst.insert(dst.end(), params.values.begin() + static_cast<std::ptrdiff_t>(s.offset),
               params.values.begin() + static_cast<std::ptrdiff_t>(s.offset + s.length));
  }
  return out;
}

ParamVector merge_visibility(const ParamLayout& layout, std::span<const double> public_values,
                             std::span<const double> private_values) {
  if (public_values.size() != layout.public_size() || private_values.size() != layout.private_size()) {
    throw DomainError("merge_visibility: segment sizes do not match the layout");
  }
  ParamVector p{std::vector<double>(layout.size()), layout};
  std::size_t pub = 0;
  std::size_t priv = 0;
  for (const auto& s : layout.segments) {
    auto& cursor = s.visibility == Visibility::Public ? pub : priv;
    const auto src = s.visibility == Visibility::Public ? public_values : private_values;
    std::copy_n(src.begin() + static_cast<std::ptrdiff_t>(cursor), s.length,
                p.values.begin() + static_cast<std::ptrdiff_t>(s.offset));
    cursor += s.length;
  }
  return p;
}

GroupingConfig GroupingConfig::standard() {
  GroupingConfig g;
  g.groups[0] = {3, 6, 7, 8, 9, 5};
  g.groups[1] = {2, 10, 11, 12, 13, 14};
  g.groups[2] = {15, 16};
  g.groups[3] = {0, 1, 4, 17};
  return g;
}

double gaussian_log_prob(const GaussianPolicyOutput& out, double action) {
  const double z = (action - out.mean) * std::exp(-out.log_std);
  return -0.5 * z * z - out.log_std - 0.5 * std::log(2.0 * std::numbers::pi);
}

double gaussian_kl(const GaussianPolicyOutput& p, const GaussianPolicyOutput& q) {
  const double var_p = std::exp(2.0 * p.log_std);
  const double var_q = std::exp(2.0 * q.log_std);
  const double diff = p.mean - q.mean;
  return (q.log_std - p.log_std) + (var_p + diff * diff) / (2.0 * var_q) - 0.5;
}

double gaussian_entropy(const GaussianPolicyOutput& out) {
  return out.log_std + 0.5 * (1.0 + std::log(2.0 * std::numbers::pi));
}

Sample sample_action(const GaussianPolicyOutput& out, Rng& rng) {
  const double action = out.mean + std::exp(out.log_std) * rng.normal();
  return {action, gaussian_log_prob(out, action)};
}

Network::Network(NetworkConfig config) : config_(std::move(config)) {
  if (config_.input_dim == 0) throw DomainError("network input_dim must be positive");
  std::size_t offset = 0;
  auto add = [&](std::string name, std::size_t length, Visibility vis = Visibility::Public) {
    layout_.segments.push_back({std::move(name), offset, length, vis});
    offset += length;
  };

  if (config_.grouping) {
    std::vector<int> seen(config_.input_dim, 0);
    for (const auto& group : config_.grouping->groups) {
      if (group.empty()) throw DomainError("grouping: empty feature group");
      for (std::size_t slot : group) {
        if (slot >= config_.input_dim) throw DomainError("grouping: slot index out of range");
        ++seen[slot];
      }
    }
    if (std::any_of(seen.begin(), seen.end(), [](int c) { return c != 1; })) {
      throw DomainError("grouping: groups must partition the observation slots");
    }
    if (config_.grouping->group_embed_dim == 0) throw DomainError("grouping: group_embed_dim must be positive");
    const std::size_t e = config_.grouping->group_embed_dim;
    for (std::size_t g = 0; g < config_.grouping->groups.size(); ++g) {
      add(group_name(g, "weight"), e * config_.grouping->groups[g].size());
      add(group_name(g, "bias"), e);
    }
  }
  if (config_.personal) {
    if (config_.personal->num_buildings == 0 || config_.personal->encoding_dim == 0) {
      throw DomainError("personal encoding needs positive num_buildings and encoding_dim");
    }
    add("personal.embedding", config_.personal->num_buildings * config_.personal->encoding_dim,
        Visibility::Private);
  }
  std::size_t fan_in = trunk_input_dim();
  for (std::size_t l = 0; l < config_.hidden_dims.size(); ++l) {
    if (config_.hidden_dims[l] == 0) throw DomainError("hidden layer widths must be positive");
    add(trunk_name(l, "weight"), config_.hidden_dims[l] * fan_in);
    add(trunk_name(l, "bias"), config_.hidden_dims[l]);
    fan_in = config_.hidden_dims[l];
  }
  add("head.weight", fan_in);
  add("head.bias", 1);
  if (config_.head == HeadKind::GaussianPolicy) add("head.log_std", 1);
}

std::size_t Network::trunk_input_dim() const {
  std::size_t dim = config_.grouping ? config_.grouping->groups.size() * config_.grouping->group_embed_dim
                                     : config_.input_dim;
  if (config_.personal) dim += config_.personal->encoding_dim;
  return dim;
}

ParamVector Network::zeros() const { return ParamVector{std::vector<double>(layout_.size(), 0.0), layout_}; }

ParamVector Network::init(Rng& rng) const {
  ParamVector p = zeros();
  auto glorot = [&](const std::string& name, std::size_t fan_out, std::size_t fan_in, double scale) {
    const double limit = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out)) * scale;
    for (double& w : p.segment(name)) w = rng.uniform(-limit, limit);
  };
  if (config_.grouping) {
    const std::size_t e = config_.grouping->group_embed_dim;
    for (std::size_t g = 0; g < config_.grouping->groups.size(); ++g) {
      glorot(group_name(g, "weight"), e, config_.grouping->groups[g].size(), 1.0);
    }
  }
  if (config_.personal) {
    glorot("personal.embedding", config_.personal->encoding_dim, config_.personal->num_buildings, 1.0);
  }
  std::size_t fan_in = trunk_input_dim();
  for (std::size_t l = 0; l < config_.hidden_dims.size(); ++l) {
    glorot(trunk_name(l, "weight"), config_.hidden_dims[l], fan_in, 1.0);
    fan_in = config_.hidden_dims[l];
  }
  const bool policy = config_.head == HeadKind::GaussianPolicy;
  glorot("head.weight", 1, fan_in, policy ? 0.01 : 1.0);
  if (policy) p.segment("head.log_std")[0] = config_.init_log_std;
  return p;
}

void Network::check_params(const ParamVector& params) const {
  if (params.values.size() != layout_.size() || !(params.layout == layout_)) {
    throw DomainError("parameter vector does not match the network layout");
  }
}

ForwardCache Network::forward(const ParamVector& params, const Matrix& input,
                              std::span<const int> building_ids) const {
  check_params(params);
  if (static_cast<std::size_t>(input.cols()) != config_.input_dim) {
    throw DomainError("forward: input has " + std::to_string(input.cols()) + " columns, expected " +
                      std::to_string(config_.input_dim));
  }
  const auto rows = input.rows();
  ForwardCache c;
  c.params_snapshot = params.values;
  c.input = input;
  if (config_.personal) {
    if (building_ids.size() != static_cast<std::size_t>(rows)) {
      throw DomainError("forward: one building id per row is required with personal encoding");
    }
    for (int id : building_ids) {
      if (id < 0 || static_cast<std::size_t>(id) >= config_.personal->num_buildings) {
        throw DomainError("forward: building id " + std::to_string(id) + " out of range");
      }
    }
    c.building_ids.assign(building_ids.begin(), building_ids.end());
  }

  c.trunk_input.resize(rows, static_cast<Eigen::Index>(trunk_input_dim()));
  Eigen::Index col = 0;
  if (config_.grouping) {
    const std::size_t e = config_.grouping->group_embed_dim;
    for (std::size_t g = 0; g < config_.grouping->groups.size(); ++g) {
      const auto& slots = config_.grouping->groups[g];
      Matrix xg(rows, static_cast<Eigen::Index>(slots.size()));
      for (std::size_t j = 0; j < slots.size(); ++j) xg.col(static_cast<Eigen::Index>(j)) = input.col(static_cast<Eigen::Index>(slots[j]));
      Matrix hg = tanh_of(affine(xg, weight(params, group_name(g, "weight"), e, slots.size()),
                                 bias(params, group_name(g, "bias"))));
      c.trunk_input.middleCols(col, static_cast<Eigen::Index>(e)) = hg;
      col += static_cast<Eigen::Index>(e);
      c.group_out.push_back(std::move(hg));
    }
  } else {
    c.trunk_input.leftCols(input.cols()) = input;
    col = input.cols();
  }
  if (config_.personal) {
    const std::size_t d = config_.personal->encoding_dim;
    const auto table = weight(params, "personal.embedding", config_.personal->num_buildings, d);
    for (Eigen::Index r = 0; r < rows; ++r) {
      c.trunk_input.block(r, col, 1, static_cast<Eigen::Index>(d)) = table.row(c.building_ids[static_cast<std::size_t>(r)]);
    }
  }

  const Matrix* h = &c.trunk_input;
  std::size_t fan_in = trunk_input_dim();
  for (std::size_t l = 0; l < config_.hidden_dims.size(); ++l) {
    c.hidden.push_back(tanh_of(affine(*h, weight(params, trunk_name(l, "weight"), config_.hidden_dims[l], fan_in),
                                      bias(params, trunk_name(l, "bias")))));
    h = &c.hidden.back();
    fan_in = config_.hidden_dims[l];
  }
  const Matrix out = affine(*h, weight(params, "head.weight", 1, fan_in), bias(params, "head.bias"));
  c.output = out.col(0);
  if (config_.head == HeadKind::GaussianPolicy) {
    c.log_std_raw = params.segment("head.log_std")[0];
    c.log_std = std::clamp(c.log_std_raw, kLogStdMin, kLogStdMax);
  }
  return c;
}

Gradient Network::backward(const ParamVector& params, const ForwardCache& cache, const Vector& d_output,
                           double d_log_std, bool want_input_grad) const {
  check_params(params);
  if (cache.params_snapshot != params.values) throw DomainError("backward: stale forward cache");
  if (d_output.size() != cache.output.size()) throw DomainError("backward: upstream size mismatch");

  Gradient grad;
  grad.params = zeros();
  ParamVector& g = grad.params;

  const std::size_t depth = config_.hidden_dims.size();
  const Matrix& last = depth ? cache.hidden.back() : cache.trunk_input;
  const std::size_t last_dim = static_cast<std::size_t>(last.cols());

  // Head.
  weight(g, "head.weight", 1, last_dim) = d_output.transpose() * last;
  bias(g, "head.bias")[0] = d_output.sum();
  Matrix dh = d_output * weight(params, "head.weight", 1, last_dim);
  if (config_.head == HeadKind::GaussianPolicy && log_std_active(cache.log_std_raw)) {
    g.segment("head.log_std")[0] = d_log_std;
  }

  // Trunk, last layer first.
  for (std::size_t l = depth; l-- > 0;) {
    const Matrix& below = l ? cache.hidden[l - 1] : cache.trunk_input;
    const std::size_t fan_in = static_cast<std::size_t>(below.cols());
    const Matrix dz = tanh_grad(cache.hidden[l], dh);
    weight(g, trunk_name(l, "weight"), config_.hidden_dims[l], fan_in) = dz.transpose() * below;
    bias(g, trunk_name(l, "bias")) = dz.colwise().sum().transpose();
    dh = dz * weight(params, trunk_name(l, "weight"), config_.hidden_dims[l], fan_in);
  }

  // dh is now d/d trunk_input.
  const auto rows = cache.trunk_input.rows();
  Eigen::Index col = config_.grouping
                         ? static_cast<Eigen::Index>(config_.grouping->groups.size() * config_.grouping->group_embed_dim)
                         : static_cast<Eigen::Index>(config_.input_dim);
  if (config_.personal) {
    const std::size_t d = config_.personal->encoding_dim;
    auto table = weight(g, "personal.embedding", config_.personal->num_buildings, d);
    for (Eigen::Index r = 0; r < rows; ++r) {
      table.row(cache.building_ids[static_cast<std::size_t>(r)]) += dh.block(r, col, 1, static_cast<Eigen::Index>(d));
    }
  }

  if (want_input_grad) grad.input = Matrix::Zero(rows, static_cast<Eigen::Index>(config_.input_dim));
  if (config_.grouping) {
    const std::size_t e = config_.grouping->group_embed_dim;
    for (std::size_t gi = 0; gi < config_.grouping->groups.size(); ++gi) {
      const auto& slots = config_.grouping->groups[gi];
      Matrix xg(rows, static_cast<Eigen::Index>(slots.size()));
      for (std::size_t j = 0; j < slots.size(); ++j) xg.col(static_cast<Eigen::Index>(j)) = cache.input.col(static_cast<Eigen::Index>(slots[j]));
      const Matrix dz = tanh_grad(cache.group_out[gi], dh.middleCols(static_cast<Eigen::Index>(gi * e), static_cast<Eigen::Index>(e)));
      weight(g, group_name(gi, "weight"), e, slots.size()) = dz.transpose() * xg;
      bias(g, group_name(gi, "bias")) = dz.colwise().sum().transpose();
      if (want_input_grad) {
        const Matrix dx = dz * weight(params, group_name(gi, "weight"), e, slots.size());
        for (std::size_t j = 0; j < slots.size(); ++j) grad.input.col(static_cast<Eigen::Index>(slots[j])) += dx.col(static_cast<Eigen::Index>(j));
      }
    }
  } else if (want_input_grad) {
    grad.input = dh.leftCols(static_cast<Eigen::Index>(config_.input_dim));
  }
  return grad;
}

Vector Network::jvp(const ParamVector& params, const ForwardCache& cache, const ParamVector& tangent,
                    double* d_log_std) const {
  check_params(params);
  check_params(tangent);
  if (cache.params_snapshot != params.values) throw DomainError("jvp: stale forward cache");

  const auto rows = cache.trunk_input.rows();
  Matrix dx = Matrix::Zero(rows, cache.trunk_input.cols());
  Eigen::Index col = 0;
  if (config_.grouping) {
    const std::size_t e = config_.grouping->group_embed_dim;
    for (std::size_t g = 0; g < config_.grouping->groups.size(); ++g) {
      const auto& slots = config_.grouping->groups[g];
      Matrix xg(rows, static_cast<Eigen::Index>(slots.size()));
      for (std::size_t j = 0; j < slots.size(); ++j) xg.col(static_cast<Eigen::Index>(j)) = cache.input.col(static_cast<Eigen::Index>(slots[j]));
      const Matrix dz = affine(xg, weight(tangent, group_name(g, "weight"), e, slots.size()),
                               bias(tangent, group_name(g, "bias")));
      dx.middleCols(col, static_cast<Eigen::Index>(e)) = tanh_grad(cache.group_out[g], dz);
      col += static_cast<Eigen::Index>(e);
    }
  } else {
    col = static_cast<Eigen::Index>(config_.input_dim);
  }
  if (config_.personal) {
    const std::size_t d = config_.personal->encoding_dim;
    const auto table = weight(tangent, "personal.embedding", config_.personal->num_buildings, d);
    for (Eigen::Index r = 0; r < rows; ++r) {
      dx.block(r, col, 1, static_cast<Eigen::Index>(d)) = table.row(cache.building_ids[static_cast<std::size_t>(r)]);
    }
  }

  Matrix dh = std::move(dx);
  const Matrix* h = &cache.trunk_input;
  std::size_t fan_in = trunk_input_dim();
  for (std::size_t l = 0; l < config_.hidden_dims.size(); ++l) {
    const std::size_t width = config_.hidden_dims[l];
    Matrix dz = dh * weight(params, trunk_name(l, "weight"), width, fan_in).transpose();
    dz += affine(*h, weight(tangent, trunk_name(l, "weight"), width, fan_in), bias(tangent, trunk_name(l, "bias")));
    dh = tanh_grad(cache.hidden[l], dz);
    h = &cache.hidden[l];
    fan_in = width;
  }
  Vector d_out = dh * weight(params, "head.weight", 1, fan_in).transpose();
  d_out += affine(*h, weight(tangent, "head.weight", 1, fan_in), bias(tangent, "head.bias")).col(0);
  if (d_log_std) {
    *d_log_std = (config_.head == HeadKind::GaussianPolicy && log_std_active(cache.log_std_raw))
                     ? tangent.segment("head.log_std")[0]
                     : 0.0;
  }
  return d_out;
}

GaussianPolicyOutput Network::policy(const ParamVector& params, std::span<const double> obs, int building_id) const {
  if (config_.head != HeadKind::GaussianPolicy) throw DomainError("policy() called on a value network");
  Matrix x(1, static_cast<Eigen::Index>(obs.size()));
  for (std::size_t i = 0; i < obs.size(); ++i) x(0, static_cast<Eigen::Index>(i)) = obs[i];
  const int ids[] = {building_id};
  const auto c = forward(params, x, config_.personal ? std::span<const int>(ids) : std::span<const int>());
  return c.policy(0);
}

double Network::value(const ParamVector& params, std::span<const double> obs, int building_id) const {
  Matrix x(1, static_cast<Eigen::Index>(obs.size()));
  for (std::size_t i = 0; i < obs.size(); ++i) x(0, static_cast<Eigen::Index>(i)) = obs[i];
  const int ids[] = {building_id};
  return forward(params, x, config_.personal ? std::span<const int>(ids) : std::span<const int>()).output[0];
}

Matrix stack_rows(std::span<const std::array<double, 18>> rows) {
  Matrix m(static_cast<Eigen::Index>(rows.size()), 18);
  for (std::size_t r = 0; r < rows.size(); ++r) {
    for (std::size_t c = 0; c < 18; ++c) m(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(c)) = rows[r][c];
  }
  return m;
}

}  // namespace gridfed
