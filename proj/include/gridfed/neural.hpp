#pragma once

#include <Eigen/Core>
#include <array>
#include <cstddef>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "gridfed/rng.hpp"

namespace gridfed {

using Matrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using Vector = Eigen::VectorXd;

inline constexpr double kLogStdMin = -5.0;
inline constexpr double kLogStdMax = 2.0;

enum class Visibility { Public, Private };

struct Segment {
  std::string name;
  std::size_t offset = 0;
  std::size_t length = 0;
  Visibility visibility = Visibility::Public;
  bool operator==(const Segment&) const = default;
};

struct ParamLayout {
  std::vector<Segment> segments;

  std::size_t size() const;
  std::size_t public_size() const;
  std::size_t private_size() const;
  const Segment& find(const std::string& name) const;
  bool contains(const std::string& name) const;
  // Throws DomainError unless segments tile [0, size()) in order.
  void check() const;
  bool operator==(const ParamLayout&) const = default;
};

// Flat parameters plus the segment table describing them.
struct ParamVector {
  std::vector<double> values;
  ParamLayout layout;

  std::size_t size() const { return values.size(); }
  std::span<double> segment(const std::string& name);
  std::span<const double> segment(const std::string& name) const;
  bool operator==(const ParamVector&) const = default;
};

std::vector<double> flatten(const ParamVector& params);
ParamVector unflatten(const ParamLayout& layout, std::span<const double> values);

struct VisibilitySplit {
  std::vector<double> public_values;
  std::vector<double> private_values;
};
// Concatenation of all Public (resp. Private) segments in layout order.
VisibilitySplit split_visibility(const ParamVector& params);
ParamVector merge_visibility(const ParamLayout& layout, std::span<const double> public_values,
                             std::span<const double> private_values);

enum class HeadKind { GaussianPolicy, Value };

struct PersonalConfig {
  std::size_t num_buildings = 1;
  std::size_t encoding_dim = 4;
  bool operator==(const PersonalConfig&) const = default;
};

struct GroupingConfig {
  std::array<std::vector<std::size_t>, 4> groups;
  std::size_t group_embed_dim = 4;

  // load = {load, load predictions, net}; solar = {solar, irradiance and its
  // predictions}; pricing = {buy, sell}; rest = {hour, day type, soc, carbon}.
  static GroupingConfig standard();
  bool operator==(const GroupingConfig&) const = default;
};

struct NetworkConfig {
  std::size_t input_dim = 18;
  std::vector<std::size_t> hidden_dims = {64, 64};
  HeadKind head = HeadKind::GaussianPolicy;
  std::optional<PersonalConfig> personal;
  std::optional<GroupingConfig> grouping;
  double init_log_std = -0.5;
  bool operator==(const NetworkConfig&) const = default;
};

struct GaussianPolicyOutput {
  double mean = 0.0;
  double log_std = 0.0;
};

double gaussian_log_prob(const GaussianPolicyOutput& out, double action);
// KL(p || q) for univariate Gaussians.
double gaussian_kl(const GaussianPolicyOutput& p, const GaussianPolicyOutput& q);
double gaussian_entropy(const GaussianPolicyOutput& out);

struct Sample {
  double action = 0.0;
  double log_prob = 0.0;
};
Sample sample_action(const GaussianPolicyOutput& out, Rng& rng);

// Activations saved by Network::forward for the matching backward/jvp call.
struct ForwardCache {
  std::vector<double> params_snapshot;
  Matrix input;
  std::vector<int> building_ids;
  std::vector<Matrix> group_out;  // grouping only
  Matrix trunk_input;
  std::vector<Matrix> hidden;  // post-activation, one per trunk layer
  Vector output;               // mean or value, one per row
  double log_std_raw = 0.0;    // policy only
  double log_std = 0.0;        // clamped

  std::size_t rows() const { return static_cast<std::size_t>(output.size()); }
  GaussianPolicyOutput policy(std::size_t row) const { return {output[static_cast<Eigen::Index>(row)], log_std}; }
};

struct Gradient {
  ParamVector params;
  Matrix input;  // d/d input, filled only when requested
};

// Shallow Tanh MLP with optional private one-hot personal encoder and
// per-group feature encoders, ending in a Gaussian-policy or value head.
class Network {
 public:
  explicit Network(NetworkConfig config);

  const NetworkConfig& config() const { return config_; }
  const ParamLayout& layout() const { return layout_; }
  std::size_t num_params() const { return layout_.size(); }

  ParamVector init(Rng& rng) const;
  ParamVector zeros() const;

  // `input` is rows x input_dim; `building_ids` has one entry per row (may
  // be empty when personal encoding is disabled).
  ForwardCache forward(const ParamVector& params, const Matrix& input, std::span<const int> building_ids) const;

  // Reverse pass for upstream gradients of the per-row outputs and of the
  // (shared) log_std. Throws DomainError if `params` differ from those the
  // cache was built with.
  Gradient backward(const ParamVector& params, const ForwardCache& cache, const Vector& d_output,
                    double d_log_std = 0.0, bool want_input_grad = false) const;

  // Forward-mode directional derivative of the outputs along `tangent`.
  // Returns per-row output derivatives; `d_log_std` receives the log_std one.
  Vector jvp(const ParamVector& params, const ForwardCache& cache, const ParamVector& tangent,
             double* d_log_std = nullptr) const;

  GaussianPolicyOutput policy(const ParamVector& params, std::span<const double> obs, int building_id) const;
  double value(const ParamVector& params, std::span<const double> obs, int building_id) const;

 private:
  void check_params(const ParamVector& params) const;
  std::size_t trunk_input_dim() const;

  NetworkConfig config_;
  ParamLayout layout_;
};

Matrix stack_rows(std::span<const std::array<double, 18>> rows);

}  // namespace gridfed
