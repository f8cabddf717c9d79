#include <doctest.h>

#include <cmath>
#include <numbers>
#include <vector>

#include "gridfed/error.hpp"
#include "gridfed/neural.hpp"

using namespace gridfed;

namespace {

NetworkConfig variant(bool personal, bool grouping, HeadKind head = HeadKind::GaussianPolicy) {
  NetworkConfig c;
  c.hidden_dims = {7, 5};
  c.head = head;
  if (personal) c.personal = PersonalConfig{3, 4};
  if (grouping) c.grouping = GroupingConfig::standard();
  return c;
}

std::vector<NetworkConfig> all_variants(HeadKind head = HeadKind::GaussianPolicy) {
  return {variant(false, false, head), variant(true, false, head), variant(false, true, head),
          variant(true, true, head)};
}

Matrix random_input(Rng& rng, Eigen::Index rows) {
  Matrix x(rows, 18);
  for (Eigen::Index r = 0; r < rows; ++r) {
    for (Eigen::Index c = 0; c < 18; ++c) x(r, c) = rng.uniform(-1.0, 1.0);
  }
  return x;
}

std::vector<int> random_ids(Rng& rng, std::size_t rows, const NetworkConfig& c) {
  if (!c.personal) return {};
  std::vector<int> ids(rows);
  for (auto& id : ids) id = static_cast<int>(rng.below(c.personal->num_buildings));
  return ids;
}

// Loop-based forward pass written directly from the architecture, used to
// check the matrix implementation.
double naive_output(const NetworkConfig& cfg, const ParamVector& p, const std::vector<double>& x, int id) {
  auto seg = [&](const std::string& name) { return p.segment(name); };
  std::vector<double> h;
  if (cfg.grouping) {
    const std::size_t e = cfg.grouping->group_embed_dim;
    for (std::size_t g = 0; g < 4; ++g) {
      const auto& slots = cfg.grouping->groups[g];
      const auto w = seg("group" + std::to_string(g) + ".weight");
      const auto b = seg("group" + std::to_string(g) + ".bias");
      for (std::size_t k = 0; k < e; ++k) {
        double z = b[k];
        for (std::size_t j = 0; j < slots.size(); ++j) z += w[k * slots.size() + j] * x[slots[j]];
        h.push_back(std::tanh(z));
      }
    }
  } else {
    h = x;
  }
  if (cfg.personal) {
    const auto emb = seg("personal.embedding");
    const std::size_t d = cfg.personal->encoding_dim;
    for (std::size_t k = 0; k < d; ++k) h.push_back(emb[static_cast<std::size_t>(id) * d + k]);
  }
  for (std::size_t l = 0; l < cfg.hidden_dims.size(); ++l) {
    const auto w = seg("trunk" + std::to_string(l) + ".weight");
    const auto b = seg("trunk" + std::to_string(l) + ".bias");
    std::vector<double> next(cfg.hidden_dims[l]);
    for (std::size_t o = 0; o < next.size(); ++o) {
      double z = b[o];
      for (std::size_t i = 0; i < h.size(); ++i) z += w[o * h.size() + i] * h[i];
      next[o] = std::tanh(z);
    }
    h = std::move(next);
  }
  const auto w = seg("head.weight");
  double out = seg("head.bias")[0];
  for (std::size_t i = 0; i < h.size(); ++i) out += w[i] * h[i];
  return out;
}

// Scalar objective sum_r c_r * out_r + k * log_std.
double objective(const Network& net, const ParamVector& p, const Matrix& x, const std::vector<int>& ids,
                 const Vector& c, double k) {
  const auto cache = net.forward(p, x, ids);
  return c.dot(cache.output) + k * cache.log_std;
}

}  // namespace

TEST_CASE("layout tiles the parameter vector") {
  for (const auto& cfg : all_variants()) {
    const Network net(cfg);
    net.layout().check();
    CHECK(net.layout().public_size() + net.layout().private_size() == net.num_params());
    CHECK(net.layout().contains("head.log_std"));
  }
  const Network value(variant(false, false, HeadKind::Value));
  CHECK_FALSE(value.layout().contains("head.log_std"));
  // 18 -> 7 -> 5 -> 1, plus log_std
  CHECK(Network(variant(false, false)).num_params() == 18 * 7 + 7 + 7 * 5 + 5 + 5 + 1 + 1);
}

TEST_CASE("personal embedding is the only private segment") {
  for (const auto& cfg : all_variants()) {
    const Network net(cfg);
    const std::size_t emb = cfg.personal ? cfg.personal->num_buildings * cfg.personal->encoding_dim : 0;
    CHECK(net.layout().private_size() == emb);
    CHECK(net.layout().public_size() == net.num_params() - emb);
    for (const auto& s : net.layout().segments) {
      CHECK((s.visibility == Visibility::Private) == (s.name == "personal.embedding"));
    }
  }
}

TEST_CASE("split and merge are inverse") {
  Rng rng(4);
  const Network net(variant(true, true));
  const auto p = net.init(rng);
  const auto s = split_visibility(p);
  CHECK(s.public_values.size() == net.layout().public_size());
  CHECK(merge_visibility(net.layout(), s.public_values, s.private_values) == p);
  CHECK(unflatten(net.layout(), flatten(p)) == p);
  CHECK_THROWS_AS(unflatten(net.layout(), std::vector<double>(3)), DomainError);
  CHECK_THROWS_AS(merge_visibility(net.layout(), s.private_values, s.public_values), DomainError);
}

TEST_CASE("matrix forward matches the loop oracle") {
  Rng rng(11);
  for (HeadKind head : {HeadKind::GaussianPolicy, HeadKind::Value}) {
    for (const auto& cfg : all_variants(head)) {
      const Network net(cfg);
      auto p = net.init(rng);
      for (double& v : p.values) v += rng.uniform(-0.3, 0.3);
      const Matrix x = random_input(rng, 9);
      const auto ids = random_ids(rng, 9, cfg);
      const auto cache = net.forward(p, x, ids);
      for (Eigen::Index r = 0; r < 9; ++r) {
        std::vector<double> row(18);
        for (Eigen::Index c = 0; c < 18; ++c) row[static_cast<std::size_t>(c)] = x(r, c);
        const int id = ids.empty() ? 0 : ids[static_cast<std::size_t>(r)];
        CHECK(cache.output[r] == doctest::Approx(naive_output(cfg, p, row, id)).epsilon(1e-12));
      }
    }
  }
}

TEST_CASE("backward matches central differences") {
  Rng rng(21);
  for (const auto& cfg : all_variants()) {
    const Network net(cfg);
    auto p = net.init(rng);
    for (double& v : p.values) v += rng.uniform(-0.5, 0.5);
    p.segment("head.log_std")[0] = -0.7;
    const Matrix x = random_input(rng, 6);
    const auto ids = random_ids(rng, 6, cfg);
    Vector c(6);
    for (Eigen::Index i = 0; i < 6; ++i) c[i] = rng.uniform(-1.0, 1.0);
    const double k = 0.37;
    const auto cache = net.forward(p, x, ids);
    const auto g = net.backward(p, cache, c, k, true);
    double worst = 0.0;
    const double h = 1e-6;
    for (std::size_t i = 0; i < p.size(); ++i) {
      auto plus = p, minus = p;
      plus.values[i] += h;
      minus.values[i] -= h;
      const double fd = (objective(net, plus, x, ids, c, k) - objective(net, minus, x, ids, c, k)) / (2 * h);
      worst = std::max(worst, std::fabs(fd - g.params.values[i]) / std::max(1.0, std::fabs(fd)));
    }
    CHECK(worst < 1e-5);
    // input gradient
    double worst_in = 0.0;
    for (Eigen::Index r = 0; r < 6; ++r) {
      for (Eigen::Index col = 0; col < 18; ++col) {
        Matrix xp = x, xm = x;
        xp(r, col) += h;
        xm(r, col) -= h;
        const double fd = (objective(net, p, xp, ids, c, k) - objective(net, p, xm, ids, c, k)) / (2 * h);
        worst_in = std::max(worst_in, std::fabs(fd - g.input(r, col)));
      }
    }
    CHECK(worst_in < 1e-5);
  }
}

TEST_CASE("jvp matches the directional derivative") {
  Rng rng(31);
  for (const auto& cfg : all_variants()) {
    const Network net(cfg);
    auto p = net.init(rng);
    for (double& v : p.values) v += rng.uniform(-0.5, 0.5);
    p.segment("head.log_std")[0] = 0.1;
    auto t = net.zeros();
    for (double& v : t.values) v = rng.uniform(-1.0, 1.0);
    const Matrix x = random_input(rng, 5);
    const auto ids = random_ids(rng, 5, cfg);
    const auto cache = net.forward(p, x, ids);
    double dls = 0.0;
    const Vector j = net.jvp(p, cache, t, &dls);
    const double h = 1e-6;
    auto plus = p, minus = p;
    for (std::size_t i = 0; i < p.size(); ++i) {
      plus.values[i] += h * t.values[i];
      minus.values[i] -= h * t.values[i];
    }
    const Vector fd = (net.forward(plus, x, ids).output - net.forward(minus, x, ids).output) / (2 * h);
    CHECK((fd - j).cwiseAbs().maxCoeff() < 1e-6);
    CHECK(dls == t.segment("head.log_std")[0]);
    // adjoint identity: <u, J t> == <J^T u, t>
    Vector u(5);
    for (Eigen::Index i = 0; i < 5; ++i) u[i] = rng.uniform(-1.0, 1.0);
    const auto g = net.backward(p, cache, u, 0.0);
    double rhs = 0.0;
    for (std::size_t i = 0; i < p.size(); ++i) rhs += g.params.values[i] * t.values[i];
    const double lhs = u.dot(j);
    CHECK(lhs == doctest::Approx(rhs).epsilon(1e-10));
  }
}

TEST_CASE("grouping with identity encoders reduces to the plain network") {
  // One slot per group and a 1-wide embedding with unit weight feeds
  // tanh(x_slot) forward; the plain network on tanh(x) must agree.
  NetworkConfig g_cfg;
  g_cfg.input_dim = 4;
  g_cfg.hidden_dims = {6};
  g_cfg.grouping = GroupingConfig{};
  for (std::size_t i = 0; i < 4; ++i) g_cfg.grouping->groups[i] = {3 - i};
  g_cfg.grouping->group_embed_dim = 1;
  NetworkConfig p_cfg = g_cfg;
  p_cfg.grouping.reset();
  const Network gnet(g_cfg), pnet(p_cfg);
  Rng rng(5);
  auto pp = pnet.init(rng);
  auto gp = gnet.zeros();
  for (std::size_t i = 0; i < 4; ++i) gp.segment("group" + std::to_string(i) + ".weight")[0] = 1.0;
  // Group i reads slot 3-i, so trunk column i of the grouped net pairs with
  // input column 3-i of the plain net.
  const auto src = pp.segment("trunk0.weight");
  auto dst = gp.segment("trunk0.weight");
  for (std::size_t o = 0; o < 6; ++o) {
    for (std::size_t i = 0; i < 4; ++i) dst[o * 4 + i] = src[o * 4 + (3 - i)];
  }
  for (const char* name : {"trunk0.bias", "head.weight", "head.bias", "head.log_std"}) {
    std::copy(pp.segment(name).begin(), pp.segment(name).end(), gp.segment(name).begin());
  }
  Matrix x(8, 4);
  for (Eigen::Index r = 0; r < 8; ++r) {
    for (Eigen::Index c = 0; c < 4; ++c) x(r, c) = rng.uniform(-2.0, 2.0);
  }
  const Matrix tx = x.array().tanh().matrix();
  const auto a = gnet.forward(gp, x, {}).output;
  const auto b = pnet.forward(pp, tx, {}).output;
  CHECK((a - b).cwiseAbs().maxCoeff() < 1e-14);
}

TEST_CASE("standard grouping partitions the observation") {
  const auto g = GroupingConfig::standard();
  std::vector<int> seen(18, 0);
  for (const auto& grp : g.groups) {
    for (auto s : grp) ++seen[s];
  }
  for (int c : seen) CHECK(c == 1);
  NetworkConfig bad;
  bad.grouping = g;
  bad.grouping->groups[0].push_back(2);
  CHECK_THROWS_AS(Network{bad}, DomainError);
}

TEST_CASE("personal gradients touch only the rows in the batch") {
  Rng rng(8);
  const auto cfg = variant(true, false);
  const Network net(cfg);
  const auto p = net.init(rng);
  const Matrix x = random_input(rng, 4);
  const std::vector<int> ids = {0, 2, 2, 0};
  const auto cache = net.forward(p, x, ids);
  const auto g = net.backward(p, cache, Vector::Ones(4));
  const auto emb = g.params.segment("personal.embedding");
  for (std::size_t k = 0; k < 4; ++k) {
    CHECK(emb[1 * 4 + k] == 0.0);
    CHECK(emb[0 * 4 + k] != 0.0);
  }
  const std::vector<int> bad = {0, 3, 1, 1};
  CHECK_THROWS_AS(net.forward(p, x, bad), DomainError);
  CHECK_THROWS_AS(net.forward(p, x, {}), DomainError);
}

TEST_CASE("building id changes the output only through the embedding") {
  Rng rng(9);
  const Network net(variant(true, true));
  auto p = net.init(rng);
  std::vector<double> obs(18, 0.3);
  const auto a = net.policy(p, obs, 0);
  const auto b = net.policy(p, obs, 1);
  CHECK(a.mean != b.mean);
  auto emb = p.segment("personal.embedding");
  for (std::size_t k = 0; k < 4; ++k) emb[4 + k] = emb[k];
  CHECK(net.policy(p, obs, 1).mean == net.policy(p, obs, 0).mean);
}

TEST_CASE("log_std is clamped and its gradient vanishes outside the range") {
  Rng rng(2);
  const Network net(variant(false, false));
  auto p = net.init(rng);
  CHECK(p.segment("head.log_std")[0] == -0.5);
  p.segment("head.log_std")[0] = -7.0;
  const Matrix x = random_input(rng, 3);
  auto cache = net.forward(p, x, {});
  CHECK(cache.log_std == kLogStdMin);
  CHECK(net.backward(p, cache, Vector::Zero(3), 1.0).params.segment("head.log_std")[0] == 0.0);
  p.segment("head.log_std")[0] = 3.0;
  cache = net.forward(p, x, {});
  CHECK(cache.log_std == kLogStdMax);
}

TEST_CASE("initialization is deterministic with a near-zero mean") {
  const Network net(variant(true, true));
  Rng a(77), b(77);
  const auto pa = net.init(a);
  CHECK(pa == net.init(b));
  std::vector<double> obs(18, 0.5);
  CHECK(std::fabs(net.policy(pa, obs, 0).mean) < 0.1);
}

TEST_CASE("stale cache and mismatched params are rejected") {
  Rng rng(3);
  const Network net(variant(false, false));
  auto p = net.init(rng);
  const Matrix x = random_input(rng, 2);
  const auto cache = net.forward(p, x, {});
  auto q = p;
  q.values[0] += 1.0;
  CHECK_THROWS_AS(net.backward(q, cache, Vector::Zero(2)), DomainError);
  CHECK_THROWS_AS(net.jvp(q, cache, q), DomainError);
  const Network other(variant(false, true));
  CHECK_THROWS_AS(other.forward(p, x, {}), DomainError);
  CHECK_THROWS_AS(net.forward(p, Matrix::Zero(2, 5), {}), DomainError);
}

TEST_CASE("gaussian helpers") {
  const GaussianPolicyOutput g{0.3, std::log(0.5)};
  const double a = 0.8;
  const double expected = -0.5 * std::pow((a - 0.3) / 0.5, 2) - std::log(0.5) - 0.5 * std::log(2 * std::numbers::pi);
  CHECK(gaussian_log_prob(g, a) == doctest::Approx(expected).epsilon(1e-14));
  CHECK(gaussian_kl(g, g) == doctest::Approx(0.0).epsilon(1e-15));
  const GaussianPolicyOutput q{-0.1, std::log(0.8)};
  const double kl = std::log(0.8 / 0.5) + (0.25 + 0.16) / (2 * 0.64) - 0.5;
  CHECK(gaussian_kl(g, q) == doctest::Approx(kl).epsilon(1e-14));
  CHECK(gaussian_entropy(GaussianPolicyOutput{0.0, 0.0}) == doctest::Approx(0.5 * std::log(2 * std::numbers::pi * std::numbers::e)));
  Rng rng(6);
  double sum = 0.0, sq = 0.0;
  const int n = 100000;
  for (int i = 0; i < n; ++i) {
    const auto s = sample_action(g, rng);
    CHECK(s.log_prob == gaussian_log_prob(g, s.action));
    sum += s.action;
    sq += s.action * s.action;
  }
  const double mean = sum / n;
  CHECK(mean == doctest::Approx(0.3).epsilon(0.02));
  CHECK(std::sqrt(sq / n - mean * mean) == doctest::Approx(0.5).epsilon(0.02));
}
