#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <sstream>

#include "gridfed/checkpoint.hpp"
#include "gridfed/error.hpp"
#include "gridfed/harness.hpp"

using namespace gridfed;

namespace {

ExperimentConfig quick() {
  ExperimentConfig c;
  c.days = 40;
  c.rounds = 2;
  c.episodes_per_client_per_round = 2;
  c.hidden_dims = {8};
  c.eval_combinations = 4;
  c.eval_days_per_combination = 2;
  c.train_eval_days = 3;
  c.eval_every = 1;
  c.seeds = {0};
  c.algo.ppo.epochs_per_batch = 2;
  c.algo.trpo.value_epochs = 2;
  return c;
}

std::string text_of(std::span<const MetricsRow> rows) {
  std::ostringstream out;
  write_metrics(out, rows);
  return out.str();
}

MetricsRow row(const std::string& label, const std::string& seed, int round, Split split, double reward) {
  MetricsRow r;
  r.experiment = label;
  r.seed = seed;
  r.round = round;
  r.split = split;
  r.metrics = {1.0, 2.0, reward, 0.0};
  r.baseline = {2.0, 3.0, -2.2, 0.0};
  return r;
}

}  // namespace

TEST_CASE("labels and network shapes") {
  ExperimentConfig c;
  CHECK(c.resolved_label() == "base-ppo-2b");
  c.variant = ModelVariant::PEGF;
  c.algo.algo = Algo::TRPO;
  c.num_buildings = 5;
  c.shifted = true;
  CHECK(c.resolved_label() == "pe-gf-trpo-5b-shifted");
  const auto pn = c.policy_network();
  REQUIRE(pn.personal.has_value());
  CHECK(pn.personal->num_buildings == 5);
  CHECK(pn.grouping.has_value());
  CHECK(c.value_network().head == HeadKind::Value);
  c.label = "custom";
  CHECK(c.resolved_label() == "custom");
  CHECK(variant_from_string("pe-gf") == ModelVariant::PEGF);
  CHECK_THROWS_AS(variant_from_string("xl"), ConfigError);
}

TEST_CASE("config text round trip") {
  ExperimentConfig c = quick();
  c.variant = ModelVariant::GF;
  c.seeds = {3, 1, 4};
  c.mode = FedMode::ExplicitFedAvg;
  c.local_updates = 2;
  c.algo.ppo.policy_lr = 1.0 / 3.0;
  c.algo.trpo.max_kl = 0.0123;
  c.solar_mode = SolarMode::Normal;
  const std::string text = format_config(c);
  std::istringstream in(text);
  const ExperimentConfig back = parse_config(in);
  CHECK(format_config(back) == text);
  CHECK(back.algo.ppo.policy_lr == c.algo.ppo.policy_lr);
  CHECK(back.seeds == c.seeds);
  CHECK(back.hidden_dims == c.hidden_dims);
  CHECK(back.mode == FedMode::ExplicitFedAvg);
}

TEST_CASE("config errors") {
  std::istringstream unknown("rounds=3\nbogus=1\n");
  CHECK_THROWS_AS(parse_config(unknown), ConfigError);
  std::istringstream bad("rounds=three\n");
  CHECK_THROWS_AS(parse_config(bad), ConfigError);
  std::istringstream no_eq("rounds 3\n");
  CHECK_THROWS_AS(parse_config(no_eq), ConfigError);
  std::istringstream ok("# comment\n\nrounds = 7  # trailing\n");
  CHECK(parse_config(ok).rounds == 7);
  ExperimentConfig c;
  c.mode = FedMode::StackedSingleModel;
  c.local_updates = 3;
  CHECK_THROWS_AS(c.validate(), ConfigError);
  c = ExperimentConfig{};
  c.seeds.clear();
  CHECK_THROWS_AS(c.validate(), ConfigError);
  c = ExperimentConfig{};
  c.shifted = true;
  c.num_buildings = 20;
  CHECK_THROWS_AS(c.validate(), ConfigError);
  CHECK_THROWS_AS(load_config("/nonexistent/gridfed.cfg"), ConfigError);
}

TEST_CASE("metrics rows round trip") {
  MetricsRow r = row("a,b", "0", 10, Split::Train, -0.123456789012345678);
  r.log_std = -1.0 / 3.0;
  r.update_kl = 1e-5;
  r.trpo_accepted = 2;
  r.status = "diverged(client=1): x";
  std::vector<MetricsRow> rows = {r, row("x", "mean", 3, Split::Eval, 0.5)};
  const std::string text = text_of(rows);
  CHECK(text.rfind(std::string(kMetricsHeader) + "\n", 0) == 0);
  std::istringstream in(text);
  const auto back = read_metrics(in);
  REQUIRE(back.size() == 2);
  CHECK(back[0].experiment == "a;b");
  CHECK(back[0].metrics.total_reward == r.metrics.total_reward);
  CHECK(back[0].log_std == r.log_std);
  CHECK(back[0].delta_cost() == r.delta_cost());
  CHECK(back[0].trpo_accepted == 2);
  CHECK(back[0].status == r.status);
  CHECK(back[1].seed == "mean");
  CHECK(text_of(back) == text);
  std::istringstream bad_header("nope\n");
  CHECK_THROWS_AS(read_metrics(bad_header), ParseError);
  std::istringstream short_row(std::string(kMetricsHeader) + "\nx,0,1,eval\n");
  CHECK_THROWS_AS(read_metrics(short_row), ParseError);
}

TEST_CASE("zero-mean policy scores the no-battery baseline") {
  const auto cfg = quick();
  const SeedData data = make_seed_data(cfg, 0);
  Network net(cfg.policy_network());
  ParamVector p = net.zeros();
  const auto stats = NormalizationStats::from_collection(data.train);
  for (const EvalSet* set : {&data.train_eval, &data.validation_eval}) {
    const auto m = evaluate_params(net, p, 0, stats, *set);
    CHECK(m.total_cost == doctest::Approx(set->baseline.total_cost).epsilon(1e-12));
    CHECK(m.total_emissions == doctest::Approx(set->baseline.total_emissions).epsilon(1e-12));
    CHECK(m.total_reward == doctest::Approx(set->baseline.total_reward).epsilon(1e-12));
  }
  CHECK(data.train_eval.episodes.size() == 2 * 3);
  CHECK(data.validation_eval.episodes.size() == 4 * 2);
}

TEST_CASE("batched evaluation matches per-episode rollouts") {
  const auto cfg = quick();
  const SeedData data = make_seed_data(cfg, 1);
  Network net(cfg.policy_network());
  Rng rng(3);
  ParamVector p = net.init(rng);
  p.segment("head.weight")[0] = 2.0;
  p.segment("head.bias")[0] = 0.1;
  const auto stats = NormalizationStats::from_collection(data.train);
  const Policy mean_action = [&](const StepContext& ctx) {
    return PolicyDecision{net.policy(p, ctx.obs_vec, 0).mean, 0.0, 0.0};
  };
  EpisodeMetrics total;
  for (const auto& e : data.validation_eval.episodes) {
    Rng unused(0);
    total += rollout(data.validation.buildings[e.building], e.day, mean_action, unused, stats).metrics;
  }
  const auto expected = total.scaled(1.0 / static_cast<double>(data.validation_eval.episodes.size()));
  const auto got = evaluate_params(net, p, 0, stats, data.validation_eval);
  CHECK(got.total_cost == doctest::Approx(expected.total_cost).epsilon(1e-10));
  CHECK(got.total_reward == doctest::Approx(expected.total_reward).epsilon(1e-10));
  CHECK(got.total_penalty_kwh == doctest::Approx(expected.total_penalty_kwh).epsilon(1e-10));
}

TEST_CASE("evaluation sets are reproducible and sorted") {
  const auto c = generate_collection(CollectionParams{2, 30});
  const auto a = sample_eval_set(c, 5, 9);
  const auto b = sample_eval_set(c, 5, 9);
  REQUIRE(a.episodes.size() == 10);
  for (std::size_t i = 0; i < a.episodes.size(); ++i) {
    CHECK(a.episodes[i].day == b.episodes[i].day);
    CHECK(a.episodes[i].building == i / 5);
    if (i % 5) CHECK(a.episodes[i].day > a.episodes[i - 1].day);
  }
  CHECK(sample_eval_set(c, 100, 9).episodes.size() == 60);
  CHECK(a.baseline.total_cost > 0.0);
}

TEST_CASE("evaluate_policy leaves the federation untouched") {
  auto cfg = quick();
  cfg.variant = ModelVariant::PE;
  const SeedData data = make_seed_data(cfg, 0);
  auto fed = make_federation(data.train, cfg.policy_network(), cfg.value_network(), cfg.algo, 0);
  auto rc = cfg.round_config();
  run_round(fed, rc, cfg.algo);
  const auto before = fed.clients;
  const auto m1 = evaluate_policy(fed, data.validation_eval);
  const auto m2 = evaluate_policy(fed, data.validation_eval);
  CHECK(m1 == m2);
  for (std::size_t i = 0; i < fed.clients.size(); ++i) {
    CHECK(fed.clients[i].policy == before[i].policy);
    auto after_rng = fed.clients[i].rng;
    auto before_rng = before[i].rng;
    CHECK(after_rng.next_u64() == before_rng.next_u64());
  }
  // with a personal encoding every client id is scored
  const auto m0 = evaluate_params(fed.policy_net, fed.clients[0].policy, 0, fed.stats, data.validation_eval);
  const auto mb = evaluate_params(fed.policy_net, fed.clients[1].policy, 1, fed.stats, data.validation_eval);
  CHECK(m1.total_reward == doctest::Approx(0.5 * (m0.total_reward + mb.total_reward)).epsilon(1e-12));
}

TEST_CASE("a zero-round run logs the initial policy") {
  auto cfg = quick();
  cfg.rounds = 0;
  cfg.seeds = {0, 1};
  const auto res = run_experiment(cfg);
  REQUIRE(res.rows.size() == 2 * 2 + 2);
  for (const auto& r : res.rows) {
    CHECK(r.round == 0);
    CHECK(r.status == "ok");
  }
  CHECK(res.rows.back().seed == "mean");
}

TEST_CASE("runs are deterministic and independent of seed parallelism") {
  for (Algo a : {Algo::PPO, Algo::TRPO}) {
    auto cfg = quick();
    cfg.algo.algo = a;
    cfg.seeds = {0, 1};
    const auto r1 = run_experiment(cfg);
    cfg.parallel_seeds = 2;
    const auto r2 = run_experiment(cfg);
    CHECK(text_of(r1.rows) == text_of(r2.rows));
    // rows per seed: rounds 0..2 for both splits
    CHECK(r1.rows.size() == 2 * 3 * 2 + 2);
  }
}

TEST_CASE("logged metrics satisfy the reward identity") {
  auto cfg = quick();
  cfg.mode = FedMode::ExplicitFedAvg;
  cfg.variant = ModelVariant::PEGF;
  const auto res = run_experiment(cfg);
  for (const auto& r : res.rows) {
    CHECK(r.metrics.total_reward ==
          doctest::Approx(-(kCostWeight * r.metrics.total_cost + kEmissionWeight * r.metrics.total_emissions))
              .epsilon(1e-12));
    CHECK(r.baseline.total_reward ==
          doctest::Approx(-(kCostWeight * r.baseline.total_cost + kEmissionWeight * r.baseline.total_emissions))
              .epsilon(1e-12));
    CHECK(r.delta_cost() == r.metrics.total_cost - r.baseline.total_cost);
  }
}

TEST_CASE("summary rows average successful seeds") {
  ExperimentConfig cfg = quick();
  cfg.rounds = 5;
  std::vector<SeedRun> runs(3);
  for (int s = 0; s < 3; ++s) {
    runs[static_cast<std::size_t>(s)].seed = static_cast<std::uint64_t>(s);
    runs[static_cast<std::size_t>(s)].rows = {row("x", std::to_string(s), 5, Split::Train, 0.0),
                                              row("x", std::to_string(s), 5, Split::Eval, s + 1.0)};
  }
  auto summary = summary_rows(cfg, runs);
  REQUIRE(summary.size() == 2);
  CHECK(summary[1].metrics.total_reward == doctest::Approx(2.0));
  CHECK(summary[1].reward_seed_std == doctest::Approx(1.0));
  CHECK(summary[1].status == "ok");
  runs[2].failed = true;
  summary = summary_rows(cfg, runs);
  CHECK(summary[1].metrics.total_reward == doctest::Approx(1.5));
  CHECK(summary[1].status == "partial(2/3)");
  for (auto& r : runs) r.failed = true;
  CHECK(summary_rows(cfg, runs)[1].status == "failed");
}

TEST_CASE("summarize groups by label and flags the best variant") {
  std::vector<MetricsRow> a, b;
  for (int s = 0; s < 3; ++s) {
    a.push_back(row("base-ppo-2b", std::to_string(s), 0, Split::Eval, -9.0));
    a.push_back(row("base-ppo-2b", std::to_string(s), 10, Split::Eval, s + 1.0));
    a.push_back(row("base-ppo-2b", std::to_string(s), 10, Split::Train, 0.0));
  }
  a.push_back(row("base-ppo-2b", "mean", 10, Split::Eval, 100.0));
  b.push_back(row("pe-ppo-2b", "0", 10, Split::Eval, 1.5));
  auto failed = row("pe-ppo-2b", "1", 4, Split::Eval, NAN);
  failed.status = "diverged(client=0): boom";
  b.push_back(failed);
  b.push_back(row("gf-trpo-2b", "0", 10, Split::Eval, -5.0));
  const std::vector<std::vector<MetricsRow>> files = {a, b};
  std::vector<std::string> warnings;
  const auto lines = summarize(files, &warnings);
  REQUIRE(lines.size() == 3);
  CHECK(lines[0].experiment == "base-ppo-2b");
  CHECK(lines[0].seeds == 3);
  CHECK(lines[0].eval.total_reward == doctest::Approx(2.0));
  CHECK(lines[0].eval_reward_seed_std == doctest::Approx(1.0));
  CHECK(lines[0].best);
  CHECK(lines[1].failed_seeds == 1);
  CHECK(lines[1].eval.total_reward == 1.5);
  CHECK_FALSE(lines[1].best);
  CHECK(lines[2].best);  // alone in its block
  CHECK_FALSE(warnings.empty());
  std::ostringstream out;
  write_summary(out, lines);
  CHECK(out.str().find("base-ppo-2b,3,0,") != std::string::npos);
  CHECK(out.str().find(",true\n") != std::string::npos);
}

TEST_CASE("sweep expansion") {
  std::istringstream in("variant=base,pe\nalgo=ppo,trpo\nbuildings=2,5\nrounds=4\nseeds=0,1\n");
  const auto cells = expand_sweep(in);
  REQUIRE(cells.size() == 8);
  for (const auto& c : cells) {
    CHECK(c.rounds == 4);
    CHECK(c.seeds == std::vector<std::uint64_t>{0, 1});
  }
  CHECK(cells.front().resolved_label() == "base-ppo-2b");
  CHECK(cells.back().resolved_label() == "pe-trpo-5b");
  std::istringstream labelled("label=x\n");
  CHECK_THROWS_AS(expand_sweep(labelled), ConfigError);
  std::istringstream bad("variant=base,huge\n");
  CHECK_THROWS_AS(expand_sweep(bad), ConfigError);
}

TEST_CASE("checkpoint round trip") {
  auto cfg = quick();
  cfg.variant = ModelVariant::PE;
  const auto run = run_seed(cfg, 2, true);
  REQUIRE(run.final_policies.size() == 2);
  Checkpoint ck;
  ck.config = cfg;
  ck.seed = 2;
  ck.round = cfg.rounds;
  ck.stats = run.stats;
  ck.client_ids = {0, 1};
  ck.policies = run.final_policies;
  std::stringstream buf;
  write_checkpoint(ck, buf);
  const auto back = read_checkpoint(buf);
  CHECK(back.seed == 2);
  CHECK(back.round == cfg.rounds);
  CHECK(format_config(back.config) == format_config(cfg));
  CHECK(back.stats.lo == ck.stats.lo);
  CHECK(back.stats.hi == ck.stats.hi);
  CHECK(back.client_ids == ck.client_ids);
  REQUIRE(back.policies.size() == 2);
  CHECK(back.policies[0] == ck.policies[0]);
  CHECK(back.policies[1] == ck.policies[1]);
  const auto path = std::filesystem::temp_directory_path() / "gridfed_test.ckpt";
  write_checkpoint(ck, path);
  CHECK(read_checkpoint(path).policies[1] == ck.policies[1]);
  std::filesystem::remove(path);
  std::istringstream junk("#gridfed-ckpt v2\n");
  CHECK_THROWS_AS(read_checkpoint(junk), ParseError);
}

TEST_CASE("diverged seeds are reported, not thrown") {
  auto cfg = quick();
  cfg.algo.ppo.value_lr = 1e300;
  cfg.rounds = 3;
  const auto run = run_seed(cfg, 0);
  REQUIRE(run.failed);
  {
    CHECK(run.rows.back().status.rfind("diverged(client=", 0) == 0);
    CHECK(std::isnan(run.rows.back().metrics.total_reward));
  }
}
