#include <doctest.h>

#include <cmath>
#include <numeric>

#include "dalab/trainer.hpp"
#include "oracles.hpp"

using namespace dalab;

namespace {

struct SmallInstance {
  TabularPolicy reference;
  GoldenReward golden;
  PreferenceDataset dataset;
};

SmallInstance small_instance(RngSeed seed, int prompts = 8, int responses = 16,
                             int pairs_per_prompt = 8) {
  const FiniteDomain domain(prompts, responses);
  SmallInstance inst{random_tabular_policy(domain, derive_seed(seed, 1)),
                     random_golden_reward(domain, derive_seed(seed, 2)), {}};
  inst.dataset =
      sample_preference_dataset(inst.reference, inst.golden, pairs_per_prompt,
                                derive_seed(seed, 3));
  return inst;
}

double spearman_rho(const std::vector<double>& values) {
  // rank correlation against the (already sorted) observation index
  const std::size_t n = values.size();
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(),
            [&](std::size_t a, std::size_t b) { return values[a] < values[b]; });
  std::vector<double> rank(n);
  for (std::size_t i = 0; i < n; ++i) rank[order[i]] = static_cast<double>(i);
  double num = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const double d = rank[i] - static_cast<double>(i);
    num += d * d;
  }
  return 1.0 - 6.0 * num / (static_cast<double>(n) * (n * n - 1));
}

}  // namespace

TEST_CASE("every training objective gradient matches finite differences") {
  const SmallInstance inst = small_instance(701, 4, 8, 6);
  const auto pair = oracles::random_pair(4, 8, 702);
  const TruncationConfig upper{TruncationMode::upper, 2.0};
  struct Case {
    TrainMethod method;
    DAAConfig daa;
    TruncationConfig trunc;
  };
  const std::vector<Case> cases = {
      {TrainMethod::dpo, {LossKind::logistic, 0.5}, {}},
      {TrainMethod::ipo, {LossKind::squared, 0.5}, {}},
      {TrainMethod::is_dpo, {LossKind::logistic, 0.5}, upper},
      {TrainMethod::is_ipo, {LossKind::squared, 0.5}, upper},
      {TrainMethod::rpo, {LossKind::logistic, 0.5}, {}},
      {TrainMethod::online_dpo_exact, {LossKind::logistic, 0.5}, {}},
  };
  for (const Case& c : cases) {
    const Objective obj =
        make_objective(c.method, inst.dataset, inst.reference, c.daa, c.trunc, 1.0);
    const GradientVector analytic = obj.gradient(pair.policy);
    // weighted methods differentiate the local objective with weights frozen
    // at the evaluation point
    const bool weighted = c.method == TrainMethod::is_dpo || c.method == TrainMethod::is_ipo;
    const auto value = weighted ? oracles::frozen_weight_loss(inst.dataset, pair.policy,
                                                              inst.reference, c.daa, c.trunc)
                                : obj.value;
    const GradientVector fd = oracles::fd_gradient(value, pair.policy);
    INFO("method ", to_string(c.method));
    CHECK(oracles::rel_error(analytic, fd) < 1e-5);
    if (weighted) CHECK(value(pair.policy) == doctest::Approx(obj.value(pair.policy)).epsilon(1e-13));
  }
}

TEST_CASE("zero-step training records the initialization only") {
  const SmallInstance inst = small_instance(711);
  TrainConfig cfg;
  cfg.method = TrainMethod::dpo;
  cfg.daa = {LossKind::logistic, 0.1};
  cfg.steps = 0;
  cfg.record_every = 1;
  cfg.seed = 5;
  const TrainTrace trace = train(inst.dataset, inst.reference, inst.golden, cfg);
  REQUIRE(trace.records.size() == 1);
  CHECK(trace.records[0].step == 0);
  CHECK(trace.records[0].loss == doctest::Approx(std::log(2.0)).epsilon(1e-13));
  CHECK(trace.records[0].sqrt_kl == 0.0);
  CHECK(trace.records[0].mean_is_ratio == 1.0);
}

TEST_CASE("two-response DPO dynamics match the scalar recursion") {
  TabularPolicy reference(1, 2);
  GoldenReward golden(Table(1, 2, 0.0));
  golden.rewards.at(0, 0) = 1.0;
  PreferenceDataset data;
  for (int i = 0; i < 4; ++i) data.pairs.push_back({0, 0, 1});

  TrainConfig cfg;
  cfg.method = TrainMethod::dpo;
  cfg.daa = {LossKind::logistic, 0.25};
  cfg.learning_rate = 0.8;
  cfg.steps = 30;
  cfg.record_every = 30;
  const TrainTrace trace = train(data, reference, golden, cfg);

  // scalar oracle for the logit gap
  double d = 0.0;
  double prev_prob = 0.5;
  for (int k = 0; k < 30; ++k) {
    const double sigma = 1.0 / (1.0 + std::exp(-cfg.daa.beta * d));
    d += 2.0 * cfg.learning_rate * cfg.daa.beta * (1.0 - sigma);
    const double prob = 1.0 / (1.0 + std::exp(-d));
    CHECK(prob > prev_prob);  // winner probability rises monotonically
    prev_prob = prob;
  }
  const double gap = trace.final_policy.logit(0, 0) - trace.final_policy.logit(0, 1);
  CHECK(gap == doctest::Approx(d).epsilon(1e-10));
}

TEST_CASE("exact online training with a small step is monotone in loss") {
  const SmallInstance inst = small_instance(721, 4, 8, 4);
  TrainConfig cfg;
  cfg.method = TrainMethod::online_dpo_exact;
  cfg.daa = {LossKind::logistic, 0.5};
  cfg.learning_rate = 0.5;
  cfg.steps = 200;
  cfg.record_every = 10;
  const TrainTrace trace = train(inst.dataset, inst.reference, inst.golden, cfg);
  for (std::size_t i = 1; i < trace.records.size(); ++i)
    CHECK(trace.records[i].loss <= trace.records[i - 1].loss + 1e-12);
}

TEST_CASE("win_rate saturates for a policy locked onto the best response") {
  // golden argmax is response 0 for every prompt; dataset never names it
  TabularPolicy reference(2, 3);
  GoldenReward golden(Table(2, 3, 0.0));
  golden.rewards.at(0, 0) = 5.0;
  golden.rewards.at(1, 0) = 5.0;
  PreferenceDataset data;
  data.pairs.push_back({0, 1, 2});
  data.pairs.push_back({1, 2, 1});
  Table logits(2, 3, 0.0);
  logits.at(0, 0) = 60.0;
  logits.at(1, 0) = 60.0;
  const TabularPolicy argmax_policy{std::move(logits)};
  CHECK(win_rate(argmax_policy, data, golden, 16, 3) == 1.0);
}

TEST_CASE("win_rate is exactly one half under a constant golden reward") {
  const SmallInstance inst = small_instance(731);
  GoldenReward constant(Table(8, 16, 0.42));
  CHECK(win_rate(inst.reference, inst.dataset, constant, 8, 11) == 0.5);
}

TEST_CASE("win_rate at the reference matches the enumerated expectation") {
  const SmallInstance inst = small_instance(741, 4, 8, 8);
  double expected = 0.0;
  for (const PreferencePair& p : inst.dataset.pairs) {
    const auto probs = inst.reference.prob_row(p.prompt);
    const double r_w = inst.golden.rewards.at(p.prompt, p.winner);
    for (int y = 0; y < 8; ++y) {
      const double r_y = inst.golden.rewards.at(p.prompt, y);
      if (r_y > r_w)
        expected += probs[y];
      else if (r_y == r_w)
        expected += 0.5 * probs[y];
    }
  }
  expected /= static_cast<double>(inst.dataset.pairs.size());
  const int samples = 256;
  const double mc = win_rate(inst.reference, inst.dataset, inst.golden, samples, 13);
  const double total = static_cast<double>(inst.dataset.pairs.size()) * samples;
  CHECK(std::abs(mc - expected) < 3.0 * std::sqrt(0.25 / total));
}

TEST_CASE("sweep with a degenerate grid reproduces a single train call") {
  const SmallInstance inst = small_instance(751, 4, 8, 4);
  TrainConfig base;
  base.method = TrainMethod::dpo;
  base.daa = {LossKind::logistic, 0.05};
  base.learning_rate = 5.0;
  base.steps = 50;
  base.record_every = 10;
  const auto traces = sweep(inst.reference, inst.golden, inst.dataset, {TrainMethod::dpo}, {0.05},
                            {9}, base);
  REQUIRE(traces.size() == 1);
  TrainConfig single = base;
  single.seed = 9;
  const TrainTrace direct = train(inst.dataset, inst.reference, inst.golden, single);
  REQUIRE(traces[0].records.size() == direct.records.size());
  for (std::size_t i = 0; i < direct.records.size(); ++i) {
    CHECK(traces[0].records[i].loss == direct.records[i].loss);
    CHECK(traces[0].records[i].sqrt_kl == direct.records[i].sqrt_kl);
    CHECK(traces[0].records[i].win_rate == direct.records[i].win_rate);
  }
}

TEST_CASE("sweep cells are bit-identical across runs and parallelism levels") {
  const SmallInstance inst = small_instance(761, 4, 8, 4);
  TrainConfig base;
  base.learning_rate = 5.0;
  base.steps = 40;
  base.record_every = 20;
  const std::vector<TrainMethod> methods = {TrainMethod::dpo, TrainMethod::is_dpo};
  base.trunc = {TruncationMode::upper, 2.718281828459045};
  const std::vector<double> betas = {0.05, 0.1};
  const std::vector<RngSeed> seeds = {1, 2};
  const auto a = sweep(inst.reference, inst.golden, inst.dataset, methods, betas, seeds, base, 1);
  const auto b = sweep(inst.reference, inst.golden, inst.dataset, methods, betas, seeds, base, 4);
  REQUIRE(a.size() == b.size());
  for (std::size_t i = 0; i < a.size(); ++i) {
    REQUIRE(a[i].records.size() == b[i].records.size());
    for (std::size_t r = 0; r < a[i].records.size(); ++r) {
      CHECK(a[i].records[r].loss == b[i].records[r].loss);
      CHECK(a[i].records[r].win_rate == b[i].records[r].win_rate);
    }
    CHECK(a[i].final_policy.logits().v == b[i].final_policy.logits().v);
  }
}

TEST_CASE("every trace starts at zero KL and unit importance ratio") {
  const SmallInstance inst = small_instance(771, 4, 8, 4);
  TrainConfig base;
  base.learning_rate = 2.0;
  base.steps = 20;
  base.record_every = 10;
  base.trunc = {TruncationMode::upper, 2.718281828459045};
  for (TrainMethod m : {TrainMethod::dpo, TrainMethod::ipo, TrainMethod::is_dpo,
                        TrainMethod::is_ipo, TrainMethod::rpo, TrainMethod::online_dpo_exact}) {
    TrainConfig cfg = base;
    cfg.method = m;
    cfg.daa.beta = 0.1;
    const TrainTrace trace = train(inst.dataset, inst.reference, inst.golden, cfg);
    CHECK(trace.records.front().step == 0);
    CHECK(trace.records.front().sqrt_kl == 0.0);
    CHECK(trace.records.front().mean_is_ratio == 1.0);
  }
}

TEST_CASE("trainer gradient matches finite differences along the trajectory") {
  const SmallInstance inst = small_instance(781, 4, 8, 6);
  TrainConfig cfg;
  cfg.method = TrainMethod::is_dpo;
  cfg.daa = {LossKind::logistic, 0.05};
  cfg.trunc = {TruncationMode::upper, 2.718281828459045};
  cfg.learning_rate = 20.0;
  cfg.steps = 200;
  cfg.record_every = 100;
  const Objective obj = make_objective(cfg.method, inst.dataset, inst.reference, cfg.daa,
                                       cfg.trunc, cfg.sft_weight);
  TabularPolicy policy = inst.reference;
  for (int k = 0; k <= cfg.steps; ++k) {
    if (k == 0 || k == cfg.steps / 2 || k == cfg.steps) {
      const GradientVector analytic = obj.gradient(policy);
      const auto frozen =
          oracles::frozen_weight_loss(inst.dataset, policy, inst.reference, cfg.daa, cfg.trunc);
      const GradientVector fd = oracles::fd_gradient(frozen, policy);
      CHECK(oracles::rel_error(analytic, fd) < 1e-5);
      CHECK(frozen(policy) == doctest::Approx(obj.value(policy)).epsilon(1e-13));
    }
    if (k < cfg.steps) {
      const GradientVector g = obj.gradient(policy);
      for (std::size_t i = 0; i < g.size(); ++i)
        policy.logits().v[i] -= cfg.learning_rate * g[i];
    }
  }
}

TEST_CASE("damping truncation keeps the importance-sampled run at a lower KL") {
  TrainConfig base;
  base.daa.beta = 0.01;
  base.trunc = {TruncationMode::upper, 0.05};
  base.learning_rate = 400.0;
  base.steps = 600;
  base.record_every = 100;
  int is_wins = 0;
  for (RngSeed seed : {101, 202, 303}) {
    const SmallInstance inst = small_instance(seed);
    TrainConfig dpo_cfg = base;
    dpo_cfg.method = TrainMethod::dpo;
    dpo_cfg.seed = seed;
    TrainConfig is_cfg = base;
    is_cfg.method = TrainMethod::is_dpo;
    is_cfg.seed = seed;
    const TrainTrace dpo_trace = train(inst.dataset, inst.reference, inst.golden, dpo_cfg);
    const TrainTrace is_trace = train(inst.dataset, inst.reference, inst.golden, is_cfg);
    if (is_trace.records.back().sqrt_kl <= dpo_trace.records.back().sqrt_kl) ++is_wins;
  }
  CHECK(is_wins >= 2);
}

TEST_CASE("dataset responses gain mass under DPO so the pooled ratio rises") {
  // with exact per-response logits nothing leaks off the dataset: winners
  // absorb probability directly, so the pooled dataset ratio trends up
  // rather than down
  const SmallInstance inst = small_instance(791, 8, 16, 8);
  TrainConfig cfg;
  cfg.method = TrainMethod::dpo;
  cfg.daa.beta = 0.01;
  cfg.learning_rate = 400.0;
  cfg.steps = 600;
  cfg.record_every = 25;
  cfg.seed = 7;
  const TrainTrace trace = train(inst.dataset, inst.reference, inst.golden, cfg);
  std::vector<double> ratios;
  for (const MetricsRecord& r : trace.records) ratios.push_back(r.mean_is_ratio);
  CHECK(spearman_rho(ratios) > 0.0);
  CHECK(ratios.back() > 1.0);
}

TEST_CASE("with a shared plain-GD rate smaller beta drifts more slowly") {
  // the per-step update scales with beta, so at a fixed step budget the
  // smallest beta has moved least toward dataset concentration
  const SmallInstance inst = small_instance(801, 8, 16, 32);
  TrainConfig base;
  base.method = TrainMethod::dpo;
  base.learning_rate = 40.0;
  base.steps = 1000;
  base.record_every = 250;
  base.seed = 3;
  double prev = -1.0;
  for (double beta : {0.01, 0.05, 0.1}) {
    TrainConfig cfg = base;
    cfg.daa.beta = beta;
    const TrainTrace trace = train(inst.dataset, inst.reference, inst.golden, cfg);
    const double final_kl = trace.records.back().sqrt_kl;
    CHECK(final_kl > prev);
    prev = final_kl;
  }
}

TEST_CASE("train validates configuration and inputs") {
  const SmallInstance inst = small_instance(811, 4, 8, 4);
  TrainConfig cfg;
  cfg.learning_rate = 0.0;
  CHECK_THROWS_AS((void)train(inst.dataset, inst.reference, inst.golden, cfg),
                  std::invalid_argument);
  cfg.learning_rate = 1.0;
  cfg.steps = 10;
  cfg.record_every = 20;
  CHECK_THROWS_AS((void)train(inst.dataset, inst.reference, inst.golden, cfg),
                  std::invalid_argument);
}
