#include <doctest.h>

#include <cmath>
#include <map>

#include "dalab/core.hpp"
#include "oracles.hpp"

using namespace dalab;

TEST_CASE("log_ratio is zero for identical distributions") {
  const auto pair = oracles::random_pair(3, 5, 11);
  for (int x = 0; x < 3; ++x)
    for (int y = 0; y < 5; ++y)
      CHECK(log_ratio(pair.policy, pair.policy, x, y) == doctest::Approx(0.0).epsilon(1e-15));
}

TEST_CASE("log_ratio matches hand-evaluated log-softmax difference") {
  const auto policy = oracles::policy_from_rows({{1.0, 0.0}});
  const auto reference = oracles::policy_from_rows({{0.0, 0.0}});
  // log(2 e / (1 + e))
  CHECK(log_ratio(policy, reference, 0, 0) == doctest::Approx(0.3798854930417225).epsilon(1e-12));
}

TEST_CASE("log_ratio negates when policy and reference swap") {
  const auto pair = oracles::random_pair(2, 6, 17);
  for (int y = 0; y < 6; ++y)
    CHECK(log_ratio(pair.policy, pair.reference, 1, y) ==
          doctest::Approx(-log_ratio(pair.reference, pair.policy, 1, y)).epsilon(1e-12));
}

TEST_CASE("log_ratio rejects out-of-range indices") {
  const auto pair = oracles::random_pair(2, 3, 5);
  CHECK_THROWS_AS((void)log_ratio(pair.policy, pair.reference, 2, 0), std::out_of_range);
  CHECK_THROWS_AS((void)log_ratio(pair.policy, pair.reference, 0, 3), std::out_of_range);
}

TEST_CASE("grad_log_prob on a uniform two-response row") {
  const TabularPolicy policy(1, 2);
  const auto g = grad_log_prob(policy, 0, 0);
  CHECK(g[0] == doctest::Approx(0.5).epsilon(1e-15));
  CHECK(g[1] == doctest::Approx(-0.5).epsilon(1e-15));
}

TEST_CASE("grad_log_prob rows sum to zero") {
  const auto pair = oracles::random_pair(4, 7, 23);
  for (int y = 0; y < 7; ++y) {
    const auto g = grad_log_prob(pair.policy, 2, y);
    double total = 0.0;
    for (double v : g) total += v;
    CHECK(std::abs(total) < 1e-12);
  }
}

TEST_CASE("grad_log_prob matches finite differences of log_prob") {
  const auto pair = oracles::random_pair(4, 8, 31);
  const auto analytic = grad_log_prob(pair.policy, 1, 3);
  const auto fd = oracles::fd_gradient(
      [](const TabularPolicy& pi) { return pi.log_prob(1, 3); }, pair.policy);
  for (std::size_t i = 0; i < analytic.size(); ++i)
    CHECK(analytic[i] == doctest::Approx(fd[i]).epsilon(1e-6));
}

TEST_CASE("bt_preference_prob basics") {
  CHECK(bt_preference_prob(0.7, 0.7) == doctest::Approx(0.5).epsilon(1e-15));
  CHECK(bt_preference_prob(1.0, 0.0) == doctest::Approx(0.7310585786300049).epsilon(1e-14));
  Rng rng(3);
  for (int i = 0; i < 50; ++i) {
    const double a = 3.0 * rng.normal();
    const double b = 3.0 * rng.normal();
    CHECK(bt_preference_prob(a, b) + bt_preference_prob(b, a) ==
          doctest::Approx(1.0).epsilon(1e-14));
  }
}

TEST_CASE("preference sampling is deterministic and respects reward gaps") {
  TabularPolicy reference(1, 3);
  auto golden = oracles::reward_from_rows({{50.0, 0.0, 0.0}});
  const auto a = sample_preference_dataset(reference, golden, 40, 99);
  const auto b = sample_preference_dataset(reference, golden, 40, 99);
  REQUIRE(a.pairs.size() == 40);
  for (std::size_t i = 0; i < a.pairs.size(); ++i) {
    CHECK(a.pairs[i].winner == b.pairs[i].winner);
    CHECK(a.pairs[i].loser == b.pairs[i].loser);
    CHECK(a.pairs[i].winner != a.pairs[i].loser);
    // the response with reward 50 always wins when it appears
    if (a.pairs[i].winner == 0 || a.pairs[i].loser == 0) CHECK(a.pairs[i].winner == 0);
  }
}

TEST_CASE("preference sampling win frequency matches the Bradley-Terry probability") {
  TabularPolicy reference(1, 2);
  auto golden = oracles::reward_from_rows({{0.8, 0.0}});
  const int n = 10000;
  const auto data = sample_preference_dataset(reference, golden, n, 7);
  int wins_for_0 = 0;
  for (const auto& p : data.pairs)
    if (p.winner == 0) ++wins_for_0;
  const double p_expected = bt_preference_prob(0.8, 0.0);
  const double freq = static_cast<double>(wins_for_0) / n;
  const double sigma = std::sqrt(p_expected * (1 - p_expected) / n);
  CHECK(std::abs(freq - p_expected) < 4.0 * sigma);
}

TEST_CASE("preference sampling with constant rewards is symmetric") {
  TabularPolicy reference(1, 2);
  auto golden = oracles::reward_from_rows({{1.0, 1.0}});
  const int n = 10000;
  const auto data = sample_preference_dataset(reference, golden, n, 13);
  int wins_for_0 = 0;
  for (const auto& p : data.pairs)
    if (p.winner == 0) ++wins_for_0;
  const double freq = static_cast<double>(wins_for_0) / n;
  CHECK(std::abs(freq - 0.5) < 4.0 * std::sqrt(0.25 / n));
}

TEST_CASE("fit_reward_table separable data grows the winning gap") {
  PreferenceDataset data;
  for (int i = 0; i < 64; ++i) data.pairs.push_back({0, 0, 1});
  for (int i = 0; i < 64; ++i) data.pairs.push_back({1, 1, 0});
  const FiniteDomain domain(2, 2);
  const auto r200 = fit_reward_table(data, domain, 200, 0.5);
  const auto r800 = fit_reward_table(data, domain, 800, 0.5);
  const double gap200 = r200.rewards.at(0, 0) - r200.rewards.at(0, 1);
  const double gap800 = r800.rewards.at(0, 0) - r800.rewards.at(0, 1);
  CHECK(gap200 > 0.5);
  CHECK(gap800 > gap200);
}

TEST_CASE("fit_reward_table symmetric labels give equal rewards") {
  PreferenceDataset data;
  for (int i = 0; i < 50; ++i) {
    data.pairs.push_back({0, 0, 1});
    data.pairs.push_back({0, 1, 0});
  }
  const FiniteDomain domain(2, 2);
  const auto fitted = fit_reward_table(data, domain, 2000, 0.5);
  CHECK(std::abs(fitted.rewards.at(0, 0) - fitted.rewards.at(0, 1)) < 1e-3);
}

TEST_CASE("fit_reward_table loss is non-increasing along the descent") {
  const FiniteDomain domain(3, 4);
  const auto reference = random_tabular_policy(domain, 41);
  const auto golden = random_golden_reward(domain, 42);
  const auto data = sample_preference_dataset(reference, golden, 100, 43);
  double prev = bt_nll(data, fit_reward_table(data, domain, 0, 0.2));
  for (int steps : {50, 100, 200, 400}) {
    const double cur = bt_nll(data, fit_reward_table(data, domain, steps, 0.2));
    CHECK(cur <= prev + 1e-12);
    prev = cur;
  }
}

TEST_CASE("fit_reward_table recovers the sign of true reward gaps") {
  const FiniteDomain domain(2, 4);
  const auto reference = random_tabular_policy(domain, 51);
  const auto golden = oracles::reward_from_rows({{2.0, 0.0, -2.0, 1.0}, {0.0, 3.0, 1.0, -1.0}});
  const auto data = sample_preference_dataset(reference, golden, 500, 52);
  const auto fitted = fit_reward_table(data, domain, 3000, 0.5);
  for (int x = 0; x < 2; ++x)
    for (int y1 = 0; y1 < 4; ++y1)
      for (int y2 = 0; y2 < 4; ++y2) {
        const double true_gap = golden.rewards.at(x, y1) - golden.rewards.at(x, y2);
        if (std::abs(true_gap) < 1.0) continue;
        const double fit_gap = fitted.rewards.at(x, y1) - fitted.rewards.at(x, y2);
        CHECK(fit_gap * true_gap > 0.0);
      }
}

TEST_CASE("optimal_policy with constant reward returns the reference") {
  const FiniteDomain domain(3, 5);
  const auto reference = random_tabular_policy(domain, 61);
  auto constant = GoldenReward(Table(3, 5, 1.7));
  const auto pi = optimal_policy(reference, constant, 0.3);
  for (int x = 0; x < 3; ++x)
    for (int y = 0; y < 5; ++y)
      CHECK(pi.prob(x, y) == doctest::Approx(reference.prob(x, y)).epsilon(1e-12));
}

TEST_CASE("optimal_policy matches hand normalization on the four-action instance") {
  const auto reference = oracles::policy_from_probs({{0.5, 0.1, 0.1, 0.3}});
  const auto reward = oracles::reward_from_rows({{0.5, 1.0, 0.0, 0.0}});
  const auto pi = optimal_policy(reference, reward, 1.0);
  // normalize ref * exp(r) by hand
  const double unnorm[4] = {0.5 * std::exp(0.5), 0.1 * std::exp(1.0), 0.1, 0.3};
  const double z = unnorm[0] + unnorm[1] + unnorm[2] + unnorm[3];
  for (int a = 0; a < 4; ++a) CHECK(pi.prob(0, a) == doctest::Approx(unnorm[a] / z).epsilon(1e-12));
  CHECK(pi.prob(0, 0) == doctest::Approx(0.5510).epsilon(1e-3));
}

TEST_CASE("optimal_policy approaches the reference as beta grows") {
  const FiniteDomain domain(2, 4);
  const auto reference = random_tabular_policy(domain, 71);
  const auto golden = random_golden_reward(domain, 72);
  const auto pi = optimal_policy(reference, golden, 1e9);
  for (int x = 0; x < 2; ++x)
    for (int y = 0; y < 4; ++y)
      CHECK(pi.prob(x, y) == doctest::Approx(reference.prob(x, y)).epsilon(1e-8));
  CHECK_THROWS_AS((void)optimal_policy(reference, golden, 0.0), std::invalid_argument);
}

TEST_CASE("optimal_policy KL to the reference is non-increasing in beta") {
  const FiniteDomain domain(3, 6);
  const auto reference = random_tabular_policy(domain, 81);
  const auto golden = random_golden_reward(domain, 82);
  double prev = std::numeric_limits<double>::infinity();
  for (int i = 0; i < 10; ++i) {
    const double beta = 0.05 * std::pow(2.0, i);
    const double kl = kl_exact(optimal_policy(reference, golden, beta), reference);
    CHECK(kl <= prev + 1e-12);
    prev = kl;
  }
}

TEST_CASE("kl_exact hand value and axioms") {
  const auto p = oracles::policy_from_probs({{0.75, 0.25}});
  const auto q = oracles::policy_from_probs({{0.5, 0.5}});
  CHECK(kl_exact(p, q) == doctest::Approx(0.13081203594113694).epsilon(1e-12));
  CHECK(kl_exact(p, p) == 0.0);
  for (int i = 0; i < 1000; ++i) {
    const auto pair = oracles::random_pair(2, 4, 1000 + i);
    CHECK(kl_exact(pair.policy, pair.reference) >= 0.0);
  }
}

TEST_CASE("kl_exact is zero exactly for per-row constant logit shifts") {
  auto pair = oracles::random_pair(3, 4, 91);
  TabularPolicy shifted = pair.policy;
  for (int x = 0; x < 3; ++x)
    for (int y = 0; y < 4; ++y) shifted.logit(x, y) += 0.75 * (x + 1);
  CHECK(kl_exact(pair.policy, shifted) == doctest::Approx(0.0).epsilon(1e-14));
  // a non-constant perturbation must produce positive KL
  shifted.logit(1, 2) += 0.3;
  CHECK(kl_exact(pair.policy, shifted) > 1e-4);
}

TEST_CASE("sampled KL estimator is exactly zero at the reference") {
  const auto pair = oracles::random_pair(2, 5, 101);
  CHECK(kl_estimate_sampled(pair.policy, pair.policy, 64, 5) == 0.0);
}

TEST_CASE("sampled KL estimator expectation matches enumeration and carries positive bias") {
  const auto pair = oracles::random_pair(1, 8, 111);
  // independent enumeration of E[log r + (r - 1)] under the policy
  double expect = 0.0;
  for (int y = 0; y < 8; ++y) {
    const double lr = pair.policy.log_prob(0, y) - pair.reference.log_prob(0, y);
    expect += pair.policy.prob(0, y) * (lr + std::exp(lr) - 1.0);
  }
  const double lib = kl_estimator_expectation(pair.policy, pair.reference);
  CHECK(lib == doctest::Approx(expect).epsilon(1e-12));
  const double kl = kl_exact(pair.policy, pair.reference);
  CHECK(lib > kl);  // chi-square term is positive off the reference

  // the Monte-Carlo estimate converges to the enumerated expectation
  double mean = 0.0;
  const int reps = 200;
  for (int s = 0; s < reps; ++s) mean += kl_estimate_sampled(pair.policy, pair.reference, 256, s);
  mean /= reps;
  CHECK(std::abs(mean - expect) < 0.05);
}

TEST_CASE("sampled KL estimator variance shrinks like 1/n") {
  const auto pair = oracles::random_pair(1, 8, 121);
  auto variance_at = [&](int n) {
    double mean = 0.0, m2 = 0.0;
    const int reps = 100;
    for (int s = 0; s < reps; ++s) {
      const double v = kl_estimate_sampled(pair.policy, pair.reference, n, 10000 + s);
      mean += v;
      m2 += v * v;
    }
    mean /= reps;
    return m2 / reps - mean * mean;
  };
  const double v16 = variance_at(16);
  const double v64 = variance_at(64);
  const double ratio = v16 / v64;
  CHECK(ratio > 2.0);
  CHECK(ratio < 8.0);
}

TEST_CASE("sample_response is deterministic and hits the argmax under a huge gap") {
  auto policy = oracles::policy_from_rows({{0.0, 50.0, 0.0}});
  for (int s = 0; s < 20; ++s) {
    CHECK(sample_response(policy, 0, static_cast<RngSeed>(s)) == 1);
    CHECK(sample_response(policy, 0, static_cast<RngSeed>(s)) ==
          sample_response(policy, 0, static_cast<RngSeed>(s)));
  }
}

TEST_CASE("sample_response frequencies match probabilities") {
  const auto pair = oracles::random_pair(1, 6, 131);
  const auto probs = pair.policy.prob_row(0);
  std::map<int, int> counts;
  Rng rng(17);
  const int n = 100000;
  for (int i = 0; i < n; ++i) ++counts[sample_response(pair.policy, 0, rng)];
  for (int y = 0; y < 6; ++y) {
    const double freq = static_cast<double>(counts[y]) / n;
    const double sigma = std::sqrt(probs[y] * (1.0 - probs[y]) / n);
    CHECK(std::abs(freq - probs[y]) < 4.0 * sigma + 1e-9);
  }
}

TEST_CASE("softmax rows stay normalized after logit updates") {
  auto pair = oracles::random_pair(4, 8, 141);
  Rng rng(5);
  for (int round = 0; round < 10; ++round) {
    for (double& z : pair.policy.logits().v) z += 0.5 * rng.normal();
    for (int x = 0; x < 4; ++x) {
      const auto probs = pair.policy.prob_row(x);
      double total = 0.0;
      for (double p : probs) total += p;
      CHECK(std::abs(total - 1.0) < 1e-12);
      for (double p : probs) CHECK(p > 0.0);
    }
  }
}

TEST_CASE("domain validation") {
  CHECK_THROWS_AS(FiniteDomain(1, 4), std::invalid_argument);
  CHECK_THROWS_AS(FiniteDomain(4, 1), std::invalid_argument);
  CHECK_THROWS_AS(FiniteDomain(2000, 2000), std::invalid_argument);
  CHECK_NOTHROW(FiniteDomain(2, 2));
}
