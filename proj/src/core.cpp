#include "dalab/core.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>

namespace dalab {

namespace {

constexpr std::size_t kMaxTableCells = 1000000;

double log_sum_exp(const double* v, int n) {
  double m = -std::numeric_limits<double>::infinity();
  for (int i = 0; i < n; ++i) m = std::max(m, v[i]);
  double s = 0.0;
  for (int i = 0; i < n; ++i) s += std::exp(v[i] - m);
  return m + std::log(s);
}

}  // namespace

FiniteDomain::FiniteDomain(int prompts, int responses)
    : num_prompts(prompts), responses_per_prompt(responses) {
  if (prompts < 2 || responses < 2)
    throw std::invalid_argument("FiniteDomain: both counts must be >= 2");
  if (static_cast<std::size_t>(prompts) * responses > kMaxTableCells)
    throw std::invalid_argument("FiniteDomain: table exceeds exact-sum budget");
}

TabularPolicy::TabularPolicy(int num_prompts, int num_responses)
    : logits_(num_prompts, num_responses, 0.0) {
  if (num_prompts < 1 || num_responses < 2)
    throw std::invalid_argument("TabularPolicy: need >= 1 prompt and >= 2 responses");
}

TabularPolicy::TabularPolicy(Table logits) : logits_(std::move(logits)) {
  if (logits_.rows < 1 || logits_.cols < 2)
    throw std::invalid_argument("TabularPolicy: need >= 1 prompt and >= 2 responses");
  for (double z : logits_.v)
    if (!std::isfinite(z)) throw std::invalid_argument("TabularPolicy: non-finite logit");
}

void TabularPolicy::check_index(int prompt, int response) const {
  if (prompt < 0 || prompt >= logits_.rows || response < 0 || response >= logits_.cols)
    throw std::out_of_range("TabularPolicy: index out of range");
}

std::vector<double> TabularPolicy::log_prob_row(int prompt) const {
  check_index(prompt, 0);
  const double* row = logits_.v.data() + static_cast<std::size_t>(prompt) * logits_.cols;
  const double lse = log_sum_exp(row, logits_.cols);
  std::vector<double> out(logits_.cols);
  for (int y = 0; y < logits_.cols; ++y) out[y] = row[y] - lse;
  return out;
}

std::vector<double> TabularPolicy::prob_row(int prompt) const {
  std::vector<double> out = log_prob_row(prompt);
  for (double& p : out) p = std::exp(p);
  return out;
}

Table TabularPolicy::log_prob_table() const {
  Table t(logits_.rows, logits_.cols);
  for (int x = 0; x < logits_.rows; ++x) {
    const std::vector<double> lp = log_prob_row(x);
    std::copy(lp.begin(), lp.end(), t.v.begin() + static_cast<std::size_t>(x) * logits_.cols);
  }
  return t;
}

double TabularPolicy::log_prob(int prompt, int response) const {
  check_index(prompt, response);
  const double* row = logits_.v.data() + static_cast<std::size_t>(prompt) * logits_.cols;
  return row[response] - log_sum_exp(row, logits_.cols);
}

double TabularPolicy::prob(int prompt, int response) const {
  return std::exp(log_prob(prompt, response));
}

GoldenReward::GoldenReward(Table r) : rewards(std::move(r)) {
  for (double x : rewards.v)
    if (!std::isfinite(x)) throw std::invalid_argument("GoldenReward: non-finite entry");
}

void validate_dataset(const PreferenceDataset& dataset, int num_prompts, int num_responses) {
  if (dataset.pairs.empty()) throw std::invalid_argument("dataset: empty");
  for (const PreferencePair& p : dataset.pairs) {
    if (p.prompt < 0 || p.prompt >= num_prompts || p.winner < 0 || p.winner >= num_responses ||
        p.loser < 0 || p.loser >= num_responses)
      throw std::out_of_range("dataset: pair index out of range");
    if (p.winner == p.loser) throw std::invalid_argument("dataset: winner equals loser");
  }
}

TabularPolicy random_tabular_policy(const FiniteDomain& domain, RngSeed seed, double logit_scale) {
  Rng rng(seed);
  Table logits(domain.num_prompts, domain.responses_per_prompt);
  for (double& z : logits.v) z = logit_scale * rng.normal();
  return TabularPolicy(std::move(logits));
}

GoldenReward random_golden_reward(const FiniteDomain& domain, RngSeed seed, double reward_scale) {
  Rng rng(seed);
  Table rewards(domain.num_prompts, domain.responses_per_prompt);
  for (double& r : rewards.v) r = reward_scale * rng.normal();
  return GoldenReward(std::move(rewards));
}

double log_ratio(const TabularPolicy& policy, const TabularPolicy& reference, int prompt,
                 int response) {
  if (policy.num_prompts() != reference.num_prompts() ||
      policy.num_responses() != reference.num_responses())
    throw std::invalid_argument("log_ratio: domain mismatch");
  return policy.log_prob(prompt, response) - reference.log_prob(prompt, response);
}

std::vector<double> grad_log_prob(const TabularPolicy& policy, int prompt, int response) {
  const int P = policy.num_prompts();
  const int R = policy.num_responses();
  if (prompt < 0 || prompt >= P || response < 0 || response >= R)
    throw std::out_of_range("grad_log_prob: index out of range");
  std::vector<double> g(static_cast<std::size_t>(P) * R, 0.0);
  const std::vector<double> probs = policy.prob_row(prompt);
  double* row = g.data() + static_cast<std::size_t>(prompt) * R;
  for (int y = 0; y < R; ++y) row[y] = -probs[y];
  row[response] += 1.0;
  return g;
}

double bt_preference_prob(double reward_winner, double reward_loser) {
  if (!std::isfinite(reward_winner) || !std::isfinite(reward_loser))
    throw std::invalid_argument("bt_preference_prob: non-finite reward");
  const double d = reward_winner - reward_loser;
  // stable logistic
  if (d >= 0.0) return 1.0 / (1.0 + std::exp(-d));
  const double e = std::exp(d);
  return e / (1.0 + e);
}

PreferenceDataset sample_preference_dataset(const TabularPolicy& reference,
                                            const GoldenReward& golden, int pairs_per_prompt,
                                            RngSeed seed) {
  if (pairs_per_prompt < 1)
    throw std::invalid_argument("sample_preference_dataset: pairs_per_prompt must be >= 1");
  if (reference.num_responses() < 2)
    throw std::invalid_argument("sample_preference_dataset: need >= 2 responses per prompt");
  if (golden.rewards.rows != reference.num_prompts() ||
      golden.rewards.cols != reference.num_responses())
    throw std::invalid_argument("sample_preference_dataset: domain mismatch");

  Rng rng(seed);
  PreferenceDataset out;
  out.provenance.seed = seed;
  out.pairs.reserve(static_cast<std::size_t>(reference.num_prompts()) * pairs_per_prompt);
  for (int x = 0; x < reference.num_prompts(); ++x) {
    const std::vector<double> probs = reference.prob_row(x);
    for (int k = 0; k < pairs_per_prompt; ++k) {
      int y1 = rng.categorical(probs);
      int y2 = rng.categorical(probs);
      while (y2 == y1) y2 = rng.categorical(probs);
      const double p_first = bt_preference_prob(golden.rewards.at(x, y1), golden.rewards.at(x, y2));
      PreferencePair pair;
      pair.prompt = x;
      if (rng.bernoulli(p_first)) {
        pair.winner = y1;
        pair.loser = y2;
      } else {
        pair.winner = y2;
        pair.loser = y1;
      }
      out.pairs.push_back(pair);
    }
  }
  return out;
}

double bt_nll(const PreferenceDataset& dataset, const GoldenReward& reward) {
  if (dataset.pairs.empty()) throw std::invalid_argument("bt_nll: empty dataset");
  double acc = 0.0;
  for (const PreferencePair& p : dataset.pairs) {
    const double d = reward.rewards.at(p.prompt, p.winner) - reward.rewards.at(p.prompt, p.loser);
    // -log sigma(d), stable
    acc += d >= 0.0 ? std::log1p(std::exp(-d)) : -d + std::log1p(std::exp(d));
  }
  return acc / static_cast<double>(dataset.pairs.size());
}

GoldenReward fit_reward_table(const PreferenceDataset& dataset, const FiniteDomain& domain,
                              int steps, double learning_rate) {
  validate_dataset(dataset, domain.num_prompts, domain.responses_per_prompt);
  Table r(domain.num_prompts, domain.responses_per_prompt, 0.0);
  Table grad(domain.num_prompts, domain.responses_per_prompt, 0.0);
  const double inv_n = 1.0 / static_cast<double>(dataset.pairs.size());
  for (int step = 0; step < steps; ++step) {
    std::fill(grad.v.begin(), grad.v.end(), 0.0);
    for (const PreferencePair& p : dataset.pairs) {
      const double d = r.at(p.prompt, p.winner) - r.at(p.prompt, p.loser);
      const double coef = (bt_preference_prob(d, 0.0) - 1.0) * inv_n;  // d/dd of -log sigma(d)
      grad.at(p.prompt, p.winner) += coef;
      grad.at(p.prompt, p.loser) -= coef;
    }
    for (std::size_t i = 0; i < r.v.size(); ++i) {
      r.v[i] -= learning_rate * grad.v[i];
      if (!std::isfinite(r.v[i]))
        throw std::runtime_error("fit_reward_table: non-finite reward at step " +
                                 std::to_string(step));
    }
  }
  return GoldenReward(std::move(r));
}

TabularPolicy optimal_policy(const TabularPolicy& reference, const GoldenReward& reward,
                             double beta) {
  if (!(beta > 0.0)) throw std::invalid_argument("optimal_policy: beta must be positive");
  if (reward.rewards.rows != reference.num_prompts() ||
      reward.rewards.cols != reference.num_responses())
    throw std::invalid_argument("optimal_policy: domain mismatch");
  Table logits(reference.num_prompts(), reference.num_responses());
  for (int x = 0; x < reference.num_prompts(); ++x) {
    const std::vector<double> lp = reference.log_prob_row(x);
    for (int y = 0; y < reference.num_responses(); ++y)
      logits.at(x, y) = lp[y] + reward.rewards.at(x, y) / beta;
  }
  return TabularPolicy(std::move(logits));
}

double kl_exact(const TabularPolicy& p, const TabularPolicy& q) {
  if (p.num_prompts() != q.num_prompts() || p.num_responses() != q.num_responses())
    throw std::invalid_argument("kl_exact: domain mismatch");
  double acc = 0.0;
  for (int x = 0; x < p.num_prompts(); ++x) {
    const std::vector<double> lp = p.log_prob_row(x);
    const std::vector<double> lq = q.log_prob_row(x);
    double row = 0.0;
    for (int y = 0; y < p.num_responses(); ++y) row += std::exp(lp[y]) * (lp[y] - lq[y]);
    acc += row;
  }
  return acc / static_cast<double>(p.num_prompts());
}

double kl_estimate_sampled(const TabularPolicy& policy, const TabularPolicy& reference,
                           int n_samples, RngSeed seed) {
  if (n_samples < 1) throw std::invalid_argument("kl_estimate_sampled: n_samples must be >= 1");
  if (policy.num_prompts() != reference.num_prompts() ||
      policy.num_responses() != reference.num_responses())
    throw std::invalid_argument("kl_estimate_sampled: domain mismatch");
  Rng rng(seed);
  const Table lp = policy.log_prob_table();
  const Table lq = reference.log_prob_table();
  std::vector<std::vector<double>> prob_rows(policy.num_prompts());
  for (int x = 0; x < policy.num_prompts(); ++x) prob_rows[x] = policy.prob_row(x);
  double acc = 0.0;
  for (int i = 0; i < n_samples; ++i) {
    const int x = rng.uniform_index(policy.num_prompts());
    const int y = rng.categorical(prob_rows[x]);
    const double lr = lp.at(x, y) - lq.at(x, y);
    acc += lr + (std::exp(lr) - 1.0);
  }
  return acc / static_cast<double>(n_samples);
}

double kl_estimator_expectation(const TabularPolicy& policy, const TabularPolicy& reference) {
  if (policy.num_prompts() != reference.num_prompts() ||
      policy.num_responses() != reference.num_responses())
    throw std::invalid_argument("kl_estimator_expectation: domain mismatch");
  double acc = 0.0;
  for (int x = 0; x < policy.num_prompts(); ++x) {
    const std::vector<double> lp = policy.log_prob_row(x);
    const std::vector<double> lq = reference.log_prob_row(x);
    double row = 0.0;
    for (int y = 0; y < policy.num_responses(); ++y) {
      const double lr = lp[y] - lq[y];
      row += std::exp(lp[y]) * (lr + (std::exp(lr) - 1.0));
    }
    acc += row;
  }
  return acc / static_cast<double>(policy.num_prompts());
}

int sample_response(const TabularPolicy& policy, int prompt, Rng& rng) {
  const std::vector<double> probs = policy.prob_row(prompt);
  return rng.categorical(probs);
}

int sample_response(const TabularPolicy& policy, int prompt, RngSeed seed) {
  Rng rng(seed);
  return sample_response(policy, prompt, rng);
}

}  // namespace dalab
