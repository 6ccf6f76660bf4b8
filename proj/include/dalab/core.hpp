#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "dalab/rng.hpp"

namespace dalab {

// Row-major [prompt][response] table. Shared layout for logits, rewards
// and probability tables; also the flat order used by gradient vectors.
struct Table {
  int rows = 0;
  int cols = 0;
  std::vector<double> v;

  Table() = default;
  Table(int r, int c, double fill = 0.0)
      : rows(r), cols(c), v(static_cast<std::size_t>(r) * c, fill) {}

  double& at(int r, int c) { return v[static_cast<std::size_t>(r) * cols + c]; }
  double at(int r, int c) const { return v[static_cast<std::size_t>(r) * cols + c]; }
  std::size_t size() const { return v.size(); }
};

struct FiniteDomain {
  int num_prompts = 0;
  int responses_per_prompt = 0;

  FiniteDomain() = default;
  FiniteDomain(int prompts, int responses);  // validates counts and table budget
};

// Softmax-parameterized conditional distribution over a finite response
// space. Full support by construction; rows renormalize implicitly on any
// logit update.
class TabularPolicy {
 public:
  TabularPolicy() = default;
  TabularPolicy(int num_prompts, int num_responses);  // zero logits = uniform rows
  explicit TabularPolicy(Table logits);

  int num_prompts() const { return logits_.rows; }
  int num_responses() const { return logits_.cols; }

  double logit(int prompt, int response) const { return logits_.at(prompt, response); }
  double& logit(int prompt, int response) { return logits_.at(prompt, response); }
  Table& logits() { return logits_; }
  const Table& logits() const { return logits_; }

  std::vector<double> log_prob_row(int prompt) const;  // stable log-softmax
  std::vector<double> prob_row(int prompt) const;
  Table log_prob_table() const;
  double log_prob(int prompt, int response) const;
  double prob(int prompt, int response) const;

 private:
  void check_index(int prompt, int response) const;
  Table logits_;
};

struct GoldenReward {
  Table rewards;

  GoldenReward() = default;
  explicit GoldenReward(Table r);  // validates finiteness
};

struct PreferencePair {
  int prompt = 0;
  int winner = 0;
  int loser = 0;
};

struct DatasetProvenance {
  RngSeed seed = 0;
  std::string source_policy_id;
  std::string golden_reward_id;
};

struct PreferenceDataset {
  std::vector<PreferencePair> pairs;
  DatasetProvenance provenance;
};

void validate_dataset(const PreferenceDataset& dataset, int num_prompts, int num_responses);

// ---------------------------------------------------------------------------
// Instance construction
// ---------------------------------------------------------------------------

TabularPolicy random_tabular_policy(const FiniteDomain& domain, RngSeed seed, double logit_scale = 1.0);
GoldenReward random_golden_reward(const FiniteDomain& domain, RngSeed seed, double reward_scale = 1.0);

// ---------------------------------------------------------------------------
// Operations
// ---------------------------------------------------------------------------

// log pi(y|x) - log ref(y|x), from logits via log-softmax.
double log_ratio(const TabularPolicy& policy, const TabularPolicy& reference, int prompt,
                 int response);

// Analytic softmax score: component (prompt, y') = [y' == response] - pi(y'|prompt),
// zero on all other prompt rows. Flat prompt-major layout.
std::vector<double> grad_log_prob(const TabularPolicy& policy, int prompt, int response);

// sigma(r_w - r_l).
double bt_preference_prob(double reward_winner, double reward_loser);

// For each prompt draws pairs_per_prompt response pairs i.i.d. from the
// reference (resampling collisions), labels winners by the Bradley-Terry
// probability of the golden rewards.
PreferenceDataset sample_preference_dataset(const TabularPolicy& reference,
                                            const GoldenReward& golden, int pairs_per_prompt,
                                            RngSeed seed);

// Mean negative log-likelihood of the dataset under a reward table.
double bt_nll(const PreferenceDataset& dataset, const GoldenReward& reward);

// Full-batch gradient descent on bt_nll over a free reward table.
GoldenReward fit_reward_table(const PreferenceDataset& dataset, const FiniteDomain& domain,
                              int steps, double learning_rate);

// Closed-form target: pi*(y|x) proportional to ref(y|x) * exp(r(x,y)/beta).
TabularPolicy optimal_policy(const TabularPolicy& reference, const GoldenReward& reward,
                             double beta);

// Mean over prompts of KL(p(.|x) || q(.|x)).
double kl_exact(const TabularPolicy& p, const TabularPolicy& q);

// Sampled estimator: mean over draws (uniform prompt, y ~ policy) of
// log(pi/ref) + (pi/ref - 1). Kept exactly in this form; see
// kl_estimator_expectation for its exact mean.
double kl_estimate_sampled(const TabularPolicy& policy, const TabularPolicy& reference,
                           int n_samples, RngSeed seed);

// Exact expectation of the sampled estimator by full enumeration. Its bias
// against kl_exact is reported by the verification suite.
double kl_estimator_expectation(const TabularPolicy& policy, const TabularPolicy& reference);

// Categorical draw from the policy row.
int sample_response(const TabularPolicy& policy, int prompt, Rng& rng);
int sample_response(const TabularPolicy& policy, int prompt, RngSeed seed);

}  // namespace dalab
