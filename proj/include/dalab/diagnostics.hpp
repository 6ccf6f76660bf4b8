#pragma once

#include <cstdint>
#include <vector>

#include "dalab/core.hpp"
#include "dalab/objectives.hpp"

namespace dalab {

// Flat gradient over all policy logits, prompt-major / response-minor —
// the same layout as Table::v.
using GradientVector = std::vector<double>;

double dot(const GradientVector& a, const GradientVector& b);
double norm(const GradientVector& g);
double max_abs_diff(const GradientVector& a, const GradientVector& b);

struct SupportMask {
  int num_prompts = 0;
  int num_responses = 0;
  std::vector<std::uint8_t> allowed;  // row-major

  SupportMask() = default;
  SupportMask(int prompts, int responses, bool fill = true);
  bool is_allowed(int prompt, int response) const {
    return allowed[static_cast<std::size_t>(prompt) * num_responses + response] != 0;
  }
  void set(int prompt, int response, bool value) {
    allowed[static_cast<std::size_t>(prompt) * num_responses + response] = value ? 1 : 0;
  }
};

struct DiagnosticsReport {
  double beta = 0.0;
  double cos_kl_mu = 0.0;
  double cos_kl_mu_is = 0.0;
  double mean_is_ratio = 1.0;
  double kl = 0.0;
  // Set when a gradient norm fell below 1e-8 (policy at the optimum); the
  // cosines are then NaN in the row instead of the row being dropped.
  bool gradients_degenerate = false;
};

// Exact gradient of mean-over-prompts KL(pi || ref) wrt all logits. Per-row
// closed form: component (x, y) = pi(y|x) * (log_ratio(y) - sum_y' pi(y'|x)
// log_ratio(y')).
GradientVector grad_kl_exact(const TabularPolicy& policy, const TabularPolicy& reference);

// Score-function route to the same quantity: sum over responses of
// pi(y|x) * log_ratio(y) * grad_log_prob(y), averaged over prompts. Agrees
// with grad_kl_exact to float round-off.
GradientVector grad_mu_online_exact(const TabularPolicy& policy, const TabularPolicy& reference);

struct OfflineGradientPair {
  GradientVector lhs;  // pair enumeration of grad(rho^2 / 2) under the reference measure
  GradientVector rhs;  // 2 E_ref[log_ratio * score] + 2 KL(ref||pi) E_ref[score], per prompt
};

// Both sides of the offline weighted-squared-loss decomposition, computed by
// independent enumerations.
OfflineGradientPair grad_mu_offline_exact(const TabularPolicy& policy,
                                          const TabularPolicy& reference);

// Importance-sampled estimate of the same gradient: ordered pairs under the
// reference measure, weighted by the (optionally truncated) ratio product,
// of grad(rho^2 / 2); weights are constants under the gradient. Includes the
// 1/2 pair-symmetrization factor so that with trunc none it equals
// grad_kl_exact (each response enters once as y1 and once as y2).
GradientVector grad_mu_is_exact(const TabularPolicy& policy, const TabularPolicy& reference,
                                const TruncationConfig& trunc);

// dot(g, h) / (|g| |h|); throws when either norm is below 1e-12.
double cosine_similarity(const GradientVector& g, const GradientVector& h);

// Mean of pi/ref over all responses appearing in dataset pairs, winners and
// losers pooled with multiplicity.
double mean_importance_ratio(const TabularPolicy& policy, const TabularPolicy& reference,
                             const PreferenceDataset& dataset);

// pi restricted to the mask and renormalized per prompt. The result can have
// zero entries, so it is returned as a probability table rather than logits.
Table restricted_support_policy(const TabularPolicy& policy, const SupportMask& mask);

}  // namespace dalab
