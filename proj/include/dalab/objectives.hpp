#pragma once

#include <string>

#include "dalab/core.hpp"

namespace dalab {

// Convex loss family: logistic f(x) = -log sigma(x) recovers DPO,
// squared f(x) = (x - 1)^2 recovers IPO.
enum class LossKind { logistic, squared };

std::string to_string(LossKind kind);
LossKind loss_kind_from_string(const std::string& s);

struct DAAConfig {
  LossKind loss = LossKind::logistic;
  double beta = 0.1;
};

enum class TruncationMode { none, upper, lower };

std::string to_string(TruncationMode mode);
TruncationMode truncation_mode_from_string(const std::string& s);

// Importance-weight clamp. The abstract clipping ("to a maximum value") is
// mode=upper, min(w, epsilon); mode=lower is max(w, epsilon) as the clipped
// estimator is sometimes written. Upper is the default throughout.
struct TruncationConfig {
  TruncationMode mode = TruncationMode::none;
  double epsilon = 0.0;
};

void validate(const DAAConfig& cfg);
void validate(const TruncationConfig& trunc);

double f_eval(LossKind loss, double x);

struct LossDerivatives {
  double value_at_zero = 0.0;
  double first = 0.0;
  double second = 0.0;
};
LossDerivatives f_derivs(LossKind loss);

// First derivative f'(x); used by analytic loss gradients.
double f_prime(LossKind loss, double x);

// Log-ratio difference between winner and loser.
double rho(const TabularPolicy& policy, const TabularPolicy& reference,
           const PreferencePair& pair);

// beta * log_ratio. The per-prompt partition shift cancels in every pairwise
// difference, so it is never materialized.
double implicit_reward(const TabularPolicy& policy, const TabularPolicy& reference, int prompt,
                       int response, double beta);

// Mean over dataset pairs of f(beta * rho).
double daa_loss(const PreferenceDataset& dataset, const TabularPolicy& policy,
                const TabularPolicy& reference, const DAAConfig& cfg);

// Exact on-policy objective: double sum over all ordered response pairs
// weighted by pi(y1|x) pi(y2|x), averaged over prompts. Includes y1 == y2.
double online_daa_loss_exact(const TabularPolicy& policy, const TabularPolicy& reference,
                             const DAAConfig& cfg);

// Pairwise ratio product (pi/ref)(winner) * (pi/ref)(loser), computed in log
// domain, with the configured clamp applied to the product.
double importance_weight(const TabularPolicy& policy, const TabularPolicy& reference,
                         const PreferencePair& pair, const TruncationConfig& trunc);

// Empirical importance-sampled objective: mean over pairs of w * f(beta*rho).
double is_daa_loss(const PreferenceDataset& dataset, const TabularPolicy& policy,
                   const TabularPolicy& reference, const DAAConfig& cfg,
                   const TruncationConfig& trunc);

// Exact counterpart enumerating ordered pairs under the reference measure
// with importance weights; with trunc none it coincides with the online
// objective identically.
double is_daa_loss_exact(const TabularPolicy& policy, const TabularPolicy& reference,
                         const DAAConfig& cfg, const TruncationConfig& trunc = {});

// daa_loss plus sft_weight * mean(-log pi(winner)).
double rpo_loss(const PreferenceDataset& dataset, const TabularPolicy& policy,
                const TabularPolicy& reference, const DAAConfig& cfg, double sft_weight);

struct TaylorTerms {
  double constant = 0.0;    // f(0)
  double linear = 0.0;      // f'(0) * beta * mean(rho)
  double quadratic = 0.0;   // f''(0) * beta^2 / 2 * mean(rho^2)
  double exact_loss = 0.0;  // daa_loss on the same pairs
};

// Second-order expansion of the loss around rho = 0 under the expectation of
// the supplied dataset (the caller picks the sampling distribution).
TaylorTerms taylor_decompose(const PreferenceDataset& dataset, const TabularPolicy& policy,
                             const TabularPolicy& reference, const DAAConfig& cfg);

}  // namespace dalab
