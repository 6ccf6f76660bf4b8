#pragma once

#include <array>
#include <vector>

#include "dalab/diagnostics.hpp"

namespace dalab {

// Four-action bandit: one prompt, four responses. Defaults are the reference
// distribution (0.5, 0.1, 0.1, 0.3) and rewards (0.5, 1, 0, 0).
struct BanditInstance {
  std::array<double, 4> ref_probs{0.5, 0.1, 0.1, 0.3};
  std::array<double, 4> rewards{0.5, 1.0, 0.0, 0.0};
};

// Fisher-preconditioned KL descent settings; the preconditioning keeps the
// contraction rate uniform across target probabilities spanning many orders
// of magnitude.
struct BanditDescentConfig {
  double learning_rate = 0.5;
  long max_steps = 100000;
  double kl_tolerance = 1e-10;
};

TabularPolicy bandit_reference(const BanditInstance& instance);
GoldenReward bandit_reward(const BanditInstance& instance);

// For each beta: build the closed-form target, fit a softmax policy to it by
// exact KL descent (from uniform logits), then compare the KL gradient
// against the offline and importance-sampled weighted-squared-loss gradients
// at the fitted point. mean_is_ratio in the report is the unweighted mean
// over actions of pi/ref.
std::vector<DiagnosticsReport> bandit_cosine_sweep(const BanditInstance& instance,
                                                   const std::vector<double>& betas,
                                                   const BanditDescentConfig& descent);

std::vector<double> log_spaced_betas(double lo, double hi, int count);

}  // namespace dalab
