#pragma once

#include <string>
#include <vector>

#include "dalab/rng.hpp"
#include "dalab/serialization.hpp"

namespace dalab {

struct VerifyConfig {
  int instances = 20;      // randomized tabular instances per identity check
  int max_prompts = 8;
  int max_responses = 16;
  int fd_instances = 10;   // instances per finite-difference spot check
  int kl_bias_instances = 10;
  RngSeed seed = 20240817;
  bool corrupt_gradient = false;  // negative-control hook, fails one check
};

struct VerifyCheck {
  std::string name;
  double max_error = 0.0;
  double tolerance = 0.0;
  bool pass = false;
};

struct KlBiasRow {
  double kl = 0.0;
  double estimator_expectation = 0.0;
  double bias = 0.0;
};

struct VerifyReport {
  std::vector<VerifyCheck> checks;
  std::vector<KlBiasRow> kl_estimator_bias;
  bool all_pass = false;
};

// Runs the full identity suite: exact value and gradient identities between
// the importance-sampled, online and KL forms, the offline decomposition,
// and finite-difference spot checks of every analytic gradient. The sampled
// KL estimator's exact expectation is reported against the exact KL with no
// threshold (it carries a chi-square bias term by construction).
VerifyReport run_verification(const VerifyConfig& config);

Json to_json(const VerifyReport& report);

}  // namespace dalab
