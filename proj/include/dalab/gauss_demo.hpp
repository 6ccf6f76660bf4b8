#pragma once

#include <array>
#include <string>
#include <vector>

#include "dalab/objectives.hpp"
#include "dalab/rng.hpp"

namespace dalab {

using Point2 = std::array<double, 2>;

struct GaussianComponent {
  double weight = 1.0;
  Point2 mean{0.0, 0.0};
  std::array<std::array<double, 2>, 2> cov{{{1.0, 0.0}, {0.0, 1.0}}};
};

struct GaussianMixtureRef {
  std::vector<GaussianComponent> components;
};

// Two unit-covariance modes asymmetric around the origin: (1, 0) with weight
// 0.7 and (-5, 0) with weight 0.3, so a unimodal fit has a clear
// mode-seeking target.
GaussianMixtureRef default_two_mode_mixture();

void validate(const GaussianMixtureRef& ref);

struct DiagonalGaussianPolicy {
  Point2 mean{0.0, 0.0};
  Point2 log_std{0.0, 0.0};
};

enum class DemoRegime { on_policy, off_policy, off_policy_is };

std::string to_string(DemoRegime regime);
DemoRegime demo_regime_from_string(const std::string& s);

struct DemoGrid {
  int nx = 64;
  int ny = 64;
  double x_min = -11.5, x_max = 9.5;
  double y_min = -10.5, y_max = 10.5;
};

struct DemoConfig {
  int mc_samples = 256;  // sample pairs per gradient step
  int steps = 2000;
  double learning_rate = 0.05;
  TruncationConfig trunc{TruncationMode::upper, 2.718281828459045};
  int kl_samples = 4096;  // Monte-Carlo KL(pi || ref) estimate at the end
  DemoGrid grid;
};

struct DemoResult {
  DemoRegime regime = DemoRegime::on_policy;
  DiagonalGaussianPolicy final_policy;
  double ref_density_at_mean = 0.0;
  double mc_kl_to_ref = 0.0;
  DemoGrid grid;
  std::vector<double> ref_density;     // nx * ny, x-major
  std::vector<double> policy_density;  // nx * ny, x-major
};

double mixture_log_density(const GaussianMixtureRef& ref, Point2 point);
double policy_log_density(const DiagonalGaussianPolicy& policy, Point2 point);

struct PolicyGrad {
  Point2 d_mean{0.0, 0.0};
  Point2 d_log_std{0.0, 0.0};
};

// Gradient of the diagonal-Gaussian log-density at a fixed point:
// d/d_mean = (x - mu) / sigma^2, d/d_log_std = ((x - mu)^2 / sigma^2) - 1.
PolicyGrad policy_grad(const DiagonalGaussianPolicy& policy, Point2 point);

// Minimizes the weighted-squared-loss term (rho^2 / 2 with rho the log-ratio
// difference of a sample pair) under three data regimes:
//   on_policy      fresh policy samples each step, score-function gradient
//                  2 E[log_ratio * grad log pi]
//   off_policy     a fixed bank of reference sample pairs, pathwise gradient
//   off_policy_is  the same bank reweighted by the truncated ratio product
DemoResult gaussian_demo(const GaussianMixtureRef& ref, const DiagonalGaussianPolicy& init,
                         DemoRegime regime, const DemoConfig& config, RngSeed seed);

}  // namespace dalab
