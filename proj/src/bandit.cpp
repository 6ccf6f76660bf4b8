#include "dalab/bandit.hpp"

#include <cmath>
#include <limits>
#include <stdexcept>

namespace dalab {

namespace {

void check_instance(const BanditInstance& instance) {
  double sum = 0.0;
  for (double p : instance.ref_probs) {
    if (!(p > 0.0)) throw std::invalid_argument("BanditInstance: probabilities must be positive");
    sum += p;
  }
  if (std::abs(sum - 1.0) > 1e-12)
    throw std::invalid_argument("BanditInstance: probabilities must sum to 1");
  for (double r : instance.rewards)
    if (!std::isfinite(r)) throw std::invalid_argument("BanditInstance: non-finite reward");
}

// Fisher-preconditioned descent on KL(pi || target) over the 1xN logits:
// step direction log(pi/target) centered under pi. Plain logit gradients
// carry a pi(a) factor that stalls on the target's smallest probabilities
// (rate ~ lr * pi), which cannot reach tight tolerances when the target has
// components around 1e-9; the preconditioned step contracts every
// coordinate at the same rate.
TabularPolicy fit_to_target(const TabularPolicy& target, const BanditDescentConfig& descent,
                            double beta_for_error) {
  const int n = target.num_responses();
  TabularPolicy policy(1, n);  // uniform start
  for (long step = 0; step < descent.max_steps; ++step) {
    if (kl_exact(policy, target) <= descent.kl_tolerance) return policy;
    const std::vector<double> lp = policy.log_prob_row(0);
    const std::vector<double> lq = target.log_prob_row(0);
    double mean = 0.0;
    for (int a = 0; a < n; ++a) mean += std::exp(lp[a]) * (lp[a] - lq[a]);
    for (int a = 0; a < n; ++a)
      policy.logit(0, a) -= descent.learning_rate * ((lp[a] - lq[a]) - mean);
  }
  if (kl_exact(policy, target) <= descent.kl_tolerance) return policy;
  throw std::runtime_error("bandit_cosine_sweep: descent did not converge at beta " +
                           std::to_string(beta_for_error));
}

}  // namespace

TabularPolicy bandit_reference(const BanditInstance& instance) {
  check_instance(instance);
  Table logits(1, 4);
  for (int a = 0; a < 4; ++a) logits.at(0, a) = std::log(instance.ref_probs[a]);
  return TabularPolicy(std::move(logits));
}

GoldenReward bandit_reward(const BanditInstance& instance) {
  Table rewards(1, 4);
  for (int a = 0; a < 4; ++a) rewards.at(0, a) = instance.rewards[a];
  return GoldenReward(std::move(rewards));
}

std::vector<DiagnosticsReport> bandit_cosine_sweep(const BanditInstance& instance,
                                                   const std::vector<double>& betas,
                                                   const BanditDescentConfig& descent) {
  if (betas.empty()) throw std::invalid_argument("bandit_cosine_sweep: empty beta grid");
  for (double b : betas)
    if (!(b > 0.0)) throw std::invalid_argument("bandit_cosine_sweep: beta must be positive");
  const TabularPolicy reference = bandit_reference(instance);
  const GoldenReward reward = bandit_reward(instance);

  std::vector<DiagnosticsReport> reports;
  reports.reserve(betas.size());
  for (double beta : betas) {
    const TabularPolicy target = optimal_policy(reference, reward, beta);
    const TabularPolicy policy = fit_to_target(target, descent, beta);

    const GradientVector g_kl = grad_kl_exact(policy, reference);
    const GradientVector g_off = grad_mu_offline_exact(policy, reference).lhs;
    const GradientVector g_is = grad_mu_is_exact(policy, reference, TruncationConfig{});

    DiagnosticsReport rep;
    rep.beta = beta;
    if (norm(g_kl) <= 1e-8 || norm(g_off) <= 1e-8 || norm(g_is) <= 1e-8) {
      rep.gradients_degenerate = true;
      rep.cos_kl_mu = std::numeric_limits<double>::quiet_NaN();
      rep.cos_kl_mu_is = std::numeric_limits<double>::quiet_NaN();
    } else {
      rep.cos_kl_mu = cosine_similarity(g_kl, g_off);
      rep.cos_kl_mu_is = cosine_similarity(g_kl, g_is);
    }
    rep.kl = kl_exact(policy, reference);
    double ratio_sum = 0.0;
    for (int a = 0; a < 4; ++a) ratio_sum += policy.prob(0, a) / reference.prob(0, a);
    rep.mean_is_ratio = ratio_sum / 4.0;
    reports.push_back(rep);
  }
  return reports;
}

std::vector<double> log_spaced_betas(double lo, double hi, int count) {
  if (!(lo > 0.0) || !(hi > lo) || count < 2)
    throw std::invalid_argument("log_spaced_betas: need 0 < lo < hi and count >= 2");
  std::vector<double> out(count);
  const double llo = std::log(lo);
  const double lhi = std::log(hi);
  for (int i = 0; i < count; ++i)
    out[i] = std::exp(llo + (lhi - llo) * static_cast<double>(i) / (count - 1));
  return out;
}

}  // namespace dalab
