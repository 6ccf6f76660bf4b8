#include "dalab/diagnostics.hpp"

#include <cmath>
#include <stdexcept>

namespace dalab {

namespace {

void check_domains(const TabularPolicy& policy, const TabularPolicy& reference,
                   const char* where) {
  if (policy.num_prompts() != reference.num_prompts() ||
      policy.num_responses() != reference.num_responses())
    throw std::invalid_argument(std::string(where) + ": domain mismatch");
}

double clamp_weight(double log_w, const TruncationConfig& trunc) {
  switch (trunc.mode) {
    case TruncationMode::none:
      return std::exp(log_w);
    case TruncationMode::upper:
      return log_w >= std::log(trunc.epsilon) ? trunc.epsilon : std::exp(log_w);
    case TruncationMode::lower:
      return std::max(std::exp(log_w), trunc.epsilon);
  }
  throw std::logic_error("clamp_weight: bad mode");
}

}  // namespace

double dot(const GradientVector& a, const GradientVector& b) {
  if (a.size() != b.size()) throw std::invalid_argument("dot: length mismatch");
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}

double norm(const GradientVector& g) { return std::sqrt(dot(g, g)); }

double max_abs_diff(const GradientVector& a, const GradientVector& b) {
  if (a.size() != b.size()) throw std::invalid_argument("max_abs_diff: length mismatch");
  double m = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
  return m;
}

SupportMask::SupportMask(int prompts, int responses, bool fill)
    : num_prompts(prompts),
      num_responses(responses),
      allowed(static_cast<std::size_t>(prompts) * responses, fill ? 1 : 0) {}

GradientVector grad_kl_exact(const TabularPolicy& policy, const TabularPolicy& reference) {
  check_domains(policy, reference, "grad_kl_exact");
  const int P = policy.num_prompts();
  const int R = policy.num_responses();
  GradientVector g(static_cast<std::size_t>(P) * R, 0.0);
  const double inv_p = 1.0 / static_cast<double>(P);
  for (int x = 0; x < P; ++x) {
    const std::vector<double> lp = policy.log_prob_row(x);
    const std::vector<double> lq = reference.log_prob_row(x);
    double row_kl = 0.0;
    for (int y = 0; y < R; ++y) row_kl += std::exp(lp[y]) * (lp[y] - lq[y]);
    double* out = g.data() + static_cast<std::size_t>(x) * R;
    for (int y = 0; y < R; ++y) out[y] = inv_p * std::exp(lp[y]) * ((lp[y] - lq[y]) - row_kl);
  }
  return g;
}

GradientVector grad_mu_online_exact(const TabularPolicy& policy, const TabularPolicy& reference) {
  check_domains(policy, reference, "grad_mu_online_exact");
  const int P = policy.num_prompts();
  const int R = policy.num_responses();
  GradientVector g(static_cast<std::size_t>(P) * R, 0.0);
  const double inv_p = 1.0 / static_cast<double>(P);
  for (int x = 0; x < P; ++x) {
    const std::vector<double> probs = policy.prob_row(x);
    const std::vector<double> lp = policy.log_prob_row(x);
    const std::vector<double> lq = reference.log_prob_row(x);
    double* out = g.data() + static_cast<std::size_t>(x) * R;
    for (int y = 0; y < R; ++y) {
      const double coef = inv_p * probs[y] * (lp[y] - lq[y]);
      // score of y: e_y - pi
      for (int a = 0; a < R; ++a) out[a] -= coef * probs[a];
      out[y] += coef;
    }
  }
  return g;
}

OfflineGradientPair grad_mu_offline_exact(const TabularPolicy& policy,
                                          const TabularPolicy& reference) {
  check_domains(policy, reference, "grad_mu_offline_exact");
  const int P = policy.num_prompts();
  const int R = policy.num_responses();
  OfflineGradientPair out;
  out.lhs.assign(static_cast<std::size_t>(P) * R, 0.0);
  out.rhs.assign(static_cast<std::size_t>(P) * R, 0.0);
  const double inv_p = 1.0 / static_cast<double>(P);
  for (int x = 0; x < P; ++x) {
    const std::vector<double> probs = policy.prob_row(x);
    const std::vector<double> ref_probs = reference.prob_row(x);
    const std::vector<double> lp = policy.log_prob_row(x);
    const std::vector<double> lq = reference.log_prob_row(x);
    std::vector<double> lr(R);
    for (int y = 0; y < R; ++y) lr[y] = lp[y] - lq[y];

    // lhs: sum over ordered pairs of ref(y1) ref(y2) * rho * grad(rho);
    // grad(rho) is e_{y1} - e_{y2}.
    double* lhs = out.lhs.data() + static_cast<std::size_t>(x) * R;
    for (int y1 = 0; y1 < R; ++y1)
      for (int y2 = 0; y2 < R; ++y2) {
        const double coef = inv_p * ref_probs[y1] * ref_probs[y2] * (lr[y1] - lr[y2]);
        lhs[y1] += coef;
        lhs[y2] -= coef;
      }

    // rhs: 2 E_ref[log_ratio * score] + 2 KL(ref||pi) E_ref[score], both by
    // direct enumeration with the dense score e_y - pi.
    double kl_ref_pi = 0.0;
    for (int y = 0; y < R; ++y) kl_ref_pi += ref_probs[y] * (lq[y] - lp[y]);
    double* rhs = out.rhs.data() + static_cast<std::size_t>(x) * R;
    for (int y = 0; y < R; ++y) {
      const double coef = inv_p * 2.0 * ref_probs[y] * (lr[y] + kl_ref_pi);
      for (int a = 0; a < R; ++a) rhs[a] -= coef * probs[a];
      rhs[y] += coef;
    }
  }
  return out;
}

GradientVector grad_mu_is_exact(const TabularPolicy& policy, const TabularPolicy& reference,
                                const TruncationConfig& trunc) {
  check_domains(policy, reference, "grad_mu_is_exact");
  validate(trunc);
  const int P = policy.num_prompts();
  const int R = policy.num_responses();
  GradientVector g(static_cast<std::size_t>(P) * R, 0.0);
  const double scale = 0.5 / static_cast<double>(P);
  for (int x = 0; x < P; ++x) {
    const std::vector<double> ref_probs = reference.prob_row(x);
    const std::vector<double> lp = policy.log_prob_row(x);
    const std::vector<double> lq = reference.log_prob_row(x);
    std::vector<double> lr(R);
    for (int y = 0; y < R; ++y) lr[y] = lp[y] - lq[y];
    double* out = g.data() + static_cast<std::size_t>(x) * R;
    for (int y1 = 0; y1 < R; ++y1)
      for (int y2 = 0; y2 < R; ++y2) {
        const double w = clamp_weight(lr[y1] + lr[y2], trunc);
        const double coef = scale * ref_probs[y1] * ref_probs[y2] * w * (lr[y1] - lr[y2]);
        out[y1] += coef;
        out[y2] -= coef;
      }
  }
  return g;
}

double cosine_similarity(const GradientVector& g, const GradientVector& h) {
  const double ng = norm(g);
  const double nh = norm(h);
  if (ng <= 1e-12 || nh <= 1e-12)
    throw std::invalid_argument("cosine_similarity: zero-norm input");
  const double c = dot(g, h) / (ng * nh);
  return std::min(1.0, std::max(-1.0, c));
}

double mean_importance_ratio(const TabularPolicy& policy, const TabularPolicy& reference,
                             const PreferenceDataset& dataset) {
  check_domains(policy, reference, "mean_importance_ratio");
  validate_dataset(dataset, policy.num_prompts(), policy.num_responses());
  const Table lp = policy.log_prob_table();
  const Table lq = reference.log_prob_table();
  double acc = 0.0;
  for (const PreferencePair& p : dataset.pairs) {
    acc += std::exp(lp.at(p.prompt, p.winner) - lq.at(p.prompt, p.winner));
    acc += std::exp(lp.at(p.prompt, p.loser) - lq.at(p.prompt, p.loser));
  }
  return acc / (2.0 * static_cast<double>(dataset.pairs.size()));
}

Table restricted_support_policy(const TabularPolicy& policy, const SupportMask& mask) {
  if (mask.num_prompts != policy.num_prompts() || mask.num_responses != policy.num_responses())
    throw std::invalid_argument("restricted_support_policy: mask shape mismatch");
  const int P = policy.num_prompts();
  const int R = policy.num_responses();
  Table out(P, R, 0.0);
  for (int x = 0; x < P; ++x) {
    const std::vector<double> probs = policy.prob_row(x);
    double mass = 0.0;
    for (int y = 0; y < R; ++y)
      if (mask.is_allowed(x, y)) mass += probs[y];
    if (mass < 1e-300)
      throw std::runtime_error("restricted_support_policy: zero allowed mass at prompt " +
                               std::to_string(x));
    for (int y = 0; y < R; ++y)
      if (mask.is_allowed(x, y)) out.at(x, y) = probs[y] / mass;
  }
  return out;
}

}  // namespace dalab
