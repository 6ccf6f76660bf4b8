#include "dalab/objectives.hpp"

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

// -log sigma(x), stable on both tails.
double neg_log_sigmoid(double x) {
  return x >= 0.0 ? std::log1p(std::exp(-x)) : -x + std::log1p(std::exp(x));
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

std::string to_string(LossKind kind) {
  return kind == LossKind::logistic ? "logistic" : "squared";
}

LossKind loss_kind_from_string(const std::string& s) {
  if (s == "logistic") return LossKind::logistic;
  if (s == "squared") return LossKind::squared;
  throw std::invalid_argument("unknown loss kind: " + s);
}

std::string to_string(TruncationMode mode) {
  switch (mode) {
    case TruncationMode::none: return "none";
    case TruncationMode::upper: return "upper";
    case TruncationMode::lower: return "lower";
  }
  throw std::logic_error("bad truncation mode");
}

TruncationMode truncation_mode_from_string(const std::string& s) {
  if (s == "none") return TruncationMode::none;
  if (s == "upper") return TruncationMode::upper;
  if (s == "lower") return TruncationMode::lower;
  throw std::invalid_argument("unknown truncation mode: " + s);
}

void validate(const DAAConfig& cfg) {
  if (!(cfg.beta > 0.0)) throw std::invalid_argument("DAAConfig: beta must be positive");
}

void validate(const TruncationConfig& trunc) {
  if (trunc.mode != TruncationMode::none && !(trunc.epsilon > 0.0))
    throw std::invalid_argument("TruncationConfig: epsilon must be positive");
}

double f_eval(LossKind loss, double x) {
  switch (loss) {
    case LossKind::logistic: return neg_log_sigmoid(x);
    case LossKind::squared: return (x - 1.0) * (x - 1.0);
  }
  throw std::logic_error("f_eval: bad loss kind");
}

LossDerivatives f_derivs(LossKind loss) {
  switch (loss) {
    case LossKind::logistic: return {std::log(2.0), -0.5, 0.25};
    case LossKind::squared: return {1.0, -2.0, 2.0};
  }
  throw std::logic_error("f_derivs: bad loss kind");
}

double f_prime(LossKind loss, double x) {
  switch (loss) {
    case LossKind::logistic: {
      // sigma(x) - 1
      return x >= 0.0 ? -std::exp(-x) / (1.0 + std::exp(-x)) : -1.0 / (1.0 + std::exp(x));
    }
    case LossKind::squared: return 2.0 * (x - 1.0);
  }
  throw std::logic_error("f_prime: bad loss kind");
}

double rho(const TabularPolicy& policy, const TabularPolicy& reference,
           const PreferencePair& pair) {
  return log_ratio(policy, reference, pair.prompt, pair.winner) -
         log_ratio(policy, reference, pair.prompt, pair.loser);
}

double implicit_reward(const TabularPolicy& policy, const TabularPolicy& reference, int prompt,
                       int response, double beta) {
  if (!(beta > 0.0)) throw std::invalid_argument("implicit_reward: beta must be positive");
  return beta * log_ratio(policy, reference, prompt, response);
}

double daa_loss(const PreferenceDataset& dataset, const TabularPolicy& policy,
                const TabularPolicy& reference, const DAAConfig& cfg) {
  check_domains(policy, reference, "daa_loss");
  validate(cfg);
  validate_dataset(dataset, policy.num_prompts(), policy.num_responses());
  const Table lp = policy.log_prob_table();
  const Table lq = reference.log_prob_table();
  double acc = 0.0;
  for (std::size_t i = 0; i < dataset.pairs.size(); ++i) {
    const PreferencePair& p = dataset.pairs[i];
    const double r = (lp.at(p.prompt, p.winner) - lq.at(p.prompt, p.winner)) -
                     (lp.at(p.prompt, p.loser) - lq.at(p.prompt, p.loser));
    const double term = f_eval(cfg.loss, cfg.beta * r);
    if (!std::isfinite(term))
      throw std::runtime_error("daa_loss: non-finite term at pair " + std::to_string(i));
    acc += term;
  }
  return acc / static_cast<double>(dataset.pairs.size());
}

double online_daa_loss_exact(const TabularPolicy& policy, const TabularPolicy& reference,
                             const DAAConfig& cfg) {
  check_domains(policy, reference, "online_daa_loss_exact");
  validate(cfg);
  const int P = policy.num_prompts();
  const int R = policy.num_responses();
  double acc = 0.0;
  for (int x = 0; x < P; ++x) {
    const std::vector<double> lp = policy.log_prob_row(x);
    const std::vector<double> lq = reference.log_prob_row(x);
    std::vector<double> lr(R);
    for (int y = 0; y < R; ++y) lr[y] = lp[y] - lq[y];
    double row = 0.0;
    for (int y1 = 0; y1 < R; ++y1)
      for (int y2 = 0; y2 < R; ++y2)
        row += std::exp(lp[y1] + lp[y2]) * f_eval(cfg.loss, cfg.beta * (lr[y1] - lr[y2]));
    acc += row;
  }
  return acc / static_cast<double>(P);
}

double importance_weight(const TabularPolicy& policy, const TabularPolicy& reference,
                         const PreferencePair& pair, const TruncationConfig& trunc) {
  validate(trunc);
  const double log_w = log_ratio(policy, reference, pair.prompt, pair.winner) +
                       log_ratio(policy, reference, pair.prompt, pair.loser);
  return clamp_weight(log_w, trunc);
}

double is_daa_loss(const PreferenceDataset& dataset, const TabularPolicy& policy,
                   const TabularPolicy& reference, const DAAConfig& cfg,
                   const TruncationConfig& trunc) {
  check_domains(policy, reference, "is_daa_loss");
  validate(cfg);
  validate(trunc);
  validate_dataset(dataset, policy.num_prompts(), policy.num_responses());
  const Table lp = policy.log_prob_table();
  const Table lq = reference.log_prob_table();
  double acc = 0.0;
  for (std::size_t i = 0; i < dataset.pairs.size(); ++i) {
    const PreferencePair& p = dataset.pairs[i];
    const double lw = lp.at(p.prompt, p.winner) - lq.at(p.prompt, p.winner);
    const double ll = lp.at(p.prompt, p.loser) - lq.at(p.prompt, p.loser);
    const double w = clamp_weight(lw + ll, trunc);
    const double term = w * f_eval(cfg.loss, cfg.beta * (lw - ll));
    if (!std::isfinite(term))
      throw std::runtime_error("is_daa_loss: importance weight overflow at pair " +
                               std::to_string(i));
    acc += term;
  }
  return acc / static_cast<double>(dataset.pairs.size());
}

double is_daa_loss_exact(const TabularPolicy& policy, const TabularPolicy& reference,
                         const DAAConfig& cfg, const TruncationConfig& trunc) {
  check_domains(policy, reference, "is_daa_loss_exact");
  validate(cfg);
  validate(trunc);
  const int P = policy.num_prompts();
  const int R = policy.num_responses();
  double acc = 0.0;
  for (int x = 0; x < P; ++x) {
    const std::vector<double> lp = policy.log_prob_row(x);
    const std::vector<double> lq = reference.log_prob_row(x);
    std::vector<double> lr(R);
    for (int y = 0; y < R; ++y) lr[y] = lp[y] - lq[y];
    double row = 0.0;
    for (int y1 = 0; y1 < R; ++y1)
      for (int y2 = 0; y2 < R; ++y2) {
        const double w = clamp_weight(lr[y1] + lr[y2], trunc);
        row += std::exp(lq[y1] + lq[y2]) * w * f_eval(cfg.loss, cfg.beta * (lr[y1] - lr[y2]));
      }
    acc += row;
  }
  return acc / static_cast<double>(P);
}

double rpo_loss(const PreferenceDataset& dataset, const TabularPolicy& policy,
                const TabularPolicy& reference, const DAAConfig& cfg, double sft_weight) {
  if (sft_weight < 0.0) throw std::invalid_argument("rpo_loss: sft_weight must be nonnegative");
  const double base = daa_loss(dataset, policy, reference, cfg);
  if (sft_weight == 0.0) return base;
  double sft = 0.0;
  for (const PreferencePair& p : dataset.pairs) sft -= policy.log_prob(p.prompt, p.winner);
  return base + sft_weight * sft / static_cast<double>(dataset.pairs.size());
}

TaylorTerms taylor_decompose(const PreferenceDataset& dataset, const TabularPolicy& policy,
                             const TabularPolicy& reference, const DAAConfig& cfg) {
  check_domains(policy, reference, "taylor_decompose");
  validate(cfg);
  validate_dataset(dataset, policy.num_prompts(), policy.num_responses());
  const LossDerivatives d = f_derivs(cfg.loss);
  double mean_rho = 0.0;
  double mean_rho2 = 0.0;
  for (const PreferencePair& p : dataset.pairs) {
    const double r = rho(policy, reference, p);
    mean_rho += r;
    mean_rho2 += r * r;
  }
  const double n = static_cast<double>(dataset.pairs.size());
  mean_rho /= n;
  mean_rho2 /= n;
  TaylorTerms out;
  out.constant = d.value_at_zero;
  out.linear = d.first * cfg.beta * mean_rho;
  out.quadratic = 0.5 * d.second * cfg.beta * cfg.beta * mean_rho2;
  out.exact_loss = daa_loss(dataset, policy, reference, cfg);
  return out;
}

}  // namespace dalab
