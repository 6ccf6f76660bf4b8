#include "dalab/trainer.hpp"

#include <atomic>
#include <bit>
#include <cmath>
#include <mutex>
#include <stdexcept>
#include <thread>

namespace dalab {

namespace {

// enough that metric noise (~0.003) stays well under the effects the traces
// are read for
constexpr int kWinRateSamplesPerPrompt = 64;

struct PairTerms {
  double log_ratio_w = 0.0;
  double log_ratio_l = 0.0;
};

PairTerms pair_terms(const Table& lp, const Table& lq, const PreferencePair& p) {
  PairTerms t;
  t.log_ratio_w = lp.at(p.prompt, p.winner) - lq.at(p.prompt, p.winner);
  t.log_ratio_l = lp.at(p.prompt, p.loser) - lq.at(p.prompt, p.loser);
  return t;
}

GradientVector grad_daa(const PreferenceDataset& dataset, const TabularPolicy& policy,
                        const TabularPolicy& reference, const DAAConfig& cfg) {
  const int R = policy.num_responses();
  GradientVector g(policy.logits().size(), 0.0);
  const Table lp = policy.log_prob_table();
  const Table lq = reference.log_prob_table();
  const double inv_n = 1.0 / static_cast<double>(dataset.pairs.size());
  for (const PreferencePair& p : dataset.pairs) {
    const PairTerms t = pair_terms(lp, lq, p);
    const double coef = inv_n * cfg.beta * f_prime(cfg.loss, cfg.beta * (t.log_ratio_w - t.log_ratio_l));
    double* row = g.data() + static_cast<std::size_t>(p.prompt) * R;
    row[p.winner] += coef;
    row[p.loser] -= coef;
  }
  return g;
}

GradientVector grad_rpo(const PreferenceDataset& dataset, const TabularPolicy& policy,
                        const TabularPolicy& reference, const DAAConfig& cfg, double sft_weight) {
  const int R = policy.num_responses();
  GradientVector g = grad_daa(dataset, policy, reference, cfg);
  const double scale = sft_weight / static_cast<double>(dataset.pairs.size());
  for (const PreferencePair& p : dataset.pairs) {
    const std::vector<double> probs = policy.prob_row(p.prompt);
    double* row = g.data() + static_cast<std::size_t>(p.prompt) * R;
    for (int a = 0; a < R; ++a) row[a] += scale * probs[a];  // -grad log pi(w) = pi - e_w
    row[p.winner] -= scale;
  }
  return g;
}

// Weighted update for the importance-sampled objective: mean over pairs of
// w_trunc * grad f(beta*rho), the truncated weight held constant under the
// gradient. Differentiating through the weight instead makes the
// weight-suppression term dominate the preference term by a factor ~f(0)/beta
// at small beta and the run degenerates immediately; the constant-weight form
// is also the quantity whose expectation equals the KL gradient.
GradientVector grad_is_daa(const PreferenceDataset& dataset, const TabularPolicy& policy,
                           const TabularPolicy& reference, const DAAConfig& cfg,
                           const TruncationConfig& trunc) {
  const int R = policy.num_responses();
  GradientVector g(policy.logits().size(), 0.0);
  const Table lp = policy.log_prob_table();
  const Table lq = reference.log_prob_table();
  const double inv_n = 1.0 / static_cast<double>(dataset.pairs.size());
  for (const PreferencePair& p : dataset.pairs) {
    const PairTerms t = pair_terms(lp, lq, p);
    const double log_w = t.log_ratio_w + t.log_ratio_l;
    const double r = t.log_ratio_w - t.log_ratio_l;
    double w = 0.0;
    switch (trunc.mode) {
      case TruncationMode::none: w = std::exp(log_w); break;
      case TruncationMode::upper:
        w = log_w >= std::log(trunc.epsilon) ? trunc.epsilon : std::exp(log_w);
        break;
      case TruncationMode::lower: w = std::max(std::exp(log_w), trunc.epsilon); break;
    }
    if (!std::isfinite(w)) throw std::runtime_error("grad_is_daa: importance weight overflow");
    double* row = g.data() + static_cast<std::size_t>(p.prompt) * R;
    const double sparse = inv_n * w * f_prime(cfg.loss, cfg.beta * r) * cfg.beta;
    row[p.winner] += sparse;
    row[p.loser] -= sparse;
  }
  return g;
}

// Gradient of the enumerated on-policy objective. Per prompt, with
// F1(a) = sum_y pi_y f(beta (lr_a - lr_y)), F2(a) the transposed sum, and A/B
// their f' counterparts, the component at a is
//   pi_a (F1(a) + F2(a) - 2 Fbar) + beta pi_a (A(a) - B(a)).
GradientVector grad_online_daa_exact(const TabularPolicy& policy, const TabularPolicy& reference,
                                     const DAAConfig& cfg) {
  const int P = policy.num_prompts();
  const int R = policy.num_responses();
  GradientVector g(policy.logits().size(), 0.0);
  const double inv_p = 1.0 / static_cast<double>(P);
  std::vector<double> f1(R), f2(R), a_sum(R), b_sum(R);
  for (int x = 0; x < P; ++x) {
    const std::vector<double> probs = policy.prob_row(x);
    const std::vector<double> lp = policy.log_prob_row(x);
    const std::vector<double> lq = reference.log_prob_row(x);
    std::vector<double> lr(R);
    for (int y = 0; y < R; ++y) lr[y] = lp[y] - lq[y];
    for (int a = 0; a < R; ++a) {
      double s1 = 0.0, s2 = 0.0, sa = 0.0, sb = 0.0;
      for (int y = 0; y < R; ++y) {
        const double fwd = cfg.beta * (lr[a] - lr[y]);
        s1 += probs[y] * f_eval(cfg.loss, fwd);
        s2 += probs[y] * f_eval(cfg.loss, -fwd);
        sa += probs[y] * f_prime(cfg.loss, fwd);
        sb += probs[y] * f_prime(cfg.loss, -fwd);
      }
      f1[a] = s1;
      f2[a] = s2;
      a_sum[a] = sa;
      b_sum[a] = sb;
    }
    double fbar = 0.0;
    for (int a = 0; a < R; ++a) fbar += probs[a] * f1[a];
    double* row = g.data() + static_cast<std::size_t>(x) * R;
    for (int a = 0; a < R; ++a)
      row[a] = inv_p * probs[a] *
               ((f1[a] + f2[a] - 2.0 * fbar) + cfg.beta * (a_sum[a] - b_sum[a]));
  }
  return g;
}

RngSeed metric_stream_seed(const TrainConfig& cfg, int step) {
  const RngSeed cell = derive_seed(cfg.seed, static_cast<std::uint64_t>(cfg.method) + 1,
                                   std::bit_cast<std::uint64_t>(cfg.daa.beta));
  return derive_seed(cell, 0x77696e72617465ULL, static_cast<std::uint64_t>(step));
}

}  // namespace

std::string to_string(TrainMethod method) {
  switch (method) {
    case TrainMethod::dpo: return "dpo";
    case TrainMethod::ipo: return "ipo";
    case TrainMethod::is_dpo: return "is_dpo";
    case TrainMethod::is_ipo: return "is_ipo";
    case TrainMethod::rpo: return "rpo";
    case TrainMethod::online_dpo_exact: return "online_dpo_exact";
  }
  throw std::logic_error("bad train method");
}

TrainMethod train_method_from_string(const std::string& s) {
  if (s == "dpo") return TrainMethod::dpo;
  if (s == "ipo") return TrainMethod::ipo;
  if (s == "is_dpo") return TrainMethod::is_dpo;
  if (s == "is_ipo") return TrainMethod::is_ipo;
  if (s == "rpo") return TrainMethod::rpo;
  if (s == "online_dpo_exact") return TrainMethod::online_dpo_exact;
  throw std::invalid_argument("unknown train method: " + s);
}

LossKind canonical_loss_kind(TrainMethod method, LossKind rpo_loss_kind) {
  switch (method) {
    case TrainMethod::dpo:
    case TrainMethod::is_dpo:
    case TrainMethod::online_dpo_exact:
      return LossKind::logistic;
    case TrainMethod::ipo:
    case TrainMethod::is_ipo:
      return LossKind::squared;
    case TrainMethod::rpo:
      return rpo_loss_kind;
  }
  throw std::logic_error("bad train method");
}

Objective make_objective(TrainMethod method, const PreferenceDataset& dataset,
                         const TabularPolicy& reference, const DAAConfig& daa,
                         const TruncationConfig& trunc, double sft_weight) {
  DAAConfig cfg = daa;
  cfg.loss = canonical_loss_kind(method, daa.loss);
  validate(cfg);
  validate(trunc);
  Objective obj;
  switch (method) {
    case TrainMethod::dpo:
    case TrainMethod::ipo:
      obj.value = [=, &dataset, &reference](const TabularPolicy& pi) {
        return daa_loss(dataset, pi, reference, cfg);
      };
      obj.gradient = [=, &dataset, &reference](const TabularPolicy& pi) {
        return grad_daa(dataset, pi, reference, cfg);
      };
      break;
    case TrainMethod::is_dpo:
    case TrainMethod::is_ipo:
      obj.value = [=, &dataset, &reference](const TabularPolicy& pi) {
        return is_daa_loss(dataset, pi, reference, cfg, trunc);
      };
      obj.gradient = [=, &dataset, &reference](const TabularPolicy& pi) {
        return grad_is_daa(dataset, pi, reference, cfg, trunc);
      };
      break;
    case TrainMethod::rpo:
      obj.value = [=, &dataset, &reference](const TabularPolicy& pi) {
        return rpo_loss(dataset, pi, reference, cfg, sft_weight);
      };
      obj.gradient = [=, &dataset, &reference](const TabularPolicy& pi) {
        return grad_rpo(dataset, pi, reference, cfg, sft_weight);
      };
      break;
    case TrainMethod::online_dpo_exact:
      obj.value = [=, &reference](const TabularPolicy& pi) {
        return online_daa_loss_exact(pi, reference, cfg);
      };
      obj.gradient = [=, &reference](const TabularPolicy& pi) {
        return grad_online_daa_exact(pi, reference, cfg);
      };
      break;
  }
  return obj;
}

double win_rate(const TabularPolicy& policy, const PreferenceDataset& dataset,
                const GoldenReward& golden, int samples_per_prompt, RngSeed seed) {
  if (samples_per_prompt < 1)
    throw std::invalid_argument("win_rate: samples_per_prompt must be >= 1");
  validate_dataset(dataset, policy.num_prompts(), policy.num_responses());
  Rng rng(seed);
  std::vector<std::vector<double>> prob_rows(policy.num_prompts());
  double acc = 0.0;
  for (const PreferencePair& p : dataset.pairs) {
    if (prob_rows[p.prompt].empty()) prob_rows[p.prompt] = policy.prob_row(p.prompt);
    const double r_w = golden.rewards.at(p.prompt, p.winner);
    for (int s = 0; s < samples_per_prompt; ++s) {
      const int y = rng.categorical(prob_rows[p.prompt]);
      const double r_y = golden.rewards.at(p.prompt, y);
      if (r_y > r_w)
        acc += 1.0;
      else if (r_y == r_w)
        acc += 0.5;
    }
  }
  return acc / (static_cast<double>(dataset.pairs.size()) * samples_per_prompt);
}

TrainTrace train(const PreferenceDataset& dataset, const TabularPolicy& reference,
                 const GoldenReward& golden, const TrainConfig& config) {
  if (!(config.learning_rate > 0.0))
    throw std::invalid_argument("train: learning_rate must be positive");
  if (config.steps < 0) throw std::invalid_argument("train: steps must be nonnegative");
  if (config.record_every < 1) throw std::invalid_argument("train: record_every must be >= 1");
  if (config.steps > 0 && config.record_every > config.steps)
    throw std::invalid_argument("train: record_every must be <= steps");
  validate_dataset(dataset, reference.num_prompts(), reference.num_responses());
  if (golden.rewards.rows != reference.num_prompts() ||
      golden.rewards.cols != reference.num_responses())
    throw std::invalid_argument("train: golden reward domain mismatch");

  const Objective obj = make_objective(config.method, dataset, reference, config.daa,
                                       config.trunc, config.sft_weight);
  TrainTrace trace;
  trace.config = config;
  TabularPolicy policy = reference;

  auto record = [&](int step) {
    MetricsRecord rec;
    rec.step = step;
    rec.loss = obj.value(policy);
    if (!std::isfinite(rec.loss))
      throw std::runtime_error("train: non-finite loss at step " + std::to_string(step) +
                               " (method " + to_string(config.method) + ")");
    rec.sqrt_kl = std::sqrt(std::max(0.0, kl_exact(policy, reference)));
    rec.win_rate = win_rate(policy, dataset, golden, kWinRateSamplesPerPrompt,
                            metric_stream_seed(config, step));
    rec.mean_is_ratio = mean_importance_ratio(policy, reference, dataset);
    trace.records.push_back(rec);
  };

  record(0);
  for (int k = 1; k <= config.steps; ++k) {
    const GradientVector g = obj.gradient(policy);
    for (double v : g)
      if (!std::isfinite(v))
        throw std::runtime_error("train: non-finite gradient at step " + std::to_string(k) +
                                 " (method " + to_string(config.method) + ")");
    for (std::size_t i = 0; i < g.size(); ++i) policy.logits().v[i] -= config.learning_rate * g[i];
    if (k % config.record_every == 0 || k == config.steps) record(k);
  }
  trace.final_policy = policy;
  return trace;
}

std::vector<TrainTrace> sweep(const TabularPolicy& reference, const GoldenReward& golden,
                              const PreferenceDataset& dataset,
                              const std::vector<TrainMethod>& methods,
                              const std::vector<double>& betas, const std::vector<RngSeed>& seeds,
                              const TrainConfig& base, int jobs) {
  if (methods.empty() || betas.empty() || seeds.empty())
    throw std::invalid_argument("sweep: empty grid");
  if (jobs < 1) jobs = 1;
  struct Cell {
    TrainMethod method;
    double beta;
    RngSeed seed;
  };
  std::vector<Cell> cells;
  for (TrainMethod m : methods)
    for (double b : betas)
      for (RngSeed s : seeds) cells.push_back({m, b, s});

  std::vector<TrainTrace> traces(cells.size());
  std::atomic<std::size_t> next{0};
  std::exception_ptr first_error;
  std::mutex error_mutex;
  auto worker = [&]() {
    for (;;) {
      const std::size_t i = next.fetch_add(1);
      if (i >= cells.size()) return;
      try {
        TrainConfig cfg = base;
        cfg.method = cells[i].method;
        cfg.daa.beta = cells[i].beta;
        cfg.daa.loss = canonical_loss_kind(cells[i].method, base.daa.loss);
        cfg.seed = cells[i].seed;
        traces[i] = train(dataset, reference, golden, cfg);
      } catch (...) {
        std::lock_guard<std::mutex> lock(error_mutex);
        if (!first_error) {
          try {
            std::throw_with_nested(std::runtime_error(
                "sweep: cell failed (method " + to_string(cells[i].method) + ", beta " +
                std::to_string(cells[i].beta) + ", seed " + std::to_string(cells[i].seed) + ")"));
          } catch (...) {
            first_error = std::current_exception();
          }
        }
      }
    }
  };
  if (jobs == 1) {
    worker();
  } else {
    std::vector<std::thread> pool;
    const int n = std::min<int>(jobs, static_cast<int>(cells.size()));
    pool.reserve(n);
    for (int t = 0; t < n; ++t) pool.emplace_back(worker);
    for (std::thread& t : pool) t.join();
  }
  if (first_error) std::rethrow_exception(first_error);
  return traces;
}

}  // namespace dalab
