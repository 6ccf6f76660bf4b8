#include "dalab/verify.hpp"

#include <cmath>
#include <functional>

#include "dalab/bandit.hpp"
#include "dalab/diagnostics.hpp"
#include "dalab/trainer.hpp"

namespace dalab {

namespace {

struct Instance {
  TabularPolicy policy;
  TabularPolicy reference;
  GoldenReward golden;
  PreferenceDataset dataset;
};

Instance make_instance(RngSeed seed, int max_prompts, int max_responses) {
  Rng shape_rng(derive_seed(seed, 0x01));
  const int P = 2 + shape_rng.uniform_index(max_prompts - 1);
  const int R = 2 + shape_rng.uniform_index(max_responses - 1);
  const FiniteDomain domain(std::max(P, 2), std::max(R, 2));
  Instance inst{random_tabular_policy(domain, derive_seed(seed, 0x02)),
                random_tabular_policy(domain, derive_seed(seed, 0x03)),
                random_golden_reward(domain, derive_seed(seed, 0x04)),
                {}};
  inst.dataset =
      sample_preference_dataset(inst.reference, inst.golden, 6, derive_seed(seed, 0x05));
  return inst;
}

// Central finite differences over all logits.
GradientVector finite_difference(const std::function<double(const TabularPolicy&)>& fn,
                                 const TabularPolicy& at, double h) {
  TabularPolicy probe = at;
  GradientVector g(at.logits().size());
  for (std::size_t i = 0; i < g.size(); ++i) {
    const double saved = probe.logits().v[i];
    probe.logits().v[i] = saved + h;
    const double hi = fn(probe);
    probe.logits().v[i] = saved - h;
    const double lo = fn(probe);
    probe.logits().v[i] = saved;
    g[i] = (hi - lo) / (2.0 * h);
  }
  return g;
}

double relative_gradient_error(const GradientVector& analytic, const GradientVector& fd) {
  GradientVector diff(analytic.size());
  for (std::size_t i = 0; i < diff.size(); ++i) diff[i] = analytic[i] - fd[i];
  const double scale = std::max({norm(analytic), norm(fd), 1e-300});
  return norm(diff) / scale;
}

}  // namespace

VerifyReport run_verification(const VerifyConfig& config) {
  VerifyReport report;
  auto add_check = [&report](const std::string& name, double max_error, double tolerance) {
    report.checks.push_back({name, max_error, tolerance, max_error <= tolerance});
  };

  // Exact value identity between the importance-sampled and online
  // objectives, both loss kinds.
  for (LossKind kind : {LossKind::logistic, LossKind::squared}) {
    double worst = 0.0;
    for (int i = 0; i < config.instances; ++i) {
      const Instance inst =
          make_instance(derive_seed(config.seed, 0x10, i), config.max_prompts, config.max_responses);
      const DAAConfig cfg{kind, 0.5};
      const double a = is_daa_loss_exact(inst.policy, inst.reference, cfg);
      const double b = online_daa_loss_exact(inst.policy, inst.reference, cfg);
      worst = std::max(worst, std::abs(a - b));
    }
    add_check(std::string("theorem1_value_") + to_string(kind), worst, 1e-12);
  }

  // Gradient identity: the untruncated importance-sampled gradient of the
  // weighted squared loss equals the KL gradient.
  {
    double worst = 0.0;
    for (int i = 0; i < config.instances; ++i) {
      const Instance inst =
          make_instance(derive_seed(config.seed, 0x20, i), config.max_prompts, config.max_responses);
      const GradientVector g_is =
          grad_mu_is_exact(inst.policy, inst.reference, TruncationConfig{});
      const GradientVector g_kl = grad_kl_exact(inst.policy, inst.reference);
      worst = std::max(worst, max_abs_diff(g_is, g_kl));
    }
    add_check("theorem1_gradient", worst, 1e-10);
  }

  // Offline decomposition: both sides enumerated independently.
  {
    double worst = 0.0;
    for (int i = 0; i < config.instances; ++i) {
      const Instance inst =
          make_instance(derive_seed(config.seed, 0x30, i), config.max_prompts, config.max_responses);
      const OfflineGradientPair pair = grad_mu_offline_exact(inst.policy, inst.reference);
      worst = std::max(worst, max_abs_diff(pair.lhs, pair.rhs));
    }
    add_check("offline_decomposition", worst, 1e-10);
  }

  // Online score-function route equals the closed-form KL gradient.
  {
    double worst = 0.0;
    for (int i = 0; i < config.instances; ++i) {
      const Instance inst =
          make_instance(derive_seed(config.seed, 0x40, i), config.max_prompts, config.max_responses);
      GradientVector g_online = grad_mu_online_exact(inst.policy, inst.reference);
      if (config.corrupt_gradient && i == 0) g_online[0] += 1e-3;
      const GradientVector g_kl = grad_kl_exact(inst.policy, inst.reference);
      worst = std::max(worst, max_abs_diff(g_online, g_kl));
    }
    add_check("online_gradient_identity", worst, 1e-12);
  }

  // Finite-difference spot checks of every analytic gradient.
  {
    const double h = 1e-5;
    struct FdCase {
      std::string name;
      std::function<double(const Instance&, const TabularPolicy&)> value;
      std::function<GradientVector(const Instance&, const TabularPolicy&)> gradient;
    };
    const DAAConfig logistic_cfg{LossKind::logistic, 0.5};
    const DAAConfig squared_cfg{LossKind::squared, 0.5};
    const TruncationConfig upper{TruncationMode::upper, 2.0};
    const std::vector<FdCase> cases = {
        {"fd_grad_kl",
         [](const Instance& inst, const TabularPolicy& pi) { return kl_exact(pi, inst.reference); },
         [](const Instance& inst, const TabularPolicy& pi) {
           return grad_kl_exact(pi, inst.reference);
         }},
        {"fd_grad_mu_offline",
         [](const Instance& inst, const TabularPolicy& pi) {
           // enumerated offline objective: half the reference-pair mean of rho^2
           const int P = pi.num_prompts();
           const int R = pi.num_responses();
           double acc = 0.0;
           for (int x = 0; x < P; ++x) {
             const std::vector<double> rp = inst.reference.prob_row(x);
             const std::vector<double> lp = pi.log_prob_row(x);
             const std::vector<double> lq = inst.reference.log_prob_row(x);
             for (int y1 = 0; y1 < R; ++y1)
               for (int y2 = 0; y2 < R; ++y2) {
                 const double r = (lp[y1] - lq[y1]) - (lp[y2] - lq[y2]);
                 acc += rp[y1] * rp[y2] * 0.5 * r * r;
               }
           }
           return acc / P;
         },
         [](const Instance& inst, const TabularPolicy& pi) {
           return grad_mu_offline_exact(pi, inst.reference).lhs;
         }},
        {"fd_dpo",
         [logistic_cfg](const Instance& inst, const TabularPolicy& pi) {
           return daa_loss(inst.dataset, pi, inst.reference, logistic_cfg);
         },
         [logistic_cfg](const Instance& inst, const TabularPolicy& pi) {
           return make_objective(TrainMethod::dpo, inst.dataset, inst.reference, logistic_cfg, {},
                                 0.0)
               .gradient(pi);
         }},
        {"fd_ipo",
         [squared_cfg](const Instance& inst, const TabularPolicy& pi) {
           return daa_loss(inst.dataset, pi, inst.reference, squared_cfg);
         },
         [squared_cfg](const Instance& inst, const TabularPolicy& pi) {
           return make_objective(TrainMethod::ipo, inst.dataset, inst.reference, squared_cfg, {},
                                 0.0)
               .gradient(pi);
         }},
        {"fd_is_dpo",
         // the weighted update differentiates the local objective with the
         // importance weights frozen at the evaluation point
         [logistic_cfg, upper](const Instance& inst, const TabularPolicy& pi) {
           double acc = 0.0;
           for (const PreferencePair& p : inst.dataset.pairs) {
             const double w = importance_weight(inst.policy, inst.reference, p, upper);
             acc += w * f_eval(logistic_cfg.loss,
                               logistic_cfg.beta * rho(pi, inst.reference, p));
           }
           return acc / static_cast<double>(inst.dataset.pairs.size());
         },
         [logistic_cfg, upper](const Instance& inst, const TabularPolicy& pi) {
           return make_objective(TrainMethod::is_dpo, inst.dataset, inst.reference, logistic_cfg,
                                 upper, 0.0)
               .gradient(pi);
         }},
        {"fd_rpo",
         [logistic_cfg](const Instance& inst, const TabularPolicy& pi) {
           return rpo_loss(inst.dataset, pi, inst.reference, logistic_cfg, 1.0);
         },
         [logistic_cfg](const Instance& inst, const TabularPolicy& pi) {
           return make_objective(TrainMethod::rpo, inst.dataset, inst.reference, logistic_cfg, {},
                                 1.0)
               .gradient(pi);
         }},
        {"fd_online_dpo",
         [logistic_cfg](const Instance& inst, const TabularPolicy& pi) {
           return online_daa_loss_exact(pi, inst.reference, logistic_cfg);
         },
         [logistic_cfg](const Instance& inst, const TabularPolicy& pi) {
           return make_objective(TrainMethod::online_dpo_exact, inst.dataset, inst.reference,
                                 logistic_cfg, {}, 0.0)
               .gradient(pi);
         }},
    };
    for (const FdCase& fd_case : cases) {
      double worst = 0.0;
      for (int i = 0; i < config.fd_instances; ++i) {
        const Instance inst = make_instance(derive_seed(config.seed, 0x50, i),
                                            std::min(config.max_prompts, 4),
                                            std::min(config.max_responses, 8));
        const GradientVector analytic = fd_case.gradient(inst, inst.policy);
        const GradientVector fd = finite_difference(
            [&](const TabularPolicy& pi) { return fd_case.value(inst, pi); }, inst.policy, h);
        worst = std::max(worst, relative_gradient_error(analytic, fd));
      }
      add_check(fd_case.name, worst, 1e-5);
    }
  }

  // Sampled-KL estimator bias, measured by enumeration; reported only.
  for (int i = 0; i < config.kl_bias_instances; ++i) {
    const Instance inst =
        make_instance(derive_seed(config.seed, 0x60, i), config.max_prompts, config.max_responses);
    KlBiasRow row;
    row.kl = kl_exact(inst.policy, inst.reference);
    row.estimator_expectation = kl_estimator_expectation(inst.policy, inst.reference);
    row.bias = row.estimator_expectation - row.kl;
    report.kl_estimator_bias.push_back(row);
  }

  report.all_pass = true;
  for (const VerifyCheck& c : report.checks) report.all_pass = report.all_pass && c.pass;
  return report;
}

Json to_json(const VerifyReport& report) {
  Json checks = Json::array();
  for (const VerifyCheck& c : report.checks)
    checks.push_back(Json{{"name", c.name},
                          {"max_error", c.max_error},
                          {"tolerance", c.tolerance},
                          {"pass", c.pass}});
  Json bias = Json::array();
  for (const KlBiasRow& r : report.kl_estimator_bias)
    bias.push_back(Json{{"kl_exact", r.kl},
                        {"estimator_expectation", r.estimator_expectation},
                        {"bias", r.bias}});
  return Json{{"schema_version", 1},
              {"checks", std::move(checks)},
              {"kl_estimator_bias", std::move(bias)},
              {"kl_estimator_note",
               "the sampled estimator averages log(pi/ref) + (pi/ref - 1) under pi; its exact "
               "expectation equals kl plus the chi-square term E_pi[pi/ref] - 1, so the bias "
               "reported here is positive and is not thresholded"},
              {"all_pass", report.all_pass}};
}

}  // namespace dalab
