#pragma once

#include <functional>
#include <string>
#include <vector>

#include "dalab/core.hpp"
#include "dalab/diagnostics.hpp"
#include "dalab/objectives.hpp"

namespace dalab {

// Training objectives. The method fixes the objective structure and, except
// for rpo (loss-generic), the loss kind: dpo / is_dpo / online_dpo_exact are
// logistic, ipo / is_ipo are squared.
enum class TrainMethod { dpo, ipo, is_dpo, is_ipo, rpo, online_dpo_exact };

std::string to_string(TrainMethod method);
TrainMethod train_method_from_string(const std::string& s);
LossKind canonical_loss_kind(TrainMethod method, LossKind rpo_loss_kind);

struct TrainConfig {
  TrainMethod method = TrainMethod::dpo;
  DAAConfig daa;
  TruncationConfig trunc;
  double learning_rate = 1.0;
  int steps = 1000;
  int record_every = 25;
  RngSeed seed = 0;
  double sft_weight = 1.0;  // rpo only
};

struct MetricsRecord {
  int step = 0;
  double loss = 0.0;
  double sqrt_kl = 0.0;
  double win_rate = 0.0;
  double mean_is_ratio = 1.0;
};

struct TrainTrace {
  TrainConfig config;
  std::vector<MetricsRecord> records;
  TabularPolicy final_policy;
};

// Value and analytic gradient of a training objective as plain functions of
// the policy. For the unweighted methods the gradient is the exact derivative
// of value(). For the importance-sampled methods the weights are constants
// under the gradient (the update is weighted, not differentiated through), so
// the gradient is the exact derivative of the local objective with weights
// frozen at the evaluation point; that surrogate's value coincides with
// value() there.
struct Objective {
  std::function<double(const TabularPolicy&)> value;
  std::function<GradientVector(const TabularPolicy&)> gradient;
};

Objective make_objective(TrainMethod method, const PreferenceDataset& dataset,
                         const TabularPolicy& reference, const DAAConfig& daa,
                         const TruncationConfig& trunc, double sft_weight);

// Full-batch gradient descent from pi = reference on the selected objective,
// recording metrics every record_every steps (step 0 always, final step
// always). Deterministic given config.seed.
TrainTrace train(const PreferenceDataset& dataset, const TabularPolicy& reference,
                 const GoldenReward& golden, const TrainConfig& config);

// For every dataset pair, draws samples_per_prompt responses from the policy
// and scores each against the pair's recorded winner under the golden
// reward: win 1, tie 0.5, loss 0; averaged over all comparisons.
double win_rate(const TabularPolicy& policy, const PreferenceDataset& dataset,
                const GoldenReward& golden, int samples_per_prompt, RngSeed seed);

// Cartesian product of methods x betas x seeds over a shared dataset. Cell
// order is method-major, then beta, then seed. Each cell's sampling streams
// are derived from (seed, method, beta), so editing one grid never perturbs
// the other cells. jobs > 1 runs cells concurrently.
std::vector<TrainTrace> sweep(const TabularPolicy& reference, const GoldenReward& golden,
                              const PreferenceDataset& dataset,
                              const std::vector<TrainMethod>& methods,
                              const std::vector<double>& betas, const std::vector<RngSeed>& seeds,
                              const TrainConfig& base, int jobs = 1);

}  // namespace dalab
