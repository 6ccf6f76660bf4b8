#pragma once

#include <json.hpp>

#include "dalab/core.hpp"
#include "dalab/diagnostics.hpp"
#include "dalab/gauss_demo.hpp"
#include "dalab/trainer.hpp"

namespace dalab {

using Json = nlohmann::json;

// Policies: {"logits": [[...]]}, rewards: {"rewards": [[...]]}, datasets:
// {"pairs": [{"x":i,"w":j,"l":k}, ...], "seed": n}. Row-major, prompts
// outermost.
Json to_json(const TabularPolicy& policy);
TabularPolicy policy_from_json(const Json& j);

Json to_json(const GoldenReward& reward);
GoldenReward reward_from_json(const Json& j);

Json to_json(const PreferenceDataset& dataset);
PreferenceDataset dataset_from_json(const Json& j);

Json to_json(const TrainConfig& config);
TrainConfig train_config_from_json(const Json& j);

Json to_json(const TrainTrace& trace);

// Trace records CSV: step,loss,sqrt_kl,win_rate,mean_is_ratio plus the
// constant method/beta/seed columns.
std::string trace_records_csv(const TrainTrace& trace);
std::string combined_traces_csv(const std::vector<TrainTrace>& traces);

// Diagnostics rows CSV: beta,cos_kl_mu,cos_kl_mu_is,mean_is_ratio,kl.
std::string diagnostics_csv(const std::vector<DiagnosticsReport>& reports);

Json to_json(const DemoResult& result);
std::string demo_grid_csv(const DemoResult& result);

}  // namespace dalab
