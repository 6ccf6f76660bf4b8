#include "dalab/serialization.hpp"

#include <stdexcept>

#include "dalab/io.hpp"

namespace dalab {

namespace {

Json table_to_json(const Table& t) {
  Json rows = Json::array();
  for (int r = 0; r < t.rows; ++r) {
    Json row = Json::array();
    for (int c = 0; c < t.cols; ++c) row.push_back(t.at(r, c));
    rows.push_back(std::move(row));
  }
  return rows;
}

Table table_from_json(const Json& rows) {
  if (!rows.is_array() || rows.empty()) throw std::invalid_argument("expected non-empty matrix");
  const int r = static_cast<int>(rows.size());
  const int c = static_cast<int>(rows[0].size());
  Table t(r, c);
  for (int i = 0; i < r; ++i) {
    if (static_cast<int>(rows[i].size()) != c)
      throw std::invalid_argument("ragged matrix rows");
    for (int j = 0; j < c; ++j) t.at(i, j) = rows[i][j].get<double>();
  }
  return t;
}

}  // namespace

Json to_json(const TabularPolicy& policy) { return Json{{"logits", table_to_json(policy.logits())}}; }

TabularPolicy policy_from_json(const Json& j) {
  return TabularPolicy(table_from_json(j.at("logits")));
}

Json to_json(const GoldenReward& reward) { return Json{{"rewards", table_to_json(reward.rewards)}}; }

GoldenReward reward_from_json(const Json& j) {
  return GoldenReward(table_from_json(j.at("rewards")));
}

Json to_json(const PreferenceDataset& dataset) {
  Json pairs = Json::array();
  for (const PreferencePair& p : dataset.pairs)
    pairs.push_back(Json{{"x", p.prompt}, {"w", p.winner}, {"l", p.loser}});
  return Json{{"pairs", std::move(pairs)}, {"seed", dataset.provenance.seed}};
}

PreferenceDataset dataset_from_json(const Json& j) {
  PreferenceDataset out;
  out.provenance.seed = j.value("seed", static_cast<RngSeed>(0));
  for (const Json& p : j.at("pairs"))
    out.pairs.push_back({p.at("x").get<int>(), p.at("w").get<int>(), p.at("l").get<int>()});
  if (out.pairs.empty()) throw std::invalid_argument("dataset_from_json: empty pairs");
  return out;
}

Json to_json(const TrainConfig& config) {
  return Json{{"method", to_string(config.method)},
              {"loss", to_string(config.daa.loss)},
              {"beta", config.daa.beta},
              {"trunc_mode", to_string(config.trunc.mode)},
              {"epsilon", config.trunc.epsilon},
              {"learning_rate", config.learning_rate},
              {"steps", config.steps},
              {"record_every", config.record_every},
              {"seed", config.seed},
              {"sft_weight", config.sft_weight}};
}

TrainConfig train_config_from_json(const Json& j) {
  TrainConfig cfg;
  cfg.method = train_method_from_string(j.at("method").get<std::string>());
  if (j.contains("loss")) cfg.daa.loss = loss_kind_from_string(j.at("loss").get<std::string>());
  cfg.daa.beta = j.value("beta", cfg.daa.beta);
  if (j.contains("trunc_mode"))
    cfg.trunc.mode = truncation_mode_from_string(j.at("trunc_mode").get<std::string>());
  cfg.trunc.epsilon = j.value("epsilon", cfg.trunc.epsilon);
  cfg.learning_rate = j.value("learning_rate", cfg.learning_rate);
  cfg.steps = j.value("steps", cfg.steps);
  cfg.record_every = j.value("record_every", cfg.record_every);
  cfg.seed = j.value("seed", cfg.seed);
  cfg.sft_weight = j.value("sft_weight", cfg.sft_weight);
  return cfg;
}

Json to_json(const TrainTrace& trace) {
  Json records = Json::array();
  for (const MetricsRecord& r : trace.records)
    records.push_back(Json{{"step", r.step},
                           {"loss", r.loss},
                           {"sqrt_kl", r.sqrt_kl},
                           {"win_rate", r.win_rate},
                           {"mean_is_ratio", r.mean_is_ratio}});
  return Json{{"config", to_json(trace.config)},
              {"records", std::move(records)},
              {"final_policy", to_json(trace.final_policy)}};
}

namespace {

const std::vector<std::string> kTraceHeader = {"step",         "loss",   "sqrt_kl", "win_rate",
                                               "mean_is_ratio", "method", "beta",    "seed"};

void append_trace_rows(CsvBuilder& csv, const TrainTrace& trace) {
  for (const MetricsRecord& r : trace.records) {
    csv.add_cell(static_cast<double>(r.step));
    csv.add_cell(r.loss);
    csv.add_cell(r.sqrt_kl);
    csv.add_cell(r.win_rate);
    csv.add_cell(r.mean_is_ratio);
    csv.add_cell(to_string(trace.config.method));
    csv.add_cell(trace.config.daa.beta);
    csv.add_cell(std::to_string(trace.config.seed));
    csv.end_row();
  }
}

}  // namespace

std::string trace_records_csv(const TrainTrace& trace) {
  CsvBuilder csv(kTraceHeader);
  append_trace_rows(csv, trace);
  return csv.str();
}

std::string combined_traces_csv(const std::vector<TrainTrace>& traces) {
  CsvBuilder csv(kTraceHeader);
  for (const TrainTrace& t : traces) append_trace_rows(csv, t);
  return csv.str();
}

std::string diagnostics_csv(const std::vector<DiagnosticsReport>& reports) {
  CsvBuilder csv({"beta", "cos_kl_mu", "cos_kl_mu_is", "mean_is_ratio", "kl"});
  for (const DiagnosticsReport& r : reports) {
    csv.add_cell(r.beta);
    csv.add_cell(r.cos_kl_mu);
    csv.add_cell(r.cos_kl_mu_is);
    csv.add_cell(r.mean_is_ratio);
    csv.add_cell(r.kl);
    csv.end_row();
  }
  return csv.str();
}

Json to_json(const DemoResult& result) {
  return Json{{"regime", to_string(result.regime)},
              {"final_policy",
               Json{{"mean", result.final_policy.mean}, {"log_std", result.final_policy.log_std}}},
              {"ref_density_at_mean", result.ref_density_at_mean},
              {"mc_kl_to_ref", result.mc_kl_to_ref},
              {"grid", Json{{"nx", result.grid.nx},
                            {"ny", result.grid.ny},
                            {"x_min", result.grid.x_min},
                            {"x_max", result.grid.x_max},
                            {"y_min", result.grid.y_min},
                            {"y_max", result.grid.y_max}}},
              {"ref_density", result.ref_density},
              {"policy_density", result.policy_density}};
}

std::string demo_grid_csv(const DemoResult& result) {
  CsvBuilder csv({"x", "y", "ref_density", "policy_density"});
  const DemoGrid& g = result.grid;
  for (int ix = 0; ix < g.nx; ++ix) {
    const double x = g.x_min + (g.x_max - g.x_min) * ix / (g.nx - 1);
    for (int iy = 0; iy < g.ny; ++iy) {
      const double y = g.y_min + (g.y_max - g.y_min) * iy / (g.ny - 1);
      const std::size_t idx = static_cast<std::size_t>(ix) * g.ny + iy;
      csv.add_cell(x);
      csv.add_cell(y);
      csv.add_cell(result.ref_density[idx]);
      csv.add_cell(result.policy_density[idx]);
      csv.end_row();
    }
  }
  return csv.str();
}

}  // namespace dalab
