// Command-line front end: verify / bandit / gauss-demo / sweep.
//
// Every command takes an optional JSON config (--config; explicit flags win),
// derives all randomness from a single --seed, writes outputs atomically and
// drops a manifest alongside them. Re-running with the same effective config
// reproduces the data files byte for byte. Exit codes: 0 success, 1 check or
// run failure, 2 usage/config error.

#include <CLI11.hpp>

#include <algorithm>
#include <chrono>
#include <cstdint>
#include <filesystem>
#include <iostream>
#include <string>
#include <vector>

#include "dalab/bandit.hpp"
#include "dalab/gauss_demo.hpp"
#include "dalab/io.hpp"
#include "dalab/serialization.hpp"
#include "dalab/trainer.hpp"
#include "dalab/verify.hpp"

namespace {

using dalab::Json;

constexpr const char* kArtifactVersion = "0.1.0";
constexpr int kExitOk = 0;
constexpr int kExitCheckFailure = 1;
constexpr int kExitUsage = 2;

struct CommonOptions {
  std::string config_path;
  std::string out_dir = ".";
  std::uint64_t seed = 12345;
  std::string format = "csv";
  int jobs = 1;
  bool seed_set = false;
  bool format_set = false;
  bool jobs_set = false;
  bool out_dir_set = false;
};

void add_common_flags(CLI::App* cmd, CommonOptions& opts) {
  cmd->add_option("--config", opts.config_path, "JSON config file (flags override it)");
  cmd->add_option("--out-dir", opts.out_dir, "output directory")
      ->each([&](const std::string&) { opts.out_dir_set = true; });
  cmd->add_option("--seed", opts.seed, "top-level seed")
      ->each([&](const std::string&) { opts.seed_set = true; });
  cmd->add_option("--format", opts.format, "csv or json")
      ->each([&](const std::string&) { opts.format_set = true; });
  cmd->add_option("--jobs", opts.jobs, "max concurrent run cells")
      ->each([&](const std::string&) { opts.jobs_set = true; });
}

// Loads --config if given; accepts either a bare config object or a manifest
// (containing a "config" key) so that manifests replay directly.
Json load_config(const CommonOptions& opts) {
  if (opts.config_path.empty()) return Json::object();
  Json j = Json::parse(dalab::read_file(opts.config_path));
  if (j.contains("schema_version") && j.contains("config")) return j.at("config");
  return j;
}

// Common fields: file config first, then explicit flags.
void merge_common(const Json& cfg, CommonOptions& opts) {
  if (!opts.out_dir_set && cfg.contains("out_dir")) opts.out_dir = cfg.at("out_dir");
  if (!opts.seed_set && cfg.contains("seed")) opts.seed = cfg.at("seed");
  if (!opts.format_set && cfg.contains("format")) opts.format = cfg.at("format");
  if (!opts.jobs_set && cfg.contains("jobs")) opts.jobs = cfg.at("jobs");
}

void validate_common(const CommonOptions& opts) {
  if (opts.format != "csv" && opts.format != "json")
    throw std::invalid_argument("format must be csv or json");
  if (opts.jobs < 1) throw std::invalid_argument("jobs must be >= 1");
  std::filesystem::create_directories(opts.out_dir);
  // probe writability before any compute
  const auto probe = std::filesystem::path(opts.out_dir) / ".dalab_probe";
  dalab::atomic_write_file(probe, "");
  std::filesystem::remove(probe);
}

void write_manifest(const std::string& command, const CommonOptions& opts, const Json& config,
                    const std::vector<std::string>& outputs, double duration_seconds) {
  Json manifest{{"schema_version", 1},
                {"artifact_version", kArtifactVersion},
                {"command", command},
                {"config", config},
                {"seed", opts.seed},
                {"duration_seconds", duration_seconds},
                {"outputs", outputs}};
  dalab::atomic_write_file(std::filesystem::path(opts.out_dir) / (command + "_manifest.json"),
                           manifest.dump(2) + "\n");
}

class Stopwatch {
 public:
  double seconds() const {
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - start_).count();
  }

 private:
  std::chrono::steady_clock::time_point start_ = std::chrono::steady_clock::now();
};

// ---------------------------------------------------------------------------
// verify
// ---------------------------------------------------------------------------

int run_verify(CommonOptions opts, bool corrupt_flag, int instances_flag) {
  const Json file_cfg = load_config(opts);
  merge_common(file_cfg, opts);

  dalab::VerifyConfig vcfg;
  vcfg.instances = file_cfg.value("instances", vcfg.instances);
  if (instances_flag > 0) vcfg.instances = instances_flag;
  vcfg.max_prompts = file_cfg.value("max_prompts", vcfg.max_prompts);
  vcfg.max_responses = file_cfg.value("max_responses", vcfg.max_responses);
  vcfg.fd_instances = file_cfg.value("fd_instances", vcfg.fd_instances);
  vcfg.kl_bias_instances = file_cfg.value("kl_bias_instances", vcfg.kl_bias_instances);
  vcfg.seed = opts.seed;
  vcfg.corrupt_gradient = file_cfg.value("corrupt_gradient", false) || corrupt_flag;
  if (vcfg.instances < 1 || vcfg.max_prompts < 2 || vcfg.max_responses < 2 ||
      vcfg.fd_instances < 1 || vcfg.kl_bias_instances < 1)
    throw std::invalid_argument("verify: counts must be positive (domains >= 2)");
  validate_common(opts);

  const Stopwatch timer;
  const dalab::VerifyReport report = dalab::run_verification(vcfg);

  std::string first_failed;
  for (const dalab::VerifyCheck& c : report.checks) {
    std::cout << (c.pass ? "[PASS] " : "[FAIL] ") << c.name
              << " max_error=" << dalab::format_double(c.max_error)
              << " tolerance=" << dalab::format_double(c.tolerance) << "\n";
    if (!c.pass && first_failed.empty()) first_failed = c.name;
  }
  double worst_bias = 0.0;
  for (const dalab::KlBiasRow& row : report.kl_estimator_bias)
    worst_bias = std::max(worst_bias, row.bias);
  std::cout << "[INFO] kl_estimator_bias reported on " << report.kl_estimator_bias.size()
            << " instances, max bias " << dalab::format_double(worst_bias)
            << " (no threshold)\n";

  Json config_snapshot{{"instances", vcfg.instances},
                       {"max_prompts", vcfg.max_prompts},
                       {"max_responses", vcfg.max_responses},
                       {"fd_instances", vcfg.fd_instances},
                       {"kl_bias_instances", vcfg.kl_bias_instances},
                       {"corrupt_gradient", vcfg.corrupt_gradient},
                       {"seed", opts.seed},
                       {"out_dir", opts.out_dir}};
  const std::string report_name = "verify_report.json";
  dalab::atomic_write_file(std::filesystem::path(opts.out_dir) / report_name,
                           to_json(report).dump(2) + "\n");
  write_manifest("verify", opts, config_snapshot, {report_name}, timer.seconds());

  if (!report.all_pass) {
    std::cerr << "verify failed: " << first_failed << "\n";
    return kExitCheckFailure;
  }
  return kExitOk;
}

// ---------------------------------------------------------------------------
// bandit
// ---------------------------------------------------------------------------

int run_bandit(CommonOptions opts, std::vector<double> betas_flag) {
  const Json file_cfg = load_config(opts);
  merge_common(file_cfg, opts);

  std::vector<double> betas = dalab::log_spaced_betas(0.05, 1.0, 20);
  if (file_cfg.contains("betas")) betas = file_cfg.at("betas").get<std::vector<double>>();
  if (!betas_flag.empty()) betas = betas_flag;
  dalab::BanditDescentConfig descent;
  descent.learning_rate = file_cfg.value("descent_learning_rate", descent.learning_rate);
  descent.max_steps = file_cfg.value("descent_max_steps", descent.max_steps);
  descent.kl_tolerance = file_cfg.value("descent_kl_tolerance", descent.kl_tolerance);

  if (betas.empty()) throw std::invalid_argument("bandit: empty beta grid");
  for (double b : betas)
    if (!(b > 0.0)) throw std::invalid_argument("bandit: betas must be positive");
  if (!(descent.learning_rate > 0.0) || descent.max_steps < 1 || !(descent.kl_tolerance > 0.0))
    throw std::invalid_argument("bandit: bad descent settings");
  validate_common(opts);

  const Stopwatch timer;
  const dalab::BanditInstance instance;
  const auto reports = dalab::bandit_cosine_sweep(instance, betas, descent);

  std::vector<std::string> outputs;
  if (opts.format == "csv") {
    outputs.push_back("bandit.csv");
    dalab::atomic_write_file(std::filesystem::path(opts.out_dir) / outputs.back(),
                             dalab::diagnostics_csv(reports));
  } else {
    outputs.push_back("bandit.json");
    Json rows = Json::array();
    for (const dalab::DiagnosticsReport& r : reports)
      rows.push_back(Json{{"beta", r.beta},
                          {"cos_kl_mu", r.cos_kl_mu},
                          {"cos_kl_mu_is", r.cos_kl_mu_is},
                          {"mean_is_ratio", r.mean_is_ratio},
                          {"kl", r.kl},
                          {"gradients_degenerate", r.gradients_degenerate}});
    dalab::atomic_write_file(std::filesystem::path(opts.out_dir) / outputs.back(),
                             rows.dump(2) + "\n");
  }

  Json config_snapshot{{"betas", betas},
                       {"descent_learning_rate", descent.learning_rate},
                       {"descent_max_steps", descent.max_steps},
                       {"descent_kl_tolerance", descent.kl_tolerance},
                       {"seed", opts.seed},
                       {"format", opts.format},
                       {"out_dir", opts.out_dir}};
  write_manifest("bandit", opts, config_snapshot, outputs, timer.seconds());
  std::cout << "bandit sweep: " << reports.size() << " rows -> " << outputs.front() << "\n";
  return kExitOk;
}

// ---------------------------------------------------------------------------
// gauss-demo
// ---------------------------------------------------------------------------

int run_gauss_demo(CommonOptions opts, std::vector<std::string> regimes_flag) {
  const Json file_cfg = load_config(opts);
  merge_common(file_cfg, opts);

  std::vector<std::string> regime_names = {"on_policy", "off_policy", "off_policy_is"};
  if (file_cfg.contains("regimes"))
    regime_names = file_cfg.at("regimes").get<std::vector<std::string>>();
  if (!regimes_flag.empty()) regime_names = regimes_flag;

  dalab::DemoConfig dcfg;
  dcfg.mc_samples = file_cfg.value("mc_samples", dcfg.mc_samples);
  dcfg.steps = file_cfg.value("steps", dcfg.steps);
  dcfg.learning_rate = file_cfg.value("learning_rate", dcfg.learning_rate);
  dcfg.kl_samples = file_cfg.value("kl_samples", dcfg.kl_samples);
  if (file_cfg.contains("trunc_mode"))
    dcfg.trunc.mode = dalab::truncation_mode_from_string(file_cfg.at("trunc_mode"));
  dcfg.trunc.epsilon = file_cfg.value("epsilon", dcfg.trunc.epsilon);
  dcfg.grid.nx = file_cfg.value("grid_nx", dcfg.grid.nx);
  dcfg.grid.ny = file_cfg.value("grid_ny", dcfg.grid.ny);
  dcfg.grid.x_min = file_cfg.value("grid_x_min", dcfg.grid.x_min);
  dcfg.grid.x_max = file_cfg.value("grid_x_max", dcfg.grid.x_max);
  dcfg.grid.y_min = file_cfg.value("grid_y_min", dcfg.grid.y_min);
  dcfg.grid.y_max = file_cfg.value("grid_y_max", dcfg.grid.y_max);

  std::vector<dalab::DemoRegime> regimes;
  for (const std::string& name : regime_names)
    regimes.push_back(dalab::demo_regime_from_string(name));
  if (regimes.empty()) throw std::invalid_argument("gauss-demo: no regimes selected");
  if (dcfg.mc_samples < 2 || dcfg.steps < 0 || !(dcfg.learning_rate > 0.0))
    throw std::invalid_argument("gauss-demo: bad settings");
  validate_common(opts);

  const Stopwatch timer;
  const dalab::GaussianMixtureRef ref = dalab::default_two_mode_mixture();
  const dalab::DiagonalGaussianPolicy init;

  std::vector<std::string> outputs;
  for (dalab::DemoRegime regime : regimes) {
    const dalab::DemoResult result = dalab::gaussian_demo(ref, init, regime, dcfg, opts.seed);
    const std::string stem = "gauss_demo_" + to_string(regime);
    outputs.push_back(stem + ".json");
    dalab::atomic_write_file(std::filesystem::path(opts.out_dir) / outputs.back(),
                             to_json(result).dump() + "\n");
    outputs.push_back(stem + "_grid.csv");
    dalab::atomic_write_file(std::filesystem::path(opts.out_dir) / outputs.back(),
                             dalab::demo_grid_csv(result));
    std::cout << to_string(regime)
              << ": ref_density_at_mean=" << dalab::format_double(result.ref_density_at_mean)
              << " mc_kl_to_ref=" << dalab::format_double(result.mc_kl_to_ref) << "\n";
  }

  Json config_snapshot{{"regimes", regime_names},
                       {"mc_samples", dcfg.mc_samples},
                       {"steps", dcfg.steps},
                       {"learning_rate", dcfg.learning_rate},
                       {"kl_samples", dcfg.kl_samples},
                       {"trunc_mode", to_string(dcfg.trunc.mode)},
                       {"epsilon", dcfg.trunc.epsilon},
                       {"grid_nx", dcfg.grid.nx},
                       {"grid_ny", dcfg.grid.ny},
                       {"grid_x_min", dcfg.grid.x_min},
                       {"grid_x_max", dcfg.grid.x_max},
                       {"grid_y_min", dcfg.grid.y_min},
                       {"grid_y_max", dcfg.grid.y_max},
                       {"seed", opts.seed},
                       {"out_dir", opts.out_dir}};
  write_manifest("gauss_demo", opts, config_snapshot, outputs, timer.seconds());
  return kExitOk;
}

// ---------------------------------------------------------------------------
// sweep
// ---------------------------------------------------------------------------

// Calibrated for the default 32x64 instance at beta 0.01; the rpo sft term
// has a much larger curvature than the beta-scaled preference terms.
double default_learning_rate(dalab::TrainMethod method) {
  return method == dalab::TrainMethod::rpo ? 100.0 : 1600.0;
}

int run_sweep(CommonOptions opts, std::vector<std::string> methods_flag,
              std::vector<double> betas_flag, std::vector<std::uint64_t> seeds_flag,
              double lr_flag, int steps_flag) {
  const Json file_cfg = load_config(opts);
  merge_common(file_cfg, opts);

  std::vector<std::string> method_names = {"dpo", "ipo", "rpo", "is_dpo", "online_dpo_exact"};
  if (file_cfg.contains("methods"))
    method_names = file_cfg.at("methods").get<std::vector<std::string>>();
  if (!methods_flag.empty()) method_names = methods_flag;
  std::vector<double> betas = {0.01, 0.05, 0.1};
  if (file_cfg.contains("betas")) betas = file_cfg.at("betas").get<std::vector<double>>();
  if (!betas_flag.empty()) betas = betas_flag;
  std::vector<std::uint64_t> seeds = {1, 2, 3};
  if (file_cfg.contains("seeds")) seeds = file_cfg.at("seeds").get<std::vector<std::uint64_t>>();
  if (!seeds_flag.empty()) seeds = seeds_flag;

  const int num_prompts = file_cfg.value("num_prompts", 32);
  const int num_responses = file_cfg.value("num_responses", 64);
  const int pairs_per_prompt = file_cfg.value("pairs_per_prompt", 128);
  const int steps = steps_flag > 0 ? steps_flag : file_cfg.value("steps", 8000);
  const int record_every = file_cfg.value("record_every", std::max(1, std::min(200, steps / 10)));
  const double sft_weight = file_cfg.value("sft_weight", 1.0);
  const double learning_rate = lr_flag > 0.0 ? lr_flag : file_cfg.value("learning_rate", 0.0);
  dalab::TruncationConfig trunc{dalab::TruncationMode::upper, 0.05};
  if (file_cfg.contains("trunc_mode"))
    trunc.mode = dalab::truncation_mode_from_string(file_cfg.at("trunc_mode"));
  trunc.epsilon = file_cfg.value("epsilon", trunc.epsilon);

  std::vector<dalab::TrainMethod> methods;
  for (const std::string& name : method_names)
    methods.push_back(dalab::train_method_from_string(name));
  if (methods.empty() || betas.empty() || seeds.empty())
    throw std::invalid_argument("sweep: empty grid");
  for (double b : betas)
    if (!(b > 0.0)) throw std::invalid_argument("sweep: betas must be positive");
  if (num_prompts < 2 || num_responses < 2 || pairs_per_prompt < 1 || steps < 1 ||
      record_every < 1 || record_every > steps || sft_weight < 0.0)
    throw std::invalid_argument("sweep: bad instance or training settings");
  validate_common(opts);

  const Stopwatch timer;
  const dalab::FiniteDomain domain(num_prompts, num_responses);
  const dalab::TabularPolicy reference =
      dalab::random_tabular_policy(domain, dalab::derive_seed(opts.seed, 0xA1));
  const dalab::GoldenReward golden =
      dalab::random_golden_reward(domain, dalab::derive_seed(opts.seed, 0xA2));
  const dalab::PreferenceDataset dataset = dalab::sample_preference_dataset(
      reference, golden, pairs_per_prompt, dalab::derive_seed(opts.seed, 0xA3));

  // one train call per cell so that per-method learning-rate defaults apply
  std::vector<dalab::TrainTrace> traces;
  for (dalab::TrainMethod method : methods) {
    dalab::TrainConfig base;
    base.method = method;
    base.trunc = trunc;
    base.learning_rate = learning_rate > 0.0 ? learning_rate : default_learning_rate(method);
    base.steps = steps;
    base.record_every = record_every;
    base.sft_weight = sft_weight;
    std::vector<dalab::TrainTrace> part =
        dalab::sweep(reference, golden, dataset, {method}, betas, seeds, base, opts.jobs);
    for (auto& t : part) traces.push_back(std::move(t));
  }

  std::vector<std::string> outputs;
  for (const dalab::TrainTrace& trace : traces) {
    const std::string stem = "trace_" + to_string(trace.config.method) + "_beta" +
                             dalab::format_double(trace.config.daa.beta) + "_seed" +
                             std::to_string(trace.config.seed);
    if (opts.format == "csv") {
      outputs.push_back(stem + ".csv");
      dalab::atomic_write_file(std::filesystem::path(opts.out_dir) / outputs.back(),
                               dalab::trace_records_csv(trace));
    } else {
      outputs.push_back(stem + ".json");
      dalab::atomic_write_file(std::filesystem::path(opts.out_dir) / outputs.back(),
                               to_json(trace).dump() + "\n");
    }
  }
  outputs.push_back("combined.csv");
  dalab::atomic_write_file(std::filesystem::path(opts.out_dir) / outputs.back(),
                           dalab::combined_traces_csv(traces));

  Json config_snapshot{{"methods", method_names},
                       {"betas", betas},
                       {"seeds", seeds},
                       {"num_prompts", num_prompts},
                       {"num_responses", num_responses},
                       {"pairs_per_prompt", pairs_per_prompt},
                       {"steps", steps},
                       {"record_every", record_every},
                       {"learning_rate", learning_rate},
                       {"sft_weight", sft_weight},
                       {"trunc_mode", to_string(trunc.mode)},
                       {"epsilon", trunc.epsilon},
                       {"seed", opts.seed},
                       {"format", opts.format},
                       {"jobs", opts.jobs},
                       {"out_dir", opts.out_dir}};
  write_manifest("sweep", opts, config_snapshot, outputs, timer.seconds());
  std::cout << "sweep: " << traces.size() << " traces -> " << opts.out_dir << "\n";
  return kExitOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"desk-scale direct-alignment laboratory"};
  app.require_subcommand(1);

  CommonOptions verify_opts, bandit_opts, demo_opts, sweep_opts;
  bool corrupt_flag = false;
  int instances_flag = 0;
  std::vector<double> bandit_betas, sweep_betas;
  std::vector<std::string> demo_regimes, sweep_methods;
  std::vector<std::uint64_t> sweep_seeds;
  double sweep_lr = 0.0;
  int sweep_steps = 0;

  CLI::App* verify_cmd = app.add_subcommand("verify", "run the exact identity suite");
  add_common_flags(verify_cmd, verify_opts);
  verify_cmd->add_option("--instances", instances_flag, "instances per identity check");
  verify_cmd->add_flag("--corrupt-gradient", corrupt_flag,
                       "negative control: corrupt one gradient");

  CLI::App* bandit_cmd = app.add_subcommand("bandit", "four-action cosine-similarity sweep");
  add_common_flags(bandit_cmd, bandit_opts);
  bandit_cmd->add_option("--betas", bandit_betas, "regularization grid");

  CLI::App* demo_cmd = app.add_subcommand("gauss-demo", "two-mode mixture demo");
  add_common_flags(demo_cmd, demo_opts);
  demo_cmd->add_option("--regimes", demo_regimes, "subset of on_policy/off_policy/off_policy_is");

  CLI::App* sweep_cmd = app.add_subcommand("sweep", "method x beta x seed training sweep");
  add_common_flags(sweep_cmd, sweep_opts);
  sweep_cmd->add_option("--methods", sweep_methods, "training methods");
  sweep_cmd->add_option("--betas", sweep_betas, "regularization grid");
  sweep_cmd->add_option("--seeds", sweep_seeds, "per-cell seeds");
  sweep_cmd->add_option("--learning-rate", sweep_lr, "override per-method defaults");
  sweep_cmd->add_option("--steps", sweep_steps, "gradient steps");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return kExitUsage;
  }

  try {
    if (verify_cmd->parsed()) return run_verify(verify_opts, corrupt_flag, instances_flag);
    if (bandit_cmd->parsed()) return run_bandit(bandit_opts, bandit_betas);
    if (demo_cmd->parsed()) return run_gauss_demo(demo_opts, demo_regimes);
    if (sweep_cmd->parsed())
      return run_sweep(sweep_opts, sweep_methods, sweep_betas, sweep_seeds, sweep_lr, sweep_steps);
  } catch (const std::invalid_argument& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return kExitUsage;
  } catch (const Json::exception& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return kExitUsage;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitCheckFailure;
  }
  return kExitUsage;
}
