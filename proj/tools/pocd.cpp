// Command-line front end: simulate | calibrate | benchmark | replay.

#include "pocd/calibration.hpp"
#include "pocd/config.hpp"
#include "pocd/harness.hpp"
#include "pocd/ssm.hpp"

#include <CLI11.hpp>

#include <cmath>
#include <cstdint>
#include <filesystem>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

namespace {

using namespace pocd;

enum ExitCode { kOk = 0, kConfigError = 2, kNumericalError = 3, kIoError = 4 };

struct GlobalOptions {
  std::string config_path;
  std::optional<std::uint64_t> seed;
  std::optional<std::string> out;
  int threads = 0;
};

Config load(const GlobalOptions& g) {
  Config cfg = g.config_path.empty() ? parse_config(Json::object()) : load_config(g.config_path);
  if (g.seed) cfg.set_seed(*g.seed);
  if (g.out) cfg.io.out_dir = *g.out;
  return cfg;
}

std::filesystem::path out_dir(const Config& cfg) {
  std::filesystem::path dir(cfg.io.out_dir);
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  if (ec) throw IoError("cannot create output directory '" + dir.string() + "': " + ec.message());
  return dir;
}

void write_json(const std::filesystem::path& path, const Json& j) { write_text_file(path, j.dump(2) + "\n"); }

// ---------------------------------------------------------------------------

struct SimulateFlags {
  std::optional<std::int64_t> horizon;
  std::optional<std::int64_t> tau;
  std::optional<double> shift;
  std::optional<double> sigma_q;
  std::optional<double> sigma_r;
};

int cmd_simulate(const GlobalOptions& g, const SimulateFlags& f) {
  Config cfg = load(g);
  if (f.horizon) cfg.simulate.horizon = *f.horizon;
  if (f.tau) cfg.simulate.tau = *f.tau;
  if (f.shift) cfg.simulate.shift = *f.shift;
  if (f.sigma_q) cfg.model.sigma_q = *f.sigma_q;
  if (f.sigma_r) cfg.model.sigma_r = *f.sigma_r;
  if (cfg.model.sigma_q < 0.0 || cfg.model.sigma_r < 0.0) throw ConfigError("--sigma-q/--sigma-r must be >= 0");

  ChangeSpec change;
  change.f = Vector::Zero(cfg.model.q());
  if (cfg.simulate.shift != 0.0) {
    change.tau = cfg.simulate.tau.value_or(0);
    change.f = cfg.simulate.shift * cfg.scenario().shift_direction();
  }
  const auto stream = simulate_stream(cfg.model, change, cfg.simulate.horizon,
                                      replication_seed(cfg.experiment.seed, streams::kReplication, 0));

  std::ostringstream csv;
  for (int j = 0; j < cfg.model.p(); ++j) csv << (j ? "," : "") << 'y' << j + 1;
  csv << '\n';
  for (Eigen::Index t = 0; t < stream.observations.rows(); ++t) {
    for (Eigen::Index j = 0; j < stream.observations.cols(); ++j)
      csv << (j ? "," : "") << format_double(stream.observations(t, j) + 0.0);
    csv << '\n';
  }
  const auto path = out_dir(cfg) / "stream.csv";
  write_text_file(path, csv.str());
  std::cout << "wrote " << path.string() << " (" << stream.observations.rows() << " x " << cfg.model.p() << ")\n";
  return kOk;
}

int cmd_calibrate(const GlobalOptions& g) {
  const Config cfg = load(g);
  const Scenario sc = cfg.scenario();
  const auto report =
      calibrate_h(cfg.calibration, sc.setup(cfg.policy, 0.0, std::numeric_limits<double>::infinity()), g.threads);
  Json j = calibration_json(report);
  j["policy"] = std::string(to_string(cfg.policy));
  j["m"] = cfg.m;
  j["model"] = cfg.model_name;
  j["seed"] = cfg.calibration.seed;
  j["replications"] = cfg.calibration.replications;
  j["target_add_ic"] = cfg.calibration.target_add_ic;
  const auto path = out_dir(cfg) / "calibration.json";
  write_json(path, j);
  std::cout << "h = " << format_double(report.h) << "\n"
            << "ADD_IC = " << report.add_ic << " (SDD " << report.sdd << ", censored " << report.censored_fraction
            << ", " << report.trials.size() << " trials)\n"
            << "wrote " << path.string() << "\n";
  return kOk;
}

int cmd_benchmark(const GlobalOptions& g, const std::string& policies, std::optional<double> h) {
  const Config cfg = load(g);
  Scenario sc = cfg.scenario();
  if (!policies.empty()) {
    sc.policies.clear();
    std::stringstream ss(policies);
    std::string name;
    while (std::getline(ss, name, ','))
      if (!name.empty()) sc.policies.push_back(parse_policy(name));
    if (sc.policies.empty()) throw ConfigError("--policies is empty");
  }
  if (h) sc.window.h = *h;
  const ResultTable table = run_scenario(sc, g.threads);
  const auto dir = out_dir(cfg);
  const auto files = emit_outputs(table, dir);
  if (!table.calibrations.empty()) {
    Json j = Json::object();
    for (const auto& [policy, rep] : table.calibrations) j[std::string(to_string(policy))] = calibration_json(rep);
    write_json(dir / "calibrations.json", j);
  }
  int failed = 0;
  std::cout << "policy      f        ADD        SDD      h\n";
  for (const auto& r : table.rows) {
    std::printf("%-10s %5.3g  %9.4g  %9.4g  %7.4g%s\n", std::string(to_string(r.policy)).c_str(), r.f, r.add, r.sdd,
                r.h, r.failed ? ("  FAILED: " + r.reason).c_str() : "");
    failed += r.failed ? 1 : 0;
  }
  for (const auto& f : files) std::cout << "wrote " << f.string() << "\n";
  return failed == 0 ? kOk : kNumericalError;
}

int cmd_replay(const GlobalOptions& g, std::optional<std::string> input, std::optional<std::string> reference,
               std::optional<double> h) {
  Config cfg = load(g);
  if (input) cfg.io.input_csv = *input;
  if (reference) {
    cfg.io.reference_csv = *reference;
    cfg.io.normalization = Normalization::zscore;
  }
  if (h) cfg.window.h = *h;
  if (!cfg.io.input_csv) throw ConfigError("$.io.input_csv: required for replay (or pass --input)");
  if (!std::isfinite(cfg.window.h)) throw ConfigError("$.window.h: replay needs a finite control limit (or pass --h)");
  const RecordedStream stream = ingest_csv(*cfg.io.input_csv, cfg.io.normalization, cfg.io.reference_csv, cfg.model.p());
  const RunRecord rec = replay_monitor(stream, cfg.model, cfg.monitor(), cfg.experiment.seed);
  Json j = run_record_json(rec, cfg.n0);
  j["input"] = *cfg.io.input_csv;
  j["policy"] = std::string(to_string(cfg.policy));
  const auto path = out_dir(cfg) / "run_record.json";
  write_json(path, j);
  if (rec.alarm_time)
    std::cout << "alarm at monitoring step " << *rec.alarm_time << " (tau_hat "
              << (rec.tau_hat ? std::to_string(*rec.tau_hat) : "n/a") << ")\n";
  else
    std::cout << "no alarm in " << rec.steps.size() << " rows\n";
  std::cout << "wrote " << path.string() << "\n";
  return kOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Partially observable change detection toolkit"};
  app.require_subcommand(1);
  GlobalOptions g;
  app.add_option("--config", g.config_path, "JSON configuration file");
  app.add_option("--seed", g.seed, "Base seed (overrides the config)");
  app.add_option("--out", g.out, "Output directory (overrides io.out_dir)");
  app.add_option("--threads", g.threads, "Worker threads (0 = hardware concurrency)")->check(CLI::NonNegativeNumber);

  SimulateFlags sim;
  auto* simulate = app.add_subcommand("simulate", "Write a simulated full-observation stream (T x p CSV)");
  simulate->add_option("--horizon", sim.horizon, "Number of rows");
  simulate->add_option("--tau", sim.tau, "0-based row where the shift starts");
  simulate->add_option("--shift", sim.shift, "Shift magnitude along the experiment direction");
  simulate->add_option("--sigma-q", sim.sigma_q, "State noise s.d.");
  simulate->add_option("--sigma-r", sim.sigma_r, "Observation noise s.d.");

  auto* calibrate = app.add_subcommand("calibrate", "Search the control limit h for the target ADD_IC");

  std::string policies;
  std::optional<double> bench_h;
  auto* benchmark = app.add_subcommand("benchmark", "Run the experiment grid and write result tables");
  benchmark->set_help_flag("--help", "Print this help message and exit");
  benchmark->add_option("--policies", policies, "Comma-separated subset of aucrss,e_aucrss,random");
  benchmark->add_option("--h", bench_h, "Use this control limit instead of calibrating");

  std::optional<std::string> input;
  std::optional<std::string> reference;
  std::optional<double> replay_h;
  auto* replay = app.add_subcommand("replay", "Monitor a recorded CSV stream");
  replay->set_help_flag("--help", "Print this help message and exit");
  replay->add_option("--input", input, "CSV stream to monitor");
  replay->add_option("--reference", reference, "In-control CSV used for z-score normalization");
  replay->add_option("--h", replay_h, "Control limit");

  for (auto* sub : {simulate, calibrate, benchmark, replay}) sub->fallthrough();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? kOk : kConfigError;
  }

  try {
    if (*simulate) return cmd_simulate(g, sim);
    if (*calibrate) return cmd_calibrate(g);
    if (*benchmark) return cmd_benchmark(g, policies, bench_h);
    if (*replay) return cmd_replay(g, input, reference, replay_h);
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return kConfigError;
  } catch (const IoError& e) {
    std::cerr << "i/o error: " << e.what() << "\n";
    return kIoError;
  } catch (const NumericalError& e) {
    std::cerr << "numerical error: " << e.what() << "\n";
    return kNumericalError;
  } catch (const Json::exception& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return kConfigError;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kNumericalError;
  }
  return kOk;
}
