#pragma once

// Experiment scenarios, replication sweeps, result tables and replay of
// recorded CSV streams.

#include "pocd/calibration.hpp"
#include "pocd/common.hpp"
#include "pocd/monitor.hpp"
#include "pocd/parallel.hpp"
#include "pocd/ssm.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

namespace pocd {

// ---------------------------------------------------------------------------
// Built-in models
// ---------------------------------------------------------------------------

/// p = 10, q = 7 model with sigma_q = sigma_r = 0.1.
inline ModelParams paper_p10_model() {
  ModelParams m;
  m.A = 0.6 * Matrix::Identity(7, 7);
  m.A(1, 4) = 0.1;
  m.A(2, 5) = 0.15;
  m.A(4, 1) = 0.15;
  m.A(5, 2) = 0.1;
  m.C = Matrix::Zero(10, 7);
  // clang-format off
  m.C << 1,   0,   0,   0.3, 0,   0,   0,
         0,   1,   0,   0,   2,   0,   0,
         0,   0,   1,   0,   0,   0,   0,
         0,   0,   0.1, 1,   0,   0,   0,
         0,   0,   0,   0,   1,   0,   1.5,
         0,   0.2, 0,   0,   0,   1,   0,
         0,   0,   0,   0,   0,   1.2, 1,
         0,   0.5, 0,   1,   0,   0,   0,
         0,   0,   0,   0,   1,   0,   0.7,
         0,   0,   0.2, 0,   0,   1,   0;
  // clang-format on
  m.sigma_q = 0.1;
  m.sigma_r = 0.1;
  return m;
}

/// p = 30, q = 15 model generated from a fixed seed. A is sparse and
/// symmetric, rescaled to spectral radius 0.6; row i of C loads state
/// i mod 15 with weight 1 plus one further random state.
inline ModelParams paper_p30_model(std::uint64_t seed = 30) {
  constexpr int q = 15;
  constexpr int p = 30;
  Rng rng = make_rng(seed, streams::kScenarioModel);
  std::uniform_real_distribution<double> coupling(-0.5, 0.5);
  std::uniform_real_distribution<double> weight(0.2, 1.0);
  std::uniform_int_distribution<int> column(0, q - 1);
  std::bernoulli_distribution keep(0.1);

  ModelParams m;
  m.A = Matrix::Identity(q, q);
  for (int i = 0; i < q; ++i)
    for (int j = i + 1; j < q; ++j)
      if (keep(rng)) m.A(i, j) = m.A(j, i) = coupling(rng);
  m.A *= 0.6 / spectral_radius(m.A);

  m.C = Matrix::Zero(p, q);
  for (int i = 0; i < p; ++i) {
    const int home = i % q;
    m.C(i, home) = 1.0;
    int other = column(rng);
    while (other == home) other = column(rng);
    m.C(i, other) = weight(rng);
  }
  m.sigma_q = 0.1;
  m.sigma_r = 0.1;
  return m;
}

inline ModelParams builtin_model(const std::string& name) {
  if (name == "paper-p10") return paper_p10_model();
  if (name == "paper-p30") return paper_p30_model();
  throw ConfigError("unknown built-in model '" + name + "' (expected paper-p10 or paper-p30)");
}

// ---------------------------------------------------------------------------
// Scenarios and result tables
// ---------------------------------------------------------------------------

struct Scenario {
  std::string name = "scenario";
  ModelParams model;
  int m = 2;
  int n0 = 50;
  WindowConfig window;  ///< a non-finite h means "calibrate per policy"
  std::vector<Policy> policies{Policy::e_aucrss};
  AlphaPolicy alpha;
  std::vector<double> shifts{0.0};  ///< shift magnitudes; 0 is the in-control cell
  Vector direction;                 ///< length q; defaults to the first unit vector
  std::int64_t tau = 0;             ///< change point on the monitoring clock
  int replications = 1000;
  std::int64_t horizon_cap = 2000;
  std::uint64_t seed = 1;
  CalibrationSpec calibration;

  [[nodiscard]] Vector shift_direction() const {
    if (direction.size() > 0) return direction;
    Vector e = Vector::Zero(model.q());
    e[0] = 1.0;
    return e;
  }

  [[nodiscard]] MonitorConfig monitor_config(Policy policy, double h) const {
    MonitorConfig c;
    c.m = m;
    c.n0 = n0;
    c.window = window;
    c.window.h = h;
    c.policy = policy;
    c.alpha = alpha;
    return c;
  }

  /// Setup of the cell (policy, shift); shift 0 gives the in-control setup.
  [[nodiscard]] RunSetup setup(Policy policy, double shift, double h) const {
    RunSetup s;
    s.params = model;
    s.monitor = monitor_config(policy, h);
    s.horizon_cap = horizon_cap;
    if (shift != 0.0) {
      s.tau = tau;
      s.shift = shift * shift_direction();
    }
    return s;
  }

  void validate() const {
    model.validate();
    model.require_stable();
    monitor_config(Policy::random, window.h).validate(model);
    if (policies.empty()) throw ConfigError("scenario needs at least one policy");
    if (shifts.empty()) throw ConfigError("scenario needs at least one shift");
    for (double f : shifts)
      if (!std::isfinite(f)) throw ConfigError("shift magnitudes must be finite");
    if (direction.size() > 0 && direction.size() != model.q()) throw ConfigError("shift direction must have length q");
    if (tau < 0) throw ConfigError("tau must be >= 0");
    if (replications < 1) throw ConfigError("replications must be >= 1");
    if (horizon_cap < 1) throw ConfigError("horizon_cap must be >= 1");
  }
};

struct ResultRow {
  std::string scenario;
  Policy policy = Policy::e_aucrss;
  double f = 0.0;
  double add = 0.0;
  double sdd = 0.0;
  std::int64_t n_reps = 0;
  double censored = 0.0;  ///< censored fraction
  double h = 0.0;
  bool failed = false;
  std::string reason;
  std::vector<double> delays;  ///< per-replication delays (in-memory only)
};

struct ResultTable {
  std::vector<ResultRow> rows;
  std::map<Policy, CalibrationReport> calibrations;

  [[nodiscard]] const ResultRow* find(Policy policy, double f) const {
    for (const auto& r : rows)
      if (r.policy == policy && r.f == f) return &r;
    return nullptr;
  }
};

/// Delays of every replication of one cell, plus the aggregate.
struct CellResult {
  AddEstimate estimate;
  std::vector<double> delays;
};

inline CellResult evaluate_cell(const RunSetup& setup, double h, int replications, std::uint64_t seed, int threads) {
  const auto samples = run_replications(setup, h, replications, seed, streams::kEvaluation, threads);
  CellResult out;
  out.estimate = estimate_add(samples, setup.tau);
  for (const auto& s : samples) {
    if (setup.tau && s.alarm_time < *setup.tau) continue;
    out.delays.push_back(static_cast<double>(s.alarm_time - setup.tau.value_or(0)));
  }
  return out;
}

/// Runs every (policy, shift) cell. Policies without an entry in `known_h`
/// are calibrated first unless the scenario window carries a finite h.
inline ResultTable run_scenario(const Scenario& scenario, int threads = 0,
                                const std::map<Policy, double>& known_h = {}) {
  scenario.validate();
  ResultTable table;
  for (Policy policy : scenario.policies) {
    double h = scenario.window.h;
    std::string calib_error;
    if (auto it = known_h.find(policy); it != known_h.end()) {
      h = it->second;
    } else if (!std::isfinite(h)) {
      try {
        CalibrationSpec spec = scenario.calibration;
        const auto report = calibrate_h(spec, scenario.setup(policy, 0.0, h), threads);
        table.calibrations[policy] = report;
        h = report.h;
      } catch (const std::exception& e) {
        calib_error = e.what();
      }
    }
    for (double f : scenario.shifts) {
      ResultRow row;
      row.scenario = scenario.name;
      row.policy = policy;
      row.f = f;
      row.h = h;
      if (!calib_error.empty()) {
        row.failed = true;
        row.reason = "calibration failed: " + calib_error;
        table.rows.push_back(std::move(row));
        continue;
      }
      try {
        const CellResult cell = evaluate_cell(scenario.setup(policy, f, h), h, scenario.replications, scenario.seed,
                                              threads);
        row.add = cell.estimate.add;
        row.sdd = cell.estimate.sdd;
        row.n_reps = cell.estimate.n_used;
        row.censored = cell.estimate.censored_fraction();
        row.delays = cell.delays;
      } catch (const std::exception& e) {
        row.failed = true;
        row.reason = e.what();
      }
      table.rows.push_back(std::move(row));
    }
  }
  return table;
}

// ---------------------------------------------------------------------------
// Bootstrap
// ---------------------------------------------------------------------------

/// Bootstrap distribution (sorted) of mean(a) - mean(b), resampling each group independently.
inline std::vector<double> bootstrap_mean_diff(const std::vector<double>& a, const std::vector<double>& b, int draws,
                                               std::uint64_t seed) {
  if (a.empty() || b.empty()) throw ConfigError("bootstrap needs two non-empty samples");
  Rng rng = make_rng(seed, streams::kBootstrap);
  std::uniform_int_distribution<std::size_t> pick_a(0, a.size() - 1);
  std::uniform_int_distribution<std::size_t> pick_b(0, b.size() - 1);
  std::vector<double> out(static_cast<std::size_t>(draws));
  for (auto& d : out) {
    double sa = 0.0;
    double sb = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) sa += a[pick_a(rng)];
    for (std::size_t i = 0; i < b.size(); ++i) sb += b[pick_b(rng)];
    d = sa / static_cast<double>(a.size()) - sb / static_cast<double>(b.size());
  }
  std::sort(out.begin(), out.end());
  return out;
}

/// Empirical quantile of a sorted sample (linear interpolation).
inline double sorted_quantile(const std::vector<double>& sorted, double prob) {
  if (sorted.empty()) throw ConfigError("quantile of an empty sample");
  const double pos = prob * static_cast<double>(sorted.size() - 1);
  const auto lo = static_cast<std::size_t>(std::floor(pos));
  const auto hi = std::min(lo + 1, sorted.size() - 1);
  return sorted[lo] + (pos - static_cast<double>(lo)) * (sorted[hi] - sorted[lo]);
}

// ---------------------------------------------------------------------------
// Recorded streams
// ---------------------------------------------------------------------------

enum class Normalization { none, zscore };

inline Normalization parse_normalization(const std::string& s) {
  if (s == "none") return Normalization::none;
  if (s == "zscore" || s == "zscore-from-reference") return Normalization::zscore;
  throw ConfigError("unknown normalization '" + s + "' (expected none or zscore)");
}

struct RecordedStream {
  Matrix data;  ///< T x p
  Vector mean;  ///< column statistics used for normalization (empty for none)
  Vector sd;
  std::string label;
};

namespace detail {

inline std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> cells;
  std::string cell;
  std::istringstream in(line);
  while (std::getline(in, cell, ',')) cells.push_back(cell);
  if (!line.empty() && line.back() == ',') cells.emplace_back();
  return cells;
}

inline std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

inline std::optional<double> parse_number(const std::string& raw) {
  const std::string s = trim(raw);
  if (s.empty()) return std::nullopt;
  const char* first = s.data();
  if (*first == '+') ++first;
  double v = 0.0;
  const auto [ptr, ec] = std::from_chars(first, s.data() + s.size(), v);
  if (ec != std::errc() || ptr != s.data() + s.size()) return std::nullopt;
  return v;
}

}  // namespace detail

/// Reads a rectangular numeric CSV. A first line with no numeric cell is a header.
inline Matrix read_csv_matrix(const std::string& path, std::optional<int> expected_cols = std::nullopt) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open '" + path + "'");
  std::vector<std::vector<double>> rows;
  std::string line;
  std::size_t line_no = 0;
  std::optional<std::size_t> width;
  bool first = true;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (detail::trim(line).empty()) continue;
    const auto cells = detail::split_csv_line(line);
    if (first) {
      first = false;
      const bool header =
          std::none_of(cells.begin(), cells.end(), [](const std::string& c) { return detail::parse_number(c); });
      if (header) {
        width = cells.size();
        continue;
      }
    }
    if (width && cells.size() != *width) {
      std::ostringstream os;
      os << path << ": row " << line_no << " has " << cells.size() << " columns, expected " << *width;
      throw IoError(os.str());
    }
    width = cells.size();
    std::vector<double> row(cells.size());
    for (std::size_t j = 0; j < cells.size(); ++j) {
      const auto v = detail::parse_number(cells[j]);
      if (!v || !std::isfinite(*v)) {
        std::ostringstream os;
        os << path << ": row " << line_no << ", column " << j + 1 << ": non-numeric cell '" << cells[j] << "'";
        throw IoError(os.str());
      }
      row[j] = *v;
    }
    rows.push_back(std::move(row));
  }
  if (rows.empty()) throw IoError(path + ": no data rows");
  const auto cols = static_cast<Eigen::Index>(rows.front().size());
  if (expected_cols && cols != *expected_cols) {
    std::ostringstream os;
    os << path << ": has " << cols << " columns, expected p = " << *expected_cols;
    throw ConfigError(os.str());
  }
  Matrix out(static_cast<Eigen::Index>(rows.size()), cols);
  for (std::size_t i = 0; i < rows.size(); ++i)
    for (Eigen::Index j = 0; j < cols; ++j) out(static_cast<Eigen::Index>(i), j) = rows[i][static_cast<std::size_t>(j)];
  return out;
}

/// Loads `path`; in zscore mode the column mean and s.d. come from `reference_path`.
inline RecordedStream ingest_csv(const std::string& path, Normalization normalization,
                                 const std::optional<std::string>& reference_path = std::nullopt,
                                 std::optional<int> expected_p = std::nullopt) {
  RecordedStream s;
  s.label = path;
  s.data = read_csv_matrix(path, expected_p);
  if (normalization == Normalization::none) return s;
  if (!reference_path) throw ConfigError("zscore normalization needs a reference csv");
  const Matrix ref = read_csv_matrix(*reference_path, static_cast<int>(s.data.cols()));
  if (ref.rows() < 2) throw ConfigError("reference csv needs at least two rows");
  s.mean = ref.colwise().mean().transpose();
  const Matrix centered = ref.rowwise() - s.mean.transpose();
  s.sd = (centered.colwise().squaredNorm() / static_cast<double>(ref.rows() - 1)).cwiseSqrt().transpose();
  for (Eigen::Index j = 0; j < s.sd.size(); ++j) {
    if (!(s.sd[j] > 0.0)) {
      std::ostringstream os;
      os << *reference_path << ": column " << j + 1 << " is constant, cannot standardize";
      throw ConfigError(os.str());
    }
  }
  s.data = ((s.data.rowwise() - s.mean.transpose()).array().rowwise() / s.sd.transpose().array()).matrix();
  return s;
}

struct RunRecord {
  std::vector<MonitorStep> steps;
  std::optional<std::int64_t> alarm_time;  ///< monitoring step of the alarm
  std::optional<std::int64_t> tau_hat;     ///< estimated change point on the monitoring clock
  Vector f_hat;                            ///< shift estimate at the alarm
  double h = 0.0;
};

/// Monitors the recorded rows in order; the policy's mask picks the columns
/// the filter sees. Stops at the first alarm.
inline RunRecord replay_monitor(const RecordedStream& stream, const ModelParams& params, const MonitorConfig& config,
                                std::uint64_t seed) {
  if (stream.data.cols() != params.p()) {
    std::ostringstream os;
    os << "stream has " << stream.data.cols() << " columns, expected p = " << params.p();
    throw ConfigError(os.str());
  }
  const std::int64_t min_rows = config.n0 + config.window.m2 + 2;
  if (stream.data.rows() < min_rows) {
    std::ostringstream os;
    os << "stream has " << stream.data.rows() << " rows, needs at least n0 + m2 + 2 = " << min_rows;
    throw ConfigError(os.str());
  }
  Monitor monitor(params, config, replication_seed(seed, streams::kReplication, 0));
  RunRecord rec;
  rec.h = config.window.h;
  for (Eigen::Index t = 0; t < stream.data.rows(); ++t) {
    const Vector y = stream.data.row(t).transpose();
    rec.steps.push_back(monitor.step(y));
    const MonitorStep& s = rec.steps.back();
    if (s.alarm) {
      rec.alarm_time = s.n;
      if (s.tau_hat) rec.tau_hat = *s.tau_hat + 1 - config.n0;
      rec.f_hat = monitor.last_scan().f_hat;
      break;
    }
  }
  return rec;
}

// ---------------------------------------------------------------------------
// Output files
// ---------------------------------------------------------------------------

/// Shortest decimal string that round-trips to the same double.
inline std::string format_double(double v) {
  if (std::isnan(v)) return "nan";
  if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
  char buf[64];
  const auto res = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, res.ptr);
}

inline void write_text_file(const std::filesystem::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot write '" + path.string() + "'");
  out << text;
  if (!out) throw IoError("failed writing '" + path.string() + "'");
}

/// Writes results.csv plus one plot_<scenario>.csv per scenario. Returns the files written.
inline std::vector<std::filesystem::path> emit_outputs(const ResultTable& table, const std::filesystem::path& dir) {
  if (table.rows.empty()) throw ConfigError("result table is empty");
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  if (ec) throw IoError("cannot create '" + dir.string() + "': " + ec.message());

  std::vector<std::filesystem::path> written;
  std::ostringstream results;
  results << "scenario,policy,f,ADD,SDD,n_reps,censored,h\n";
  for (const auto& r : table.rows) {
    results << r.scenario << ',' << to_string(r.policy) << ',' << format_double(r.f) << ',';
    if (r.failed)
      results << ",,0,,";
    else
      results << format_double(r.add) << ',' << format_double(r.sdd) << ',' << r.n_reps << ','
              << format_double(r.censored) << ',';
    results << format_double(r.h) << '\n';
  }
  written.push_back(dir / "results.csv");
  write_text_file(written.back(), results.str());

  std::vector<std::string> scenarios;
  for (const auto& r : table.rows)
    if (std::find(scenarios.begin(), scenarios.end(), r.scenario) == scenarios.end()) scenarios.push_back(r.scenario);
  for (const auto& name : scenarios) {
    std::vector<Policy> policies;
    std::vector<double> shifts;
    for (const auto& r : table.rows) {
      if (r.scenario != name) continue;
      if (std::find(policies.begin(), policies.end(), r.policy) == policies.end()) policies.push_back(r.policy);
      if (std::find(shifts.begin(), shifts.end(), r.f) == shifts.end()) shifts.push_back(r.f);
    }
    std::sort(shifts.begin(), shifts.end());
    std::ostringstream plot;
    plot << 'f';
    for (Policy p : policies) plot << ',' << to_string(p);
    plot << '\n';
    for (double f : shifts) {
      plot << format_double(f);
      for (Policy p : policies) {
        plot << ',';
        for (const auto& r : table.rows)
          if (r.scenario == name && r.policy == p && r.f == f && !r.failed) plot << format_double(r.add);
      }
      plot << '\n';
    }
    written.push_back(dir / ("plot_" + name + ".csv"));
    write_text_file(written.back(), plot.str());
  }
  return written;
}

}  // namespace pocd
