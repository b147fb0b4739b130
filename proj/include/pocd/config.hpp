#pragma once

// JSON configuration: schema checks with JSON-path error messages, and JSON
// renderings of calibration reports and run records.

#include "pocd/calibration.hpp"
#include "pocd/common.hpp"
#include "pocd/harness.hpp"
#include "pocd/monitor.hpp"
#include "pocd/sampler.hpp"
#include "pocd/ssm.hpp"

#include <json.hpp>

#include <cmath>
#include <cstdint>
#include <fstream>
#include <initializer_list>
#include <optional>
#include <set>
#include <string>
#include <vector>

namespace pocd {

using Json = nlohmann::json;

struct SimulateOptions {
  std::int64_t horizon = 500;
  std::optional<std::int64_t> tau;  ///< 0-based row index where the shift starts
  double shift = 0.0;               ///< magnitude along the experiment direction
};

struct IoOptions {
  std::string out_dir = "out";
  std::optional<std::string> input_csv;
  std::optional<std::string> reference_csv;
  Normalization normalization = Normalization::none;
};

struct Config {
  std::string model_name = "custom";
  ModelParams model;
  WindowConfig window;
  Policy policy = Policy::e_aucrss;
  AlphaPolicy alpha;
  int m = 2;
  int n0 = 50;
  Scenario experiment;  ///< model/window/policy fields are filled from the sections above
  CalibrationSpec calibration;
  SimulateOptions simulate;
  IoOptions io;

  [[nodiscard]] MonitorConfig monitor() const {
    MonitorConfig c;
    c.m = m;
    c.n0 = n0;
    c.window = window;
    c.policy = policy;
    c.alpha = alpha;
    return c;
  }

  [[nodiscard]] Scenario scenario() const {
    Scenario s = experiment;
    s.model = model;
    s.m = m;
    s.n0 = n0;
    s.window = window;
    s.alpha = alpha;
    s.calibration = calibration;
    return s;
  }

  void set_seed(std::uint64_t seed) {
    experiment.seed = seed;
    calibration.seed = seed;
  }
};

namespace detail {

[[noreturn]] inline void schema_error(const std::string& path, const std::string& what) {
  throw ConfigError(path + ": " + what);
}

inline void check_keys(const Json& j, const std::string& path, std::initializer_list<const char*> allowed) {
  if (!j.is_object()) schema_error(path, "expected an object");
  const std::set<std::string> ok(allowed.begin(), allowed.end());
  for (const auto& [key, value] : j.items())
    if (!ok.count(key)) schema_error(path + "." + key, "unknown key");
}

inline double get_number(const Json& j, const std::string& path) {
  if (!j.is_number()) schema_error(path, "expected a number");
  const double v = j.get<double>();
  if (!std::isfinite(v)) schema_error(path, "expected a finite number");
  return v;
}

inline std::int64_t get_integer(const Json& j, const std::string& path) {
  if (!j.is_number_integer()) schema_error(path, "expected an integer");
  return j.get<std::int64_t>();
}

inline std::uint64_t get_seed(const Json& j, const std::string& path) {
  if (j.is_number_unsigned()) return j.get<std::uint64_t>();
  if (j.is_number_integer() && j.get<std::int64_t>() >= 0) return static_cast<std::uint64_t>(j.get<std::int64_t>());
  schema_error(path, "expected a nonnegative integer");
}

inline std::string get_string(const Json& j, const std::string& path) {
  if (!j.is_string()) schema_error(path, "expected a string");
  return j.get<std::string>();
}

inline Vector get_vector(const Json& j, const std::string& path) {
  if (!j.is_array()) schema_error(path, "expected an array of numbers");
  Vector v(static_cast<Eigen::Index>(j.size()));
  for (std::size_t i = 0; i < j.size(); ++i)
    v[static_cast<Eigen::Index>(i)] = get_number(j[i], path + "[" + std::to_string(i) + "]");
  return v;
}

inline Matrix get_matrix(const Json& j, const std::string& path) {
  if (!j.is_array() || j.empty()) schema_error(path, "expected a non-empty array of rows");
  std::optional<std::size_t> width;
  Matrix out;
  for (std::size_t i = 0; i < j.size(); ++i) {
    const std::string row_path = path + "[" + std::to_string(i) + "]";
    const Vector row = get_vector(j[i], row_path);
    if (!width) {
      width = static_cast<std::size_t>(row.size());
      if (*width == 0) schema_error(row_path, "rows must be non-empty");
      out.resize(static_cast<Eigen::Index>(j.size()), row.size());
    } else if (static_cast<std::size_t>(row.size()) != *width) {
      schema_error(row_path, "expected " + std::to_string(*width) + " numbers, got " + std::to_string(row.size()));
    }
    out.row(static_cast<Eigen::Index>(i)) = row.transpose();
  }
  return out;
}

template <class T, class Fn>
void optional_field(const Json& j, const char* key, const std::string& path, T& target, Fn&& read) {
  if (j.contains(key) && !j.at(key).is_null()) target = read(j.at(key), path + "." + key);
}

inline AlphaPolicy parse_alpha(const Json& j, const std::string& path) {
  if (j.is_number()) return AlphaPolicy(get_number(j, path));
  check_keys(j, path, {"d", "l", "alpha_min", "alpha_max"});
  AlphaSchedule s;
  optional_field(j, "d", path, s.d, get_number);
  optional_field(j, "l", path, s.l, get_number);
  optional_field(j, "alpha_min", path, s.alpha_min, get_number);
  optional_field(j, "alpha_max", path, s.alpha_max, get_number);
  return AlphaPolicy(s);
}

inline void parse_model(const Json& j, Config& cfg) {
  const std::string path = "$.model";
  if (j.is_string()) {
    cfg.model_name = j.get<std::string>();
    try {
      cfg.model = builtin_model(cfg.model_name);
    } catch (const ConfigError& e) {
      schema_error(path, e.what());
    }
    return;
  }
  check_keys(j, path, {"name", "builtin", "A", "C", "sigma_q", "sigma_r"});
  if (j.contains("builtin")) {
    cfg.model_name = get_string(j.at("builtin"), path + ".builtin");
    try {
      cfg.model = builtin_model(cfg.model_name);
    } catch (const ConfigError& e) {
      schema_error(path + ".builtin", e.what());
    }
  } else {
    if (!j.contains("A")) schema_error(path + ".A", "required");
    if (!j.contains("C")) schema_error(path + ".C", "required");
  }
  optional_field(j, "name", path, cfg.model_name, get_string);
  optional_field(j, "A", path, cfg.model.A, get_matrix);
  optional_field(j, "C", path, cfg.model.C, get_matrix);
  optional_field(j, "sigma_q", path, cfg.model.sigma_q, get_number);
  optional_field(j, "sigma_r", path, cfg.model.sigma_r, get_number);
  const auto q = cfg.model.A.rows();
  if (cfg.model.A.cols() != q)
    schema_error(path + ".A", "must be square (got " + std::to_string(q) + " x " + std::to_string(cfg.model.A.cols()) + ")");
  if (cfg.model.C.cols() != q)
    schema_error(path + ".C", "must have q = " + std::to_string(q) + " columns (got " +
                                  std::to_string(cfg.model.C.cols()) + ")");
}

}  // namespace detail

/// Parses and validates a configuration document. Every error names the offending JSON path.
inline Config parse_config(const Json& root) {
  using namespace detail;
  Config cfg;
  cfg.model = paper_p10_model();
  cfg.model_name = "paper-p10";
  check_keys(root, "$", {"model", "window", "policy", "sampling", "experiment", "calibration", "simulate", "io"});

  if (root.contains("model")) parse_model(root.at("model"), cfg);

  if (root.contains("window")) {
    const Json& j = root.at("window");
    check_keys(j, "$.window", {"m1", "m2", "h"});
    optional_field(j, "m1", "$.window", cfg.window.m1, [](const Json& v, const std::string& p) {
      return static_cast<int>(get_integer(v, p));
    });
    optional_field(j, "m2", "$.window", cfg.window.m2, [](const Json& v, const std::string& p) {
      return static_cast<int>(get_integer(v, p));
    });
    optional_field(j, "h", "$.window", cfg.window.h, get_number);
  }

  if (root.contains("policy")) {
    const Json& j = root.at("policy");
    check_keys(j, "$.policy", {"name", "alpha"});
    if (j.contains("name")) {
      try {
        cfg.policy = parse_policy(get_string(j.at("name"), "$.policy.name"));
      } catch (const ConfigError& e) {
        schema_error("$.policy.name", e.what());
      }
    }
    optional_field(j, "alpha", "$.policy", cfg.alpha, parse_alpha);
  }

  if (root.contains("sampling")) {
    const Json& j = root.at("sampling");
    check_keys(j, "$.sampling", {"m", "n0"});
    const auto as_int = [](const Json& v, const std::string& p) { return static_cast<int>(get_integer(v, p)); };
    optional_field(j, "m", "$.sampling", cfg.m, as_int);
    optional_field(j, "n0", "$.sampling", cfg.n0, as_int);
  }

  Scenario& ex = cfg.experiment;
  ex.name = cfg.model_name;
  ex.policies = {cfg.policy};
  if (root.contains("experiment")) {
    const std::string path = "$.experiment";
    const Json& j = root.at("experiment");
    check_keys(j, path, {"name", "shifts", "grid", "direction", "tau", "replications", "horizon_cap", "seed",
                         "policies"});
    optional_field(j, "name", path, ex.name, get_string);
    for (const char* key : {"shifts", "grid"}) {
      if (j.contains(key)) {
        const Vector g = get_vector(j.at(key), path + "." + key);
        ex.shifts.assign(g.data(), g.data() + g.size());
      }
    }
    optional_field(j, "direction", path, ex.direction, get_vector);
    optional_field(j, "tau", path, ex.tau, get_integer);
    optional_field(j, "replications", path, ex.replications,
                   [](const Json& v, const std::string& p) { return static_cast<int>(get_integer(v, p)); });
    optional_field(j, "horizon_cap", path, ex.horizon_cap, get_integer);
    optional_field(j, "seed", path, ex.seed, get_seed);
    if (j.contains("policies")) {
      const Json& ps = j.at("policies");
      if (!ps.is_array() || ps.empty()) schema_error(path + ".policies", "expected a non-empty array of names");
      ex.policies.clear();
      for (std::size_t i = 0; i < ps.size(); ++i) {
        const std::string p = path + ".policies[" + std::to_string(i) + "]";
        try {
          ex.policies.push_back(parse_policy(get_string(ps[i], p)));
        } catch (const ConfigError& e) {
          schema_error(p, e.what());
        }
      }
    }
  }
  cfg.calibration.seed = ex.seed;
  cfg.calibration.horizon_cap = ex.horizon_cap;

  if (root.contains("calibration")) {
    const std::string path = "$.calibration";
    const Json& j = root.at("calibration");
    check_keys(j, path, {"target_add_ic", "replications", "h_lo", "h_hi", "tol", "max_iters", "max_expansions",
                         "ladder_ratio", "horizon_cap", "seed"});
    CalibrationSpec& c = cfg.calibration;
    const auto as_int = [](const Json& v, const std::string& p) { return static_cast<int>(get_integer(v, p)); };
    optional_field(j, "target_add_ic", path, c.target_add_ic, get_number);
    optional_field(j, "replications", path, c.replications, as_int);
    optional_field(j, "h_lo", path, c.h_lo, get_number);
    optional_field(j, "h_hi", path, c.h_hi, get_number);
    optional_field(j, "tol", path, c.tol, get_number);
    optional_field(j, "max_iters", path, c.max_iters, as_int);
    optional_field(j, "max_expansions", path, c.max_expansions, as_int);
    optional_field(j, "ladder_ratio", path, c.ladder_ratio, get_number);
    optional_field(j, "horizon_cap", path, c.horizon_cap, get_integer);
    optional_field(j, "seed", path, c.seed, get_seed);
  }

  if (root.contains("simulate")) {
    const std::string path = "$.simulate";
    const Json& j = root.at("simulate");
    check_keys(j, path, {"horizon", "tau", "shift"});
    optional_field(j, "horizon", path, cfg.simulate.horizon, get_integer);
    if (j.contains("tau") && !j.at("tau").is_null()) cfg.simulate.tau = get_integer(j.at("tau"), path + ".tau");
    optional_field(j, "shift", path, cfg.simulate.shift, get_number);
  }

  if (root.contains("io")) {
    const std::string path = "$.io";
    const Json& j = root.at("io");
    check_keys(j, path, {"out_dir", "input_csv", "reference_csv", "normalization"});
    optional_field(j, "out_dir", path, cfg.io.out_dir, get_string);
    if (j.contains("input_csv")) cfg.io.input_csv = get_string(j.at("input_csv"), path + ".input_csv");
    if (j.contains("reference_csv")) cfg.io.reference_csv = get_string(j.at("reference_csv"), path + ".reference_csv");
    if (j.contains("normalization")) {
      try {
        cfg.io.normalization = parse_normalization(get_string(j.at("normalization"), path + ".normalization"));
      } catch (const ConfigError& e) {
        schema_error(path + ".normalization", e.what());
      }
    }
  }

  // Semantic checks, mapped back to the section that carries the value.
  const auto section = [](const char* path, auto&& check) {
    try {
      check();
    } catch (const ConfigError& e) {
      schema_error(path, e.what());
    }
  };
  section("$.model", [&] {
    cfg.model.validate();
    cfg.model.require_stable();
  });
  section("$.window", [&] { cfg.window.validate(); });
  section("$.policy.alpha", [&] { cfg.alpha.validate(); });
  section("$.sampling", [&] {
    if (cfg.m < 1 || cfg.m > cfg.model.p())
      throw ConfigError("m must satisfy 1 <= m <= p = " + std::to_string(cfg.model.p()));
    if (cfg.n0 < 0) throw ConfigError("n0 must be >= 0");
  });
  section("$.experiment", [&] { cfg.scenario().validate(); });
  section("$.simulate", [&] {
    if (cfg.simulate.horizon < 1) throw ConfigError("horizon must be >= 1");
    if (cfg.simulate.tau && *cfg.simulate.tau < 0) throw ConfigError("tau must be >= 0");
  });
  return cfg;
}

inline Config load_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open config '" + path + "'");
  Json root;
  try {
    root = Json::parse(in);
  } catch (const Json::parse_error& e) {
    throw ConfigError(path + ": invalid JSON: " + e.what());
  }
  return parse_config(root);
}

// ---------------------------------------------------------------------------
// JSON outputs
// ---------------------------------------------------------------------------

inline Json vector_json(const Vector& v) { return Json(std::vector<double>(v.data(), v.data() + v.size())); }

inline Json calibration_json(const CalibrationReport& r) {
  Json trials = Json::array();
  for (const auto& t : r.trials) trials.push_back({{"h", t.h}, {"add_ic", t.add_ic}});
  return {{"h", r.h},
          {"add_ic", r.add_ic},
          {"sdd", r.sdd},
          {"censored_fraction", r.censored_fraction},
          {"iterations", r.iterations},
          {"trials", trials}};
}

inline Json run_record_json(const RunRecord& rec, int n0) {
  Json steps = Json::array();
  for (const auto& s : rec.steps) {
    Json js = {{"t", s.t}, {"n", s.n}, {"mask", s.mask.one_based()}};
    if (s.n > 0) {
      js["T"] = s.t_stat;
      js["alpha"] = s.alpha;
      js["tau_hat"] = s.tau_hat ? Json(*s.tau_hat + 1 - n0) : Json(nullptr);
    }
    steps.push_back(std::move(js));
  }
  Json out = {{"h", rec.h}, {"steps", steps}};
  out["alarm_time"] = rec.alarm_time ? Json(*rec.alarm_time) : Json(nullptr);
  out["tau_hat"] = rec.tau_hat ? Json(*rec.tau_hat) : Json(nullptr);
  out["f_hat"] = rec.f_hat.size() > 0 ? vector_json(rec.f_hat) : Json(nullptr);
  return out;
}

}  // namespace pocd
