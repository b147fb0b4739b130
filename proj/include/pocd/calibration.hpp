#pragma once

// Run lengths by Monte Carlo and control-limit search.
//
// Time convention: global steps t = 1, 2, ... include the n0 warm-up steps.
// Monitoring step n = t - n0. A change at tau (monitoring clock) adds the
// shift to every monitoring step n >= max(tau, 1), and the detection delay
// of an alarm at N is N - tau.

#include "pocd/common.hpp"
#include "pocd/monitor.hpp"
#include "pocd/parallel.hpp"
#include "pocd/ssm.hpp"

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <memory>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

namespace pocd {

struct RunSetup {
  ModelParams params;
  MonitorConfig monitor;
  std::optional<std::int64_t> tau;  ///< change point on the monitoring clock; empty means in control
  Vector shift;                     ///< length q; ignored when tau is empty
  std::int64_t horizon_cap = 2000;  ///< monitoring steps before a run is censored

  void validate() const {
    params.validate(/*allow_zero_noise=*/true);
    params.require_stable();
    monitor.validate(params);
    if (horizon_cap < 1) throw ConfigError("horizon_cap must be >= 1");
    if (tau) {
      if (*tau < 0) throw ConfigError("change tau must be >= 0");
      if (shift.size() != params.q()) throw ConfigError("shift must have length q");
      if (!shift.allFinite()) throw ConfigError("shift must be finite");
    }
  }

  /// The same change expressed on the simulator's 0-based stream index.
  [[nodiscard]] ChangeSpec stream_change() const {
    ChangeSpec c;
    c.f = tau ? shift : Vector::Zero(params.q());
    if (tau) c.tau = monitor.n0 + std::max<std::int64_t>(*tau, 1) - 1;
    return c;
  }
};

struct RunLengthSample {
  std::int64_t alarm_time = 0;  ///< monitoring step of the first alarm, or horizon_cap when censored
  bool censored = false;
  std::uint64_t seed = 0;
};

/// Seed of replication `rep` drawn from the stream `stream_id` of `seed`.
inline std::uint64_t replication_seed(std::uint64_t seed, std::uint64_t stream_id, std::uint64_t rep) {
  return derive_seed(seed, stream_id, rep);
}

/// One replication evaluated lazily. The trajectory before the first alarm
/// does not depend on h, so a single path answers alarm-time queries for any
/// threshold. The path only records the running maxima of T_n.
class RunPath {
 public:
  RunPath(const RunSetup& setup, std::uint64_t seed)
      : setup_(&setup),
        seed_(seed),
        sim_(setup.params, setup.stream_change(), seed),
        monitor_(setup.params, unbounded(setup.monitor), seed) {}

  [[nodiscard]] std::uint64_t seed() const { return seed_; }
  [[nodiscard]] std::int64_t monitored() const { return n_; }

  /// First monitoring step with T_n > h, extending the path as needed.
  RunLengthSample alarm_time(double h) {
    if (std::isnan(h)) throw ConfigError("threshold h must be a number");
    RunLengthSample out;
    out.seed = seed_;
    const auto hit = std::upper_bound(records_.begin(), records_.end(), h,
                                      [](double v, const Record& r) { return v < r.t_stat; });
    if (hit != records_.end()) {
      out.alarm_time = hit->n;
      return out;
    }
    while (n_ < setup_->horizon_cap) {
      const double t_stat = advance();
      if (t_stat > h) {
        out.alarm_time = n_;
        return out;
      }
    }
    out.alarm_time = setup_->horizon_cap;
    out.censored = true;
    return out;
  }

 private:
  struct Record {
    std::int64_t n;
    double t_stat;
  };

  static MonitorConfig unbounded(MonitorConfig c) {
    c.window.h = std::numeric_limits<double>::infinity();
    return c;
  }

  double advance() {
    if (n_ == 0) {
      for (int i = 0; i < setup_->monitor.n0; ++i) monitor_.step(sim_.next());
    }
    const MonitorStep rec = monitor_.step(sim_.next());
    n_ = rec.n;
    if (records_.empty() || rec.t_stat > records_.back().t_stat) records_.push_back({n_, rec.t_stat});
    return rec.t_stat;
  }

  const RunSetup* setup_;
  std::uint64_t seed_;
  StreamSimulator sim_;
  Monitor monitor_;
  std::vector<Record> records_;
  std::int64_t n_ = 0;
};

/// Executes one replication with threshold h.
inline RunLengthSample run_once(const RunSetup& setup, double h, std::uint64_t seed) {
  RunPath path(setup, seed);
  return path.alarm_time(h);
}

/// `replications` independent runs with seeds from `stream_id`; ordered by replication index.
inline std::vector<RunLengthSample> run_replications(const RunSetup& setup, double h, int replications,
                                                     std::uint64_t seed, std::uint64_t stream_id, int threads) {
  setup.validate();
  std::vector<RunLengthSample> out(static_cast<std::size_t>(replications));
  parallel_for(out.size(), threads, [&](std::size_t i) {
    out[i] = run_once(setup, h, replication_seed(seed, stream_id, i));
  });
  return out;
}

struct AddEstimate {
  double add = 0.0;
  double sdd = 0.0;
  std::int64_t n_used = 0;      ///< samples left after conditioning on T >= tau
  std::int64_t n_censored = 0;  ///< censored samples among them
  [[nodiscard]] double censored_fraction() const {
    return n_used == 0 ? 0.0 : static_cast<double>(n_censored) / static_cast<double>(n_used);
  }
};

/// In control (tau empty): mean and s.d. of alarm times. Otherwise mean and
/// s.d. of T - tau over samples with T >= tau. Censored samples count at the cap.
inline AddEstimate estimate_add(const std::vector<RunLengthSample>& samples, std::optional<std::int64_t> tau) {
  AddEstimate est;
  const std::int64_t offset = tau.value_or(0);
  double sum = 0.0;
  std::vector<double> delays;
  delays.reserve(samples.size());
  for (const auto& s : samples) {
    if (tau && s.alarm_time < *tau) continue;
    delays.push_back(static_cast<double>(s.alarm_time - offset));
    sum += delays.back();
    if (s.censored) ++est.n_censored;
  }
  est.n_used = static_cast<std::int64_t>(delays.size());
  if (est.n_used == est.n_censored) throw NumericalError("no uncensored run length left to estimate the delay");
  est.add = sum / static_cast<double>(est.n_used);
  if (est.n_used > 1) {
    double ss = 0.0;
    for (double d : delays) ss += (d - est.add) * (d - est.add);
    est.sdd = std::sqrt(ss / static_cast<double>(est.n_used - 1));
  }
  return est;
}

// ---------------------------------------------------------------------------
// Control-limit search
// ---------------------------------------------------------------------------

struct CalibrationSpec {
  double target_add_ic = 200.0;
  int replications = 1000;
  double h_lo = 5.0;
  double h_hi = 100.0;
  double tol = 0.05;
  int max_iters = 60;
  int max_expansions = 8;
  double ladder_ratio = 1.08;
  std::int64_t horizon_cap = 2000;
  std::uint64_t seed = 0;

  void validate() const {
    if (!(target_add_ic > 0.0)) throw ConfigError("calibration.target_add_ic must be > 0");
    if (replications < 100) throw ConfigError("calibration.replications must be >= 100");
    if (!(h_lo < h_hi)) throw ConfigError("calibration requires h_lo < h_hi");
    if (!(tol > 0.0)) throw ConfigError("calibration.tol must be > 0");
    if (max_iters < 1) throw ConfigError("calibration.max_iters must be >= 1");
    if (max_expansions < 0) throw ConfigError("calibration.max_expansions must be >= 0");
    if (!(ladder_ratio > 1.0)) throw ConfigError("calibration.ladder_ratio must be > 1");
    if (static_cast<double>(horizon_cap) < 5.0 * target_add_ic)
      throw ConfigError("calibration.horizon_cap must be >= 5 * target_add_ic");
  }
};

struct CalibrationTrial {
  double h;
  double add_ic;
};

struct CalibrationReport {
  double h = 0.0;
  double add_ic = 0.0;
  double sdd = 0.0;
  double censored_fraction = 0.0;
  int iterations = 0;  ///< bisection steps after the bracket was found
  std::vector<CalibrationTrial> trials;
};

class CalibrationError : public NumericalError {
 public:
  CalibrationError(const std::string& what, std::optional<double> best_h)
      : NumericalError(what), best_h_(best_h) {}
  [[nodiscard]] std::optional<double> best_h() const { return best_h_; }

 private:
  std::optional<double> best_h_;
};

/// Searches h so that the in-control ADD is within `tol` (relative) of the
/// target. Every trial threshold reuses the same replication seeds.
inline CalibrationReport calibrate_h(const CalibrationSpec& spec, const RunSetup& scenario, int threads = 0) {
  spec.validate();
  RunSetup setup = scenario;
  setup.tau.reset();
  setup.horizon_cap = spec.horizon_cap;
  setup.validate();

  const auto reps = static_cast<std::size_t>(spec.replications);
  std::vector<std::unique_ptr<RunPath>> paths(reps);
  std::vector<RunLengthSample> samples(reps);
  CalibrationReport report;
  std::optional<CalibrationTrial> best;

  const auto evaluate = [&](double h) {
    parallel_for(reps, threads, [&](std::size_t i) {
      if (!paths[i]) paths[i] = std::make_unique<RunPath>(setup, replication_seed(spec.seed, streams::kCalibration, i));
      samples[i] = paths[i]->alarm_time(h);
    });
    const AddEstimate est = estimate_add(samples, std::nullopt);
    report.trials.push_back({h, est.add});
    if (!best || std::abs(est.add - spec.target_add_ic) < std::abs(best->add_ic - spec.target_add_ic))
      best = CalibrationTrial{h, est.add};
    return est;
  };
  const auto accept = [&](double h, const AddEstimate& est) {
    if (std::abs(est.add - spec.target_add_ic) > spec.tol * spec.target_add_ic) return false;
    report.h = h;
    report.add_ic = est.add;
    report.sdd = est.sdd;
    report.censored_fraction = est.censored_fraction();
    return true;
  };
  const auto fail = [&](const std::string& why) {
    std::ostringstream msg;
    msg << why << " (target ADD_IC " << spec.target_add_ic << ", trials:";
    for (const auto& t : report.trials) msg << " h=" << t.h << "->" << t.add_ic;
    msg << ")";
    return CalibrationError(msg.str(), best ? std::optional<double>(best->h) : std::nullopt);
  };

  // Lower end of the bracket: ADD(lower) < target.
  double lower = spec.h_lo;
  std::optional<double> upper;
  int expansions = 0;
  AddEstimate est = evaluate(lower);
  if (accept(lower, est)) return report;
  while (est.add > spec.target_add_ic) {
    if (expansions++ >= spec.max_expansions) throw fail("bracket does not straddle the target: ADD_IC at h_lo is too large");
    upper = lower;
    lower = lower > 0.0 ? lower / 2.0 : lower - 1.0;
    est = evaluate(lower);
    if (accept(lower, est)) return report;
  }

  // Upper end: climb a geometric ladder so paths are never extended far past the target.
  double h_limit = spec.h_hi;
  while (!upper) {
    const double step = lower > 0.0 ? lower * spec.ladder_ratio : h_limit;
    const double next = std::min(step, h_limit);
    est = evaluate(next);
    if (accept(next, est)) return report;
    if (est.add > spec.target_add_ic) {
      upper = next;
      break;
    }
    lower = next;
    if (next >= h_limit) {
      if (expansions++ >= spec.max_expansions)
        throw fail("bracket does not straddle the target: ADD_IC at h_hi is too small");
      h_limit *= 2.0;
    }
  }

  for (int it = 1; it <= spec.max_iters; ++it) {
    report.iterations = it;
    const double mid = 0.5 * (lower + *upper);
    if (!(mid > lower && mid < *upper)) break;
    est = evaluate(mid);
    if (accept(mid, est)) return report;
    if (est.add < spec.target_add_ic)
      lower = mid;
    else
      upper = mid;
  }
  throw fail("calibration did not reach the tolerance within max_iters");
}

}  // namespace pocd
