#pragma once

// One monitored stream: random sampling during warm-up, then at every step
// filter -> scan -> alarm check -> choose the next subset.

#include "pocd/common.hpp"
#include "pocd/detector.hpp"
#include "pocd/sampler.hpp"
#include "pocd/ssm.hpp"

#include <cstdint>
#include <optional>
#include <string>
#include <string_view>

namespace pocd {

enum class Policy { aucrss, e_aucrss, random };

inline std::string_view to_string(Policy p) {
  switch (p) {
    case Policy::aucrss: return "aucrss";
    case Policy::e_aucrss: return "e_aucrss";
    case Policy::random: return "random";
  }
  return "unknown";
}

inline Policy parse_policy(std::string_view name) {
  if (name == "aucrss") return Policy::aucrss;
  if (name == "e_aucrss") return Policy::e_aucrss;
  if (name == "random") return Policy::random;
  throw ConfigError("unknown policy '" + std::string(name) + "' (expected aucrss, e_aucrss or random)");
}

struct MonitorConfig {
  int m = 2;
  int n0 = 50;  ///< warm-up steps with random subsets and no alarm checks
  WindowConfig window;
  Policy policy = Policy::e_aucrss;
  AlphaPolicy alpha;

  void validate(const ModelParams& params) const {
    window.validate();
    alpha.validate();
    if (m < 1 || m > params.p()) throw ConfigError("sampling.m must satisfy 1 <= m <= p");
    if (n0 < 0) throw ConfigError("sampling.n0 must be >= 0");
  }
};

struct MonitorStep {
  std::int64_t t = 0;  ///< global step (1-based, warm-up included)
  std::int64_t n = 0;  ///< monitoring step (1-based), 0 during warm-up
  ObservationMask mask;
  double t_stat = 0.0;
  std::optional<std::int64_t> tau_hat;
  double alpha = 0.0;
  bool alarm = false;
};

class Monitor {
 public:
  Monitor(const ModelParams& params, MonitorConfig config, std::uint64_t sampling_seed)
      : params_(params),
        config_(std::move(config)),
        filter_(filter_init(params_)),
        detector_(params_.q(), config_.window.m1),
        rng_(make_rng(sampling_seed, streams::kSampling)) {
    params_.validate(/*allow_zero_noise=*/true);
    config_.validate(params_);
    next_mask_ = select_random(params_.p(), config_.m, rng_);
  }

  [[nodiscard]] const ObservationMask& next_mask() const { return next_mask_; }
  [[nodiscard]] const ScanResult& last_scan() const { return scan_; }
  [[nodiscard]] const FilterState& filter() const { return filter_; }
  [[nodiscard]] const Detector& detector() const { return detector_; }
  [[nodiscard]] const MonitorConfig& config() const { return config_; }
  [[nodiscard]] std::int64_t steps() const { return filter_.t; }

  /// Consumes the full row Y_t; only the entries in `next_mask()` are read.
  MonitorStep step(const Vector& y_full) {
    if (y_full.size() != params_.p()) throw ConfigError("observation row has the wrong width");
    const ObservationMask mask = next_mask_;
    const Vector y_obs = y_full(mask.indices());
    return step_observed(mask, y_obs);
  }

  /// Same as `step` when only Y_{Z(t)} is available.
  MonitorStep step_observed(const ObservationMask& mask, const Vector& y_obs) {
    const StepOutput out = filter_update(filter_, params_, mask, y_obs);
    detector_.push(make_step_term(out, params_));

    MonitorStep rec;
    rec.t = out.t;
    rec.mask = mask;
    const bool monitoring = out.t > config_.n0;
    rec.n = monitoring ? out.t - config_.n0 : 0;

    if (!monitoring) {
      next_mask_ = select_random(params_.p(), config_.m, rng_);
      return rec;
    }

    scan_ = detector_.scan(config_.window);
    rec.t_stat = scan_.t_stat;
    rec.tau_hat = scan_.tau_hat;
    rec.alarm = scan_.alarm;
    rec.alpha = config_.alpha.at(scan_.t_stat);
    if (!rec.alarm) next_mask_ = decide(rec.alpha);
    return rec;
  }

 private:
  ObservationMask decide(double alpha) {
    if (config_.policy == Policy::random || !scan_.tau_hat)
      return select_random(params_.p(), config_.m, rng_);
    UcrInputs in;
    in.f_hat = scan_.f_hat;
    in.sigma_f = scan_.sigma_f;
    in.g_next = detector_.g_next(*scan_.tau_hat);
    in.p_pred = filter_.p_pred;
    in.params = &params_;
    in.alpha = alpha;
    if (config_.policy == Policy::aucrss) return select_exhaustive(in, config_.m).mask;
    return select_greedy(in, config_.m).mask;
  }

  ModelParams params_;
  MonitorConfig config_;
  FilterState filter_;
  Detector detector_;
  Rng rng_;
  ObservationMask next_mask_;
  ScanResult scan_;
};

}  // namespace pocd
