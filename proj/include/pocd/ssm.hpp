#pragma once

// Linear Gaussian state-space model, stream simulation with injected mean
// shifts, and the Kalman one-step predictor driven by partial observations.
//
//   X_t = A X_{t-1} + [t >= tau] f + w_t,   w_t ~ N(0, sigma_q^2 I_q)
//   Y_t = C X_t + v_t,                      v_t ~ N(0, sigma_r^2 I_p)
//
// Only the rows Z(t) of Y_t are seen by the filter at step t.

#include "pocd/common.hpp"

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <optional>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

namespace pocd {

struct ModelParams {
  Matrix A;  ///< q x q state transition
  Matrix C;  ///< p x q output map
  double sigma_q = 0.1;
  double sigma_r = 0.1;

  [[nodiscard]] int p() const { return static_cast<int>(C.rows()); }
  [[nodiscard]] int q() const { return static_cast<int>(A.rows()); }

  /// Checks shapes, finiteness and noise levels. Stability is checked separately
  /// (see `require_stable`) because a few callers accept degenerate noise.
  void validate(bool allow_zero_noise = false) const {
    if (A.rows() < 1 || A.rows() != A.cols()) throw ConfigError("model.A must be a non-empty square matrix");
    if (C.rows() < 1 || C.cols() != A.rows()) {
      std::ostringstream os;
      os << "model.C must be p x q with q = " << A.rows() << " (got " << C.rows() << " x " << C.cols() << ")";
      throw ConfigError(os.str());
    }
    if (!A.allFinite() || !C.allFinite()) throw ConfigError("model matrices must be finite");
    const bool bad_q = allow_zero_noise ? !(sigma_q >= 0.0) : !(sigma_q > 0.0);
    const bool bad_r = allow_zero_noise ? !(sigma_r >= 0.0) : !(sigma_r > 0.0);
    if (bad_q || !std::isfinite(sigma_q)) throw ConfigError("model.sigma_q must be positive");
    if (bad_r || !std::isfinite(sigma_r)) throw ConfigError("model.sigma_r must be positive");
  }

  void require_stable() const {
    const double rho = spectral_radius(A);
    if (!(rho < 1.0)) {
      std::ostringstream os;
      os << "model.A is not stable: spectral radius " << rho << " >= 1";
      throw ConfigError(os.str());
    }
  }

  [[nodiscard]] Matrix state_noise_cov() const {
    return sigma_q * sigma_q * Matrix::Identity(q(), q());
  }
};

/// Mean shift f added to the state recursion from step tau on. An empty tau
/// means the stream stays in control.
struct ChangeSpec {
  std::optional<std::int64_t> tau;
  Vector f;

  static ChangeSpec in_control(int q) { return {std::nullopt, Vector::Zero(q)}; }
  static ChangeSpec shift_at(std::int64_t tau, Vector f) { return {tau, std::move(f)}; }

  [[nodiscard]] bool is_in_control() const { return !tau.has_value(); }
  [[nodiscard]] bool active_at(std::int64_t t) const { return tau.has_value() && t >= *tau; }
};

/// Sorted set of observed output rows. Indices are 0-based; file and report
/// formats print them 1-based.
class ObservationMask {
 public:
  ObservationMask() = default;

  ObservationMask(std::vector<int> indices, int p) : indices_(std::move(indices)) {
    std::sort(indices_.begin(), indices_.end());
    if (indices_.empty() || static_cast<int>(indices_.size()) > p)
      throw ConfigError("observation mask must select between 1 and p rows");
    if (std::adjacent_find(indices_.begin(), indices_.end()) != indices_.end())
      throw ConfigError("observation mask indices must be distinct");
    if (indices_.front() < 0 || indices_.back() >= p) throw ConfigError("observation mask index out of range");
  }

  static ObservationMask full(int p) {
    std::vector<int> all(p);
    for (int i = 0; i < p; ++i) all[i] = i;
    return ObservationMask(std::move(all), p);
  }

  [[nodiscard]] const std::vector<int>& indices() const { return indices_; }
  [[nodiscard]] int size() const { return static_cast<int>(indices_.size()); }
  [[nodiscard]] bool contains(int i) const { return std::binary_search(indices_.begin(), indices_.end(), i); }

  [[nodiscard]] std::vector<int> one_based() const {
    std::vector<int> out(indices_);
    for (int& i : out) ++i;
    return out;
  }

  [[nodiscard]] std::string to_string() const {
    std::ostringstream os;
    os << '{';
    for (std::size_t i = 0; i < indices_.size(); ++i) os << (i ? "," : "") << indices_[i] + 1;
    os << '}';
    return os.str();
  }

  friend bool operator==(const ObservationMask&, const ObservationMask&) = default;

 private:
  std::vector<int> indices_;
};

struct FilterState {
  Vector x_pred;   ///< X_{t+1|t}
  Matrix p_pred;   ///< P_{t+1|t}
  Matrix a_tilde;  ///< transition of the last update, A (I - K C_Z)
  Matrix k_gain;   ///< last gain, q x m
  std::int64_t t = 0;
};

struct StepOutput {
  Vector residual;  ///< y_obs - C_Z X_{t|t-1}
  Matrix v_mat;     ///< innovation covariance C_Z P C_Z' + sigma_r^2 I
  ObservationMask mask;
  Matrix a_tilde_used;
  std::int64_t t = 0;  ///< 1-based step index of this update
};

// ---------------------------------------------------------------------------
// Stationary covariance
// ---------------------------------------------------------------------------

struct LyapunovOptions {
  double tol = 1e-12;
  int max_iters = 100000;
};

/// Solves Sigma = A Sigma A' + Q by fixed-point iteration started at Q.
inline Matrix stationary_covariance(const Matrix& a, const Matrix& q_cov, LyapunovOptions opt = {}) {
  Matrix sigma = q_cov;
  Matrix next(sigma.rows(), sigma.cols());
  for (int it = 0; it < opt.max_iters; ++it) {
    next.noalias() = a * sigma * a.transpose();
    next += q_cov;
    const double delta = (next - sigma).cwiseAbs().maxCoeff();
    const double scale = std::max(1.0, next.cwiseAbs().maxCoeff());
    sigma.swap(next);
    if (delta <= opt.tol * scale) {
      symmetrize(sigma);
      return sigma;
    }
  }
  throw NumericalError("Lyapunov fixed-point iteration did not converge");
}

inline Matrix stationary_covariance(const ModelParams& params, LyapunovOptions opt = {}) {
  return stationary_covariance(params.A, params.state_noise_cov(), opt);
}

// ---------------------------------------------------------------------------
// Simulation
// ---------------------------------------------------------------------------

/// Draws one full observation per call. X_{-1} comes from the stationary law,
/// so the first emitted state X_0 is already in steady state.
class StreamSimulator {
 public:
  StreamSimulator(const ModelParams& params, ChangeSpec change, std::uint64_t seed)
      : params_(params), change_(std::move(change)), rng_(make_rng(seed, streams::kProcessNoise)) {
    params_.validate(/*allow_zero_noise=*/true);
    params_.require_stable();
    if (change_.f.size() != params_.q()) throw ConfigError("change.f must have length q");
    if (!change_.f.allFinite()) throw ConfigError("change.f must be finite");
    const Matrix root = psd_sqrt(stationary_covariance(params_));
    x_ = root * draw(params_.q());
    y_.resize(params_.p());
  }

  /// Advances to the next time index and returns Y_t.
  const Vector& next() {
    Vector x_new = params_.A * x_;
    if (change_.active_at(t_)) x_new += change_.f;
    if (params_.sigma_q > 0.0) x_new += params_.sigma_q * draw(params_.q());
    x_ = std::move(x_new);
    y_.noalias() = params_.C * x_;
    if (params_.sigma_r > 0.0) y_ += params_.sigma_r * draw(params_.p());
    ++t_;
    return y_;
  }

  [[nodiscard]] const Vector& state() const { return x_; }
  [[nodiscard]] std::int64_t emitted() const { return t_; }
  [[nodiscard]] const ModelParams& params() const { return params_; }

 private:
  Vector draw(int n) {
    Vector z(n);
    for (int i = 0; i < n; ++i) z[i] = normal_(rng_);
    return z;
  }

  ModelParams params_;
  ChangeSpec change_;
  Rng rng_;
  std::normal_distribution<double> normal_{0.0, 1.0};
  Vector x_;
  Vector y_;
  std::int64_t t_ = 0;
};

struct SimulatedStream {
  Matrix observations;  ///< horizon x p
  Matrix states;        ///< horizon x q
};

/// Simulates `horizon` steps indexed t = 0..horizon-1; the shift is active for t >= change.tau.
inline SimulatedStream simulate_stream(const ModelParams& params, const ChangeSpec& change, std::int64_t horizon,
                                       std::uint64_t seed) {
  if (horizon < 1) throw ConfigError("horizon must be >= 1");
  StreamSimulator sim(params, change, seed);
  SimulatedStream out{Matrix(horizon, params.p()), Matrix(horizon, params.q())};
  for (std::int64_t t = 0; t < horizon; ++t) {
    out.observations.row(t) = sim.next().transpose();
    out.states.row(t) = sim.state().transpose();
  }
  return out;
}

// ---------------------------------------------------------------------------
// Partially observable Kalman predictor
// ---------------------------------------------------------------------------

inline constexpr double kInnovationRcondFloor = 1e-12;

inline FilterState filter_init(const ModelParams& params) {
  params.validate(/*allow_zero_noise=*/true);
  params.require_stable();
  FilterState s;
  s.x_pred = Vector::Zero(params.q());
  s.p_pred = stationary_covariance(params);
  s.a_tilde = params.A;
  s.k_gain = Matrix::Zero(params.q(), 0);
  s.t = 0;
  return s;
}

/// Rows of C selected by the mask.
inline Matrix masked_rows(const Matrix& c, const ObservationMask& mask) { return c(mask.indices(), Eigen::all); }

/// In-place form of `filter_step`: consumes y_obs = Y_{Z(t)} and advances the state to t+1.
inline StepOutput filter_update(FilterState& state, const ModelParams& params, const ObservationMask& mask,
                                const Vector& y_obs) {
  const int m = mask.size();
  if (y_obs.size() != m) throw ConfigError("observation length does not match mask size");
  if (!mask.indices().empty() && mask.indices().back() >= params.p()) throw ConfigError("mask index exceeds p");
  const std::int64_t step = state.t + 1;

  const Matrix cz = masked_rows(params.C, mask);
  const Matrix pct = state.p_pred * cz.transpose();  // q x m
  Matrix v = cz * pct;
  v.diagonal().array() += params.sigma_r * params.sigma_r;
  symmetrize(v);

  Eigen::LLT<Matrix> llt(v);
  if (llt.info() != Eigen::Success || llt.rcond() < kInnovationRcondFloor) {
    std::ostringstream os;
    os << "innovation covariance is numerically singular at step " << step << " (mask " << mask.to_string() << ")";
    throw NumericalError(os.str());
  }

  // K = P C_Z' V^{-1}, solved rather than inverted.
  Matrix k = llt.solve(pct.transpose()).transpose();  // q x m
  Matrix a_tilde = params.A;
  a_tilde.noalias() -= params.A * (k * cz);

  StepOutput out;
  out.residual = y_obs - cz * state.x_pred;
  out.v_mat = std::move(v);
  out.mask = mask;
  out.t = step;

  Vector x_next = a_tilde * state.x_pred;
  x_next.noalias() += params.A * (k * y_obs);
  // Joseph form: A [(I - K C_Z) P (I - K C_Z)' + K R K'] A' + Q. The K R K' term
  // keeps the recursion equal to the textbook predictor and P positive semidefinite.
  const Matrix ak = params.A * k;
  Matrix p_next = a_tilde * state.p_pred * a_tilde.transpose();
  p_next.noalias() += (params.sigma_r * params.sigma_r) * (ak * ak.transpose());
  p_next.diagonal().array() += params.sigma_q * params.sigma_q;
  symmetrize(p_next);

  state.x_pred = std::move(x_next);
  state.p_pred = std::move(p_next);
  state.k_gain = std::move(k);
  state.a_tilde = std::move(a_tilde);
  state.t = step;
  out.a_tilde_used = state.a_tilde;
  return out;
}

/// Pure form: returns the advanced state together with the step's residual products.
inline std::pair<FilterState, StepOutput> filter_step(FilterState state, const ModelParams& params,
                                                      const ObservationMask& mask, const Vector& y_obs) {
  StepOutput out = filter_update(state, params, mask, y_obs);
  return {std::move(state), std::move(out)};
}

}  // namespace pocd
