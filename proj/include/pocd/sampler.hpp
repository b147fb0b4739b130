#pragma once

// Upper-confidence-region sensor selection.
//
// For a candidate subset Z the sampler scores
//
//   max_f  f' Omega_Z f   s.t.  (f - f_hat)' Sigma_f^{-1} (f - f_hat) = chi2_{1-alpha}(q)
//
// with Omega_Z = G' C_Z' V^{-1} C_Z G and V = C_Z P C_Z' + sigma_r^2 I, and
// observes the subset with the largest score next.

#include "pocd/common.hpp"
#include "pocd/ssm.hpp"

#include <boost/math/distributions/chi_squared.hpp>

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <optional>
#include <sstream>
#include <variant>
#include <vector>

namespace pocd {

/// Quantile of the chi-square law with `df` degrees of freedom at probability `prob`.
inline double chi_squared_quantile(double prob, double df) {
  if (!(df > 0.0)) throw ConfigError("chi-square degrees of freedom must be positive");
  if (prob <= 0.0) return 0.0;
  if (prob >= 1.0) return std::numeric_limits<double>::infinity();
  return boost::math::quantile(boost::math::chi_squared_distribution<double>(df), prob);
}

inline double chi_squared_cdf(double x, double df) {
  if (x <= 0.0) return 0.0;
  return boost::math::cdf(boost::math::chi_squared_distribution<double>(df), x);
}

/// Squared radius of the (1 - alpha) confidence ellipsoid in q dimensions.
inline double confidence_radius2(double alpha, int q) { return chi_squared_quantile(1.0 - alpha, q); }

// ---------------------------------------------------------------------------
// Exploration level
// ---------------------------------------------------------------------------

struct AlphaSchedule {
  double d = 15.0;
  double l = 6.67;
  double alpha_min = 0.1;
  double alpha_max = 0.85;

  void validate() const {
    if (!(l > 0.0)) throw ConfigError("alpha schedule requires l > 0");
    if (!(alpha_min > 0.0 && alpha_min <= alpha_max && alpha_max < 1.0))
      throw ConfigError("alpha schedule requires 0 < alpha_min <= alpha_max < 1");
  }
};

/// Segment-wise linear exploration level: min(max((T - d)/l, 0) + alpha_min, alpha_max).
inline double adaptive_alpha(double t_stat, const AlphaSchedule& s) {
  return std::min(std::max((t_stat - s.d) / s.l, 0.0) + s.alpha_min, s.alpha_max);
}

/// Either a constant alpha or a schedule driven by the current statistic.
class AlphaPolicy {
 public:
  AlphaPolicy() : rule_(AlphaSchedule{}) {}
  explicit AlphaPolicy(double constant) : rule_(constant) {}
  explicit AlphaPolicy(AlphaSchedule schedule) : rule_(schedule) {}

  [[nodiscard]] double at(double t_stat) const {
    if (const auto* c = std::get_if<double>(&rule_)) return *c;
    return adaptive_alpha(t_stat, std::get<AlphaSchedule>(rule_));
  }

  [[nodiscard]] bool is_constant() const { return std::holds_alternative<double>(rule_); }
  [[nodiscard]] const std::variant<double, AlphaSchedule>& rule() const { return rule_; }

  void validate() const {
    if (const auto* c = std::get_if<double>(&rule_)) {
      if (!(*c > 0.0 && *c < 1.0)) throw ConfigError("constant alpha must lie in (0, 1)");
    } else {
      std::get<AlphaSchedule>(rule_).validate();
    }
  }

 private:
  std::variant<double, AlphaSchedule> rule_;
};

// ---------------------------------------------------------------------------
// Inputs and single-subset pieces
// ---------------------------------------------------------------------------

struct UcrInputs {
  Vector f_hat;
  Matrix sigma_f;  ///< covariance of f_hat, positive definite
  Matrix g_next;   ///< G(n+1, tau_hat)
  Matrix p_pred;   ///< P_{n+1|n}
  const ModelParams* params = nullptr;
  double alpha = 0.1;
};

/// Omega_Z = G' C_Z' V^{-1} C_Z G with V = C_Z P C_Z' + sigma_r^2 I.
inline Matrix omega(const ObservationMask& mask, const Matrix& g_next, const Matrix& p_pred,
                    const ModelParams& params) {
  const Matrix cz = masked_rows(params.C, mask);
  Matrix v = cz * p_pred * cz.transpose();
  v.diagonal().array() += params.sigma_r * params.sigma_r;
  symmetrize(v);
  Eigen::LLT<Matrix> llt(v);
  if (llt.info() != Eigen::Success || llt.rcond() < 1e-12)
    throw NumericalError("predicted innovation covariance is singular for mask " + mask.to_string());
  const Matrix lcg = llt.matrixL().solve(cz * g_next);
  Matrix out = lcg.transpose() * lcg;
  symmetrize(out);
  return out;
}

struct EllipsoidSolution {
  Vector f_star;
  double score = 0.0;
  double lambda = 0.0;      ///< Lagrange scalar of the secular equation
  bool degenerate = false;  ///< solved by the top-eigenvector rule
};

namespace detail {

inline constexpr double kOmegaNegativeTol = 1e-10;

/// Root of sum_i x_i^2 / (lambda_i + lam)^2 = r2 on lam < -max(lambda_i).
/// Assumes some x_i with lambda_i == max is nonzero.
inline double secular_root(const Vector& lambdas, const Vector& x, double r2) {
  const double top = lambdas.maxCoeff();
  const auto phi = [&](double lam) {
    double acc = 0.0;
    for (Eigen::Index i = 0; i < x.size(); ++i) {
      if (x[i] == 0.0) continue;
      const double t = x[i] / (lambdas[i] + lam);
      acc += t * t;
    }
    return acc;
  };
  // Every |lambda_i + lam| >= ||x|| / sqrt(r2) at the lower end, so phi <= r2 there.
  double lo = -top - x.norm() / std::sqrt(r2);
  double hi = -top;
  for (int it = 0; it < 400; ++it) {
    const double mid = 0.5 * (lo + hi);
    if (mid == lo || mid == hi) break;
    if (phi(mid) > r2)
      hi = mid;
    else
      lo = mid;
    if (hi - lo <= 1e-14 * std::max(1.0, std::abs(lo))) break;
  }
  const double root = 0.5 * (lo + hi);
  if (!std::isfinite(root)) throw NumericalError("secular equation root-finding failed");
  const double rel = std::abs(phi(root) - r2) / r2;
  if (!(rel < 1e-6)) {
    // Fall back to whichever bracket end is closer.
    const double a = std::abs(phi(lo) - r2);
    const double b = std::abs(phi(hi) - r2);
    const double best = a <= b ? lo : hi;
    if (!(std::abs(phi(best) - r2) / r2 < 1e-6)) throw NumericalError("secular equation did not converge");
    return best;
  }
  return root;
}

/// Given eigenvalues, transformed centre y and radius, returns (lambda, f_tilde, degenerate).
struct SecularSolution {
  double lambda;
  Vector f_tilde;
  bool degenerate;
};

inline SecularSolution solve_secular(const Vector& lambdas, const Vector& y, double r2) {
  const Eigen::Index n = lambdas.size();
  const double top = lambdas.maxCoeff();
  const double eig_tol = 1e-12 * std::max(1.0, std::abs(top));
  const Vector x = lambdas.cwiseProduct(y);
  double top_x2 = 0.0;
  Eigen::Index top_index = 0;
  for (Eigen::Index i = 0; i < n; ++i) {
    if (lambdas[i] >= top - eig_tol) {
      top_x2 += x[i] * x[i];
      top_index = i;  // last index of the top group
    }
  }
  const double x_norm = x.norm();
  const bool top_silent = top_x2 <= (1e-24 * x_norm * x_norm) || x_norm == 0.0;

  if (top_silent) {
    double rest = 0.0;
    Vector ft = Vector::Zero(n);
    for (Eigen::Index i = 0; i < n; ++i) {
      if (lambdas[i] >= top - eig_tol) continue;
      ft[i] = -x[i] / (lambdas[i] - top);
      rest += ft[i] * ft[i];
    }
    if (rest <= r2) {
      ft[top_index] = std::sqrt(r2 - rest);
      return {-top, ft, true};
    }
  }
  const double lam = secular_root(lambdas, x, r2);
  Vector ft = Vector::Zero(n);
  for (Eigen::Index i = 0; i < n; ++i)
    if (x[i] != 0.0) ft[i] = -x[i] / (lambdas[i] + lam);
  return {lam, ft, false};
}

}  // namespace detail

/// Maximizes f' Omega f on the boundary of the ellipsoid centred at f_hat with
/// shape sigma_f and squared radius r2 (Cholesky + congruent eigendecomposition).
inline EllipsoidSolution solve_ellipsoid_max(const Vector& f_hat, const Matrix& sigma_f, const Matrix& omega_z,
                                             double r2) {
  const Eigen::Index q = f_hat.size();
  if (sigma_f.rows() != q || omega_z.rows() != q) throw ConfigError("ellipsoid inputs have inconsistent sizes");
  Eigen::LLT<Matrix> chol(sigma_f);
  if (chol.info() != Eigen::Success) throw NumericalError("Sigma_f is not positive definite");
  const Matrix b = chol.matrixL();

  Matrix m = b.transpose() * omega_z * b;
  symmetrize(m);
  Eigen::SelfAdjointEigenSolver<Matrix> es(m);
  if (es.info() != Eigen::Success) throw NumericalError("eigendecomposition failed");
  Vector lambdas = es.eigenvalues();
  const double scale = std::max(1.0, lambdas.cwiseAbs().maxCoeff());
  if (lambdas.minCoeff() < -detail::kOmegaNegativeTol * scale) throw NumericalError("Omega is not positive semidefinite");
  lambdas = lambdas.cwiseMax(0.0);

  EllipsoidSolution sol;
  if (!(r2 > 0.0)) {
    sol.f_star = f_hat;
    sol.score = f_hat.dot(omega_z * f_hat);
    sol.lambda = -std::numeric_limits<double>::infinity();
    return sol;
  }
  // H = B E, with E the eigenvectors; H^{-1} f_hat = E' B^{-1} f_hat.
  const Matrix h = b * es.eigenvectors();
  const Vector y = es.eigenvectors().transpose() * chol.matrixL().solve(f_hat);
  const auto sec = detail::solve_secular(lambdas, y, r2);
  sol.f_star = h * sec.f_tilde + f_hat;
  sol.score = sol.f_star.dot(omega_z * sol.f_star);
  sol.lambda = sec.lambda;
  sol.degenerate = sec.degenerate;
  return sol;
}

inline EllipsoidSolution solve_ellipsoid_max(const UcrInputs& in, const Matrix& omega_z) {
  return solve_ellipsoid_max(in.f_hat, in.sigma_f, omega_z, confidence_radius2(in.alpha, static_cast<int>(in.f_hat.size())));
}

// ---------------------------------------------------------------------------
// Subset selection
// ---------------------------------------------------------------------------

struct SamplingDecision {
  ObservationMask mask;
  double score = 0.0;
  Vector f_star;
  double alpha_used = 0.0;
};

/// Shared per-decision factorizations. Scores a subset through the m x m
/// eigenproblem of V^{-1/2} C_Z G L, which has the same nonzero spectrum as
/// L' Omega_Z L; falls back to the full q x q route in degenerate cases.
class UcrScorer {
 public:
  explicit UcrScorer(const UcrInputs& in) : in_(in) {
    if (in.params == nullptr) throw ConfigError("UcrInputs.params is not set");
    if (!(in.alpha > 0.0 && in.alpha < 1.0)) throw ConfigError("alpha must lie in (0, 1)");
    const ModelParams& pm = *in.params;
    q_ = pm.q();
    if (in.f_hat.size() != q_ || in.sigma_f.rows() != q_ || in.g_next.rows() != q_ || in.p_pred.rows() != q_)
      throw ConfigError("UcrInputs have inconsistent dimensions");
    chol_.compute(in.sigma_f);
    if (chol_.info() != Eigen::Success) throw NumericalError("Sigma_f is not positive definite");
    l_ = chol_.matrixL();
    y0_ = chol_.matrixL().solve(in.f_hat);
    cg_ = pm.C * in.g_next;
    cgl_ = cg_ * l_;
    cpc_ = pm.C * in.p_pred * pm.C.transpose();
    r2_ = confidence_radius2(in.alpha, q_);
  }

  [[nodiscard]] double radius2() const { return r2_; }

  /// Score of one subset; fills f_star when requested.
  double score(const ObservationMask& mask, Vector* f_star = nullptr) const {
    const ModelParams& pm = *in_.params;
    const auto& idx = mask.indices();
    const int m = mask.size();
    Matrix v = cpc_(idx, idx);
    v.diagonal().array() += pm.sigma_r * pm.sigma_r;
    Eigen::LLT<Matrix> llt(v);
    if (llt.info() != Eigen::Success || llt.rcond() < 1e-12)
      throw NumericalError("predicted innovation covariance is singular for mask " + mask.to_string());
    const Matrix w = llt.matrixL().solve(cgl_(idx, Eigen::all));  // m x q

    if (!(r2_ > 0.0)) {
      const Vector proj = llt.matrixL().solve(cg_(idx, Eigen::all) * in_.f_hat);
      if (f_star) *f_star = in_.f_hat;
      return proj.squaredNorm();
    }

    Matrix s = w * w.transpose();
    Eigen::SelfAdjointEigenSolver<Matrix> es(s);
    const Vector& mu = es.eigenvalues();
    const double mu_top = mu.maxCoeff();
    if (!(mu_top > 0.0)) return full_route(mask, f_star);
    const double floor = 1e-13 * mu_top;
    int kept = 0;
    for (int i = 0; i < m; ++i) kept += mu[i] > floor ? 1 : 0;
    Vector lambdas(kept), y(kept);
    Matrix dirs(q_, kept);  // orthonormal eigenvectors of W'W with nonzero eigenvalue
    const Vector wy = w * y0_;
    for (int i = 0, j = 0; i < m; ++i) {
      if (!(mu[i] > floor)) continue;
      const double root = std::sqrt(mu[i]);
      lambdas[j] = mu[i];
      y[j] = es.eigenvectors().col(i).dot(wy) / root;
      if (f_star) dirs.col(j) = w.transpose() * es.eigenvectors().col(i) / root;
      ++j;
    }
    const auto sec = detail::solve_secular(lambdas, y, r2_);
    if (sec.degenerate) return full_route(mask, f_star);
    const Vector shifted = y + sec.f_tilde;
    if (f_star) *f_star = in_.f_hat + l_ * (dirs * sec.f_tilde);
    return (lambdas.array() * shifted.array().square()).sum();
  }

 private:
  double full_route(const ObservationMask& mask, Vector* f_star) const {
    const Matrix om = omega(mask, in_.g_next, in_.p_pred, *in_.params);
    const auto sol = solve_ellipsoid_max(in_.f_hat, in_.sigma_f, om, r2_);
    if (f_star) *f_star = sol.f_star;
    return sol.score;
  }

  const UcrInputs& in_;
  int q_ = 0;
  Eigen::LLT<Matrix> chol_;
  Matrix l_;
  Vector y0_;
  Matrix cg_;
  Matrix cgl_;
  Matrix cpc_;
  double r2_ = 0.0;
};

namespace detail {

inline SamplingDecision finish(const UcrScorer& scorer, const UcrInputs& in, std::vector<int> best, int p) {
  SamplingDecision d;
  d.mask = ObservationMask(std::move(best), p);
  d.score = scorer.score(d.mask, &d.f_star);
  d.alpha_used = in.alpha;
  return d;
}

inline void check_subset_size(int m, int p) {
  if (m < 1 || m > p) throw ConfigError("subset size m must satisfy 1 <= m <= p");
}

}  // namespace detail

/// Index set maximizing score(mask) over all C(p, m) subsets, visited in
/// lexicographic order; the first subset reaching the maximum wins.
template <class ScoreFn>
std::vector<int> search_exhaustive(int p, int m, ScoreFn&& score) {
  detail::check_subset_size(m, p);
  std::vector<int> idx(m);
  std::iota(idx.begin(), idx.end(), 0);
  std::vector<int> best;
  double best_score = -std::numeric_limits<double>::infinity();
  while (true) {
    const double s = score(ObservationMask(idx, p));
    if (s > best_score) {
      best_score = s;
      best = idx;
    }
    int i = m - 1;
    while (i >= 0 && idx[i] == p - m + i) --i;
    if (i < 0) break;
    ++idx[i];
    for (int j = i + 1; j < m; ++j) idx[j] = idx[j - 1] + 1;
  }
  return best;
}

/// Greedy growth: m rounds, each adding the row that maximizes the score of
/// the enlarged subset (smallest row index on ties).
template <class ScoreFn>
std::vector<int> search_greedy(int p, int m, ScoreFn&& score) {
  detail::check_subset_size(m, p);
  std::vector<int> chosen;
  std::vector<bool> used(p, false);
  for (int round = 0; round < m; ++round) {
    int best_k = -1;
    double best_score = -std::numeric_limits<double>::infinity();
    for (int k = 0; k < p; ++k) {
      if (used[k]) continue;
      std::vector<int> trial = chosen;
      trial.push_back(k);
      std::sort(trial.begin(), trial.end());
      const double s = score(ObservationMask(std::move(trial), p));
      if (s > best_score) {
        best_score = s;
        best_k = k;
      }
    }
    used[best_k] = true;
    chosen.push_back(best_k);
  }
  std::sort(chosen.begin(), chosen.end());
  return chosen;
}

namespace detail {

inline auto checked_scorer(const UcrScorer& scorer) {
  return [&scorer](const ObservationMask& mask) {
    try {
      return scorer.score(mask);
    } catch (const NumericalError& e) {
      throw NumericalError(std::string(e.what()) + " (while scoring subset " + mask.to_string() + ")");
    }
  };
}

}  // namespace detail

/// AUCRSS decision: exhaustive search over all subsets.
inline SamplingDecision select_exhaustive(const UcrInputs& in, int m) {
  const int p = in.params ? in.params->p() : 0;
  detail::check_subset_size(m, p);
  UcrScorer scorer(in);
  return detail::finish(scorer, in, search_exhaustive(p, m, detail::checked_scorer(scorer)), p);
}

/// E-AUCRSS decision: greedy growth of the subset.
inline SamplingDecision select_greedy(const UcrInputs& in, int m) {
  const int p = in.params ? in.params->p() : 0;
  detail::check_subset_size(m, p);
  UcrScorer scorer(in);
  return detail::finish(scorer, in, search_greedy(p, m, detail::checked_scorer(scorer)), p);
}

/// Uniformly random m-subset of {0..p-1} (partial Fisher-Yates).
inline ObservationMask select_random(int p, int m, Rng& rng) {
  detail::check_subset_size(m, p);
  std::vector<int> pool(p);
  std::iota(pool.begin(), pool.end(), 0);
  for (int i = 0; i < m; ++i) {
    std::uniform_int_distribution<int> pick(i, p - 1);
    std::swap(pool[i], pool[pick(rng)]);
  }
  pool.resize(m);
  return ObservationMask(std::move(pool), p);
}

}  // namespace pocd
