#pragma once

// Windowed GLRT for a mean shift in the state recursion.
//
// Candidate k means "the shift is present from step k+1 on". For each live
// candidate the detector keeps
//
//   G(n,k) = A~_{n-1} G(n-1,k) + I,   G(k+1,k) = I
//   s(k)   = sum_{t=k+1..n} G(t,k)' C_Z' V_t^{-1} r_t
//   M(k)   = sum_{t=k+1..n} G(t,k)' C_Z' V_t^{-1} C_Z G(t,k)
//
// so that f_hat = M^{-1} s and the statistic is s' M^{-1} s.

#include "pocd/common.hpp"
#include "pocd/ssm.hpp"

#include <cstdint>
#include <limits>
#include <optional>
#include <vector>

namespace pocd {

struct WindowConfig {
  int m1 = 50;  ///< candidates are at most m1-1 steps old
  int m2 = 5;   ///< and at least m2+1 steps old
  double h = std::numeric_limits<double>::infinity();

  void validate() const {
    if (m2 < 0 || m1 <= m2) throw ConfigError("window requires 0 <= m2 < m1");
    if (std::isnan(h)) throw ConfigError("window.h must be a number");
  }
};

/// Per-step factors of the accumulated sums. `w_factor` F satisfies w = F F'.
struct StepTerm {
  Matrix a_tilde;
  Vector u;
  Matrix w;
  Matrix w_factor;
  std::int64_t t = 0;
};

inline StepTerm make_step_term(const StepOutput& out, const ModelParams& params) {
  Eigen::LLT<Matrix> llt(out.v_mat);
  if (llt.info() != Eigen::Success) throw NumericalError("innovation covariance is not positive definite");
  const Matrix cz = masked_rows(params.C, out.mask);
  // F = (L^{-1} C_Z)' so that F F' = C_Z' V^{-1} C_Z.
  Matrix lc = llt.matrixL().solve(cz);
  Vector lr = llt.matrixL().solve(out.residual);
  StepTerm term;
  term.a_tilde = out.a_tilde_used;
  term.w_factor = lc.transpose();
  term.u = term.w_factor * lr;
  term.w = term.w_factor * term.w_factor.transpose();
  term.t = out.t;
  return term;
}

struct ShiftEstimate {
  Vector f_hat;
  Matrix sigma_f;
};

struct ScanResult {
  double t_stat = 0.0;
  std::optional<std::int64_t> tau_hat;  ///< winning candidate k
  Vector f_hat;
  Matrix sigma_f;
  bool alarm = false;
  int valid_candidates = 0;
  int skipped_candidates = 0;
};

/// Statistic of one candidate; empty when M(k) is rank deficient.
struct CandidateStat {
  std::int64_t k = 0;
  std::optional<double> stat;
};

/// Argmax over valid candidates with ties going to the most recent k.
/// T_n is 0 when no candidate is valid; the alarm needs T_n > h.
inline ScanResult pick_candidate(const std::vector<CandidateStat>& stats, double h) {
  ScanResult res;
  double best_stat = -1.0;
  for (const auto& c : stats) {
    if (!c.stat) {
      ++res.skipped_candidates;
      continue;
    }
    ++res.valid_candidates;
    if (*c.stat > best_stat || (*c.stat == best_stat && res.tau_hat && c.k > *res.tau_hat)) {
      best_stat = *c.stat;
      res.tau_hat = c.k;
    }
  }
  if (res.tau_hat) res.t_stat = std::max(0.0, best_stat);
  res.alarm = res.t_stat > h;
  return res;
}

/// Reciprocal-condition floor below which M(k) is treated as uninformative.
inline constexpr double kShiftRcondFloor = 1e-10;

class Detector {
 public:
  struct Candidate {
    std::int64_t k = -1;
    Matrix g;  ///< G(n,k)
    Vector s;
    Matrix m;
  };

  Detector(int q, int m1) : q_(q), m1_(m1), slots_(static_cast<std::size_t>(std::max(m1, 1))) {
    if (q < 1) throw ConfigError("detector needs q >= 1");
    if (m1 < 1) throw ConfigError("detector needs m1 >= 1");
    for (auto& c : slots_) {
      c.g = Matrix::Identity(q, q);
      c.s = Vector::Zero(q);
      c.m = Matrix::Zero(q, q);
    }
    scratch_ = Matrix(q, q);
    gtf_ = Matrix(q, 1);
    chol_ = Matrix::Zero(q, q);
    work_ = Vector::Zero(q);
  }

  /// Lower Cholesky factor of a symmetric matrix. Fails when a pivot is not
  /// positive or when the conditioning estimate min(L_ii^2) / max(M_ii) falls
  /// below `kShiftRcondFloor`.
  static bool factor(const Matrix& m, Matrix& l) {
    const Eigen::Index q = m.rows();
    double max_diag = 0.0;
    for (Eigen::Index i = 0; i < q; ++i) max_diag = std::max(max_diag, m(i, i));
    if (!(max_diag > 0.0)) return false;
    double min_pivot = std::numeric_limits<double>::infinity();
    for (Eigen::Index j = 0; j < q; ++j) {
      double d = m(j, j);
      for (Eigen::Index k = 0; k < j; ++k) d -= l(j, k) * l(j, k);
      if (!(d > 0.0)) return false;
      min_pivot = std::min(min_pivot, d);
      const double ljj = std::sqrt(d);
      l(j, j) = ljj;
      for (Eigen::Index i = j + 1; i < q; ++i) {
        double v = m(i, j);
        for (Eigen::Index k = 0; k < j; ++k) v -= l(i, k) * l(j, k);
        l(i, j) = v / ljj;
      }
    }
    return min_pivot / max_diag >= kShiftRcondFloor;
  }

  /// Steps absorbed so far; the next term must carry t = n() + 1.
  [[nodiscard]] std::int64_t n() const { return n_; }
  [[nodiscard]] int q() const { return q_; }
  [[nodiscard]] int m1() const { return m1_; }

  /// Most recent transition A~_n (used to propagate G one step ahead).
  [[nodiscard]] const Matrix& last_a_tilde() const { return last_a_tilde_; }

  void push(const StepTerm& term) {
    if (term.t != n_ + 1) throw ConfigError("detector terms must arrive in step order");
    const std::int64_t n = term.t;
    const std::int64_t oldest = std::max<std::int64_t>(0, n - m1_ + 1);

    for (std::int64_t k = oldest; k <= n - 2; ++k) {
      Candidate& c = slot(k);
      small_gemm(last_a_tilde_, c.g, scratch_);
      c.g.swap(scratch_);
      c.g.diagonal().array() += 1.0;
    }
    if (n - 1 >= oldest) {
      Candidate& fresh = slot(n - 1);
      fresh.k = n - 1;
      fresh.g.setIdentity();
      fresh.s.setZero();
      fresh.m.setZero();
    }
    const int q = q_;
    const int r = static_cast<int>(term.w_factor.cols());
    gtf_.resize(q, r);
    for (std::int64_t k = oldest; k <= n - 1; ++k) {
      Candidate& c = slot(k);
      // s += G' u and (G' F) for the rank-r update M += (G'F)(G'F)'.
      const double* g = c.g.data();
      for (int j = 0; j < q; ++j) {
        const double* gj = g + j * q;
        double acc = 0.0;
        for (int i = 0; i < q; ++i) acc += gj[i] * term.u[i];
        c.s[j] += acc;
        for (int l = 0; l < r; ++l) {
          const double* fl = term.w_factor.data() + l * q;
          double v = 0.0;
          for (int i = 0; i < q; ++i) v += gj[i] * fl[i];
          gtf_(j, l) = v;
        }
      }
      double* mm = c.m.data();
      for (int l = 0; l < r; ++l) {
        const double* col = gtf_.data() + l * q;
        for (int j = 0; j < q; ++j) {
          const double cj = col[j];
          double* mj = mm + j * q;
          for (int i = 0; i < q; ++i) mj[i] += col[i] * cj;
        }
      }
    }
    last_a_tilde_ = term.a_tilde;
    n_ = n;
  }

  /// Live candidate k, or null when k is outside the retained window.
  [[nodiscard]] const Candidate* candidate(std::int64_t k) const {
    if (k < 0 || k > n_ - 1 || k < n_ - m1_ + 1) return nullptr;
    const Candidate& c = slots_[static_cast<std::size_t>(k % m1_)];
    return c.k == k ? &c : nullptr;
  }

  /// f_hat = M^{-1} s and Sigma_f = M^{-1}; empty when M(k) is rank deficient.
  [[nodiscard]] std::optional<ShiftEstimate> estimate_shift(std::int64_t k) const {
    const Candidate* c = candidate(k);
    if (c == nullptr) return std::nullopt;
    Matrix l = Matrix::Zero(q_, q_);
    if (!factor(c->m, l)) return std::nullopt;
    const auto lower = l.triangularView<Eigen::Lower>();
    const Matrix l_inv = lower.solve(Matrix::Identity(q_, q_));
    ShiftEstimate est;
    est.sigma_f = l_inv.transpose() * l_inv;
    symmetrize(est.sigma_f);
    est.f_hat = est.sigma_f * c->s;
    return est;
  }

  /// l(n, k, f_hat) = s' M^{-1} s.
  [[nodiscard]] std::optional<double> glrt(std::int64_t k) const {
    const Candidate* c = candidate(k);
    if (c == nullptr) return std::nullopt;
    return statistic(*c);
  }

  /// Maximizes the statistic over n - m1 < k < n - m2; ties go to the most recent k.
  [[nodiscard]] ScanResult scan(const WindowConfig& window) const {
    const std::int64_t lo = std::max<std::int64_t>(0, n_ - window.m1 + 1);
    const std::int64_t hi = n_ - window.m2 - 1;
    stats_.clear();
    for (std::int64_t k = lo; k <= hi; ++k) {
      const Candidate* c = candidate(k);
      if (c == nullptr) continue;
      stats_.push_back({k, statistic(*c)});
    }
    ScanResult res = pick_candidate(stats_, window.h);
    if (res.tau_hat) {
      const auto est = estimate_shift(*res.tau_hat);
      res.f_hat = est->f_hat;
      res.sigma_f = est->sigma_f;
    }
    return res;
  }

  /// G(n+1, k) = A~_n G(n, k) + I.
  [[nodiscard]] Matrix g_next(std::int64_t k) const {
    const Candidate* c = candidate(k);
    if (c == nullptr) throw ConfigError("g_next requested for a candidate outside the window");
    Matrix g = last_a_tilde_ * c->g;
    g.diagonal().array() += 1.0;
    return g;
  }

 private:
  Candidate& slot(std::int64_t k) { return slots_[static_cast<std::size_t>(k % m1_)]; }

  /// out = a * b for small square column-major matrices.
  static void small_gemm(const Matrix& a, const Matrix& b, Matrix& out) {
    const Eigen::Index q = a.rows();
    const double* pa = a.data();
    const double* pb = b.data();
    double* po = out.data();
    for (Eigen::Index j = 0; j < q; ++j) {
      double* oj = po + j * q;
      for (Eigen::Index i = 0; i < q; ++i) oj[i] = 0.0;
      for (Eigen::Index l = 0; l < q; ++l) {
        const double blj = pb[j * q + l];
        const double* al = pa + l * q;
        for (Eigen::Index i = 0; i < q; ++i) oj[i] += al[i] * blj;
      }
    }
  }

  std::optional<double> statistic(const Candidate& c) const {
    if (!factor(c.m, chol_)) return std::nullopt;
    // s' M^{-1} s = |L^{-1} s|^2
    const int q = q_;
    double acc = 0.0;
    for (int i = 0; i < q; ++i) {
      double v = c.s[i];
      for (int j = 0; j < i; ++j) v -= chol_(i, j) * work_[j];
      work_[i] = v / chol_(i, i);
      acc += work_[i] * work_[i];
    }
    return acc;
  }

  int q_;
  int m1_;
  std::vector<Candidate> slots_;
  Matrix last_a_tilde_;
  Matrix scratch_;
  Matrix gtf_;
  mutable Matrix chol_;
  mutable Vector work_;
  mutable std::vector<CandidateStat> stats_;
  std::int64_t n_ = 0;
};

}  // namespace pocd
