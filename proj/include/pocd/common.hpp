#pragma once

#include <Eigen/Cholesky>
#include <Eigen/Core>
#include <Eigen/Eigenvalues>

#include <cstdint>
#include <random>
#include <stdexcept>
#include <string>

namespace pocd {

using Vector = Eigen::VectorXd;
using Matrix = Eigen::MatrixXd;

/// Raised for malformed configuration or inputs that violate a documented precondition.
class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Raised when a numerical routine cannot produce a trustworthy result
/// (singular innovation covariance, non-convergent iteration, ...).
class NumericalError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Raised for file system and parsing failures of external data.
class IoError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

inline void symmetrize(Matrix& m) { m = (0.5 * (m + m.transpose())).eval(); }

/// Spectral radius of a square matrix (largest eigenvalue modulus).
inline double spectral_radius(const Matrix& a) {
  if (a.size() == 0) return 0.0;
  Eigen::EigenSolver<Matrix> es(a, false);
  return es.eigenvalues().cwiseAbs().maxCoeff();
}

/// Reciprocal condition number of a symmetric positive semidefinite matrix,
/// computed from its eigenvalues. Returns 0 for matrices with a nonpositive eigenvalue.
inline double sym_rcond(const Matrix& m) {
  Eigen::SelfAdjointEigenSolver<Matrix> es(m, Eigen::EigenvaluesOnly);
  const double lo = es.eigenvalues().minCoeff();
  const double hi = es.eigenvalues().maxCoeff();
  if (!(hi > 0.0) || !(lo > 0.0)) return 0.0;
  return lo / hi;
}

/// Symmetric square root factor S with S S' = m, for PSD m (tiny negative
/// eigenvalues from round-off are clipped).
inline Matrix psd_sqrt(const Matrix& m) {
  Eigen::SelfAdjointEigenSolver<Matrix> es(m);
  Vector ev = es.eigenvalues().cwiseMax(0.0).cwiseSqrt();
  return es.eigenvectors() * ev.asDiagonal() * es.eigenvectors().transpose();
}

// ---------------------------------------------------------------------------
// Randomness
//
// Every random stream is an mt19937_64 seeded from a 64-bit key derived from
// (seed, stream id, replication id) with the splitmix64 finalizer. Parallel
// workers therefore see the same numbers regardless of scheduling.
// ---------------------------------------------------------------------------

using Rng = std::mt19937_64;

constexpr std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

/// Counter-based seed derivation: mixes the stream and replication ids into the base seed.
constexpr std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t stream_id,
                                    std::uint64_t replication_id) {
  return splitmix64(splitmix64(splitmix64(seed) ^ stream_id) ^ replication_id);
}

/// Stream ids used by the library. Kept in one place so that no two consumers share a stream.
namespace streams {
inline constexpr std::uint64_t kProcessNoise = 1;
inline constexpr std::uint64_t kSampling = 2;
inline constexpr std::uint64_t kReplication = 3;
inline constexpr std::uint64_t kCalibration = 4;
inline constexpr std::uint64_t kEvaluation = 5;
inline constexpr std::uint64_t kScenarioModel = 6;
inline constexpr std::uint64_t kBootstrap = 7;
}  // namespace streams

inline Rng make_rng(std::uint64_t seed, std::uint64_t stream_id, std::uint64_t replication_id = 0) {
  return Rng(derive_seed(seed, stream_id, replication_id));
}

}  // namespace pocd
