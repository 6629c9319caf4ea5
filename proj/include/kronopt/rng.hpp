#pragma once

#include <cmath>
#include <cstdint>

#include "kronopt/linalg.hpp"

namespace kronopt {

// SplitMix64: the 64-bit generator used everywhere randomness is needed.
// Its integer stream is fully specified by the seed, so runs are
// reproducible across platforms; doubles inherit the platform's libm
// rounding only through log/cos/sin in the normal transform.
class SplitMix64 {
 public:
  explicit SplitMix64(std::uint64_t seed) : state_(seed) {}

  std::uint64_t next_u64() {
    std::uint64_t z = (state_ += 0x9e3779b97f4a7c15ULL);
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
  }

  // Uniform on [0, 1).
  double uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

  // Uniform on [lo, hi).
  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  // Standard normal via Box-Muller, one spare cached.
  double normal() {
    if (has_spare_) {
      has_spare_ = false;
      return spare_;
    }
    // Shift into (0, 1] so the log argument never vanishes.
    double u1 = (static_cast<double>(next_u64() >> 11) + 1.0) * 0x1.0p-53;
    double u2 = uniform();
    double r = std::sqrt(-2.0 * std::log(u1));
    double a = 6.283185307179586476925286766559 * u2;
    spare_ = r * std::sin(a);
    has_spare_ = true;
    return r * std::cos(a);
  }

  Matrix normal_matrix(Index rows, Index cols) {
    Matrix m(rows, cols);
    for (Index i = 0; i < rows; ++i)
      for (Index j = 0; j < cols; ++j) m(i, j) = normal();
    return m;
  }

  Vector normal_vector(Index n) {
    Vector v(n);
    for (Index i = 0; i < n; ++i) v[i] = normal();
    return v;
  }

 private:
  std::uint64_t state_;
  double spare_ = 0.0;
  bool has_spare_ = false;
};

// Random orthogonal matrix (QR of a Gaussian matrix).
inline Matrix random_orthogonal(Index n, SplitMix64& rng) {
  return qr_orthonormalize(rng.normal_matrix(n, n));
}

// Random SPD matrix with eigenvalues uniform in [eig_lo, eig_hi].
inline Matrix random_spd(Index n, SplitMix64& rng, double eig_lo = 0.5, double eig_hi = 2.0) {
  Matrix Q = random_orthogonal(n, rng);
  Vector lam(n);
  for (Index i = 0; i < n; ++i) lam[i] = rng.uniform(eig_lo, eig_hi);
  Matrix S = Q * lam.asDiagonal() * Q.transpose();
  return 0.5 * (S + S.transpose());
}

}  // namespace kronopt
