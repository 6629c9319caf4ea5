#pragma once

#include <utility>

#include "kronopt/linalg.hpp"

namespace kronopt {

// One Kronecker factor S_k with its cached eigenpair (Q_k, lambda_k). The
// cache may be stale: estimation updates S without touching it, and the
// inverse P_k = Q_k Diag(lambda_k^-1) Q_k^T is always formed from the cache,
// never by inverting S.
struct SpdFactor {
  Matrix S;
  EigenPair eig;
  bool eig_stale = false;

  Index dim() const { return S.rows(); }
  bool has_basis() const { return eig.basis.size() > 0; }
  bool has_values() const { return eig.values.size() > 0; }

  // Identity factor: S = scale*I, Q = I, lambda = ones.
  static SpdFactor identity(Index d, double scale = 1.0, bool with_values = true);

  // Q Diag(max(lambda, floor)^-1) Q^T from the cache.
  Matrix cached_inverse(double eig_floor) const;
  // Q Diag((max(lambda, floor) + kappa)^-p) Q^T from the cache.
  Matrix cached_power(double p, double kappa, double eig_floor) const;
};

// Full-length diagonal in the product eigenbasis (SOAP state).
struct AugmentedDiag {
  Vector d;
};

struct EmaConfig {
  double beta2 = 1.0;      // weight on the new term, (0, 1]
  double kappa = 0.0;      // damping, >= 0
  double eig_floor = 1e-30;
};

enum class FactorVariant { v1, v2 };

// New-term matrices for the factor EMAs, formed from the cached eigenpairs
// of the opposite factor (pre-update values).
Matrix kl_delta_a(const SpdFactor& fb, const Matrix& G, double eig_floor);
Matrix kl_delta_b(const SpdFactor& fa, const Matrix& G, double eig_floor);
std::pair<Matrix, Matrix> f_deltas(const SpdFactor& fa, const SpdFactor& fb, const Matrix& G,
                                   FactorVariant variant, double eig_floor);
std::pair<Matrix, Matrix> vn_deltas(const SpdFactor& fa, const SpdFactor& fb, const Matrix& G,
                                    FactorVariant variant);

// S_a <- (1-b2) S_a + b2 G G^T,  S_b <- (1-b2) S_b + b2 G^T G.
void shampoo_factor_ema(SpdFactor& fa, SpdFactor& fb, const Matrix& G, const EmaConfig& c);

// S_a <- (1-b2) S_a + (b2/d_b) G P_b G^T and the mirrored update, both
// evaluated at the old factors (simultaneous update).
void kl_factor_ema(SpdFactor& fa, SpdFactor& fb, const Matrix& G, const EmaConfig& c);

// Step 3a: lambda_k <- (1-b2) lambda_k + b2 diag(Q_k^T Delta_k Q_k) with the
// KL deltas from the pre-update eigenvalue caches; entries floored.
void eigenvalue_ema_kl(SpdFactor& fa, SpdFactor& fb, const Matrix& G, const EmaConfig& c);

// Same EMA with caller-supplied deltas (F-/VN-Shampoo reuse this).
void eigenvalue_ema(SpdFactor& f, const Matrix& delta, const EmaConfig& c);

// Step 3b: Q_k <- qr(S_k Q_k); eigenvalues untouched.
void eigenbasis_qr_refresh(SpdFactor& f);

// Step 4a: d <- (1-b2) d + b2 (vec(Q_a^T G Q_b))^2.
void augmented_eigen_ema(AugmentedDiag& d, const SpdFactor& fa, const SpdFactor& fb,
                         const Matrix& G, const EmaConfig& c);

void f_shampoo_ema(SpdFactor& fa, SpdFactor& fb, const Matrix& G, const EmaConfig& c,
                   FactorVariant variant);

// Returns the preconditioning scale tau (v1: 1/sqrt(Tr Sa * Tr Sb) from the
// updated factors, v2: 1).
double vn_shampoo_ema(SpdFactor& fa, SpdFactor& fb, const Matrix& G, const EmaConfig& c,
                      FactorVariant variant);

// Diagonal (Adafactor) restriction: row sums of G^2 and column sums of G^2
// divided by the total sum.
void adafactor_diag_ema(Vector& ra, Vector& rb, const Matrix& G, const EmaConfig& c);

// Three-factor extension: mode-k unfoldings against the Kronecker product of
// the other factors' cached inverses, all from old values.
void tensor_kl_factor_ema(SpdFactor& fa, SpdFactor& fb, SpdFactor& fc, const Tensor3& T,
                          const EmaConfig& c);

}  // namespace kronopt
