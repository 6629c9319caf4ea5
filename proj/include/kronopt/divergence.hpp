#pragma once

#include <optional>
#include <utility>

#include "kronopt/linalg.hpp"

namespace kronopt {

// Target second moment E[g g^T] of the flattened gradient plus a damping
// weight kappa; the damped matrix H + kappa*I is the covariance being
// approximated.
struct SecondMoment {
  Matrix H;
  double kappa = 0.0;

  Matrix damped() const;

  // H plus automatic damping 1e-12 * Tr(H)/dim when H is singular,
  // otherwise kappa = 0.
  static SecondMoment with_auto_damping(const Matrix& H);
};

// Kronecker-factored preconditioner S = Sa kron Sb (kron Sc for tensors).
struct KronPrecond {
  Matrix Sa;
  Matrix Sb;
  std::optional<Matrix> Sc;

  Matrix dense() const;
  Index dim() const;
};

// Partial contractions of a second moment H = E[vec(G) vec(G)^T]:
//   contract_right(H, M) = E[G M G^T]   (d_a x d_a)
//   contract_left(H, M)  = E[G^T M G]   (d_b x d_b)
// where d_b = M.rows() resp. d_a = M.rows().
Matrix contract_right(const Matrix& H, const Matrix& M);
Matrix contract_left(const Matrix& H, const Matrix& M);

// Gaussian KL divergence between covariances X = H + kappa*I and S:
//   0.5 * (logdet S - logdet X + Tr(X S^-1) - dim)
// Zero exactly at X = S and nonnegative everywhere.
double kl_div(const SecondMoment& m, const KronPrecond& s);
double kl_div(const Matrix& X, const Matrix& S);

// Gradients of kl_div with respect to the precision factors Sa^-1, Sb^-1,
// evaluated at s:
//   d/dPa = 0.5 * (-d_b * Sa + E[G Sb^-1 G^T])
//   d/dPb = 0.5 * (-d_a * Sb + E[G^T Sa^-1 G])
std::pair<Matrix, Matrix> kl_grad_precision(const SecondMoment& m, const KronPrecond& s);

// Frobenius norm || (H + kappa*I) - Sa kron Sb ||_F.
double frob_obj(const SecondMoment& m, const KronPrecond& s);

// von Neumann divergence Tr(X (LogM X - LogM S)) - Tr X + Tr S with
// X = H + kappa*I. The factored form uses
// LogM(Sa kron Sb) = LogM(Sa) kron I + I kron LogM(Sb).
double vn_div(const SecondMoment& m, const KronPrecond& s);
double vn_div(const Matrix& X, const Matrix& S);

}  // namespace kronopt
