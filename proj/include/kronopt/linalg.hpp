#pragma once

#include <Eigen/Dense>
#include <array>

#include "kronopt/errors.hpp"

namespace kronopt {

using Index = Eigen::Index;

// All dense values are stored row-major; the flattening convention below
// (vec_rowmajor) is chosen so that (A kron B) * vec(X) = vec(A * X * B^T).
using Matrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using Vector = Eigen::VectorXd;

// Dense 3-way array, row-major over (a, b, c).
struct Tensor3 {
  std::array<Index, 3> dims{0, 0, 0};
  Vector data;

  Tensor3() = default;
  Tensor3(Index da, Index db, Index dc)
      : dims{da, db, dc}, data(Vector::Zero(da * db * dc)) {}

  Index size() const { return dims[0] * dims[1] * dims[2]; }
  double& operator()(Index i, Index j, Index k) {
    return data[(i * dims[1] + j) * dims[2] + k];
  }
  double operator()(Index i, Index j, Index k) const {
    return data[(i * dims[1] + j) * dims[2] + k];
  }
};

// Orthonormal basis plus eigenvalues sorted in descending order.
struct EigenPair {
  Matrix basis;
  Vector values;
};

bool all_finite(const Matrix& m);
bool is_symmetric(const Matrix& m, double rel_tol = 1e-10);

// Eigendecomposition of a symmetric matrix. Eigenvalues descend; equal
// values keep the solver's order.
EigenPair sym_eigen(const Matrix& S);

// Orthonormal factor of a square full-rank matrix. Each column is scaled so
// its largest-magnitude entry is positive; refreshing an already-orthonormal
// matrix is therefore a fixed point.
Matrix qr_orthonormalize(const Matrix& M);

// basis * Diag(values^p) * basis^T. p = 0 returns the identity.
Matrix matrix_power_from_eigen(const EigenPair& e, double p);

Matrix kron(const Matrix& A, const Matrix& B);
Vector kron(const Vector& a, const Vector& b);

// Row-major flatten / unflatten. These satisfy
//   kron(A, B) * vec_rowmajor(X) == vec_rowmajor(A * X * B^T)
// exactly, which keeps Kronecker-factored identities literal.
Vector vec_rowmajor(const Matrix& G);
Matrix mat_rowmajor(const Vector& v, Index rows, Index cols);

// Mode-k unfolding: rows index mode k, columns run row-major over the
// remaining modes in (a, b, c) order.
//   mode 0: d_a x (d_b d_c), column j*d_c + k
//   mode 1: d_b x (d_a d_c), column i*d_c + k
//   mode 2: d_c x (d_a d_b), column i*d_b + j
Matrix mode_unfold(const Tensor3& T, int mode);
Tensor3 mode_fold(const Matrix& M, int mode, const std::array<Index, 3>& dims);

// T x_mode M: multiplies M against the given mode (M is d_k x d_k).
Tensor3 mode_multiply(const Tensor3& T, const Matrix& M, int mode);

double spd_logdet(const Matrix& S);
Matrix matrix_log(const Matrix& S);
Matrix matrix_exp(const Matrix& S);

}  // namespace kronopt
