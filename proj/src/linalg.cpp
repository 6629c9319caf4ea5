#include "kronopt/linalg.hpp"

#include <Eigen/Eigenvalues>
#include <Eigen/QR>
#include <cmath>

namespace kronopt {

bool all_finite(const Matrix& m) { return m.allFinite(); }

bool is_symmetric(const Matrix& m, double rel_tol) {
  if (m.rows() != m.cols()) return false;
  double scale = m.norm();
  double diff = (m - m.transpose()).norm();
  return diff <= rel_tol * std::max(scale, 1.0);
}

EigenPair sym_eigen(const Matrix& S) {
  if (!all_finite(S)) throw InvalidInput("sym_eigen: non-finite entries");
  if (!is_symmetric(S)) throw NotSymmetric("sym_eigen: input not symmetric within tolerance");

  Matrix sym = 0.5 * (S + S.transpose());
  Eigen::SelfAdjointEigenSolver<Matrix> solver(sym);
  if (solver.info() != Eigen::Success) throw InvalidInput("sym_eigen: solver failed");

  const Index n = S.rows();
  EigenPair out;
  out.basis.resize(n, n);
  out.values.resize(n);
  // Eigen sorts ascending; flip to descending.
  for (Index j = 0; j < n; ++j) {
    out.values[j] = solver.eigenvalues()[n - 1 - j];
    out.basis.col(j) = solver.eigenvectors().col(n - 1 - j);
  }
  return out;
}

namespace {

// Largest-magnitude entry of each column made positive, first index wins ties.
void fix_column_signs(Matrix& Q) {
  for (Index j = 0; j < Q.cols(); ++j) {
    Index imax = 0;
    double best = 0.0;
    for (Index i = 0; i < Q.rows(); ++i) {
      double a = std::abs(Q(i, j));
      if (a > best) {
        best = a;
        imax = i;
      }
    }
    if (Q(imax, j) < 0.0) Q.col(j) = -Q.col(j);
  }
}

}  // namespace

Matrix qr_orthonormalize(const Matrix& M) {
  if (M.rows() != M.cols()) throw ShapeError("qr_orthonormalize: matrix must be square");
  if (!all_finite(M)) throw InvalidInput("qr_orthonormalize: non-finite entries");

  Eigen::HouseholderQR<Matrix> qr(M);
  Matrix R = qr.matrixQR().triangularView<Eigen::Upper>();
  double dmax = R.diagonal().cwiseAbs().maxCoeff();
  if (dmax <= 0.0 || R.diagonal().cwiseAbs().minCoeff() <= 1e-12 * dmax)
    throw RankDeficient("qr_orthonormalize: rank-deficient input");

  Matrix Q = qr.householderQ() * Matrix::Identity(M.rows(), M.cols());
  fix_column_signs(Q);
  return Q;
}

Matrix matrix_power_from_eigen(const EigenPair& e, double p) {
  const Index n = e.values.size();
  if (p == 0.0) return Matrix::Identity(n, n);

  bool fractional = std::floor(p) != p;
  Vector powered(n);
  for (Index i = 0; i < n; ++i) {
    double v = e.values[i];
    if ((p < 0.0 && v <= 0.0) || (fractional && v < 0.0))
      throw SingularPower("matrix_power_from_eigen: nonpositive eigenvalue");
    powered[i] = std::pow(v, p);
  }
  Matrix X = e.basis * powered.asDiagonal() * e.basis.transpose();
  return 0.5 * (X + X.transpose());
}

Matrix kron(const Matrix& A, const Matrix& B) {
  Matrix out(A.rows() * B.rows(), A.cols() * B.cols());
  for (Index i = 0; i < A.rows(); ++i)
    for (Index j = 0; j < A.cols(); ++j)
      out.block(i * B.rows(), j * B.cols(), B.rows(), B.cols()) = A(i, j) * B;
  return out;
}

Vector kron(const Vector& a, const Vector& b) {
  Vector out(a.size() * b.size());
  for (Index i = 0; i < a.size(); ++i) out.segment(i * b.size(), b.size()) = a[i] * b;
  return out;
}

Vector vec_rowmajor(const Matrix& G) {
  Vector v(G.size());
  for (Index i = 0; i < G.rows(); ++i)
    for (Index j = 0; j < G.cols(); ++j) v[i * G.cols() + j] = G(i, j);
  return v;
}

Matrix mat_rowmajor(const Vector& v, Index rows, Index cols) {
  if (v.size() != rows * cols) throw ShapeError("mat_rowmajor: length mismatch");
  Matrix G(rows, cols);
  for (Index i = 0; i < rows; ++i)
    for (Index j = 0; j < cols; ++j) G(i, j) = v[i * cols + j];
  return G;
}

Matrix mode_unfold(const Tensor3& T, int mode) {
  const Index da = T.dims[0], db = T.dims[1], dc = T.dims[2];
  Matrix M;
  switch (mode) {
    case 0:
      M.resize(da, db * dc);
      for (Index i = 0; i < da; ++i)
        for (Index j = 0; j < db; ++j)
          for (Index k = 0; k < dc; ++k) M(i, j * dc + k) = T(i, j, k);
      break;
    case 1:
      M.resize(db, da * dc);
      for (Index i = 0; i < da; ++i)
        for (Index j = 0; j < db; ++j)
          for (Index k = 0; k < dc; ++k) M(j, i * dc + k) = T(i, j, k);
      break;
    case 2:
      M.resize(dc, da * db);
      for (Index i = 0; i < da; ++i)
        for (Index j = 0; j < db; ++j)
          for (Index k = 0; k < dc; ++k) M(k, i * db + j) = T(i, j, k);
      break;
    default:
      throw InvalidInput("mode_unfold: mode must be 0, 1 or 2");
  }
  return M;
}

Tensor3 mode_fold(const Matrix& M, int mode, const std::array<Index, 3>& dims) {
  const Index da = dims[0], db = dims[1], dc = dims[2];
  Index other = 0;
  switch (mode) {
    case 0: other = db * dc; break;
    case 1: other = da * dc; break;
    case 2: other = da * db; break;
    default: throw InvalidInput("mode_fold: mode must be 0, 1 or 2");
  }
  if (M.rows() != dims[static_cast<size_t>(mode)] || M.cols() != other)
    throw ShapeError("mode_fold: shape mismatch");

  Tensor3 T(da, db, dc);
  for (Index i = 0; i < da; ++i)
    for (Index j = 0; j < db; ++j)
      for (Index k = 0; k < dc; ++k) {
        switch (mode) {
          case 0: T(i, j, k) = M(i, j * dc + k); break;
          case 1: T(i, j, k) = M(j, i * dc + k); break;
          case 2: T(i, j, k) = M(k, i * db + j); break;
        }
      }
  return T;
}

Tensor3 mode_multiply(const Tensor3& T, const Matrix& M, int mode) {
  if (M.rows() != M.cols() || M.rows() != T.dims[static_cast<size_t>(mode)])
    throw ShapeError("mode_multiply: factor shape mismatch");
  Matrix unfolded = mode_unfold(T, mode);
  return mode_fold(M * unfolded, mode, T.dims);
}

double spd_logdet(const Matrix& S) {
  EigenPair e = sym_eigen(S);
  double out = 0.0;
  for (Index i = 0; i < e.values.size(); ++i) {
    if (e.values[i] <= 0.0) throw NotPositiveDefinite("spd_logdet: nonpositive eigenvalue");
    out += std::log(e.values[i]);
  }
  return out;
}

Matrix matrix_log(const Matrix& S) {
  EigenPair e = sym_eigen(S);
  Vector lv(e.values.size());
  for (Index i = 0; i < e.values.size(); ++i) {
    if (e.values[i] <= 0.0) throw NotPositiveDefinite("matrix_log: nonpositive eigenvalue");
    lv[i] = std::log(e.values[i]);
  }
  Matrix X = e.basis * lv.asDiagonal() * e.basis.transpose();
  return 0.5 * (X + X.transpose());
}

Matrix matrix_exp(const Matrix& S) {
  EigenPair e = sym_eigen(S);
  Vector ev = e.values.array().exp();
  Matrix X = e.basis * ev.asDiagonal() * e.basis.transpose();
  return 0.5 * (X + X.transpose());
}

}  // namespace kronopt
