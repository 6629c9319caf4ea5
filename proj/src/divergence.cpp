#include "kronopt/divergence.hpp"

#include <cmath>

namespace kronopt {

Matrix SecondMoment::damped() const {
  return H + kappa * Matrix::Identity(H.rows(), H.cols());
}

SecondMoment SecondMoment::with_auto_damping(const Matrix& H) {
  SecondMoment m{H, 0.0};
  EigenPair e = sym_eigen(H);
  if (e.values.minCoeff() <= 0.0)
    m.kappa = 1e-12 * H.trace() / static_cast<double>(H.rows());
  return m;
}

Matrix KronPrecond::dense() const {
  Matrix S = kron(Sa, Sb);
  if (Sc) S = kron(S, *Sc);
  return S;
}

Index KronPrecond::dim() const {
  Index d = Sa.rows() * Sb.rows();
  if (Sc) d *= Sc->rows();
  return d;
}

Matrix contract_right(const Matrix& H, const Matrix& M) {
  const Index db = M.rows();
  if (M.cols() != db || H.rows() % db != 0)
    throw ShapeError("contract_right: incompatible shapes");
  const Index da = H.rows() / db;
  Matrix out = Matrix::Zero(da, da);
  for (Index i = 0; i < da; ++i)
    for (Index j = 0; j < da; ++j)
      out(i, j) = (H.block(i * db, j * db, db, db).cwiseProduct(M)).sum();
  return out;
}

Matrix contract_left(const Matrix& H, const Matrix& M) {
  const Index da = M.rows();
  if (M.cols() != da || H.rows() % da != 0)
    throw ShapeError("contract_left: incompatible shapes");
  const Index db = H.rows() / da;
  Matrix out = Matrix::Zero(db, db);
  for (Index i = 0; i < da; ++i)
    for (Index j = 0; j < da; ++j)
      out += M(i, j) * H.block(i * db, j * db, db, db);
  return out;
}

namespace {

struct SpdInverse {
  Matrix inv;
  double logdet;
};

SpdInverse spd_inverse(const Matrix& S, const char* what) {
  EigenPair e = sym_eigen(S);
  if (e.values.minCoeff() <= 0.0) throw NotPositiveDefinite(what);
  SpdInverse out;
  out.inv = matrix_power_from_eigen(e, -1.0);
  out.logdet = e.values.array().log().sum();
  return out;
}

}  // namespace

double kl_div(const Matrix& X, const Matrix& S) {
  const Index n = X.rows();
  if (S.rows() != n || S.cols() != n) throw ShapeError("kl_div: dimension mismatch");
  SpdInverse s = spd_inverse(S, "kl_div: S not positive definite");
  double logdet_x = spd_logdet(X);
  double tr = X.cwiseProduct(s.inv).sum();
  return 0.5 * (s.logdet - logdet_x + tr - static_cast<double>(n));
}

double kl_div(const SecondMoment& m, const KronPrecond& s) {
  Matrix X = m.damped();
  if (X.rows() != s.dim()) throw ShapeError("kl_div: dimension mismatch");
  if (s.Sc) return kl_div(X, s.dense());

  const Index da = s.Sa.rows(), db = s.Sb.rows();
  SpdInverse ia = spd_inverse(s.Sa, "kl_div: Sa not positive definite");
  SpdInverse ib = spd_inverse(s.Sb, "kl_div: Sb not positive definite");
  double logdet_s = static_cast<double>(db) * ia.logdet + static_cast<double>(da) * ib.logdet;
  double logdet_x = spd_logdet(X);
  // Tr(X (Pa kron Pb)) = Tr(Pa * E[G Pb G^T])
  double tr = (ia.inv.cwiseProduct(contract_right(X, ib.inv))).sum();
  return 0.5 * (logdet_s - logdet_x + tr - static_cast<double>(da * db));
}

std::pair<Matrix, Matrix> kl_grad_precision(const SecondMoment& m, const KronPrecond& s) {
  if (s.Sc) throw UnsupportedShape("kl_grad_precision: matrix case only");
  Matrix X = m.damped();
  const Index da = s.Sa.rows(), db = s.Sb.rows();
  if (X.rows() != da * db) throw ShapeError("kl_grad_precision: dimension mismatch");
  SpdInverse ia = spd_inverse(s.Sa, "kl_grad_precision: Sa not positive definite");
  SpdInverse ib = spd_inverse(s.Sb, "kl_grad_precision: Sb not positive definite");
  Matrix grad_a = 0.5 * (-static_cast<double>(db) * s.Sa + contract_right(X, ib.inv));
  Matrix grad_b = 0.5 * (-static_cast<double>(da) * s.Sb + contract_left(X, ia.inv));
  return {grad_a, grad_b};
}

double frob_obj(const SecondMoment& m, const KronPrecond& s) {
  return (m.damped() - s.dense()).norm();
}

double vn_div(const Matrix& X, const Matrix& S) {
  Matrix log_x = matrix_log(X);
  Matrix log_s = matrix_log(S);
  return (X.cwiseProduct(log_x - log_s)).sum() - X.trace() + S.trace();
}

double vn_div(const SecondMoment& m, const KronPrecond& s) {
  Matrix X = m.damped();
  if (X.rows() != s.dim()) throw ShapeError("vn_div: dimension mismatch");
  if (s.Sc) return vn_div(X, s.dense());

  const Index da = s.Sa.rows(), db = s.Sb.rows();
  Matrix log_x = matrix_log(X);
  Matrix log_a = matrix_log(s.Sa);
  Matrix log_b = matrix_log(s.Sb);
  // Tr(X LogM(Sa kron Sb)) via the Kronecker-sum identity.
  double tr_xs = (log_a.cwiseProduct(contract_right(X, Matrix::Identity(db, db)))).sum() +
                 (log_b.cwiseProduct(contract_left(X, Matrix::Identity(da, da)))).sum();
  return (X.cwiseProduct(log_x)).sum() - tr_xs - X.trace() + s.Sa.trace() * s.Sb.trace();
}

}  // namespace kronopt
