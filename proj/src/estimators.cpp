#include "kronopt/estimators.hpp"

#include <cmath>

namespace kronopt {

SpdFactor SpdFactor::identity(Index d, double scale, bool with_values) {
  SpdFactor f;
  f.S = scale * Matrix::Identity(d, d);
  f.eig.basis = Matrix::Identity(d, d);
  if (with_values) f.eig.values = Vector::Ones(d);
  f.eig_stale = false;
  return f;
}

namespace {

Vector floored_values(const SpdFactor& f, double eig_floor) {
  if (!f.has_values()) throw StateError("SpdFactor: eigenvalue cache missing");
  Vector v = f.eig.values;
  for (Index i = 0; i < v.size(); ++i) {
    if (v[i] < 0.0) throw NotPositiveDefinite("SpdFactor: negative cached eigenvalue");
    v[i] = std::max(v[i], eig_floor);
  }
  return v;
}

void check_shapes(const SpdFactor& fa, const SpdFactor& fb, const Matrix& G) {
  if (G.rows() != fa.dim() || G.cols() != fb.dim())
    throw ShapeError("factor EMA: gradient shape does not match factors");
}

}  // namespace

Matrix SpdFactor::cached_inverse(double eig_floor) const {
  if (!has_basis()) throw StateError("SpdFactor: eigenbasis missing");
  Vector v = floored_values(*this, eig_floor);
  return eig.basis * v.cwiseInverse().asDiagonal() * eig.basis.transpose();
}

Matrix SpdFactor::cached_power(double p, double kappa, double eig_floor) const {
  if (!has_basis()) throw StateError("SpdFactor: eigenbasis missing");
  Vector v = floored_values(*this, eig_floor);
  Vector pw(v.size());
  for (Index i = 0; i < v.size(); ++i) pw[i] = std::pow(v[i] + kappa, p);
  return eig.basis * pw.asDiagonal() * eig.basis.transpose();
}

Matrix kl_delta_a(const SpdFactor& fb, const Matrix& G, double eig_floor) {
  Matrix Pb = fb.cached_inverse(eig_floor);
  return G * Pb * G.transpose() / static_cast<double>(fb.dim());
}

Matrix kl_delta_b(const SpdFactor& fa, const Matrix& G, double eig_floor) {
  Matrix Pa = fa.cached_inverse(eig_floor);
  return G.transpose() * Pa * G / static_cast<double>(fa.dim());
}

std::pair<Matrix, Matrix> f_deltas(const SpdFactor& fa, const SpdFactor& fb, const Matrix& G,
                                   FactorVariant variant, double eig_floor) {
  check_shapes(fa, fb, G);
  if (variant == FactorVariant::v1) {
    double tb = (fb.S * fb.S).trace();
    double ta = (fa.S * fa.S).trace();
    if (tb <= 0.0 || ta <= 0.0) throw DegenerateScale("f_deltas: zero trace denominator");
    return {G * fb.S * G.transpose() / tb, G.transpose() * fa.S * G / ta};
  }
  Vector la = floored_values(fa, eig_floor);
  Vector lb = floored_values(fb, eig_floor);
  double sb = lb.squaredNorm();
  double sa = la.squaredNorm();
  if (sb <= 0.0 || sa <= 0.0) throw DegenerateScale("f_deltas: zero eigenvalue norm");
  Matrix Sb_hat = fb.eig.basis * lb.asDiagonal() * fb.eig.basis.transpose();
  Matrix Sa_hat = fa.eig.basis * la.asDiagonal() * fa.eig.basis.transpose();
  return {G * Sb_hat * G.transpose() / sb, G.transpose() * Sa_hat * G / sa};
}

std::pair<Matrix, Matrix> vn_deltas(const SpdFactor& fa, const SpdFactor& fb, const Matrix& G,
                                    FactorVariant variant) {
  check_shapes(fa, fb, G);
  Matrix da = G * G.transpose();
  Matrix db = G.transpose() * G;
  if (variant == FactorVariant::v2) {
    if (!fa.has_values() || !fb.has_values())
      throw StateError("vn_deltas: eigenvalue cache missing");
    double sb = fb.eig.values.sum();
    double sa = fa.eig.values.sum();
    if (sb <= 0.0 || sa <= 0.0) throw DegenerateScale("vn_deltas: nonpositive eigenvalue sum");
    da /= sb;
    db /= sa;
  }
  return {da, db};
}

void shampoo_factor_ema(SpdFactor& fa, SpdFactor& fb, const Matrix& G, const EmaConfig& c) {
  check_shapes(fa, fb, G);
  fa.S = (1.0 - c.beta2) * fa.S + c.beta2 * (G * G.transpose());
  fb.S = (1.0 - c.beta2) * fb.S + c.beta2 * (G.transpose() * G);
  fa.eig_stale = fb.eig_stale = true;
}

void kl_factor_ema(SpdFactor& fa, SpdFactor& fb, const Matrix& G, const EmaConfig& c) {
  check_shapes(fa, fb, G);
  Matrix da = kl_delta_a(fb, G, c.eig_floor);
  Matrix db = kl_delta_b(fa, G, c.eig_floor);
  fa.S = (1.0 - c.beta2) * fa.S + c.beta2 * da;
  fb.S = (1.0 - c.beta2) * fb.S + c.beta2 * db;
  fa.eig_stale = fb.eig_stale = true;
}

void eigenvalue_ema(SpdFactor& f, const Matrix& delta, const EmaConfig& c) {
  if (!f.has_basis() || !f.has_values())
    throw StateError("eigenvalue_ema: eigen cache missing");
  Vector corr = (f.eig.basis.transpose() * delta * f.eig.basis).diagonal();
  f.eig.values = (1.0 - c.beta2) * f.eig.values + c.beta2 * corr;
  f.eig.values = f.eig.values.cwiseMax(c.eig_floor);
}

void eigenvalue_ema_kl(SpdFactor& fa, SpdFactor& fb, const Matrix& G, const EmaConfig& c) {
  check_shapes(fa, fb, G);
  Matrix da = kl_delta_a(fb, G, c.eig_floor);
  Matrix db = kl_delta_b(fa, G, c.eig_floor);
  eigenvalue_ema(fa, da, c);
  eigenvalue_ema(fb, db, c);
}

void eigenbasis_qr_refresh(SpdFactor& f) {
  if (!f.has_basis()) throw StateError("eigenbasis_qr_refresh: eigenbasis missing");
  if (!all_finite(f.S)) throw InvalidInput("eigenbasis_qr_refresh: non-finite factor");
  f.eig.basis = qr_orthonormalize(f.S * f.eig.basis);
  f.eig_stale = false;
}

void augmented_eigen_ema(AugmentedDiag& d, const SpdFactor& fa, const SpdFactor& fb,
                         const Matrix& G, const EmaConfig& c) {
  check_shapes(fa, fb, G);
  if (!fa.has_basis() || !fb.has_basis())
    throw StateError("augmented_eigen_ema: eigenbasis missing");
  if (d.d.size() != G.size()) throw ShapeError("augmented_eigen_ema: diagonal length mismatch");
  Vector ghat = vec_rowmajor(fa.eig.basis.transpose() * G * fb.eig.basis);
  d.d = (1.0 - c.beta2) * d.d + c.beta2 * ghat.cwiseAbs2();
}

void f_shampoo_ema(SpdFactor& fa, SpdFactor& fb, const Matrix& G, const EmaConfig& c,
                   FactorVariant variant) {
  auto [da, db] = f_deltas(fa, fb, G, variant, c.eig_floor);
  fa.S = (1.0 - c.beta2) * fa.S + c.beta2 * da;
  fb.S = (1.0 - c.beta2) * fb.S + c.beta2 * db;
  fa.eig_stale = fb.eig_stale = true;
}

double vn_shampoo_ema(SpdFactor& fa, SpdFactor& fb, const Matrix& G, const EmaConfig& c,
                      FactorVariant variant) {
  auto [da, db] = vn_deltas(fa, fb, G, variant);
  fa.S = (1.0 - c.beta2) * fa.S + c.beta2 * da;
  fb.S = (1.0 - c.beta2) * fb.S + c.beta2 * db;
  fa.eig_stale = fb.eig_stale = true;
  if (variant == FactorVariant::v2) return 1.0;
  double prod = fa.S.trace() * fb.S.trace();
  if (prod <= 0.0) throw DegenerateScale("vn_shampoo_ema: nonpositive trace product");
  return 1.0 / std::sqrt(prod);
}

void adafactor_diag_ema(Vector& ra, Vector& rb, const Matrix& G, const EmaConfig& c) {
  if (ra.size() != G.rows() || rb.size() != G.cols())
    throw ShapeError("adafactor_diag_ema: vector lengths mismatch");
  Matrix G2 = G.cwiseAbs2();
  double total = G2.sum();
  Vector row_sums = G2.rowwise().sum();
  Vector col_sums = G2.colwise().sum().transpose();
  ra = (1.0 - c.beta2) * ra + c.beta2 * row_sums;
  rb = (1.0 - c.beta2) * rb + c.beta2 * (total > 0.0 ? Vector(col_sums / total) : col_sums);
}

void tensor_kl_factor_ema(SpdFactor& fa, SpdFactor& fb, SpdFactor& fc, const Tensor3& T,
                          const EmaConfig& c) {
  if (T.dims[0] != fa.dim() || T.dims[1] != fb.dim() || T.dims[2] != fc.dim())
    throw ShapeError("tensor_kl_factor_ema: tensor shape does not match factors");
  Matrix Pa = fa.cached_inverse(c.eig_floor);
  Matrix Pb = fb.cached_inverse(c.eig_floor);
  Matrix Pc = fc.cached_inverse(c.eig_floor);

  const double na = static_cast<double>(fb.dim() * fc.dim());
  const double nb = static_cast<double>(fa.dim() * fc.dim());
  const double nc = static_cast<double>(fa.dim() * fb.dim());

  Matrix Ga = mode_unfold(T, 0);
  Matrix Gb = mode_unfold(T, 1);
  Matrix Gc = mode_unfold(T, 2);

  Matrix da = Ga * kron(Pb, Pc) * Ga.transpose() / na;
  Matrix db = Gb * kron(Pa, Pc) * Gb.transpose() / nb;
  Matrix dc = Gc * kron(Pa, Pb) * Gc.transpose() / nc;

  fa.S = (1.0 - c.beta2) * fa.S + c.beta2 * da;
  fb.S = (1.0 - c.beta2) * fb.S + c.beta2 * db;
  fc.S = (1.0 - c.beta2) * fc.S + c.beta2 * dc;
  fa.eig_stale = fb.eig_stale = fc.eig_stale = true;
}

}  // namespace kronopt
