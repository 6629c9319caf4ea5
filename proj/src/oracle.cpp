#include "kronopt/oracle.hpp"

#include <cmath>
#include <limits>

#include "kronopt/estimators.hpp"
#include "kronopt/rng.hpp"

namespace kronopt {

Matrix GradientPopulation::second_moment() const {
  if (samples.empty()) throw InvalidInput("GradientPopulation: empty");
  const Index n = rows() * cols();
  Matrix H = Matrix::Zero(n, n);
  for (const Matrix& G : samples) {
    Vector v = vec_rowmajor(G);
    H += v * v.transpose();
  }
  return H / static_cast<double>(samples.size());
}

Matrix GradientPopulation::mean_GGt() const { return mean_GMGt(Matrix::Identity(cols(), cols())); }

Matrix GradientPopulation::mean_GtG() const { return mean_GtMG(Matrix::Identity(rows(), rows())); }

Matrix GradientPopulation::mean_GMGt(const Matrix& M) const {
  if (samples.empty()) throw InvalidInput("GradientPopulation: empty");
  Matrix out = Matrix::Zero(rows(), rows());
  for (const Matrix& G : samples) out += G * M * G.transpose();
  return out / static_cast<double>(samples.size());
}

Matrix GradientPopulation::mean_GtMG(const Matrix& M) const {
  if (samples.empty()) throw InvalidInput("GradientPopulation: empty");
  Matrix out = Matrix::Zero(cols(), cols());
  for (const Matrix& G : samples) out += G.transpose() * M * G;
  return out / static_cast<double>(samples.size());
}

GradientPopulation GradientPopulation::gaussian(Index da, Index db, int n, std::uint64_t seed) {
  GradientPopulation pop;
  pop.seed = seed;
  SplitMix64 rng(seed);
  for (int i = 0; i < n; ++i) pop.samples.push_back(rng.normal_matrix(da, db));
  return pop;
}

GradientPopulation GradientPopulation::matrix_normal(const Matrix& A, const Matrix& B, int n,
                                                     std::uint64_t seed) {
  GradientPopulation pop;
  pop.seed = seed;
  SplitMix64 rng(seed);
  Matrix Ah = matrix_power_from_eigen(sym_eigen(A), 0.5);
  Matrix Bh = matrix_power_from_eigen(sym_eigen(B), 0.5);
  for (int i = 0; i < n; ++i)
    pop.samples.push_back(Ah * rng.normal_matrix(A.rows(), B.rows()) * Bh);
  return pop;
}

namespace {

Matrix spd_inv(const Matrix& S) {
  EigenPair e = sym_eigen(S);
  if (e.values.minCoeff() <= 0.0)
    throw NotPositiveDefinite("oracle: factor lost positive definiteness");
  return matrix_power_from_eigen(e, -1.0);
}

double rel_diff(const Matrix& A, const Matrix& B) {
  double scale = A.norm();
  return (A - B).norm() / (scale > 0.0 ? scale : 1.0);
}

// The KL objective up to terms constant in S; finite even when the target
// is singular, and monotone exactly when the KL is.
double kl_objective_part(const Matrix& X, const KronPrecond& s) {
  const double da = static_cast<double>(s.Sa.rows());
  const double db = static_cast<double>(s.Sb.rows());
  double logdet = db * spd_logdet(s.Sa) + da * spd_logdet(s.Sb);
  Matrix Pa = spd_inv(s.Sa), Pb = spd_inv(s.Sb);
  double tr = (Pa.cwiseProduct(contract_right(X, Pb))).sum();
  return 0.5 * (logdet + tr);
}

}  // namespace

double optimal_scale(const SecondMoment& m, const KronPrecond& s) {
  Matrix X = m.damped();
  Matrix Pa = spd_inv(s.Sa);
  Matrix Pb = spd_inv(s.Sb);
  double tr = (Pa.cwiseProduct(contract_right(X, Pb))).sum();
  return tr / static_cast<double>(X.rows());
}

FlipFlopResult flip_flop_kl(const GradientPopulation& pop, double tol, int max_iter,
                            double kappa) {
  const Index da = pop.rows(), db = pop.cols();
  SecondMoment m{pop.second_moment(), kappa};
  if (kappa == 0.0) m = SecondMoment::with_auto_damping(m.H);
  Matrix X = m.damped();

  // Start at the optimally scaled one-sided pair; coordinate minimization
  // can then only improve on it.
  KronPrecond s{contract_right(X, Matrix::Identity(db, db)) / static_cast<double>(db),
                contract_left(X, Matrix::Identity(da, da)) / static_cast<double>(da),
                std::nullopt};
  double c = optimal_scale(m, s);
  s.Sa *= std::sqrt(c);
  s.Sb *= std::sqrt(c);

  FlipFlopResult out;
  for (int it = 0; it < max_iter; ++it) {
    s.Sa = contract_right(X, spd_inv(s.Sb)) / static_cast<double>(db);
    s.Sb = contract_left(X, spd_inv(s.Sa)) / static_cast<double>(da);
    out.sweeps = it + 1;
    out.objective_per_sweep.push_back(kl_objective_part(X, s));
    out.residual_a = rel_diff(s.Sa, contract_right(X, spd_inv(s.Sb)) / static_cast<double>(db));
    out.residual_b = rel_diff(s.Sb, contract_left(X, spd_inv(s.Sa)) / static_cast<double>(da));
    if (std::max(out.residual_a, out.residual_b) <= tol) {
      double scale = static_cast<double>(da) / s.Sa.trace();
      s.Sa *= scale;
      s.Sb /= scale;
      out.precond = s;
      return out;
    }
  }
  throw NoConvergence("flip_flop_kl: residual tolerance not reached");
}

FlipFlopResult flip_flop_frob(const GradientPopulation& pop, double tol, int max_iter) {
  const Index da = pop.rows(), db = pop.cols();
  SecondMoment m{pop.second_moment(), 0.0};
  Matrix X = m.H;

  KronPrecond s{contract_right(X, Matrix::Identity(db, db)) / static_cast<double>(db),
                contract_left(X, Matrix::Identity(da, da)) / static_cast<double>(da),
                std::nullopt};

  FlipFlopResult out;
  for (int it = 0; it < max_iter; ++it) {
    s.Sa = contract_right(X, s.Sb) / (s.Sb * s.Sb).trace();
    s.Sb = contract_left(X, s.Sa) / (s.Sa * s.Sa).trace();
    out.sweeps = it + 1;
    out.objective_per_sweep.push_back(frob_obj(m, s));
    out.residual_a = rel_diff(s.Sa, contract_right(X, s.Sb) / (s.Sb * s.Sb).trace());
    out.residual_b = rel_diff(s.Sb, contract_left(X, s.Sa) / (s.Sa * s.Sa).trace());
    if (std::max(out.residual_a, out.residual_b) <= tol) {
      double scale = static_cast<double>(da) / s.Sa.trace();
      s.Sa *= scale;
      s.Sb /= scale;
      out.precond = s;
      return out;
    }
  }
  throw NoConvergence("flip_flop_frob: residual tolerance not reached");
}

KronPrecond vn_closed_form(const GradientPopulation& pop) {
  Matrix Sa = pop.mean_GGt();
  Matrix Sb = pop.mean_GtG() / Sa.trace();
  return KronPrecond{Sa, Sb, std::nullopt};
}

namespace {

// KL objective restricted to one factor, parameterized by its Cholesky
// factor: f(L) = (d_other/2) (logdet(L L^T) + Tr((L L^T)^-1 A)).
struct OneSidedObjective {
  Matrix A;
  double d_other;

  double value(const Matrix& L) const {
    double logdet = 0.0;
    for (Index i = 0; i < L.rows(); ++i) {
      if (L(i, i) <= 0.0) return std::numeric_limits<double>::infinity();
      logdet += 2.0 * std::log(L(i, i));
    }
    Matrix Linv = L.triangularView<Eigen::Lower>().solve(Matrix::Identity(L.rows(), L.rows()));
    Matrix Sinv = Linv.transpose() * Linv;
    return 0.5 * d_other * (logdet + (Sinv.cwiseProduct(A)).sum());
  }

  Matrix grad(const Matrix& L) const {
    Matrix Linv = L.triangularView<Eigen::Lower>().solve(Matrix::Identity(L.rows(), L.rows()));
    Matrix Sinv = Linv.transpose() * Linv;
    Matrix gS = 0.5 * d_other * (Sinv - Sinv * A * Sinv);
    Matrix gL = 2.0 * gS * L;
    return gL.triangularView<Eigen::Lower>();
  }
};

Matrix descend_one_sided(const Matrix& A, double d_other, int max_iter, double gtol) {
  OneSidedObjective obj{A, d_other};
  const Index n = A.rows();
  Matrix L = std::sqrt(A.trace() / static_cast<double>(n)) * Matrix::Identity(n, n);
  double f = obj.value(L);
  double step = 1.0 / d_other;

  for (int it = 0; it < max_iter; ++it) {
    Matrix g = obj.grad(L);
    double gnorm = g.norm();
    if (gnorm <= gtol) break;
    // Armijo backtracking.
    bool accepted = false;
    for (int bt = 0; bt < 60; ++bt) {
      Matrix Lnew = L - step * g;
      double fnew = obj.value(Lnew);
      if (fnew <= f - 0.5 * step * gnorm * gnorm) {
        L = Lnew;
        f = fnew;
        step *= 1.5;
        accepted = true;
        break;
      }
      step *= 0.5;
    }
    if (!accepted) break;
  }
  return L * L.transpose();
}

}  // namespace

double one_sided_numeric_gap(const GradientPopulation& pop, Side side) {
  Matrix closed = side == Side::a ? pop.mean_GGt() : pop.mean_GtG();
  // The KL objective has no interior minimizer when the target is singular
  // (the population does not span); the cross-check needs a PD target.
  EigenPair e = sym_eigen(closed);
  if (e.values.minCoeff() <= 1e-12 * closed.trace()) return 0.0;
  double d_other = static_cast<double>(side == Side::a ? pop.cols() : pop.rows());
  double gtol = 1e-11 * d_other * std::max(1.0, closed.norm());
  Matrix numeric = descend_one_sided(closed, d_other, 10000, gtol);
  return rel_diff(closed, numeric);
}

Matrix one_sided_kl_min(const GradientPopulation& pop, Side side) {
  if (one_sided_numeric_gap(pop, side) > 1e-6)
    throw NoConvergence("one_sided_kl_min: numeric minimizer disagrees with closed form");
  return side == Side::a ? pop.mean_GGt() : pop.mean_GtG();
}

KronPrecond kl_ema_population_step(const GradientPopulation& pop, const KronPrecond& S_t,
                                   double beta2) {
  SpdFactor fa{S_t.Sa, sym_eigen(S_t.Sa), false};
  SpdFactor fb{S_t.Sb, sym_eigen(S_t.Sb), false};
  Matrix acc_a = Matrix::Zero(fa.dim(), fa.dim());
  Matrix acc_b = Matrix::Zero(fb.dim(), fb.dim());
  EmaConfig ema{beta2, 0.0, 1e-30};
  for (const Matrix& G : pop.samples) {
    SpdFactor ca = fa, cb = fb;
    kl_factor_ema(ca, cb, G, ema);
    acc_a += ca.S;
    acc_b += cb.S;
  }
  acc_a /= static_cast<double>(pop.size());
  acc_b /= static_cast<double>(pop.size());
  return KronPrecond{acc_a, acc_b, std::nullopt};
}

KronPrecond nearest_kron_frobenius(const SecondMoment& m, Index da, Index db) {
  Matrix X = m.damped();
  if (X.rows() != da * db) throw ShapeError("nearest_kron_frobenius: dimension mismatch");

  // Van Loan-Pitsianis rearrangement: R[(i,j),(k,l)] = X[(i,k),(j,l)].
  Matrix R(da * da, db * db);
  for (Index i = 0; i < da; ++i)
    for (Index j = 0; j < da; ++j)
      for (Index k = 0; k < db; ++k)
        for (Index l = 0; l < db; ++l)
          R(i * da + j, k * db + l) = X(i * db + k, j * db + l);

  Eigen::JacobiSVD<Matrix> svd(R, Eigen::ComputeThinU | Eigen::ComputeThinV);
  double s = std::sqrt(svd.singularValues()[0]);
  Matrix Sa = s * mat_rowmajor(svd.matrixU().col(0), da, da);
  Matrix Sb = s * mat_rowmajor(svd.matrixV().col(0), db, db);
  Sa = 0.5 * (Sa + Sa.transpose());
  Sb = 0.5 * (Sb + Sb.transpose());
  if (Sa.trace() < 0.0) {
    Sa = -Sa;
    Sb = -Sb;
  }
  return KronPrecond{Sa, Sb, std::nullopt};
}

namespace {

void check_orthonormal(const Matrix& Q, const char* what) {
  Matrix err = Q.transpose() * Q - Matrix::Identity(Q.cols(), Q.cols());
  if (err.norm() > 1e-8) throw InvalidInput(what);
}

}  // namespace

AugmentedDiag diag_kl_min(const GradientPopulation& pop, const Matrix& Qa, const Matrix& Qb) {
  check_orthonormal(Qa, "diag_kl_min: Qa not orthonormal");
  check_orthonormal(Qb, "diag_kl_min: Qb not orthonormal");
  Vector d = Vector::Zero(pop.rows() * pop.cols());
  for (const Matrix& G : pop.samples) d += vec_rowmajor(Qa.transpose() * G * Qb).cwiseAbs2();
  return AugmentedDiag{d / static_cast<double>(pop.size())};
}

double diag_probe_margin(const GradientPopulation& pop, const Matrix& Qa, const Matrix& Qb,
                         const AugmentedDiag& d, int probes, std::uint64_t seed) {
  Matrix Q = kron(Qa, Qb);
  Matrix X = pop.second_moment();
  auto kl_at = [&](const Vector& diag) {
    Matrix S = Q * diag.asDiagonal() * Q.transpose();
    return kl_div(X, 0.5 * (S + S.transpose()));
  };
  double base = kl_at(d.d);
  SplitMix64 rng(seed);
  double margin = std::numeric_limits<double>::infinity();
  for (int i = 0; i < probes; ++i) {
    Vector perturbed = d.d;
    for (Index j = 0; j < perturbed.size(); ++j)
      perturbed[j] *= 1.0 + 0.2 * (rng.uniform() - 0.5);
    margin = std::min(margin, kl_at(perturbed) - base);
  }
  return margin;
}

namespace {

// Central finite differences of kl_div with respect to one factor's
// entries, treating entries as independent (symmetric-pair perturbations).
Matrix fd_grad_factor(const SecondMoment& m, const KronPrecond& s, Side side) {
  const Matrix& F = side == Side::a ? s.Sa : s.Sb;
  const Index n = F.rows();
  Matrix g(n, n);
  double h = 1e-5 * (1.0 + F.cwiseAbs().maxCoeff());
  for (Index i = 0; i < n; ++i)
    for (Index j = i; j < n; ++j) {
      auto eval = [&](double delta) {
        KronPrecond sp = s;
        Matrix& Fp = side == Side::a ? sp.Sa : sp.Sb;
        Fp(i, j) += delta;
        if (i != j) Fp(j, i) += delta;
        return kl_div(m, sp);
      };
      double fd = (eval(h) - eval(-h)) / (2.0 * h);
      double gij = i == j ? fd : 0.5 * fd;
      g(i, j) = gij;
      g(j, i) = gij;
    }
  return g;
}

// Solves min <g, X> + (1/(2 beta2)) ||X - S||^2_W with
// W = (d_other/2)(S^-1 kron S^-1) by Newton iterations on the quadratic.
Matrix solve_prox_block(const Matrix& S, const Matrix& g, double beta2, double d_other) {
  const Index n = S.rows();
  Matrix W = 0.5 * d_other * kron(spd_inv(S), spd_inv(S));
  Eigen::LDLT<Eigen::MatrixXd> ldlt{Eigen::MatrixXd(W)};
  Vector x = vec_rowmajor(S);
  const Vector s0 = vec_rowmajor(S);
  const Vector gv = vec_rowmajor(g);
  for (int it = 0; it < 50; ++it) {
    Vector grad_q = gv + (W * (x - s0)) / beta2;
    if (grad_q.norm() <= 1e-13 * std::max(1.0, gv.norm())) break;
    Vector delta = ldlt.solve(Eigen::VectorXd(beta2 * grad_q));
    x -= delta;
  }
  Matrix X = mat_rowmajor(x, n, n);
  return 0.5 * (X + X.transpose());
}

}  // namespace

KronPrecond prox_solve(const ProxProblem& pb, const GradientPopulation& pop) {
  if (!(pb.beta2 > 0.0) || pb.beta2 > 1.0) throw InvalidInput("prox_solve: beta2 out of range");
  SecondMoment m{pop.second_moment(), 0.0};

  Matrix ga = fd_grad_factor(m, pb.S_t, Side::a);
  Matrix gb = fd_grad_factor(m, pb.S_t, Side::b);
  KronPrecond out{
      solve_prox_block(pb.S_t.Sa, ga, pb.beta2, static_cast<double>(pb.S_t.Sb.rows())),
      solve_prox_block(pb.S_t.Sb, gb, pb.beta2, static_cast<double>(pb.S_t.Sa.rows())),
      std::nullopt};

  // Cross-check against the factor EMA averaged over the population.
  KronPrecond ema = kl_ema_population_step(pop, pb.S_t, pb.beta2);
  if (rel_diff(ema.Sa, out.Sa) > 1e-6 || rel_diff(ema.Sb, out.Sb) > 1e-6)
    throw NoConvergence("prox_solve: minimizer does not match the factor EMA");
  return out;
}

std::pair<double, double> stationarity_residuals(const GradientPopulation& pop,
                                                 const KronPrecond& s, DivergenceKind kind) {
  const double da = static_cast<double>(pop.rows());
  const double db = static_cast<double>(pop.cols());
  Matrix rhs_a, rhs_b;
  switch (kind) {
    case DivergenceKind::kl:
      rhs_a = pop.mean_GMGt(spd_inv(s.Sb)) / db;
      rhs_b = pop.mean_GtMG(spd_inv(s.Sa)) / da;
      break;
    case DivergenceKind::frob:
      rhs_a = pop.mean_GMGt(s.Sb) / (s.Sb * s.Sb).trace();
      rhs_b = pop.mean_GtMG(s.Sa) / (s.Sa * s.Sa).trace();
      break;
    case DivergenceKind::vn:
      rhs_a = pop.mean_GGt() / s.Sb.trace();
      rhs_b = pop.mean_GtG() / s.Sa.trace();
      break;
  }
  return {rel_diff(s.Sa, rhs_a), rel_diff(s.Sb, rhs_b)};
}

TensorFlipFlopResult flip_flop_kl_tensor(const std::vector<Tensor3>& samples, double tol,
                                         int max_iter) {
  if (samples.empty()) throw InvalidInput("flip_flop_kl_tensor: empty population");
  const auto dims = samples.front().dims;
  const double da = static_cast<double>(dims[0]);
  const double db = static_cast<double>(dims[1]);
  const double dc = static_cast<double>(dims[2]);

  auto mean_mode = [&](int mode, const Matrix& M) {
    Matrix out;
    for (const Tensor3& T : samples) {
      Matrix U = mode_unfold(T, mode);
      Matrix term = U * M * U.transpose();
      out = out.size() == 0 ? term : Matrix(out + term);
    }
    return Matrix(out / static_cast<double>(samples.size()));
  };

  Matrix Sa = Matrix::Identity(dims[0], dims[0]);
  Matrix Sb = Matrix::Identity(dims[1], dims[1]);
  Matrix Sc = Matrix::Identity(dims[2], dims[2]);

  TensorFlipFlopResult out;
  for (int it = 0; it < max_iter; ++it) {
    Sa = mean_mode(0, kron(spd_inv(Sb), spd_inv(Sc))) / (db * dc);
    Sb = mean_mode(1, kron(spd_inv(Sa), spd_inv(Sc))) / (da * dc);
    Sc = mean_mode(2, kron(spd_inv(Sa), spd_inv(Sb))) / (da * db);
    out.sweeps = it + 1;
    double ra = rel_diff(Sa, mean_mode(0, kron(spd_inv(Sb), spd_inv(Sc))) / (db * dc));
    double rb = rel_diff(Sb, mean_mode(1, kron(spd_inv(Sa), spd_inv(Sc))) / (da * dc));
    double rc = rel_diff(Sc, mean_mode(2, kron(spd_inv(Sa), spd_inv(Sb))) / (da * db));
    out.residual = std::max({ra, rb, rc});
    if (out.residual <= tol) {
      out.Sa = Sa;
      out.Sb = Sb;
      out.Sc = Sc;
      return out;
    }
  }
  throw NoConvergence("flip_flop_kl_tensor: residual tolerance not reached");
}

}  // namespace kronopt
