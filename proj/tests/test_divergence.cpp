#include <doctest.h>

#include <cmath>

#include "kronopt/divergence.hpp"
#include "kronopt/oracle.hpp"
#include "kronopt/rng.hpp"

using namespace kronopt;

namespace {

Matrix inv_of(const Matrix& P) { return matrix_power_from_eigen(sym_eigen(P), -1.0); }

// KL as a function of the precision factors (Pa, Pb).
double kl_of_precision(const SecondMoment& m, const Matrix& Pa, const Matrix& Pb) {
  return kl_div(m, KronPrecond{inv_of(Pa), inv_of(Pb), std::nullopt});
}

// Central finite differences with symmetric-pair perturbations; the (i, j)
// entry of the returned matrix estimates the per-entry gradient.
Matrix fd_precision_grad(const SecondMoment& m, const Matrix& Pa, const Matrix& Pb,
                         bool side_a) {
  const Matrix& P = side_a ? Pa : Pb;
  const double h = 1e-6;
  Matrix g(P.rows(), P.cols());
  for (Index i = 0; i < P.rows(); ++i)
    for (Index j = i; j < P.cols(); ++j) {
      auto eval = [&](double delta) {
        Matrix Pp = P;
        Pp(i, j) += delta;
        if (i != j) Pp(j, i) += delta;
        return side_a ? kl_of_precision(m, Pp, Pb) : kl_of_precision(m, Pa, Pp);
      };
      double fd = (eval(h) - eval(-h)) / (2.0 * h);
      double gij = i == j ? fd : 0.5 * fd;
      g(i, j) = gij;
      g(j, i) = gij;
    }
  return g;
}

SecondMoment moment_from(const GradientPopulation& pop, double kappa = 0.0) {
  return SecondMoment{pop.second_moment(), kappa};
}

}  // namespace

TEST_CASE("kl_div is zero at equality and matches scalar formulas") {
  SplitMix64 rng(101);
  Matrix Sa = random_spd(3, rng), Sb = random_spd(2, rng);
  KronPrecond s{Sa, Sb, std::nullopt};
  SecondMoment m{s.dense(), 0.0};
  CHECK(std::abs(kl_div(m, s)) < 1e-10);

  // dim 1: H = 2, S = 1.
  Matrix H1(1, 1), S1(1, 1);
  H1 << 2.0;
  S1 << 1.0;
  CHECK(kl_div(H1, S1) == doctest::Approx(0.5 * (1.0 - std::log(2.0))).epsilon(1e-9));
  CHECK(kl_div(H1, S1) == doctest::Approx(0.153426).epsilon(1e-4));

  // dim 2: H = I, S = 2I.
  Matrix H2 = Matrix::Identity(2, 2);
  Matrix S2 = 2.0 * Matrix::Identity(2, 2);
  CHECK(kl_div(H2, S2) == doctest::Approx(std::log(2.0) - 0.5).epsilon(1e-9));
}

TEST_CASE("kl_div factored and dense evaluations agree") {
  SplitMix64 rng(103);
  for (int trial = 0; trial < 10; ++trial) {
    auto pop = GradientPopulation::gaussian(3, 2, 30, rng.next_u64());
    SecondMoment m = moment_from(pop, 1e-9);
    KronPrecond s{random_spd(3, rng), random_spd(2, rng), std::nullopt};
    CHECK(kl_div(m, s) == doctest::Approx(kl_div(m.damped(), s.dense())).epsilon(1e-10));
  }
}

TEST_CASE("kl_div rejects non-SPD preconditioners") {
  Matrix H = Matrix::Identity(2, 2);
  Matrix S = Matrix::Identity(2, 2);
  S(1, 1) = -1.0;
  CHECK_THROWS_AS(kl_div(H, S), NotPositiveDefinite);
}

TEST_CASE("kl_div nonnegativity and identity of indiscernibles") {
  SplitMix64 rng(107);
  for (int trial = 0; trial < 200; ++trial) {
    Index n = 2 + static_cast<Index>(rng.next_u64() % 4);
    Matrix X = random_spd(n, rng, 0.2, 4.0);
    Matrix S = random_spd(n, rng, 0.2, 4.0);
    double d = kl_div(X, S);
    CHECK(d >= -1e-12);
    if ((X - S).norm() > 1e-6 * X.norm()) CHECK(d > 0.0);
    CHECK(std::abs(kl_div(X, X)) < 1e-10);
  }
}

TEST_CASE("kl_div is invariant under simultaneous orthogonal congruence") {
  SplitMix64 rng(109);
  for (int trial = 0; trial < 20; ++trial) {
    Index n = 2 + static_cast<Index>(rng.next_u64() % 4);
    Matrix X = random_spd(n, rng, 0.2, 4.0);
    Matrix S = random_spd(n, rng, 0.2, 4.0);
    Matrix U = random_orthogonal(n, rng);
    Matrix Xr = 0.5 * (U * X * U.transpose() + (U * X * U.transpose()).transpose());
    Matrix Sr = 0.5 * (U * S * U.transpose() + (U * S * U.transpose()).transpose());
    CHECK(std::abs(kl_div(Xr, Sr) - kl_div(X, S)) < 1e-10 * std::max(1.0, kl_div(X, S)));
  }
}

TEST_CASE("kl_div Kronecker scale counter-play") {
  SplitMix64 rng(113);
  auto pop = GradientPopulation::gaussian(3, 2, 40, rng.next_u64());
  SecondMoment m = moment_from(pop);
  Matrix Sa = random_spd(3, rng), Sb = random_spd(2, rng);
  double base = kl_div(m, KronPrecond{Sa, Sb, std::nullopt});
  for (double c : {0.1, 0.5, 2.0, 10.0}) {
    double scaled = kl_div(m, KronPrecond{Matrix(c * Sa), Matrix(Sb / c), std::nullopt});
    CHECK(std::abs(scaled - base) < 1e-10 * std::max(1.0, std::abs(base)));
  }
}

TEST_CASE("kl_grad_precision plug-in example") {
  // Sa = Sb = I, single sample G = I2: grad_a = 0.5(-2I + I) = -I/2.
  GradientPopulation pop;
  pop.samples.push_back(Matrix::Identity(2, 2));
  SecondMoment m = moment_from(pop);
  KronPrecond s{Matrix::Identity(2, 2), Matrix::Identity(2, 2), std::nullopt};
  auto [ga, gb] = kl_grad_precision(m, s);
  CHECK((ga - Matrix(-0.5 * Matrix::Identity(2, 2))).norm() < 1e-14);
  CHECK((gb - Matrix(-0.5 * Matrix::Identity(2, 2))).norm() < 1e-14);
}

TEST_CASE("kl_grad_precision vanishes at the flip-flop fixed point") {
  SplitMix64 rng(127);
  auto pop = GradientPopulation::gaussian(3, 2, 50, rng.next_u64());
  FlipFlopResult ff = flip_flop_kl(pop, 1e-13, 500);
  SecondMoment m = moment_from(pop);
  auto [ga, gb] = kl_grad_precision(m, ff.precond);
  CHECK(ga.norm() <= 1e-8);
  CHECK(gb.norm() <= 1e-8);
}

TEST_CASE("kl_grad_precision matches central finite differences") {
  SplitMix64 rng(131);
  for (int trial = 0; trial < 20; ++trial) {
    Index da = 2 + static_cast<Index>(rng.next_u64() % 3);
    Index db = 2 + static_cast<Index>(rng.next_u64() % 3);
    auto pop = GradientPopulation::gaussian(da, db, 30, rng.next_u64());
    SecondMoment m = moment_from(pop);
    Matrix Sa = random_spd(da, rng, 0.5, 2.0), Sb = random_spd(db, rng, 0.5, 2.0);
    Matrix Pa = inv_of(Sa), Pb = inv_of(Sb);

    auto [ga, gb] = kl_grad_precision(m, KronPrecond{Sa, Sb, std::nullopt});
    Matrix fda = fd_precision_grad(m, Pa, Pb, true);
    Matrix fdb = fd_precision_grad(m, Pa, Pb, false);
    CHECK((fda - ga).norm() <= 1e-5 * ga.norm());
    CHECK((fdb - gb).norm() <= 1e-5 * gb.norm());
  }
}

TEST_CASE("frob_obj examples and dense oracle") {
  SplitMix64 rng(137);
  Matrix Sa = random_spd(3, rng), Sb = random_spd(2, rng);
  KronPrecond s{Sa, Sb, std::nullopt};
  SecondMoment exact{s.dense(), 0.0};
  CHECK(frob_obj(exact, s) < 1e-12);

  SecondMoment zero{Matrix::Zero(4, 4), 0.0};
  KronPrecond eye{Matrix::Identity(2, 2), Matrix::Identity(2, 2), std::nullopt};
  CHECK(frob_obj(zero, eye) == doctest::Approx(2.0));

  auto pop = GradientPopulation::gaussian(3, 2, 25, rng.next_u64());
  SecondMoment m = moment_from(pop, 0.5);
  double via_lib = frob_obj(m, s);
  double via_dense = (m.H + 0.5 * Matrix::Identity(6, 6) - kron(Sa, Sb)).norm();
  CHECK(via_lib == doctest::Approx(via_dense).epsilon(1e-12));
}

TEST_CASE("vn_div scalar formula and zero at equality") {
  Matrix X1(1, 1), S1(1, 1);
  X1 << 2.0;
  S1 << 1.0;
  CHECK(vn_div(X1, S1) == doctest::Approx(2.0 * std::log(2.0) - 1.0).epsilon(1e-9));
  CHECK(vn_div(X1, S1) == doctest::Approx(0.386294).epsilon(1e-4));

  SplitMix64 rng(139);
  Matrix X = random_spd(3, rng);
  CHECK(std::abs(vn_div(X, X)) < 1e-10);
}

TEST_CASE("vn_div factored evaluation matches the dense matrix-log oracle") {
  SplitMix64 rng(149);
  for (int trial = 0; trial < 10; ++trial) {
    auto pop = GradientPopulation::gaussian(3, 2, 30, rng.next_u64());
    SecondMoment m = moment_from(pop, 1e-6);
    KronPrecond s{random_spd(3, rng), random_spd(2, rng), std::nullopt};
    double factored = vn_div(m, s);
    double dense = vn_div(m.damped(), s.dense());
    CHECK(std::abs(factored - dense) <= 1e-9 * std::max(1.0, std::abs(dense)));
  }
}

TEST_CASE("vn_div nonnegativity on seeded pairs") {
  SplitMix64 rng(151);
  for (int trial = 0; trial < 200; ++trial) {
    Index n = 2 + static_cast<Index>(rng.next_u64() % 4);
    Matrix X = random_spd(n, rng, 0.2, 4.0);
    Matrix S = random_spd(n, rng, 0.2, 4.0);
    CHECK(vn_div(X, S) >= -1e-10);
    CHECK(std::abs(vn_div(X, X)) < 1e-10);
  }
}

TEST_CASE("auto damping keeps singular targets usable") {
  Matrix H = Matrix::Zero(2, 2);
  H(0, 0) = 1.0;  // singular
  SecondMoment m = SecondMoment::with_auto_damping(H);
  CHECK(m.kappa > 0.0);
  CHECK(m.kappa == doctest::Approx(1e-12 * 0.5));
  KronPrecond s{Matrix::Identity(2, 2), Matrix::Identity(1, 1), std::nullopt};
  CHECK(std::isfinite(kl_div(m, s)));

  SplitMix64 rng(157);
  Matrix full = random_spd(2, rng);
  CHECK(SecondMoment::with_auto_damping(full).kappa == 0.0);
}
