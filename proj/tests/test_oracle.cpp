#include <doctest.h>

#include <cmath>

#include "kronopt/oracle.hpp"
#include "kronopt/rng.hpp"

using namespace kronopt;

TEST_CASE("flip_flop_kl isotropic cases") {
  const Index n = 3;
  const double c = 3.0;

  // Single sample G = c*I: substituting S_b = s*I into the fixed-point
  // equations gives S_a = c^2/(s n) I, so the product is (c^2/n) I.
  GradientPopulation pop;
  pop.samples.push_back(c * Matrix::Identity(n, n));
  FlipFlopResult ff = flip_flop_kl(pop, 1e-12, 50);
  Matrix prod = kron(ff.precond.Sa, ff.precond.Sb);
  CHECK((prod - Matrix(c * c / n * Matrix::Identity(n * n, n * n))).norm() < 1e-9);
  CHECK(ff.residual_a <= 1e-12);
  CHECK(ff.residual_b <= 1e-12);
  CHECK(ff.sweeps <= 2);
  // Scale normalization: Tr(Sa) = d_a.
  CHECK(ff.precond.Sa.trace() == doctest::Approx(static_cast<double>(n)));

  // Isotropic second moment E[gg^T] = c^2 I: the product is c^2 I.
  GradientPopulation iso;
  for (Index i = 0; i < n; ++i)
    for (Index j = 0; j < n; ++j) {
      Matrix e = Matrix::Zero(n, n);
      e(i, j) = c * static_cast<double>(n);
      iso.samples.push_back(e);
    }
  FlipFlopResult fi = flip_flop_kl(iso, 1e-12, 50);
  Matrix prod_iso = kron(fi.precond.Sa, fi.precond.Sb);
  CHECK((prod_iso - Matrix(c * c * Matrix::Identity(n * n, n * n))).norm() < 1e-9);
}

TEST_CASE("flip_flop_kl converges with tight residuals and monotone KL") {
  SplitMix64 rng(301);
  for (int trial = 0; trial < 10; ++trial) {
    Index da = 2 + static_cast<Index>(rng.next_u64() % 5);
    Index db = 2 + static_cast<Index>(rng.next_u64() % 5);
    auto pop = GradientPopulation::gaussian(da, db, 200, rng.next_u64());
    FlipFlopResult ff = flip_flop_kl(pop, 1e-10, 500);
    auto [ra, rb] = stationarity_residuals(pop, ff.precond, DivergenceKind::kl);
    CHECK(ra <= 1e-10);
    CHECK(rb <= 1e-10);
    for (size_t s = 1; s < ff.objective_per_sweep.size(); ++s) {
      double prev = ff.objective_per_sweep[s - 1];
      CHECK(ff.objective_per_sweep[s] <= prev + 1e-12 * std::max(1.0, std::abs(prev)));
    }
  }
}

TEST_CASE("flip_flop_kl recovers the generating factors as samples grow") {
  SplitMix64 rng(307);
  Matrix A = random_spd(3, rng, 0.5, 2.0);
  Matrix B = random_spd(2, rng, 0.5, 2.0);
  Matrix target = kron(A, B);
  double prev_gap = std::numeric_limits<double>::infinity();
  for (int n : {30, 300, 3000}) {
    auto pop = GradientPopulation::matrix_normal(A, B, n, 1234);
    FlipFlopResult ff = flip_flop_kl(pop, 1e-11, 500);
    double gap = kl_div(target, kron(ff.precond.Sa, ff.precond.Sb));
    CHECK(gap < prev_gap);
    prev_gap = gap;
  }
  CHECK(prev_gap < 0.01);
}

TEST_CASE("flip_flop_kl reports NoConvergence when starved of sweeps") {
  auto pop = GradientPopulation::gaussian(3, 3, 50, 99);
  CHECK_THROWS_AS(flip_flop_kl(pop, 1e-14, 1), NoConvergence);
}

TEST_CASE("one_sided_kl_min closed form and numeric agreement") {
  SplitMix64 rng(311);
  Matrix G = rng.normal_matrix(3, 2);
  GradientPopulation single;
  single.samples.push_back(G);
  Matrix Sa = one_sided_kl_min(single, Side::a);
  CHECK((Sa - Matrix(G * G.transpose())).norm() < 1e-14);

  for (int trial = 0; trial < 20; ++trial) {
    auto pop = GradientPopulation::gaussian(3, 2, 50, rng.next_u64());
    CHECK(one_sided_numeric_gap(pop, Side::a) <= 1e-6);
    CHECK(one_sided_numeric_gap(pop, Side::b) <= 1e-6);
  }
}

TEST_CASE("one_sided closed form beats random SPD probes in KL") {
  SplitMix64 rng(313);
  auto pop = GradientPopulation::gaussian(3, 2, 50, rng.next_u64());
  Matrix Sa = pop.mean_GGt();
  const Index db = 2;
  SecondMoment m{pop.second_moment(), 0.0};
  auto kl_at = [&](const Matrix& cand) {
    return kl_div(m, KronPrecond{Matrix(cand / static_cast<double>(db)),
                                 Matrix::Identity(db, db), std::nullopt});
  };
  double base = kl_at(Sa);
  for (int probe = 0; probe < 100; ++probe) {
    Matrix noise = rng.normal_matrix(3, 3);
    Matrix cand = Sa + 0.05 * Sa.norm() * 0.5 * (noise + noise.transpose());
    if (sym_eigen(cand).values.minCoeff() <= 0.0) continue;
    CHECK(kl_at(cand) >= base - 1e-12);
  }
}

TEST_CASE("nearest_kron_frobenius exact recovery and identity") {
  SplitMix64 rng(317);
  Matrix A = random_spd(3, rng, 0.5, 2.0);
  Matrix B = random_spd(2, rng, 0.5, 2.0);
  SecondMoment m{kron(A, B), 0.0};
  KronPrecond out = nearest_kron_frobenius(m, 3, 2);
  CHECK((kron(out.Sa, out.Sb) - kron(A, B)).norm() <= 1e-10 * kron(A, B).norm());

  SecondMoment eye{Matrix::Identity(6, 6), 0.0};
  KronPrecond id = nearest_kron_frobenius(eye, 3, 2);
  Matrix na = id.Sa / id.Sa.trace() * 3.0;
  Matrix nb = id.Sb / id.Sb.trace() * 2.0;
  CHECK((na - Matrix::Identity(3, 3)).norm() < 1e-10);
  CHECK((nb - Matrix::Identity(2, 2)).norm() < 1e-10);
}

TEST_CASE("nearest_kron_frobenius is optimal among random candidates") {
  SplitMix64 rng(331);
  auto pop = GradientPopulation::gaussian(3, 2, 60, rng.next_u64());
  SecondMoment m{pop.second_moment(), 0.0};
  KronPrecond best = nearest_kron_frobenius(m, 3, 2);
  double f_best = frob_obj(m, best);
  for (int probe = 0; probe < 100; ++probe) {
    KronPrecond cand{random_spd(3, rng, 0.2, 3.0), random_spd(2, rng, 0.2, 3.0), std::nullopt};
    CHECK(frob_obj(m, cand) >= f_best - 1e-10);
  }
}

TEST_CASE("F-Shampoo fixed point attains the SVD optimum") {
  SplitMix64 rng(337);
  for (int trial = 0; trial < 5; ++trial) {
    auto pop = GradientPopulation::gaussian(3, 2, 80, rng.next_u64());
    SecondMoment m{pop.second_moment(), 0.0};
    FlipFlopResult ff = flip_flop_frob(pop, 1e-12, 2000);
    auto [ra, rb] = stationarity_residuals(pop, ff.precond, DivergenceKind::frob);
    CHECK(ra <= 1e-7);
    CHECK(rb <= 1e-7);
    KronPrecond svd = nearest_kron_frobenius(m, 3, 2);
    CHECK(frob_obj(m, ff.precond) <= frob_obj(m, svd) + 1e-8 * (1.0 + frob_obj(m, svd)));
  }
}

TEST_CASE("diag_kl_min closed forms") {
  SplitMix64 rng(347);
  auto pop = GradientPopulation::gaussian(3, 2, 40, rng.next_u64());
  // Identity bases: coordinate-wise mean of squares.
  AugmentedDiag d = diag_kl_min(pop, Matrix::Identity(3, 3), Matrix::Identity(2, 2));
  Vector expected = Vector::Zero(6);
  for (const Matrix& G : pop.samples) expected += vec_rowmajor(G).cwiseAbs2();
  expected /= pop.size();
  CHECK((d.d - expected).norm() < 1e-14);

  // Single sample with arbitrary bases.
  GradientPopulation single;
  single.samples.push_back(rng.normal_matrix(3, 2));
  Matrix Qa = random_orthogonal(3, rng), Qb = random_orthogonal(2, rng);
  AugmentedDiag ds = diag_kl_min(single, Qa, Qb);
  Vector ghat = vec_rowmajor(Qa.transpose() * single.samples[0] * Qb);
  CHECK((ds.d - Vector(ghat.cwiseAbs2())).norm() < 1e-14);
}

TEST_CASE("diag_kl_min survives random positive probes") {
  SplitMix64 rng(349);
  for (int trial = 0; trial < 5; ++trial) {
    auto pop = GradientPopulation::gaussian(3, 2, 50, rng.next_u64());
    Matrix Qa = random_orthogonal(3, rng), Qb = random_orthogonal(2, rng);
    AugmentedDiag d = diag_kl_min(pop, Qa, Qb);
    CHECK(diag_probe_margin(pop, Qa, Qb, d, 100, rng.next_u64()) >= -1e-12);
  }
  CHECK_THROWS_AS(
      diag_kl_min(GradientPopulation::gaussian(2, 2, 5, 1), Matrix::Ones(2, 2), Matrix::Identity(2, 2)),
      InvalidInput);
}

TEST_CASE("prox_solve closed forms at the step-size extremes") {
  SplitMix64 rng(353);
  auto pop = GradientPopulation::gaussian(3, 2, 20, rng.next_u64());
  KronPrecond S_t{random_spd(3, rng, 0.5, 2.0), random_spd(2, rng, 0.5, 2.0), std::nullopt};

  // beta2 = 1: the full step lands on the population means.
  KronPrecond full = prox_solve(ProxProblem{S_t, 1.0}, pop);
  Matrix inv_b = matrix_power_from_eigen(sym_eigen(S_t.Sb), -1.0);
  Matrix inv_a = matrix_power_from_eigen(sym_eigen(S_t.Sa), -1.0);
  Matrix want_a = pop.mean_GMGt(inv_b) / 2.0;
  Matrix want_b = pop.mean_GtMG(inv_a) / 3.0;
  CHECK((full.Sa - want_a).norm() <= 1e-5 * want_a.norm());
  CHECK((full.Sb - want_b).norm() <= 1e-5 * want_b.norm());

  // beta2 -> 0: the proximal anchor wins.
  KronPrecond anchored = prox_solve(ProxProblem{S_t, 1e-6}, pop);
  CHECK((anchored.Sa - S_t.Sa).norm() <= 1e-4 * S_t.Sa.norm());
  CHECK((anchored.Sb - S_t.Sb).norm() <= 1e-4 * S_t.Sb.norm());
}

TEST_CASE("prox_solve matches the EMA at intermediate step sizes") {
  SplitMix64 rng(359);
  for (double beta2 : {0.1, 0.3, 1.0}) {
    auto pop = GradientPopulation::gaussian(3, 2, 20, rng.next_u64());
    KronPrecond S_t{random_spd(3, rng, 0.5, 2.0), random_spd(2, rng, 0.5, 2.0), std::nullopt};
    KronPrecond prox = prox_solve(ProxProblem{S_t, beta2}, pop);
    KronPrecond ema = kl_ema_population_step(pop, S_t, beta2);
    CHECK((prox.Sa - ema.Sa).norm() <= 1e-6 * ema.Sa.norm());
    CHECK((prox.Sb - ema.Sb).norm() <= 1e-6 * ema.Sb.norm());
  }
}

TEST_CASE("stationarity residuals expose the one-sided gap") {
  SplitMix64 rng(367);
  for (int trial = 0; trial < 10; ++trial) {
    auto pop = GradientPopulation::gaussian(3, 3, 300, rng.next_u64());
    KronPrecond one{pop.mean_GGt(), pop.mean_GtG(), std::nullopt};
    auto [ra, rb] = stationarity_residuals(pop, one, DivergenceKind::kl);
    CHECK(std::max(ra, rb) > 1e-3);
  }
}

TEST_CASE("vn closed form satisfies the trace-scaling stationarity") {
  SplitMix64 rng(373);
  auto pop = GradientPopulation::gaussian(4, 3, 100, rng.next_u64());
  KronPrecond s = vn_closed_form(pop);
  auto [ra, rb] = stationarity_residuals(pop, s, DivergenceKind::vn);
  CHECK(ra <= 1e-10);
  CHECK(rb <= 1e-10);
}

TEST_CASE("optimal_scale minimizes KL over scalar multiples") {
  SplitMix64 rng(379);
  auto pop = GradientPopulation::gaussian(3, 2, 50, rng.next_u64());
  SecondMoment m{pop.second_moment(), 0.0};
  KronPrecond s{random_spd(3, rng), random_spd(2, rng), std::nullopt};
  double c = optimal_scale(m, s);
  auto kl_scaled = [&](double scale) {
    return kl_div(m, KronPrecond{Matrix(scale * s.Sa), s.Sb, std::nullopt});
  };
  double best = kl_scaled(c);
  CHECK(best <= kl_scaled(0.9 * c));
  CHECK(best <= kl_scaled(1.1 * c));
}

TEST_CASE("tensor flip-flop reaches a KL stationary point") {
  SplitMix64 rng(383);
  std::vector<Tensor3> samples;
  for (int i = 0; i < 40; ++i) {
    Tensor3 T(2, 3, 2);
    T.data = rng.normal_vector(T.size());
    samples.push_back(T);
  }
  TensorFlipFlopResult ff = flip_flop_kl_tensor(samples, 1e-10, 500);
  CHECK(ff.residual <= 1e-10);
  CHECK(ff.sweeps >= 2);
}
