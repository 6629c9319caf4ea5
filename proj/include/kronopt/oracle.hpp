#pragma once

#include <cstdint>
#include <vector>

#include "kronopt/divergence.hpp"
#include "kronopt/estimators.hpp"

namespace kronopt {

// Finite sample set standing in for the expectation E[.] over gradients.
struct GradientPopulation {
  std::vector<Matrix> samples;
  std::uint64_t seed = 0;

  Index rows() const { return samples.empty() ? 0 : samples.front().rows(); }
  Index cols() const { return samples.empty() ? 0 : samples.front().cols(); }
  int size() const { return static_cast<int>(samples.size()); }

  Matrix second_moment() const;  // mean of vec(G) vec(G)^T
  Matrix mean_GGt() const;
  Matrix mean_GtG() const;
  Matrix mean_GMGt(const Matrix& M) const;  // mean of G M G^T
  Matrix mean_GtMG(const Matrix& M) const;  // mean of G^T M G

  static GradientPopulation gaussian(Index da, Index db, int n, std::uint64_t seed);
  // G = A^{1/2} Z B^{1/2} with iid standard normal Z.
  static GradientPopulation matrix_normal(const Matrix& A, const Matrix& B, int n,
                                          std::uint64_t seed);
};

enum class Side { a, b };
enum class DivergenceKind { kl, frob, vn };

struct FlipFlopResult {
  KronPrecond precond;
  int sweeps = 0;
  double residual_a = 0.0;
  double residual_b = 0.0;
  // KL run: the objective up to terms constant in S (finite for singular
  // targets). Frobenius run: the full objective.
  std::vector<double> objective_per_sweep;
};

// Alternating exact coordinate minimization of the KL objective over
// (Sa, Sb). Each half-sweep minimizes over one factor exactly, so the KL
// objective is non-increasing per sweep. Starts from the optimally scaled
// one-sided pair; the returned factors are normalized to Tr(Sa) = d_a.
// With kappa = 0 a singular population moment gets the automatic damping.
FlipFlopResult flip_flop_kl(const GradientPopulation& pop, double tol, int max_iter,
                            double kappa = 0.0);

// Same alternating scheme for the Frobenius objective.
FlipFlopResult flip_flop_frob(const GradientPopulation& pop, double tol, int max_iter);

// Closed-form stationary pair of the von Neumann objective:
// (mean GG^T, mean G^T G / Tr(mean GG^T)).
KronPrecond vn_closed_form(const GradientPopulation& pop);

// Closed form mean[G G^T] (side a) or mean[G^T G] (side b), cross-checked
// against gradient descent on the Cholesky factor of the KL objective.
// Throws NoConvergence if the numeric route disagrees beyond 1e-6 relative.
Matrix one_sided_kl_min(const GradientPopulation& pop, Side side);

// Relative gap between the numeric minimizer and the closed form.
double one_sided_numeric_gap(const GradientPopulation& pop, Side side);

// One factor-EMA step with the expectation realized as the population mean
// (equivalently: the per-sample estimator outputs averaged over samples).
KronPrecond kl_ema_population_step(const GradientPopulation& pop, const KronPrecond& S_t,
                                   double beta2);

// Best Kronecker approximation of H + kappa*I in Frobenius norm via the
// rank-1 SVD of the (d_a^2 x d_b^2) rearrangement.
KronPrecond nearest_kron_frobenius(const SecondMoment& m, Index da, Index db);

// Minimizer of KL over the augmented diagonal in a fixed product basis:
// d* = mean[(vec(Qa^T G Qb))^2].
AugmentedDiag diag_kl_min(const GradientPopulation& pop, const Matrix& Qa, const Matrix& Qb);

// Smallest KL increase over random positive perturbations of d; negative
// means a probe beat d.
double diag_probe_margin(const GradientPopulation& pop, const Matrix& Qa, const Matrix& Qb,
                         const AugmentedDiag& d, int probes, std::uint64_t seed);

// Proximal subproblem at iterate S_t with metric blocks
// W_k = (d_other/2) (S_k^-1 kron S_k^-1).
struct ProxProblem {
  KronPrecond S_t;
  double beta2 = 1.0;
};

// Minimizes the linearized KL plus the W-weighted quadratic anchor over
// symmetric (Xa, Xb); the KL gradients at S_t come from central finite
// differences. Cross-checks the minimizer against the factor EMA averaged
// over the population and throws NoConvergence on disagreement > 1e-6.
KronPrecond prox_solve(const ProxProblem& pb, const GradientPopulation& pop);

// Normalized residuals of the stationarity conditions of the chosen
// objective at (Sa, Sb).
std::pair<double, double> stationarity_residuals(const GradientPopulation& pop,
                                                 const KronPrecond& s, DivergenceKind kind);

// Optimal scalar c for KL(X, c*S): Tr(X S^-1) / dim.
double optimal_scale(const SecondMoment& m, const KronPrecond& s);

// Three-factor analogue of flip_flop_kl for tensor populations.
struct TensorFlipFlopResult {
  Matrix Sa, Sb, Sc;
  int sweeps = 0;
  double residual = 0.0;
};
TensorFlipFlopResult flip_flop_kl_tensor(const std::vector<Tensor3>& samples, double tol,
                                         int max_iter);

}  // namespace kronopt
