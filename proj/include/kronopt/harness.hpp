#pragma once

#include <cstdint>
#include <iosfwd>
#include <string>
#include <vector>

#include "kronopt/optimizers.hpp"
#include "kronopt/rng.hpp"

namespace kronopt {

enum class TaskKind { KronQuadratic, MlpRegression, SoftmaxClassification, Tensor3Quadratic };

std::string task_name(TaskKind k);
TaskKind task_from_string(const std::string& name);

struct TaskSpec {
  TaskKind kind = TaskKind::KronQuadratic;
  std::vector<Index> dims;  // empty = task default
  std::uint64_t seed = 0;
  int steps = 100;
  int batch = 1;
};

struct RunRecord {
  int step = 0;
  double loss = 0.0;
  double grad_norm = 0.0;
  double wall_ms = 0.0;
  std::string optimizer;
  std::uint64_t seed = 0;
  bool diverged = false;
};

struct RunOutput {
  std::vector<RunRecord> records;
  bool diverged = false;
  std::vector<ParamState> final_states;
};

// Quadratic with Kronecker-structured Hessian A kron B. The reported loss
// is 0.5 * vec(theta)^T (A kron B) vec(theta); stochastic gradients are
// G = A (theta - Z) B with Z matrix-normal of covariance
// noise^2 (A kron B)^-1, so the gradient second moment near the optimum is
// proportional to A kron B and the KL fixed point recovers (A, B) up to
// scale.
struct KronQuadraticTask {
  Matrix A, B;
  Matrix A_half, B_half;
  Matrix theta0;
  double noise = 1e-4;

  double loss(const Matrix& theta) const;
  Matrix gradient(const Matrix& theta, int batch, SplitMix64& rng) const;
};

KronQuadraticTask make_kron_quadratic_task(const std::vector<Index>& dims, std::uint64_t seed);

// Fully deterministic for a fixed (spec, cfg) on one platform.
RunOutput run_task(const TaskSpec& spec, const OptimizerConfig& cfg);

// CSV schema: step,loss,grad_norm,wall_ms,optimizer,seed. The wall_ms
// column is written as 0 unless include_timing is set, keeping the bytes
// reproducible run-to-run.
void write_csv(const std::string& path, const std::vector<RunRecord>& records,
               bool include_timing = false);

enum class TolProfile { Default, Strict };

struct ClaimResult {
  std::string name;
  int instances = 0;
  double max_residual = 0.0;
  double tol = 0.0;
  bool pass = false;
  double wall_seconds = 0.0;
};

struct ClaimReport {
  std::vector<ClaimResult> claims;
  bool all_pass() const;
};

// Runs the full verification suite over the seed grid (each claim derives
// its instance seeds from the grid). Strict tightens every tolerance 100x.
ClaimReport run_claims(TolProfile profile, const std::vector<std::uint64_t>& seed_grid);

void print_claim_report(const ClaimReport& report, std::ostream& os);
void write_claim_report_json(const ClaimReport& report, const std::string& path);

struct CompareRun {
  TaskSpec task;
  OptimizerConfig cfg;
  double threshold = 1e-3;
};

// Parses the flat key-value config format: optional global keys followed by
// one [run] block per run, keys mirroring the CLI flags.
std::vector<CompareRun> parse_compare_config(const std::string& path);

// Runs each configuration, writes one CSV per run plus summary.json
// (final loss, best loss, steps-to-threshold) into out_dir.
void compare(const std::vector<CompareRun>& runs, const std::string& out_dir,
             bool include_timing = false);
void compare(const std::vector<TaskSpec>& tasks, const std::vector<OptimizerConfig>& cfgs,
             const std::string& out_dir);

}  // namespace kronopt
