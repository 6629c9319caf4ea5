#pragma once

#include <optional>
#include <string>
#include <vector>

#include "kronopt/estimators.hpp"

namespace kronopt {

enum class Variant {
  Shampoo,
  Soap,
  KlShampoo,
  KlSoap,
  FShampooV1,
  FShampooV2,
  VnShampooV1,
  VnShampooV2,
  Adam,
  Sgd,
};

std::string variant_name(Variant v);
Variant variant_from_string(const std::string& name);

// Step-size schedule stubs for the harness; the verified surface uses
// Constant.
enum class LrSchedule { Constant, LinearWarmup, Cosine };

LrSchedule schedule_from_string(const std::string& name);
std::string schedule_name(LrSchedule s);

// Multiplier applied to gamma at the given step of a total_steps run.
double schedule_scale(LrSchedule s, int warmup_steps, int step, int total_steps);

struct OptimizerConfig {
  double gamma = 1e-3;        // step size
  double beta1 = 0.0;         // momentum weight, [0, 1)
  double beta2 = 0.01;        // EMA weight on the new term, (0, 1]
  double kappa = 0.0;         // damping added to eigenvalues at preconditioning
  double p = 0.5;             // Shampoo power, 1/4 or 1/2
  int refresh_interval = 1;   // T: eigen/QR refresh period
  double weight_decay = 0.0;  // decoupled
  Variant variant = Variant::Sgd;
  bool grafting = false;      // Shampoo only
  double epsilon = 1e-8;      // Adam/RMSProp stabilizer
  bool bias_correction = false;
  double init_scale = 1.0;
  double eig_floor = 1e-30;
  LrSchedule schedule = LrSchedule::Constant;
  int warmup_steps = 0;

  void validate() const;
  EmaConfig ema() const { return EmaConfig{beta2, kappa, eig_floor}; }
};

// Per-parameter optimizer state. Buffers are allocated only when the
// variant uses them, so num_state_elements() reflects the true footprint.
struct ParamState {
  std::array<Index, 3> shape{0, 0, 0};
  int ndims = 0;
  std::vector<SpdFactor> factors;
  std::optional<AugmentedDiag> aug;
  Vector momentum;  // row-major over the parameter; empty when unused
  Vector adam_m;    // Adam first moment (adam only)
  Vector adam_v;    // Adam second moment (adam and grafting)
  long step = 0;

  Index param_size() const;
  std::size_t num_state_elements() const;
};

ParamState init_state(const std::vector<Index>& shape, const OptimizerConfig& cfg);

// One optimizer step: estimation updates, preconditioned direction,
// momentum, decoupled weight decay, parameter update.
void step(ParamState& st, Matrix& theta, const Matrix& G, const OptimizerConfig& cfg);
void step(ParamState& st, Tensor3& theta, const Tensor3& G, const OptimizerConfig& cfg);

// The two phases of a step, split out for testing. update_estimates runs
// the variant's estimation rules (factor EMAs, eigenvalue EMAs, periodic
// eigen/QR refresh, grafting moment) and advances the step counter;
// preconditioned_direction computes the update direction from the current
// state without mutating it.
void update_estimates(ParamState& st, const Matrix& G, const OptimizerConfig& cfg);
void update_estimates(ParamState& st, const Tensor3& G, const OptimizerConfig& cfg);
Matrix preconditioned_direction(const ParamState& st, const Matrix& G,
                                const OptimizerConfig& cfg);
Tensor3 preconditioned_direction(const ParamState& st, const Tensor3& G,
                                 const OptimizerConfig& cfg);

}  // namespace kronopt
