#include "kronopt/optimizers.hpp"

#include <cmath>

namespace kronopt {

std::string variant_name(Variant v) {
  switch (v) {
    case Variant::Shampoo: return "shampoo";
    case Variant::Soap: return "soap";
    case Variant::KlShampoo: return "kl_shampoo";
    case Variant::KlSoap: return "kl_soap";
    case Variant::FShampooV1: return "f_shampoo_v1";
    case Variant::FShampooV2: return "f_shampoo_v2";
    case Variant::VnShampooV1: return "vn_shampoo_v1";
    case Variant::VnShampooV2: return "vn_shampoo_v2";
    case Variant::Adam: return "adam";
    case Variant::Sgd: return "sgd";
  }
  throw InvalidInput("variant_name: unknown variant");
}

Variant variant_from_string(const std::string& name) {
  for (Variant v : {Variant::Shampoo, Variant::Soap, Variant::KlShampoo, Variant::KlSoap,
                    Variant::FShampooV1, Variant::FShampooV2, Variant::VnShampooV1,
                    Variant::VnShampooV2, Variant::Adam, Variant::Sgd})
    if (variant_name(v) == name) return v;
  throw InvalidInput("unknown optimizer variant: " + name);
}

LrSchedule schedule_from_string(const std::string& name) {
  if (name == "constant") return LrSchedule::Constant;
  if (name == "linear-warmup") return LrSchedule::LinearWarmup;
  if (name == "cosine") return LrSchedule::Cosine;
  throw InvalidInput("unknown schedule: " + name);
}

std::string schedule_name(LrSchedule s) {
  switch (s) {
    case LrSchedule::Constant: return "constant";
    case LrSchedule::LinearWarmup: return "linear-warmup";
    case LrSchedule::Cosine: return "cosine";
  }
  throw InvalidInput("schedule_name: unknown schedule");
}

double schedule_scale(LrSchedule s, int warmup_steps, int step, int total_steps) {
  double scale = 1.0;
  if (warmup_steps > 0 && step < warmup_steps)
    scale = static_cast<double>(step + 1) / static_cast<double>(warmup_steps);
  if (s == LrSchedule::Cosine && total_steps > 1) {
    double progress = static_cast<double>(step) / static_cast<double>(total_steps - 1);
    scale *= 0.5 * (1.0 + std::cos(3.14159265358979323846 * progress));
  }
  return scale;
}

void OptimizerConfig::validate() const {
  if (!(gamma > 0.0)) throw InvalidInput("config: gamma must be > 0");
  if (beta1 < 0.0 || beta1 >= 1.0) throw InvalidInput("config: beta1 must be in [0, 1)");
  if (!(beta2 > 0.0) || beta2 > 1.0) throw InvalidInput("config: beta2 must be in (0, 1]");
  if (kappa < 0.0) throw InvalidInput("config: kappa must be >= 0");
  if (p != 0.25 && p != 0.5) throw InvalidInput("config: power must be 0.25 or 0.5");
  if (refresh_interval < 1) throw InvalidInput("config: refresh interval must be >= 1");
  if (weight_decay < 0.0) throw InvalidInput("config: weight decay must be >= 0");
  if (!(epsilon > 0.0)) throw InvalidInput("config: epsilon must be > 0");
  if (grafting && variant != Variant::Shampoo)
    throw InvalidInput("config: grafting is only legal for shampoo");
  if (warmup_steps < 0) throw InvalidInput("config: warmup must be >= 0");
}

Index ParamState::param_size() const {
  Index n = 1;
  for (int i = 0; i < ndims; ++i) n *= shape[static_cast<size_t>(i)];
  return n;
}

std::size_t ParamState::num_state_elements() const {
  std::size_t n = 0;
  for (const SpdFactor& f : factors)
    n += static_cast<std::size_t>(f.S.size() + f.eig.basis.size() + f.eig.values.size());
  if (aug) n += static_cast<std::size_t>(aug->d.size());
  n += static_cast<std::size_t>(momentum.size() + adam_m.size() + adam_v.size());
  return n;
}

namespace {

bool uses_factors(Variant v) { return v != Variant::Adam && v != Variant::Sgd; }

bool uses_eigenvalues(Variant v) { return uses_factors(v) && v != Variant::Soap; }

bool uses_aug(Variant v) { return v == Variant::Soap || v == Variant::KlSoap; }

bool refresh_due(const ParamState& st, const OptimizerConfig& cfg) {
  return st.step % cfg.refresh_interval == 0;
}

void require_variant_state(const ParamState& st, const OptimizerConfig& cfg, int ndims) {
  if (st.ndims != ndims) throw StateError("step: state rank does not match gradient rank");
  bool want_factors = uses_factors(cfg.variant);
  if (want_factors != !st.factors.empty())
    throw StateError("step: state was initialized for a different variant");
  if (uses_aug(cfg.variant) != st.aug.has_value())
    throw StateError("step: state was initialized for a different variant");
}

Matrix soap_direction(const ParamState& st, const Matrix& G, const OptimizerConfig& cfg) {
  const Matrix& Qa = st.factors[0].eig.basis;
  const Matrix& Qb = st.factors[1].eig.basis;
  Matrix ghat = Qa.transpose() * G * Qb;
  Vector denom = (st.aug->d.array() + cfg.epsilon).sqrt();
  Matrix scaled = mat_rowmajor(Vector(vec_rowmajor(ghat).cwiseQuotient(denom)), G.rows(), G.cols());
  return Qa * scaled * Qb.transpose();
}

Matrix factored_inv_sqrt_direction(const ParamState& st, const Matrix& G,
                                   const OptimizerConfig& cfg, double tau) {
  Matrix Ah = st.factors[0].cached_power(-0.5, cfg.kappa, cfg.eig_floor);
  Matrix Bh = st.factors[1].cached_power(-0.5, cfg.kappa, cfg.eig_floor);
  return (1.0 / std::sqrt(tau)) * (Ah * G * Bh);
}

Vector adam_direction_flat(const ParamState& st, const OptimizerConfig& cfg) {
  Vector m = st.adam_m;
  Vector v = st.adam_v;
  if (cfg.bias_correction) {
    double t = static_cast<double>(st.step);
    m /= 1.0 - std::pow(cfg.beta1, t);
    v /= 1.0 - std::pow(1.0 - cfg.beta2, t);
  }
  return m.cwiseQuotient(Vector((v.cwiseSqrt().array() + cfg.epsilon).matrix()));
}

}  // namespace

ParamState init_state(const std::vector<Index>& shape, const OptimizerConfig& cfg) {
  cfg.validate();
  if (shape.size() != 2 && shape.size() != 3)
    throw UnsupportedShape("init_state: only 2-D and 3-D parameters are supported");
  for (Index d : shape)
    if (d < 1) throw UnsupportedShape("init_state: dimensions must be positive");
  if (shape.size() == 3 && cfg.variant != Variant::KlShampoo && cfg.variant != Variant::Adam &&
      cfg.variant != Variant::Sgd)
    throw UnsupportedShape("init_state: 3-D parameters supported for kl_shampoo, adam, sgd");

  ParamState st;
  st.ndims = static_cast<int>(shape.size());
  for (size_t i = 0; i < shape.size(); ++i) st.shape[i] = shape[i];
  const Index n = st.param_size();

  if (uses_factors(cfg.variant)) {
    bool with_values = uses_eigenvalues(cfg.variant);
    for (int i = 0; i < st.ndims; ++i)
      st.factors.push_back(
          SpdFactor::identity(st.shape[static_cast<size_t>(i)], cfg.init_scale, with_values));
  }
  if (uses_aug(cfg.variant)) st.aug = AugmentedDiag{Vector::Zero(n)};

  if (cfg.variant == Variant::Adam) {
    st.adam_m = Vector::Zero(n);
    st.adam_v = Vector::Zero(n);
  } else {
    st.momentum = Vector::Zero(n);
    if (cfg.grafting) st.adam_v = Vector::Zero(n);
  }
  return st;
}

void update_estimates(ParamState& st, const Matrix& G, const OptimizerConfig& cfg) {
  require_variant_state(st, cfg, 2);
  if (G.rows() != st.shape[0] || G.cols() != st.shape[1])
    throw ShapeError("update_estimates: gradient shape mismatch");
  st.step += 1;
  const EmaConfig ema = cfg.ema();

  switch (cfg.variant) {
    case Variant::Shampoo: {
      shampoo_factor_ema(st.factors[0], st.factors[1], G, ema);
      if (refresh_due(st, cfg))
        for (SpdFactor& f : st.factors) {
          f.eig = sym_eigen(f.S);
          f.eig_stale = false;
        }
      if (cfg.grafting)
        st.adam_v = (1.0 - cfg.beta2) * st.adam_v + cfg.beta2 * vec_rowmajor(G).cwiseAbs2();
      break;
    }
    case Variant::Soap: {
      shampoo_factor_ema(st.factors[0], st.factors[1], G, ema);
      if (refresh_due(st, cfg))
        for (SpdFactor& f : st.factors) eigenbasis_qr_refresh(f);
      augmented_eigen_ema(*st.aug, st.factors[0], st.factors[1], G, ema);
      break;
    }
    case Variant::KlShampoo:
    case Variant::KlSoap: {
      kl_factor_ema(st.factors[0], st.factors[1], G, ema);
      eigenvalue_ema_kl(st.factors[0], st.factors[1], G, ema);
      if (refresh_due(st, cfg))
        for (SpdFactor& f : st.factors) eigenbasis_qr_refresh(f);
      if (cfg.variant == Variant::KlSoap)
        augmented_eigen_ema(*st.aug, st.factors[0], st.factors[1], G, ema);
      break;
    }
    case Variant::FShampooV1:
    case Variant::FShampooV2: {
      FactorVariant fv =
          cfg.variant == Variant::FShampooV1 ? FactorVariant::v1 : FactorVariant::v2;
      auto [da, db] = f_deltas(st.factors[0], st.factors[1], G, fv, cfg.eig_floor);
      st.factors[0].S = (1.0 - cfg.beta2) * st.factors[0].S + cfg.beta2 * da;
      st.factors[1].S = (1.0 - cfg.beta2) * st.factors[1].S + cfg.beta2 * db;
      st.factors[0].eig_stale = st.factors[1].eig_stale = true;
      eigenvalue_ema(st.factors[0], da, ema);
      eigenvalue_ema(st.factors[1], db, ema);
      if (refresh_due(st, cfg))
        for (SpdFactor& f : st.factors) eigenbasis_qr_refresh(f);
      break;
    }
    case Variant::VnShampooV1:
    case Variant::VnShampooV2: {
      FactorVariant fv =
          cfg.variant == Variant::VnShampooV1 ? FactorVariant::v1 : FactorVariant::v2;
      auto [da, db] = vn_deltas(st.factors[0], st.factors[1], G, fv);
      st.factors[0].S = (1.0 - cfg.beta2) * st.factors[0].S + cfg.beta2 * da;
      st.factors[1].S = (1.0 - cfg.beta2) * st.factors[1].S + cfg.beta2 * db;
      st.factors[0].eig_stale = st.factors[1].eig_stale = true;
      eigenvalue_ema(st.factors[0], da, ema);
      eigenvalue_ema(st.factors[1], db, ema);
      if (refresh_due(st, cfg))
        for (SpdFactor& f : st.factors) eigenbasis_qr_refresh(f);
      break;
    }
    case Variant::Adam: {
      Vector g = vec_rowmajor(G);
      st.adam_m = cfg.beta1 * st.adam_m + (1.0 - cfg.beta1) * g;
      st.adam_v = (1.0 - cfg.beta2) * st.adam_v + cfg.beta2 * g.cwiseAbs2();
      break;
    }
    case Variant::Sgd:
      break;
  }
}

Matrix preconditioned_direction(const ParamState& st, const Matrix& G,
                                const OptimizerConfig& cfg) {
  switch (cfg.variant) {
    case Variant::Shampoo: {
      Matrix Pa = st.factors[0].cached_power(-cfg.p, cfg.kappa, cfg.eig_floor);
      Matrix Pb = st.factors[1].cached_power(-cfg.p, cfg.kappa, cfg.eig_floor);
      Matrix u = Pa * G * Pb;
      if (cfg.grafting) {
        Vector denom = (st.adam_v.cwiseSqrt().array() + cfg.epsilon).matrix();
        double adam_norm = vec_rowmajor(G).cwiseQuotient(denom).norm();
        double u_norm = u.norm();
        if (u_norm > 0.0) u *= adam_norm / u_norm;
      }
      return u;
    }
    case Variant::Soap:
    case Variant::KlSoap:
      return soap_direction(st, G, cfg);
    case Variant::KlShampoo:
    case Variant::FShampooV1:
    case Variant::FShampooV2:
    case Variant::VnShampooV2:
      return factored_inv_sqrt_direction(st, G, cfg, 1.0);
    case Variant::VnShampooV1: {
      double prod = st.factors[0].S.trace() * st.factors[1].S.trace();
      if (prod <= 0.0) throw DegenerateScale("preconditioned_direction: nonpositive trace");
      return factored_inv_sqrt_direction(st, G, cfg, 1.0 / std::sqrt(prod));
    }
    case Variant::Adam:
      return mat_rowmajor(adam_direction_flat(st, cfg), G.rows(), G.cols());
    case Variant::Sgd:
      return G;
  }
  throw InvalidInput("preconditioned_direction: unknown variant");
}

void step(ParamState& st, Matrix& theta, const Matrix& G, const OptimizerConfig& cfg) {
  update_estimates(st, G, cfg);
  Matrix u = preconditioned_direction(st, G, cfg);
  Vector flat = vec_rowmajor(u);
  if (cfg.variant != Variant::Adam) {
    st.momentum = cfg.beta1 * st.momentum + flat;
    flat = st.momentum;
  }
  Matrix upd = mat_rowmajor(flat, theta.rows(), theta.cols());
  theta -= cfg.gamma * (upd + cfg.weight_decay * theta);
}

void update_estimates(ParamState& st, const Tensor3& G, const OptimizerConfig& cfg) {
  require_variant_state(st, cfg, 3);
  if (G.dims != st.shape) throw ShapeError("update_estimates: gradient shape mismatch");
  st.step += 1;
  const EmaConfig ema = cfg.ema();

  switch (cfg.variant) {
    case Variant::KlShampoo: {
      // Deltas from the pre-update caches drive both the factor EMA and
      // the eigenvalue EMA.
      Matrix Pa = st.factors[0].cached_inverse(cfg.eig_floor);
      Matrix Pb = st.factors[1].cached_inverse(cfg.eig_floor);
      Matrix Pc = st.factors[2].cached_inverse(cfg.eig_floor);
      Matrix Ga = mode_unfold(G, 0), Gb = mode_unfold(G, 1), Gc = mode_unfold(G, 2);
      Matrix da = Ga * kron(Pb, Pc) * Ga.transpose() /
                  static_cast<double>(st.shape[1] * st.shape[2]);
      Matrix db = Gb * kron(Pa, Pc) * Gb.transpose() /
                  static_cast<double>(st.shape[0] * st.shape[2]);
      Matrix dc = Gc * kron(Pa, Pb) * Gc.transpose() /
                  static_cast<double>(st.shape[0] * st.shape[1]);
      tensor_kl_factor_ema(st.factors[0], st.factors[1], st.factors[2], G, ema);
      eigenvalue_ema(st.factors[0], da, ema);
      eigenvalue_ema(st.factors[1], db, ema);
      eigenvalue_ema(st.factors[2], dc, ema);
      if (refresh_due(st, cfg))
        for (SpdFactor& f : st.factors) eigenbasis_qr_refresh(f);
      break;
    }
    case Variant::Adam: {
      st.adam_m = cfg.beta1 * st.adam_m + (1.0 - cfg.beta1) * G.data;
      st.adam_v = (1.0 - cfg.beta2) * st.adam_v + cfg.beta2 * G.data.cwiseAbs2();
      break;
    }
    case Variant::Sgd:
      break;
    default:
      throw UnsupportedShape("update_estimates: variant does not support 3-D parameters");
  }
}

Tensor3 preconditioned_direction(const ParamState& st, const Tensor3& G,
                                 const OptimizerConfig& cfg) {
  switch (cfg.variant) {
    case Variant::KlShampoo: {
      Tensor3 u = G;
      for (int mode = 0; mode < 3; ++mode) {
        Matrix half = st.factors[static_cast<size_t>(mode)].cached_power(-0.5, cfg.kappa,
                                                                         cfg.eig_floor);
        u = mode_multiply(u, half, mode);
      }
      return u;
    }
    case Variant::Adam: {
      Tensor3 u = G;
      u.data = adam_direction_flat(st, cfg);
      return u;
    }
    case Variant::Sgd:
      return G;
    default:
      throw UnsupportedShape("preconditioned_direction: variant does not support 3-D");
  }
}

void step(ParamState& st, Tensor3& theta, const Tensor3& G, const OptimizerConfig& cfg) {
  update_estimates(st, G, cfg);
  Tensor3 u = preconditioned_direction(st, G, cfg);
  Vector flat = u.data;
  if (cfg.variant != Variant::Adam) {
    st.momentum = cfg.beta1 * st.momentum + flat;
    flat = st.momentum;
  }
  theta.data -= cfg.gamma * (flat + cfg.weight_decay * theta.data);
}

}  // namespace kronopt
