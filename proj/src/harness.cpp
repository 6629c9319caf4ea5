#include "kronopt/harness.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>

#include <json.hpp>

namespace kronopt {

std::string task_name(TaskKind k) {
  switch (k) {
    case TaskKind::KronQuadratic: return "kron_quadratic";
    case TaskKind::MlpRegression: return "mlp_regression";
    case TaskKind::SoftmaxClassification: return "softmax_classification";
    case TaskKind::Tensor3Quadratic: return "tensor3_quadratic";
  }
  throw InvalidInput("task_name: unknown task");
}

TaskKind task_from_string(const std::string& name) {
  for (TaskKind k : {TaskKind::KronQuadratic, TaskKind::MlpRegression,
                     TaskKind::SoftmaxClassification, TaskKind::Tensor3Quadratic})
    if (task_name(k) == name) return k;
  throw InvalidInput("unknown task: " + name);
}

namespace {

std::uint64_t mix_seed(std::uint64_t seed, std::uint64_t salt) {
  SplitMix64 rng(seed ^ (salt * 0x9e3779b97f4a7c15ULL));
  return rng.next_u64();
}

std::vector<Index> dims_or_default(const TaskSpec& spec) {
  if (!spec.dims.empty()) return spec.dims;
  switch (spec.kind) {
    case TaskKind::KronQuadratic: return {8, 6};
    case TaskKind::MlpRegression: return {8, 6, 4};
    case TaskKind::SoftmaxClassification: return {8, 4};
    case TaskKind::Tensor3Quadratic: return {2, 3, 4};
  }
  throw InvalidInput("dims_or_default: unknown task");
}

}  // namespace

double KronQuadraticTask::loss(const Matrix& theta) const {
  return 0.5 * (theta.transpose() * A * theta * B).trace();
}

Matrix KronQuadraticTask::gradient(const Matrix& theta, int batch, SplitMix64& rng) const {
  Matrix z = Matrix::Zero(theta.rows(), theta.cols());
  for (int i = 0; i < batch; ++i)
    z += A_half * rng.normal_matrix(theta.rows(), theta.cols()) * B_half;
  return A * theta * B - (noise / static_cast<double>(batch)) * z;
}

KronQuadraticTask make_kron_quadratic_task(const std::vector<Index>& dims, std::uint64_t seed) {
  if (dims.size() != 2) throw UnsupportedShape("kron_quadratic: dims must be 2-D");
  KronQuadraticTask task;
  SplitMix64 rng(mix_seed(seed, 1));
  task.A = random_spd(dims[0], rng, 0.7, 1.4);
  task.B = random_spd(dims[1], rng, 0.7, 1.4);
  task.A_half = matrix_power_from_eigen(sym_eigen(task.A), 0.5);
  task.B_half = matrix_power_from_eigen(sym_eigen(task.B), 0.5);
  task.theta0 = 0.3 * rng.normal_matrix(dims[0], dims[1]);
  return task;
}

namespace {

struct Tensor3QuadraticTask {
  Matrix A, B, C;
  Matrix A_half, B_half, C_half;
  Tensor3 theta0;
  double noise = 1e-4;

  double loss(const Tensor3& theta) const {
    Tensor3 ht = mode_multiply(mode_multiply(mode_multiply(theta, A, 0), B, 1), C, 2);
    return 0.5 * theta.data.dot(ht.data);
  }

  Tensor3 gradient(const Tensor3& theta, int batch, SplitMix64& rng) const {
    Tensor3 g = mode_multiply(mode_multiply(mode_multiply(theta, A, 0), B, 1), C, 2);
    Vector z = Vector::Zero(theta.size());
    for (int i = 0; i < batch; ++i) {
      Tensor3 w(theta.dims[0], theta.dims[1], theta.dims[2]);
      w.data = rng.normal_vector(theta.size());
      w = mode_multiply(mode_multiply(mode_multiply(w, A_half, 0), B_half, 1), C_half, 2);
      z += w.data;
    }
    g.data -= (noise / static_cast<double>(batch)) * z;
    return g;
  }
};

Tensor3QuadraticTask make_tensor3_task(const std::vector<Index>& dims, std::uint64_t seed) {
  if (dims.size() != 3) throw UnsupportedShape("tensor3_quadratic: dims must be 3-D");
  Tensor3QuadraticTask task;
  SplitMix64 rng(mix_seed(seed, 2));
  task.A = random_spd(dims[0], rng, 0.7, 1.4);
  task.B = random_spd(dims[1], rng, 0.7, 1.4);
  task.C = random_spd(dims[2], rng, 0.5, 2.0);
  task.A_half = matrix_power_from_eigen(sym_eigen(task.A), 0.5);
  task.B_half = matrix_power_from_eigen(sym_eigen(task.B), 0.5);
  task.C_half = matrix_power_from_eigen(sym_eigen(task.C), 0.5);
  task.theta0 = Tensor3(dims[0], dims[1], dims[2]);
  task.theta0.data = rng.normal_vector(task.theta0.size());
  return task;
}

struct MlpTask {
  Matrix W1_teacher, W2_teacher;
  Matrix W1_0, W2_0;
  Index d_in, d_hidden, d_out;

  struct Batch {
    Matrix X;  // d_in x batch
    Matrix Y;  // d_out x batch
  };

  Batch sample(int batch, SplitMix64& rng) const {
    Batch b;
    b.X = rng.normal_matrix(d_in, batch);
    b.Y = W2_teacher * (W1_teacher * b.X).array().tanh().matrix();
    return b;
  }

  double loss(const Matrix& W1, const Matrix& W2, const Batch& b) const {
    Matrix pred = W2 * (W1 * b.X).array().tanh().matrix();
    return 0.5 * (pred - b.Y).squaredNorm() / static_cast<double>(b.X.cols());
  }

  std::pair<Matrix, Matrix> gradients(const Matrix& W1, const Matrix& W2,
                                      const Batch& b) const {
    double n = static_cast<double>(b.X.cols());
    Matrix act = (W1 * b.X).array().tanh().matrix();
    Matrix dpred = (W2 * act - b.Y) / n;
    Matrix gW2 = dpred * act.transpose();
    Matrix dact = W2.transpose() * dpred;
    Matrix dz = dact.cwiseProduct((1.0 - act.array().square()).matrix());
    Matrix gW1 = dz * b.X.transpose();
    return {gW1, gW2};
  }
};

MlpTask make_mlp_task(const std::vector<Index>& dims, std::uint64_t seed) {
  if (dims.size() != 3) throw UnsupportedShape("mlp_regression: dims must be (in, hidden, out)");
  MlpTask task;
  task.d_in = dims[0];
  task.d_hidden = dims[1];
  task.d_out = dims[2];
  SplitMix64 rng(mix_seed(seed, 3));
  task.W1_teacher = rng.normal_matrix(task.d_hidden, task.d_in);
  task.W2_teacher = rng.normal_matrix(task.d_out, task.d_hidden);
  task.W1_0 = 0.5 * rng.normal_matrix(task.d_hidden, task.d_in);
  task.W2_0 = 0.5 * rng.normal_matrix(task.d_out, task.d_hidden);
  return task;
}

struct SoftmaxTask {
  Matrix means;  // d x classes
  Matrix W0;
  Index d_feat, n_classes;

  struct Batch {
    Matrix X;               // d x batch
    std::vector<int> labels;
  };

  Batch sample(int batch, SplitMix64& rng) const {
    Batch b;
    b.X.resize(d_feat, batch);
    for (int i = 0; i < batch; ++i) {
      int c = static_cast<int>(rng.next_u64() % static_cast<std::uint64_t>(n_classes));
      b.labels.push_back(c);
      b.X.col(i) = means.col(c) + rng.normal_vector(d_feat);
    }
    return b;
  }

  static Matrix softmax(const Matrix& logits) {
    Matrix p = logits;
    for (Index j = 0; j < p.cols(); ++j) {
      Vector col = p.col(j);
      double m = col.maxCoeff();
      col = (col.array() - m).exp();
      p.col(j) = col / col.sum();
    }
    return p;
  }

  double loss(const Matrix& W, const Batch& b) const {
    Matrix p = softmax(W * b.X);
    double total = 0.0;
    for (Index j = 0; j < p.cols(); ++j)
      total -= std::log(std::max(p(b.labels[static_cast<size_t>(j)], j), 1e-300));
    return total / static_cast<double>(p.cols());
  }

  Matrix gradient(const Matrix& W, const Batch& b) const {
    Matrix p = softmax(W * b.X);
    for (Index j = 0; j < p.cols(); ++j) p(b.labels[static_cast<size_t>(j)], j) -= 1.0;
    return (p * b.X.transpose()) / static_cast<double>(p.cols());
  }
};

SoftmaxTask make_softmax_task(const std::vector<Index>& dims, std::uint64_t seed) {
  if (dims.size() != 2)
    throw UnsupportedShape("softmax_classification: dims must be (features, classes)");
  SoftmaxTask task;
  task.d_feat = dims[0];
  task.n_classes = dims[1];
  SplitMix64 rng(mix_seed(seed, 4));
  task.means = 2.0 * rng.normal_matrix(task.d_feat, task.n_classes);
  task.W0 = Matrix::Zero(task.n_classes, task.d_feat);
  return task;
}

class StepTimer {
 public:
  StepTimer() : start_(std::chrono::steady_clock::now()) {}
  double elapsed_ms() const {
    auto now = std::chrono::steady_clock::now();
    return std::chrono::duration<double, std::milli>(now - start_).count();
  }

 private:
  std::chrono::steady_clock::time_point start_;
};

RunRecord make_record(int step, double loss, double grad_norm, double wall_ms,
                      const OptimizerConfig& cfg, std::uint64_t seed) {
  RunRecord r;
  r.step = step;
  r.loss = loss;
  r.grad_norm = grad_norm;
  r.wall_ms = wall_ms;
  r.optimizer = variant_name(cfg.variant);
  r.seed = seed;
  return r;
}

}  // namespace

RunOutput run_task(const TaskSpec& spec, const OptimizerConfig& base_cfg) {
  base_cfg.validate();
  const OptimizerConfig& cfg = base_cfg;
  auto scheduled = [&](int t) {
    OptimizerConfig c = cfg;
    c.gamma *= schedule_scale(cfg.schedule, cfg.warmup_steps, t, spec.steps);
    return c;
  };
  if (spec.steps < 1) throw InvalidInput("run_task: steps must be >= 1");
  if (spec.batch < 1) throw InvalidInput("run_task: batch must be >= 1");
  const std::vector<Index> dims = dims_or_default(spec);
  SplitMix64 noise_rng(mix_seed(spec.seed, 0xabcdef));

  RunOutput out;
  auto push = [&](int step, double loss, double grad_norm, double wall_ms) {
    out.records.push_back(make_record(step, loss, grad_norm, wall_ms, cfg, spec.seed));
  };
  auto diverge = [&](int step, double wall_ms) {
    RunRecord r = make_record(step, std::nan(""), std::nan(""), wall_ms, cfg, spec.seed);
    r.diverged = true;
    out.records.push_back(r);
    out.diverged = true;
  };

  switch (spec.kind) {
    case TaskKind::KronQuadratic: {
      KronQuadraticTask task = make_kron_quadratic_task(dims, spec.seed);
      Matrix theta = task.theta0;
      ParamState st = init_state(dims, cfg);
      for (int t = 0; t < spec.steps; ++t) {
        StepTimer timer;
        double loss = task.loss(theta);
        Matrix g = task.gradient(theta, spec.batch, noise_rng);
        if (!std::isfinite(loss) || !g.allFinite()) {
          diverge(t, timer.elapsed_ms());
          break;
        }
        step(st, theta, g, scheduled(t));
        if (!theta.allFinite()) {
          diverge(t, timer.elapsed_ms());
          break;
        }
        push(t, loss, g.norm(), timer.elapsed_ms());
      }
      out.final_states.push_back(std::move(st));
      break;
    }
    case TaskKind::Tensor3Quadratic: {
      Tensor3QuadraticTask task = make_tensor3_task(dims, spec.seed);
      Tensor3 theta = task.theta0;
      ParamState st = init_state(dims, cfg);
      for (int t = 0; t < spec.steps; ++t) {
        StepTimer timer;
        double loss = task.loss(theta);
        Tensor3 g = task.gradient(theta, spec.batch, noise_rng);
        if (!std::isfinite(loss) || !g.data.allFinite()) {
          diverge(t, timer.elapsed_ms());
          break;
        }
        step(st, theta, g, scheduled(t));
        if (!theta.data.allFinite()) {
          diverge(t, timer.elapsed_ms());
          break;
        }
        push(t, loss, g.data.norm(), timer.elapsed_ms());
      }
      out.final_states.push_back(std::move(st));
      break;
    }
    case TaskKind::MlpRegression: {
      MlpTask task = make_mlp_task(dims, spec.seed);
      Matrix W1 = task.W1_0, W2 = task.W2_0;
      ParamState st1 = init_state({task.d_hidden, task.d_in}, cfg);
      ParamState st2 = init_state({task.d_out, task.d_hidden}, cfg);
      for (int t = 0; t < spec.steps; ++t) {
        StepTimer timer;
        MlpTask::Batch b = task.sample(spec.batch, noise_rng);
        double loss = task.loss(W1, W2, b);
        auto [g1, g2] = task.gradients(W1, W2, b);
        if (!std::isfinite(loss) || !g1.allFinite() || !g2.allFinite()) {
          diverge(t, timer.elapsed_ms());
          break;
        }
        step(st1, W1, g1, scheduled(t));
        step(st2, W2, g2, scheduled(t));
        if (!W1.allFinite() || !W2.allFinite()) {
          diverge(t, timer.elapsed_ms());
          break;
        }
        push(t, loss, std::sqrt(g1.squaredNorm() + g2.squaredNorm()), timer.elapsed_ms());
      }
      out.final_states.push_back(std::move(st1));
      out.final_states.push_back(std::move(st2));
      break;
    }
    case TaskKind::SoftmaxClassification: {
      SoftmaxTask task = make_softmax_task(dims, spec.seed);
      Matrix W = task.W0;
      ParamState st = init_state({task.n_classes, task.d_feat}, cfg);
      for (int t = 0; t < spec.steps; ++t) {
        StepTimer timer;
        SoftmaxTask::Batch b = task.sample(spec.batch, noise_rng);
        double loss = task.loss(W, b);
        Matrix g = task.gradient(W, b);
        if (!std::isfinite(loss) || !g.allFinite()) {
          diverge(t, timer.elapsed_ms());
          break;
        }
        step(st, W, g, scheduled(t));
        if (!W.allFinite()) {
          diverge(t, timer.elapsed_ms());
          break;
        }
        push(t, loss, g.norm(), timer.elapsed_ms());
      }
      out.final_states.push_back(std::move(st));
      break;
    }
  }
  return out;
}

namespace {

std::string format_double(double v) {
  if (std::isnan(v)) return "nan";
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

}  // namespace

void write_csv(const std::string& path, const std::vector<RunRecord>& records,
               bool include_timing) {
  std::ofstream os(path);
  if (!os) throw IoError("write_csv: cannot open " + path);
  os << "step,loss,grad_norm,wall_ms,optimizer,seed\n";
  for (const RunRecord& r : records) {
    os << r.step << ',' << format_double(r.loss) << ',' << format_double(r.grad_norm) << ','
       << format_double(include_timing ? r.wall_ms : 0.0) << ',' << r.optimizer << ',' << r.seed
       << '\n';
  }
  if (!os) throw IoError("write_csv: write failed for " + path);
}

namespace {

struct KeyValue {
  std::string key;
  std::string value;
};

bool parse_line(const std::string& raw, KeyValue& kv) {
  std::string line = raw;
  auto hash = line.find('#');
  if (hash != std::string::npos) line = line.substr(0, hash);
  auto trim = [](std::string s) {
    size_t b = s.find_first_not_of(" \t\r");
    size_t e = s.find_last_not_of(" \t\r");
    return b == std::string::npos ? std::string() : s.substr(b, e - b + 1);
  };
  line = trim(line);
  if (line.empty()) return false;
  if (line == "[run]") {
    kv = {"[run]", ""};
    return true;
  }
  auto eq = line.find('=');
  if (eq == std::string::npos) throw InvalidInput("config: expected key = value, got: " + line);
  kv.key = trim(line.substr(0, eq));
  kv.value = trim(line.substr(eq + 1));
  if (kv.key.empty() || kv.value.empty())
    throw InvalidInput("config: malformed line: " + line);
  return true;
}

std::vector<Index> parse_dims(const std::string& value) {
  std::vector<Index> dims;
  std::string token;
  std::istringstream ss(value);
  while (std::getline(ss, token, 'x')) dims.push_back(std::stol(token));
  return dims;
}

bool parse_bool(const std::string& v) {
  if (v == "true" || v == "1") return true;
  if (v == "false" || v == "0") return false;
  throw InvalidInput("config: expected boolean, got: " + v);
}

void apply_key(CompareRun& run, const std::string& key, const std::string& value) {
  if (key == "task") run.task.kind = task_from_string(value);
  else if (key == "optimizer") run.cfg.variant = variant_from_string(value);
  else if (key == "gamma") run.cfg.gamma = std::stod(value);
  else if (key == "beta1") run.cfg.beta1 = std::stod(value);
  else if (key == "beta2") run.cfg.beta2 = std::stod(value);
  else if (key == "kappa") run.cfg.kappa = std::stod(value);
  else if (key == "power") run.cfg.p = std::stod(value);
  else if (key == "refresh-interval") run.cfg.refresh_interval = std::stoi(value);
  else if (key == "weight-decay") run.cfg.weight_decay = std::stod(value);
  else if (key == "grafting") run.cfg.grafting = parse_bool(value);
  else if (key == "epsilon") run.cfg.epsilon = std::stod(value);
  else if (key == "steps") run.task.steps = std::stoi(value);
  else if (key == "seed") run.task.seed = std::stoull(value);
  else if (key == "dims") run.task.dims = parse_dims(value);
  else if (key == "batch") run.task.batch = std::stoi(value);
  else if (key == "threshold") run.threshold = std::stod(value);
  else if (key == "schedule") run.cfg.schedule = schedule_from_string(value);
  else if (key == "warmup") run.cfg.warmup_steps = std::stoi(value);
  else throw InvalidInput("config: unknown key: " + key);
}

}  // namespace

std::vector<CompareRun> parse_compare_config(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw IoError("config: cannot open " + path);

  std::vector<CompareRun> runs;
  CompareRun defaults;
  bool in_run = false;
  std::string line;
  while (std::getline(is, line)) {
    KeyValue kv;
    if (!parse_line(line, kv)) continue;
    if (kv.key == "[run]") {
      runs.push_back(defaults);
      in_run = true;
      continue;
    }
    apply_key(in_run ? runs.back() : defaults, kv.key, kv.value);
  }
  if (runs.empty()) throw InvalidInput("config: no [run] blocks found");
  return runs;
}

namespace {

int steps_to_threshold(const std::vector<RunRecord>& records, double threshold) {
  for (const RunRecord& r : records)
    if (!r.diverged && r.loss <= threshold) return r.step;
  return -1;
}

}  // namespace

void compare(const std::vector<CompareRun>& runs, const std::string& out_dir,
             bool include_timing) {
  if (runs.empty()) throw InvalidInput("compare: no runs");
  std::error_code ec;
  std::filesystem::create_directories(out_dir, ec);
  if (ec) throw IoError("compare: cannot create " + out_dir);

  nlohmann::json summary;
  summary["runs"] = nlohmann::json::array();
  for (size_t i = 0; i < runs.size(); ++i) {
    const CompareRun& run = runs[i];
    RunOutput out = run_task(run.task, run.cfg);
    std::string csv_name = "run_" + std::to_string(i) + "_" + task_name(run.task.kind) + "_" +
                           variant_name(run.cfg.variant) + "_" + std::to_string(run.task.seed) +
                           ".csv";
    write_csv(out_dir + "/" + csv_name, out.records, include_timing);

    double final_loss = std::nan("");
    double best_loss = std::nan("");
    for (const RunRecord& r : out.records) {
      if (r.diverged) continue;
      final_loss = r.loss;
      best_loss = std::isnan(best_loss) ? r.loss : std::min(best_loss, r.loss);
    }
    nlohmann::json j;
    j["task"] = task_name(run.task.kind);
    j["optimizer"] = variant_name(run.cfg.variant);
    j["seed"] = run.task.seed;
    j["gamma"] = run.cfg.gamma;
    j["csv"] = csv_name;
    j["final_loss"] = final_loss;
    j["best_loss"] = best_loss;
    j["threshold"] = run.threshold;
    j["steps_to_threshold"] = steps_to_threshold(out.records, run.threshold);
    j["diverged"] = out.diverged;
    summary["runs"].push_back(j);
  }

  std::ofstream os(out_dir + "/summary.json");
  if (!os) throw IoError("compare: cannot open summary.json");
  os << summary.dump(2) << '\n';
}

void compare(const std::vector<TaskSpec>& tasks, const std::vector<OptimizerConfig>& cfgs,
             const std::string& out_dir) {
  if (tasks.empty() || cfgs.empty()) throw InvalidInput("compare: need >= 1 task and config");
  std::vector<CompareRun> runs;
  for (const TaskSpec& t : tasks)
    for (const OptimizerConfig& c : cfgs) runs.push_back(CompareRun{t, c, 1e-3});
  compare(runs, out_dir);
}

}  // namespace kronopt
