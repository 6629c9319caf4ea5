#include <filesystem>
#include <iostream>

#include <CLI11.hpp>

#include "kronopt/harness.hpp"

namespace {

constexpr int kExitOk = 0;
constexpr int kExitClaimFailure = 1;
constexpr int kExitUsage = 2;
constexpr int kExitIo = 3;

struct RunOptions {
  std::string task = "kron_quadratic";
  std::string optimizer = "sgd";
  double gamma = 1e-3;
  double beta1 = 0.0;
  double beta2 = 0.01;
  double kappa = 0.0;
  double power = 0.5;
  int refresh_interval = 1;
  double weight_decay = 0.0;
  bool grafting = false;
  int steps = 100;
  std::uint64_t seed = 0;
  std::string out = "run.csv";
  std::string dims;
  int batch = 1;
  double epsilon = 1e-8;
  bool timing = false;
  std::string schedule = "constant";
  int warmup = 0;
};

std::vector<kronopt::Index> parse_dims_arg(const std::string& s) {
  std::vector<kronopt::Index> dims;
  std::string token;
  std::istringstream ss(s);
  while (std::getline(ss, token, 'x')) dims.push_back(std::stol(token));
  return dims;
}

int do_run(const RunOptions& opt) {
  kronopt::TaskSpec spec;
  spec.kind = kronopt::task_from_string(opt.task);
  spec.seed = opt.seed;
  spec.steps = opt.steps;
  spec.batch = opt.batch;
  if (!opt.dims.empty()) spec.dims = parse_dims_arg(opt.dims);

  kronopt::OptimizerConfig cfg;
  cfg.variant = kronopt::variant_from_string(opt.optimizer);
  cfg.gamma = opt.gamma;
  cfg.beta1 = opt.beta1;
  cfg.beta2 = opt.beta2;
  cfg.kappa = opt.kappa;
  cfg.p = opt.power;
  cfg.refresh_interval = opt.refresh_interval;
  cfg.weight_decay = opt.weight_decay;
  cfg.grafting = opt.grafting;
  cfg.epsilon = opt.epsilon;
  cfg.schedule = kronopt::schedule_from_string(opt.schedule);
  cfg.warmup_steps = opt.warmup;

  kronopt::RunOutput out = kronopt::run_task(spec, cfg);
  kronopt::write_csv(opt.out, out.records, opt.timing);
  std::cout << "wrote " << out.records.size() << " records to " << opt.out
            << (out.diverged ? " (diverged)" : "") << '\n';
  return kExitOk;
}

int do_claims(const std::string& profile, const std::string& out_path, int grid_size) {
  kronopt::TolProfile tol = kronopt::TolProfile::Default;
  if (profile == "strict") tol = kronopt::TolProfile::Strict;
  else if (profile != "default") throw kronopt::InvalidInput("unknown tol profile: " + profile);

  std::vector<std::uint64_t> grid;
  for (int i = 0; i < grid_size; ++i) grid.push_back(static_cast<std::uint64_t>(i + 1));

  kronopt::ClaimReport report = kronopt::run_claims(tol, grid);
  kronopt::print_claim_report(report, std::cout);
  if (!out_path.empty()) kronopt::write_claim_report_json(report, out_path);
  return report.all_pass() ? kExitOk : kExitClaimFailure;
}

int do_compare(const std::string& config_path, const std::string& out_dir, bool timing) {
  auto runs = kronopt::parse_compare_config(config_path);
  kronopt::compare(runs, out_dir, timing);
  std::cout << "wrote " << runs.size() << " runs to " << out_dir << '\n';
  return kExitOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Kronecker-factored second-moment preconditioners: experiment harness"};
  app.require_subcommand(1);

  RunOptions run_opt;
  CLI::App* run = app.add_subcommand("run", "run one optimizer on one synthetic task");
  run->add_option("--task", run_opt.task, "task kind");
  run->add_option("--optimizer", run_opt.optimizer, "optimizer variant");
  run->add_option("--gamma", run_opt.gamma, "step size");
  run->add_option("--beta1", run_opt.beta1, "momentum weight");
  run->add_option("--beta2", run_opt.beta2, "EMA weight on the new term");
  run->add_option("--kappa", run_opt.kappa, "damping");
  run->add_option("--power", run_opt.power, "Shampoo power (0.25 or 0.5)");
  run->add_option("--refresh-interval", run_opt.refresh_interval, "eigen/QR refresh period T");
  run->add_option("--weight-decay", run_opt.weight_decay, "decoupled weight decay");
  run->add_option("--grafting", run_opt.grafting, "Adam-norm grafting (shampoo only)");
  run->add_option("--steps", run_opt.steps, "number of steps");
  run->add_option("--seed", run_opt.seed, "seed");
  run->add_option("--out", run_opt.out, "output CSV path");
  run->add_option("--dims", run_opt.dims, "task dimensions, e.g. 8x6");
  run->add_option("--batch", run_opt.batch, "samples per step");
  run->add_option("--epsilon", run_opt.epsilon, "Adam/RMSProp stabilizer");
  run->add_flag("--timing", run_opt.timing, "write measured wall_ms instead of 0");
  run->add_option("--schedule", run_opt.schedule, "constant, linear-warmup or cosine");
  run->add_option("--warmup", run_opt.warmup, "linear warmup steps");

  std::string profile = "default";
  std::string claims_out;
  int grid_size = 20;
  CLI::App* claims = app.add_subcommand("claims", "run the claim verification suite");
  claims->add_option("--tol-profile", profile, "default or strict");
  claims->add_option("--out", claims_out, "JSON report path");
  claims->add_option("--grid-size", grid_size, "number of base seeds");

  std::string config_path;
  std::string compare_out = "compare_out";
  bool compare_timing = false;
  CLI::App* cmp = app.add_subcommand("compare", "run a grid of configs from a file");
  cmp->add_option("--config", config_path, "config file")->required();
  cmp->add_option("--out", compare_out, "output directory");
  cmp->add_flag("--timing", compare_timing, "write measured wall_ms instead of 0");

  try {
    app.parse(argc, argv);
    if (run->parsed()) return do_run(run_opt);
    if (claims->parsed()) return do_claims(profile, claims_out, grid_size);
    if (cmp->parsed()) return do_compare(config_path, compare_out, compare_timing);
    return kExitUsage;
  } catch (const CLI::ParseError& e) {
    int code = app.exit(e);
    return code == 0 ? kExitOk : kExitUsage;
  } catch (const kronopt::IoError& e) {
    std::cerr << "io error: " << e.what() << '\n';
    return kExitIo;
  } catch (const kronopt::InvalidInput& e) {
    std::cerr << "usage error: " << e.what() << '\n';
    return kExitUsage;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kExitClaimFailure;
  }
}
