// gnpe command-line tool: simulate the opinion/tie ABM, generate training
// corpora, train the posterior estimator, draw posterior samples, and run
// diagnostics. Exit codes: 0 success, 2 usage/validation, 3 I/O,
// 4 numeric divergence.

#include <chrono>
#include <cstdint>
#include <filesystem>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "gnpe/config.hpp"
#include "gnpe/diagnostics.hpp"
#include "gnpe/io.hpp"
#include "gnpe/training.hpp"

namespace {

using Real = float;  // training/inference lane; tests use the double lane

constexpr int kExitOk = 0;
constexpr int kExitUsage = 2;
constexpr int kExitIo = 3;
constexpr int kExitDiverged = 4;

gnpe::ModelParams parse_theta(const std::string& csv) {
  std::vector<double> values;
  std::stringstream ss(csv);
  std::string item;
  while (std::getline(ss, item, ',')) {
    try {
      values.push_back(std::stod(item));
    } catch (const std::exception&) {
      throw gnpe::UsageError("--theta: cannot parse '" + item + "'");
    }
  }
  if (values.size() != gnpe::ModelParams::kDim)
    throw gnpe::UsageError("--theta expects 4 comma-separated values rho,eps,lam,p");
  gnpe::ModelParams t;
  for (int d = 0; d < gnpe::ModelParams::kDim; ++d) t[d] = values[d];
  return t;
}

struct SimulateArgs {
  std::string config, theta, out;
  std::uint64_t seed = 0;
  bool seed_given = false;
};

int run_simulate(const SimulateArgs& a) {
  gnpe::RunConfig cfg = gnpe::load_config(a.config);
  const gnpe::ModelParams theta = parse_theta(a.theta);
  if (!cfg.prior.contains(theta))
    throw gnpe::UsageError("--theta lies outside the prior box");
  gnpe::SimConfig sim = cfg.sim;
  if (a.seed_given) sim.seed = a.seed;
  gnpe::Corpus single;
  single.sim = sim;
  single.prior = cfg.prior;
  single.seed = sim.seed;
  single.thetas.push_back(theta);
  single.traces.push_back(gnpe::simulate(theta, sim));
  gnpe::write_corpus(a.out, single, cfg.data_hash());
  std::cout << "wrote trace to " << a.out << "\n";
  return kExitOk;
}

struct GenDataArgs {
  std::string config, out;
  int n = 0;
  std::uint64_t seed = 0;
  bool n_given = false, seed_given = false;
  int jobs = 0;
};

int run_gen_data(const GenDataArgs& a) {
  gnpe::RunConfig cfg = gnpe::load_config(a.config);
  const int n = a.n_given ? a.n : cfg.train.n_sims;
  const std::uint64_t seed = a.seed_given ? a.seed : cfg.train.seed;
  const gnpe::Corpus corpus =
      gnpe::generate_corpus(cfg.sim, cfg.prior, n, seed, a.jobs);
  gnpe::write_corpus(a.out, corpus, cfg.data_hash());
  std::cout << "wrote " << n << " simulations to " << a.out << "\n";
  return kExitOk;
}

struct TrainArgs {
  std::string corpus, config, out, report;
};

int run_train(const TrainArgs& a) {
  gnpe::RunConfig cfg = gnpe::load_config(a.config);
  const gnpe::Corpus corpus = gnpe::read_corpus(a.corpus, cfg.data_hash());
  const auto progress = [](int epoch, double train_loss, double val_loss) {
    std::cerr << "epoch " << epoch << ": train " << train_loss << ", val " << val_loss
              << "\n";
  };
  auto result = gnpe::train<Real>(corpus, cfg.train, cfg.embedder_arch(),
                                  cfg.flow_arch(), progress);
  const std::string report_path = a.report.empty() ? a.out + ".report.json" : a.report;
  gnpe::detail::write_json(report_path, gnpe::train_report_to_json(result.report));
  if (result.report.stopping_reason == "diverged") {
    std::cerr << "training diverged; report written to " << report_path << "\n";
    return kExitDiverged;
  }
  gnpe::CheckpointMeta meta;
  meta.train_seed = cfg.train.seed;
  meta.best_epoch = result.report.best_epoch;
  meta.best_val_loss = result.report.best_val_loss;
  meta.config_hash = cfg.data_hash();
  gnpe::save_checkpoint(a.out, result.model, meta);
  std::cout << "best epoch " << result.report.best_epoch << ", validation loss "
            << result.report.best_val_loss << "; checkpoint written to " << a.out << "\n";
  return kExitOk;
}

struct PosteriorArgs {
  std::string ckpt, obs, out, corner, truth;
  int n = 10000;
  std::uint64_t seed = 0;
};

int run_posterior(const PosteriorArgs& a) {
  gnpe::LoadedCheckpoint loaded = gnpe::load_checkpoint(a.ckpt);
  const gnpe::Corpus obs_store = gnpe::read_corpus(a.obs);
  if (obs_store.size() < 1) throw gnpe::UsageError("--obs store holds no trace");
  const gnpe::GraphTrace& obs = obs_store.traces[0];
  if (!loaded.model.fingerprint_matches(obs))
    throw gnpe::UsageError("observation (N,K,T) does not match the checkpoint");
  gnpe::Rng rng(a.seed);
  const gnpe::PosteriorDraws draws = gnpe::posterior_sample(loaded.model, obs, a.n, rng);
  gnpe::write_samples(a.out, draws.thetas);
  if (!a.corner.empty()) {
    gnpe::PriorBox box;
    for (int d = 0; d < gnpe::ModelParams::kDim; ++d) {
      box.lo[d] = loaded.model.flow.box.lo[d];
      box.hi[d] = loaded.model.flow.box.hi[d];
    }
    gnpe::ModelParams truth;
    const bool has_truth = !a.truth.empty();
    if (has_truth) truth = parse_theta(a.truth);
    const gnpe::CornerData cd =
        gnpe::corner_data(draws.thetas, 30, box, has_truth ? &truth : nullptr);
    gnpe::detail::write_json(a.corner, gnpe::corner_to_json(cd));
  }
  std::cout << "wrote " << draws.thetas.size() << " posterior samples to " << a.out << "\n";
  return kExitOk;
}

struct DiagnoseArgs {
  std::string ckpt, config, obs, out;
  int sbc_runs = 0;
  int sbc_draws = 100;
  int ppc_n = 0;
  std::uint64_t seed = 0;
};

int run_diagnose(const DiagnoseArgs& a) {
  const auto t_start = std::chrono::steady_clock::now();
  gnpe::RunConfig cfg = gnpe::load_config(a.config);
  gnpe::LoadedCheckpoint loaded = gnpe::load_checkpoint(a.ckpt);
  const gnpe::PosteriorModel<Real>& model = loaded.model;
  if (model.fingerprint.n_agents != cfg.sim.n_agents ||
      model.fingerprint.n_topics != cfg.sim.n_topics ||
      model.fingerprint.n_steps != cfg.sim.n_steps)
    throw gnpe::UsageError("config (N,K,T) does not match the checkpoint");
  if (a.sbc_runs <= 0 && a.ppc_n <= 0)
    throw gnpe::UsageError("nothing to do: pass --sbc and/or --ppc");

  gnpe::Json report;
  report["schema_version"] = 1;
  gnpe::PriorBox box;
  for (int d = 0; d < gnpe::ModelParams::kDim; ++d) {
    box.lo[d] = model.flow.box.lo[d];
    box.hi[d] = model.flow.box.hi[d];
  }
  if (a.sbc_runs > 0) {
    const auto sampler = gnpe::make_model_sampler(model);
    const gnpe::SbcResult res =
        gnpe::sbc(sampler, cfg.sim, box, a.sbc_runs, a.sbc_draws,
                  gnpe::Rng::derive_seed(a.seed, 101), gnpe::default_jobs());
    report["sbc"] = gnpe::sbc_to_json(res);
  }
  if (a.ppc_n > 0) {
    if (a.obs.empty()) throw gnpe::UsageError("--ppc requires --obs");
    const gnpe::Corpus obs_store = gnpe::read_corpus(a.obs);
    if (obs_store.size() < 1) throw gnpe::UsageError("--obs store holds no trace");
    const gnpe::GraphTrace& obs = obs_store.traces[0];
    if (!model.fingerprint_matches(obs))
      throw gnpe::UsageError("observation (N,K,T) does not match the checkpoint");
    const gnpe::PpcResult res =
        gnpe::ppc(model, obs, a.ppc_n, gnpe::Rng::derive_seed(a.seed, 202),
                  gnpe::default_summaries(), gnpe::default_jobs());
    report["ppc"] = gnpe::ppc_to_json(res);
  }
  report["timing"] = {
      {"wall_seconds",
       std::chrono::duration<double>(std::chrono::steady_clock::now() - t_start).count()}};
  gnpe::detail::write_json(a.out, report);
  std::cout << "wrote diagnostics report to " << a.out << "\n";
  return kExitOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Neural posterior estimation for a fully observed dynamic-graph ABM"};
  app.require_subcommand(1);

  SimulateArgs sim_args;
  auto* sim_cmd = app.add_subcommand("simulate", "Simulate one trace at a given theta");
  sim_cmd->add_option("--config", sim_args.config, "TOML config")->required();
  sim_cmd->add_option("--theta", sim_args.theta, "rho,eps,lam,p")->required();
  auto* sim_seed = sim_cmd->add_option("--seed", sim_args.seed, "simulation seed");
  sim_cmd->add_option("--out", sim_args.out, "output trace directory")->required();

  GenDataArgs gen_args;
  auto* gen_cmd = app.add_subcommand("gen-data", "Generate a (theta, trace) corpus");
  gen_cmd->add_option("--config", gen_args.config, "TOML config")->required();
  auto* gen_n = gen_cmd->add_option("--n", gen_args.n, "number of simulations");
  auto* gen_seed = gen_cmd->add_option("--seed", gen_args.seed, "corpus seed");
  gen_cmd->add_option("--out", gen_args.out, "output corpus directory")->required();
  gen_cmd->add_option("--jobs", gen_args.jobs, "parallel simulation jobs");

  TrainArgs train_args;
  auto* train_cmd = app.add_subcommand("train", "Train embedder + flow on a corpus");
  train_cmd->add_option("--corpus", train_args.corpus, "corpus directory")->required();
  train_cmd->add_option("--config", train_args.config, "TOML config")->required();
  train_cmd->add_option("--out", train_args.out, "checkpoint path")->required();
  train_cmd->add_option("--report", train_args.report, "training report JSON path");

  PosteriorArgs post_args;
  auto* post_cmd = app.add_subcommand("posterior", "Sample the posterior for an observation");
  post_cmd->add_option("--ckpt", post_args.ckpt, "checkpoint path")->required();
  post_cmd->add_option("--obs", post_args.obs, "observation trace directory")->required();
  post_cmd->add_option("--n", post_args.n, "number of draws");
  post_cmd->add_option("--seed", post_args.seed, "sampling seed");
  post_cmd->add_option("--out", post_args.out, "samples file (n x 4 f64)")->required();
  post_cmd->add_option("--corner", post_args.corner, "corner-plot JSON path");
  post_cmd->add_option("--truth", post_args.truth, "ground truth rho,eps,lam,p marker");

  DiagnoseArgs diag_args;
  auto* diag_cmd = app.add_subcommand("diagnose", "SBC and posterior predictive checks");
  diag_cmd->add_option("--ckpt", diag_args.ckpt, "checkpoint path")->required();
  diag_cmd->add_option("--config", diag_args.config, "TOML config")->required();
  diag_cmd->add_option("--sbc", diag_args.sbc_runs, "number of SBC runs");
  diag_cmd->add_option("--sbc-draws", diag_args.sbc_draws, "posterior draws per SBC run");
  diag_cmd->add_option("--ppc", diag_args.ppc_n, "number of PPC re-simulations");
  diag_cmd->add_option("--obs", diag_args.obs, "observation trace directory (for --ppc)");
  diag_cmd->add_option("--seed", diag_args.seed, "diagnostics seed");
  diag_cmd->add_option("--out", diag_args.out, "report JSON path")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kExitOk : kExitUsage;
  }

  try {
    if (sim_cmd->parsed()) {
      sim_args.seed_given = sim_seed->count() > 0;
      return run_simulate(sim_args);
    }
    if (gen_cmd->parsed()) {
      gen_args.n_given = gen_n->count() > 0;
      gen_args.seed_given = gen_seed->count() > 0;
      return run_gen_data(gen_args);
    }
    if (train_cmd->parsed()) return run_train(train_args);
    if (post_cmd->parsed()) return run_posterior(post_args);
    if (diag_cmd->parsed()) return run_diagnose(diag_args);
  } catch (const gnpe::IoError& e) {
    std::cerr << "I/O error: " << e.what() << "\n";
    return kExitIo;
  } catch (const gnpe::TrainingError& e) {
    std::cerr << "training error: " << e.what() << "\n";
    return kExitDiverged;
  } catch (const gnpe::Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitUsage;
  }
  return kExitUsage;
}
