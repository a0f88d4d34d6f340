#pragma once

// Corpus generation from the prior + simulator, and the joint training loop
// for the embedder and flow (single-round NPE: mean negative log posterior
// density, Adam, validation-based early stopping).

#include <chrono>
#include <cmath>
#include <cstdint>
#include <functional>
#include <limits>
#include <numeric>
#include <string>
#include <utility>
#include <vector>

#include "gnpe/abm.hpp"
#include "gnpe/adam.hpp"
#include "gnpe/embedder.hpp"
#include "gnpe/flow.hpp"
#include "gnpe/parallel.hpp"
#include "gnpe/params.hpp"

namespace gnpe {

struct TrainConfig {
  int n_sims = 1000;
  int batch_size = 50;
  double lr = 5e-4;
  double val_fraction = 0.10;
  int patience_epochs = 20;
  int max_epochs = 500;
  std::uint64_t seed = 0;
  int jobs = 0;  // 0 = hardware concurrency; never affects results

  void validate() const {
    if (n_sims < 1) throw ConfigError("TrainConfig: n_sims must be >= 1");
    if (batch_size < 1) throw ConfigError("TrainConfig: batch_size must be >= 1");
    if (!(val_fraction > 0.0 && val_fraction < 1.0))
      throw ConfigError("TrainConfig: val_fraction must be in (0,1)");
    if (patience_epochs < 1 || max_epochs < 1)
      throw ConfigError("TrainConfig: patience/max epochs must be >= 1");
    if (!(lr > 0.0)) throw ConfigError("TrainConfig: lr must be > 0");
  }
};

struct Corpus {
  SimConfig sim;
  PriorBox prior;
  std::uint64_t seed = 0;
  std::vector<ModelParams> thetas;
  std::vector<GraphTrace> traces;

  std::size_t size() const { return thetas.size(); }
};

// n_sims iid (theta, trace) pairs. Each task draws from its own seed-derived
// stream, so the result is identical for any job count or schedule.
inline Corpus generate_corpus(const SimConfig& sim, const PriorBox& prior, int n_sims,
                              std::uint64_t seed, int jobs = 0) {
  if (n_sims < 1) throw ConfigError("generate_corpus: n_sims must be >= 1");
  sim.validate();
  prior.validate();
  Corpus corpus;
  corpus.sim = sim;
  corpus.prior = prior;
  corpus.seed = seed;
  corpus.thetas.resize(n_sims);
  corpus.traces.resize(n_sims);
  if (jobs <= 0) jobs = default_jobs();
  parallel_for(static_cast<std::size_t>(n_sims), jobs, [&](std::size_t i) {
    Rng prior_rng(Rng::derive_seed(seed, 2 * i));
    corpus.thetas[i] = sample_prior(prior_rng, prior);
    SimConfig task = sim;
    task.seed = Rng::derive_seed(seed, 2 * i + 1);
    try {
      corpus.traces[i] = simulate(corpus.thetas[i], task);
    } catch (const Error& e) {
      throw TrainingError("simulation " + std::to_string(i) + " failed: " + e.what());
    }
  });
  return corpus;
}

struct TrainReport {
  int n_train = 0;
  int n_val = 0;
  double initial_val_loss = 0.0;
  std::vector<double> train_losses;
  std::vector<double> val_losses;
  int best_epoch = -1;  // epoch index (1-based); 0 = untrained initial parameters
  double best_val_loss = std::numeric_limits<double>::infinity();
  std::string stopping_reason;  // early_stopping | max_epochs | diverged
  double wall_seconds = 0.0;
};

// Patience bookkeeping, separated out so the stopping rule is testable on
// injected loss sequences.
class EarlyStopper {
 public:
  explicit EarlyStopper(int patience) : patience_(patience) {}

  bool feed(int epoch, double val_loss) {
    if (val_loss < best_) {
      best_ = val_loss;
      best_epoch_ = epoch;
      since_ = 0;
      return true;
    }
    ++since_;
    return false;
  }

  bool should_stop() const { return since_ >= patience_; }
  double best() const { return best_; }
  int best_epoch() const { return best_epoch_; }

 private:
  int patience_;
  double best_ = std::numeric_limits<double>::infinity();
  int best_epoch_ = -1;
  int since_ = 0;
};

template <typename T>
struct PosteriorModel {
  SimConfig fingerprint;  // (N, K, T) the model was trained for
  EmbedderArch earch;
  FlowArch farch;
  ParamStore<T> store;
  EmbedderNet<T> embedder;
  MafNet<T> flow;

  static PosteriorModel create(const SimConfig& sim, const PriorBox& prior,
                               const EmbedderArch& earch_in, const FlowArch& farch_in,
                               std::uint64_t init_seed) {
    PosteriorModel m;
    m.fingerprint = sim;
    m.earch = earch_in;
    m.earch.n_agents = sim.n_agents;
    m.earch.n_topics = sim.n_topics;
    m.farch = farch_in;
    m.farch.dim = ModelParams::kDim;
    m.farch.context_dim = m.earch.embed_dim;
    Rng rng(init_seed);
    m.embedder = EmbedderNet<T>::create(m.earch, m.store, rng);
    m.flow = MafNet<T>::create(m.farch, BoxTransform(prior), m.store, rng);
    return m;
  }

  bool fingerprint_matches(const GraphTrace& trace) const {
    return trace.n_agents == fingerprint.n_agents &&
           trace.n_topics == fingerprint.n_topics && trace.n_steps == fingerprint.n_steps;
  }
};

// Per-sample negative log posterior density on a fresh tape; returns the
// loss node (embedding and flow share the tape, so backward reaches both
// parameter sets).
template <typename T>
Var<T> sample_loss_var(Tape<T>& tape, const std::vector<Var<T>>& p,
                       const PosteriorModel<T>& model, const ModelParams& theta,
                       const PreparedTrace<T>& trace) {
  const Var<T> context = model.embedder.forward(tape, p, trace);
  const Var<T> lp = model.flow.log_prob_var(tape, p, theta_vec(theta), context);
  return tape.neg(lp);
}

// Mean NLL over a batch. If grads is non-null, accumulates d(mean loss)/d(params)
// into it. Per-sample work runs in parallel; reduction order is fixed by index.
template <typename T>
double nll_loss(const PosteriorModel<T>& model, const std::vector<ModelParams>& thetas,
                const std::vector<const PreparedTrace<T>*>& traces, GradVec<T>* grads,
                int jobs) {
  const std::size_t n = thetas.size();
  if (n == 0) throw UsageError("nll_loss: empty batch");
  if (traces.size() != n) throw UsageError("nll_loss: theta/trace count mismatch");
  std::vector<double> losses(n, 0.0);
  std::vector<GradVec<T>> slots;
  if (grads) slots.resize(n);
  std::vector<std::string> errors(n);
  parallel_for(n, jobs, [&](std::size_t i) {
    Tape<T> tape;
    const auto p = bind_params(tape, model.store);
    const Var<T> loss = sample_loss_var(tape, p, model, thetas[i], *traces[i]);
    losses[i] = static_cast<double>(tape.scalar(loss));
    if (grads) {
      tape.backward(loss);
      slots[i] = zero_grads(model.store);
      accumulate_grads(tape, p, slots[i]);
    }
  });
  double total = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    if (!std::isfinite(losses[i]))
      throw TrainingError("non-finite loss at batch element " + std::to_string(i));
    total += losses[i];
  }
  if (grads) {
    const T scale = T(1) / static_cast<T>(n);
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t pidx = 0; pidx < grads->size(); ++pidx)
        for (std::size_t k = 0; k < (*grads)[pidx].size(); ++k)
          (*grads)[pidx].data[k] += scale * slots[i][pidx].data[k];
  }
  return total / static_cast<double>(n);
}

// Convenience overload used by tests: prepares traces on the fly.
template <typename T>
double nll_loss(const PosteriorModel<T>& model, const std::vector<ModelParams>& thetas,
                const std::vector<GraphTrace>& traces, GradVec<T>* grads = nullptr,
                int jobs = 1) {
  std::vector<PreparedTrace<T>> prepared;
  prepared.reserve(traces.size());
  for (const auto& tr : traces) prepared.emplace_back(tr, model.earch.q);
  std::vector<const PreparedTrace<T>*> ptrs;
  for (const auto& pt : prepared) ptrs.push_back(&pt);
  return nll_loss(model, thetas, ptrs, grads, jobs);
}

template <typename T>
struct TrainResult {
  PosteriorModel<T> model;
  TrainReport report;
};

struct Split {
  std::vector<int> train_idx;
  std::vector<int> val_idx;
};

// Shuffle-then-split: the last ceil(val_fraction * n) indices of the
// seed-shuffled order form the validation set.
inline Split make_split(std::size_t n, double val_fraction, std::uint64_t seed) {
  const int n_val = static_cast<int>(std::ceil(val_fraction * static_cast<double>(n)));
  const int n_train = static_cast<int>(n) - n_val;
  if (n_val < 1 || n_train < 1) throw ConfigError("train: split leaves an empty side");
  std::vector<int> order(n);
  std::iota(order.begin(), order.end(), 0);
  Rng split_rng(seed);
  shuffle(order, split_rng);
  Split s;
  s.train_idx.assign(order.begin(), order.begin() + n_train);
  s.val_idx.assign(order.begin() + n_train, order.end());
  return s;
}

using EpochCallback = std::function<void(int epoch, double train_loss, double val_loss)>;

// Joint fit of embedder + flow on a corpus. Deterministic given
// (corpus, cfg.seed): seed-derived shuffle picks the validation split, each
// epoch reshuffles the training set into batches of batch_size, Adam updates
// after every batch, and the best-validation parameters are returned.
template <typename T>
TrainResult<T> train(const Corpus& corpus, const TrainConfig& cfg,
                     const EmbedderArch& earch, const FlowArch& farch,
                     const EpochCallback& on_epoch = {}) {
  cfg.validate();
  const auto t_start = std::chrono::steady_clock::now();
  const std::size_t n = corpus.size();
  if (n < 2) throw ConfigError("train: corpus too small");
  Split split = make_split(n, cfg.val_fraction, Rng::derive_seed(cfg.seed, 0));
  const int n_train = static_cast<int>(split.train_idx.size());
  const int n_val = static_cast<int>(split.val_idx.size());
  if (cfg.batch_size > n_train)
    throw ConfigError("train: batch_size exceeds training-set size");
  const int jobs = cfg.jobs > 0 ? cfg.jobs : default_jobs();

  TrainResult<T> result;
  result.model = PosteriorModel<T>::create(corpus.sim, corpus.prior, earch, farch,
                                           Rng::derive_seed(cfg.seed, 1));
  PosteriorModel<T>& model = result.model;
  TrainReport& report = result.report;
  report.n_train = n_train;
  report.n_val = n_val;

  std::vector<PreparedTrace<T>> prepared;
  prepared.reserve(n);
  for (const auto& tr : corpus.traces) prepared.emplace_back(tr, model.earch.q);

  std::vector<int>& train_idx = split.train_idx;
  const std::vector<int>& val_idx = split.val_idx;

  auto eval_set = [&](const std::vector<int>& idx) {
    std::vector<ModelParams> thetas;
    std::vector<const PreparedTrace<T>*> traces;
    thetas.reserve(idx.size());
    traces.reserve(idx.size());
    for (int i : idx) {
      thetas.push_back(corpus.thetas[i]);
      traces.push_back(&prepared[i]);
    }
    return nll_loss(model, thetas, traces, static_cast<GradVec<T>*>(nullptr), jobs);
  };

  AdamConfig<T> adam_cfg;
  adam_cfg.lr = static_cast<T>(cfg.lr);
  Adam<T> adam(model.store, adam_cfg);
  EarlyStopper stopper(cfg.patience_epochs);
  ParamStore<T> best_params = model.store;

  report.initial_val_loss = eval_set(val_idx);
  stopper.feed(0, report.initial_val_loss);

  Rng epoch_rng(Rng::derive_seed(cfg.seed, 2));
  report.stopping_reason = "max_epochs";
  for (int epoch = 1; epoch <= cfg.max_epochs; ++epoch) {
    shuffle(train_idx, epoch_rng);
    double train_loss_sum = 0.0;
    std::size_t seen = 0;
    try {
      for (std::size_t begin = 0; begin < train_idx.size(); begin += cfg.batch_size) {
        const std::size_t end =
            std::min(train_idx.size(), begin + static_cast<std::size_t>(cfg.batch_size));
        std::vector<ModelParams> thetas;
        std::vector<const PreparedTrace<T>*> traces;
        for (std::size_t k = begin; k < end; ++k) {
          thetas.push_back(corpus.thetas[train_idx[k]]);
          traces.push_back(&prepared[train_idx[k]]);
        }
        GradVec<T> grads = zero_grads(model.store);
        const double batch_loss = nll_loss(model, thetas, traces, &grads, jobs);
        adam.step(model.store, grads);
        train_loss_sum += batch_loss * static_cast<double>(end - begin);
        seen += end - begin;
      }
    } catch (const Error& e) {
      report.stopping_reason = "diverged";
      report.train_losses.push_back(std::numeric_limits<double>::quiet_NaN());
      report.val_losses.push_back(std::numeric_limits<double>::quiet_NaN());
      break;
    }
    report.train_losses.push_back(train_loss_sum / static_cast<double>(seen));
    const double val_loss = eval_set(val_idx);
    report.val_losses.push_back(val_loss);
    if (on_epoch) on_epoch(epoch, report.train_losses.back(), val_loss);
    if (stopper.feed(epoch, val_loss)) best_params = model.store;
    if (stopper.should_stop()) {
      report.stopping_reason = "early_stopping";
      break;
    }
  }

  model.store = best_params;
  report.best_epoch = stopper.best_epoch();
  report.best_val_loss = stopper.best();
  report.wall_seconds =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - t_start).count();
  return result;
}

}  // namespace gnpe
