#pragma once

// Evaluation of a trained posterior: sampling against an observation,
// corner-plot data, ground-truth density checks, simulation-based
// calibration ranks, and posterior predictive checks. All diagnostics are
// read-only over the model and reuse the single amortized network.

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "gnpe/abm.hpp"
#include "gnpe/parallel.hpp"
#include "gnpe/stats.hpp"
#include "gnpe/training.hpp"

namespace gnpe {

struct PosteriorDraws {
  std::vector<ModelParams> thetas;
  std::vector<double> log_probs;
};

template <typename T>
PosteriorDraws posterior_sample(const PosteriorModel<T>& model, const GraphTrace& obs,
                                int n, Rng& rng) {
  if (!model.fingerprint_matches(obs))
    throw UsageError("posterior_sample: observation (N,K,T) does not match the model");
  PosteriorDraws out;
  if (n <= 0) return out;
  const Tensor<T> context = embed_trace(model.embedder, model.store, obs);
  const auto samples = model.flow.sample(model.store, context, rng, n, &out.log_probs);
  out.thetas.reserve(n);
  for (const auto& s : samples) {
    ModelParams t;
    for (int d = 0; d < ModelParams::kDim; ++d) t[d] = s[d];
    out.thetas.push_back(t);
  }
  return out;
}

struct CornerData {
  int bins = 30;
  std::size_t n_samples = 0;
  std::vector<double> lo, hi;                       // prior box, per dim
  std::vector<std::vector<long>> hist1d;            // [dim][bin]
  struct Pair2d {
    int dim_x = 0, dim_y = 0;
    std::vector<long> counts;  // bins x bins, row-major in dim_x
  };
  std::vector<Pair2d> hist2d;
  bool has_truth = false;
  ModelParams truth;
};

inline CornerData corner_data(const std::vector<ModelParams>& samples, int bins,
                              const PriorBox& box, const ModelParams* truth = nullptr) {
  if (samples.empty()) throw UsageError("corner_data: no samples");
  if (bins < 1) throw ConfigError("corner_data: bins must be >= 1");
  CornerData cd;
  cd.bins = bins;
  cd.n_samples = samples.size();
  const int dim = ModelParams::kDim;
  cd.lo.assign(box.lo, box.lo + dim);
  cd.hi.assign(box.hi, box.hi + dim);
  auto bin_of = [&](int d, double v) {
    const double s = (v - box.lo[d]) / (box.hi[d] - box.lo[d]);
    int b = static_cast<int>(s * bins);
    if (b < 0) b = 0;
    if (b >= bins) b = bins - 1;
    return b;
  };
  cd.hist1d.assign(dim, std::vector<long>(bins, 0));
  for (const auto& t : samples)
    for (int d = 0; d < dim; ++d) ++cd.hist1d[d][bin_of(d, t[d])];
  for (int dx = 0; dx < dim; ++dx) {
    for (int dy = dx + 1; dy < dim; ++dy) {
      CornerData::Pair2d p;
      p.dim_x = dx;
      p.dim_y = dy;
      p.counts.assign(static_cast<std::size_t>(bins) * bins, 0);
      for (const auto& t : samples)
        ++p.counts[static_cast<std::size_t>(bin_of(dx, t[dx])) * bins + bin_of(dy, t[dy])];
      cd.hist2d.push_back(std::move(p));
    }
  }
  if (truth) {
    cd.has_truth = true;
    cd.truth = *truth;
  }
  return cd;
}

struct TruthDensity {
  double log_posterior = 0.0;
  double log_prior = 0.0;
  bool exceeds = false;  // posterior density at truth > prior density
};

template <typename T>
TruthDensity truth_density_check(const PosteriorModel<T>& model, const GraphTrace& obs,
                                 const ModelParams& truth) {
  if (!model.fingerprint_matches(obs))
    throw UsageError("truth_density_check: observation does not match the model");
  if (!model.flow.box.strictly_inside(theta_vec(truth)))
    throw NumericError("truth_density_check: truth outside the prior box");
  const Tensor<T> context = embed_trace(model.embedder, model.store, obs);
  TruthDensity td;
  td.log_posterior = model.flow.log_prob_raw(model.store, theta_vec(truth), context);
  PriorBox box;
  for (int d = 0; d < ModelParams::kDim; ++d) {
    box.lo[d] = model.flow.box.lo[d];
    box.hi[d] = model.flow.box.hi[d];
  }
  td.log_prior = box.log_density();
  td.exceeds = td.log_posterior > td.log_prior;
  return td;
}

// Any amortized posterior approximator: observation -> n draws.
using PosteriorSamplerFn =
    std::function<std::vector<ModelParams>(const GraphTrace&, int, Rng&)>;

template <typename T>
PosteriorSamplerFn make_model_sampler(const PosteriorModel<T>& model) {
  return [&model](const GraphTrace& obs, int n, Rng& rng) {
    return posterior_sample(model, obs, n, rng).thetas;
  };
}

struct SbcResult {
  int n_runs = 0;
  int n_draws = 0;
  std::vector<std::vector<int>> ranks;  // [dim][run], each in [0, n_draws]
  std::vector<KsResult> ks;             // per dim, vs uniform ranks
};

// Rank-uniformity calibration: per run, draw theta from the prior, simulate
// an observation, sample the (already trained, amortized) posterior, and
// record the per-dimension rank of theta among the draws.
inline SbcResult sbc(const PosteriorSamplerFn& sampler, const SimConfig& sim,
                     const PriorBox& prior, int n_runs, int n_draws, std::uint64_t seed,
                     int jobs = 1) {
  if (n_runs < 20 || n_draws < 20)
    throw UsageError("sbc: need n_runs >= 20 and n_draws >= 20");
  SbcResult res;
  res.n_runs = n_runs;
  res.n_draws = n_draws;
  res.ranks.assign(ModelParams::kDim, std::vector<int>(n_runs, 0));
  parallel_for(static_cast<std::size_t>(n_runs), jobs, [&](std::size_t r) {
    Rng prior_rng(Rng::derive_seed(seed, 3 * r));
    const ModelParams truth = sample_prior(prior_rng, prior);
    SimConfig task = sim;
    task.seed = Rng::derive_seed(seed, 3 * r + 1);
    const GraphTrace obs = simulate(truth, task);
    Rng draw_rng(Rng::derive_seed(seed, 3 * r + 2));
    const auto draws = sampler(obs, n_draws, draw_rng);
    for (int d = 0; d < ModelParams::kDim; ++d) {
      int rank = 0;
      for (const auto& t : draws)
        if (t[d] < truth[d]) ++rank;
      res.ranks[d][r] = rank;
    }
  });
  for (int d = 0; d < ModelParams::kDim; ++d) {
    std::vector<double> u(n_runs);
    for (int r = 0; r < n_runs; ++r)
      u[r] = (static_cast<double>(res.ranks[d][r]) + 0.5) / (n_draws + 1.0);
    res.ks.push_back(ks_uniform(std::move(u)));
  }
  return res;
}

// ---- posterior predictive checks -------------------------------------------

struct SummaryFn {
  std::string name;
  std::function<double(const GraphTrace&)> fn;
};

inline std::vector<SummaryFn> default_summaries() {
  std::vector<SummaryFn> s;
  s.push_back({"mean_opinion", [](const GraphTrace& tr) {
                 double acc = 0.0;
                 for (const auto v : tr.z) acc += v;
                 return acc / static_cast<double>(tr.z.size());
               }});
  s.push_back({"mean_abs_tie", [](const GraphTrace& tr) {
                 double acc = 0.0;
                 std::size_t count = 0;
                 for (int t = 0; t <= tr.n_steps; ++t)
                   for (int i = 0; i < tr.n_agents; ++i)
                     for (int j = 0; j < tr.n_agents; ++j) {
                       if (i == j) continue;
                       acc += std::abs(tr.w_at(t, i, j));
                       ++count;
                     }
                 return acc / static_cast<double>(count);
               }});
  s.push_back({"final_polarization", [](const GraphTrace& tr) {
                 // fraction of agent pairs whose majority opinions disagree
                 // at the final step
                 std::vector<int> majority(tr.n_agents);
                 for (int i = 0; i < tr.n_agents; ++i) {
                   int sum = 0;
                   for (int k = 0; k < tr.n_topics; ++k) sum += tr.z_at(tr.n_steps, i, k);
                   majority[i] = sum >= 0 ? 1 : -1;
                 }
                 long opposite = 0, pairs = 0;
                 for (int i = 0; i < tr.n_agents; ++i)
                   for (int j = i + 1; j < tr.n_agents; ++j) {
                     if (majority[i] != majority[j]) ++opposite;
                     ++pairs;
                   }
                 return static_cast<double>(opposite) / static_cast<double>(pairs);
               }});
  return s;
}

struct PpcSummary {
  std::string name;
  double observed = 0.0;
  double observed_quantile = 0.0;           // position of observed among sims
  std::vector<double> sim_quantiles;        // at kPpcQuantiles
};

struct PpcResult {
  int n = 0;
  std::vector<PpcSummary> summaries;
};

inline constexpr double kPpcQuantiles[] = {0.05, 0.25, 0.5, 0.75, 0.95};

// Core PPC over precomputed posterior draws and per-draw simulation seeds;
// split out so tests can pin both.
inline PpcResult ppc_from_draws(const SimConfig& sim, const GraphTrace& obs,
                                const std::vector<ModelParams>& draws,
                                const std::vector<std::uint64_t>& sim_seeds,
                                const std::vector<SummaryFn>& summaries, int jobs = 1) {
  if (draws.empty()) throw UsageError("ppc: need at least one draw");
  if (summaries.empty()) throw UsageError("ppc: need at least one summary");
  if (sim_seeds.size() != draws.size()) throw UsageError("ppc: seed/draw count mismatch");
  const std::size_t n = draws.size();
  std::vector<std::vector<double>> sim_values(summaries.size(),
                                              std::vector<double>(n, 0.0));
  parallel_for(n, jobs, [&](std::size_t i) {
    SimConfig task = sim;
    task.seed = sim_seeds[i];
    const GraphTrace replica = simulate(draws[i], task);
    for (std::size_t s = 0; s < summaries.size(); ++s)
      sim_values[s][i] = summaries[s].fn(replica);
  });
  PpcResult res;
  res.n = static_cast<int>(n);
  for (std::size_t s = 0; s < summaries.size(); ++s) {
    PpcSummary ps;
    ps.name = summaries[s].name;
    ps.observed = summaries[s].fn(obs);
    std::size_t less = 0, equal = 0;
    for (double v : sim_values[s]) {
      if (v < ps.observed) ++less;
      else if (v == ps.observed) ++equal;
    }
    ps.observed_quantile =
        (static_cast<double>(less) + 0.5 * static_cast<double>(equal)) /
        static_cast<double>(n);
    for (double q : kPpcQuantiles) ps.sim_quantiles.push_back(quantile(sim_values[s], q));
    res.summaries.push_back(std::move(ps));
  }
  return res;
}

template <typename T>
PpcResult ppc(const PosteriorModel<T>& model, const GraphTrace& obs, int n,
              std::uint64_t seed, const std::vector<SummaryFn>& summaries,
              int jobs = 1) {
  Rng rng(Rng::derive_seed(seed, 0));
  const auto draws = posterior_sample(model, obs, n, rng).thetas;
  std::vector<std::uint64_t> seeds(draws.size());
  for (std::size_t i = 0; i < seeds.size(); ++i)
    seeds[i] = Rng::derive_seed(seed, 1 + i);
  return ppc_from_draws(model.fingerprint, obs, draws, seeds, summaries, jobs);
}

}  // namespace gnpe
