#pragma once

// Hopfield-style social dynamics simulator: binary opinions z on K topics
// coevolving with signed tie weights w. Each step, agents feel the
// tie-weighted mean opinion of the others (social pressure), flip their
// opinions through a noisy sigmoid threshold, and ties relax toward the
// mean opinion agreement. The full (z, w) trace is the observable.

#include <cmath>
#include <cstdint>
#include <functional>
#include <vector>

#include "gnpe/errors.hpp"
#include "gnpe/rng.hpp"

namespace gnpe {

struct ModelParams {
  double rho = 1.0;     // opinion pressure gain, > 0
  double eps = 0.5;     // adoption noise amplitude, in [0,1]
  double lam = 0.5;     // tie learning rate, in [0,1]
  double p_init = 0.5;  // initial positive-opinion proportion, in [0,1]

  double operator[](int d) const {
    switch (d) {
      case 0: return rho;
      case 1: return eps;
      case 2: return lam;
      default: return p_init;
    }
  }
  double& operator[](int d) {
    switch (d) {
      case 0: return rho;
      case 1: return eps;
      case 2: return lam;
      default: return p_init;
    }
  }
  static constexpr int kDim = 4;
  static const char* dim_name(int d) {
    constexpr const char* names[kDim] = {"rho", "eps", "lam", "p_init"};
    return names[d];
  }
};

inline std::vector<double> theta_vec(const ModelParams& t) {
  return {t.rho, t.eps, t.lam, t.p_init};
}

// Uniform prior box over (rho, eps, lam, p_init).
struct PriorBox {
  double lo[ModelParams::kDim] = {0.0, 0.0, 0.0, 0.0};
  double hi[ModelParams::kDim] = {5.0, 1.0, 1.0, 1.0};

  bool contains(const ModelParams& t) const {
    for (int d = 0; d < ModelParams::kDim; ++d)
      if (!(t[d] > lo[d] && t[d] < hi[d])) return false;
    return true;
  }
  double log_density() const {
    double vol = 1.0;
    for (int d = 0; d < ModelParams::kDim; ++d) vol *= hi[d] - lo[d];
    return -std::log(vol);
  }
  void validate() const {
    for (int d = 0; d < ModelParams::kDim; ++d)
      if (!(lo[d] < hi[d])) throw ConfigError("prior box: lower must be < upper");
  }
};

struct SimConfig {
  int n_agents = 20;
  int n_topics = 3;
  int n_steps = 25;
  std::uint64_t seed = 0;

  void validate() const {
    if (n_agents < 2) throw ConfigError("SimConfig: n_agents must be >= 2");
    if (n_topics < 1) throw ConfigError("SimConfig: n_topics must be >= 1");
    if (n_steps < 1) throw ConfigError("SimConfig: n_steps must be >= 1");
  }
};

// Full microdata trace including the t = 0 snapshot:
// z[t][i][k] in {-1,+1}, w[t] symmetric with zero diagonal, entries in [-1,1].
struct GraphTrace {
  int n_agents = 0;
  int n_topics = 0;
  int n_steps = 0;                 // T; trace holds T+1 snapshots
  std::vector<std::int8_t> z;      // (T+1) * N * K
  std::vector<double> w;           // (T+1) * N * N

  int snapshots() const { return n_steps + 1; }

  std::int8_t z_at(int t, int i, int k) const {
    return z[(static_cast<std::size_t>(t) * n_agents + i) * n_topics + k];
  }
  std::int8_t& z_at(int t, int i, int k) {
    return z[(static_cast<std::size_t>(t) * n_agents + i) * n_topics + k];
  }
  double w_at(int t, int i, int j) const {
    return w[(static_cast<std::size_t>(t) * n_agents + i) * n_agents + j];
  }
  double& w_at(int t, int i, int j) {
    return w[(static_cast<std::size_t>(t) * n_agents + i) * n_agents + j];
  }

  const double* w_step(int t) const {
    return w.data() + static_cast<std::size_t>(t) * n_agents * n_agents;
  }

  void allocate(const SimConfig& cfg) {
    n_agents = cfg.n_agents;
    n_topics = cfg.n_topics;
    n_steps = cfg.n_steps;
    z.assign(static_cast<std::size_t>(snapshots()) * n_agents * n_topics, 0);
    w.assign(static_cast<std::size_t>(snapshots()) * n_agents * n_agents, 0.0);
  }

  void validate() const {
    for (int t = 0; t <= n_steps; ++t) {
      for (int i = 0; i < n_agents; ++i) {
        for (int k = 0; k < n_topics; ++k)
          if (z_at(t, i, k) != 1 && z_at(t, i, k) != -1)
            throw NumericError("GraphTrace: opinion entry not +-1");
        if (w_at(t, i, i) != 0.0)
          throw NumericError("GraphTrace: nonzero tie diagonal");
        for (int j = 0; j < n_agents; ++j) {
          const double v = w_at(t, i, j);
          if (!(v >= -1.0 && v <= 1.0))
            throw NumericError("GraphTrace: tie weight outside [-1,1]");
          if (v != w_at(t, j, i))
            throw NumericError("GraphTrace: asymmetric tie matrix");
        }
      }
    }
  }
};

using TieInitFn = std::function<double(Rng&)>;

inline ModelParams sample_prior(Rng& rng, const PriorBox& box = {}) {
  ModelParams t;
  for (int d = 0; d < ModelParams::kDim; ++d) t[d] = rng.uniform(box.lo[d], box.hi[d]);
  return t;
}

// z0[i][k] = +1 w.p. p_init; w0 symmetric, zero diagonal, off-diagonal from
// `tie_init` (default U(-1,1)); written into trace snapshot 0.
inline void init_state(const ModelParams& params, const SimConfig& cfg, Rng& rng,
                       GraphTrace& trace, const TieInitFn& tie_init = {}) {
  for (int i = 0; i < cfg.n_agents; ++i)
    for (int k = 0; k < cfg.n_topics; ++k)
      trace.z_at(0, i, k) = rng.bernoulli(params.p_init) ? 1 : -1;
  for (int i = 0; i < cfg.n_agents; ++i) {
    for (int j = i + 1; j < cfg.n_agents; ++j) {
      const double v = tie_init ? tie_init(rng) : rng.uniform(-1.0, 1.0);
      if (!(v >= -1.0 && v <= 1.0))
        throw NumericError("init_state: tie init outside [-1,1]");
      trace.w_at(0, i, j) = v;
      trace.w_at(0, j, i) = v;
    }
  }
}

// P[i][k] = 1/(N-1) * sum_{j != i} w[i][j] * z[j][k]
inline std::vector<double> social_pressure(int n_agents, int n_topics,
                                           const std::int8_t* z, const double* w) {
  if (n_agents < 2) throw ConfigError("social_pressure: need at least 2 agents");
  std::vector<double> pressure(static_cast<std::size_t>(n_agents) * n_topics, 0.0);
  const double inv = 1.0 / (n_agents - 1);
  for (int i = 0; i < n_agents; ++i) {
    for (int j = 0; j < n_agents; ++j) {
      if (j == i) continue;
      const double wij = w[static_cast<std::size_t>(i) * n_agents + j];
      if (wij == 0.0) continue;
      for (int k = 0; k < n_topics; ++k)
        pressure[static_cast<std::size_t>(i) * n_topics + k] +=
            wij * z[static_cast<std::size_t>(j) * n_topics + k];
    }
  }
  for (auto& p : pressure) p *= inv;
  return pressure;
}

// pi[i][k] = sigmoid(rho * P[i][k])
inline std::vector<double> propensity(const std::vector<double>& pressure, double rho) {
  if (!(rho > 0.0)) throw ConfigError("propensity: rho must be > 0");
  std::vector<double> pi(pressure.size());
  for (std::size_t i = 0; i < pressure.size(); ++i)
    pi[i] = 1.0 / (1.0 + std::exp(-rho * pressure[i]));
  return pi;
}

// One synchronous opinion update. A single U^t_i ~ U(-0.5, 0.5) is drawn per
// agent and shared across its K topics; z_next = +1 iff pi > 0.5 + eps*U.
inline void step_opinions(int n_agents, int n_topics, const std::vector<double>& pi,
                          double eps, Rng& rng, std::int8_t* z_next) {
  for (int i = 0; i < n_agents; ++i) {
    const double u = rng.uniform(-0.5, 0.5);
    const double threshold = 0.5 + eps * u;
    for (int k = 0; k < n_topics; ++k) {
      const double p = pi[static_cast<std::size_t>(i) * n_topics + k];
      z_next[static_cast<std::size_t>(i) * n_topics + k] = p > threshold ? 1 : -1;
    }
  }
}

// w_next[i][j] = (1-lam) * w[i][j] + (lam/K) * sum_k z_next[i][k] * z_next[j][k]
inline void step_ties(int n_agents, int n_topics, const double* w,
                      const std::int8_t* z_next, double lam, double* w_next) {
  const double scale = lam / n_topics;
  for (int i = 0; i < n_agents; ++i) {
    w_next[static_cast<std::size_t>(i) * n_agents + i] = 0.0;
    for (int j = i + 1; j < n_agents; ++j) {
      int agree = 0;
      for (int k = 0; k < n_topics; ++k)
        agree += z_next[static_cast<std::size_t>(i) * n_topics + k] *
                 z_next[static_cast<std::size_t>(j) * n_topics + k];
      const double v =
          (1.0 - lam) * w[static_cast<std::size_t>(i) * n_agents + j] + scale * agree;
      w_next[static_cast<std::size_t>(i) * n_agents + j] = v;
      w_next[static_cast<std::size_t>(j) * n_agents + i] = v;
    }
  }
}

// Full forward simulation; a pure function of (params, cfg.seed, tie_init).
inline GraphTrace simulate(const ModelParams& params, const SimConfig& cfg,
                           const TieInitFn& tie_init = {}) {
  cfg.validate();
  GraphTrace trace;
  trace.allocate(cfg);
  Rng rng(cfg.seed);
  init_state(params, cfg, rng, trace, tie_init);
  const std::size_t zstride = static_cast<std::size_t>(cfg.n_agents) * cfg.n_topics;
  const std::size_t wstride = static_cast<std::size_t>(cfg.n_agents) * cfg.n_agents;
  for (int t = 0; t < cfg.n_steps; ++t) {
    const std::int8_t* zt = trace.z.data() + t * zstride;
    const double* wt = trace.w.data() + t * wstride;
    const auto pressure = social_pressure(cfg.n_agents, cfg.n_topics, zt, wt);
    const auto pi = propensity(pressure, params.rho);
    std::int8_t* znext = trace.z.data() + (t + 1) * zstride;
    step_opinions(cfg.n_agents, cfg.n_topics, pi, params.eps, rng, znext);
    step_ties(cfg.n_agents, cfg.n_topics, wt, znext, params.lam,
              trace.w.data() + (t + 1) * wstride);
  }
  return trace;
}

}  // namespace gnpe
