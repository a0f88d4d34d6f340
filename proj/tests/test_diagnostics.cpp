#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <vector>

#include "gnpe/diagnostics.hpp"

using namespace gnpe;

namespace {

SimConfig tiny_sim(int n = 6, int k = 2, int steps = 4) {
  SimConfig cfg;
  cfg.n_agents = n;
  cfg.n_topics = k;
  cfg.n_steps = steps;
  return cfg;
}

PosteriorModel<double> tiny_model(const SimConfig& sim, std::uint64_t seed = 5) {
  EmbedderArch ea;
  ea.q = 3;
  ea.hidden = 8;
  ea.readout1 = 6;
  ea.readout2 = 5;
  ea.embed_dim = 4;
  FlowArch fa;
  fa.context_dim = 4;
  fa.n_blocks = 3;
  fa.hidden = 10;
  return PosteriorModel<double>::create(sim, PriorBox{}, ea, fa, seed);
}

GraphTrace make_obs(const SimConfig& sim, std::uint64_t seed) {
  ModelParams t;
  t.rho = 1.0;
  t.eps = 0.8;
  t.lam = 0.5;
  t.p_init = 0.5;
  SimConfig seeded = sim;
  seeded.seed = seed;
  return simulate(t, seeded);
}

}  // namespace

TEST_CASE("posterior_sample: degenerate, deterministic, in-box", "[diagnostics]") {
  const SimConfig sim = tiny_sim();
  const auto model = tiny_model(sim);
  const GraphTrace obs = make_obs(sim, 3);

  Rng rng(1);
  REQUIRE(posterior_sample(model, obs, 0, rng).thetas.empty());

  Rng r1(9), r2(9);
  const auto a = posterior_sample(model, obs, 200, r1);
  const auto b = posterior_sample(model, obs, 200, r2);
  PriorBox box;
  for (std::size_t i = 0; i < a.thetas.size(); ++i) {
    REQUIRE(box.contains(a.thetas[i]));
    for (int d = 0; d < ModelParams::kDim; ++d)
      REQUIRE(a.thetas[i][d] == b.thetas[i][d]);
    REQUIRE(std::isfinite(a.log_probs[i]));
  }
}

TEST_CASE("posterior_sample rejects mismatched observations", "[diagnostics]") {
  const SimConfig sim = tiny_sim();
  const auto model = tiny_model(sim);
  const GraphTrace obs = make_obs(tiny_sim(6, 2, 5), 3);  // wrong T
  Rng rng(1);
  REQUIRE_THROWS_AS(posterior_sample(model, obs, 10, rng), UsageError);
}

TEST_CASE("amortization: one model serves many observations", "[diagnostics]") {
  const SimConfig sim = tiny_sim();
  const auto model = tiny_model(sim);
  Rng rng(2);
  const auto d1 = posterior_sample(model, make_obs(sim, 10), 50, rng);
  const auto d2 = posterior_sample(model, make_obs(sim, 11), 50, rng);
  REQUIRE(d1.thetas.size() == 50);
  REQUIRE(d2.thetas.size() == 50);
}

TEST_CASE("corner_data: point mass occupies a single bin per dimension",
          "[diagnostics]") {
  ModelParams t;
  t.rho = 1.7;
  t.eps = 0.3;
  t.lam = 0.9;
  t.p_init = 0.2;
  const std::vector<ModelParams> samples(25, t);
  const CornerData cd = corner_data(samples, 30, PriorBox{});
  for (int d = 0; d < ModelParams::kDim; ++d) {
    int occupied = 0;
    long total = 0;
    for (const long c : cd.hist1d[d]) {
      if (c > 0) ++occupied;
      total += c;
    }
    REQUIRE(occupied == 1);
    REQUIRE(total == 25);
  }
  for (const auto& pair : cd.hist2d) {
    long total = 0;
    for (const long c : pair.counts) total += c;
    REQUIRE(total == 25);
  }
}

TEST_CASE("corner_data: uniform prior samples give flat histograms", "[diagnostics]") {
  Rng rng(7);
  std::vector<ModelParams> samples;
  const int n = 30000;
  for (int i = 0; i < n; ++i) samples.push_back(sample_prior(rng));
  const int bins = 30;
  const CornerData cd = corner_data(samples, bins, PriorBox{});
  const double expect = static_cast<double>(n) / bins;
  const double sigma = std::sqrt(n * (1.0 / bins) * (1.0 - 1.0 / bins));
  for (int d = 0; d < ModelParams::kDim; ++d)
    for (const long c : cd.hist1d[d])
      REQUIRE(std::abs(static_cast<double>(c) - expect) < 4.0 * sigma);
}

TEST_CASE("corner_data propagates truth markers and rejects empty input",
          "[diagnostics]") {
  REQUIRE_THROWS_AS(corner_data({}, 30, PriorBox{}), UsageError);
  ModelParams t;
  const CornerData cd = corner_data({t}, 10, PriorBox{}, &t);
  REQUIRE(cd.has_truth);
  REQUIRE(cd.truth.rho == t.rho);
}

TEST_CASE("truth_density_check on the zero-initialized flow", "[diagnostics]") {
  const SimConfig sim = tiny_sim();
  auto model = tiny_model(sim);
  for (std::size_t i = 0; i < model.store.size(); ++i)
    for (auto& v : model.store[static_cast<ParamId>(i)].data) v = 0.0;
  const GraphTrace obs = make_obs(sim, 3);
  ModelParams center;
  center.rho = 2.5;
  center.eps = 0.5;
  center.lam = 0.5;
  center.p_init = 0.5;
  const TruthDensity td = truth_density_check(model, obs, center);
  REQUIRE_THAT(td.log_posterior, Catch::Matchers::WithinAbs(0.259986, 1e-6));
  REQUIRE_THAT(td.log_prior, Catch::Matchers::WithinAbs(-std::log(5.0), 1e-12));
  REQUIRE(td.exceeds);

  ModelParams outside = center;
  outside.rho = 5.5;
  REQUIRE_THROWS_AS(truth_density_check(model, obs, outside), NumericError);
}

TEST_CASE("ks_uniform sanity", "[diagnostics]") {
  Rng rng(11);
  std::vector<double> uniform(500);
  for (auto& v : uniform) v = rng.uniform();
  REQUIRE(ks_uniform(uniform).p_value > 0.01);

  std::vector<double> shifted(500);
  for (auto& v : shifted) v = 0.5 + 0.5 * rng.uniform();
  REQUIRE(ks_uniform(shifted).p_value < 1e-6);
}

TEST_CASE("sbc validates its own machinery with synthetic samplers", "[diagnostics]") {
  const SimConfig sim = tiny_sim(4, 1, 2);
  const PriorBox prior;

  // perfectly calibrated sampler: posterior == prior
  const PosteriorSamplerFn calibrated = [&prior](const GraphTrace&, int n, Rng& rng) {
    std::vector<ModelParams> out;
    out.reserve(n);
    for (int i = 0; i < n; ++i) out.push_back(sample_prior(rng, prior));
    return out;
  };
  const SbcResult good = sbc(calibrated, sim, prior, 200, 100, 12345, 2);
  for (int d = 0; d < ModelParams::kDim; ++d) {
    REQUIRE(good.ks[d].p_value > 0.01);
    for (const int r : good.ranks[d]) {
      REQUIRE(r >= 0);
      REQUIRE(r <= 100);
    }
  }

  // deliberately overconfident sampler: variance shrunk 10x around a wrong point
  const PosteriorSamplerFn overconfident = [&prior](const GraphTrace&, int n, Rng& rng) {
    std::vector<ModelParams> out;
    out.reserve(n);
    const double shrink = std::sqrt(0.1);
    for (int i = 0; i < n; ++i) {
      ModelParams t = sample_prior(rng, prior);
      for (int d = 0; d < ModelParams::kDim; ++d) {
        const double wrong = prior.lo[d] + 0.2 * (prior.hi[d] - prior.lo[d]);
        t[d] = wrong + shrink * (t[d] - wrong);
      }
      out.push_back(t);
    }
    return out;
  };
  const SbcResult bad = sbc(overconfident, sim, prior, 200, 100, 12345, 2);
  for (int d = 0; d < ModelParams::kDim; ++d) REQUIRE(bad.ks[d].p_value < 0.01);
}

TEST_CASE("sbc rejects too-small run or draw counts", "[diagnostics]") {
  const PosteriorSamplerFn dummy = [](const GraphTrace&, int n, Rng& rng) {
    std::vector<ModelParams> out;
    for (int i = 0; i < n; ++i) out.push_back(sample_prior(rng));
    return out;
  };
  REQUIRE_THROWS_AS(sbc(dummy, tiny_sim(), PriorBox{}, 10, 100, 1), UsageError);
  REQUIRE_THROWS_AS(sbc(dummy, tiny_sim(), PriorBox{}, 100, 10, 1), UsageError);
}

TEST_CASE("ppc with a point mass at the truth and the true seed is exact",
          "[diagnostics]") {
  const SimConfig sim = tiny_sim();
  ModelParams truth;
  truth.rho = 1.0;
  truth.eps = 0.8;
  truth.lam = 0.5;
  truth.p_init = 0.5;
  SimConfig seeded = sim;
  seeded.seed = 777;
  const GraphTrace obs = simulate(truth, seeded);
  const PpcResult res = ppc_from_draws(sim, obs, {truth}, {777}, default_summaries());
  for (const auto& s : res.summaries) {
    REQUIRE(s.observed_quantile == 0.5);  // one equal draw counts half
    for (const double q : s.sim_quantiles) REQUIRE(q == s.observed);
  }
}

TEST_CASE("ppc quantiles are well formed on a trained-free model", "[diagnostics]") {
  const SimConfig sim = tiny_sim();
  const auto model = tiny_model(sim);
  const GraphTrace obs = make_obs(sim, 31);
  const PpcResult res = ppc(model, obs, 24, 9, default_summaries(), 2);
  REQUIRE(res.summaries.size() == 3);
  for (const auto& s : res.summaries) {
    REQUIRE(s.observed_quantile >= 0.0);
    REQUIRE(s.observed_quantile <= 1.0);
    for (std::size_t i = 1; i < s.sim_quantiles.size(); ++i)
      REQUIRE(s.sim_quantiles[i] >= s.sim_quantiles[i - 1]);
  }
  REQUIRE_THROWS_AS(ppc_from_draws(sim, obs, {}, {}, default_summaries()), UsageError);
  REQUIRE_THROWS_AS(
      ppc_from_draws(sim, obs, {ModelParams{}}, {1, 2}, default_summaries()),
      UsageError);
}
