#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <vector>

#include "gnpe/embedder.hpp"
#include "gnpe/training.hpp"
#include "test_helpers.hpp"

using namespace gnpe;
using gnpe_test::cheb_conv_oracle;
using gnpe_test::max_abs_diff;
using gnpe_test::permute_both;
using gnpe_test::permute_rows;
using gnpe_test::random_permutation;

namespace {

Tensor<double> random_tie_matrix(int n, Rng& rng) {
  Tensor<double> w(n, n);
  for (int i = 0; i < n; ++i)
    for (int j = i + 1; j < n; ++j) {
      const double v = rng.uniform(-1.0, 1.0);
      w.at(i, j) = v;
      w.at(j, i) = v;
    }
  return w;
}

EmbedderArch small_arch(int n, int k, int hidden = 8) {
  EmbedderArch a;
  a.n_agents = n;
  a.n_topics = k;
  a.q = 3;
  a.hidden = hidden;
  a.readout1 = 6;
  a.readout2 = 5;
  a.embed_dim = 4;
  return a;
}

GraphTrace small_trace(int n, int k, int steps, std::uint64_t seed) {
  SimConfig cfg;
  cfg.n_agents = n;
  cfg.n_topics = k;
  cfg.n_steps = steps;
  cfg.seed = seed;
  ModelParams t;
  t.rho = 1.5;
  t.eps = 0.6;
  t.lam = 0.4;
  t.p_init = 0.5;
  return simulate(t, cfg);
}

}  // namespace

TEST_CASE("scaled laplacian of the empty graph is zero", "[embedder]") {
  Tensor<double> w(4, 4);
  const auto lt = scaled_laplacian(w);
  for (const double v : lt.data) REQUIRE(v == 0.0);
}

TEST_CASE("scaled laplacian two-node example", "[embedder]") {
  Tensor<double> w(2, 2);
  w.at(0, 1) = 0.5;
  w.at(1, 0) = 0.5;
  const auto lt = scaled_laplacian(w);
  REQUIRE_THAT(lt.at(0, 1), Catch::Matchers::WithinAbs(-1.0, 1e-14));
  REQUIRE_THAT(lt.at(1, 0), Catch::Matchers::WithinAbs(-1.0, 1e-14));
  REQUIRE(lt.at(0, 0) == 0.0);
  REQUIRE(lt.at(1, 1) == 0.0);
}

TEST_CASE("scaled laplacian rejects asymmetric input", "[embedder]") {
  Tensor<double> w(2, 2);
  w.at(0, 1) = 0.5;
  w.at(1, 0) = -0.5;
  REQUIRE_THROWS_AS(scaled_laplacian(w), NumericError);
}

TEST_CASE("scaled laplacian permutation equivariance", "[embedder]") {
  Rng rng(1);
  for (int trial = 0; trial < 20; ++trial) {
    const auto w = random_tie_matrix(6, rng);
    const auto perm = random_permutation(6, rng);
    const auto lhs = scaled_laplacian(permute_both(w, perm));
    const auto rhs = permute_both(scaled_laplacian(w), perm);
    REQUIRE(max_abs_diff(lhs, rhs) < 1e-10);
  }
}

TEST_CASE("cheb_conv with Q=1 ignores the graph", "[embedder]") {
  Rng rng(2);
  const auto x = uniform_tensor<double>(5, 3, -1.0, 1.0, rng);
  const auto theta = uniform_tensor<double>(3, 4, -1.0, 1.0, rng);
  const auto bias = uniform_tensor<double>(1, 4, -0.5, 0.5, rng);
  const auto lt = scaled_laplacian(random_tie_matrix(5, rng));
  const auto got = cheb_conv(x, lt, theta, bias, 1);
  const auto want = cheb_conv_oracle(x, Tensor<double>(5, 5), theta, bias, 1);
  REQUIRE(max_abs_diff(got, want) < 1e-12);
}

TEST_CASE("cheb_conv at zero laplacian follows the recurrence", "[embedder]") {
  // T_q(0): identity for q = 0, zero for odd q, alternating +-I for even q,
  // so with Q = 3 the result is X (Theta_0 - Theta_2) + bias.
  Rng rng(3);
  const auto x = uniform_tensor<double>(4, 2, -1.0, 1.0, rng);
  const auto theta = uniform_tensor<double>(6, 3, -1.0, 1.0, rng);
  const auto bias = uniform_tensor<double>(1, 3, -0.5, 0.5, rng);
  const Tensor<double> zero_lt(4, 4);
  const auto got = cheb_conv(x, zero_lt, theta, bias, 3);
  Tensor<double> theta_eff(2, 3);
  for (int i = 0; i < 2; ++i)
    for (int j = 0; j < 3; ++j) theta_eff.at(i, j) = theta.at(i, j) - theta.at(4 + i, j);
  auto want = gnpe_test::matmul_oracle(x, theta_eff);
  for (int i = 0; i < want.rows; ++i)
    for (int j = 0; j < want.cols; ++j) want.at(i, j) += bias.at(0, j);
  REQUIRE(max_abs_diff(got, want) < 1e-12);

  // Q = 2 at zero laplacian reduces to X Theta_0 + bias.
  const auto theta2 = uniform_tensor<double>(4, 3, -1.0, 1.0, rng);
  const auto got2 = cheb_conv(x, zero_lt, theta2, bias, 2);
  const auto want2 = cheb_conv_oracle(x, zero_lt, theta2, bias, 2);
  REQUIRE(max_abs_diff(got2, want2) < 1e-12);
}

TEST_CASE("cheb_conv matches dense polynomial oracle", "[embedder]") {
  Rng rng(4);
  for (int trial = 0; trial < 25; ++trial) {
    const int q = 1 + static_cast<int>(rng.below(4));
    const auto x = uniform_tensor<double>(5, 3, -1.0, 1.0, rng);
    const auto theta = uniform_tensor<double>(q * 3, 4, -1.0, 1.0, rng);
    const auto bias = uniform_tensor<double>(1, 4, -0.5, 0.5, rng);
    const auto lt = scaled_laplacian(random_tie_matrix(5, rng));
    REQUIRE(max_abs_diff(cheb_conv(x, lt, theta, bias, q),
                         cheb_conv_oracle(x, lt, theta, bias, q)) < 1e-10);
  }
}

TEST_CASE("cheb_conv shape mismatch throws", "[embedder]") {
  Tensor<double> x(4, 2), theta(5, 3), bias(1, 3), lt(4, 4);
  REQUIRE_THROWS_AS(cheb_conv(x, lt, theta, bias, 3), DimensionError);
}

TEST_CASE("gru_step with zero weights and zero state gives zero", "[embedder]") {
  const auto arch = small_arch(5, 2);
  ParamStore<double> store;
  Rng rng(5);
  const auto net = EmbedderNet<double>::create(arch, store, rng);
  for (std::size_t i = 0; i < store.size(); ++i)
    for (auto& v : store[static_cast<ParamId>(i)].data) v = 0.0;
  const auto x = uniform_tensor<double>(5, 2, -1.0, 1.0, rng);
  const auto lt = scaled_laplacian(random_tie_matrix(5, rng));
  const Tensor<double> h0(5, arch.hidden);
  const auto h1 = gru_step(net, store, x, lt, h0);
  for (const double v : h1.data) REQUIRE(v == 0.0);
}

TEST_CASE("gru_step permutation equivariance", "[embedder]") {
  const auto arch = small_arch(6, 3);
  ParamStore<double> store;
  Rng rng(6);
  const auto net = EmbedderNet<double>::create(arch, store, rng);
  for (int trial = 0; trial < 10; ++trial) {
    const auto x = uniform_tensor<double>(6, 3, -1.0, 1.0, rng);
    const auto w = random_tie_matrix(6, rng);
    const auto lt = scaled_laplacian(w);
    const auto h = uniform_tensor<double>(6, arch.hidden, -1.0, 1.0, rng);
    const auto perm = random_permutation(6, rng);
    const auto lhs =
        gru_step(net, store, permute_rows(x, perm), permute_both(lt, perm),
                 permute_rows(h, perm));
    const auto rhs = permute_rows(gru_step(net, store, x, lt, h), perm);
    REQUIRE(max_abs_diff(lhs, rhs) < 1e-10);
  }
}

TEST_CASE("gru_step output is bounded by gate convexity", "[embedder]") {
  const auto arch = small_arch(5, 2);
  ParamStore<double> store;
  Rng rng(7);
  const auto net = EmbedderNet<double>::create(arch, store, rng);
  for (int trial = 0; trial < 10; ++trial) {
    const auto x = uniform_tensor<double>(5, 2, -1.0, 1.0, rng);
    const auto lt = scaled_laplacian(random_tie_matrix(5, rng));
    const auto h = uniform_tensor<double>(5, arch.hidden, -2.0, 2.0, rng);
    double h_max = 0.0;
    for (const double v : h.data) h_max = std::max(h_max, std::abs(v));
    const auto h1 = gru_step(net, store, x, lt, h);
    const double bound = std::max(h_max, 1.0);
    for (const double v : h1.data) REQUIRE(std::abs(v) < bound);
  }
}

TEST_CASE("embed_trace purity and shape contract", "[embedder]") {
  for (const auto& [n, k, steps] : std::vector<std::tuple<int, int, int>>{
           {4, 2, 3}, {6, 3, 5}, {5, 1, 2}}) {
    const auto arch = small_arch(n, k);
    ParamStore<double> store;
    Rng rng(8);
    const auto net = EmbedderNet<double>::create(arch, store, rng);
    const auto trace = small_trace(n, k, steps, 17);
    const auto e1 = embed_trace(net, store, trace);
    const auto e2 = embed_trace(net, store, trace);
    REQUIRE(e1.rows == 1);
    REQUIRE(e1.cols == arch.embed_dim);
    for (std::size_t i = 0; i < e1.size(); ++i) REQUIRE(e1.data[i] == e2.data[i]);
  }
}

TEST_CASE("embedding is sensitive to the initial snapshot", "[embedder]") {
  const auto arch = small_arch(5, 2);
  ParamStore<double> store;
  Rng rng(9);
  const auto net = EmbedderNet<double>::create(arch, store, rng);
  const auto trace = small_trace(5, 2, 4, 23);
  const auto base = embed_trace(net, store, trace);
  GraphTrace perturbed = trace;
  // flip one t = 0 tie weight only
  perturbed.w_at(0, 0, 1) = perturbed.w_at(0, 0, 1) >= 0.0 ? -0.9 : 0.9;
  perturbed.w_at(0, 1, 0) = perturbed.w_at(0, 0, 1);
  const auto other = embed_trace(net, store, perturbed);
  REQUIRE(max_abs_diff(base, other) > 1e-8);
}

TEST_CASE("embed_trace gradients match finite differences through BPTT", "[embedder]") {
  const auto arch = small_arch(4, 2);
  ParamStore<double> store;
  Rng rng(10);
  const auto net = EmbedderNet<double>::create(arch, store, rng);
  const auto trace = small_trace(4, 2, 3, 31);  // T = 3: gradient crosses >= 2 steps
  const PreparedTrace<double> prepared(trace, arch.q);
  const auto target = uniform_tensor<double>(1, arch.embed_dim, -1.0, 1.0, rng);
  const auto build = [&](Tape<double>& t, const std::vector<Var<double>>& p) {
    const auto e = net.forward(t, p, prepared);
    const auto diff = t.sub(e, t.constant(target));
    return t.sum(t.mul(diff, diff));
  };
  const auto check = gnpe_test::check_gradients(store, build, 6, rng);
  REQUIRE(check.max_rel_error < 1e-4);
  REQUIRE(check.entries_checked > 100);
}
