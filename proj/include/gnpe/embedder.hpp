#pragma once

// Graph-sequence embedder: a Chebyshev graph-convolutional GRU over the
// trace snapshots, a shared per-node linear reduction of the final hidden
// state, and a feedforward readout producing a fixed-size embedding.
//
// The Laplacian uses absolute-value degrees so negative ties keep their
// sign in the filtered adjacency, and lambda_max is fixed to 2, which
// collapses the scaled Laplacian to minus the normalized adjacency.

#include <cmath>
#include <string>
#include <vector>

#include "gnpe/abm.hpp"
#include "gnpe/errors.hpp"
#include "gnpe/params.hpp"
#include "gnpe/tape.hpp"
#include "gnpe/tensor.hpp"

namespace gnpe {

struct EmbedderArch {
  int n_agents = 20;
  int n_topics = 3;
  int q = 3;         // Chebyshev coefficients per filter
  int hidden = 64;   // per-agent hidden state size
  int readout1 = 32;
  int readout2 = 16;
  int embed_dim = 16;

  void validate() const {
    if (q < 1) throw ConfigError("EmbedderArch: q must be >= 1");
    if (hidden < 1 || readout1 < 1 || readout2 < 1 || embed_dim < 1)
      throw ConfigError("EmbedderArch: layer sizes must be positive");
  }
};

// L~ = -D^{-1/2} w D^{-1/2} with D = diag(sum_j |w_ij|); rows of isolated
// agents are zero, so the underlying Laplacian acts as identity there.
template <typename T>
Tensor<T> scaled_laplacian(int n, const double* w) {
  std::vector<double> inv_sqrt_deg(n, 0.0);
  for (int i = 0; i < n; ++i) {
    if (w[static_cast<std::size_t>(i) * n + i] != 0.0)
      throw NumericError("scaled_laplacian: nonzero diagonal");
    double deg = 0.0;
    for (int j = 0; j < n; ++j) {
      const double wij = w[static_cast<std::size_t>(i) * n + j];
      const double wji = w[static_cast<std::size_t>(j) * n + i];
      if (wij != wji) throw NumericError("scaled_laplacian: asymmetric weights");
      deg += std::abs(wij);
    }
    inv_sqrt_deg[i] = deg > 0.0 ? 1.0 / std::sqrt(deg) : 0.0;
  }
  Tensor<T> lt(n, n);
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < n; ++j)
      lt.at(i, j) = static_cast<T>(-inv_sqrt_deg[i] * inv_sqrt_deg[j] *
                                   w[static_cast<std::size_t>(i) * n + j]);
  return lt;
}

template <typename T>
Tensor<T> scaled_laplacian(const Tensor<T>& w) {
  if (w.rows != w.cols) throw DimensionError("scaled_laplacian: square input required");
  std::vector<double> wd(w.size());
  for (std::size_t i = 0; i < wd.size(); ++i) wd[i] = static_cast<double>(w.data[i]);
  return scaled_laplacian<T>(w.rows, wd.data());
}

// Columns-concatenated Chebyshev basis [T_0(L~)X | T_1(L~)X | ... ] built by
// the three-term recurrence; only the running pair is materialized.
template <typename T>
Tensor<T> cheb_basis(const Tensor<T>& x, const Tensor<T>& ltilde, int q) {
  const int n = x.rows, d = x.cols;
  Tensor<T> basis(n, q * d);
  Tensor<T> prev = x;                     // T_0 X
  Tensor<T> curr;
  for (int k = 0; k < q; ++k) {
    const Tensor<T>* sk = nullptr;
    if (k == 0) {
      sk = &prev;
    } else if (k == 1) {
      curr = matmul(ltilde, x);           // T_1 X
      sk = &curr;
    } else {
      Tensor<T> next = matmul(ltilde, curr);
      for (std::size_t i = 0; i < next.size(); ++i)
        next.data[i] = T(2) * next.data[i] - prev.data[i];
      prev = std::move(curr);
      curr = std::move(next);
      sk = &curr;
    }
    for (int i = 0; i < n; ++i)
      for (int j = 0; j < d; ++j) basis.at(i, k * d + j) = sk->at(i, j);
  }
  return basis;
}

// theta holds the Q per-order weight matrices stacked row-wise: (q*d_in) x d_out.
template <typename T>
Tensor<T> cheb_conv(const Tensor<T>& x, const Tensor<T>& ltilde, const Tensor<T>& theta,
                    const Tensor<T>& bias, int q) {
  if (theta.rows != q * x.cols)
    throw DimensionError("cheb_conv: theta rows must be q * d_in");
  if (bias.rows != 1 || bias.cols != theta.cols)
    throw DimensionError("cheb_conv: bias must be 1 x d_out");
  Tensor<T> out = matmul(cheb_basis(x, ltilde, q), theta);
  for (int i = 0; i < out.rows; ++i)
    for (int j = 0; j < out.cols; ++j) out.at(i, j) += bias.at(0, j);
  return out;
}

template <typename T>
struct ChebFilterIds {
  ParamId theta = -1;
  ParamId bias = -1;
};

template <typename T>
struct GruCellIds {
  ChebFilterIds<T> xr, hr, xu, hu, xc, hc;
};

template <typename T>
struct ReadoutIds {
  ParamId node_w = -1, node_b = -1;
  ParamId w1 = -1, b1 = -1, w2 = -1, b2 = -1, w3 = -1, b3 = -1;
};

// Constant per-trace inputs of the recurrent pass: the scaled Laplacian and
// the input-side Chebyshev basis of every snapshot. Both depend only on the
// trace, so they are computed once and reused across epochs.
template <typename T>
struct PreparedTrace {
  int n_agents = 0;
  int n_topics = 0;
  std::vector<Tensor<T>> ltilde;   // one N x N per snapshot
  std::vector<Tensor<T>> x_basis;  // one N x (q*K) per snapshot

  PreparedTrace() = default;
  PreparedTrace(const GraphTrace& trace, int q) {
    n_agents = trace.n_agents;
    n_topics = trace.n_topics;
    const int n = trace.n_agents, k = trace.n_topics;
    ltilde.reserve(trace.snapshots());
    x_basis.reserve(trace.snapshots());
    for (int t = 0; t < trace.snapshots(); ++t) {
      Tensor<T> lt = scaled_laplacian<T>(n, trace.w_step(t));
      Tensor<T> x(n, k);
      for (int i = 0; i < n; ++i)
        for (int j = 0; j < k; ++j) x.at(i, j) = static_cast<T>(trace.z_at(t, i, j));
      x_basis.push_back(cheb_basis(x, lt, q));
      ltilde.push_back(std::move(lt));
    }
  }
};

template <typename T>
class EmbedderNet {
 public:
  EmbedderArch arch;
  GruCellIds<T> cell;
  ReadoutIds<T> readout;

  static EmbedderNet create(const EmbedderArch& arch, ParamStore<T>& store, Rng& rng) {
    arch.validate();
    EmbedderNet net;
    net.arch = arch;
    auto filter = [&](const std::string& name, int in_dim) {
      ChebFilterIds<T> f;
      f.theta = store.add("embedder.cell." + name + ".theta",
                          glorot_tensor<T>(arch.q * in_dim, arch.hidden, rng));
      f.bias = store.add("embedder.cell." + name + ".bias", Tensor<T>(1, arch.hidden));
      return f;
    };
    net.cell.xr = filter("xr", arch.n_topics);
    net.cell.hr = filter("hr", arch.hidden);
    net.cell.xu = filter("xu", arch.n_topics);
    net.cell.hu = filter("hu", arch.hidden);
    net.cell.xc = filter("xc", arch.n_topics);
    net.cell.hc = filter("hc", arch.hidden);
    auto& r = net.readout;
    r.node_w = store.add("embedder.readout.node_w", glorot_tensor<T>(arch.hidden, 1, rng));
    r.node_b = store.add("embedder.readout.node_b", Tensor<T>(1, 1));
    r.w1 = store.add("embedder.readout.w1", glorot_tensor<T>(arch.n_agents, arch.readout1, rng));
    r.b1 = store.add("embedder.readout.b1", Tensor<T>(1, arch.readout1));
    r.w2 = store.add("embedder.readout.w2", glorot_tensor<T>(arch.readout1, arch.readout2, rng));
    r.b2 = store.add("embedder.readout.b2", Tensor<T>(1, arch.readout2));
    r.w3 = store.add("embedder.readout.w3", glorot_tensor<T>(arch.readout2, arch.embed_dim, rng));
    r.b3 = store.add("embedder.readout.b3", Tensor<T>(1, arch.embed_dim));
    return net;
  }

  // One graph-GRU step on the tape. x_basis is the precomputed input-side
  // Chebyshev basis for this snapshot; h_prev the N x hidden state.
  Var<T> gru_step_var(Tape<T>& tape, const std::vector<Var<T>>& p, Var<T> x_basis,
                      Var<T> ltilde, Var<T> h_prev) const {
    auto conv = [&](const ChebFilterIds<T>& f, Var<T> basis) {
      return tape.add_bias(tape.matmul(basis, p[f.theta]), p[f.bias]);
    };
    const Var<T> h_basis = basis_var(tape, h_prev, ltilde);
    const Var<T> r = tape.sigmoid(tape.add(conv(cell.xr, x_basis), conv(cell.hr, h_basis)));
    const Var<T> u = tape.sigmoid(tape.add(conv(cell.xu, x_basis), conv(cell.hu, h_basis)));
    const Var<T> rh_basis = basis_var(tape, tape.mul(r, h_prev), ltilde);
    const Var<T> c = tape.tanh(tape.add(conv(cell.xc, x_basis), conv(cell.hc, rh_basis)));
    return tape.add(tape.mul(u, h_prev), tape.mul(tape.affine(u, T(-1), T(1)), c));
  }

  // Recurrent pass over all snapshots followed by the readout; returns the
  // 1 x embed_dim context row.
  Var<T> forward(Tape<T>& tape, const std::vector<Var<T>>& p,
                 const PreparedTrace<T>& trace) const {
    if (trace.n_agents != arch.n_agents || trace.n_topics != arch.n_topics)
      throw UsageError("embedder: trace shape does not match architecture");
    Var<T> h = tape.constant(Tensor<T>(arch.n_agents, arch.hidden));
    for (std::size_t t = 0; t < trace.ltilde.size(); ++t) {
      const Var<T> xb = tape.constant(trace.x_basis[t]);
      const Var<T> lt = tape.constant(trace.ltilde[t]);
      h = gru_step_var(tape, p, xb, lt, h);
    }
    const Var<T> node_vec = tape.add_bias(tape.matmul(h, p[readout.node_w]), p[readout.node_b]);
    const Var<T> x = tape.transpose(node_vec);
    const Var<T> h1 = tape.relu(tape.add_bias(tape.matmul(x, p[readout.w1]), p[readout.b1]));
    const Var<T> h2 = tape.relu(tape.add_bias(tape.matmul(h1, p[readout.w2]), p[readout.b2]));
    return tape.add_bias(tape.matmul(h2, p[readout.w3]), p[readout.b3]);
  }

 private:
  Var<T> basis_var(Tape<T>& tape, Var<T> x, Var<T> ltilde) const {
    Var<T> out = x;  // T_0
    if (arch.q == 1) return out;
    Var<T> prev = x;
    Var<T> curr = tape.matmul(ltilde, x);  // T_1
    out = tape.concat_cols(out, curr);
    for (int k = 2; k < arch.q; ++k) {
      const Var<T> next =
          tape.sub(tape.affine(tape.matmul(ltilde, curr), T(2), T(0)), prev);
      prev = curr;
      curr = next;
      out = tape.concat_cols(out, curr);
    }
    return out;
  }
};

// Standalone GRU step on plain tensors (used by tests and small probes).
template <typename T>
Tensor<T> gru_step(const EmbedderNet<T>& net, const ParamStore<T>& store,
                   const Tensor<T>& x_t, const Tensor<T>& ltilde, const Tensor<T>& h_prev) {
  Tape<T> tape;
  const auto p = bind_params(tape, store);
  const Var<T> xb = tape.constant(cheb_basis(x_t, ltilde, net.arch.q));
  const Var<T> lt = tape.constant(ltilde);
  const Var<T> h = tape.constant(h_prev);
  return tape.val(net.gru_step_var(tape, p, xb, lt, h));
}

template <typename T>
Tensor<T> embed_trace(const EmbedderNet<T>& net, const ParamStore<T>& store,
                      const GraphTrace& trace) {
  const PreparedTrace<T> prepared(trace, net.arch.q);
  Tape<T> tape;
  const auto p = bind_params(tape, store);
  return tape.val(net.forward(tape, p, prepared));
}

}  // namespace gnpe
