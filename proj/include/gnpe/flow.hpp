#pragma once

// Conditional masked autoregressive flow over a box-supported parameter
// vector. A logit transform maps the box to R^D with exact Jacobian
// accounting, then a stack of MADE-style affine autoregressive blocks with
// order-reversing permutations between consecutive blocks maps to a
// standard normal base. The log-scale output is soft-clamped to +-7 via
// tanh; the clamp is part of the model density, not a safeguard bolted on.

#include <algorithm>
#include <cmath>
#include <limits>
#include <string>
#include <utility>
#include <vector>

#include "gnpe/abm.hpp"
#include "gnpe/errors.hpp"
#include "gnpe/params.hpp"
#include "gnpe/tape.hpp"
#include "gnpe/tensor.hpp"

namespace gnpe {

struct BoxTransform {
  std::vector<double> lo;
  std::vector<double> hi;

  BoxTransform() = default;
  BoxTransform(std::vector<double> l, std::vector<double> h)
      : lo(std::move(l)), hi(std::move(h)) {
    if (lo.size() != hi.size()) throw ConfigError("BoxTransform: bound size mismatch");
    for (std::size_t d = 0; d < lo.size(); ++d)
      if (!(lo[d] < hi[d])) throw ConfigError("BoxTransform: lower must be < upper");
  }
  explicit BoxTransform(const PriorBox& box)
      : BoxTransform(std::vector<double>(box.lo, box.lo + ModelParams::kDim),
                     std::vector<double>(box.hi, box.hi + ModelParams::kDim)) {}

  int dim() const { return static_cast<int>(lo.size()); }

  bool strictly_inside(const std::vector<double>& theta) const {
    for (std::size_t d = 0; d < lo.size(); ++d)
      if (!(theta[d] > lo[d] && theta[d] < hi[d])) return false;
    return true;
  }
};

// u_d = logit((theta_d - a_d) / (b_d - a_d)); returns the unconstrained
// vector and log|du/dtheta| = sum_d log(b-a) - log(theta-a) - log(b-theta).
inline std::pair<std::vector<double>, double> box_forward(const std::vector<double>& theta,
                                                          const BoxTransform& box) {
  if (static_cast<int>(theta.size()) != box.dim())
    throw DimensionError("box_forward: dimension mismatch");
  if (!box.strictly_inside(theta))
    throw NumericError("box_forward: theta on or outside the box boundary");
  std::vector<double> u(theta.size());
  double log_jac = 0.0;
  for (std::size_t d = 0; d < theta.size(); ++d) {
    const double a = box.lo[d], b = box.hi[d];
    const double s = (theta[d] - a) / (b - a);
    u[d] = std::log(s) - std::log1p(-s);
    log_jac += std::log(b - a) - std::log(theta[d] - a) - std::log(b - theta[d]);
  }
  return {std::move(u), log_jac};
}

inline std::vector<double> box_inverse(const std::vector<double>& u, const BoxTransform& box) {
  if (static_cast<int>(u.size()) != box.dim())
    throw DimensionError("box_inverse: dimension mismatch");
  std::vector<double> theta(u.size());
  for (std::size_t d = 0; d < u.size(); ++d)
    theta[d] = box.lo[d] + (box.hi[d] - box.lo[d]) * stable_sigmoid(u[d]);
  return theta;
}

struct FlowArch {
  int dim = 4;
  int context_dim = 16;
  int n_blocks = 5;
  int hidden = 50;
  double alpha_clamp = 7.0;

  void validate() const {
    if (dim < 1 || context_dim < 1 || n_blocks < 1 || hidden < 1)
      throw ConfigError("FlowArch: sizes must be positive");
    if (!(alpha_clamp > 0)) throw ConfigError("FlowArch: alpha_clamp must be > 0");
  }
};

template <typename T>
struct MadeBlockIds {
  ParamId w_in = -1;     // dim x hidden, masked
  ParamId w_ctx = -1;    // context_dim x hidden, unmasked
  ParamId b_h = -1;      // 1 x hidden
  ParamId w_mu = -1;     // hidden x dim, masked
  ParamId b_mu = -1;     // 1 x dim
  ParamId w_alpha = -1;  // hidden x dim, masked
  ParamId b_alpha = -1;  // 1 x dim
};

template <typename T>
class MafNet {
 public:
  FlowArch arch;
  BoxTransform box;
  std::vector<MadeBlockIds<T>> blocks;
  Tensor<T> mask_in;   // dim x hidden
  Tensor<T> mask_out;  // hidden x dim

  static MafNet create(const FlowArch& arch, BoxTransform box, ParamStore<T>& store,
                       Rng& rng) {
    arch.validate();
    if (box.dim() != arch.dim) throw ConfigError("MafNet: box dim != flow dim");
    MafNet net;
    net.arch = arch;
    net.box = std::move(box);
    net.build_masks();
    for (int b = 0; b < arch.n_blocks; ++b) {
      const std::string prefix = "flow.block" + std::to_string(b) + ".";
      MadeBlockIds<T> ids;
      Tensor<T> w_in = glorot_tensor<T>(arch.dim, arch.hidden, rng);
      for (std::size_t i = 0; i < w_in.size(); ++i) w_in.data[i] *= net.mask_in.data[i];
      ids.w_in = store.add(prefix + "w_in", std::move(w_in));
      ids.w_ctx = store.add(prefix + "w_ctx", glorot_tensor<T>(arch.context_dim, arch.hidden, rng));
      ids.b_h = store.add(prefix + "b_h", Tensor<T>(1, arch.hidden));
      // output layers start small so the flow begins near the identity;
      // large random alpha would make the block chain ill-conditioned
      Tensor<T> w_mu = glorot_tensor<T>(arch.hidden, arch.dim, rng);
      Tensor<T> w_alpha = glorot_tensor<T>(arch.hidden, arch.dim, rng);
      for (std::size_t i = 0; i < w_mu.size(); ++i) {
        w_mu.data[i] *= T(0.1) * net.mask_out.data[i];
        w_alpha.data[i] *= T(0.1) * net.mask_out.data[i];
      }
      ids.w_mu = store.add(prefix + "w_mu", std::move(w_mu));
      ids.b_mu = store.add(prefix + "b_mu", Tensor<T>(1, arch.dim));
      ids.w_alpha = store.add(prefix + "w_alpha", std::move(w_alpha));
      ids.b_alpha = store.add(prefix + "b_alpha", Tensor<T>(1, arch.dim));
      net.blocks.push_back(ids);
    }
    return net;
  }

  // (mu, alpha) of one block on the tape; u and context are 1 x dim and
  // 1 x context_dim rows.
  std::pair<Var<T>, Var<T>> made_forward_var(Tape<T>& tape, const std::vector<Var<T>>& p,
                                             const MadeBlockIds<T>& ids, Var<T> u,
                                             Var<T> context) const {
    const Var<T> m_in = tape.constant(mask_in);
    const Var<T> m_out = tape.constant(mask_out);
    const Var<T> pre = tape.add(tape.add(tape.matmul(u, tape.mul(p[ids.w_in], m_in)),
                                         tape.matmul(context, p[ids.w_ctx])),
                                p[ids.b_h]);
    const Var<T> h = tape.relu(pre);
    const Var<T> mu = tape.add(tape.matmul(h, tape.mul(p[ids.w_mu], m_out)), p[ids.b_mu]);
    const Var<T> alpha_raw =
        tape.add(tape.matmul(h, tape.mul(p[ids.w_alpha], m_out)), p[ids.b_alpha]);
    return {mu, clamp_var(tape, alpha_raw)};
  }

  // log q(theta | context) on the tape; differentiable w.r.t. parameters and
  // context. theta is data. Out-of-box theta is the caller's concern (see
  // log_prob_raw for the -inf convention).
  Var<T> log_prob_var(Tape<T>& tape, const std::vector<Var<T>>& p,
                      const std::vector<double>& theta, Var<T> context) const {
    const auto [u0, box_jac] = box_forward(theta, box);
    Tensor<T> u_row(1, arch.dim);
    for (int d = 0; d < arch.dim; ++d) u_row.data[d] = static_cast<T>(u0[d]);
    Var<T> u = tape.constant(u_row);
    Var<T> log_det = tape.constant_scalar(T(0));
    for (int b = 0; b < arch.n_blocks; ++b) {
      const auto [mu, alpha] = made_forward_var(tape, p, blocks[b], u, context);
      u = tape.mul(tape.sub(u, mu), tape.exp(tape.neg(alpha)));
      log_det = tape.sub(log_det, tape.sum(alpha));
      if (b + 1 < arch.n_blocks) u = tape.matmul(u, tape.constant(reversal()));
    }
    // log N(u; 0, I) = -0.5 * |u|^2 - (dim/2) * log(2 pi)
    const T norm_const = static_cast<T>(-0.5 * arch.dim * std::log(2.0 * kPi));
    const Var<T> base = tape.affine(tape.sum(tape.mul(u, u)), T(-0.5), norm_const);
    return tape.affine(tape.add(base, log_det), T(1), static_cast<T>(box_jac));
  }

  // theta -> base-space vector, plus the total log|d base/d theta| including
  // the box transform.
  std::pair<std::vector<double>, double> forward_transform(const ParamStore<T>& store,
                                                           const std::vector<double>& theta,
                                                           const Tensor<T>& context) const {
    const auto [u0, box_jac] = box_forward(theta, box);
    const MaskedWeights mw = masked_weights(store);
    std::vector<double> u = u0;
    double log_det = box_jac;
    std::vector<double> mu(arch.dim), alpha(arch.dim);
    for (int b = 0; b < arch.n_blocks; ++b) {
      made_raw(store, mw, b, u, context, mu, alpha);
      for (int d = 0; d < arch.dim; ++d) {
        u[d] = (u[d] - mu[d]) * std::exp(-alpha[d]);
        log_det -= alpha[d];
      }
      if (b + 1 < arch.n_blocks) std::reverse(u.begin(), u.end());
    }
    return {std::move(u), log_det};
  }

  // base-space vector -> theta (the exact inverse of forward_transform).
  std::vector<double> inverse_transform(const ParamStore<T>& store,
                                        const std::vector<double>& v,
                                        const Tensor<T>& context) const {
    const MaskedWeights mw = masked_weights(store);
    double log_det = 0.0;
    return invert(store, mw, v, context, log_det);
  }

  // Plain (tape-free) density evaluation. Returns -inf for theta outside the
  // open box, which keeps the trained posterior confined to the prior support.
  double log_prob_raw(const ParamStore<T>& store, const std::vector<double>& theta,
                      const Tensor<T>& context) const {
    if (!box.strictly_inside(theta)) return -std::numeric_limits<double>::infinity();
    const auto [u, log_det] = forward_transform(store, theta, context);
    double sq = 0.0;
    for (double v : u) sq += v * v;
    return -0.5 * sq - 0.5 * arch.dim * std::log(2.0 * kPi) + log_det;
  }

  // Draws n samples; each is produced by inverting the blocks one dimension
  // at a time. If log_probs is non-null it receives the density accumulated
  // along the sampling path (an independent route from log_prob_raw).
  std::vector<std::vector<double>> sample(const ParamStore<T>& store,
                                          const Tensor<T>& context, Rng& rng, int n,
                                          std::vector<double>* log_probs = nullptr) const {
    std::vector<std::vector<double>> out;
    out.reserve(n);
    if (log_probs) {
      log_probs->clear();
      log_probs->reserve(n);
    }
    const MaskedWeights mw = masked_weights(store);
    std::vector<double> v(arch.dim);
    for (int s = 0; s < n; ++s) {
      double base_sq = 0.0;
      for (int d = 0; d < arch.dim; ++d) {
        v[d] = rng.normal();
        base_sq += v[d] * v[d];
      }
      double log_det = 0.0;
      std::vector<double> theta = invert(store, mw, v, context, log_det);
      if (log_probs)
        log_probs->push_back(-0.5 * base_sq - 0.5 * arch.dim * std::log(2.0 * kPi) +
                             log_det);
      out.push_back(std::move(theta));
    }
    return out;
  }

  // (mu, alpha) for one block on plain vectors; exposed for mask tests.
  void made_forward_raw(const ParamStore<T>& store, int block, const std::vector<double>& u,
                        const Tensor<T>& context, std::vector<double>& mu,
                        std::vector<double>& alpha) const {
    const MaskedWeights mw = masked_weights(store);
    made_raw(store, mw, block, u, context, mu, alpha);
  }

 private:
  static constexpr double kPi = 3.141592653589793238462643383279502884;

  struct MaskedWeights {
    std::vector<Tensor<T>> w_in, w_mu, w_alpha;
  };

  Var<T> clamp_var(Tape<T>& tape, Var<T> alpha_raw) const {
    const T c = static_cast<T>(arch.alpha_clamp);
    return tape.affine(tape.tanh(tape.affine(alpha_raw, T(1) / c, T(0))), c, T(0));
  }

  double clamp_raw(double a) const { return arch.alpha_clamp * std::tanh(a / arch.alpha_clamp); }

  Tensor<T> reversal() const {
    Tensor<T> p(arch.dim, arch.dim);
    for (int d = 0; d < arch.dim; ++d) p.at(d, arch.dim - 1 - d) = T(1);
    return p;
  }

  // MADE degree assignment: input d has degree d+1, hidden units cycle over
  // 1..dim-1, output d has degree d+1. Output d therefore only sees inputs
  // with index < d; for dim == 1 both output masks are all-zero.
  void build_masks() {
    mask_in = Tensor<T>(arch.dim, arch.hidden);
    mask_out = Tensor<T>(arch.hidden, arch.dim);
    const int max_deg = arch.dim > 1 ? arch.dim - 1 : 1;
    for (int h = 0; h < arch.hidden; ++h) {
      const int mh = 1 + (h % max_deg);
      for (int d = 0; d < arch.dim; ++d) {
        mask_in.at(d, h) = mh >= d + 1 ? T(1) : T(0);
        mask_out.at(h, d) = mh <= d && arch.dim > 1 ? T(1) : T(0);
      }
    }
  }

  // Blockwise dimension-by-dimension inversion; log_det accumulates the full
  // forward log-Jacobian (blocks + box) evaluated at the recovered theta.
  std::vector<double> invert(const ParamStore<T>& store, const MaskedWeights& mw,
                             const std::vector<double>& v, const Tensor<T>& context,
                             double& log_det) const {
    std::vector<double> u(arch.dim), mu(arch.dim), alpha(arch.dim);
    std::vector<double> block_out = v;
    log_det = 0.0;
    for (int b = arch.n_blocks - 1; b >= 0; --b) {
      std::fill(u.begin(), u.end(), 0.0);
      for (int d = 0; d < arch.dim; ++d) {
        made_raw(store, mw, b, u, context, mu, alpha);
        u[d] = mu[d] + block_out[d] * std::exp(alpha[d]);
        log_det -= alpha[d];
      }
      if (b > 0) {
        block_out = u;
        std::reverse(block_out.begin(), block_out.end());
      }
    }
    std::vector<double> theta = box_inverse(u, box);
    for (int d = 0; d < arch.dim; ++d) {
      const double a = box.lo[d], bb = box.hi[d];
      log_det += std::log(bb - a) - std::log(theta[d] - a) - std::log(bb - theta[d]);
    }
    return theta;
  }

  MaskedWeights masked_weights(const ParamStore<T>& store) const {
    MaskedWeights mw;
    for (const auto& ids : blocks) {
      Tensor<T> wi = store[ids.w_in];
      for (std::size_t i = 0; i < wi.size(); ++i) wi.data[i] *= mask_in.data[i];
      Tensor<T> wm = store[ids.w_mu];
      Tensor<T> wa = store[ids.w_alpha];
      for (std::size_t i = 0; i < wm.size(); ++i) {
        wm.data[i] *= mask_out.data[i];
        wa.data[i] *= mask_out.data[i];
      }
      mw.w_in.push_back(std::move(wi));
      mw.w_mu.push_back(std::move(wm));
      mw.w_alpha.push_back(std::move(wa));
    }
    return mw;
  }

  void made_raw(const ParamStore<T>& store, const MaskedWeights& mw, int block,
                const std::vector<double>& u, const Tensor<T>& context,
                std::vector<double>& mu, std::vector<double>& alpha) const {
    const auto& ids = blocks[block];
    const Tensor<T>& w_in = mw.w_in[block];
    const Tensor<T>& w_ctx = store[ids.w_ctx];
    const Tensor<T>& b_h = store[ids.b_h];
    std::vector<double> h(arch.hidden);
    for (int j = 0; j < arch.hidden; ++j) {
      double acc = static_cast<double>(b_h.data[j]);
      for (int d = 0; d < arch.dim; ++d) acc += u[d] * static_cast<double>(w_in.at(d, j));
      for (int c = 0; c < arch.context_dim; ++c)
        acc += static_cast<double>(context.data[c]) * static_cast<double>(w_ctx.at(c, j));
      h[j] = acc > 0.0 ? acc : 0.0;
    }
    const Tensor<T>& w_mu = mw.w_mu[block];
    const Tensor<T>& w_alpha = mw.w_alpha[block];
    const Tensor<T>& b_mu = store[blocks[block].b_mu];
    const Tensor<T>& b_alpha = store[blocks[block].b_alpha];
    for (int d = 0; d < arch.dim; ++d) {
      double am = static_cast<double>(b_mu.data[d]);
      double aa = static_cast<double>(b_alpha.data[d]);
      for (int j = 0; j < arch.hidden; ++j) {
        am += h[j] * static_cast<double>(w_mu.at(j, d));
        aa += h[j] * static_cast<double>(w_alpha.at(j, d));
      }
      mu[d] = am;
      alpha[d] = clamp_raw(aa);
    }
  }
};

}  // namespace gnpe
