#pragma once

// Reverse-mode tape over 2D tensors. Nodes are appended in evaluation order
// and replayed backward exactly once; gradients of parameters the loss never
// touched stay exactly zero.

#include <cstdint>
#include <vector>

#include "gnpe/errors.hpp"
#include "gnpe/tensor.hpp"

namespace gnpe {

template <typename T>
struct Var {
  int idx = -1;
  bool valid() const { return idx >= 0; }
};

template <typename T>
class Tape {
 public:
  enum class Op : std::uint8_t {
    kInput,
    kMatmul,
    kAdd,
    kSub,
    kMul,
    kAffine,   // s*x + c, s and c scalar constants
    kSigmoid,
    kTanh,
    kRelu,
    kExp,
    kLog,
    kSum,      // full reduction to 1x1
    kAddBias,  // (m x d) + (1 x d), bias broadcast over rows
    kTranspose,
    kConcatCols,
  };

  Var<T> input(Tensor<T> value, bool requires_grad = false) {
    return push(Op::kInput, {}, std::move(value), requires_grad);
  }
  Var<T> constant(Tensor<T> value) { return input(std::move(value), false); }
  Var<T> constant_scalar(T v) { return input(Tensor<T>::scalar(v), false); }

  Var<T> matmul(Var<T> a, Var<T> b) {
    const Tensor<T>&ta = val(a), &tb = val(b);
    if (ta.cols != tb.rows)
      throw DimensionError("matmul: inner dims disagree " + ta.shape_str() + " * " +
                           tb.shape_str());
    Tensor<T> out(ta.rows, tb.cols);
    matmul_into(ta, tb, out);
    return push(Op::kMatmul, {a.idx, b.idx}, std::move(out));
  }

  Var<T> add(Var<T> a, Var<T> b) { return binary_elem(Op::kAdd, a, b); }
  Var<T> sub(Var<T> a, Var<T> b) { return binary_elem(Op::kSub, a, b); }
  Var<T> mul(Var<T> a, Var<T> b) { return binary_elem(Op::kMul, a, b); }

  Var<T> affine(Var<T> x, T scale, T shift) {
    Tensor<T> out = val(x);
    for (auto& v : out.data) v = scale * v + shift;
    Var<T> r = push(Op::kAffine, {x.idx}, std::move(out));
    nodes_[r.idx].scale = scale;
    return r;
  }
  Var<T> neg(Var<T> x) { return affine(x, T(-1), T(0)); }

  Var<T> sigmoid(Var<T> x) {
    Tensor<T> out = val(x);
    for (auto& v : out.data) v = stable_sigmoid(v);
    return push(Op::kSigmoid, {x.idx}, std::move(out));
  }

  Var<T> tanh(Var<T> x) {
    Tensor<T> out = val(x);
    for (auto& v : out.data) v = std::tanh(v);
    return push(Op::kTanh, {x.idx}, std::move(out));
  }

  Var<T> relu(Var<T> x) {
    Tensor<T> out = val(x);
    for (auto& v : out.data) v = v > T(0) ? v : T(0);
    return push(Op::kRelu, {x.idx}, std::move(out));
  }

  Var<T> exp(Var<T> x) {
    Tensor<T> out = val(x);
    for (auto& v : out.data) {
      v = std::exp(v);
      if (!std::isfinite(static_cast<double>(v)))
        throw NumericError("exp overflow on tape");
    }
    return push(Op::kExp, {x.idx}, std::move(out));
  }

  Var<T> log(Var<T> x) {
    Tensor<T> out = val(x);
    for (auto& v : out.data) {
      if (!(v > T(0))) throw NumericError("log domain violation on tape");
      v = std::log(v);
    }
    return push(Op::kLog, {x.idx}, std::move(out));
  }

  Var<T> sum(Var<T> x) {
    T acc = T(0);
    for (const auto& v : val(x).data) acc += v;
    return push(Op::kSum, {x.idx}, Tensor<T>::scalar(acc));
  }

  Var<T> add_bias(Var<T> m, Var<T> bias) {
    const Tensor<T>&tm = val(m), &tb = val(bias);
    if (tb.rows != 1 || tb.cols != tm.cols)
      throw DimensionError("add_bias: bias must be 1x" + std::to_string(tm.cols));
    Tensor<T> out = tm;
    for (int i = 0; i < out.rows; ++i)
      for (int j = 0; j < out.cols; ++j) out.at(i, j) += tb.at(0, j);
    return push(Op::kAddBias, {m.idx, bias.idx}, std::move(out));
  }

  Var<T> transpose(Var<T> x) {
    return push(Op::kTranspose, {x.idx}, gnpe::transpose(val(x)));
  }

  Var<T> concat_cols(Var<T> a, Var<T> b) {
    const Tensor<T>&ta = val(a), &tb = val(b);
    if (ta.rows != tb.rows) throw DimensionError("concat_cols: row mismatch");
    Tensor<T> out(ta.rows, ta.cols + tb.cols);
    for (int i = 0; i < ta.rows; ++i) {
      for (int j = 0; j < ta.cols; ++j) out.at(i, j) = ta.at(i, j);
      for (int j = 0; j < tb.cols; ++j) out.at(i, ta.cols + j) = tb.at(i, j);
    }
    return push(Op::kConcatCols, {a.idx, b.idx}, std::move(out));
  }

  const Tensor<T>& val(Var<T> v) const { return nodes_[v.idx].value; }
  T scalar(Var<T> v) const { return nodes_[v.idx].value.data[0]; }

  // Gradient of the most recent backward() w.r.t. `v`. Zero tensor if the
  // loss does not depend on v.
  const Tensor<T>& grad(Var<T> v) const {
    const Node& n = nodes_[v.idx];
    if (!n.requires_grad) throw UsageError("grad requested for non-grad node");
    return n.grad;
  }

  void backward(Var<T> loss) {
    Node& ln = nodes_[loss.idx];
    if (ln.value.size() != 1) throw UsageError("backward: loss must be scalar");
    // Fresh zero gradients each call; two backward passes over the same
    // graph therefore produce bitwise-identical results.
    for (Node& n : nodes_) {
      if (n.requires_grad) {
        n.grad = Tensor<T>(n.value.rows, n.value.cols);
      }
    }
    if (!ln.requires_grad) return;  // loss independent of all parameters
    ln.grad.data[0] = T(1);
    for (int i = static_cast<int>(nodes_.size()) - 1; i >= 0; --i) propagate(i);
  }

  std::size_t size() const { return nodes_.size(); }
  void clear() { nodes_.clear(); }

 private:
  struct Node {
    Op op;
    int a = -1;
    int b = -1;
    T scale = T(0);  // kAffine
    bool requires_grad = false;
    Tensor<T> value;
    Tensor<T> grad;
  };

  struct Parents {
    int a = -1;
    int b = -1;
  };

  Var<T> push(Op op, Parents p, Tensor<T> value, bool explicit_grad = false) {
    Node n;
    n.op = op;
    n.a = p.a;
    n.b = p.b;
    n.requires_grad = explicit_grad || (p.a >= 0 && nodes_[p.a].requires_grad) ||
                      (p.b >= 0 && nodes_[p.b].requires_grad);
#ifdef GNPE_CHECK_FINITE
    for (const auto& v : value.data)
      if (!std::isfinite(static_cast<double>(v)))
        throw NumericError("non-finite tensor on tape");
#endif
    n.value = std::move(value);
    nodes_.push_back(std::move(n));
    return Var<T>{static_cast<int>(nodes_.size()) - 1};
  }

  Var<T> binary_elem(Op op, Var<T> a, Var<T> b) {
    const Tensor<T>&ta = val(a), &tb = val(b);
    if (!ta.same_shape(tb))
      throw DimensionError("elementwise: shape mismatch " + ta.shape_str() + " vs " +
                           tb.shape_str());
    Tensor<T> out = ta;
    const std::size_t n = out.size();
    switch (op) {
      case Op::kAdd:
        for (std::size_t i = 0; i < n; ++i) out.data[i] += tb.data[i];
        break;
      case Op::kSub:
        for (std::size_t i = 0; i < n; ++i) out.data[i] -= tb.data[i];
        break;
      case Op::kMul:
        for (std::size_t i = 0; i < n; ++i) out.data[i] *= tb.data[i];
        break;
      default:
        throw UsageError("not an elementwise op");
    }
    return push(op, {a.idx, b.idx}, std::move(out));
  }

  bool wants(int idx) const { return idx >= 0 && nodes_[idx].requires_grad; }

  void propagate(int i) {
    Node& n = nodes_[i];
    if (!n.requires_grad || n.op == Op::kInput) return;
    const Tensor<T>& g = n.grad;
    const std::size_t len = g.size();
    switch (n.op) {
      case Op::kMatmul: {
        if (wants(n.a)) matmul_bt_acc(g, nodes_[n.b].value, nodes_[n.a].grad);
        if (wants(n.b)) matmul_at_acc(nodes_[n.a].value, g, nodes_[n.b].grad);
        break;
      }
      case Op::kAdd: {
        if (wants(n.a))
          for (std::size_t k = 0; k < len; ++k) nodes_[n.a].grad.data[k] += g.data[k];
        if (wants(n.b))
          for (std::size_t k = 0; k < len; ++k) nodes_[n.b].grad.data[k] += g.data[k];
        break;
      }
      case Op::kSub: {
        if (wants(n.a))
          for (std::size_t k = 0; k < len; ++k) nodes_[n.a].grad.data[k] += g.data[k];
        if (wants(n.b))
          for (std::size_t k = 0; k < len; ++k) nodes_[n.b].grad.data[k] -= g.data[k];
        break;
      }
      case Op::kMul: {
        if (wants(n.a)) {
          const auto& vb = nodes_[n.b].value.data;
          for (std::size_t k = 0; k < len; ++k)
            nodes_[n.a].grad.data[k] += g.data[k] * vb[k];
        }
        if (wants(n.b)) {
          const auto& va = nodes_[n.a].value.data;
          for (std::size_t k = 0; k < len; ++k)
            nodes_[n.b].grad.data[k] += g.data[k] * va[k];
        }
        break;
      }
      case Op::kAffine: {
        if (wants(n.a))
          for (std::size_t k = 0; k < len; ++k)
            nodes_[n.a].grad.data[k] += n.scale * g.data[k];
        break;
      }
      case Op::kSigmoid: {
        if (wants(n.a)) {
          const auto& y = n.value.data;
          for (std::size_t k = 0; k < len; ++k)
            nodes_[n.a].grad.data[k] += g.data[k] * y[k] * (T(1) - y[k]);
        }
        break;
      }
      case Op::kTanh: {
        if (wants(n.a)) {
          const auto& y = n.value.data;
          for (std::size_t k = 0; k < len; ++k)
            nodes_[n.a].grad.data[k] += g.data[k] * (T(1) - y[k] * y[k]);
        }
        break;
      }
      case Op::kRelu: {
        if (wants(n.a)) {
          const auto& x = nodes_[n.a].value.data;
          for (std::size_t k = 0; k < len; ++k)
            if (x[k] > T(0)) nodes_[n.a].grad.data[k] += g.data[k];
        }
        break;
      }
      case Op::kExp: {
        if (wants(n.a)) {
          const auto& y = n.value.data;
          for (std::size_t k = 0; k < len; ++k)
            nodes_[n.a].grad.data[k] += g.data[k] * y[k];
        }
        break;
      }
      case Op::kLog: {
        if (wants(n.a)) {
          const auto& x = nodes_[n.a].value.data;
          for (std::size_t k = 0; k < len; ++k)
            nodes_[n.a].grad.data[k] += g.data[k] / x[k];
        }
        break;
      }
      case Op::kSum: {
        if (wants(n.a)) {
          const T gs = g.data[0];
          auto& ga = nodes_[n.a].grad.data;
          for (auto& v : ga) v += gs;
        }
        break;
      }
      case Op::kAddBias: {
        if (wants(n.a))
          for (std::size_t k = 0; k < len; ++k) nodes_[n.a].grad.data[k] += g.data[k];
        if (wants(n.b)) {
          Tensor<T>& gb = nodes_[n.b].grad;
          for (int r = 0; r < g.rows; ++r)
            for (int c = 0; c < g.cols; ++c) gb.at(0, c) += g.at(r, c);
        }
        break;
      }
      case Op::kTranspose: {
        if (wants(n.a)) {
          Tensor<T>& ga = nodes_[n.a].grad;
          for (int r = 0; r < g.rows; ++r)
            for (int c = 0; c < g.cols; ++c) ga.at(c, r) += g.at(r, c);
        }
        break;
      }
      case Op::kConcatCols: {
        const int ca = nodes_[n.a].value.cols;
        if (wants(n.a)) {
          Tensor<T>& ga = nodes_[n.a].grad;
          for (int r = 0; r < g.rows; ++r)
            for (int c = 0; c < ca; ++c) ga.at(r, c) += g.at(r, c);
        }
        if (wants(n.b)) {
          Tensor<T>& gb = nodes_[n.b].grad;
          for (int r = 0; r < g.rows; ++r)
            for (int c = 0; c < gb.cols; ++c) gb.at(r, c) += g.at(r, ca + c);
        }
        break;
      }
      case Op::kInput:
        break;
    }
  }

  std::vector<Node> nodes_;
};

}  // namespace gnpe
