#pragma once

// Dense row-major 2D tensor plus the raw kernels the tape dispatches to.
// Sized for this project: matrices up to a few hundred per dimension,
// CPU only, no views or strides.

#include <cmath>
#include <cstddef>
#include <string>
#include <vector>

#include "gnpe/errors.hpp"
#include "gnpe/rng.hpp"

namespace gnpe {

template <typename T>
struct Tensor {
  int rows = 0;
  int cols = 0;
  std::vector<T> data;

  Tensor() = default;
  Tensor(int r, int c) : rows(r), cols(c), data(static_cast<std::size_t>(r) * c, T(0)) {
    if (r <= 0 || c <= 0) throw DimensionError("Tensor dims must be positive");
  }
  Tensor(int r, int c, std::vector<T> values) : rows(r), cols(c), data(std::move(values)) {
    if (r <= 0 || c <= 0) throw DimensionError("Tensor dims must be positive");
    if (data.size() != static_cast<std::size_t>(r) * c)
      throw DimensionError("Tensor data length does not match shape");
  }

  static Tensor scalar(T v) {
    Tensor t(1, 1);
    t.data[0] = v;
    return t;
  }

  std::size_t size() const { return data.size(); }
  T& at(int i, int j) { return data[static_cast<std::size_t>(i) * cols + j]; }
  const T& at(int i, int j) const { return data[static_cast<std::size_t>(i) * cols + j]; }

  bool same_shape(const Tensor& o) const { return rows == o.rows && cols == o.cols; }

  bool all_finite() const {
    for (const T& v : data)
      if (!std::isfinite(static_cast<double>(v))) return false;
    return true;
  }

  std::string shape_str() const {
    return "[" + std::to_string(rows) + "x" + std::to_string(cols) + "]";
  }
};

template <typename T>
Tensor<T> uniform_tensor(int r, int c, T lo, T hi, Rng& rng) {
  Tensor<T> t(r, c);
  for (auto& v : t.data) v = static_cast<T>(rng.uniform(lo, hi));
  return t;
}

// Glorot-style uniform fan init: U(-a, a), a = sqrt(6 / (fan_in + fan_out)).
template <typename T>
Tensor<T> glorot_tensor(int fan_in, int fan_out, Rng& rng) {
  const double a = std::sqrt(6.0 / (fan_in + fan_out));
  return uniform_tensor<T>(fan_in, fan_out, static_cast<T>(-a), static_cast<T>(a), rng);
}

// ---- raw kernels -----------------------------------------------------------
// Inner loops run over contiguous memory in all three matmul variants so the
// compiler can vectorize without -ffast-math (no reduction reordering).

// out = a * b
template <typename T>
void matmul_into(const Tensor<T>& a, const Tensor<T>& b, Tensor<T>& out) {
  const int m = a.rows, k = a.cols, n = b.cols;
  const T* pa = a.data.data();
  const T* pb = b.data.data();
  T* po = out.data.data();
  for (int i = 0; i < m; ++i) {
    T* orow = po + static_cast<std::size_t>(i) * n;
    for (int j = 0; j < n; ++j) orow[j] = T(0);
    for (int p = 0; p < k; ++p) {
      const T aip = pa[static_cast<std::size_t>(i) * k + p];
      const T* brow = pb + static_cast<std::size_t>(p) * n;
      for (int j = 0; j < n; ++j) orow[j] += aip * brow[j];
    }
  }
}

template <typename T>
Tensor<T> matmul(const Tensor<T>& a, const Tensor<T>& b) {
  if (a.cols != b.rows)
    throw DimensionError("matmul: inner dims disagree " + a.shape_str() + " * " + b.shape_str());
  Tensor<T> out(a.rows, b.cols);
  matmul_into(a, b, out);
  return out;
}

// out += g * b^T  (the dA term of matmul's backward)
template <typename T>
void matmul_bt_acc(const Tensor<T>& g, const Tensor<T>& b, Tensor<T>& out) {
  const int m = g.rows, n = g.cols, k = b.rows;
  const T* pg = g.data.data();
  const T* pb = b.data.data();
  T* po = out.data.data();
  for (int i = 0; i < m; ++i) {
    const T* grow = pg + static_cast<std::size_t>(i) * n;
    for (int p = 0; p < k; ++p) {
      const T* brow = pb + static_cast<std::size_t>(p) * n;
      T acc = T(0);
      for (int j = 0; j < n; ++j) acc += grow[j] * brow[j];
      po[static_cast<std::size_t>(i) * k + p] += acc;
    }
  }
}

// out += a^T * g  (the dB term of matmul's backward)
template <typename T>
void matmul_at_acc(const Tensor<T>& a, const Tensor<T>& g, Tensor<T>& out) {
  const int m = a.rows, k = a.cols, n = g.cols;
  const T* pa = a.data.data();
  const T* pg = g.data.data();
  T* po = out.data.data();
  for (int i = 0; i < m; ++i) {
    const T* arow = pa + static_cast<std::size_t>(i) * k;
    const T* grow = pg + static_cast<std::size_t>(i) * n;
    for (int p = 0; p < k; ++p) {
      const T aip = arow[p];
      T* orow = po + static_cast<std::size_t>(p) * n;
      for (int j = 0; j < n; ++j) orow[j] += aip * grow[j];
    }
  }
}

template <typename T>
Tensor<T> transpose(const Tensor<T>& a) {
  Tensor<T> out(a.cols, a.rows);
  for (int i = 0; i < a.rows; ++i)
    for (int j = 0; j < a.cols; ++j) out.at(j, i) = a.at(i, j);
  return out;
}

template <typename T>
T stable_sigmoid(T x) {
  if (x >= T(0)) {
    const T e = std::exp(-x);
    return T(1) / (T(1) + e);
  }
  const T e = std::exp(x);
  return e / (T(1) + e);
}

}  // namespace gnpe
