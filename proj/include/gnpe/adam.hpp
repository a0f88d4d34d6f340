#pragma once

// Adam with bias correction over a ParamStore.

#include <cmath>
#include <cstdint>

#include "gnpe/errors.hpp"
#include "gnpe/params.hpp"

namespace gnpe {

template <typename T>
struct AdamConfig {
  T lr = T(5e-4);
  T beta1 = T(0.9);
  T beta2 = T(0.999);
  T eps_stab = T(1e-8);
};

template <typename T>
class Adam {
 public:
  Adam(const ParamStore<T>& store, AdamConfig<T> cfg = {})
      : cfg_(cfg), m_(zero_grads(store)), v_(zero_grads(store)) {}

  std::int64_t step_count() const { return step_; }

  void step(ParamStore<T>& params, const GradVec<T>& grads) {
    if (grads.size() != m_.size()) throw DimensionError("adam: grad count mismatch");
    ++step_;
    const T bc1 = T(1) - std::pow(cfg_.beta1, static_cast<T>(step_));
    const T bc2 = T(1) - std::pow(cfg_.beta2, static_cast<T>(step_));
    for (std::size_t i = 0; i < m_.size(); ++i) {
      Tensor<T>& p = params[static_cast<ParamId>(i)];
      const Tensor<T>& g = grads[i];
      if (!p.same_shape(g)) throw DimensionError("adam: shape mismatch at param " + std::to_string(i));
      for (std::size_t k = 0; k < p.size(); ++k) {
        T& m = m_[i].data[k];
        T& v = v_[i].data[k];
        m = cfg_.beta1 * m + (T(1) - cfg_.beta1) * g.data[k];
        v = cfg_.beta2 * v + (T(1) - cfg_.beta2) * g.data[k] * g.data[k];
        const T mhat = m / bc1;
        const T vhat = v / bc2;
        p.data[k] -= cfg_.lr * mhat / (std::sqrt(vhat) + cfg_.eps_stab);
        if (!std::isfinite(static_cast<double>(p.data[k])))
          throw NumericError("adam: non-finite parameter after update");
      }
    }
  }

 private:
  AdamConfig<T> cfg_;
  GradVec<T> m_;
  GradVec<T> v_;
  std::int64_t step_ = 0;
};

}  // namespace gnpe
