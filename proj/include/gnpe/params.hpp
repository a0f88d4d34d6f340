#pragma once

// Central registry of named trainable tensors. Models hold ParamId handles;
// the store is what the optimizer updates and the checkpoint serializes.

#include <string>
#include <utility>
#include <vector>

#include "gnpe/errors.hpp"
#include "gnpe/tape.hpp"
#include "gnpe/tensor.hpp"

namespace gnpe {

using ParamId = int;

template <typename T>
class ParamStore {
 public:
  ParamId add(std::string name, Tensor<T> init) {
    for (const auto& n : names_)
      if (n == name) throw UsageError("duplicate parameter name: " + name);
    names_.push_back(std::move(name));
    values_.push_back(std::move(init));
    return static_cast<ParamId>(values_.size()) - 1;
  }

  std::size_t size() const { return values_.size(); }
  const std::string& name(ParamId id) const { return names_[id]; }
  Tensor<T>& operator[](ParamId id) { return values_[id]; }
  const Tensor<T>& operator[](ParamId id) const { return values_[id]; }

  std::size_t scalar_count() const {
    std::size_t n = 0;
    for (const auto& t : values_) n += t.size();
    return n;
  }

  template <typename U>
  ParamStore<U> cast() const {
    ParamStore<U> out;
    for (std::size_t i = 0; i < values_.size(); ++i) {
      Tensor<U> t(values_[i].rows, values_[i].cols);
      for (std::size_t k = 0; k < t.size(); ++k)
        t.data[k] = static_cast<U>(values_[i].data[k]);
      out.add(names_[i], std::move(t));
    }
    return out;
  }

 private:
  std::vector<std::string> names_;
  std::vector<Tensor<T>> values_;
};

// One gradient tensor per parameter, aligned with store order.
template <typename T>
using GradVec = std::vector<Tensor<T>>;

template <typename T>
GradVec<T> zero_grads(const ParamStore<T>& store) {
  GradVec<T> g;
  g.reserve(store.size());
  for (std::size_t i = 0; i < store.size(); ++i) {
    const auto& t = store[static_cast<ParamId>(i)];
    g.emplace_back(t.rows, t.cols);
  }
  return g;
}

// Registers every parameter on the tape (in store order) and returns the
// Var handles indexed by ParamId.
template <typename T>
std::vector<Var<T>> bind_params(Tape<T>& tape, const ParamStore<T>& store) {
  std::vector<Var<T>> vars;
  vars.reserve(store.size());
  for (std::size_t i = 0; i < store.size(); ++i)
    vars.push_back(tape.input(store[static_cast<ParamId>(i)], /*requires_grad=*/true));
  return vars;
}

template <typename T>
void accumulate_grads(const Tape<T>& tape, const std::vector<Var<T>>& vars,
                      GradVec<T>& into) {
  for (std::size_t i = 0; i < vars.size(); ++i) {
    const Tensor<T>& g = tape.grad(vars[i]);
    for (std::size_t k = 0; k < g.size(); ++k) into[i].data[k] += g.data[k];
  }
}

}  // namespace gnpe
