// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cmath>
#include <cstdint>
#include <map>
#include <string>

#include "twostage/model/params.hpp"

namespace twostage::tensor {

struct AdamConfig {
  double beta1 = 0.9;
  double beta2 = 0.99;
  double eps = 1e-8;
  double weight_decay = 0.1;
};

template <typename T>
struct Moments {
  Tensor<T> first;
  Tensor<T> second;
  std::uint64_t updates = 0;  // per-parameter bias-correction count
};

/// Moments exist only for currently trainable groups, so a group that is
/// unfrozen later starts from zero moments.
template <typename T>
struct OptimState {
  std::map<std::string, Moments<T>> moments;
  std::uint64_t step = 0;
};

/// Decoupled-weight-decay Adam update with bias correction. `grads` must hold
/// exactly the trainable groups; frozen groups are never written.
template <typename T>
void adam_step(model::ParameterStore<T>& params, const model::GradMap<T>& grads, OptimState<T>& state, double lr,
               const AdamConfig& cfg = {}) {
  const auto trainable = params.trainable_owners();
  for (const auto& owner : trainable) {
    auto it = grads.find(owner);
    if (it == grads.end()) throw Error("missing gradient for trainable parameter '" + owner + "'");
    if (it->second.shape() != params.get(owner).shape()) {
      throw DimensionError("gradient for '" + owner + "' has shape " + shape_str(it->second.shape()) +
                           ", parameter has " + shape_str(params.get(owner).shape()));
    }
  }
  if (grads.size() != trainable.size()) {
    for (const auto& [name, _] : grads) {
      if (!params.contains(name) || !params.trainable(name) || params.owner(name) != name) {
        throw Error("gradient supplied for non-trainable or unknown parameter '" + name + "'");
      }
    }
  }
  for (auto it = state.moments.begin(); it != state.moments.end();) {
    if (!params.contains(it->first) || !params.trainable(it->first)) it = state.moments.erase(it);
    else ++it;
  }

  for (const auto& owner : trainable) {
    Tensor<T>& w = params.get_mutable(owner);
    const Tensor<T>& g = grads.at(owner);
    auto [mit, inserted] = state.moments.try_emplace(owner);
    Moments<T>& m = mit->second;
    if (inserted) {
      m.first = Tensor<T>(w.shape());
      m.second = Tensor<T>(w.shape());
    } else if (m.first.shape() != w.shape() || m.second.shape() != w.shape()) {
      throw DimensionError("optimizer state for '" + owner + "' has shape " + shape_str(m.first.shape()) +
                           ", parameter has " + shape_str(w.shape()));
    }
    ++m.updates;
    const T b1 = static_cast<T>(cfg.beta1), b2 = static_cast<T>(cfg.beta2);
    const T c1 = static_cast<T>(1.0 - std::pow(cfg.beta1, static_cast<double>(m.updates)));
    const T c2 = static_cast<T>(1.0 - std::pow(cfg.beta2, static_cast<double>(m.updates)));
    const T step = static_cast<T>(lr);
    const T decay = static_cast<T>(1.0 - lr * cfg.weight_decay);
    const T eps = static_cast<T>(cfg.eps);
    for (std::size_t i = 0; i < w.size(); ++i) {
      const T gi = g[i];
      m.first[i] = b1 * m.first[i] + (T{1} - b1) * gi;
      m.second[i] = b2 * m.second[i] + (T{1} - b2) * gi * gi;
      const T mhat = m.first[i] / c1;
      const T vhat = m.second[i] / c2;
      w[i] = w[i] * decay - step * mhat / (std::sqrt(vhat) + eps);
    }
  }
  ++state.step;
}

/// Global L2 norm of a gradient map.
template <typename T>
double grad_norm(const model::GradMap<T>& grads) {
  double acc = 0.0;
  for (const auto& [_, g] : grads)
    for (T v : g.values()) acc += static_cast<double>(v) * static_cast<double>(v);
  return std::sqrt(acc);
}

}  // namespace twostage::tensor
