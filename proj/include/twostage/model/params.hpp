// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <algorithm>
#include <map>
#include <memory>
#include <set>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "twostage/tensor/autograd.hpp"
#include "twostage/tensor/tensor.hpp"

namespace twostage::model {

using tensor::Tensor;

/// Named parameters. Names in one tie group share a single storage slot, so
/// trainability is per group and an update through any member is seen by all.
/// Copies are deep and preserve the tie structure.
template <typename T>
class ParameterStore {
 public:
  struct Slot {
    Tensor<T> value;
    bool trainable = true;
    std::string owner;
  };

  ParameterStore() = default;
  ParameterStore(ParameterStore&&) noexcept = default;
  ParameterStore& operator=(ParameterStore&&) noexcept = default;
  ParameterStore(const ParameterStore& other) { copy_from(other); }
  ParameterStore& operator=(const ParameterStore& other) {
    if (this != &other) copy_from(other);
    return *this;
  }

  void add(const std::string& name, Tensor<T> value, bool trainable = true) {
    if (slots_.count(name)) throw Error("parameter '" + name + "' already exists");
    slots_[name] = std::make_shared<Slot>(Slot{std::move(value), trainable, name});
  }

  /// Makes `alias` refer to the storage of `existing`. An existing alias entry is replaced
  /// only if its shape matches.
  void tie(const std::string& existing, const std::string& alias) {
    auto src = slot(existing);
    if (auto it = slots_.find(alias); it != slots_.end()) {
      if (it->second->value.shape() != src->value.shape()) {
        throw DimensionError("cannot tie '" + alias + "' " + shape_str(it->second->value.shape()) + " to '" +
                             existing + "' " + shape_str(src->value.shape()));
      }
      const bool was_owner = it->second->owner == alias;
      auto old = it->second;
      it->second = src;
      if (was_owner) reassign_owner(old);
    } else {
      slots_[alias] = src;
    }
  }

  void erase(const std::string& name) {
    auto it = slots_.find(name);
    if (it == slots_.end()) throw Error("no parameter named '" + name + "'");
    auto s = it->second;
    slots_.erase(it);
    if (s->owner == name) reassign_owner(s);
  }

  bool contains(const std::string& name) const { return slots_.count(name) != 0; }
  std::size_t size() const noexcept { return slots_.size(); }

  const Tensor<T>& get(const std::string& name) const { return slot(name)->value; }
  Tensor<T>& get_mutable(const std::string& name) { return slot(name)->value; }

  bool trainable(const std::string& name) const { return slot(name)->trainable; }
  void set_trainable(const std::string& name, bool trainable) { slot(name)->trainable = trainable; }
  void set_all_trainable(bool trainable) {
    for (auto& [_, s] : slots_) s->trainable = trainable;
  }

  /// Canonical name of the group containing `name`.
  const std::string& owner(const std::string& name) const { return slot(name)->owner; }
  bool same_storage(const std::string& a, const std::string& b) const { return slot(a) == slot(b); }
  const void* storage_key(const std::string& name) const { return slot(name).get(); }

  /// All names, sorted.
  std::vector<std::string> names() const {
    std::vector<std::string> out;
    out.reserve(slots_.size());
    for (const auto& [n, _] : slots_) out.push_back(n);
    return out;
  }

  std::vector<std::string> names_with_prefix(std::string_view prefix) const {
    std::vector<std::string> out;
    for (const auto& [n, _] : slots_)
      if (std::string_view(n).substr(0, prefix.size()) == prefix) out.push_back(n);
    return out;
  }

  /// Owner names of every group, sorted.
  std::vector<std::string> owners() const {
    std::set<std::string> out;
    for (const auto& [_, s] : slots_) out.insert(s->owner);
    return {out.begin(), out.end()};
  }

  std::vector<std::string> trainable_owners() const {
    std::set<std::string> out;
    for (const auto& [_, s] : slots_)
      if (s->trainable) out.insert(s->owner);
    return {out.begin(), out.end()};
  }

  /// Every group as a sorted member list, ordered by owner; singletons included.
  std::vector<std::vector<std::string>> tie_groups() const {
    std::map<std::string, std::vector<std::string>> groups;
    for (const auto& [n, s] : slots_) groups[s->owner].push_back(n);
    std::vector<std::vector<std::string>> out;
    for (auto& [_, members] : groups) out.push_back(std::move(members));
    return out;
  }

  std::size_t parameter_count() const {
    std::size_t total = 0;
    for (const auto& owner : owners()) total += get(owner).size();
    return total;
  }

 private:
  std::shared_ptr<Slot> slot(const std::string& name) const {
    auto it = slots_.find(name);
    if (it == slots_.end()) throw Error("no parameter named '" + name + "'");
    return it->second;
  }

  void reassign_owner(const std::shared_ptr<Slot>& s) {
    for (const auto& [n, other] : slots_) {
      if (other == s) {
        s->owner = n;
        return;
      }
    }
  }

  void copy_from(const ParameterStore& other) {
    slots_.clear();
    std::unordered_map<const Slot*, std::shared_ptr<Slot>> remap;
    for (const auto& [n, s] : other.slots_) {
      auto& dst = remap[s.get()];
      if (!dst) dst = std::make_shared<Slot>(*s);
      slots_[n] = dst;
    }
  }

  std::map<std::string, std::shared_ptr<Slot>> slots_;
};

/// Gradients keyed by tie-group owner name.
template <typename T>
using GradMap = std::map<std::string, Tensor<T>>;

/// Places a parameter on the tape. Tied names resolve to one leaf.
template <typename T>
tensor::Var<T> param(tensor::Graph<T>& g, const ParameterStore<T>& ps, const std::string& name) {
  return g.keyed_leaf(ps.storage_key(name), ps.get(name), ps.trainable(name));
}

/// Gradient of every trainable group; zeros for groups the forward pass never touched.
template <typename T>
GradMap<T> collect_gradients(const tensor::Graph<T>& g, const ParameterStore<T>& ps) {
  GradMap<T> out;
  for (const auto& owner : ps.trainable_owners()) {
    const Tensor<T>* grad = nullptr;
    if (auto id = g.find_keyed(ps.storage_key(owner))) grad = g.grad(*id);
    out.emplace(owner, grad ? *grad : Tensor<T>(ps.get(owner).shape()));
  }
  return out;
}

}  // namespace twostage::model
