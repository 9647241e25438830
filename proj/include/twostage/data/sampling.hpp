// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cmath>
#include <map>
#include <random>
#include <string>
#include <vector>

#include "twostage/data/packing.hpp"
#include "twostage/tensor/rng.hpp"

namespace twostage::data {

/// Exponent-smoothed language distribution: p_i = q_i^alpha / sum_j q_j^alpha with
/// q_i = count_i / sum(count).
inline std::vector<double> upsample_weights(const std::vector<double>& counts, double alpha) {
  if (counts.empty()) throw Error("upsample_weights: no languages");
  double total = 0.0;
  for (double c : counts) {
    if (!(c > 0.0)) throw Error("upsample_weights: counts must be positive, got " + std::to_string(c));
    total += c;
  }
  std::vector<double> p;
  double z = 0.0;
  for (double c : counts) {
    p.push_back(std::pow(c / total, alpha));
    z += p.back();
  }
  for (double& v : p) v /= z;
  return p;
}

/// Packed sequences grouped by language with a smoothed language distribution.
/// Draws are a pure function of (seed, step), so any step can be replayed.
class SequencePool {
 public:
  SequencePool(std::vector<PackedSequence> seqs, double alpha) : seqs_(std::move(seqs)) {
    if (seqs_.empty()) throw Error("sequence pool is empty");
    std::map<std::string, std::size_t> slot;
    for (std::size_t i = 0; i < seqs_.size(); ++i) {
      const auto& lang = seqs_[i].lang;
      auto [it, fresh] = slot.emplace(lang, langs_.size());
      if (fresh) {
        langs_.push_back(lang);
        members_.emplace_back();
        token_counts_.push_back(0.0);
      }
      members_[it->second].push_back(i);
      for (TokenId id : seqs_[i].ids) token_counts_[it->second] += id == special::DOC ? 0.0 : 1.0;
    }
    for (double& c : token_counts_) c = std::max(c, 1.0);
    weights_ = upsample_weights(token_counts_, alpha);
  }

  const std::vector<PackedSequence>& sequences() const noexcept { return seqs_; }
  const std::vector<std::string>& languages() const noexcept { return langs_; }
  const std::vector<double>& weights() const noexcept { return weights_; }
  const std::vector<double>& token_counts() const noexcept { return token_counts_; }

  /// Indices of `count` sequences for one step: a language by weight, then a uniform member.
  std::vector<std::size_t> draw(std::uint64_t seed, std::uint64_t step, std::size_t count) const {
    Rng rng(mix_seed(seed, step));
    std::discrete_distribution<std::size_t> lang(weights_.begin(), weights_.end());
    std::vector<std::size_t> out;
    for (std::size_t i = 0; i < count; ++i) {
      const auto& m = members_[langs_.size() == 1 ? 0 : lang(rng)];
      out.push_back(m[std::uniform_int_distribution<std::size_t>(0, m.size() - 1)(rng)]);
    }
    return out;
  }

 private:
  std::vector<PackedSequence> seqs_;
  std::vector<std::string> langs_;
  std::vector<std::vector<std::size_t>> members_;
  std::vector<double> token_counts_;
  std::vector<double> weights_;
};

}  // namespace twostage::data
