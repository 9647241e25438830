// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <algorithm>
#include <vector>

#include "twostage/data/noise.hpp"
#include "twostage/data/sampling.hpp"
#include "twostage/model/token_batch.hpp"

namespace twostage::data {

using model::TokenBatch;

struct MlmBatch {
  TokenBatch input;
  std::vector<std::int32_t> labels;
};

struct Seq2SeqBatch {
  TokenBatch source;
  TokenBatch target_in;
  std::vector<std::int32_t> labels;
};

/// Right-pads rows with PAD to the longest row.
inline TokenBatch pad_rows(const std::vector<std::vector<TokenId>>& rows) {
  std::size_t len = 0;
  for (const auto& r : rows) len = std::max(len, r.size());
  TokenBatch tb{rows.size(), len, std::vector<std::int32_t>(rows.size() * len, special::PAD),
                std::vector<std::uint8_t>(rows.size() * len, 0)};
  for (std::size_t b = 0; b < rows.size(); ++b) {
    std::copy(rows[b].begin(), rows[b].end(), tb.ids.begin() + static_cast<std::ptrdiff_t>(b * len));
    std::fill_n(tb.valid.begin() + static_cast<std::ptrdiff_t>(b * len), rows[b].size(), 1);
  }
  return tb;
}

/// Labels padded with the ignore label to the same layout as pad_rows.
inline std::vector<std::int32_t> pad_labels(const std::vector<std::vector<TokenId>>& rows, std::size_t len) {
  std::vector<std::int32_t> out(rows.size() * len, tensor::kIgnoreLabel);
  for (std::size_t b = 0; b < rows.size(); ++b) std::copy(rows[b].begin(), rows[b].end(), out.begin() + static_cast<std::ptrdiff_t>(b * len));
  return out;
}

inline std::vector<TokenId> frame(const std::vector<TokenId>& seq) {
  std::vector<TokenId> out;
  out.reserve(seq.size() + 2);
  out.push_back(special::BOS);
  out.insert(out.end(), seq.begin(), seq.end());
  out.push_back(special::EOS);
  return out;
}

/// Encoder input [BOS] corrupted [EOS]; labels only at corrupted positions.
inline MlmBatch make_mlm_batch(const std::vector<std::vector<TokenId>>& seqs, const NoiseConfig& nc, std::size_t vocab_size,
                               const std::vector<std::uint64_t>& seeds) {
  if (seeds.size() != seqs.size()) throw DimensionError("make_mlm_batch: one seed per sequence required");
  std::vector<std::vector<TokenId>> inputs, labels;
  for (std::size_t i = 0; i < seqs.size(); ++i) {
    auto s = mlm_corrupt(seqs[i], nc, vocab_size, seeds[i]);
    inputs.push_back(frame(s.input));
    std::vector<TokenId> l{tensor::kIgnoreLabel};
    l.insert(l.end(), s.labels.begin(), s.labels.end());
    l.push_back(tensor::kIgnoreLabel);
    labels.push_back(std::move(l));
  }
  MlmBatch b{pad_rows(inputs), {}};
  b.labels = pad_labels(labels, b.input.length);
  return b;
}

/// Source [BOS] corrupted [EOS]; decoder input [BOS] original; labels original [EOS].
inline Seq2SeqBatch make_denoise_batch(const std::vector<std::vector<TokenId>>& seqs, const NoiseConfig& nc,
                                       const std::vector<std::uint64_t>& seeds) {
  if (seeds.size() != seqs.size()) throw DimensionError("make_denoise_batch: one seed per sequence required");
  std::vector<std::vector<TokenId>> sources, targets_in, labels;
  for (std::size_t i = 0; i < seqs.size(); ++i) {
    auto s = denoise_corrupt(seqs[i], nc, seeds[i]);
    sources.push_back(frame(s.source));
    std::vector<TokenId> tin{special::BOS};
    tin.insert(tin.end(), s.target.begin(), s.target.end());
    std::vector<TokenId> lab(s.target);
    lab.push_back(special::EOS);
    targets_in.push_back(std::move(tin));
    labels.push_back(std::move(lab));
  }
  Seq2SeqBatch b{pad_rows(sources), pad_rows(targets_in), {}};
  b.labels = pad_labels(labels, b.target_in.length);
  return b;
}

inline double padding_fraction(const TokenBatch& tb) {
  if (tb.valid.empty()) return 0.0;
  const auto pads = std::count(tb.valid.begin(), tb.valid.end(), std::uint8_t{0});
  return static_cast<double>(pads) / static_cast<double>(tb.valid.size());
}

/// Per-step batches drawn from a pool. Sequence choice and corruption are pure
/// functions of (seed, step, slot).
class BatchSource {
 public:
  BatchSource(const SequencePool& pool, NoiseConfig noise, std::size_t vocab_size, std::size_t batch_size, std::uint64_t seed)
      : pool_(&pool), noise_(noise), vocab_size_(vocab_size), batch_size_(batch_size), seed_(seed) {
    if (batch_size_ == 0) throw Error("batch size must be positive");
    noise_.validate();
  }

  const NoiseConfig& noise() const noexcept { return noise_; }
  std::size_t batch_size() const noexcept { return batch_size_; }

  MlmBatch mlm(std::uint64_t step) const {
    auto [seqs, seeds] = gather(step);
    return make_mlm_batch(seqs, noise_, vocab_size_, seeds);
  }

  Seq2SeqBatch denoise(std::uint64_t step) const {
    auto [seqs, seeds] = gather(step);
    return make_denoise_batch(seqs, noise_, seeds);
  }

 private:
  std::pair<std::vector<std::vector<TokenId>>, std::vector<std::uint64_t>> gather(std::uint64_t step) const {
    std::vector<std::vector<TokenId>> seqs;
    std::vector<std::uint64_t> seeds;
    const auto idx = pool_->draw(seed_, step, batch_size_);
    const std::uint64_t step_seed = mix_seed(seed_ ^ 0x5eedc0de, step);
    for (std::size_t i = 0; i < idx.size(); ++i) {
      seqs.push_back(pool_->sequences()[idx[i]].ids);
      seeds.push_back(mix_seed(step_seed, i));
    }
    return {std::move(seqs), std::move(seeds)};
  }

  const SequencePool* pool_;
  NoiseConfig noise_;
  std::size_t vocab_size_;
  std::size_t batch_size_;
  std::uint64_t seed_;
};

/// Deterministic batches over every sequence in order, for evaluation.
inline std::vector<Seq2SeqBatch> denoise_eval_batches(const std::vector<PackedSequence>& seqs, const NoiseConfig& nc,
                                                      std::size_t batch_size, std::uint64_t seed) {
  std::vector<Seq2SeqBatch> out;
  for (std::size_t start = 0; start < seqs.size(); start += batch_size) {
    std::vector<std::vector<TokenId>> rows;
    std::vector<std::uint64_t> seeds;
    for (std::size_t i = start; i < std::min(seqs.size(), start + batch_size); ++i) {
      rows.push_back(seqs[i].ids);
      seeds.push_back(mix_seed(seed, i));
    }
    out.push_back(make_denoise_batch(rows, nc, seeds));
  }
  return out;
}

inline std::vector<MlmBatch> mlm_eval_batches(const std::vector<PackedSequence>& seqs, const NoiseConfig& nc,
                                              std::size_t vocab_size, std::size_t batch_size, std::uint64_t seed) {
  std::vector<MlmBatch> out;
  for (std::size_t start = 0; start < seqs.size(); start += batch_size) {
    std::vector<std::vector<TokenId>> rows;
    std::vector<std::uint64_t> seeds;
    for (std::size_t i = start; i < std::min(seqs.size(), start + batch_size); ++i) {
      rows.push_back(seqs[i].ids);
      seeds.push_back(mix_seed(seed, i));
    }
    out.push_back(make_mlm_batch(rows, nc, vocab_size, seeds));
  }
  return out;
}

}  // namespace twostage::data
