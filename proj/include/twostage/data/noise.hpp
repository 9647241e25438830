// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cmath>
#include <random>
#include <string>
#include <vector>

#include "twostage/data/vocab.hpp"
#include "twostage/tensor/ops.hpp"
#include "twostage/tensor/rng.hpp"

namespace twostage::data {

enum class NoiseMode { MlmMask, SpanDrop, SpanMask };

inline const char* to_string(NoiseMode m) {
  switch (m) {
    case NoiseMode::MlmMask: return "mlm";
    case NoiseMode::SpanDrop: return "span_drop";
    case NoiseMode::SpanMask: return "span_mask";
  }
  return "?";
}

inline NoiseMode noise_mode_from_string(const std::string& s) {
  if (s == "mlm") return NoiseMode::MlmMask;
  if (s == "span_drop") return NoiseMode::SpanDrop;
  if (s == "span_mask") return NoiseMode::SpanMask;
  throw Error("unknown noise mode '" + s + "' (expected mlm|span_drop|span_mask)");
}

struct NoiseConfig {
  double corruption_ratio = 0.15;
  double span_lambda = 3.0;
  NoiseMode mode = NoiseMode::MlmMask;
  double mask_p = 0.8;
  double random_p = 0.1;
  double keep_p = 0.1;

  void validate() const {
    if (!(corruption_ratio >= 0.0 && corruption_ratio <= 1.0)) throw Error("corruption_ratio must lie in [0,1]");
    if (mode == NoiseMode::MlmMask) {
      if (mask_p < 0 || random_p < 0 || keep_p < 0 || std::abs(mask_p + random_p + keep_p - 1.0) > 1e-9) {
        throw Error("mlm splits must be non-negative and sum to 1");
      }
    } else if (!(span_lambda > 0.0)) {
      throw Error("span_lambda must be positive");
    }
  }
  friend bool operator==(const NoiseConfig&, const NoiseConfig&) = default;
};

struct MlmSample {
  std::vector<TokenId> input;
  std::vector<TokenId> labels;  // tensor::kIgnoreLabel where not selected
};

/// BERT-style masking: every non-special token is selected independently with
/// probability `corruption_ratio`, then masked, replaced by a random word, or kept.
inline MlmSample mlm_corrupt(const std::vector<TokenId>& seq, const NoiseConfig& nc, std::size_t vocab_size, std::uint64_t seed) {
  nc.validate();
  if (vocab_size <= static_cast<std::size_t>(special::kCount)) throw Error("mlm_corrupt: vocabulary has no ordinary tokens");
  Rng rng(seed);
  std::uniform_int_distribution<TokenId> random_word(special::kCount, static_cast<TokenId>(vocab_size - 1));
  MlmSample out{seq, std::vector<TokenId>(seq.size(), tensor::kIgnoreLabel)};
  for (std::size_t i = 0; i < seq.size(); ++i) {
    if (seq[i] == special::PAD) throw Error("mlm_corrupt: sequence contains PAD");
    if (is_special(seq[i])) continue;
    if (uniform01(rng) >= nc.corruption_ratio) continue;
    out.labels[i] = seq[i];
    const double u = uniform01(rng);
    if (u < nc.mask_p) {
      out.input[i] = special::MASK;
    } else if (u < nc.mask_p + nc.random_p) {
      out.input[i] = random_word(rng);
    }
  }
  return out;
}

struct Span {
  std::size_t start;
  std::size_t length;
};

struct DenoiseSample {
  std::vector<TokenId> source;
  std::vector<TokenId> target;
  std::vector<Span> spans;  // in sampling order, realized lengths
};

/// Applies a fixed selection: SpanDrop removes the selected tokens, SpanMask replaces each
/// maximal run of selected tokens with one MASK.
inline std::vector<TokenId> apply_selection(const std::vector<TokenId>& seq, const std::vector<bool>& selected, NoiseMode mode) {
  if (selected.size() != seq.size()) throw DimensionError("apply_selection: mask length differs from sequence length");
  if (mode == NoiseMode::MlmMask) throw Error("apply_selection needs a span mode");
  std::vector<TokenId> out;
  for (std::size_t i = 0; i < seq.size(); ++i) {
    if (!selected[i]) {
      out.push_back(seq[i]);
    } else if (mode == NoiseMode::SpanMask && (i == 0 || !selected[i - 1])) {
      out.push_back(special::MASK);
    }
  }
  return out;
}

/// Span corruption. Spans of length ~ Poisson(lambda) (zero draws resampled) start at
/// uniformly chosen unselected ordinary tokens and stop early at specials, at already
/// selected tokens and at the sequence end. Sampling stops once the selection reaches
/// ratio * (number of ordinary tokens).
inline DenoiseSample denoise_corrupt(const std::vector<TokenId>& seq, const NoiseConfig& nc, std::uint64_t seed) {
  nc.validate();
  if (nc.mode == NoiseMode::MlmMask) throw Error("denoise_corrupt needs span_drop or span_mask");
  if (seq.empty()) throw Error("denoise_corrupt: empty sequence");
  std::vector<std::size_t> eligible;
  for (std::size_t i = 0; i < seq.size(); ++i) {
    if (!is_special(seq[i])) eligible.push_back(i);
  }
  DenoiseSample out;
  out.target = seq;
  std::vector<bool> selected(seq.size(), false);
  const double quota = nc.corruption_ratio * static_cast<double>(eligible.size());
  std::size_t count = 0;
  if (!eligible.empty() && quota > 0.0) {
    Rng rng(seed);
    std::poisson_distribution<int> span_len(nc.span_lambda);
    std::uniform_int_distribution<std::size_t> pick(0, eligible.size() - 1);
    while (static_cast<double>(count) < quota && count < eligible.size()) {
      int len = 0;
      while (len == 0) len = span_len(rng);
      std::size_t start;
      do {
        start = eligible[pick(rng)];
      } while (selected[start]);
      std::size_t n = 0;
      for (std::size_t i = start; i < seq.size() && n < static_cast<std::size_t>(len); ++i, ++n) {
        if (is_special(seq[i]) || selected[i]) break;
        selected[i] = true;
      }
      count += n;
      out.spans.push_back({start, n});
    }
  }
  out.source = apply_selection(seq, selected, nc.mode);
  return out;
}

}  // namespace twostage::data
