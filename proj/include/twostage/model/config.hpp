// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>
#include <string>

#include "twostage/tensor/tensor.hpp"

namespace twostage::model {

enum class CrossAttention { Standard, Fusion };

inline const char* to_string(CrossAttention c) { return c == CrossAttention::Standard ? "standard" : "fusion"; }

inline CrossAttention cross_attention_from_string(const std::string& s) {
  if (s == "standard") return CrossAttention::Standard;
  if (s == "fusion") return CrossAttention::Fusion;
  throw Error("unknown cross_attention '" + s + "' (expected standard|fusion)");
}

struct ModelConfig {
  std::size_t encoder_layers = 2;
  std::size_t decoder_layers = 0;
  std::size_t d_model = 64;
  std::size_t d_ffn = 256;
  std::size_t heads = 4;
  std::size_t vocab_size = 256;
  std::size_t max_positions = 128;
  CrossAttention cross_attention = CrossAttention::Standard;
  /// Fusion mixes the embedding-layer state too (L+1 states) when set.
  bool fusion_include_embedding = true;
  /// Initial logit of the final encoder state in each fusion vector; others start at 0.
  double fusion_init_logit = 6.0;
  double dropout = 0.1;
  double ln_eps = 1e-5;

  bool is_seq2seq() const noexcept { return decoder_layers > 0; }

  std::size_t fusion_width() const noexcept { return encoder_layers + (fusion_include_embedding ? 1 : 0); }

  void validate() const {
    if (heads == 0 || d_model == 0 || d_model % heads != 0) {
      throw Error("d_model (" + std::to_string(d_model) + ") must be a positive multiple of heads (" +
                  std::to_string(heads) + ")");
    }
    if (encoder_layers == 0) throw Error("encoder_layers must be >= 1");
    if (cross_attention == CrossAttention::Fusion && decoder_layers == 0) {
      throw Error("fusion cross-attention requires decoder_layers >= 1");
    }
    if (vocab_size == 0 || max_positions == 0 || d_ffn == 0) throw Error("vocab_size, max_positions and d_ffn must be positive");
    if (dropout < 0.0 || dropout >= 1.0) throw Error("dropout must lie in [0,1)");
    if (!(ln_eps > 0.0)) throw Error("ln_eps must be positive");
  }

  friend bool operator==(const ModelConfig&, const ModelConfig&) = default;
};

/// Encoder-only view of a seq2seq config.
inline ModelConfig encoder_only(ModelConfig cfg) {
  cfg.decoder_layers = 0;
  cfg.cross_attention = CrossAttention::Standard;
  return cfg;
}

}  // namespace twostage::model
