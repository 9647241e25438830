// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <string>
#include <utility>

#include "twostage/model/transformer.hpp"

namespace twostage::model {

/// Seq2seq store whose encoder is copied bit-exactly from `donor`. The decoder is fresh
/// from `seed`, the decoder token embedding shares storage with the encoder's, and the
/// LM head starts as a separate copy of the embedding table with a zero bias.
template <typename T>
ParameterStore<T> warm_start_seq2seq(const ParameterStore<T>& donor, const ModelConfig& cfg, std::uint64_t seed) {
  ParameterStore<T> out = init_seq2seq_model<T>(cfg, seed);
  std::string offending;
  for (const auto& name : out.names_with_prefix(names::kEncoderPrefix)) {
    if (!donor.contains(name)) {
      offending += " " + name + " (missing)";
    } else if (donor.get(name).shape() != out.get(name).shape()) {
      offending += " " + name + " (" + shape_str(donor.get(name).shape()) + " vs " + shape_str(out.get(name).shape()) + ")";
    }
  }
  for (const auto& name : donor.names_with_prefix(names::kEncoderPrefix)) {
    if (!out.contains(name)) offending += " " + name + " (not in config)";
  }
  if (!offending.empty()) throw DimensionError("donor encoder does not match config:" + offending);
  for (const auto& name : out.names_with_prefix(names::kEncoderPrefix)) out.get_mutable(name) = donor.get(name);
  out.get_mutable(names::kLmHead + "weight") = donor.get(names::kEncTok);
  out.get_mutable(names::kLmHead + "bias").fill(T{0});
  out.set_all_trainable(true);
  return out;
}

/// Encoder-only store taken from a seq2seq model, with an MLM head initialized from
/// the input embedding table and stored independently of it.
template <typename T>
std::pair<ModelConfig, ParameterStore<T>> extract_encoder(const ParameterStore<T>& seq2seq, const ModelConfig& cfg) {
  if (cfg.encoder_layers == 0) throw Error("extract_encoder: model has no encoder layers");
  ModelConfig enc_cfg = encoder_only(cfg);
  ParameterStore<T> out;
  for (const auto& name : seq2seq.names_with_prefix(names::kEncoderPrefix)) out.add(name, seq2seq.get(name));
  const auto& emb = out.get(names::kEncTok);
  if (emb.rank() != 2 || emb.dim(0) != cfg.vocab_size || emb.dim(1) != cfg.d_model) {
    throw DimensionError("extract_encoder: embedding table " + shape_str(emb.shape()) + " does not match config");
  }
  out.add(names::kMlmHead + "weight", emb);
  out.add(names::kMlmHead + "bias", Tensor<T>({cfg.vocab_size}));
  return {enc_cfg, std::move(out)};
}

}  // namespace twostage::model
