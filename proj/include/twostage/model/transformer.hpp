// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cmath>
#include <cstdint>
#include <optional>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "twostage/model/config.hpp"
#include "twostage/model/params.hpp"
#include "twostage/model/token_batch.hpp"
#include "twostage/tensor/ops.hpp"
#include "twostage/tensor/rng.hpp"

namespace twostage::model {

using tensor::Graph;
using tensor::Var;

/// Parameter naming scheme. Everything under "enc." belongs to the encoder
/// (token and position embeddings included), everything under "dec." to the decoder.
namespace names {
inline const std::string kEncoderPrefix = "enc.";
inline const std::string kDecoderPrefix = "dec.";
inline const std::string kEncTok = "enc.embed.tok";
inline const std::string kEncPos = "enc.embed.pos";
inline const std::string kDecTok = "dec.embed.tok";
inline const std::string kDecPos = "dec.embed.pos";
inline const std::string kEncFinalLn = "enc.final_ln.";
inline const std::string kDecFinalLn = "dec.final_ln.";
inline const std::string kLmHead = "lm_head.";
inline const std::string kMlmHead = "mlm_head.";
inline std::string enc_layer(std::size_t i) { return "enc.layers." + std::to_string(i) + "."; }
inline std::string dec_layer(std::size_t i) { return "dec.layers." + std::to_string(i) + "."; }
inline std::string fusion(std::size_t i) { return "dec.fusion." + std::to_string(i); }
}  // namespace names

namespace init {

template <typename T>
Tensor<T> truncated_normal(Shape shape, Rng& rng, double stddev = 0.02) {
  std::normal_distribution<double> dist(0.0, stddev);
  Tensor<T> t(std::move(shape));
  for (auto& v : t.values()) {
    double x;
    do {
      x = dist(rng);
    } while (std::abs(x) > 2.0 * stddev);
    v = static_cast<T>(x);
  }
  return t;
}

template <typename T>
void add_linear(ParameterStore<T>& ps, const std::string& prefix, std::size_t out, std::size_t in, Rng& rng) {
  ps.add(prefix + "weight", truncated_normal<T>({out, in}, rng));
  ps.add(prefix + "bias", Tensor<T>({out}));
}

template <typename T>
void add_layer_norm(ParameterStore<T>& ps, const std::string& prefix, std::size_t d) {
  ps.add(prefix + "gain", Tensor<T>({d}, T{1}));
  ps.add(prefix + "bias", Tensor<T>({d}));
}

template <typename T>
void add_attention(ParameterStore<T>& ps, const std::string& prefix, std::size_t d, Rng& rng) {
  for (const char* p : {"q.", "k.", "v.", "o."}) add_linear(ps, prefix + p, d, d, rng);
}

template <typename T>
void add_ffn(ParameterStore<T>& ps, const std::string& prefix, std::size_t d, std::size_t f, Rng& rng) {
  add_linear(ps, prefix + "in.", f, d, rng);
  add_linear(ps, prefix + "out.", d, f, rng);
}

}  // namespace init

template <typename T>
void add_encoder_params(ParameterStore<T>& ps, const ModelConfig& cfg, Rng& rng) {
  const std::size_t d = cfg.d_model;
  ps.add(names::kEncTok, init::truncated_normal<T>({cfg.vocab_size, d}, rng));
  ps.add(names::kEncPos, init::truncated_normal<T>({cfg.max_positions, d}, rng));
  for (std::size_t i = 0; i < cfg.encoder_layers; ++i) {
    const std::string p = names::enc_layer(i);
    init::add_layer_norm(ps, p + "attn_ln.", d);
    init::add_attention(ps, p + "attn.", d, rng);
    init::add_layer_norm(ps, p + "ffn_ln.", d);
    init::add_ffn(ps, p + "ffn.", d, cfg.d_ffn, rng);
  }
  init::add_layer_norm(ps, names::kEncFinalLn, d);
}

/// Decoder stack. The decoder token embedding is tied to the encoder's.
template <typename T>
void add_decoder_params(ParameterStore<T>& ps, const ModelConfig& cfg, Rng& rng) {
  const std::size_t d = cfg.d_model;
  ps.tie(names::kEncTok, names::kDecTok);
  ps.add(names::kDecPos, init::truncated_normal<T>({cfg.max_positions, d}, rng));
  for (std::size_t i = 0; i < cfg.decoder_layers; ++i) {
    const std::string p = names::dec_layer(i);
    init::add_layer_norm(ps, p + "self_ln.", d);
    init::add_attention(ps, p + "self_attn.", d, rng);
    init::add_layer_norm(ps, p + "cross_ln.", d);
    init::add_attention(ps, p + "cross_attn.", d, rng);
    init::add_layer_norm(ps, p + "ffn_ln.", d);
    init::add_ffn(ps, p + "ffn.", d, cfg.d_ffn, rng);
  }
  init::add_layer_norm(ps, names::kDecFinalLn, d);
  if (cfg.cross_attention == CrossAttention::Fusion) {
    for (std::size_t i = 0; i < cfg.decoder_layers; ++i) {
      Tensor<T> logits({cfg.fusion_width()});
      logits[cfg.fusion_width() - 1] = static_cast<T>(cfg.fusion_init_logit);
      ps.add(names::fusion(i), std::move(logits));
    }
  }
  init::add_linear(ps, names::kLmHead, cfg.vocab_size, d, rng);
}

/// Fresh MLM encoder: encoder stack plus an output projection over the vocabulary.
template <typename T>
ParameterStore<T> init_encoder_model(const ModelConfig& cfg, std::uint64_t seed) {
  cfg.validate();
  Rng rng(seed);
  ParameterStore<T> ps;
  add_encoder_params(ps, cfg, rng);
  init::add_linear(ps, names::kMlmHead, cfg.vocab_size, cfg.d_model, rng);
  return ps;
}

template <typename T>
ParameterStore<T> init_seq2seq_model(const ModelConfig& cfg, std::uint64_t seed) {
  cfg.validate();
  if (!cfg.is_seq2seq()) throw Error("init_seq2seq_model requires decoder_layers >= 1");
  Rng rng(seed);
  ParameterStore<T> ps;
  add_encoder_params(ps, cfg, rng);
  add_decoder_params(ps, cfg, rng);
  return ps;
}

namespace detail {

template <typename T>
Var<T> ln(Graph<T>& g, const ParameterStore<T>& ps, const std::string& prefix, Var<T> x, const ModelConfig& cfg) {
  return tensor::layer_norm(x, param(g, ps, prefix + "gain"), param(g, ps, prefix + "bias"), static_cast<T>(cfg.ln_eps));
}

template <typename T>
Var<T> dense(Graph<T>& g, const ParameterStore<T>& ps, const std::string& prefix, Var<T> x) {
  return tensor::linear(x, param(g, ps, prefix + "weight"), param(g, ps, prefix + "bias"));
}

template <typename T>
Var<T> attend(Graph<T>& g, const ParameterStore<T>& ps, const std::string& prefix, Var<T> query_in, Var<T> kv_in,
              const tensor::AttentionShape& as, std::span<const std::uint8_t> key_valid) {
  Var<T> q = dense(g, ps, prefix + "q.", query_in);
  Var<T> k = dense(g, ps, prefix + "k.", kv_in);
  Var<T> v = dense(g, ps, prefix + "v.", kv_in);
  return dense(g, ps, prefix + "o.", tensor::attention(q, k, v, as, key_valid));
}

template <typename T>
Var<T> ffn(Graph<T>& g, const ParameterStore<T>& ps, const std::string& prefix, Var<T> x) {
  return dense(g, ps, prefix + "out.", tensor::gelu(dense(g, ps, prefix + "in.", x)));
}

template <typename T>
Var<T> embed(Graph<T>& g, const ParameterStore<T>& ps, const std::string& tok, const std::string& pos,
             const TokenBatch& tb, const ModelConfig& cfg) {
  if (tb.length > cfg.max_positions) {
    throw Error("sequence length " + std::to_string(tb.length) + " exceeds max_positions " +
                std::to_string(cfg.max_positions));
  }
  std::vector<std::int32_t> positions(tb.batch * tb.length);
  for (std::size_t b = 0; b < tb.batch; ++b)
    for (std::size_t t = 0; t < tb.length; ++t) positions[b * tb.length + t] = static_cast<std::int32_t>(t);
  Var<T> x = tensor::add(tensor::embedding(param(g, ps, tok), tb.ids, {tb.batch, tb.length}),
                         tensor::embedding(param(g, ps, pos), positions, {tb.batch, tb.length}));
  return tensor::dropout(x, static_cast<T>(cfg.dropout));
}

}  // namespace detail

/// PreLayerNorm encoder. Returns encoder_layers + 1 states of shape [B,T,d]:
/// states[0] is the embedding output, states[i] the output of layer i (before the final norm).
template <typename T>
std::vector<Var<T>> encoder_forward(Graph<T>& g, const ModelConfig& cfg, const ParameterStore<T>& ps,
                                    const TokenBatch& src) {
  src.validate();
  const T p = static_cast<T>(cfg.dropout);
  std::vector<Var<T>> states;
  states.reserve(cfg.encoder_layers + 1);
  Var<T> x = detail::embed(g, ps, names::kEncTok, names::kEncPos, src, cfg);
  states.push_back(x);
  const tensor::AttentionShape as{src.batch, src.length, src.length, cfg.heads, false};
  for (std::size_t i = 0; i < cfg.encoder_layers; ++i) {
    const std::string pre = names::enc_layer(i);
    Var<T> h = detail::ln(g, ps, pre + "attn_ln.", x, cfg);
    x = tensor::add(x, tensor::dropout(detail::attend(g, ps, pre + "attn.", h, h, as, src.valid), p));
    h = detail::ln(g, ps, pre + "ffn_ln.", x, cfg);
    x = tensor::add(x, tensor::dropout(detail::ffn(g, ps, pre + "ffn.", h), p));
    states.push_back(x);
  }
  return states;
}

/// Final encoder state after the closing layer norm; what every encoder head reads.
template <typename T>
Var<T> encoder_output(Graph<T>& g, const ModelConfig& cfg, const ParameterStore<T>& ps,
                      std::span<const Var<T>> states) {
  if (states.empty()) throw Error("encoder_output: no encoder states");
  return detail::ln(g, ps, names::kEncFinalLn, states.back(), cfg);
}

/// Softmax-weighted combination of encoder states for one decoder layer.
template <typename T>
Var<T> fuse_memory(std::span<const Var<T>> states, Var<T> fusion_logits, const ModelConfig& cfg) {
  if (states.size() != cfg.encoder_layers + 1) {
    throw DimensionError("fuse_memory expects " + std::to_string(cfg.encoder_layers + 1) + " encoder states, got " +
                         std::to_string(states.size()));
  }
  auto used = cfg.fusion_include_embedding ? states : states.subspan(1);
  return tensor::weighted_sum(used, fusion_logits);
}

/// Cross-attention memory for decoder layer `layer`: the normed final state, or the
/// normed fusion of all states.
template <typename T>
Var<T> decoder_memory(Graph<T>& g, const ModelConfig& cfg, const ParameterStore<T>& ps,
                      std::span<const Var<T>> states, std::size_t layer) {
  if (cfg.cross_attention == CrossAttention::Standard) return encoder_output(g, cfg, ps, states);
  Var<T> fused = fuse_memory<T>(states, param(g, ps, names::fusion(layer)), cfg);
  return detail::ln(g, ps, names::kEncFinalLn, fused, cfg);
}

/// Causal PreLayerNorm decoder; returns logits [B,S,vocab].
template <typename T>
Var<T> decoder_forward(Graph<T>& g, const ModelConfig& cfg, const ParameterStore<T>& ps, const TokenBatch& target_in,
                       std::span<const Var<T>> memory_states, std::span<const std::uint8_t> source_valid) {
  if (!cfg.is_seq2seq()) throw Error("decoder_forward on a model without decoder layers");
  if (memory_states.empty()) throw Error("decoder_forward: missing encoder memory");
  target_in.validate();
  const std::size_t B = target_in.batch, S = target_in.length;
  const std::size_t Tsrc = memory_states.front().shape().size() >= 2 ? memory_states.front().shape()[1] : 0;
  if (memory_states.front().shape().empty() || memory_states.front().shape()[0] != B) {
    throw DimensionError("decoder batch " + std::to_string(B) + " does not match memory " +
                         shape_str(memory_states.front().shape()));
  }
  const T p = static_cast<T>(cfg.dropout);
  Var<T> y = detail::embed(g, ps, names::kDecTok, names::kDecPos, target_in, cfg);
  const tensor::AttentionShape self_as{B, S, S, cfg.heads, true};
  const tensor::AttentionShape cross_as{B, S, Tsrc, cfg.heads, false};
  std::optional<Var<T>> shared_memory;
  if (cfg.cross_attention == CrossAttention::Standard) shared_memory = encoder_output(g, cfg, ps, memory_states);
  for (std::size_t i = 0; i < cfg.decoder_layers; ++i) {
    const std::string pre = names::dec_layer(i);
    Var<T> mem = shared_memory ? *shared_memory : decoder_memory(g, cfg, ps, memory_states, i);
    Var<T> h = detail::ln(g, ps, pre + "self_ln.", y, cfg);
    y = tensor::add(y, tensor::dropout(detail::attend(g, ps, pre + "self_attn.", h, h, self_as, target_in.valid), p));
    h = detail::ln(g, ps, pre + "cross_ln.", y, cfg);
    y = tensor::add(y, tensor::dropout(detail::attend(g, ps, pre + "cross_attn.", h, mem, cross_as, source_valid), p));
    h = detail::ln(g, ps, pre + "ffn_ln.", y, cfg);
    y = tensor::add(y, tensor::dropout(detail::ffn(g, ps, pre + "ffn.", h), p));
  }
  Var<T> out = detail::ln(g, ps, names::kDecFinalLn, y, cfg);
  return detail::dense(g, ps, names::kLmHead, out);
}

/// MLM logits [B,T,vocab] from encoder states.
template <typename T>
Var<T> mlm_logits(Graph<T>& g, const ModelConfig& cfg, const ParameterStore<T>& ps, std::span<const Var<T>> states) {
  return detail::dense(g, ps, names::kMlmHead, encoder_output(g, cfg, ps, states));
}

}  // namespace twostage::model
