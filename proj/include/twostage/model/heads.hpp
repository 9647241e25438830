// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "twostage/model/transformer.hpp"

namespace twostage::model {

enum class HeadKind { MLM, LM, Classification, Labeling };
enum class Attachment { FirstToken, FirstSubword, AllPositions };

inline const char* to_string(HeadKind k) {
  switch (k) {
    case HeadKind::MLM: return "mlm";
    case HeadKind::LM: return "lm";
    case HeadKind::Classification: return "classification";
    case HeadKind::Labeling: return "labeling";
  }
  return "?";
}

inline HeadKind head_kind_from_string(const std::string& s) {
  if (s == "mlm") return HeadKind::MLM;
  if (s == "lm") return HeadKind::LM;
  if (s == "classification") return HeadKind::Classification;
  if (s == "labeling") return HeadKind::Labeling;
  throw Error("unknown head kind '" + s + "'");
}

inline Attachment attachment_of(HeadKind k) {
  switch (k) {
    case HeadKind::Classification: return Attachment::FirstToken;
    case HeadKind::Labeling: return Attachment::FirstSubword;
    default: return Attachment::AllPositions;
  }
}

/// Task head: GELU hidden layers, then a projection to label_count outputs.
struct HeadSpec {
  HeadKind kind = HeadKind::Classification;
  std::string name = "task";
  std::vector<std::size_t> hidden{512};
  std::size_t label_count = 2;

  std::string prefix() const { return "head." + name + "."; }
  friend bool operator==(const HeadSpec&, const HeadSpec&) = default;
};

template <typename T>
void attach_head(ParameterStore<T>& ps, const ModelConfig& cfg, const HeadSpec& spec, std::uint64_t seed) {
  if (spec.kind != HeadKind::Classification && spec.kind != HeadKind::Labeling) {
    throw Error(std::string("attach_head supports classification and labeling heads, not ") + to_string(spec.kind));
  }
  if (spec.label_count == 0) throw Error("head needs at least one label");
  Rng rng(seed);
  std::size_t in = cfg.d_model;
  for (std::size_t i = 0; i < spec.hidden.size(); ++i) {
    init::add_linear(ps, spec.prefix() + "hidden." + std::to_string(i) + ".", spec.hidden[i], in, rng);
    in = spec.hidden[i];
  }
  init::add_linear(ps, spec.prefix() + "out.", spec.label_count, in, rng);
}

/// Positions a head reads, as flat row indices into [B,T]. Labeling heads need the
/// first-subword index of every word of every sequence.
inline std::vector<std::size_t> head_rows(const HeadSpec& spec, std::size_t batch, std::size_t length,
                                          const std::vector<std::vector<std::size_t>>* word_starts) {
  std::vector<std::size_t> rows;
  if (spec.kind == HeadKind::Classification) {
    for (std::size_t b = 0; b < batch; ++b) rows.push_back(b * length);
    return rows;
  }
  if (spec.kind != HeadKind::Labeling) throw Error("head_rows: unsupported head kind");
  if (!word_starts) throw Error("labeling head requires a word-boundary map");
  if (word_starts->size() != batch) throw DimensionError("word-boundary map covers " + std::to_string(word_starts->size()) +
                                                         " sequences, batch has " + std::to_string(batch));
  for (std::size_t b = 0; b < batch; ++b) {
    for (std::size_t s : (*word_starts)[b]) {
      if (s >= length) throw DimensionError("word start " + std::to_string(s) + " beyond sequence length " + std::to_string(length));
      rows.push_back(b * length + s);
    }
  }
  return rows;
}

/// Applies the head MLP to already-selected states [n,d].
template <typename T>
Var<T> head_apply(Graph<T>& g, const ModelConfig& cfg, const ParameterStore<T>& ps, const HeadSpec& spec, Var<T> selected) {
  Var<T> x = selected;
  for (std::size_t i = 0; i < spec.hidden.size(); ++i) {
    x = tensor::gelu(detail::dense(g, ps, spec.prefix() + "hidden." + std::to_string(i) + ".", x));
    x = tensor::dropout(x, static_cast<T>(cfg.dropout));
  }
  return detail::dense(g, ps, spec.prefix() + "out.", x);
}

/// Task logits [n, label_count] from the normed encoder output [B,T,d].
template <typename T>
Var<T> head_forward(Graph<T>& g, const ModelConfig& cfg, const ParameterStore<T>& ps, const HeadSpec& spec,
                    Var<T> encoder_final, const std::vector<std::vector<std::size_t>>* word_starts = nullptr) {
  const Shape& sh = encoder_final.shape();
  if (sh.size() != 3) throw DimensionError("head_forward expects [B,T,d], got " + shape_str(sh));
  auto rows = head_rows(spec, sh[0], sh[1], word_starts);
  return head_apply(g, cfg, ps, spec, tensor::select_rows(encoder_final, rows));
}

}  // namespace twostage::model
