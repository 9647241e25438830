// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <set>
#include <string>
#include <vector>

#include "twostage/model/params.hpp"
#include "twostage/model/transformer.hpp"

namespace twostage::train {

/// Named groups of parameters a stage can freeze.
enum class FreezeTag { Encoder, DecoderEmbedding, Decoder, Fusion, LmHead, MlmHead, Embeddings, Head };

inline const char* to_string(FreezeTag t) {
  switch (t) {
    case FreezeTag::Encoder: return "encoder";
    case FreezeTag::DecoderEmbedding: return "decoder_embedding";
    case FreezeTag::Decoder: return "decoder";
    case FreezeTag::Fusion: return "fusion";
    case FreezeTag::LmHead: return "lm_head";
    case FreezeTag::MlmHead: return "mlm_head";
    case FreezeTag::Embeddings: return "embeddings";
    case FreezeTag::Head: return "head";
  }
  return "?";
}

inline FreezeTag freeze_tag_from_string(const std::string& s) {
  for (auto t : {FreezeTag::Encoder, FreezeTag::DecoderEmbedding, FreezeTag::Decoder, FreezeTag::Fusion, FreezeTag::LmHead,
                 FreezeTag::MlmHead, FreezeTag::Embeddings, FreezeTag::Head}) {
    if (s == to_string(t)) return t;
  }
  throw Error("unknown freeze tag '" + s +
              "' (expected encoder|decoder_embedding|decoder|fusion|lm_head|mlm_head|embeddings|head)");
}

inline bool starts_with(const std::string& s, const std::string& prefix) { return s.rfind(prefix, 0) == 0; }

inline bool tag_matches(FreezeTag t, const std::string& name) {
  namespace n = model::names;
  switch (t) {
    case FreezeTag::Encoder: return starts_with(name, n::kEncoderPrefix);
    case FreezeTag::DecoderEmbedding: return name == n::kDecTok || name == n::kDecPos;
    case FreezeTag::Decoder: return starts_with(name, n::kDecoderPrefix);
    case FreezeTag::Fusion: return starts_with(name, "dec.fusion.");
    case FreezeTag::LmHead: return starts_with(name, n::kLmHead);
    case FreezeTag::MlmHead: return starts_with(name, n::kMlmHead);
    case FreezeTag::Embeddings:
      return name == n::kEncTok || name == n::kEncPos || name == n::kDecTok || name == n::kDecPos;
    case FreezeTag::Head: return starts_with(name, "head.");
  }
  return false;
}

/// Sets trainability exactly per `frozen`: matched names and everything tied to them are
/// frozen, the rest is trainable. A tag that matches nothing is an error.
template <typename T>
void apply_freeze_plan(model::ParameterStore<T>& ps, const std::set<FreezeTag>& frozen) {
  ps.set_all_trainable(true);
  const auto names = ps.names();
  for (FreezeTag t : frozen) {
    std::size_t hits = 0;
    for (const auto& name : names) {
      if (!tag_matches(t, name)) continue;
      ps.set_trainable(name, false);
      ++hits;
    }
    if (hits == 0) throw Error(std::string("freeze tag '") + to_string(t) + "' matches no parameter of this model");
  }
}

}  // namespace twostage::train
