// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <limits>
#include <vector>

#include "twostage/data/batch.hpp"
#include "twostage/model/transformer.hpp"

namespace twostage::evalft {

using data::TokenId;

struct GenConfig {
  std::size_t beam_size = 3;
  std::size_t max_len = 64;  // generated tokens, EOS included

  void validate() const {
    if (beam_size == 0) throw Error("beam_size must be at least 1");
    if (max_len == 0) throw Error("max_len must be at least 1");
  }
};

struct Hypothesis {
  std::vector<TokenId> tokens;  // without the closing EOS
  double score = 0.0;           // total log-probability
  bool ended = false;           // closed by EOS rather than by max_len

  friend bool operator==(const Hypothesis&, const Hypothesis&) = default;
};

/// Log-probabilities over the vocabulary for the token after `prefix`.
using NextLogProbs = std::function<std::vector<double>(const std::vector<TokenId>& prefix)>;

namespace detail {

// Higher score first, then the lexicographically smaller sequence.
inline bool better(const Hypothesis& a, const Hypothesis& b) {
  if (a.score != b.score) return a.score > b.score;
  return a.tokens < b.tokens;
}

}  // namespace detail

/// Beam search ranked by summed log-probability, no length normalization. Each step
/// keeps the best beam_size extensions; extensions ending in EOS leave the beam as
/// finished hypotheses. Search stops once the best finished hypothesis strictly beats
/// every open beam, since scores never increase. With beam_size >= V^max_len nothing
/// is pruned and the result is the exact argmax.
inline Hypothesis beam_search(const NextLogProbs& next, const GenConfig& gc, TokenId eos = data::special::EOS) {
  gc.validate();
  std::vector<Hypothesis> open{Hypothesis{}};
  std::vector<Hypothesis> finished;
  for (std::size_t t = 0; t < gc.max_len && !open.empty(); ++t) {
    std::vector<Hypothesis> cand;
    for (const auto& h : open) {
      const auto lp = next(h.tokens);
      if (eos < 0 || static_cast<std::size_t>(eos) >= lp.size()) throw Error("beam_search: EOS id outside the vocabulary");
      for (std::size_t v = 0; v < lp.size(); ++v) {
        Hypothesis c{h.tokens, h.score + lp[v], false};
        c.tokens.push_back(static_cast<TokenId>(v));
        cand.push_back(std::move(c));
      }
    }
    const std::size_t keep = std::min(gc.beam_size, cand.size());
    std::partial_sort(cand.begin(), cand.begin() + static_cast<std::ptrdiff_t>(keep), cand.end(), detail::better);
    cand.resize(keep);
    open.clear();
    for (auto& c : cand) {
      if (c.tokens.back() == eos) {
        c.tokens.pop_back();
        c.ended = true;
        finished.push_back(std::move(c));
      } else {
        open.push_back(std::move(c));
      }
    }
    if (!finished.empty() && !open.empty()) {
      const auto best_done = std::min_element(finished.begin(), finished.end(), detail::better);
      const auto best_open = std::min_element(open.begin(), open.end(), detail::better);
      if (best_done->score > best_open->score) open.clear();
    }
  }
  for (auto& h : open) finished.push_back(std::move(h));
  return *std::min_element(finished.begin(), finished.end(), detail::better);
}

/// Next-token log-probabilities of a seq2seq model for one source sequence. The
/// encoder runs once; its states are reused as constants for every prefix.
template <typename T>
NextLogProbs model_next_logprobs(const model::ModelConfig& cfg, const model::ParameterStore<T>& ps,
                                 const std::vector<TokenId>& source) {
  if (!cfg.is_seq2seq()) throw Error("generation needs a model with a decoder");
  const auto src = data::pad_rows({data::frame(source)});
  std::vector<tensor::Tensor<T>> states;
  {
    tensor::Graph<T> g;
    for (const auto& s : model::encoder_forward(g, cfg, ps, src)) states.push_back(s.value());
  }
  return [&cfg, &ps, src, states = std::move(states)](const std::vector<TokenId>& prefix) {
    std::vector<TokenId> in{data::special::BOS};
    in.insert(in.end(), prefix.begin(), prefix.end());
    if (in.size() > cfg.max_positions) throw Error("generation exceeds the model's position table");
    tensor::Graph<T> g;
    std::vector<tensor::Var<T>> mem;
    for (const auto& s : states) mem.push_back(g.leaf(s, false));
    const auto logits = model::decoder_forward<T>(g, cfg, ps, data::pad_rows({in}), mem, src.valid).value();
    const std::size_t V = cfg.vocab_size;
    const T* row = logits.data() + (in.size() - 1) * V;
    const double mx = *std::max_element(row, row + V);
    double z = 0.0;
    for (std::size_t v = 0; v < V; ++v) z += std::exp(static_cast<double>(row[v]) - mx);
    const double lz = mx + std::log(z);
    std::vector<double> out(V);
    for (std::size_t v = 0; v < V; ++v) out[v] = static_cast<double>(row[v]) - lz;
    return out;
  };
}

template <typename T>
std::vector<TokenId> generate(const model::ModelConfig& cfg, const model::ParameterStore<T>& ps, const std::vector<TokenId>& source,
                              GenConfig gc) {
  gc.validate();
  if (cfg.max_positions < 2) throw Error("generation needs max_positions >= 2");
  gc.max_len = std::min(gc.max_len, cfg.max_positions - 1);  // BOS takes one position
  return beam_search(model_next_logprobs(cfg, ps, source), gc).tokens;
}

}  // namespace twostage::evalft
