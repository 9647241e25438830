// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <algorithm>
#include <numeric>
#include <random>
#include <string>
#include <vector>

#include "twostage/data/corpus.hpp"
#include "twostage/tensor/rng.hpp"

namespace twostage::data {

/// Seeded word process: each language has its own word list and successor permutation.
/// The next word follows the permutation with probability `follow_p`, otherwise it is
/// uniform. `process_seed` fixes the languages; `seed` only picks documents, so two
/// corpora with the same process_seed and different seeds are train/held-out splits of
/// one distribution.
struct SyntheticSpec {
  std::vector<std::string> languages{"xx"};
  std::size_t docs_per_language = 64;
  std::size_t words_per_language = 100;
  std::size_t min_doc_words = 8;
  std::size_t max_doc_words = 40;
  double follow_p = 0.9;
  std::uint64_t process_seed = 1;
  std::uint64_t seed = 1;

  void validate() const {
    if (languages.empty()) throw Error("synthetic corpus needs at least one language");
    if (words_per_language < 2) throw Error("synthetic corpus needs at least two words per language");
    if (min_doc_words == 0 || min_doc_words > max_doc_words) throw Error("synthetic document length range is empty");
    if (follow_p < 0.0 || follow_p > 1.0) throw Error("follow_p must lie in [0,1]");
  }
};

inline std::string synthetic_word(const std::string& lang, std::size_t i) { return lang + "_" + std::to_string(i); }

inline std::vector<CorpusRecord> synthetic_corpus(const SyntheticSpec& spec) {
  spec.validate();
  std::vector<CorpusRecord> out;
  for (std::size_t l = 0; l < spec.languages.size(); ++l) {
    const auto& lang = spec.languages[l];
    Rng proc(mix_seed(spec.process_seed, l));
    std::vector<std::size_t> next(spec.words_per_language);
    std::iota(next.begin(), next.end(), 0);
    std::shuffle(next.begin(), next.end(), proc);

    Rng rng(mix_seed(spec.seed, 1000 + l));
    std::uniform_int_distribution<std::size_t> len(spec.min_doc_words, spec.max_doc_words);
    std::uniform_int_distribution<std::size_t> word(0, spec.words_per_language - 1);
    for (std::size_t d = 0; d < spec.docs_per_language; ++d) {
      const std::size_t n = len(rng);
      std::size_t w = word(rng);
      std::string text;
      for (std::size_t i = 0; i < n; ++i) {
        if (i) text += ' ';
        text += synthetic_word(lang, w);
        w = uniform01(rng) < spec.follow_p ? next[w] : word(rng);
      }
      out.push_back({std::move(text), lang});
    }
  }
  return out;
}

}  // namespace twostage::data
