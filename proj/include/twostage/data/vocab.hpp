// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <algorithm>
#include <cstdint>
#include <cstdio>
#include <map>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "twostage/tensor/hash.hpp"
#include "twostage/tensor/tensor.hpp"

namespace twostage::data {

using TokenId = std::int32_t;

namespace special {
inline constexpr TokenId PAD = 0;
inline constexpr TokenId BOS = 1;
inline constexpr TokenId EOS = 2;
inline constexpr TokenId MASK = 3;
inline constexpr TokenId DOC = 4;
inline constexpr TokenId UNK = 5;
inline constexpr TokenId kCount = 6;
inline constexpr std::string_view kNames[kCount] = {"[PAD]", "[BOS]", "[EOS]", "[MASK]", "[DOC]", "[UNK]"};
}  // namespace special

inline bool is_special(TokenId id) noexcept { return id >= 0 && id < special::kCount; }

/// Splits on any ASCII whitespace; no empty tokens.
inline std::vector<std::string> split_whitespace(std::string_view text) {
  std::vector<std::string> out;
  std::size_t i = 0;
  const auto ws = [](char c) { return c == ' ' || c == '\t' || c == '\n' || c == '\r' || c == '\f' || c == '\v'; };
  while (i < text.size()) {
    while (i < text.size() && ws(text[i])) ++i;
    const std::size_t start = i;
    while (i < text.size() && !ws(text[i])) ++i;
    if (i > start) out.emplace_back(text.substr(start, i - start));
  }
  return out;
}

/// Encoded text: ids plus the first-subword index of every whitespace word.
struct Encoded {
  std::vector<TokenId> ids;
  std::vector<std::size_t> word_starts;
};

/// Word-level vocabulary. With byte fallback, out-of-vocabulary words are spelled as
/// byte tokens instead of collapsing to UNK.
class Vocab {
 public:
  Vocab() = default;

  Vocab(std::vector<std::string> words, bool byte_fallback) : byte_fallback_(byte_fallback) {
    for (auto name : special::kNames) push(std::string(name));
    if (byte_fallback_) {
      for (int b = 0; b < 256; ++b) push(byte_token(static_cast<unsigned char>(b)));
    }
    for (auto& w : words) {
      if (index_.count(w)) throw Error("duplicate vocabulary entry '" + w + "'");
      push(std::move(w));
    }
  }

  std::size_t size() const noexcept { return tokens_.size(); }
  bool byte_fallback() const noexcept { return byte_fallback_; }
  const std::vector<std::string>& tokens() const noexcept { return tokens_; }

  const std::string& token(TokenId id) const {
    if (id < 0 || static_cast<std::size_t>(id) >= tokens_.size()) throw Error("token id " + std::to_string(id) + " out of range");
    return tokens_[static_cast<std::size_t>(id)];
  }

  bool contains(const std::string& w) const { return index_.count(w) != 0; }

  TokenId id(const std::string& w) const {
    auto it = index_.find(w);
    return it == index_.end() ? special::UNK : it->second;
  }

  /// Subword ids of one word (a single id unless byte fallback spells it out).
  std::vector<TokenId> encode_word(const std::string& w) const {
    auto it = index_.find(w);
    if (it != index_.end()) return {it->second};
    if (!byte_fallback_) return {special::UNK};
    std::vector<TokenId> out;
    for (unsigned char c : w) out.push_back(special::kCount + c);
    return out;
  }

  Encoded encode_words(const std::vector<std::string>& words) const {
    Encoded e;
    for (const auto& w : words) {
      e.word_starts.push_back(e.ids.size());
      auto sub = encode_word(w);
      e.ids.insert(e.ids.end(), sub.begin(), sub.end());
    }
    return e;
  }

  Encoded encode(std::string_view text) const { return encode_words(split_whitespace(text)); }

  /// Joins word tokens with spaces; consecutive byte tokens are glued into one word.
  std::string decode(const std::vector<TokenId>& ids, bool keep_specials = false) const {
    std::string out;
    bool in_bytes = false;
    for (TokenId id : ids) {
      if (is_special(id) && !keep_specials) {
        in_bytes = false;
        continue;
      }
      const bool byte = byte_fallback_ && id >= special::kCount && id < special::kCount + 256;
      if (byte) {
        if (!in_bytes && !out.empty()) out += ' ';
        out += static_cast<char>(id - special::kCount);
        in_bytes = true;
        continue;
      }
      in_bytes = false;
      if (!out.empty()) out += ' ';
      out += token(id);
    }
    return out;
  }

  std::uint64_t hash() const {
    std::uint64_t h = fnv1a(byte_fallback_ ? "bytes:1" : "bytes:0");
    for (const auto& t : tokens_) {
      h = fnv1a(t, h);
      h = fnv1a(std::string_view("\0", 1), h);
    }
    return h;
  }

  /// Plain word entries (no specials, no byte tokens), in id order.
  std::vector<std::string> words() const {
    const std::size_t first = special::kCount + (byte_fallback_ ? 256 : 0);
    return {tokens_.begin() + static_cast<std::ptrdiff_t>(first), tokens_.end()};
  }

  friend bool operator==(const Vocab& a, const Vocab& b) {
    return a.byte_fallback_ == b.byte_fallback_ && a.tokens_ == b.tokens_;
  }

 private:
  static std::string byte_token(unsigned char b) {
    char buf[8];
    std::snprintf(buf, sizeof buf, "<0x%02X>", b);
    return buf;
  }

  void push(std::string t) {
    index_.emplace(t, static_cast<TokenId>(tokens_.size()));
    tokens_.push_back(std::move(t));
  }

  std::vector<std::string> tokens_;
  std::unordered_map<std::string, TokenId> index_;
  bool byte_fallback_ = false;
};

/// Specials first (and byte tokens when requested), then words by frequency
/// descending with lexicographic tie-break, until `budget` entries.
inline Vocab build_vocab(const std::vector<std::string>& texts, std::size_t budget, bool byte_fallback = false) {
  const std::size_t reserved = special::kCount + (byte_fallback ? 256 : 0);
  if (budget < reserved) {
    throw Error("vocabulary budget " + std::to_string(budget) + " is smaller than the " + std::to_string(reserved) +
                " reserved entries");
  }
  std::map<std::string, std::size_t> counts;
  bool any = false;
  for (const auto& t : texts) {
    for (auto& w : split_whitespace(t)) {
      ++counts[w];
      any = true;
    }
  }
  if (!any) throw Error("build_vocab: corpus has no tokens");
  std::vector<std::pair<std::string, std::size_t>> ranked(counts.begin(), counts.end());
  std::stable_sort(ranked.begin(), ranked.end(), [](const auto& a, const auto& b) { return a.second > b.second; });
  std::vector<std::string> words;
  for (auto& [w, c] : ranked) {
    if (words.size() + reserved >= budget) break;
    if (std::find(std::begin(special::kNames), std::end(special::kNames), w) != std::end(special::kNames)) continue;
    if (byte_fallback && w.size() == 6 && w.rfind("<0x", 0) == 0 && w[5] == '>') continue;
    words.push_back(w);
  }
  return Vocab(std::move(words), byte_fallback);
}

}  // namespace twostage::data
