// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "json.hpp"
#include "twostage/tensor/tensor.hpp"

namespace twostage {

using Json = nlohmann::json;
using OrderedJson = nlohmann::ordered_json;

/// Invalid user configuration; the message names the offending field or line.
class ConfigError : public Error {
 public:
  using Error::Error;
};

/// Parses a JSON file, reporting syntax errors with line and column.
inline Json load_json_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ConfigError("cannot open '" + path + "'");
  std::stringstream ss;
  ss << in.rdbuf();
  const std::string text = ss.str();
  try {
    return Json::parse(text);
  } catch (const Json::parse_error& e) {
    std::size_t line = 1, col = 1;
    for (std::size_t i = 0; i + 1 < e.byte && i < text.size(); ++i) {
      if (text[i] == '\n') {
        ++line;
        col = 1;
      } else {
        ++col;
      }
    }
    throw ConfigError(path + ":" + std::to_string(line) + ":" + std::to_string(col) + ": JSON syntax error");
  }
}

/// Field access with path-qualified diagnostics.
class JsonIn {
 public:
  JsonIn(const Json& j, std::string path) : j_(&j), path_(std::move(path)) {
    if (!j_->is_object()) throw ConfigError(where() + "expected an object");
  }

  const std::string& path() const noexcept { return path_; }
  const Json& raw() const noexcept { return *j_; }
  bool has(const std::string& key) const { return j_->contains(key) && !(*j_)[key].is_null(); }

  std::string field_path(const std::string& key) const { return path_.empty() ? key : path_ + "." + key; }

  template <typename V>
  V req(const std::string& key) const {
    if (!has(key)) throw ConfigError(field_path(key) + ": required field is missing");
    return convert<V>((*j_)[key], field_path(key));
  }

  template <typename V>
  V opt(const std::string& key, V fallback) const {
    return has(key) ? convert<V>((*j_)[key], field_path(key)) : fallback;
  }

  JsonIn child(const std::string& key) const {
    if (!has(key)) throw ConfigError(field_path(key) + ": required field is missing");
    return JsonIn((*j_)[key], field_path(key));
  }

  std::vector<Json> array(const std::string& key) const {
    if (!has(key)) return {};
    const Json& a = (*j_)[key];
    if (!a.is_array()) throw ConfigError(field_path(key) + ": expected an array");
    return std::vector<Json>(a.begin(), a.end());
  }

  /// Rejects keys outside `allowed`, catching typos in configs.
  void only(std::initializer_list<const char*> allowed) const {
    for (auto it = j_->begin(); it != j_->end(); ++it) {
      bool ok = false;
      for (const char* a : allowed) ok = ok || it.key() == a;
      if (!ok) throw ConfigError(field_path(it.key()) + ": unknown field");
    }
  }

  template <typename V>
  static V convert(const Json& v, const std::string& path) {
    if constexpr (std::is_same_v<V, bool>) {
      if (!v.is_boolean()) throw ConfigError(path + ": expected a boolean");
    } else if constexpr (std::is_integral_v<V>) {
      if (!v.is_number_integer()) throw ConfigError(path + ": expected an integer");
      if (std::is_unsigned_v<V> && v.get<long long>() < 0) throw ConfigError(path + ": expected a non-negative integer");
    } else if constexpr (std::is_floating_point_v<V>) {
      if (!v.is_number()) throw ConfigError(path + ": expected a number");
    } else if constexpr (std::is_same_v<V, std::string>) {
      if (!v.is_string()) throw ConfigError(path + ": expected a string");
    }
    try {
      return v.get<V>();
    } catch (const Json::exception&) {
      throw ConfigError(path + ": value has the wrong type");
    }
  }

 private:
  std::string where() const { return path_.empty() ? "" : path_ + ": "; }
  const Json* j_;
  std::string path_;
};

inline void write_text_file(const std::string& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("cannot write '" + path + "'");
  out << text;
  if (!out) throw Error("write failed for '" + path + "'");
}

}  // namespace twostage
