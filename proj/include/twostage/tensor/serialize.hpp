// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <string>
#include <type_traits>
#include <vector>

#include "twostage/tensor/tensor.hpp"

namespace twostage::tensor {

static_assert(std::endian::native == std::endian::little, "tensor files are little-endian; big-endian hosts unsupported");

/// "f32" or "f64".
template <typename T>
constexpr const char* dtype_name() {
  static_assert(std::is_same_v<T, float> || std::is_same_v<T, double>);
  return std::is_same_v<T, float> ? "f32" : "f64";
}

inline std::size_t dtype_size(const std::string& dtype) {
  if (dtype == "f32") return 4;
  if (dtype == "f64") return 8;
  throw Error("unsupported dtype '" + dtype + "'");
}

/// Raw little-endian values, no header; shape and dtype live in the manifest.
template <typename T>
void write_raw(const std::filesystem::path& path, const Tensor<T>& t) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error("cannot write " + path.string());
  out.write(reinterpret_cast<const char*>(t.data()), static_cast<std::streamsize>(t.size() * sizeof(T)));
  if (!out) throw Error("write failed for " + path.string());
}

template <typename T>
Tensor<T> read_raw(const std::filesystem::path& path, const Shape& shape, const std::string& dtype) {
  const std::size_t n = numel(shape);
  const std::size_t width = dtype_size(dtype);
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("cannot read " + path.string());
  std::vector<char> bytes(n * width);
  in.read(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (in.gcount() != static_cast<std::streamsize>(bytes.size()) || in.peek() != std::char_traits<char>::eof()) {
    throw Error(path.string() + ": expected " + std::to_string(bytes.size()) + " bytes for shape " + shape_str(shape));
  }
  std::vector<T> data(n);
  for (std::size_t i = 0; i < n; ++i) {
    if (width == 4) {
      float v;
      std::memcpy(&v, bytes.data() + i * 4, 4);
      data[i] = static_cast<T>(v);
    } else {
      double v;
      std::memcpy(&v, bytes.data() + i * 8, 8);
      data[i] = static_cast<T>(v);
    }
  }
  return Tensor<T>(shape, std::move(data));
}

}  // namespace twostage::tensor
