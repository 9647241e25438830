// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "twostage/tensor/tensor.hpp"

namespace twostage::model {

/// Token ids laid out [batch, length]; valid[i] == 0 marks padding.
struct TokenBatch {
  std::size_t batch = 0;
  std::size_t length = 0;
  std::vector<std::int32_t> ids;
  std::vector<std::uint8_t> valid;

  void validate() const {
    if (ids.size() != batch * length || valid.size() != batch * length) {
      throw DimensionError("token batch [" + std::to_string(batch) + "," + std::to_string(length) + "] has " +
                           std::to_string(ids.size()) + " ids and " + std::to_string(valid.size()) + " mask entries");
    }
  }
};

}  // namespace twostage::model
