#include "tomembed/block.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace tomembed {

Block::Block(std::size_t channels, std::size_t rows, std::size_t cols, float fill)
    : channels_(channels), rows_(rows), cols_(cols), values_(channels * rows * cols, fill) {}

Block::Block(std::size_t channels, std::size_t rows, std::size_t cols, std::vector<float> values)
    : channels_(channels), rows_(rows), cols_(cols), values_(std::move(values)) {
  if (values_.size() != channels * rows * cols) {
    throw std::invalid_argument("Block: value count does not match C*H*W");
  }
}

bool Block::all_finite() const {
  return std::all_of(values_.begin(), values_.end(), [](float v) { return std::isfinite(v); });
}

}  // namespace tomembed
