#pragma once

#include <cstddef>
#include <span>
#include <vector>

namespace tomembed {

// Dense C x H x W block of 32-bit reals, channel-major then row-major.
class Block {
 public:
  Block() = default;
  Block(std::size_t channels, std::size_t rows, std::size_t cols, float fill = 0.0f);
  Block(std::size_t channels, std::size_t rows, std::size_t cols, std::vector<float> values);

  std::size_t channels() const { return channels_; }
  std::size_t rows() const { return rows_; }
  std::size_t cols() const { return cols_; }
  std::size_t size() const { return values_.size(); }
  bool empty() const { return values_.empty(); }

  float& at(std::size_t c, std::size_t r, std::size_t col) {
    return values_[(c * rows_ + r) * cols_ + col];
  }
  float at(std::size_t c, std::size_t r, std::size_t col) const {
    return values_[(c * rows_ + r) * cols_ + col];
  }

  std::span<float> plane(std::size_t c) {
    return {values_.data() + c * rows_ * cols_, rows_ * cols_};
  }
  std::span<const float> plane(std::size_t c) const {
    return {values_.data() + c * rows_ * cols_, rows_ * cols_};
  }

  std::span<float> values() { return values_; }
  std::span<const float> values() const { return values_; }

  bool same_shape(const Block& other) const {
    return channels_ == other.channels_ && rows_ == other.rows_ && cols_ == other.cols_;
  }
  bool all_finite() const;

  bool operator==(const Block&) const = default;

 private:
  std::size_t channels_ = 0;
  std::size_t rows_ = 0;
  std::size_t cols_ = 0;
  std::vector<float> values_;
};

}  // namespace tomembed
