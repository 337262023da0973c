#include "tomembed/fragmenter.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <stdexcept>

namespace tomembed {

void FragmentConfig::validate() const {
  if (fragment_size < 1) throw std::invalid_argument("fragment size must be >= 1");
  if (fragment_size > source_size) {
    throw std::invalid_argument("fragment size " + std::to_string(fragment_size) + " exceeds source size " +
                                std::to_string(source_size));
  }
  if (!(target_overlap >= 0.0 && target_overlap < 1.0)) {
    throw std::invalid_argument("target overlap must lie in [0, 1)");
  }
}

FragmentPlan plan_fragments(const FragmentConfig& config) {
  config.validate();
  FragmentPlan plan;
  plan.config = config;
  const std::int32_t s_i = config.source_size;
  const std::int32_t s_f = config.fragment_size;

  if (s_i == s_f) {
    plan.strides = 0;
    plan.adjusted_overlap = s_f;
    plan.offsets = {0};
  } else {
    const std::int32_t span = s_i - s_f;
    const double target_overlap_px = s_f * config.target_overlap;
    // std::round rounds halves away from zero.
    auto n = static_cast<std::int32_t>(std::round(span / (s_f - target_overlap_px)));
    // Never let the stride exceed the fragment size (that would leave gaps),
    // and never let it reach zero (that would duplicate offsets).
    const std::int32_t min_strides = (span + s_f - 1) / s_f;
    n = std::clamp(std::max(n, min_strides), std::int32_t{1}, span);
    const std::int32_t stride = span / n;  // == s_f - ceil(s_f - span / n)
    plan.strides = n;
    plan.adjusted_overlap = s_f - stride;
    plan.offsets.reserve(static_cast<std::size_t>(n) + 1);
    if (config.border_shift) {
      // floor(i * span / n): equal to i * stride when n divides the span.
      // Otherwise the remainder is spread over the steps instead of piling
      // up in front of the shifted last fragment, where it could open a gap.
      for (std::int32_t i = 0; i <= n; ++i) {
        plan.offsets.push_back(static_cast<std::int32_t>(static_cast<std::int64_t>(i) * span / n));
      }
    } else {
      for (std::int32_t i = 0; i <= n; ++i) plan.offsets.push_back(i * stride);
    }
  }

  const auto per_axis = static_cast<std::int32_t>(plan.offsets.size());
  plan.specs.reserve(plan.offsets.size() * plan.offsets.size());
  for (std::int32_t r = 0; r < per_axis; ++r) {
    for (std::int32_t c = 0; c < per_axis; ++c) {
      FragmentSpec spec;
      spec.row_idx = r;
      spec.col_idx = c;
      spec.row_offset = plan.offsets[static_cast<std::size_t>(r)];
      spec.col_offset = plan.offsets[static_cast<std::size_t>(c)];
      spec.pixel_bbox = {spec.row_offset, spec.col_offset, spec.row_offset + s_f, spec.col_offset + s_f};
      plan.specs.push_back(spec);
    }
  }
  return plan;
}

Fragment extract_fragment(const Block& bands, const FragmentSpec& spec) {
  const auto& b = spec.pixel_bbox;
  if (b.row_start < 0 || b.col_start < 0 || b.row_end <= b.row_start || b.col_end <= b.col_start ||
      static_cast<std::size_t>(b.row_end) > bands.rows() || static_cast<std::size_t>(b.col_end) > bands.cols()) {
    throw std::out_of_range("fragment bbox outside the cell");
  }
  const auto h = static_cast<std::size_t>(b.row_end - b.row_start);
  const auto w = static_cast<std::size_t>(b.col_end - b.col_start);
  Fragment f{Block(bands.channels(), h, w), spec};
  for (std::size_t c = 0; c < bands.channels(); ++c) {
    const auto src = bands.plane(c);
    auto dst = f.block.plane(c);
    for (std::size_t r = 0; r < h; ++r) {
      const std::size_t src_off = (static_cast<std::size_t>(b.row_start) + r) * bands.cols() +
                                  static_cast<std::size_t>(b.col_start);
      std::memcpy(dst.data() + r * w, src.data() + src_off, w * sizeof(float));
    }
  }
  return f;
}

Fragment extract_fragment(const RasterCell& cell, const FragmentSpec& spec) {
  return extract_fragment(cell.bands, spec);
}

}  // namespace tomembed
