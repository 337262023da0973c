#pragma once

// Deterministic tiling of a square cell into model-sized fragments with an
// overlap adjusted so the fragments tile the cell exactly.

#include <cstddef>
#include <cstdint>
#include <vector>

#include "tomembed/block.hpp"
#include "tomembed/geo.hpp"
#include "tomembed/grid_raster.hpp"

namespace tomembed {

struct FragmentConfig {
  std::int32_t source_size = 1068;
  std::int32_t fragment_size = 224;
  double target_overlap = 0.1;  // fraction of fragment_size, [0, 1)
  bool border_shift = true;

  void validate() const;
  bool operator==(const FragmentConfig&) const = default;
};

struct FragmentSpec {
  std::int32_t row_idx = 0;
  std::int32_t col_idx = 0;
  std::int32_t row_offset = 0;
  std::int32_t col_offset = 0;
  geo::PixelBox pixel_bbox;

  bool operator==(const FragmentSpec&) const = default;
};

struct FragmentPlan {
  FragmentConfig config;
  std::int32_t strides = 0;            // n; n + 1 fragments per axis
  std::int32_t adjusted_overlap = 0;   // pixels shared by consecutive fragments
  std::vector<std::int32_t> offsets;   // per axis, strictly increasing
  std::vector<FragmentSpec> specs;     // row-major

  std::size_t fragments_per_axis() const { return offsets.size(); }
  bool operator==(const FragmentPlan&) const = default;
};

// Pure function of the config. Throws std::invalid_argument when
// fragment_size > source_size or the config is otherwise invalid.
FragmentPlan plan_fragments(const FragmentConfig& config);

struct Fragment {
  Block block;  // C x s_f x s_f
  FragmentSpec spec;
};

// Copies pixels verbatim; throws std::out_of_range if the bbox leaves the block.
Fragment extract_fragment(const Block& bands, const FragmentSpec& spec);
Fragment extract_fragment(const RasterCell& cell, const FragmentSpec& spec);

}  // namespace tomembed
