#pragma once

// Raster cell model, band blob codecs and the source-archive ingestion
// contract.

#include <cstdint>
#include <filesystem>
#include <memory>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "tomembed/block.hpp"

namespace tomembed {

namespace parquet {
class FileReader;
}

// North-up UTM grid: pixel (row, col) has its top-left corner at
// (origin_easting + col * pixel_size, origin_northing - row * pixel_size).
struct AffineTransform {
  double origin_easting = 0.0;
  double origin_northing = 0.0;
  double pixel_size = 10.0;

  void validate() const;
  bool operator==(const AffineTransform&) const = default;
};

struct RasterCell {
  Block bands;  // C x H x W, physical units
  std::vector<std::string> band_names;
  std::string crs;  // "EPSG:<code>", a UTM zone
  AffineTransform transform;
  std::string grid_cell;
  std::int32_t grid_row_u = 0;
  std::int32_t grid_col_r = 0;
  std::string product_id;
  std::string timestamp;  // "YYYY-MM-DDTHH:MM:SSZ"

  std::size_t size() const { return bands.rows(); }
  // Case-insensitive; -1 when absent.
  int band_index(std::string_view name) const;
  // Throws std::invalid_argument when an invariant does not hold.
  void validate() const;

  bool operator==(const RasterCell&) const = default;
};

struct BandPlane {
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::vector<float> values;  // row-major

  bool operator==(const BandPlane&) const = default;
};

inline constexpr std::string_view kRawF32 = "raw-f32";
inline constexpr std::string_view kTiffUncompressed = "tiff-uncompressed";

// Decoders are pure: the same blob always yields the same plane.
class RasterDecoder {
 public:
  virtual ~RasterDecoder() = default;
  virtual bool supports(std::string_view format_id) const = 0;
  virtual BandPlane decode(std::span<const std::uint8_t> blob, std::string_view format_id) const = 0;
};

// Handles "raw-f32" and "tiff-uncompressed".
class ReferenceDecoder final : public RasterDecoder {
 public:
  bool supports(std::string_view format_id) const override;
  BandPlane decode(std::span<const std::uint8_t> blob, std::string_view format_id) const override;
};

std::shared_ptr<const RasterDecoder> reference_decoder();

// "raw-f32": u32 H, u32 W, then H*W little-endian floats.
// "tiff-uncompressed": baseline single-strip, single-band, uncompressed TIFF;
// 32-bit float, 8/16-bit unsigned and 16-bit signed samples are read.
BandPlane decode_band(std::span<const std::uint8_t> blob, std::string_view format_id);
// The TIFF encoder always writes little-endian 32-bit float samples.
std::vector<std::uint8_t> encode_band(const BandPlane& plane, std::string_view format_id);

// Accepts "YYYY-MM-DDTHH:MM:SS[.fff][Z|+HH:MM|-HH:MM]", a space instead of
// 'T', and the compact "YYYYMMDDTHHMMSS" product form. Naive times are UTC.
std::string normalize_timestamp(std::string_view text);

// Deterministic raster with values in [0, 1) drawn from SplitMix64(seed),
// channel-major then row-major. Default band names are "b0", "b1", ...
RasterCell synth_cell(std::uint64_t seed, std::size_t size, std::size_t channels, std::string crs,
                      const AffineTransform& transform, std::vector<std::string> band_names = {});

// One source row with band blobs already encoded.
struct SourceRow {
  std::string grid_cell;
  std::int32_t grid_row_u = 0;
  std::int32_t grid_col_r = 0;
  std::string product_id;
  std::string timestamp;
  std::string crs;
  AffineTransform transform;
  std::vector<std::vector<std::uint8_t>> blobs;  // one per band, in band order
};

void write_source_rows(const std::filesystem::path& path, std::span<const std::string> band_names,
                       std::span<const SourceRow> rows, std::string_view format_id);
// All cells must share band names. One row group per cell.
void write_source_archive(const std::filesystem::path& path, std::span<const RasterCell> cells,
                          std::string_view format_id = kRawF32);

// Read-only, lazily decoded view of a source archive. `read` is const and
// safe to call from several threads at once.
class SourceArchive {
 public:
  static SourceArchive open(const std::filesystem::path& path,
                            std::shared_ptr<const RasterDecoder> decoder = reference_decoder());

  SourceArchive(SourceArchive&&) noexcept;
  SourceArchive& operator=(SourceArchive&&) noexcept;
  ~SourceArchive();

  std::size_t size() const { return row_locations_.size(); }
  const std::filesystem::path& path() const { return path_; }
  const std::vector<std::string>& band_names() const { return band_names_; }
  const std::string& band_format() const { return band_format_; }

  // Throws DecodeError when the row cannot be turned into a valid cell.
  RasterCell read(std::size_t row) const;

  class iterator {
   public:
    using value_type = RasterCell;
    using difference_type = std::ptrdiff_t;
    iterator(const SourceArchive* archive, std::size_t row) : archive_(archive), row_(row) {}
    RasterCell operator*() const { return archive_->read(row_); }
    iterator& operator++() {
      ++row_;
      return *this;
    }
    bool operator==(const iterator& other) const { return row_ == other.row_; }

   private:
    const SourceArchive* archive_;
    std::size_t row_;
  };
  iterator begin() const { return {this, 0}; }
  iterator end() const { return {this, size()}; }

 private:
  SourceArchive() = default;

  struct Columns {
    std::size_t grid_cell, grid_row_u, grid_col_r, product_id, timestamp, crs, transform;
    std::vector<std::size_t> bands;
  };

  std::filesystem::path path_;
  std::unique_ptr<parquet::FileReader> reader_;
  std::shared_ptr<const RasterDecoder> decoder_;
  std::vector<std::string> band_names_;
  std::string band_format_;
  Columns columns_{};
  // (row group, row within group) for each archive row.
  std::vector<std::pair<std::size_t, std::size_t>> row_locations_;
};

}  // namespace tomembed
