#pragma once

// Embedding archives: GeoParquet files with one row per fragment, the
// unique_id checksum, validation, and the metadata + flat vector layout.

#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "tomembed/embed.hpp"
#include "tomembed/geo.hpp"

namespace tomembed {

struct EmbeddingRecord {
  std::string unique_id;
  EmbeddingVector embedding;
  std::string grid_cell;
  std::int32_t grid_row_u = 0;
  std::int32_t grid_col_r = 0;
  std::string product_id;
  std::string timestamp;
  geo::GeoPolygon geometry;
  std::string utm_footprint;  // WKT
  std::string utm_crs;
  geo::PixelBox pixel_bbox;
  double centre_lat = 0.0;
  double centre_lon = 0.0;

  bool operator==(const EmbeddingRecord&) const = default;
};

// Column order of the archive schema.
inline constexpr std::string_view kArchiveColumns[] = {
    "unique_id", "embedding",     "grid_cell", "grid_row_u", "grid_col_r", "product_id", "timestamp",
    "geometry",  "utm_footprint", "utm_crs",   "pixel_bbox", "centre_lat", "centre_lon"};

// SHA-256 over WKT(geometry) \n timestamp \n product_id \n followed by the
// little-endian float32 bytes of the embedding; lowercase hex.
std::string compute_unique_id(std::string_view geometry_wkt, std::string_view timestamp,
                              std::string_view product_id, std::span<const float> embedding);
std::string compute_unique_id(const EmbeddingRecord& record);

std::string sha256_hex(std::span<const std::uint8_t> bytes);
std::string sha256_file(const std::filesystem::path& path);

// Fills every field from the cell metadata and fragment geometry and
// computes the unique_id.
EmbeddingRecord make_record(EmbeddingVector embedding, const RasterCell& cell, const geo::PixelBox& bbox);

struct ArchiveManifest {
  std::string format_version = "1";
  std::string profile;
  std::size_t embedding_dim = 0;
  std::size_t count = 0;
  std::string source;         // file name of the source archive
  std::string source_sha256;  // digest of the source file
  std::string created;        // UTC, sidecar only

  // The embedded copy omits `created` so archives stay byte-reproducible.
  std::string to_json(bool include_created = true) const;
  static ArchiveManifest from_json(std::string_view text);
  bool operator==(const ArchiveManifest&) const = default;
};

inline constexpr std::string_view kManifestKey = "tomembed:manifest";

// "part-000.parquet" -> "part-000.manifest.json"
std::filesystem::path manifest_path_for(const std::filesystem::path& archive);

// Sorts by (grid_row_u, grid_col_r, pixel_bbox, timestamp, product_id,
// unique_id), writes the GeoParquet file and its JSON manifest sidecar.
// `info` provides profile and source identity; dim, count and creation time
// are filled in. Records are written as given: unique_ids are not
// recomputed. Throws std::invalid_argument on mixed embedding dims.
ArchiveManifest write_archive(std::vector<EmbeddingRecord> records, const std::filesystem::path& path,
                              const ArchiveManifest& info = {});

// Throws SchemaError on a missing or mistyped column. With `validate`, a
// row whose unique_id does not match its content raises FormatError.
std::vector<EmbeddingRecord> read_archive(const std::filesystem::path& path, bool validate = false);

// The embedded manifest, if present.
std::optional<ArchiveManifest> read_manifest(const std::filesystem::path& path);

struct ValidationReport {
  struct Violation {
    std::size_t row = 0;
    std::string kind;  // unique_id, geometry, pixel_bbox, centre, embedding, utm_footprint
    std::string message;
  };
  std::size_t rows = 0;
  std::vector<Violation> violations;

  bool ok() const { return violations.empty(); }
};

// Per-row checks: unique_id recomputation, WGS84 ring validity, UTM
// footprint parseability, pixel bbox bounds, centre inside the geometry
// bounds, finite embeddings of a common length. Schema problems still throw.
ValidationReport validate_archive(const std::filesystem::path& path);

struct RawManifest {
  std::string dtype = "f32";
  std::size_t dim = 0;
  std::size_t count = 0;
  bool operator==(const RawManifest&) const = default;
};

// Writes `out_dir`/metadata.parquet (archive columns minus `embedding`, plus
// int64 `vector_offset` as an element index), `out_dir`/vectors.f32 and
// `out_dir`/raw_manifest.json. Archives are concatenated in the given order.
RawManifest convert_to_raw(std::span<const std::filesystem::path> archives, const std::filesystem::path& out_dir);

// Inverse of convert_to_raw.
std::vector<EmbeddingRecord> reattach_raw(const std::filesystem::path& raw_dir);

}  // namespace tomembed
