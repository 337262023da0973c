#include "tomembed/archive.hpp"

#include <openssl/evp.h>

#include <algorithm>
#include <array>
#include <bit>
#include <chrono>
#include <ctime>
#include <cmath>
#include <cstring>
#include <fstream>
#include <limits>
#include <tuple>

#include "json.hpp"
#include "tomembed/error.hpp"
#include "tomembed/parquet.hpp"

namespace tomembed {
namespace {

namespace fs = std::filesystem;
using nlohmann::json;
using parquet::ColumnData;
using parquet::ColumnSchema;
using parquet::PhysicalType;

constexpr std::size_t kRowGroupSize = 10000;

class Sha256 {
 public:
  Sha256() : ctx_(EVP_MD_CTX_new()) {
    if (ctx_ == nullptr || EVP_DigestInit_ex(ctx_, EVP_sha256(), nullptr) != 1) {
      throw Error("cannot initialise SHA-256");
    }
  }
  ~Sha256() { EVP_MD_CTX_free(ctx_); }
  Sha256(const Sha256&) = delete;
  Sha256& operator=(const Sha256&) = delete;

  void update(const void* data, std::size_t n) { EVP_DigestUpdate(ctx_, data, n); }
  void update(std::string_view s) { update(s.data(), s.size()); }

  std::string hex() {
    unsigned char digest[EVP_MAX_MD_SIZE];
    unsigned int len = 0;
    EVP_DigestFinal_ex(ctx_, digest, &len);
    static constexpr char kHex[] = "0123456789abcdef";
    std::string out(2 * len, '0');
    for (unsigned int i = 0; i < len; ++i) {
      out[2 * i] = kHex[digest[i] >> 4];
      out[2 * i + 1] = kHex[digest[i] & 0xF];
    }
    return out;
  }

 private:
  EVP_MD_CTX* ctx_;
};

std::string utc_now() {
  const std::time_t now = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::tm tm{};
  ::gmtime_r(&now, &tm);
  char buf[32];
  std::strftime(buf, sizeof(buf), "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

std::vector<ColumnSchema> archive_schema(bool with_embedding, bool with_offset) {
  std::vector<ColumnSchema> s;
  s.push_back({"unique_id", PhysicalType::kByteArray, true, false});
  if (with_embedding) s.push_back({"embedding", PhysicalType::kFloat, false, true});
  s.push_back({"grid_cell", PhysicalType::kByteArray, true, false});
  s.push_back({"grid_row_u", PhysicalType::kInt32, false, false});
  s.push_back({"grid_col_r", PhysicalType::kInt32, false, false});
  s.push_back({"product_id", PhysicalType::kByteArray, true, false});
  s.push_back({"timestamp", PhysicalType::kByteArray, true, false});
  s.push_back({"geometry", PhysicalType::kByteArray, false, false});
  s.push_back({"utm_footprint", PhysicalType::kByteArray, true, false});
  s.push_back({"utm_crs", PhysicalType::kByteArray, true, false});
  s.push_back({"pixel_bbox", PhysicalType::kInt32, false, true});
  s.push_back({"centre_lat", PhysicalType::kDouble, false, false});
  s.push_back({"centre_lon", PhysicalType::kDouble, false, false});
  if (with_offset) s.push_back({"vector_offset", PhysicalType::kInt64, false, false});
  return s;
}

std::string bytes_to_string(const std::vector<std::uint8_t>& bytes) { return {bytes.begin(), bytes.end()}; }

std::vector<ColumnData> record_columns(std::span<const EmbeddingRecord> rows, bool with_embedding,
                                       std::int64_t first_offset) {
  std::vector<std::string> unique_id, grid_cell, product_id, timestamp, geometry, utm_footprint, utm_crs;
  std::vector<std::int32_t> row_u, col_r, bbox;
  std::vector<float> emb;
  std::vector<double> lat, lon;
  std::vector<std::int64_t> emb_offsets{0}, bbox_offsets{0}, vector_offset;
  std::int64_t offset = first_offset;
  for (const auto& r : rows) {
    unique_id.push_back(r.unique_id);
    if (with_embedding) {
      emb.insert(emb.end(), r.embedding.begin(), r.embedding.end());
      emb_offsets.push_back(static_cast<std::int64_t>(emb.size()));
    } else {
      vector_offset.push_back(offset);
      offset += static_cast<std::int64_t>(r.embedding.size());
    }
    grid_cell.push_back(r.grid_cell);
    row_u.push_back(r.grid_row_u);
    col_r.push_back(r.grid_col_r);
    product_id.push_back(r.product_id);
    timestamp.push_back(r.timestamp);
    geometry.push_back(bytes_to_string(geo::to_wkb(r.geometry)));
    utm_footprint.push_back(r.utm_footprint);
    utm_crs.push_back(r.utm_crs);
    const auto& b = r.pixel_bbox;
    bbox.insert(bbox.end(), {b.row_start, b.col_start, b.row_end, b.col_end});
    bbox_offsets.push_back(static_cast<std::int64_t>(bbox.size()));
    lat.push_back(r.centre_lat);
    lon.push_back(r.centre_lon);
  }
  std::vector<ColumnData> cols;
  cols.push_back({std::move(unique_id), {}});
  if (with_embedding) cols.push_back({std::move(emb), std::move(emb_offsets)});
  cols.push_back({std::move(grid_cell), {}});
  cols.push_back({std::move(row_u), {}});
  cols.push_back({std::move(col_r), {}});
  cols.push_back({std::move(product_id), {}});
  cols.push_back({std::move(timestamp), {}});
  cols.push_back({std::move(geometry), {}});
  cols.push_back({std::move(utm_footprint), {}});
  cols.push_back({std::move(utm_crs), {}});
  cols.push_back({std::move(bbox), std::move(bbox_offsets)});
  cols.push_back({std::move(lat), {}});
  cols.push_back({std::move(lon), {}});
  if (!with_embedding) cols.push_back({std::move(vector_offset), {}});
  return cols;
}

std::string geo_metadata(std::span<const EmbeddingRecord> records) {
  json column = {{"encoding", "WKB"}, {"geometry_types", {"Polygon"}}};
  if (!records.empty()) {
    double min_lon = std::numeric_limits<double>::infinity(), min_lat = min_lon;
    double max_lon = -min_lon, max_lat = -min_lon;
    for (const auto& r : records) {
      for (const auto& p : r.geometry.ring) {
        min_lon = std::min(min_lon, p.lon);
        max_lon = std::max(max_lon, p.lon);
        min_lat = std::min(min_lat, p.lat);
        max_lat = std::max(max_lat, p.lat);
      }
    }
    column["bbox"] = {min_lon, min_lat, max_lon, max_lat};
  }
  // No "crs" member: GeoParquet then defines the CRS as OGC:CRS84.
  json geo = {{"version", "1.0.0"}, {"primary_column", "geometry"}, {"columns", {{"geometry", column}}}};
  return geo.dump();
}

bool record_less(const EmbeddingRecord& a, const EmbeddingRecord& b) {
  return std::tie(a.grid_row_u, a.grid_col_r, a.pixel_bbox, a.timestamp, a.product_id, a.unique_id) <
         std::tie(b.grid_row_u, b.grid_col_r, b.pixel_bbox, b.timestamp, b.product_id, b.unique_id);
}

std::size_t common_dim(std::span<const EmbeddingRecord> records, std::size_t fallback) {
  if (records.empty()) return fallback;
  const std::size_t dim = records.front().embedding.size();
  for (std::size_t i = 0; i < records.size(); ++i) {
    if (records[i].embedding.size() != dim) {
      throw std::invalid_argument("mixed embedding dims: " + std::to_string(dim) + " and " +
                                  std::to_string(records[i].embedding.size()) + " (record " + std::to_string(i) +
                                  ")");
    }
  }
  return dim;
}

// Columns of an archive (or raw metadata file) read in full.
struct Table {
  std::size_t rows = 0;
  ColumnData unique_id, embedding, grid_cell, grid_row_u, grid_col_r, product_id, timestamp, geometry,
      utm_footprint, utm_crs, pixel_bbox, centre_lat, centre_lon, vector_offset;
};

Table read_table(const fs::path& path, bool raw_metadata) {
  const auto reader = parquet::FileReader::open(path);
  Table t;
  t.rows = static_cast<std::size_t>(reader.num_rows());
  // Report absent columns before type mismatches.
  for (const std::string_view name :
       {"unique_id", raw_metadata ? "vector_offset" : "embedding", "grid_cell", "grid_row_u", "grid_col_r",
        "product_id", "timestamp", "geometry", "utm_footprint", "utm_crs", "pixel_bbox", "centre_lat", "centre_lon"}) {
    if (!reader.column_index(name)) throw SchemaError(path.string() + ": missing column '" + std::string(name) + "'");
  }
  auto load =[&](std::string_view name, PhysicalType type, bool list, ColumnData& out, bool int64_ok = false) {
    const auto idx = reader.column_index(name);
    if (!idx) throw SchemaError(path.string() + ": missing column '" + std::string(name) + "'");
    const auto& s = reader.schema()[*idx];
    const bool type_ok = s.type == type || (int64_ok && s.type == PhysicalType::kInt64);
    if (!type_ok || s.list != list) {
      throw SchemaError(path.string() + ": column '" + std::string(name) + "' is " + (s.list ? "list<" : "") +
                        std::string(parquet::to_string(s.type)) + (s.list ? ">" : "") + ", expected " +
                        (list ? "list<" : "") + std::string(parquet::to_string(type)) + (list ? ">" : ""));
    }
    out = reader.read_column(*idx);
    if (s.type == PhysicalType::kInt64 && type == PhysicalType::kInt32) {
      const auto& wide = out.get<std::int64_t>();
      std::vector<std::int32_t> narrow(wide.begin(), wide.end());
      out.values = std::move(narrow);
    }
  };
  load("unique_id", PhysicalType::kByteArray, false, t.unique_id);
  if (raw_metadata) {
    load("vector_offset", PhysicalType::kInt64, false, t.vector_offset);
  } else {
    load("embedding", PhysicalType::kFloat, true, t.embedding);
  }
  load("grid_cell", PhysicalType::kByteArray, false, t.grid_cell);
  load("grid_row_u", PhysicalType::kInt32, false, t.grid_row_u, true);
  load("grid_col_r", PhysicalType::kInt32, false, t.grid_col_r, true);
  load("product_id", PhysicalType::kByteArray, false, t.product_id);
  load("timestamp", PhysicalType::kByteArray, false, t.timestamp);
  load("geometry", PhysicalType::kByteArray, false, t.geometry);
  load("utm_footprint", PhysicalType::kByteArray, false, t.utm_footprint);
  load("utm_crs", PhysicalType::kByteArray, false, t.utm_crs);
  load("pixel_bbox", PhysicalType::kInt32, true, t.pixel_bbox, true);
  load("centre_lat", PhysicalType::kDouble, false, t.centre_lat);
  load("centre_lon", PhysicalType::kDouble, false, t.centre_lon);
  return t;
}

std::span<const std::uint8_t> as_bytes(const std::string& s) {
  return {reinterpret_cast<const std::uint8_t*>(s.data()), s.size()};
}

// Builds the record for row `i`, leaving geometry and bbox problems to the
// caller: `ring` and `bbox` carry the raw values.
struct RawRow {
  EmbeddingRecord record;
  std::vector<std::array<double, 2>> ring;
  std::span<const std::int32_t> bbox;
  std::string geometry_error;
};

RawRow raw_row(const Table& t, std::size_t i, std::span<const float> embedding) {
  RawRow row;
  auto& r = row.record;
  r.unique_id = t.unique_id.get<std::string>()[i];
  r.embedding.assign(embedding.begin(), embedding.end());
  r.grid_cell = t.grid_cell.get<std::string>()[i];
  r.grid_row_u = t.grid_row_u.get<std::int32_t>()[i];
  r.grid_col_r = t.grid_col_r.get<std::int32_t>()[i];
  r.product_id = t.product_id.get<std::string>()[i];
  r.timestamp = t.timestamp.get<std::string>()[i];
  r.utm_footprint = t.utm_footprint.get<std::string>()[i];
  r.utm_crs = t.utm_crs.get<std::string>()[i];
  r.centre_lat = t.centre_lat.get<double>()[i];
  r.centre_lon = t.centre_lon.get<double>()[i];
  try {
    row.ring = geo::parse_wkb_polygon(as_bytes(t.geometry.get<std::string>()[i]));
  } catch (const std::exception& e) {
    row.geometry_error = e.what();
  }
  if (row.ring.size() == 5) {
    for (std::size_t k = 0; k < 5; ++k) r.geometry.ring[k] = {row.ring[k][0], row.ring[k][1]};
  }
  row.bbox = t.pixel_bbox.list_at<std::int32_t>(i);
  if (row.bbox.size() == 4) r.pixel_bbox = {row.bbox[0], row.bbox[1], row.bbox[2], row.bbox[3]};
  return row;
}

EmbeddingRecord checked_record(RawRow row, std::size_t i, const fs::path& path) {
  const auto where = [&] { return path.string() + " row " + std::to_string(i) + ": "; };
  if (!row.geometry_error.empty()) throw FormatError(where() + row.geometry_error);
  if (row.ring.size() != 5) {
    throw FormatError(where() + "geometry ring has " + std::to_string(row.ring.size()) + " points, expected 5");
  }
  if (row.bbox.size() != 4) {
    throw FormatError(where() + "pixel_bbox has " + std::to_string(row.bbox.size()) + " values, expected 4");
  }
  return std::move(row.record);
}

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  out << text;
  if (!out) throw Error("cannot write " + path.string());
}

std::string read_text(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("cannot read " + path.string());
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

}  // namespace

std::string compute_unique_id(std::string_view geometry_wkt, std::string_view timestamp,
                              std::string_view product_id, std::span<const float> embedding) {
  Sha256 h;
  h.update(geometry_wkt);
  h.update("\n");
  h.update(timestamp);
  h.update("\n");
  h.update(product_id);
  h.update("\n");
  for (float v : embedding) {
    std::uint32_t bits;
    std::memcpy(&bits, &v, 4);
    const std::uint8_t le[4] = {static_cast<std::uint8_t>(bits), static_cast<std::uint8_t>(bits >> 8),
                                static_cast<std::uint8_t>(bits >> 16), static_cast<std::uint8_t>(bits >> 24)};
    h.update(le, 4);
  }
  return h.hex();
}

std::string compute_unique_id(const EmbeddingRecord& record) {
  return compute_unique_id(geo::to_wkt(record.geometry), record.timestamp, record.product_id, record.embedding);
}

std::string sha256_hex(std::span<const std::uint8_t> bytes) {
  Sha256 h;
  h.update(bytes.data(), bytes.size());
  return h.hex();
}

std::string sha256_file(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("cannot read " + path.string());
  Sha256 h;
  std::vector<char> buf(1 << 20);
  while (in) {
    in.read(buf.data(), static_cast<std::streamsize>(buf.size()));
    h.update(buf.data(), static_cast<std::size_t>(in.gcount()));
  }
  return h.hex();
}

EmbeddingRecord make_record(EmbeddingVector embedding, const RasterCell& cell, const geo::PixelBox& bbox) {
  const auto g = geo::fragment_geometry(cell.transform, cell.crs, bbox);
  EmbeddingRecord r;
  r.embedding = std::move(embedding);
  r.grid_cell = cell.grid_cell;
  r.grid_row_u = cell.grid_row_u;
  r.grid_col_r = cell.grid_col_r;
  r.product_id = cell.product_id;
  r.timestamp = cell.timestamp;
  r.geometry = g.geometry;
  r.utm_footprint = geo::to_wkt(g.utm_footprint);
  r.utm_crs = cell.crs;
  r.pixel_bbox = bbox;
  r.centre_lat = g.centre_lat;
  r.centre_lon = g.centre_lon;
  r.unique_id = compute_unique_id(r);
  return r;
}

std::string ArchiveManifest::to_json(bool include_created) const {
  json j = {{"format_version", format_version},
            {"profile", profile},
            {"embedding_dim", embedding_dim},
            {"embedding_dtype", "float32"},
            {"count", count},
            {"source", source},
            {"source_sha256", source_sha256}};
  if (include_created) j["created"] = created;
  return j.dump(2);
}

ArchiveManifest ArchiveManifest::from_json(std::string_view text) {
  try {
    const json j = json::parse(text);
    ArchiveManifest m;
    m.format_version = j.value("format_version", "");
    m.profile = j.value("profile", "");
    m.embedding_dim = j.value("embedding_dim", std::size_t{0});
    m.count = j.value("count", std::size_t{0});
    m.source = j.value("source", "");
    m.source_sha256 = j.value("source_sha256", "");
    m.created = j.value("created", "");
    return m;
  } catch (const json::exception& e) {
    throw FormatError(std::string("bad manifest: ") + e.what());
  }
}

fs::path manifest_path_for(const fs::path& archive) {
  fs::path p = archive;
  p.replace_extension(".manifest.json");
  return p;
}

ArchiveManifest write_archive(std::vector<EmbeddingRecord> records, const fs::path& path,
                              const ArchiveManifest& info) {
  ArchiveManifest manifest = info;
  manifest.embedding_dim = common_dim(records, info.embedding_dim);
  manifest.count = records.size();
  manifest.created = utc_now();
  std::sort(records.begin(), records.end(), record_less);

  parquet::FileWriter writer(path, archive_schema(true, false));
  writer.add_metadata("geo", geo_metadata(records));
  writer.add_metadata(std::string(kManifestKey), manifest.to_json(false));
  for (std::size_t start = 0; start < records.size(); start += kRowGroupSize) {
    const std::size_t n = std::min(kRowGroupSize, records.size() - start);
    const auto cols = record_columns(std::span(records).subspan(start, n), true, 0);
    writer.write_row_group(cols);
  }
  writer.close();
  write_text(manifest_path_for(path), manifest.to_json(true) + "\n");
  return manifest;
}

std::vector<EmbeddingRecord> read_archive(const fs::path& path, bool validate) {
  const Table t = read_table(path, false);
  std::vector<EmbeddingRecord> out;
  out.reserve(t.rows);
  for (std::size_t i = 0; i < t.rows; ++i) {
    auto rec = checked_record(raw_row(t, i, t.embedding.list_at<float>(i)), i, path);
    if (validate) {
      const auto expected = compute_unique_id(rec);
      if (expected != rec.unique_id) {
        throw FormatError(path.string() + " row " + std::to_string(i) + ": unique_id mismatch (stored " +
                          rec.unique_id + ", computed " + expected + ")");
      }
    }
    out.push_back(std::move(rec));
  }
  return out;
}

std::optional<ArchiveManifest> read_manifest(const fs::path& path) {
  const auto reader = parquet::FileReader::open(path);
  const auto text = reader.metadata_value(kManifestKey);
  if (!text) return std::nullopt;
  return ArchiveManifest::from_json(*text);
}

ValidationReport validate_archive(const fs::path& path) {
  const Table t = read_table(path, false);
  ValidationReport report;
  report.rows = t.rows;
  std::optional<std::size_t> dim;
  auto add = [&](std::size_t row, std::string kind, std::string message) {
    report.violations.push_back({row, std::move(kind), std::move(message)});
  };

  for (std::size_t i = 0; i < t.rows; ++i) {
    const auto emb = t.embedding.list_at<float>(i);
    RawRow row = raw_row(t, i, emb);
    const auto& r = row.record;

    if (!dim) dim = emb.size();
    if (emb.size() != *dim) {
      add(i, "embedding", "length " + std::to_string(emb.size()) + ", expected " + std::to_string(*dim));
    } else if (!std::all_of(emb.begin(), emb.end(), [](float v) { return std::isfinite(v); })) {
      add(i, "embedding", "non-finite value");
    }

    const bool ring_ok = row.geometry_error.empty() && geo::is_valid_geo_ring(row.ring);
    if (!ring_ok) {
      add(i, "geometry",
          row.geometry_error.empty() ? "ring is not a closed, valid 5-point WGS84 polygon" : row.geometry_error);
    } else {
      const auto expected = compute_unique_id(r);
      if (expected != r.unique_id) add(i, "unique_id", "stored " + r.unique_id + ", computed " + expected);

      double min_lon = 180, max_lon = -180, min_lat = 90, max_lat = -90;
      for (const auto& p : row.ring) {
        min_lon = std::min(min_lon, p[0]);
        max_lon = std::max(max_lon, p[0]);
        min_lat = std::min(min_lat, p[1]);
        max_lat = std::max(max_lat, p[1]);
      }
      if (!(r.centre_lat >= min_lat && r.centre_lat <= max_lat && r.centre_lon >= min_lon &&
            r.centre_lon <= max_lon)) {
        add(i, "centre", "centre outside the geometry bounds");
      }
    }

    if (row.bbox.size() != 4) {
      add(i, "pixel_bbox", std::to_string(row.bbox.size()) + " values, expected 4");
    } else {
      const auto& b = r.pixel_bbox;
      if (b.row_start < 0 || b.col_start < 0 || b.row_end <= b.row_start || b.col_end <= b.col_start ||
          b.row_end - b.row_start != b.col_end - b.col_start) {
        add(i, "pixel_bbox", "bounds are not a non-empty square inside the cell");
      }
    }

    try {
      if (geo::parse_wkt_polygon(r.utm_footprint).size() != 5 || !geo::is_utm_crs(r.utm_crs)) {
        add(i, "utm_footprint", "footprint is not a 5-point polygon in a UTM CRS");
      }
    } catch (const std::exception& e) {
      add(i, "utm_footprint", e.what());
    }
  }
  return report;
}

RawManifest convert_to_raw(std::span<const fs::path> archives, const fs::path& out_dir) {
  fs::create_directories(out_dir);
  RawManifest manifest;
  std::optional<std::size_t> dim;
  std::ofstream vectors(out_dir / "vectors.f32", std::ios::binary | std::ios::trunc);
  if (!vectors) throw Error("cannot write " + (out_dir / "vectors.f32").string());
  parquet::FileWriter meta(out_dir / "metadata.parquet", archive_schema(false, true));
  std::int64_t offset = 0;

  for (const auto& path : archives) {
    const auto records = read_archive(path);
    if (records.empty()) continue;
    const std::size_t d = common_dim(records, 0);
    if (dim && *dim != d) {
      throw std::invalid_argument("mixed embedding dims: " + std::to_string(*dim) + " and " + std::to_string(d) +
                                  " (" + path.string() + ")");
    }
    dim = d;
    for (std::size_t start = 0; start < records.size(); start += kRowGroupSize) {
      const std::size_t n = std::min(kRowGroupSize, records.size() - start);
      const auto part = std::span(records).subspan(start, n);
      meta.write_row_group(record_columns(part, false, offset));
      for (const auto& r : part) {
        static_assert(std::endian::native == std::endian::little);
        vectors.write(reinterpret_cast<const char*>(r.embedding.data()),
                      static_cast<std::streamsize>(r.embedding.size() * sizeof(float)));
      }
      offset += static_cast<std::int64_t>(n * d);
    }
    manifest.count += records.size();
  }
  meta.close();
  vectors.close();
  if (!vectors) throw Error("cannot write " + (out_dir / "vectors.f32").string());
  manifest.dim = dim.value_or(0);
  const json j = {{"dtype", manifest.dtype}, {"dim", manifest.dim}, {"count", manifest.count}};
  write_text(out_dir / "raw_manifest.json", j.dump(2) + "\n");
  return manifest;
}

std::vector<EmbeddingRecord> reattach_raw(const fs::path& raw_dir) {
  RawManifest manifest;
  try {
    const json j = json::parse(read_text(raw_dir / "raw_manifest.json"));
    manifest.dtype = j.at("dtype").get<std::string>();
    manifest.dim = j.at("dim").get<std::size_t>();
    manifest.count = j.at("count").get<std::size_t>();
  } catch (const json::exception& e) {
    throw FormatError("bad raw manifest: " + std::string(e.what()));
  }
  if (manifest.dtype != "f32") throw FormatError("unsupported raw dtype '" + manifest.dtype + "'");

  const std::string bytes = read_text(raw_dir / "vectors.f32");
  if (bytes.size() != manifest.count * manifest.dim * sizeof(float)) {
    throw FormatError("vectors.f32 holds " + std::to_string(bytes.size()) + " bytes, manifest implies " +
                      std::to_string(manifest.count * manifest.dim * sizeof(float)));
  }
  const fs::path meta_path = raw_dir / "metadata.parquet";
  const Table t = read_table(meta_path, true);
  if (t.rows != manifest.count) throw FormatError("metadata rows disagree with the raw manifest count");

  std::vector<float> all(bytes.size() / sizeof(float));
  std::memcpy(all.data(), bytes.data(), bytes.size());
  std::vector<EmbeddingRecord> out;
  out.reserve(t.rows);
  const auto& offsets = t.vector_offset.get<std::int64_t>();
  for (std::size_t i = 0; i < t.rows; ++i) {
    const auto off = static_cast<std::size_t>(offsets[i]);
    if (offsets[i] < 0 || off + manifest.dim > all.size()) {
      throw FormatError("row " + std::to_string(i) + ": vector_offset out of range");
    }
    out.push_back(checked_record(raw_row(t, i, std::span(all).subspan(off, manifest.dim)), i, meta_path));
  }
  return out;
}

}  // namespace tomembed
