#include "tomembed/grid_raster.hpp"

#include <algorithm>
#include <cctype>
#include <charconv>
#include <chrono>
#include <cmath>
#include <cstring>
#include <map>
#include <stdexcept>

#include "tomembed/error.hpp"
#include "tomembed/geo.hpp"
#include "tomembed/parquet.hpp"
#include "tomembed/splitmix64.hpp"

namespace tomembed {
namespace {

constexpr std::string_view kBandPrefix = "band_";
constexpr std::string_view kBandFormatKey = "band_format";

bool iequals(std::string_view a, std::string_view b) {
  return a.size() == b.size() && std::equal(a.begin(), a.end(), b.begin(), [](char x, char y) {
           return std::tolower(static_cast<unsigned char>(x)) == std::tolower(static_cast<unsigned char>(y));
         });
}

void put_u16(std::vector<std::uint8_t>& out, std::uint16_t v) {
  out.push_back(static_cast<std::uint8_t>(v));
  out.push_back(static_cast<std::uint8_t>(v >> 8));
}

void put_u32(std::vector<std::uint8_t>& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}

std::uint32_t get_u32_le(const std::uint8_t* p) {
  return static_cast<std::uint32_t>(p[0]) | (static_cast<std::uint32_t>(p[1]) << 8) |
         (static_cast<std::uint32_t>(p[2]) << 16) | (static_cast<std::uint32_t>(p[3]) << 24);
}

BandPlane decode_raw_f32(std::span<const std::uint8_t> blob) {
  if (blob.size() < 8) throw FormatError("raw-f32: truncated header");
  BandPlane plane;
  plane.rows = get_u32_le(blob.data());
  plane.cols = get_u32_le(blob.data() + 4);
  const std::size_t n = plane.rows * plane.cols;
  if (blob.size() - 8 < n * 4) {
    throw FormatError("raw-f32: truncated payload (expected " + std::to_string(n * 4) + " bytes, got " +
                      std::to_string(blob.size() - 8) + ")");
  }
  if (blob.size() - 8 > n * 4) throw FormatError("raw-f32: trailing bytes after payload");
  plane.values.resize(n);
  std::memcpy(plane.values.data(), blob.data() + 8, n * 4);
  return plane;
}

std::vector<std::uint8_t> encode_raw_f32(const BandPlane& plane) {
  std::vector<std::uint8_t> out;
  out.reserve(8 + plane.values.size() * 4);
  put_u32(out, static_cast<std::uint32_t>(plane.rows));
  put_u32(out, static_cast<std::uint32_t>(plane.cols));
  const auto* p = reinterpret_cast<const std::uint8_t*>(plane.values.data());
  out.insert(out.end(), p, p + plane.values.size() * 4);
  return out;
}

// Baseline TIFF tags.
enum TiffTag : std::uint16_t {
  kImageWidth = 256,
  kImageLength = 257,
  kBitsPerSample = 258,
  kCompression = 259,
  kPhotometric = 262,
  kStripOffsets = 273,
  kSamplesPerPixel = 277,
  kRowsPerStrip = 278,
  kStripByteCounts = 279,
  kPlanarConfig = 284,
  kSampleFormat = 339,
};

std::vector<std::uint8_t> encode_tiff(const BandPlane& plane) {
  struct Entry {
    std::uint16_t tag, type;
    std::uint32_t value;
  };
  constexpr std::uint16_t kShort = 3, kLong = 4;
  const std::uint32_t data_bytes = static_cast<std::uint32_t>(plane.values.size() * 4);
  const std::vector<Entry> entries = {
      {kImageWidth, kLong, static_cast<std::uint32_t>(plane.cols)},
      {kImageLength, kLong, static_cast<std::uint32_t>(plane.rows)},
      {kBitsPerSample, kShort, 32},
      {kCompression, kShort, 1},
      {kPhotometric, kShort, 1},
      {kStripOffsets, kLong, 0},  // patched below
      {kSamplesPerPixel, kShort, 1},
      {kRowsPerStrip, kLong, static_cast<std::uint32_t>(plane.rows)},
      {kStripByteCounts, kLong, data_bytes},
      {kPlanarConfig, kShort, 1},
      {kSampleFormat, kShort, 3},
  };
  const std::uint32_t data_offset = 8 + 2 + static_cast<std::uint32_t>(entries.size()) * 12 + 4;

  std::vector<std::uint8_t> out = {'I', 'I', 42, 0};
  put_u32(out, 8);
  put_u16(out, static_cast<std::uint16_t>(entries.size()));
  for (const Entry& e : entries) {
    put_u16(out, e.tag);
    put_u16(out, e.type);
    put_u32(out, 1);
    const std::uint32_t v = e.tag == kStripOffsets ? data_offset : e.value;
    if (e.type == kShort) {
      put_u16(out, static_cast<std::uint16_t>(v));
      put_u16(out, 0);
    } else {
      put_u32(out, v);
    }
  }
  put_u32(out, 0);  // no further IFDs
  const auto* p = reinterpret_cast<const std::uint8_t*>(plane.values.data());
  out.insert(out.end(), p, p + data_bytes);
  return out;
}

BandPlane decode_tiff(std::span<const std::uint8_t> blob) {
  if (blob.size() < 8) throw FormatError("tiff: truncated header");
  bool little;
  if (blob[0] == 'I' && blob[1] == 'I') {
    little = true;
  } else if (blob[0] == 'M' && blob[1] == 'M') {
    little = false;
  } else {
    throw FormatError("tiff: bad byte-order mark");
  }
  auto u16 = [&](std::size_t off) -> std::uint32_t {
    if (off + 2 > blob.size()) throw FormatError("tiff: truncated payload");
    return little ? (blob[off] | (blob[off + 1] << 8)) : ((blob[off] << 8) | blob[off + 1]);
  };
  auto u32 = [&](std::size_t off) -> std::uint32_t {
    if (off + 4 > blob.size()) throw FormatError("tiff: truncated payload");
    std::uint32_t v = 0;
    for (std::size_t i = 0; i < 4; ++i) {
      v |= static_cast<std::uint32_t>(blob[off + (little ? i : 3 - i)]) << (8 * i);
    }
    return v;
  };
  if (u16(2) != 42) throw FormatError("tiff: bad magic (BigTIFF is not supported)");
  const std::size_t ifd = u32(4);
  const std::uint32_t count = u16(ifd);

  std::map<std::uint16_t, std::pair<std::uint32_t, std::uint32_t>> tags;  // tag -> (count, value)
  for (std::uint32_t i = 0; i < count; ++i) {
    const std::size_t e = ifd + 2 + i * 12;
    const auto tag = static_cast<std::uint16_t>(u16(e));
    const std::uint32_t type = u16(e + 2);
    const std::uint32_t n = u32(e + 4);
    std::uint32_t value;
    if (type == 3) {
      value = u16(e + 8);
    } else if (type == 4) {
      value = u32(e + 8);
    } else {
      value = u32(e + 8);
    }
    tags[tag] = {n, value};
  }
  auto tag_or = [&](std::uint16_t tag, std::uint32_t fallback) {
    auto it = tags.find(tag);
    return it == tags.end() ? fallback : it->second.second;
  };
  if (!tags.contains(kImageWidth) || !tags.contains(kImageLength) || !tags.contains(kStripOffsets)) {
    throw FormatError("tiff: missing required tags");
  }
  const std::uint32_t compression = tag_or(kCompression, 1);
  if (compression != 1) {
    throw FormatError("tiff: unsupported compression tag " + std::to_string(compression));
  }
  if (tag_or(kSamplesPerPixel, 1) != 1) throw FormatError("tiff: only single-band images are supported");
  if (tags[kStripOffsets].first != 1) throw FormatError("tiff: only single-strip images are supported");

  BandPlane plane;
  plane.cols = tag_or(kImageWidth, 0);
  plane.rows = tag_or(kImageLength, 0);
  const std::uint32_t bits = tag_or(kBitsPerSample, 1);
  const std::uint32_t format = tag_or(kSampleFormat, 1);
  const std::size_t n = plane.rows * plane.cols;
  const std::size_t bytes_per = bits / 8;
  if (!((format == 3 && bits == 32) || (format == 1 && (bits == 8 || bits == 16)) ||
        (format == 2 && bits == 16))) {
    throw FormatError("tiff: unsupported sample layout (format " + std::to_string(format) + ", " +
                      std::to_string(bits) + " bits)");
  }
  const std::size_t offset = tags[kStripOffsets].second;
  if (offset > blob.size() || blob.size() - offset < n * bytes_per) {
    throw FormatError("tiff: truncated payload");
  }
  plane.values.resize(n);
  const std::uint8_t* p = blob.data() + offset;
  for (std::size_t i = 0; i < n; ++i, p += bytes_per) {
    if (bits == 8) {
      plane.values[i] = static_cast<float>(p[0]);
    } else if (bits == 16) {
      const std::uint16_t raw = little ? static_cast<std::uint16_t>(p[0] | (p[1] << 8))
                                       : static_cast<std::uint16_t>((p[0] << 8) | p[1]);
      plane.values[i] = format == 2 ? static_cast<float>(static_cast<std::int16_t>(raw)) : static_cast<float>(raw);
    } else {
      std::uint32_t bits32 = 0;
      for (std::size_t b = 0; b < 4; ++b) bits32 |= static_cast<std::uint32_t>(p[little ? b : 3 - b]) << (8 * b);
      std::memcpy(&plane.values[i], &bits32, 4);
    }
  }
  return plane;
}

int parse_int(std::string_view s) {
  int v = 0;
  auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc{} || ptr != s.data() + s.size()) throw std::invalid_argument("bad integer");
  return v;
}

std::string require_string(const parquet::ColumnData& col, std::size_t row) {
  return col.get<std::string>().at(row);
}

std::int32_t read_int(const parquet::ColumnData& col, std::size_t row) {
  if (std::holds_alternative<std::vector<std::int32_t>>(col.values)) return col.get<std::int32_t>().at(row);
  const std::int64_t v = col.get<std::int64_t>().at(row);
  if (v < INT32_MIN || v > INT32_MAX) throw DecodeError("grid index out of int32 range");
  return static_cast<std::int32_t>(v);
}

}  // namespace

void AffineTransform::validate() const {
  if (!std::isfinite(origin_easting) || !std::isfinite(origin_northing) || !std::isfinite(pixel_size)) {
    throw std::invalid_argument("affine transform has non-finite values");
  }
  if (!(pixel_size > 0.0)) throw std::invalid_argument("pixel size must be positive");
}

int RasterCell::band_index(std::string_view name) const {
  for (std::size_t i = 0; i < band_names.size(); ++i) {
    if (iequals(band_names[i], name)) return static_cast<int>(i);
  }
  return -1;
}

void RasterCell::validate() const {
  if (bands.rows() != bands.cols()) throw std::invalid_argument("raster cell must be square");
  if (bands.rows() == 0) throw std::invalid_argument("raster cell is empty");
  if (bands.channels() != band_names.size()) {
    throw std::invalid_argument("band name count does not match channel count");
  }
  if (!bands.all_finite()) throw std::invalid_argument("raster cell has non-finite values");
  transform.validate();
}

bool ReferenceDecoder::supports(std::string_view format_id) const {
  return format_id == kRawF32 || format_id == kTiffUncompressed;
}

BandPlane ReferenceDecoder::decode(std::span<const std::uint8_t> blob, std::string_view format_id) const {
  return decode_band(blob, format_id);
}

std::shared_ptr<const RasterDecoder> reference_decoder() {
  static const auto decoder = std::make_shared<const ReferenceDecoder>();
  return decoder;
}

BandPlane decode_band(std::span<const std::uint8_t> blob, std::string_view format_id) {
  if (format_id == kRawF32) return decode_raw_f32(blob);
  if (format_id == kTiffUncompressed) return decode_tiff(blob);
  throw FormatError("unsupported band format '" + std::string(format_id) + "'");
}

std::vector<std::uint8_t> encode_band(const BandPlane& plane, std::string_view format_id) {
  if (plane.values.size() != plane.rows * plane.cols) {
    throw std::invalid_argument("band plane size does not match rows*cols");
  }
  if (format_id == kRawF32) return encode_raw_f32(plane);
  if (format_id == kTiffUncompressed) return encode_tiff(plane);
  throw FormatError("unsupported band format '" + std::string(format_id) + "'");
}

std::string normalize_timestamp(std::string_view text) {
  using namespace std::chrono;
  auto fail = [&]() -> std::string {
    throw std::invalid_argument("unrecognized timestamp '" + std::string(text) + "'");
  };
  std::string_view s = text;
  while (!s.empty() && std::isspace(static_cast<unsigned char>(s.back()))) s.remove_suffix(1);
  while (!s.empty() && std::isspace(static_cast<unsigned char>(s.front()))) s.remove_prefix(1);

  int Y, M, D, h, m, sec;
  std::size_t pos;
  try {
    if (s.size() >= 15 && s[8] == 'T' && s.find('-') == std::string_view::npos) {
      Y = parse_int(s.substr(0, 4));
      M = parse_int(s.substr(4, 2));
      D = parse_int(s.substr(6, 2));
      h = parse_int(s.substr(9, 2));
      m = parse_int(s.substr(11, 2));
      sec = parse_int(s.substr(13, 2));
      pos = 15;
    } else if (s.size() >= 19 && s[4] == '-' && s[7] == '-' && (s[10] == 'T' || s[10] == ' ') &&
               s[13] == ':' && s[16] == ':') {
      Y = parse_int(s.substr(0, 4));
      M = parse_int(s.substr(5, 2));
      D = parse_int(s.substr(8, 2));
      h = parse_int(s.substr(11, 2));
      m = parse_int(s.substr(14, 2));
      sec = parse_int(s.substr(17, 2));
      pos = 19;
    } else {
      return fail();
    }
  } catch (const std::invalid_argument&) {
    return fail();
  }
  if (pos < s.size() && s[pos] == '.') {
    ++pos;
    const std::size_t start = pos;
    while (pos < s.size() && std::isdigit(static_cast<unsigned char>(s[pos]))) ++pos;
    if (pos == start) return fail();
  }
  int offset_minutes = 0;
  const auto zone = s.substr(pos);
  if (zone.empty() || zone == "Z" || zone == "z") {
    // UTC
  } else if ((zone[0] == '+' || zone[0] == '-') && (zone.size() == 6 || zone.size() == 5)) {
    try {
      const int oh = parse_int(zone.substr(1, 2));
      const int om = parse_int(zone.substr(zone.size() == 6 ? 4 : 3, 2));
      if (zone.size() == 6 && zone[3] != ':') return fail();
      offset_minutes = (zone[0] == '-' ? -1 : 1) * (oh * 60 + om);
    } catch (const std::invalid_argument&) {
      return fail();
    }
  } else {
    return fail();
  }
  const year_month_day ymd{year{Y}, month{static_cast<unsigned>(M)}, day{static_cast<unsigned>(D)}};
  if (!ymd.ok() || h > 23 || m > 59 || sec > 60 || h < 0 || m < 0 || sec < 0) return fail();
  const sys_seconds t = sys_days{ymd} + hours{h} + minutes{m} + seconds{sec} - minutes{offset_minutes};
  const auto day_point = floor<days>(t);
  const year_month_day out{day_point};
  const hh_mm_ss tod{t - day_point};
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%04d-%02u-%02uT%02d:%02d:%02dZ", static_cast<int>(out.year()),
                static_cast<unsigned>(out.month()), static_cast<unsigned>(out.day()),
                static_cast<int>(tod.hours().count()), static_cast<int>(tod.minutes().count()),
                static_cast<int>(tod.seconds().count()));
  return buf;
}

RasterCell synth_cell(std::uint64_t seed, std::size_t size, std::size_t channels, std::string crs,
                      const AffineTransform& transform, std::vector<std::string> band_names) {
  if (size < 1 || channels < 1) throw std::invalid_argument("synth_cell: size and channels must be >= 1");
  if (band_names.empty()) {
    for (std::size_t c = 0; c < channels; ++c) band_names.push_back("b" + std::to_string(c));
  }
  if (band_names.size() != channels) throw std::invalid_argument("synth_cell: band name count mismatch");

  RasterCell cell;
  cell.bands = Block(channels, size, size);
  SplitMix64 rng(seed);
  for (float& v : cell.bands.values()) {
    v = static_cast<float>(rng.next() >> 40) * 0x1.0p-24f;
  }
  cell.band_names = std::move(band_names);
  cell.crs = std::move(crs);
  cell.transform = transform;
  cell.grid_cell = "synthetic-" + std::to_string(seed);
  cell.grid_row_u = static_cast<std::int32_t>(seed % 1000);
  cell.grid_col_r = static_cast<std::int32_t>((seed / 1000) % 1000);
  cell.product_id = "SYNTH_" + std::to_string(seed);
  cell.timestamp = "2024-01-01T00:00:00Z";
  return cell;
}

void write_source_rows(const std::filesystem::path& path, std::span<const std::string> band_names,
                       std::span<const SourceRow> rows, std::string_view format_id) {
  using parquet::ColumnData;
  using parquet::ColumnSchema;
  using parquet::PhysicalType;
  std::vector<ColumnSchema> schema = {
      {"grid_cell", PhysicalType::kByteArray, true, false},
      {"grid_row_u", PhysicalType::kInt32, false, false},
      {"grid_col_r", PhysicalType::kInt32, false, false},
      {"product_id", PhysicalType::kByteArray, true, false},
      {"timestamp", PhysicalType::kByteArray, true, false},
      {"crs", PhysicalType::kByteArray, true, false},
      {"transform", PhysicalType::kDouble, false, true},
  };
  for (const auto& name : band_names) {
    schema.push_back({std::string(kBandPrefix) + name, PhysicalType::kByteArray, false, false});
  }
  parquet::FileWriter writer(path, schema);
  writer.add_metadata(std::string(kBandFormatKey), std::string(format_id));
  for (const SourceRow& row : rows) {
    if (row.blobs.size() != band_names.size()) throw std::invalid_argument("source row band count mismatch");
    std::vector<ColumnData> cols;
    cols.push_back({std::vector<std::string>{row.grid_cell}, {}});
    cols.push_back({std::vector<std::int32_t>{row.grid_row_u}, {}});
    cols.push_back({std::vector<std::int32_t>{row.grid_col_r}, {}});
    cols.push_back({std::vector<std::string>{row.product_id}, {}});
    cols.push_back({std::vector<std::string>{row.timestamp}, {}});
    cols.push_back({std::vector<std::string>{row.crs}, {}});
    cols.push_back({std::vector<double>{row.transform.origin_easting, row.transform.origin_northing,
                                        row.transform.pixel_size},
                    {0, 3}});
    for (const auto& blob : row.blobs) {
      cols.push_back({std::vector<std::string>{std::string(blob.begin(), blob.end())}, {}});
    }
    writer.write_row_group(cols);
  }
  writer.close();
}

void write_source_archive(const std::filesystem::path& path, std::span<const RasterCell> cells,
                          std::string_view format_id) {
  std::vector<std::string> names = cells.empty() ? std::vector<std::string>{} : cells.front().band_names;
  std::vector<SourceRow> rows;
  rows.reserve(cells.size());
  for (const RasterCell& cell : cells) {
    if (cell.band_names != names) throw std::invalid_argument("source cells must share band names");
    SourceRow row{cell.grid_cell, cell.grid_row_u, cell.grid_col_r, cell.product_id,
                  cell.timestamp, cell.crs,        cell.transform,  {}};
    for (std::size_t c = 0; c < cell.bands.channels(); ++c) {
      const auto plane = cell.bands.plane(c);
      row.blobs.push_back(
          encode_band({cell.bands.rows(), cell.bands.cols(), {plane.begin(), plane.end()}}, format_id));
    }
    rows.push_back(std::move(row));
  }
  write_source_rows(path, names, rows, format_id);
}

SourceArchive::SourceArchive(SourceArchive&&) noexcept = default;
SourceArchive& SourceArchive::operator=(SourceArchive&&) noexcept = default;
SourceArchive::~SourceArchive() = default;

SourceArchive SourceArchive::open(const std::filesystem::path& path,
                                  std::shared_ptr<const RasterDecoder> decoder) {
  using parquet::PhysicalType;
  SourceArchive a;
  a.path_ = path;
  a.decoder_ = std::move(decoder);
  a.reader_ = std::make_unique<parquet::FileReader>(parquet::FileReader::open(path));
  const auto& reader = *a.reader_;

  auto column = [&](std::string_view name, std::initializer_list<PhysicalType> types, bool list) {
    auto idx = reader.column_index(name);
    if (!idx) throw SchemaError("source archive " + path.string() + ": missing column '" + std::string(name) + "'");
    const auto& sc = reader.schema()[*idx];
    if (std::find(types.begin(), types.end(), sc.type) == types.end() || sc.list != list) {
      throw SchemaError("source archive " + path.string() + ": column '" + std::string(name) + "' has wrong type");
    }
    return *idx;
  };
  a.columns_.grid_cell = column("grid_cell", {PhysicalType::kByteArray}, false);
  a.columns_.grid_row_u = column("grid_row_u", {PhysicalType::kInt32, PhysicalType::kInt64}, false);
  a.columns_.grid_col_r = column("grid_col_r", {PhysicalType::kInt32, PhysicalType::kInt64}, false);
  a.columns_.product_id = column("product_id", {PhysicalType::kByteArray}, false);
  a.columns_.timestamp = column("timestamp", {PhysicalType::kByteArray}, false);
  a.columns_.crs = column("crs", {PhysicalType::kByteArray}, false);
  a.columns_.transform = column("transform", {PhysicalType::kDouble}, true);
  for (std::size_t i = 0; i < reader.schema().size(); ++i) {
    const auto& sc = reader.schema()[i];
    if (sc.name.starts_with(kBandPrefix)) {
      if (sc.type != PhysicalType::kByteArray || sc.list) {
        throw SchemaError("source archive " + path.string() + ": band column '" + sc.name + "' must be binary");
      }
      a.columns_.bands.push_back(i);
      a.band_names_.push_back(sc.name.substr(kBandPrefix.size()));
    }
  }
  if (a.band_names_.empty() && reader.num_rows() > 0) {
    throw SchemaError("source archive " + path.string() + ": no band_<name> columns");
  }
  const auto format = reader.metadata_value(kBandFormatKey);
  if (!format) throw SchemaError("source archive " + path.string() + ": missing 'band_format' metadata");
  if (!a.decoder_->supports(*format)) {
    throw SchemaError("source archive " + path.string() + ": unsupported band format '" + *format + "'");
  }
  a.band_format_ = *format;

  for (std::size_t rg = 0; rg < reader.num_row_groups(); ++rg) {
    for (std::int64_t r = 0; r < reader.row_group_num_rows(rg); ++r) {
      a.row_locations_.emplace_back(rg, static_cast<std::size_t>(r));
    }
  }
  return a;
}

RasterCell SourceArchive::read(std::size_t row) const {
  const auto [rg, r] = row_locations_.at(row);
  const auto where = [&] { return path_.filename().string() + " row " + std::to_string(row); };
  try {
    RasterCell cell;
    cell.grid_cell = require_string(reader_->read_column(rg, columns_.grid_cell), r);
    cell.grid_row_u = read_int(reader_->read_column(rg, columns_.grid_row_u), r);
    cell.grid_col_r = read_int(reader_->read_column(rg, columns_.grid_col_r), r);
    cell.product_id = require_string(reader_->read_column(rg, columns_.product_id), r);
    cell.crs = require_string(reader_->read_column(rg, columns_.crs), r);
    if (!geo::is_utm_crs(cell.crs)) throw DecodeError("unknown CRS '" + cell.crs + "'");
    try {
      cell.timestamp = normalize_timestamp(require_string(reader_->read_column(rg, columns_.timestamp), r));
    } catch (const std::invalid_argument& e) {
      throw DecodeError(e.what());
    }
    const auto transform_col = reader_->read_column(rg, columns_.transform);
    const auto t = transform_col.list_at<double>(r);
    if (t.size() != 3) throw DecodeError("transform must have 3 elements");
    cell.transform = {t[0], t[1], t[2]};

    cell.band_names = band_names_;
    std::vector<float> values;
    std::size_t size = 0;
    for (std::size_t b = 0; b < columns_.bands.size(); ++b) {
      const auto col = reader_->read_column(rg, columns_.bands[b]);
      const std::string& blob = col.get<std::string>().at(r);
      BandPlane plane =
          decoder_->decode({reinterpret_cast<const std::uint8_t*>(blob.data()), blob.size()}, band_format_);
      if (plane.rows != plane.cols) throw DecodeError("band '" + band_names_[b] + "' is not square");
      if (b == 0) {
        size = plane.rows;
        values.reserve(size * size * columns_.bands.size());
      } else if (plane.rows != size) {
        throw DecodeError("band '" + band_names_[b] + "' size differs from the first band");
      }
      values.insert(values.end(), plane.values.begin(), plane.values.end());
    }
    cell.bands = Block(columns_.bands.size(), size, size, std::move(values));
    cell.validate();
    return cell;
  } catch (const DecodeError& e) {
    throw DecodeError(where() + ": " + e.what());
  } catch (const FormatError& e) {
    throw DecodeError(where() + ": malformed blob: " + e.what());
  } catch (const std::invalid_argument& e) {
    throw DecodeError(where() + ": " + e.what());
  }
}

}  // namespace tomembed
