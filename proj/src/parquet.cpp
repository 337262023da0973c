#include "tomembed/parquet.hpp"

#include <fcntl.h>
#include <sys/mman.h>
#include <sys/stat.h>
#include <unistd.h>
#include <zlib.h>

#include <algorithm>
#include <bit>
#include <cstring>
#include <fstream>
#include <limits>

#include "tomembed/error.hpp"

namespace tomembed::parquet {
namespace {

static_assert(std::endian::native == std::endian::little, "little-endian host required");

constexpr char kMagic[4] = {'P', 'A', 'R', '1'};
constexpr const char* kCreatedBy = "tomembed parquet writer 1.0";

// Thrift compact protocol type ids.
enum CType : std::uint8_t {
  kStop = 0,
  kTrue = 1,
  kFalse = 2,
  kByte = 3,
  kI16 = 4,
  kI32 = 5,
  kI64 = 6,
  kDouble = 7,
  kBinary = 8,
  kList = 9,
  kSet = 10,
  kMap = 11,
  kStruct = 12,
};

enum Repetition : std::int32_t { kRequired = 0, kOptional = 1, kRepeated = 2 };
enum ConvertedType : std::int32_t { kUtf8 = 0, kMapConverted = 1, kListConverted = 3 };
enum Encoding : std::int32_t {
  kPlain = 0,
  kPlainDictionary = 2,
  kRle = 3,
  kBitPacked = 4,
  kRleDictionary = 8,
};
enum Codec : std::int32_t { kUncompressed = 0, kSnappy = 1, kGzip = 2 };
enum PageType : std::int32_t { kDataPage = 0, kIndexPage = 1, kDictionaryPage = 2, kDataPageV2 = 3 };

// ---------------------------------------------------------------------------
// Thrift compact protocol

class CompactWriter {
 public:
  std::vector<std::uint8_t>& bytes() { return buf_; }

  void field_i32(std::int16_t id, std::int32_t v) {
    header(id, kI32);
    varint(zigzag(v));
  }
  void field_i64(std::int16_t id, std::int64_t v) {
    header(id, kI64);
    varint(zigzag(v));
  }
  void field_string(std::int16_t id, std::string_view s) {
    header(id, kBinary);
    string(s);
  }
  void field_bool(std::int16_t id, bool v) { header(id, v ? kTrue : kFalse); }
  void field_struct_begin(std::int16_t id) {
    header(id, kStruct);
    struct_begin();
  }
  void field_list_begin(std::int16_t id, std::uint8_t elem_type, std::size_t size) {
    header(id, kList);
    list_header(elem_type, size);
  }
  void struct_begin() { last_ids_.push_back(0); }
  void struct_end() {
    buf_.push_back(kStop);
    last_ids_.pop_back();
  }
  void elem_i32(std::int32_t v) { varint(zigzag(v)); }
  void string(std::string_view s) {
    varint(s.size());
    buf_.insert(buf_.end(), s.begin(), s.end());
  }

 private:
  static std::uint64_t zigzag(std::int64_t v) {
    return (static_cast<std::uint64_t>(v) << 1) ^ static_cast<std::uint64_t>(v >> 63);
  }
  void varint(std::uint64_t v) {
    while (v >= 0x80) {
      buf_.push_back(static_cast<std::uint8_t>(v | 0x80));
      v >>= 7;
    }
    buf_.push_back(static_cast<std::uint8_t>(v));
  }
  void header(std::int16_t id, std::uint8_t type) {
    const std::int16_t delta = static_cast<std::int16_t>(id - last_ids_.back());
    if (delta > 0 && delta <= 15) {
      buf_.push_back(static_cast<std::uint8_t>((delta << 4) | type));
    } else {
      buf_.push_back(type);
      varint(zigzag(id));
    }
    last_ids_.back() = id;
  }
  void list_header(std::uint8_t elem_type, std::size_t size) {
    if (size < 15) {
      buf_.push_back(static_cast<std::uint8_t>((size << 4) | elem_type));
    } else {
      buf_.push_back(static_cast<std::uint8_t>(0xF0 | elem_type));
      varint(size);
    }
  }

  std::vector<std::uint8_t> buf_;
  std::vector<std::int16_t> last_ids_{0};
};

class CompactReader {
 public:
  explicit CompactReader(std::span<const std::uint8_t> data) : data_(data) {}

  struct Field {
    std::int16_t id;
    std::uint8_t type;
  };

  std::size_t position() const { return pos_; }

  void struct_begin() { last_ids_.push_back(0); }
  void struct_end() { last_ids_.pop_back(); }

  Field field() {
    const std::uint8_t b = byte();
    const std::uint8_t type = b & 0x0F;
    if (type == kStop) return {0, kStop};
    std::int16_t id;
    if ((b >> 4) != 0) {
      id = static_cast<std::int16_t>(last_ids_.back() + (b >> 4));
    } else {
      id = static_cast<std::int16_t>(unzigzag(varint()));
    }
    last_ids_.back() = id;
    return {id, type};
  }

  std::int32_t i32() { return static_cast<std::int32_t>(unzigzag(varint())); }
  std::int64_t i64() { return unzigzag(varint()); }
  std::string string() {
    const std::uint64_t n = varint();
    need(n);
    std::string s(reinterpret_cast<const char*>(data_.data() + pos_), n);
    pos_ += n;
    return s;
  }
  std::pair<std::uint8_t, std::size_t> list_header() {
    const std::uint8_t b = byte();
    std::size_t size = b >> 4;
    if (size == 15) size = varint();
    return {static_cast<std::uint8_t>(b & 0x0F), size};
  }

  void skip(std::uint8_t type) {
    switch (type) {
      case kTrue:
      case kFalse:
        return;
      case kByte:
        byte();
        return;
      case kI16:
      case kI32:
      case kI64:
        varint();
        return;
      case kDouble:
        need(8);
        pos_ += 8;
        return;
      case kBinary: {
        const std::uint64_t n = varint();
        need(n);
        pos_ += n;
        return;
      }
      case kList:
      case kSet: {
        auto [elem, size] = list_header();
        for (std::size_t i = 0; i < size; ++i) skip_element(elem);
        return;
      }
      case kMap: {
        const std::uint64_t size = varint();
        if (size == 0) return;
        const std::uint8_t kv = byte();
        for (std::uint64_t i = 0; i < size; ++i) {
          skip_element(kv >> 4);
          skip_element(kv & 0x0F);
        }
        return;
      }
      case kStruct: {
        struct_begin();
        for (Field f = field(); f.type != kStop; f = field()) skip(f.type);
        struct_end();
        return;
      }
      default:
        throw FormatError("parquet: corrupt thrift type " + std::to_string(type));
    }
  }

 private:
  void skip_element(std::uint8_t type) {
    // Booleans inside containers occupy one byte.
    if (type == kTrue || type == kFalse) {
      byte();
    } else {
      skip(type);
    }
  }
  void need(std::uint64_t n) const {
    if (n > data_.size() - pos_) throw FormatError("parquet: truncated thrift metadata");
  }
  std::uint8_t byte() {
    need(1);
    return data_[pos_++];
  }
  std::uint64_t varint() {
    std::uint64_t v = 0;
    for (int shift = 0; shift < 64; shift += 7) {
      const std::uint8_t b = byte();
      v |= static_cast<std::uint64_t>(b & 0x7F) << shift;
      if ((b & 0x80) == 0) return v;
    }
    throw FormatError("parquet: varint too long");
  }
  static std::int64_t unzigzag(std::uint64_t v) {
    return static_cast<std::int64_t>(v >> 1) ^ -static_cast<std::int64_t>(v & 1);
  }

  std::span<const std::uint8_t> data_;
  std::size_t pos_ = 0;
  std::vector<std::int16_t> last_ids_{0};
};

// ---------------------------------------------------------------------------
// RLE / bit-packed hybrid levels

void put_u32(std::vector<std::uint8_t>& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}

void put_varint(std::vector<std::uint8_t>& out, std::uint64_t v) {
  while (v >= 0x80) {
    out.push_back(static_cast<std::uint8_t>(v | 0x80));
    v >>= 7;
  }
  out.push_back(static_cast<std::uint8_t>(v));
}

// Encodes levels of bit width 1 as RLE runs only.
std::vector<std::uint8_t> encode_levels_rle(std::span<const std::uint8_t> levels) {
  std::vector<std::uint8_t> out;
  std::size_t i = 0;
  while (i < levels.size()) {
    std::size_t j = i;
    while (j < levels.size() && levels[j] == levels[i]) ++j;
    put_varint(out, static_cast<std::uint64_t>(j - i) << 1);
    out.push_back(levels[i]);
    i = j;
  }
  return out;
}

int bit_width(std::uint32_t max_value) {
  int w = 0;
  while ((max_value >> w) != 0) ++w;
  return w;
}

class ByteCursor {
 public:
  explicit ByteCursor(std::span<const std::uint8_t> data) : data_(data) {}
  std::size_t remaining() const { return data_.size() - pos_; }
  std::span<const std::uint8_t> take(std::size_t n) {
    if (n > remaining()) throw FormatError("parquet: truncated page");
    auto s = data_.subspan(pos_, n);
    pos_ += n;
    return s;
  }
  std::uint32_t u32() {
    auto s = take(4);
    return static_cast<std::uint32_t>(s[0]) | (static_cast<std::uint32_t>(s[1]) << 8) |
           (static_cast<std::uint32_t>(s[2]) << 16) | (static_cast<std::uint32_t>(s[3]) << 24);
  }
  std::uint8_t u8() { return take(1)[0]; }
  std::uint64_t varint() {
    std::uint64_t v = 0;
    for (int shift = 0; shift < 64; shift += 7) {
      const std::uint8_t b = u8();
      v |= static_cast<std::uint64_t>(b & 0x7F) << shift;
      if ((b & 0x80) == 0) return v;
    }
    throw FormatError("parquet: varint too long");
  }
  std::span<const std::uint8_t> rest() { return take(remaining()); }

 private:
  std::span<const std::uint8_t> data_;
  std::size_t pos_ = 0;
};

void decode_hybrid(std::span<const std::uint8_t> data, int width, std::size_t count,
                   std::vector<std::uint32_t>& out) {
  out.clear();
  out.reserve(count);
  if (width == 0) {
    out.assign(count, 0);
    return;
  }
  if (width > 32) throw FormatError("parquet: invalid bit width");
  ByteCursor cur(data);
  const std::size_t value_bytes = static_cast<std::size_t>((width + 7) / 8);
  while (out.size() < count) {
    const std::uint64_t header = cur.varint();
    if (header & 1) {
      const std::size_t groups = header >> 1;
      auto bytes = cur.take(groups * static_cast<std::size_t>(width));
      const std::size_t n = groups * 8;
      std::uint64_t bitpos = 0;
      for (std::size_t i = 0; i < n && out.size() < count; ++i) {
        std::uint32_t v = 0;
        for (int b = 0; b < width; ++b, ++bitpos) {
          if ((bytes[bitpos >> 3] >> (bitpos & 7)) & 1) v |= 1u << b;
        }
        out.push_back(v);
      }
    } else {
      const std::size_t run = header >> 1;
      auto bytes = cur.take(value_bytes);
      std::uint32_t v = 0;
      for (std::size_t b = 0; b < value_bytes; ++b) v |= static_cast<std::uint32_t>(bytes[b]) << (8 * b);
      const std::size_t n = std::min(run, count - out.size());
      out.insert(out.end(), n, v);
      if (run == 0) throw FormatError("parquet: zero-length RLE run");
    }
  }
}

// ---------------------------------------------------------------------------
// PLAIN values

template <typename T>
void append_plain(std::vector<std::uint8_t>& out, const std::vector<T>& v, std::size_t begin,
                  std::size_t end) {
  if constexpr (std::is_same_v<T, std::string>) {
    for (std::size_t i = begin; i < end; ++i) {
      put_u32(out, static_cast<std::uint32_t>(v[i].size()));
      out.insert(out.end(), v[i].begin(), v[i].end());
    }
  } else {
    const auto* p = reinterpret_cast<const std::uint8_t*>(v.data() + begin);
    out.insert(out.end(), p, p + (end - begin) * sizeof(T));
  }
}

ValueVector make_vector(PhysicalType type) {
  switch (type) {
    case PhysicalType::kInt32:
      return std::vector<std::int32_t>{};
    case PhysicalType::kInt64:
      return std::vector<std::int64_t>{};
    case PhysicalType::kFloat:
      return std::vector<float>{};
    case PhysicalType::kDouble:
      return std::vector<double>{};
    case PhysicalType::kByteArray:
      return std::vector<std::string>{};
    default:
      throw FormatError("parquet: unsupported physical type " + std::string(to_string(type)));
  }
}

void decode_plain(std::span<const std::uint8_t> data, std::size_t count, ValueVector& out) {
  std::visit(
      [&](auto& vec) {
        using T = typename std::decay_t<decltype(vec)>::value_type;
        if constexpr (std::is_same_v<T, std::string>) {
          ByteCursor cur(data);
          for (std::size_t i = 0; i < count; ++i) {
            const std::uint32_t n = cur.u32();
            auto s = cur.take(n);
            vec.emplace_back(reinterpret_cast<const char*>(s.data()), s.size());
          }
        } else {
          if (count * sizeof(T) > data.size()) throw FormatError("parquet: truncated PLAIN values");
          const std::size_t old = vec.size();
          vec.resize(old + count);
          std::memcpy(vec.data() + old, data.data(), count * sizeof(T));
        }
      },
      out);
}

void append_from_dictionary(const ValueVector& dict, std::span<const std::uint32_t> indices,
                            ValueVector& out) {
  std::visit(
      [&](auto& vec) {
        using V = std::decay_t<decltype(vec)>;
        const V& d = std::get<V>(dict);
        for (std::uint32_t idx : indices) {
          if (idx >= d.size()) throw FormatError("parquet: dictionary index out of range");
          vec.push_back(d[idx]);
        }
      },
      out);
}

std::size_t value_count(const ValueVector& v) {
  return std::visit([](const auto& vec) { return vec.size(); }, v);
}

std::vector<std::uint8_t> gunzip(std::span<const std::uint8_t> in, std::size_t expected) {
  std::vector<std::uint8_t> out(expected);
  z_stream zs{};
  if (inflateInit2(&zs, 15 + 32) != Z_OK) throw FormatError("parquet: zlib init failed");
  zs.next_in = const_cast<Bytef*>(in.data());
  zs.avail_in = static_cast<uInt>(in.size());
  zs.next_out = out.data();
  zs.avail_out = static_cast<uInt>(out.size());
  const int rc = inflate(&zs, Z_FINISH);
  const std::size_t produced = zs.total_out;
  inflateEnd(&zs);
  if (rc != Z_STREAM_END || produced != expected) throw FormatError("parquet: corrupt GZIP page");
  return out;
}

// ---------------------------------------------------------------------------
// Thrift metadata structs (only the fields we use)

struct SchemaElement {
  std::optional<std::int32_t> type;
  std::optional<std::int32_t> repetition;
  std::string name;
  std::int32_t num_children = 0;
  std::optional<std::int32_t> converted_type;
  bool logical_string = false;
  bool logical_list = false;
};

struct ColumnMeta {
  std::int32_t type = 0;
  std::int32_t codec = 0;
  std::int64_t num_values = 0;
  std::int64_t total_compressed_size = 0;
  std::int64_t data_page_offset = 0;
  std::optional<std::int64_t> dictionary_page_offset;
};

struct RowGroupMeta {
  std::vector<ColumnMeta> columns;
  std::int64_t num_rows = 0;
};

struct PageHeader {
  std::int32_t type = 0;
  std::int32_t uncompressed_size = 0;
  std::int32_t compressed_size = 0;
  std::int32_t num_values = 0;
  std::int32_t encoding = 0;
  // v2 only
  std::int32_t def_bytes = 0;
  std::int32_t rep_bytes = 0;
  bool v2_compressed = true;
};

void require(CompactReader::Field f, std::uint8_t type) {
  if (f.type != type) throw FormatError("parquet: unexpected thrift field type");
}

void parse_logical_type(CompactReader& r, SchemaElement& el) {
  r.struct_begin();
  for (auto f = r.field(); f.type != kStop; f = r.field()) {
    if (f.id == 1 && f.type == kStruct) el.logical_string = true;
    if (f.id == 3 && f.type == kStruct) el.logical_list = true;
    r.skip(f.type);
  }
  r.struct_end();
}

SchemaElement parse_schema_element(CompactReader& r) {
  SchemaElement el;
  r.struct_begin();
  for (auto f = r.field(); f.type != kStop; f = r.field()) {
    switch (f.id) {
      case 1:
        require(f, kI32);
        el.type = r.i32();
        break;
      case 3:
        require(f, kI32);
        el.repetition = r.i32();
        break;
      case 4:
        require(f, kBinary);
        el.name = r.string();
        break;
      case 5:
        require(f, kI32);
        el.num_children = r.i32();
        break;
      case 6:
        require(f, kI32);
        el.converted_type = r.i32();
        break;
      case 10:
        require(f, kStruct);
        parse_logical_type(r, el);
        break;
      default:
        r.skip(f.type);
    }
  }
  r.struct_end();
  return el;
}

ColumnMeta parse_column_meta(CompactReader& r) {
  ColumnMeta m;
  r.struct_begin();
  for (auto f = r.field(); f.type != kStop; f = r.field()) {
    switch (f.id) {
      case 1:
        m.type = r.i32();
        break;
      case 4:
        m.codec = r.i32();
        break;
      case 5:
        m.num_values = r.i64();
        break;
      case 7:
        m.total_compressed_size = r.i64();
        break;
      case 9:
        m.data_page_offset = r.i64();
        break;
      case 11:
        m.dictionary_page_offset = r.i64();
        break;
      default:
        r.skip(f.type);
    }
  }
  r.struct_end();
  return m;
}

ColumnMeta parse_column_chunk(CompactReader& r) {
  std::optional<ColumnMeta> meta;
  r.struct_begin();
  for (auto f = r.field(); f.type != kStop; f = r.field()) {
    if (f.id == 3 && f.type == kStruct) {
      meta = parse_column_meta(r);
    } else if (f.id == 1 && f.type == kBinary) {
      if (!r.string().empty()) throw FormatError("parquet: external column chunks are not supported");
    } else {
      r.skip(f.type);
    }
  }
  r.struct_end();
  if (!meta) throw FormatError("parquet: column chunk without metadata");
  return *meta;
}

RowGroupMeta parse_row_group(CompactReader& r) {
  RowGroupMeta rg;
  r.struct_begin();
  for (auto f = r.field(); f.type != kStop; f = r.field()) {
    if (f.id == 1 && f.type == kList) {
      auto [elem, size] = r.list_header();
      if (elem != kStruct) throw FormatError("parquet: bad row group column list");
      for (std::size_t i = 0; i < size; ++i) rg.columns.push_back(parse_column_chunk(r));
    } else if (f.id == 3 && f.type == kI64) {
      rg.num_rows = r.i64();
    } else {
      r.skip(f.type);
    }
  }
  r.struct_end();
  return rg;
}

std::pair<std::string, std::string> parse_key_value(CompactReader& r) {
  std::pair<std::string, std::string> kv;
  r.struct_begin();
  for (auto f = r.field(); f.type != kStop; f = r.field()) {
    if (f.id == 1 && f.type == kBinary) {
      kv.first = r.string();
    } else if (f.id == 2 && f.type == kBinary) {
      kv.second = r.string();
    } else {
      r.skip(f.type);
    }
  }
  r.struct_end();
  return kv;
}

struct FileMeta {
  std::vector<SchemaElement> schema;
  std::int64_t num_rows = 0;
  std::vector<RowGroupMeta> row_groups;
  KeyValueMetadata key_values;
};

FileMeta parse_file_meta(std::span<const std::uint8_t> bytes) {
  CompactReader r(bytes);
  FileMeta m;
  r.struct_begin();
  for (auto f = r.field(); f.type != kStop; f = r.field()) {
    switch (f.id) {
      case 2: {
        require(f, kList);
        auto [elem, size] = r.list_header();
        for (std::size_t i = 0; i < size; ++i) m.schema.push_back(parse_schema_element(r));
        break;
      }
      case 3:
        m.num_rows = r.i64();
        break;
      case 4: {
        require(f, kList);
        auto [elem, size] = r.list_header();
        for (std::size_t i = 0; i < size; ++i) m.row_groups.push_back(parse_row_group(r));
        break;
      }
      case 5: {
        require(f, kList);
        auto [elem, size] = r.list_header();
        for (std::size_t i = 0; i < size; ++i) m.key_values.push_back(parse_key_value(r));
        break;
      }
      default:
        r.skip(f.type);
    }
  }
  r.struct_end();
  return m;
}

PageHeader parse_page_header(CompactReader& r) {
  PageHeader h;
  r.struct_begin();
  for (auto f = r.field(); f.type != kStop; f = r.field()) {
    switch (f.id) {
      case 1:
        h.type = r.i32();
        break;
      case 2:
        h.uncompressed_size = r.i32();
        break;
      case 3:
        h.compressed_size = r.i32();
        break;
      case 5:  // DataPageHeader
      case 7:  // DictionaryPageHeader
        r.struct_begin();
        for (auto g = r.field(); g.type != kStop; g = r.field()) {
          if (g.id == 1 && g.type == kI32) {
            h.num_values = r.i32();
          } else if (g.id == 2 && g.type == kI32) {
            h.encoding = r.i32();
          } else {
            r.skip(g.type);
          }
        }
        r.struct_end();
        break;
      case 8:  // DataPageHeaderV2
        r.struct_begin();
        for (auto g = r.field(); g.type != kStop; g = r.field()) {
          switch (g.id) {
            case 1:
              h.num_values = r.i32();
              break;
            case 4:
              h.encoding = r.i32();
              break;
            case 5:
              h.def_bytes = r.i32();
              break;
            case 6:
              h.rep_bytes = r.i32();
              break;
            case 7:
              h.v2_compressed = (g.type == kTrue);
              break;
            default:
              r.skip(g.type);
          }
        }
        r.struct_end();
        break;
      default:
        r.skip(f.type);
    }
  }
  r.struct_end();
  return h;
}

// ---------------------------------------------------------------------------

class MappedFile {
 public:
  explicit MappedFile(const std::filesystem::path& path) {
    fd_ = ::open(path.c_str(), O_RDONLY | O_CLOEXEC);
    if (fd_ < 0) throw Error("cannot open " + path.string() + ": " + std::strerror(errno));
    struct stat st {};
    if (::fstat(fd_, &st) != 0) {
      ::close(fd_);
      throw Error("cannot stat " + path.string());
    }
    size_ = static_cast<std::size_t>(st.st_size);
    if (size_ > 0) {
      void* p = ::mmap(nullptr, size_, PROT_READ, MAP_PRIVATE, fd_, 0);
      if (p == MAP_FAILED) {
        ::close(fd_);
        throw Error("cannot map " + path.string());
      }
      data_ = static_cast<const std::uint8_t*>(p);
    }
  }
  ~MappedFile() {
    if (data_ != nullptr) ::munmap(const_cast<std::uint8_t*>(data_), size_);
    if (fd_ >= 0) ::close(fd_);
  }
  MappedFile(const MappedFile&) = delete;
  MappedFile& operator=(const MappedFile&) = delete;

  std::span<const std::uint8_t> bytes() const { return {data_, size_}; }

 private:
  int fd_ = -1;
  const std::uint8_t* data_ = nullptr;
  std::size_t size_ = 0;
};

struct LeafColumn {
  ColumnSchema schema;
  std::size_t leaf_index = 0;  // position in row-group column chunk list
  int max_def = 0;
  int max_rep = 0;
  int list_def = 0;  // definition level at which a list element exists
};

}  // namespace

std::string_view to_string(PhysicalType type) {
  switch (type) {
    case PhysicalType::kBoolean:
      return "BOOLEAN";
    case PhysicalType::kInt32:
      return "INT32";
    case PhysicalType::kInt64:
      return "INT64";
    case PhysicalType::kInt96:
      return "INT96";
    case PhysicalType::kFloat:
      return "FLOAT";
    case PhysicalType::kDouble:
      return "DOUBLE";
    case PhysicalType::kByteArray:
      return "BYTE_ARRAY";
    case PhysicalType::kFixedLenByteArray:
      return "FIXED_LEN_BYTE_ARRAY";
  }
  return "UNKNOWN";
}

std::size_t ColumnData::num_values() const { return value_count(values); }

std::size_t ColumnData::num_rows() const {
  if (!offsets.empty()) return offsets.size() - 1;
  return num_values();
}

// ---------------------------------------------------------------------------
// Writer

struct FileWriter::Impl {
  std::filesystem::path path;
  std::ofstream out;
  std::vector<ColumnSchema> schema;
  KeyValueMetadata metadata;
  std::vector<std::uint8_t> row_groups;  // serialized RowGroup structs
  std::size_t row_group_count = 0;
  std::int64_t num_rows = 0;
  std::uint64_t offset = 0;
  bool closed = false;

  void write(std::span<const std::uint8_t> bytes) {
    out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw Error("write failed: " + path.string());
    offset += bytes.size();
  }
};

FileWriter::FileWriter(const std::filesystem::path& path, std::vector<ColumnSchema> schema)
    : impl_(std::make_unique<Impl>()) {
  for (const auto& c : schema) {
    make_vector(c.type);  // rejects unsupported physical types
    if (c.utf8 && c.type != PhysicalType::kByteArray) {
      throw std::invalid_argument("parquet: UTF8 annotation requires BYTE_ARRAY");
    }
  }
  impl_->path = path;
  impl_->schema = std::move(schema);
  impl_->out.open(path, std::ios::binary | std::ios::trunc);
  if (!impl_->out) throw Error("cannot create " + path.string());
  impl_->write(std::span(reinterpret_cast<const std::uint8_t*>(kMagic), 4));
}

FileWriter::~FileWriter() {
  if (impl_ && !impl_->closed) {
    try {
      close();
    } catch (...) {
    }
  }
}

const std::vector<ColumnSchema>& FileWriter::schema() const { return impl_->schema; }

void FileWriter::add_metadata(std::string key, std::string value) {
  impl_->metadata.emplace_back(std::move(key), std::move(value));
}

void FileWriter::write_row_group(std::span<const ColumnData> columns) {
  auto& im = *impl_;
  if (im.closed) throw std::logic_error("parquet: writer already closed");
  if (columns.size() != im.schema.size()) throw std::invalid_argument("parquet: column count mismatch");
  const std::size_t rows = columns.empty() ? 0 : columns[0].num_rows();

  CompactWriter rg;
  rg.struct_begin();
  rg.field_list_begin(1, kStruct, columns.size());
  std::int64_t total_bytes = 0;

  for (std::size_t ci = 0; ci < columns.size(); ++ci) {
    const ColumnSchema& sc = im.schema[ci];
    const ColumnData& col = columns[ci];
    if (col.values.index() != make_vector(sc.type).index()) {
      throw std::invalid_argument("parquet: column '" + sc.name + "' has wrong element type");
    }
    if (col.num_rows() != rows) throw std::invalid_argument("parquet: ragged row group");
    if (sc.list != !col.offsets.empty()) {
      throw std::invalid_argument("parquet: column '" + sc.name + "' list shape mismatch");
    }

    std::vector<std::uint8_t> page;
    std::size_t level_count = rows;
    if (sc.list) {
      std::vector<std::uint8_t> rep, def;
      for (std::size_t r = 0; r < rows; ++r) {
        const auto n = col.offsets[r + 1] - col.offsets[r];
        if (n == 0) {
          rep.push_back(0);
          def.push_back(0);
        }
        for (std::int64_t j = 0; j < n; ++j) {
          rep.push_back(j == 0 ? 0 : 1);
          def.push_back(1);
        }
      }
      level_count = rep.size();
      auto rep_enc = encode_levels_rle(rep);
      auto def_enc = encode_levels_rle(def);
      put_u32(page, static_cast<std::uint32_t>(rep_enc.size()));
      page.insert(page.end(), rep_enc.begin(), rep_enc.end());
      put_u32(page, static_cast<std::uint32_t>(def_enc.size()));
      page.insert(page.end(), def_enc.begin(), def_enc.end());
    }
    std::visit([&](const auto& vec) { append_plain(page, vec, 0, vec.size()); }, col.values);
    if (page.size() > static_cast<std::size_t>(std::numeric_limits<std::int32_t>::max())) {
      throw Error("parquet: column chunk exceeds 2 GiB; use smaller row groups");
    }

    CompactWriter ph;
    ph.struct_begin();
    ph.field_i32(1, kDataPage);
    ph.field_i32(2, static_cast<std::int32_t>(page.size()));
    ph.field_i32(3, static_cast<std::int32_t>(page.size()));
    ph.field_struct_begin(5);
    ph.field_i32(1, static_cast<std::int32_t>(level_count));
    ph.field_i32(2, kPlain);
    ph.field_i32(3, kRle);
    ph.field_i32(4, kRle);
    ph.struct_end();
    ph.struct_end();

    const std::uint64_t chunk_offset = im.offset;
    im.write(ph.bytes());
    im.write(page);
    const auto chunk_size = static_cast<std::int64_t>(ph.bytes().size() + page.size());
    total_bytes += chunk_size;

    rg.struct_begin();  // ColumnChunk
    rg.field_i64(2, static_cast<std::int64_t>(chunk_offset));
    rg.field_struct_begin(3);  // ColumnMetaData
    rg.field_i32(1, static_cast<std::int32_t>(sc.type));
    rg.field_list_begin(2, kI32, 2);
    rg.elem_i32(kPlain);
    rg.elem_i32(kRle);
    if (sc.list) {
      rg.field_list_begin(3, kBinary, 3);
      rg.string(sc.name);
      rg.string("list");
      rg.string("element");
    } else {
      rg.field_list_begin(3, kBinary, 1);
      rg.string(sc.name);
    }
    rg.field_i32(4, kUncompressed);
    rg.field_i64(5, static_cast<std::int64_t>(level_count));
    rg.field_i64(6, chunk_size);
    rg.field_i64(7, chunk_size);
    rg.field_i64(9, static_cast<std::int64_t>(chunk_offset));
    rg.struct_end();
    rg.struct_end();
  }
  rg.field_i64(2, total_bytes);
  rg.field_i64(3, static_cast<std::int64_t>(rows));
  rg.struct_end();

  im.row_groups.insert(im.row_groups.end(), rg.bytes().begin(), rg.bytes().end());
  ++im.row_group_count;
  im.num_rows += static_cast<std::int64_t>(rows);
}

void FileWriter::close() {
  auto& im = *impl_;
  if (im.closed) return;
  im.closed = true;

  std::size_t schema_nodes = 1;
  for (const auto& c : im.schema) schema_nodes += c.list ? 3 : 1;

  CompactWriter fm;
  fm.struct_begin();
  fm.field_i32(1, 1);
  fm.field_list_begin(2, kStruct, schema_nodes);
  fm.struct_begin();
  fm.field_string(4, "schema");
  fm.field_i32(5, static_cast<std::int32_t>(im.schema.size()));
  fm.struct_end();
  auto leaf = [&fm](const ColumnSchema& c, std::string_view name) {
    fm.struct_begin();
    fm.field_i32(1, static_cast<std::int32_t>(c.type));
    fm.field_i32(3, kRequired);
    fm.field_string(4, name);
    if (c.utf8) {
      fm.field_i32(6, kUtf8);
      fm.field_struct_begin(10);
      fm.field_struct_begin(1);
      fm.struct_end();
      fm.struct_end();
    }
    fm.struct_end();
  };
  for (const auto& c : im.schema) {
    if (!c.list) {
      leaf(c, c.name);
      continue;
    }
    fm.struct_begin();
    fm.field_i32(3, kRequired);
    fm.field_string(4, c.name);
    fm.field_i32(5, 1);
    fm.field_i32(6, kListConverted);
    fm.field_struct_begin(10);
    fm.field_struct_begin(3);
    fm.struct_end();
    fm.struct_end();
    fm.struct_end();
    fm.struct_begin();
    fm.field_i32(3, kRepeated);
    fm.field_string(4, "list");
    fm.field_i32(5, 1);
    fm.struct_end();
    leaf(c, "element");
  }
  fm.field_i64(3, im.num_rows);
  fm.field_list_begin(4, kStruct, im.row_group_count);
  fm.bytes().insert(fm.bytes().end(), im.row_groups.begin(), im.row_groups.end());
  if (!im.metadata.empty()) {
    fm.field_list_begin(5, kStruct, im.metadata.size());
    for (const auto& [k, v] : im.metadata) {
      fm.struct_begin();
      fm.field_string(1, k);
      fm.field_string(2, v);
      fm.struct_end();
    }
  }
  fm.field_string(6, kCreatedBy);
  fm.struct_end();

  im.write(fm.bytes());
  std::vector<std::uint8_t> tail;
  put_u32(tail, static_cast<std::uint32_t>(fm.bytes().size()));
  tail.insert(tail.end(), kMagic, kMagic + 4);
  im.write(tail);
  im.out.close();
  if (!im.out) throw Error("close failed: " + im.path.string());
}

// ---------------------------------------------------------------------------
// Reader

struct FileReader::Impl {
  std::filesystem::path path;
  std::unique_ptr<MappedFile> file;
  FileMeta meta;
  std::vector<LeafColumn> leaves;
  std::vector<ColumnSchema> schema;
  std::vector<std::string> unsupported;

  void build_schema();
  ColumnData read_chunk(std::size_t row_group, const LeafColumn& leaf) const;
};

void FileReader::Impl::build_schema() {
  const auto& s = meta.schema;
  if (s.empty()) throw FormatError("parquet: empty schema");
  std::size_t pos = 1;
  std::size_t leaf_counter = 0;

  // Counts leaves under node `i` and returns the index past its subtree.
  auto skip_subtree = [&](auto&& self, std::size_t i, std::size_t& leaves_out) -> std::size_t {
    if (i >= s.size()) throw FormatError("parquet: truncated schema");
    if (s[i].num_children == 0) {
      ++leaves_out;
      return i + 1;
    }
    std::size_t next = i + 1;
    for (int c = 0; c < s[i].num_children; ++c) next = self(self, next, leaves_out);
    return next;
  };

  auto def_inc = [](const SchemaElement& e) {
    return e.repetition.value_or(kRequired) == kRequired ? 0 : 1;
  };

  for (int top = 0; top < s[0].num_children; ++top) {
    const SchemaElement& node = s.at(pos);
    std::size_t sub_leaves = 0;
    const std::size_t next = skip_subtree(skip_subtree, pos, sub_leaves);
    LeafColumn leaf;
    leaf.leaf_index = leaf_counter;
    leaf.schema.name = node.name;
    bool ok = false;

    if (node.num_children == 0) {
      if (node.repetition.value_or(kRequired) != kRepeated && node.type) {
        leaf.schema.type = static_cast<PhysicalType>(*node.type);
        leaf.schema.utf8 = node.logical_string || node.converted_type == kUtf8;
        leaf.max_def = def_inc(node);
        ok = true;
      }
    } else if ((node.converted_type == kListConverted || node.logical_list) && node.num_children == 1 &&
               sub_leaves == 1) {
      const SchemaElement& rep = s.at(pos + 1);
      if (rep.repetition.value_or(kRequired) == kRepeated) {
        const SchemaElement* elem = nullptr;
        int def = def_inc(node) + 1;
        leaf.list_def = def;
        if (rep.num_children == 0) {
          elem = &rep;  // legacy two-level list
        } else if (rep.num_children == 1 && s.at(pos + 2).num_children == 0) {
          elem = &s.at(pos + 2);
          def += def_inc(*elem);
        }
        if (elem != nullptr && elem->type) {
          leaf.schema.type = static_cast<PhysicalType>(*elem->type);
          leaf.schema.utf8 = elem->logical_string || elem->converted_type == kUtf8;
          leaf.schema.list = true;
          leaf.max_def = def;
          leaf.max_rep = 1;
          ok = true;
        }
      }
    }
    if (ok) {
      switch (leaf.schema.type) {
        case PhysicalType::kInt32:
        case PhysicalType::kInt64:
        case PhysicalType::kFloat:
        case PhysicalType::kDouble:
        case PhysicalType::kByteArray:
          break;
        default:
          ok = false;
      }
    }
    if (ok) {
      leaves.push_back(leaf);
      schema.push_back(leaf.schema);
    } else {
      unsupported.push_back(node.name);
    }
    leaf_counter += sub_leaves;
    pos = next;
  }
  for (const auto& rg : meta.row_groups) {
    if (rg.columns.size() != leaf_counter) throw FormatError("parquet: row group column count mismatch");
  }
}

ColumnData FileReader::Impl::read_chunk(std::size_t row_group, const LeafColumn& leaf) const {
  const RowGroupMeta& rg = meta.row_groups.at(row_group);
  const ColumnMeta& cm = rg.columns.at(leaf.leaf_index);
  if (cm.type != static_cast<std::int32_t>(leaf.schema.type)) {
    throw FormatError("parquet: column '" + leaf.schema.name + "' chunk type disagrees with schema");
  }
  if (cm.codec != kUncompressed && cm.codec != kGzip) {
    throw FormatError("parquet: column '" + leaf.schema.name + "' uses unsupported codec " +
                      std::to_string(cm.codec));
  }
  const auto bytes = file->bytes();
  std::int64_t start = cm.data_page_offset;
  if (cm.dictionary_page_offset && *cm.dictionary_page_offset > 0) {
    start = std::min(start, *cm.dictionary_page_offset);
  }
  if (start < 4 || static_cast<std::uint64_t>(start) >= bytes.size()) {
    throw FormatError("parquet: column chunk offset out of range");
  }

  ColumnData out;
  out.values = make_vector(leaf.schema.type);
  std::optional<ValueVector> dictionary;
  std::vector<std::uint32_t> reps, defs, indices;
  std::int64_t levels_seen = 0;
  std::size_t pos = static_cast<std::size_t>(start);
  const bool is_list = leaf.schema.list;
  bool any_level = false;
  if (is_list) out.offsets.push_back(0);

  while (levels_seen < cm.num_values) {
    if (pos >= bytes.size()) throw FormatError("parquet: column chunk runs past end of file");
    CompactReader hr(bytes.subspan(pos));
    const PageHeader ph = parse_page_header(hr);
    pos += hr.position();
    if (ph.compressed_size < 0 || static_cast<std::size_t>(ph.compressed_size) > bytes.size() - pos) {
      throw FormatError("parquet: page runs past end of file");
    }
    const auto raw = bytes.subspan(pos, static_cast<std::size_t>(ph.compressed_size));
    pos += raw.size();

    if (ph.type == kIndexPage) continue;

    std::vector<std::uint8_t> inflated;
    auto decompress = [&](std::span<const std::uint8_t> in, std::size_t expect) {
      if (cm.codec == kUncompressed) return in;
      inflated = gunzip(in, expect);
      return std::span<const std::uint8_t>(inflated);
    };

    if (ph.type == kDictionaryPage) {
      const auto body = decompress(raw, static_cast<std::size_t>(ph.uncompressed_size));
      dictionary = make_vector(leaf.schema.type);
      decode_plain(body, static_cast<std::size_t>(ph.num_values), *dictionary);
      continue;
    }
    if (ph.type != kDataPage && ph.type != kDataPageV2) {
      throw FormatError("parquet: unknown page type " + std::to_string(ph.type));
    }

    const std::size_t n = static_cast<std::size_t>(ph.num_values);
    std::span<const std::uint8_t> values_bytes;
    if (ph.type == kDataPage) {
      const auto body = decompress(raw, static_cast<std::size_t>(ph.uncompressed_size));
      ByteCursor cur(body);
      if (leaf.max_rep > 0) {
        const std::uint32_t len = cur.u32();
        decode_hybrid(cur.take(len), bit_width(static_cast<std::uint32_t>(leaf.max_rep)), n, reps);
      }
      if (leaf.max_def > 0) {
        const std::uint32_t len = cur.u32();
        decode_hybrid(cur.take(len), bit_width(static_cast<std::uint32_t>(leaf.max_def)), n, defs);
      }
      values_bytes = cur.rest();
    } else {
      ByteCursor cur(raw);
      const auto rep_bytes = cur.take(static_cast<std::size_t>(ph.rep_bytes));
      const auto def_bytes = cur.take(static_cast<std::size_t>(ph.def_bytes));
      if (leaf.max_rep > 0) {
        decode_hybrid(rep_bytes, bit_width(static_cast<std::uint32_t>(leaf.max_rep)), n, reps);
      }
      if (leaf.max_def > 0) {
        decode_hybrid(def_bytes, bit_width(static_cast<std::uint32_t>(leaf.max_def)), n, defs);
      }
      const auto rest = cur.rest();
      const std::size_t expect =
          static_cast<std::size_t>(ph.uncompressed_size - ph.rep_bytes - ph.def_bytes);
      values_bytes = ph.v2_compressed ? decompress(rest, expect) : rest;
    }

    std::size_t present = n;
    if (leaf.max_def > 0) {
      present = 0;
      for (std::size_t i = 0; i < n; ++i) {
        if (static_cast<int>(defs[i]) == leaf.max_def) {
          ++present;
        } else if (!is_list || static_cast<int>(defs[i]) >= leaf.list_def) {
          throw FormatError("parquet: column '" + leaf.schema.name + "' contains nulls");
        }
      }
    }

    if (ph.encoding == kPlain) {
      decode_plain(values_bytes, present, out.values);
    } else if (ph.encoding == kPlainDictionary || ph.encoding == kRleDictionary) {
      if (!dictionary) throw FormatError("parquet: dictionary-encoded page without dictionary");
      if (present > 0) {
        if (values_bytes.empty()) throw FormatError("parquet: truncated dictionary indices");
        decode_hybrid(values_bytes.subspan(1), values_bytes[0], present, indices);
        append_from_dictionary(*dictionary, indices, out.values);
      }
    } else {
      throw FormatError("parquet: column '" + leaf.schema.name + "' uses unsupported encoding " +
                        std::to_string(ph.encoding));
    }

    if (is_list) {
      auto count = static_cast<std::int64_t>(value_count(out.values) - present);
      for (std::size_t i = 0; i < n; ++i) {
        if (reps[i] == 0) {
          if (any_level) out.offsets.push_back(count);
          any_level = true;
        }
        if (static_cast<int>(defs[i]) == leaf.max_def) ++count;
      }
    }
    levels_seen += static_cast<std::int64_t>(n);
  }
  if (is_list && any_level) out.offsets.push_back(static_cast<std::int64_t>(value_count(out.values)));

  if (out.num_rows() != static_cast<std::size_t>(rg.num_rows)) {
    throw FormatError("parquet: column '" + leaf.schema.name + "' row count disagrees with row group");
  }
  return out;
}

FileReader::FileReader(std::unique_ptr<Impl> impl) : impl_(std::move(impl)) {}
FileReader::FileReader(FileReader&&) noexcept = default;
FileReader& FileReader::operator=(FileReader&&) noexcept = default;
FileReader::~FileReader() = default;

FileReader FileReader::open(const std::filesystem::path& path) {
  auto impl = std::make_unique<Impl>();
  impl->path = path;
  impl->file = std::make_unique<MappedFile>(path);
  const auto bytes = impl->file->bytes();
  if (bytes.size() < 12 || std::memcmp(bytes.data(), kMagic, 4) != 0 ||
      std::memcmp(bytes.data() + bytes.size() - 4, kMagic, 4) != 0) {
    throw FormatError("not a parquet file: " + path.string());
  }
  const std::uint8_t* lp = bytes.data() + bytes.size() - 8;
  const std::uint32_t footer_len = static_cast<std::uint32_t>(lp[0]) | (static_cast<std::uint32_t>(lp[1]) << 8) |
                                   (static_cast<std::uint32_t>(lp[2]) << 16) |
                                   (static_cast<std::uint32_t>(lp[3]) << 24);
  if (footer_len > bytes.size() - 12) throw FormatError("parquet: bad footer length in " + path.string());
  impl->meta = parse_file_meta(bytes.subspan(bytes.size() - 8 - footer_len, footer_len));
  impl->build_schema();
  return FileReader(std::move(impl));
}

const std::vector<ColumnSchema>& FileReader::schema() const { return impl_->schema; }
const std::vector<std::string>& FileReader::unsupported_columns() const { return impl_->unsupported; }

std::optional<std::size_t> FileReader::column_index(std::string_view name) const {
  for (std::size_t i = 0; i < impl_->schema.size(); ++i) {
    if (impl_->schema[i].name == name) return i;
  }
  return std::nullopt;
}

std::int64_t FileReader::num_rows() const { return impl_->meta.num_rows; }
std::size_t FileReader::num_row_groups() const { return impl_->meta.row_groups.size(); }
std::int64_t FileReader::row_group_num_rows(std::size_t row_group) const {
  return impl_->meta.row_groups.at(row_group).num_rows;
}

const KeyValueMetadata& FileReader::metadata() const { return impl_->meta.key_values; }

std::optional<std::string> FileReader::metadata_value(std::string_view key) const {
  for (const auto& [k, v] : impl_->meta.key_values) {
    if (k == key) return v;
  }
  return std::nullopt;
}

ColumnData FileReader::read_column(std::size_t row_group, std::size_t column) const {
  return impl_->read_chunk(row_group, impl_->leaves.at(column));
}

ColumnData FileReader::read_column(std::size_t column) const {
  const LeafColumn& leaf = impl_->leaves.at(column);
  ColumnData all;
  all.values = make_vector(leaf.schema.type);
  if (leaf.schema.list) all.offsets.push_back(0);
  for (std::size_t rg = 0; rg < num_row_groups(); ++rg) {
    ColumnData part = impl_->read_chunk(rg, leaf);
    const auto base = static_cast<std::int64_t>(all.num_values());
    std::visit(
        [&](auto& dst) {
          auto& src = std::get<std::decay_t<decltype(dst)>>(part.values);
          dst.insert(dst.end(), std::make_move_iterator(src.begin()), std::make_move_iterator(src.end()));
        },
        all.values);
    if (leaf.schema.list) {
      for (std::size_t i = 1; i < part.offsets.size(); ++i) all.offsets.push_back(base + part.offsets[i]);
    }
  }
  return all;
}

}  // namespace tomembed::parquet
