#pragma once

// Minimal Apache Parquet reader/writer.
//
// The writer emits uncompressed PLAIN-encoded v1 data pages with required
// columns and three-level LIST groups, one page per column chunk. The reader
// additionally accepts optional columns without nulls, dictionary pages,
// v2 data pages, GZIP pages and legacy two-level lists, which covers files
// produced by pyarrow with `compression="gzip"` or `"none"`.

#include <cstdint>
#include <filesystem>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <utility>
#include <variant>
#include <vector>

namespace tomembed::parquet {

enum class PhysicalType : std::int32_t {
  kBoolean = 0,
  kInt32 = 1,
  kInt64 = 2,
  kInt96 = 3,
  kFloat = 4,
  kDouble = 5,
  kByteArray = 6,
  kFixedLenByteArray = 7,
};

std::string_view to_string(PhysicalType type);

struct ColumnSchema {
  std::string name;
  PhysicalType type = PhysicalType::kByteArray;
  bool utf8 = false;  // BYTE_ARRAY annotated as STRING
  bool list = false;  // LIST<type>

  bool operator==(const ColumnSchema&) const = default;
};

using ValueVector = std::variant<std::vector<std::int32_t>, std::vector<std::int64_t>,
                                 std::vector<float>, std::vector<double>,
                                 std::vector<std::string>>;

struct ColumnData {
  ValueVector values;
  // List columns only: row i spans values [offsets[i], offsets[i+1]).
  std::vector<std::int64_t> offsets;

  std::size_t num_rows() const;
  std::size_t num_values() const;

  template <typename T>
  const std::vector<T>& get() const {
    return std::get<std::vector<T>>(values);
  }
  template <typename T>
  std::span<const T> list_at(std::size_t row) const {
    const auto& v = get<T>();
    return std::span<const T>(v).subspan(static_cast<std::size_t>(offsets[row]),
                                         static_cast<std::size_t>(offsets[row + 1] - offsets[row]));
  }
};

using KeyValueMetadata = std::vector<std::pair<std::string, std::string>>;

class FileWriter {
 public:
  FileWriter(const std::filesystem::path& path, std::vector<ColumnSchema> schema);
  ~FileWriter();
  FileWriter(const FileWriter&) = delete;
  FileWriter& operator=(const FileWriter&) = delete;

  const std::vector<ColumnSchema>& schema() const;
  void add_metadata(std::string key, std::string value);
  // Column order and element types must match the schema.
  void write_row_group(std::span<const ColumnData> columns);
  void close();

 private:
  struct Impl;
  std::unique_ptr<Impl> impl_;
};

class FileReader {
 public:
  static FileReader open(const std::filesystem::path& path);

  FileReader(FileReader&&) noexcept;
  FileReader& operator=(FileReader&&) noexcept;
  ~FileReader();

  // Top-level primitive and LIST<primitive> columns, in file order. Columns
  // with other shapes are listed by `unsupported_columns()` and cannot be read.
  const std::vector<ColumnSchema>& schema() const;
  const std::vector<std::string>& unsupported_columns() const;
  std::optional<std::size_t> column_index(std::string_view name) const;

  std::int64_t num_rows() const;
  std::size_t num_row_groups() const;
  std::int64_t row_group_num_rows(std::size_t row_group) const;

  const KeyValueMetadata& metadata() const;
  std::optional<std::string> metadata_value(std::string_view key) const;

  // Thread-safe; the file is memory-mapped read-only.
  ColumnData read_column(std::size_t row_group, std::size_t column) const;
  ColumnData read_column(std::size_t column) const;

 private:
  struct Impl;
  explicit FileReader(std::unique_ptr<Impl> impl);
  std::unique_ptr<Impl> impl_;
};

}  // namespace tomembed::parquet
