#include "tomembed/parquet.hpp"

#include <gtest/gtest.h>

#include "json.hpp"
#include "test_util.hpp"
#include "tomembed/error.hpp"
#include "tomembed/splitmix64.hpp"

namespace tomembed::parquet {
namespace {

using testutil::TempDir;

std::vector<ColumnSchema> mixed_schema() {
  return {{"i32", PhysicalType::kInt32, false, false},  {"i64", PhysicalType::kInt64, false, false},
          {"f", PhysicalType::kFloat, false, false},    {"d", PhysicalType::kDouble, false, false},
          {"s", PhysicalType::kByteArray, true, false}, {"bin", PhysicalType::kByteArray, false, false},
          {"fl", PhysicalType::kFloat, false, true},    {"il", PhysicalType::kInt32, false, true}};
}

std::vector<ColumnData> mixed_rows(std::size_t start, std::size_t n) {
  std::vector<std::int32_t> i32;
  std::vector<std::int64_t> i64;
  std::vector<float> f, fl;
  std::vector<double> d;
  std::vector<std::string> s, bin;
  std::vector<std::int32_t> il;
  std::vector<std::int64_t> fl_off{0}, il_off{0};
  for (std::size_t r = start; r < start + n; ++r) {
    i32.push_back(static_cast<std::int32_t>(r) - 5);
    i64.push_back(static_cast<std::int64_t>(r) * 10000000000LL);
    f.push_back(static_cast<float>(r) * 0.5f);
    d.push_back(static_cast<double>(r) / 3.0);
    s.push_back("row-" + std::to_string(r));
    bin.push_back(std::string("\0\xff", 2) + std::string(r % 4, 'x'));
    for (std::size_t k = 0; k < r % 3; ++k) fl.push_back(static_cast<float>(r * 10 + k));
    fl_off.push_back(static_cast<std::int64_t>(fl.size()));
    for (std::size_t k = 0; k < 4; ++k) il.push_back(static_cast<std::int32_t>(r + k));
    il_off.push_back(static_cast<std::int64_t>(il.size()));
  }
  std::vector<ColumnData> cols;
  cols.push_back({i32, {}});
  cols.push_back({i64, {}});
  cols.push_back({f, {}});
  cols.push_back({d, {}});
  cols.push_back({s, {}});
  cols.push_back({bin, {}});
  cols.push_back({fl, fl_off});
  cols.push_back({il, il_off});
  return cols;
}

TEST(Parquet, RoundTripsEveryColumnKind) {
  TempDir dir;
  const auto path = dir / "mixed.parquet";
  {
    FileWriter w(path, mixed_schema());
    w.add_metadata("k", "v");
    w.write_row_group(mixed_rows(0, 7));
    w.write_row_group(mixed_rows(7, 5));
  }
  const auto r = FileReader::open(path);
  EXPECT_EQ(r.schema(), mixed_schema());
  EXPECT_EQ(r.num_rows(), 12);
  EXPECT_EQ(r.num_row_groups(), 2u);
  EXPECT_EQ(r.row_group_num_rows(1), 5);
  EXPECT_EQ(r.metadata_value("k"), "v");
  EXPECT_FALSE(r.metadata_value("missing"));

  const auto expected = mixed_rows(0, 12);
  for (std::size_t c = 0; c < expected.size(); ++c) {
    const auto got = r.read_column(c);
    EXPECT_EQ(got.values, expected[c].values) << "column " << c;
    EXPECT_EQ(got.offsets, expected[c].offsets) << "column " << c;
  }
  const auto second = r.read_column(1, 6);
  EXPECT_EQ(second.offsets.size(), 6u);
  EXPECT_EQ(second.list_at<float>(1).size(), 8u % 3);
}

TEST(Parquet, EmptyFileKeepsSchema) {
  TempDir dir;
  const auto path = dir / "empty.parquet";
  { FileWriter w(path, mixed_schema()); }
  const auto r = FileReader::open(path);
  EXPECT_EQ(r.num_rows(), 0);
  EXPECT_EQ(r.num_row_groups(), 0u);
  EXPECT_EQ(r.schema(), mixed_schema());
  const auto col = r.read_column(6);
  EXPECT_EQ(col.num_rows(), 0u);
}

TEST(Parquet, ColumnIndexByName) {
  TempDir dir;
  const auto path = dir / "x.parquet";
  { FileWriter w(path, mixed_schema()); }
  const auto r = FileReader::open(path);
  EXPECT_EQ(r.column_index("d"), 3u);
  EXPECT_FALSE(r.column_index("nope"));
}

TEST(Parquet, RejectsNonParquetAndTruncatedFiles) {
  TempDir dir;
  testutil::write_file(dir / "junk.parquet", "hello world, definitely not parquet");
  EXPECT_THROW(FileReader::open(dir / "junk.parquet"), FormatError);

  const auto path = dir / "good.parquet";
  {
    FileWriter w(path, mixed_schema());
    w.write_row_group(mixed_rows(0, 3));
  }
  const auto bytes = testutil::read_file(path);
  testutil::write_file(dir / "cut.parquet", bytes.substr(0, bytes.size() - 12));
  EXPECT_THROW(FileReader::open(dir / "cut.parquet"), FormatError);
}

TEST(Parquet, RaggedRowGroupIsRejected) {
  TempDir dir;
  FileWriter w(dir / "r.parquet", mixed_schema());
  auto cols = mixed_rows(0, 3);
  cols[2] = ColumnData{std::vector<float>{1.0f}, {}};
  EXPECT_THROW(w.write_row_group(cols), std::invalid_argument);
}

TEST(Parquet, RandomRoundTripProperty) {
  TempDir dir;
  SplitMix64 rng(2024);
  for (int trial = 0; trial < 25; ++trial) {
    const std::size_t rows = rng.next() % 50;
    std::vector<double> d;
    std::vector<float> fl;
    std::vector<std::int64_t> off{0};
    std::vector<std::string> s;
    for (std::size_t r = 0; r < rows; ++r) {
      d.push_back((rng.next_unit() - 0.5) * 1e6);
      const std::size_t len = rng.next() % 20;
      for (std::size_t k = 0; k < len; ++k) fl.push_back(static_cast<float>(rng.next_unit()));
      off.push_back(static_cast<std::int64_t>(fl.size()));
      std::string str(rng.next() % 40, '\0');
      for (char& ch : str) ch = static_cast<char>(rng.next() & 0xff);
      s.push_back(str);
    }
    const std::vector<ColumnSchema> schema = {{"d", PhysicalType::kDouble, false, false},
                                              {"fl", PhysicalType::kFloat, false, true},
                                              {"s", PhysicalType::kByteArray, false, false}};
    const auto path = dir / ("p" + std::to_string(trial) + ".parquet");
    {
      FileWriter w(path, schema);
      w.write_row_group(std::vector<ColumnData>{{d, {}}, {fl, off}, {s, {}}});
    }
    const auto r = FileReader::open(path);
    ASSERT_EQ(r.read_column(0).get<double>(), d);
    ASSERT_EQ(r.read_column(1).get<float>(), fl);
    ASSERT_EQ(r.read_column(1).offsets, off);
    ASSERT_EQ(r.read_column(2).get<std::string>(), s);
  }
}

TEST(ParquetInterop, PyarrowReadsOurFiles) {
  if (!testutil::python_has("pyarrow")) GTEST_SKIP() << "pyarrow not available";
  TempDir dir;
  const auto path = dir / "ours.parquet";
  {
    FileWriter w(path, mixed_schema());
    w.add_metadata("note", "hi");
    w.write_row_group(mixed_rows(0, 4));
    w.write_row_group(mixed_rows(4, 3));
  }
  const std::string script =
      "import pyarrow.parquet as pq, json, sys\n"
      "t = pq.read_table(sys.argv[1])\n"
      "m = pq.read_metadata(sys.argv[1]).metadata\n"
      "d = {n: t.column(n).to_pylist() for n in ['i32','i64','f','d','s','fl','il']}\n"
      "d['bin'] = [b.hex() for b in t.column('bin').to_pylist()]\n"
      "d['note'] = m[b'note'].decode()\n"
      "print(json.dumps(d))\n";
  testutil::write_file(dir / "read.py", script);
  const auto res = testutil::run("python3 " + (dir / "read.py").string() + " " + path.string());
  ASSERT_EQ(res.exit_code, 0);
  const auto j = nlohmann::json::parse(res.output);
  const auto expected = mixed_rows(0, 7);
  EXPECT_EQ(j["i32"].get<std::vector<std::int32_t>>(), expected[0].get<std::int32_t>());
  EXPECT_EQ(j["i64"].get<std::vector<std::int64_t>>(), expected[1].get<std::int64_t>());
  EXPECT_EQ(j["f"].get<std::vector<float>>(), expected[2].get<float>());
  EXPECT_EQ(j["d"].get<std::vector<double>>(), expected[3].get<double>());
  EXPECT_EQ(j["s"].get<std::vector<std::string>>(), expected[4].get<std::string>());
  EXPECT_EQ(j["bin"][1].get<std::string>(), "00ff78");
  EXPECT_EQ(j["fl"][5].get<std::vector<float>>(), (std::vector<float>{50.0f, 51.0f}));
  EXPECT_EQ(j["il"][6].get<std::vector<std::int32_t>>(), (std::vector<std::int32_t>{6, 7, 8, 9}));
  EXPECT_EQ(j["note"], "hi");
}

TEST(ParquetInterop, ReadsPyarrowFilesAcrossEncodings) {
  if (!testutil::python_has("pyarrow")) GTEST_SKIP() << "pyarrow not available";
  TempDir dir;
  const std::string script =
      "import pyarrow as pa, pyarrow.parquet as pq, sys\n"
      "t = pa.table({'a': pa.array([1, 2, 3, 2, 1], pa.int32()),\n"
      "              'b': pa.array([1.5, 2.5, 1.5, 1.5, 9.0], pa.float64()),\n"
      "              's': pa.array(['x', 'yy', 'x', 'zzz', 'x']),\n"
      "              'l': pa.array([[1.0], [], [2.0, 3.0], [4.0], [5.0, 6.0, 7.0]], pa.list_(pa.float32())),\n"
      "              'n': pa.array([10, 20, 30, 40, 50], pa.int64())})\n"
      "d = sys.argv[1]\n"
      "pq.write_table(t, d + '/plain.parquet', compression='none', use_dictionary=False)\n"
      "pq.write_table(t, d + '/dict_gzip.parquet', compression='gzip', use_dictionary=True, row_group_size=2)\n"
      "pq.write_table(t, d + '/v2.parquet', compression='gzip', data_page_version='2.0')\n"
      "pq.write_table(t, d + '/snappy.parquet', compression='snappy')\n";
  testutil::write_file(dir / "write.py", script);
  ASSERT_EQ(testutil::run("python3 " + (dir / "write.py").string() + " " + dir.path().string()).exit_code, 0);

  for (const char* name : {"plain.parquet", "dict_gzip.parquet", "v2.parquet"}) {
    SCOPED_TRACE(name);
    const auto r = FileReader::open(dir / name);
    EXPECT_EQ(r.num_rows(), 5);
    EXPECT_EQ(r.read_column(*r.column_index("a")).get<std::int32_t>(), (std::vector<std::int32_t>{1, 2, 3, 2, 1}));
    EXPECT_EQ(r.read_column(*r.column_index("b")).get<double>(), (std::vector<double>{1.5, 2.5, 1.5, 1.5, 9.0}));
    EXPECT_EQ(r.read_column(*r.column_index("s")).get<std::string>(),
              (std::vector<std::string>{"x", "yy", "x", "zzz", "x"}));
    const auto l = r.read_column(*r.column_index("l"));
    EXPECT_EQ(l.get<float>(), (std::vector<float>{1, 2, 3, 4, 5, 6, 7}));
    EXPECT_EQ(l.offsets, (std::vector<std::int64_t>{0, 1, 1, 3, 4, 7}));
    EXPECT_EQ(r.read_column(*r.column_index("n")).get<std::int64_t>(),
              (std::vector<std::int64_t>{10, 20, 30, 40, 50}));
  }
  const auto snappy = FileReader::open(dir / "snappy.parquet");
  try {
    snappy.read_column(0);
    FAIL() << "snappy pages should be rejected";
  } catch (const FormatError& e) {
    EXPECT_NE(std::string(e.what()).find("codec"), std::string::npos) << e.what();
  }
}

}  // namespace
}  // namespace tomembed::parquet
