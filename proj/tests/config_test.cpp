#include "tomembed/config.hpp"

#include <gtest/gtest.h>

#include "test_util.hpp"
#include "tomembed/error.hpp"

namespace tomembed {
namespace {

TEST(Toml, ParsesTheSupportedSubset) {
  const auto j = parse_toml(R"(
# comment
workers = 4
name = "run \"one\""  # trailing comment
ratio = 0.25
big = 1_000
flag = true

[profiles.s1-rtc-224]
means = [ -1.5,
          -2.0, ]  # multiline
stds = [1, 2]
'quoted key' = 'literal \n'
nested.key = false
)");
  EXPECT_EQ(j["workers"], 4);
  EXPECT_EQ(j["name"], "run \"one\"");
  EXPECT_EQ(j["ratio"], 0.25);
  EXPECT_EQ(j["big"], 1000);
  EXPECT_EQ(j["flag"], true);
  const auto& p = j["profiles"]["s1-rtc-224"];
  EXPECT_EQ(p["means"], nlohmann::json::array({-1.5, -2.0}));
  EXPECT_EQ(p["stds"], nlohmann::json::array({1, 2}));
  EXPECT_EQ(p["quoted key"], "literal \\n");
  EXPECT_EQ(p["nested"]["key"], false);
}

TEST(Toml, ErrorsCarryLineNumbers) {
  auto message = [](const char* text) {
    try {
      parse_toml(text);
    } catch (const ConfigError& e) {
      return std::string(e.what());
    }
    return std::string("no error");
  };
  EXPECT_EQ(message("a = 1\nb = \n").substr(0, 14), "config line 2:");
  EXPECT_NE(message("a = 1\na = 2\n").find("duplicate key 'a'"), std::string::npos);
  EXPECT_NE(message("x = \"open\n").find("unterminated string"), std::string::npos);
  EXPECT_NE(message("x = [1, 2\n").find("config line"), std::string::npos);
  EXPECT_NE(message("x = 1 2\n").find("unexpected text"), std::string::npos);
  EXPECT_NE(message("x = nope\n").find("cannot parse value"), std::string::npos);
  EXPECT_NE(message("[a]\nb = 1\n[a.b]\n").find("not a table"), std::string::npos);
}

TEST(Toml, LoadFromFile) {
  testutil::TempDir dir;
  testutil::write_file(dir / "c.toml", "workers = 2\n");
  EXPECT_EQ(load_toml(dir / "c.toml")["workers"], 2);
  EXPECT_THROW(load_toml(dir / "missing.toml"), ConfigError);
}

TEST(ResolveProfile, BuiltinWithoutConfig) {
  const auto p = resolve_profile("s2-rgb-224", nlohmann::json::object());
  EXPECT_EQ(p.fragment_size, 224);
  EXPECT_EQ(p.embedding_dim, 1024u);
  EXPECT_THROW(resolve_profile("unknown", nlohmann::json::object()), ConfigError);
}

TEST(ResolveProfile, ZscoreNeedsStatistics) {
  EXPECT_THROW(resolve_profile("s1-rtc-224", nlohmann::json::object()), ConfigError);
  const auto cfg = parse_toml(R"(
[profiles.s1-rtc-224]
means = [-1.0, -2.0]
stds = [0.5, 0.5]
log_floor = 1e-5
)");
  const auto p = resolve_profile("s1-rtc-224", cfg);
  EXPECT_TRUE(p.normalization.log10);
  EXPECT_EQ(p.normalization.means, (std::vector<double>{-1.0, -2.0}));
  EXPECT_EQ(p.normalization.log_floor, 1e-5);
}

TEST(ResolveProfile, CustomProfileFromBase) {
  const auto cfg = parse_toml(R"(
[profiles.small]
base = "s2-rgb-224"
fragment_size = 64
embedding_dim = 32
backend = "sidecar:127.0.0.1:7000"
)");
  const auto p = resolve_profile("small", cfg);
  EXPECT_EQ(p.name, "small");
  EXPECT_EQ(p.fragment_size, 64);
  EXPECT_EQ(p.embedding_dim, 32u);
  EXPECT_EQ(p.band_selection, (std::vector<std::string>{"B04", "B03", "B02"}));
  EXPECT_EQ(p.backend.kind, BackendRef::Kind::kSidecar);
  EXPECT_EQ(p.backend.endpoint, "127.0.0.1:7000");
}

TEST(ResolveProfile, FullyCustomProfile) {
  const auto cfg = parse_toml(R"(
[profiles.custom]
bands = ["B08"]
normalization = "scale_clip"
scale = 0.0001
clip_min = 0
clip_max = 1
embedding_dim = 8
)");
  const auto p = resolve_profile("custom", cfg);
  EXPECT_EQ(p.band_selection, (std::vector<std::string>{"B08"}));
  EXPECT_EQ(p.normalization.kind, NormalizationSpec::Kind::kScaleClip);
}

TEST(ResolveProfile, RejectsBadTables) {
  auto fails = [](const char* text) {
    EXPECT_THROW(resolve_profile("p", parse_toml(text)), ConfigError) << text;
  };
  fails("[profiles.p]\nbase = \"s2-rgb-224\"\nfragment_sise = 3\n");
  fails("[profiles.p]\nbase = \"nope\"\n");
  fails("[profiles.p]\nbase = \"s2-rgb-224\"\nfragment_size = \"big\"\n");
  fails("[profiles.p]\nbase = \"s2-rgb-224\"\nmeans = [\"a\"]\n");
  fails("[profiles.p]\nbase = \"s2-rgb-224\"\nembedding_dim = 0\n");
  fails("[profiles.p]\nbase = \"s2-rgb-224\"\nnormalization = \"minmax\"\n");
  fails("[profiles.p]\nbase = \"s2-rgb-224\"\ntarget_overlap = 1.5\n");
  fails("[profiles.p]\nbands = [\"B1\"]\n");  // no embedding_dim
  fails("[profiles]\np = 3\n");
}

}  // namespace
}  // namespace tomembed
