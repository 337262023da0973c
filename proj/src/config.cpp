#include "tomembed/config.hpp"

#include <algorithm>
#include <cctype>
#include <charconv>
#include <cstring>
#include <fstream>
#include <optional>
#include <set>
#include <sstream>

#include "tomembed/error.hpp"

namespace tomembed {
namespace {

using nlohmann::json;

class TomlParser {
 public:
  explicit TomlParser(std::string_view text) : text_(text) {}

  json parse() {
    json root = json::object();
    json* table = &root;
    while (true) {
      skip_space_and_comments(true);
      if (eof()) break;
      if (peek() == '[') {
        ++pos_;
        table = &root;
        for (const auto& part : parse_key_path(']')) {
          json& next = (*table)[part];
          if (next.is_null()) next = json::object();
          if (!next.is_object()) fail("'" + part + "' is not a table");
          table = &next;
        }
        expect(']');
      } else {
        const auto path = parse_key_path('=');
        expect('=');
        skip_space_and_comments(false);
        json value = parse_value();
        json* target = table;
        for (std::size_t i = 0; i + 1 < path.size(); ++i) {
          json& next = (*target)[path[i]];
          if (next.is_null()) next = json::object();
          target = &next;
        }
        if (target->contains(path.back())) fail("duplicate key '" + path.back() + "'");
        (*target)[path.back()] = std::move(value);
      }
      skip_space_and_comments(false);
      if (!eof() && peek() != '\n') fail("unexpected text after value");
    }
    return root;
  }

 private:
  bool eof() const { return pos_ >= text_.size(); }
  char peek() const { return text_[pos_]; }

  [[noreturn]] void fail(const std::string& message) const {
    const auto line = 1 + std::count(text_.begin(), text_.begin() + static_cast<std::ptrdiff_t>(std::min(pos_, text_.size())), '\n');
    throw ConfigError("config line " + std::to_string(line) + ": " + message);
  }

  void expect(char c) {
    skip_space_and_comments(false);
    if (eof() || peek() != c) fail(std::string("expected '") + c + "'");
    ++pos_;
  }

  void skip_space_and_comments(bool newlines) {
    while (!eof()) {
      const char c = peek();
      if (c == ' ' || c == '\t' || c == '\r' || (newlines && c == '\n')) {
        ++pos_;
      } else if (c == '#') {
        while (!eof() && peek() != '\n') ++pos_;
      } else {
        break;
      }
    }
  }

  std::vector<std::string> parse_key_path(char terminator) {
    std::vector<std::string> parts;
    while (true) {
      skip_space_and_comments(false);
      if (eof()) fail("unterminated key");
      if (peek() == '"' || peek() == '\'') {
        parts.push_back(parse_string());
      } else {
        const std::size_t start = pos_;
        while (!eof() && (std::isalnum(static_cast<unsigned char>(peek())) || peek() == '_' || peek() == '-')) ++pos_;
        if (pos_ == start) fail("expected a key");
        parts.emplace_back(text_.substr(start, pos_ - start));
      }
      skip_space_and_comments(false);
      if (!eof() && peek() == '.') {
        ++pos_;
        continue;
      }
      if (eof() || peek() != terminator) fail(std::string("expected '") + terminator + "' after key");
      return parts;
    }
  }

  std::string parse_string() {
    const char quote = text_[pos_++];
    std::string out;
    while (true) {
      if (eof() || peek() == '\n') fail("unterminated string");
      const char c = text_[pos_++];
      if (c == quote) return out;
      if (c == '\\' && quote == '"') {
        if (eof()) fail("unterminated escape");
        const char e = text_[pos_++];
        switch (e) {
          case 'n': out += '\n'; break;
          case 't': out += '\t'; break;
          case 'r': out += '\r'; break;
          case '"': out += '"'; break;
          case '\\': out += '\\'; break;
          default: fail(std::string("unsupported escape \\") + e);
        }
      } else {
        out += c;
      }
    }
  }

  json parse_value() {
    if (eof()) fail("missing value");
    const char c = peek();
    if (c == '"' || c == '\'') return parse_string();
    if (c == '[') {
      ++pos_;
      json arr = json::array();
      while (true) {
        skip_space_and_comments(true);
        if (eof()) fail("unterminated array");
        if (peek() == ']') {
          ++pos_;
          return arr;
        }
        arr.push_back(parse_value());
        skip_space_and_comments(true);
        if (!eof() && peek() == ',') {
          ++pos_;
        } else if (eof() || peek() != ']') {
          fail("expected ',' or ']' in array");
        }
      }
    }
    const std::size_t start = pos_;
    while (!eof() && (std::isalnum(static_cast<unsigned char>(peek())) || std::strchr("+-._", peek()) != nullptr)) {
      ++pos_;
    }
    std::string token(text_.substr(start, pos_ - start));
    if (token == "true") return true;
    if (token == "false") return false;
    token.erase(std::remove(token.begin(), token.end(), '_'), token.end());
    if (token.empty()) fail("missing value");
    const char* first = token.data() + (token[0] == '+' ? 1 : 0);
    const char* last = token.data() + token.size();
    std::int64_t i = 0;
    if (auto [p, ec] = std::from_chars(first, last, i); ec == std::errc() && p == last) return i;
    double d = 0;
    if (auto [p, ec] = std::from_chars(first, last, d); ec == std::errc() && p == last) return d;
    fail("cannot parse value '" + token + "'");
  }

  std::string_view text_;
  std::size_t pos_ = 0;
};

template <typename T>
T get_as(const json& table, const std::string& key, const std::string& where) {
  try {
    return table.at(key).get<T>();
  } catch (const json::exception&) {
    throw ConfigError(where + ": key '" + key + "' has the wrong type");
  }
}

std::vector<double> number_list(const json& table, const std::string& key, const std::string& where) {
  const json& v = table.at(key);
  if (!v.is_array()) throw ConfigError(where + ": key '" + key + "' must be an array of numbers");
  std::vector<double> out;
  for (const auto& x : v) {
    if (!x.is_number()) throw ConfigError(where + ": key '" + key + "' must be an array of numbers");
    out.push_back(x.get<double>());
  }
  return out;
}

}  // namespace

json parse_toml(std::string_view text) { return TomlParser(text).parse(); }

json load_toml(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ConfigError("cannot read config file " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_toml(ss.str());
}

ModelProfile resolve_profile(std::string_view name, const json& config) {
  const std::string key(name);
  const json* table = nullptr;
  if (config.contains("profiles") && config["profiles"].is_object() && config["profiles"].contains(key)) {
    table = &config["profiles"][key];
    if (!table->is_object()) throw ConfigError("profiles." + key + " must be a table");
  }
  const std::string where = "profile '" + key + "'";

  std::optional<ModelProfile> base = builtin_profile(name);
  if (table != nullptr && table->contains("base")) {
    const auto base_name = get_as<std::string>(*table, "base", where);
    base = builtin_profile(base_name);
    if (!base) throw ConfigError(where + ": unknown base profile '" + base_name + "'");
  }
  if (!base && table == nullptr) throw ConfigError("unknown profile '" + key + "'");

  ModelProfile p = base.value_or(ModelProfile{});
  p.name = key;
  if (table != nullptr) {
    const json& t = *table;
    static const std::set<std::string> kKnown = {
        "base",     "bands",    "fragment_size", "target_overlap", "border_shift", "normalization", "scale",
        "clip_min", "clip_max", "means",         "stds",           "log10",        "log_floor",     "backend",
        "embedding_dim"};
    for (const auto& [k, v] : t.items()) {
      if (!kKnown.count(k)) throw ConfigError(where + ": unknown key '" + k + "'");
    }
    if (t.contains("bands")) p.band_selection = get_as<std::vector<std::string>>(t, "bands", where);
    if (t.contains("fragment_size")) p.fragment_size = get_as<std::int32_t>(t, "fragment_size", where);
    if (t.contains("target_overlap")) p.target_overlap = get_as<double>(t, "target_overlap", where);
    if (t.contains("border_shift")) p.border_shift = get_as<bool>(t, "border_shift", where);
    if (t.contains("normalization")) {
      p.normalization.kind = parse_normalization_kind(get_as<std::string>(t, "normalization", where));
    }
    if (t.contains("scale")) p.normalization.scale = get_as<double>(t, "scale", where);
    if (t.contains("clip_min")) p.normalization.clip_min = get_as<double>(t, "clip_min", where);
    if (t.contains("clip_max")) p.normalization.clip_max = get_as<double>(t, "clip_max", where);
    if (t.contains("means")) p.normalization.means = number_list(t, "means", where);
    if (t.contains("stds")) p.normalization.stds = number_list(t, "stds", where);
    if (t.contains("log10")) p.normalization.log10 = get_as<bool>(t, "log10", where);
    if (t.contains("log_floor")) p.normalization.log_floor = get_as<double>(t, "log_floor", where);
    if (t.contains("backend")) p.backend = BackendRef::parse(get_as<std::string>(t, "backend", where));
    if (t.contains("embedding_dim")) {
      const auto dim = get_as<std::int64_t>(t, "embedding_dim", where);
      if (dim < 1) throw ConfigError(where + ": embedding_dim must be at least 1");
      p.embedding_dim = static_cast<std::size_t>(dim);
    }
  }
  try {
    p.validate();
  } catch (const std::invalid_argument& e) {
    throw ConfigError(e.what());
  }
  return p;
}

}  // namespace tomembed
