// tomembed command line: embed, validate, pca, map, search, convert,
// inspect and synth.
//
// Exit codes: 0 success, 1 validation violations, 2 usage or configuration
// error, 3 runtime failure.

#include <cstdlib>
#include <fstream>
#include <iostream>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <thread>
#include <vector>

#include "CLI11.hpp"
#include "json.hpp"
#include "tomembed/archive.hpp"
#include "tomembed/config.hpp"
#include "tomembed/error.hpp"
#include "tomembed/parquet.hpp"
#include "tomembed/pipeline.hpp"
#include "tomembed/png_io.hpp"
#include "tomembed/vector_ops.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace tomembed;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitViolations = 1;
constexpr int kExitUsage = 2;
constexpr int kExitRuntime = 3;

class UsageError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Files as given; directories expand to their sorted *.parquet files.
std::vector<fs::path> expand_archives(const std::vector<std::string>& inputs) {
  std::vector<fs::path> out;
  for (const auto& in : inputs) {
    if (fs::is_directory(in)) {
      const auto files = list_sources(in);
      out.insert(out.end(), files.begin(), files.end());
    } else if (fs::is_regular_file(in)) {
      out.emplace_back(in);
    } else {
      throw UsageError("no such archive: " + in);
    }
  }
  if (out.empty()) throw UsageError("no archives found");
  return out;
}

std::vector<EmbeddingRecord> read_all(const std::vector<fs::path>& archives) {
  std::vector<EmbeddingRecord> out;
  for (const auto& p : archives) {
    auto part = read_archive(p);
    std::move(part.begin(), part.end(), std::back_inserter(out));
  }
  return out;
}

// ---------------------------------------------------------------------------

struct EmbedOptions {
  std::string source, out, profile, config, backend;
  std::optional<std::size_t> workers, batch;
  std::optional<std::uint64_t> seed;
  bool no_validate = false;
};

std::size_t env_workers() {
  const char* v = std::getenv("TOMEMBED_WORKERS");
  if (v == nullptr || *v == '\0') return 1;
  char* end = nullptr;
  const long n = std::strtol(v, &end, 10);
  if (*end != '\0' || n < 1) throw UsageError("TOMEMBED_WORKERS must be a positive integer");
  return static_cast<std::size_t>(n);
}

int run_embed(const EmbedOptions& o) {
  const json file = o.config.empty() ? json::object() : load_toml(o.config);
  auto from_file = [&](const char* key) -> const json* { return file.contains(key) ? &file[key] : nullptr; };
  auto file_string = [&](const char* key) -> std::string {
    const json* v = from_file(key);
    if (v == nullptr) return {};
    if (!v->is_string()) throw ConfigError(std::string("config key '") + key + "' must be a string");
    return v->get<std::string>();
  };
  auto file_uint = [&](const char* key) -> std::optional<std::uint64_t> {
    const json* v = from_file(key);
    if (v == nullptr) return std::nullopt;
    if (!v->is_number_integer() || v->get<std::int64_t>() < 0) {
      throw ConfigError(std::string("config key '") + key + "' must be a non-negative integer");
    }
    return v->get<std::uint64_t>();
  };

  PipelineConfig cfg;
  cfg.source = o.source.empty() ? file_string("source") : o.source;
  cfg.out = o.out.empty() ? file_string("out") : o.out;
  const std::string profile = o.profile.empty() ? file_string("profile") : o.profile;
  if (cfg.source.empty()) throw UsageError("--source is required");
  if (cfg.out.empty()) throw UsageError("--out is required");
  if (profile.empty()) throw UsageError("--profile is required");
  cfg.profile = resolve_profile(profile, file);

  if (o.workers) {
    cfg.workers = *o.workers;
  } else if (auto w = file_uint("workers")) {
    cfg.workers = *w;
  } else {
    cfg.workers = env_workers();
  }
  cfg.batch = o.batch ? *o.batch : file_uint("batch").value_or(32);
  cfg.seed = o.seed ? *o.seed : file_uint("seed").value_or(0);
  const std::string backend = o.backend.empty() ? file_string("backend") : o.backend;
  if (!backend.empty()) cfg.profile.backend = BackendRef::parse(backend);
  cfg.validate = !o.no_validate;
  if (!o.no_validate && file.contains("validate")) {
    if (!file["validate"].is_boolean()) throw ConfigError("config key 'validate' must be a boolean");
    cfg.validate = file["validate"].get<bool>();
  }

  const RunReport report = run_pipeline(cfg);
  std::cout << report.to_json() << "\n";
  return report.validation_violations > 0 ? kExitViolations : kExitOk;
}

// ---------------------------------------------------------------------------

int run_validate(const std::vector<std::string>& inputs) {
  json out = json::array();
  bool clean = true;
  for (const auto& path : expand_archives(inputs)) {
    const auto report = validate_archive(path);
    json violations = json::array();
    for (const auto& v : report.violations) {
      violations.push_back({{"row", v.row}, {"kind", v.kind}, {"message", v.message}});
    }
    clean = clean && report.ok();
    out.push_back({{"archive", path.string()}, {"rows", report.rows}, {"violations", violations}});
  }
  std::cout << out.dump(2) << "\n";
  return clean ? kExitOk : kExitViolations;
}

// ---------------------------------------------------------------------------

std::vector<EmbeddingVector> embeddings_of(const std::vector<EmbeddingRecord>& records) {
  std::vector<EmbeddingVector> out;
  out.reserve(records.size());
  for (const auto& r : records) out.push_back(r.embedding);
  return out;
}

int run_pca(const std::vector<std::string>& inputs, std::size_t k, const std::string& out) {
  const auto records = read_all(expand_archives(inputs));
  const PcaModel model = pca_fit(embeddings_of(records), k);
  save_pca(model, out);
  std::cout << json{{"model", out}, {"vectors", records.size()}, {"dim", model.dim},
                    {"explained_variance", model.explained_variance}}
                   .dump(2)
            << "\n";
  return kExitOk;
}

// One record per grid cell: the fragment whose bbox centre is closest to the
// cell centre; earlier timestamps win ties.
std::vector<const EmbeddingRecord*> central_fragments(const std::vector<EmbeddingRecord>& records) {
  std::map<std::pair<std::int32_t, std::int32_t>, std::vector<const EmbeddingRecord*>> cells;
  for (const auto& r : records) cells[{r.grid_row_u, r.grid_col_r}].push_back(&r);
  std::vector<const EmbeddingRecord*> out;
  for (const auto& [key, group] : cells) {
    double size = 0;
    for (const auto* r : group) size = std::max({size, double(r->pixel_bbox.row_end), double(r->pixel_bbox.col_end)});
    const double centre = size / 2.0;
    auto distance = [&](const EmbeddingRecord* r) {
      const double cy = (r->pixel_bbox.row_start + r->pixel_bbox.row_end) / 2.0 - centre;
      const double cx = (r->pixel_bbox.col_start + r->pixel_bbox.col_end) / 2.0 - centre;
      return cy * cy + cx * cx;
    };
    out.push_back(*std::min_element(group.begin(), group.end(), [&](const auto* a, const auto* b) {
      const double da = distance(a), db = distance(b);
      if (da != db) return da < db;
      if (a->timestamp != b->timestamp) return a->timestamp < b->timestamp;
      return a->unique_id < b->unique_id;
    }));
  }
  return out;
}

int run_map(const std::vector<std::string>& inputs, std::size_t components, const std::string& model_path,
            const std::string& out) {
  if (components != 3) throw UsageError("map renders exactly 3 components");
  const auto records = read_all(expand_archives(inputs));
  const PcaModel model = model_path.empty() ? pca_fit(embeddings_of(records), 3) : load_pca(model_path);
  if (model.k() < 3) throw UsageError("the PCA model has fewer than 3 components");

  const auto central = central_fragments(records);
  std::vector<double> scores;
  std::int32_t min_u = INT32_MAX, max_u = INT32_MIN, min_r = INT32_MAX, max_r = INT32_MIN;
  for (const auto* r : central) {
    const auto s = pca_project(model, std::span<const float>(r->embedding));
    scores.insert(scores.end(), s.begin(), s.begin() + 3);
    min_u = std::min(min_u, r->grid_row_u);
    max_u = std::max(max_u, r->grid_row_u);
    min_r = std::min(min_r, r->grid_col_r);
    max_r = std::max(max_r, r->grid_col_r);
  }
  const auto colours = scores_to_rgb(scores);

  RgbImage image;
  image.width = static_cast<std::size_t>(max_r - min_r) + 1;
  image.height = static_cast<std::size_t>(max_u - min_u) + 1;
  image.pixels.assign(image.width * image.height * 3, 0);
  for (std::size_t i = 0; i < central.size(); ++i) {
    std::uint8_t* px = image.at(static_cast<std::size_t>(max_u - central[i]->grid_row_u),
                                static_cast<std::size_t>(central[i]->grid_col_r - min_r));
    std::copy(colours[i].begin(), colours[i].end(), px);
  }
  write_png(out, image);

  std::array<double, 3> means{};
  for (const auto& c : colours) {
    for (int k = 0; k < 3; ++k) means[k] += c[k];
  }
  for (double& m : means) m /= static_cast<double>(colours.size());
  std::cout << json{{"png", out}, {"cells", central.size()}, {"width", image.width}, {"height", image.height},
                    {"channel_means", means}}
                   .dump(2)
            << "\n";
  return kExitOk;
}

// ---------------------------------------------------------------------------

struct SearchOptions {
  std::vector<std::string> archives;
  std::string query_id, query_file, metric = "cosine", bbox, quantize;
  std::optional<std::size_t> query_row;
  std::size_t k = 10;
};

LatLonBox parse_bbox(const std::string& text) {
  std::vector<double> v;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ',')) {
    try {
      std::size_t used = 0;
      v.push_back(std::stod(item, &used));
      if (used != item.size()) throw std::invalid_argument(item);
    } catch (const std::exception&) {
      throw UsageError("--bbox expects min_lat,min_lon,max_lat,max_lon");
    }
  }
  if (v.size() != 4) throw UsageError("--bbox expects min_lat,min_lon,max_lat,max_lon");
  return {v[0], v[1], v[2], v[3]};
}

int run_search(const SearchOptions& o) {
  auto records = read_all(expand_archives(o.archives));
  const int sources = !o.query_id.empty() + !o.query_file.empty() + o.query_row.has_value();
  if (sources != 1) throw UsageError("give exactly one of --query-id, --query-file, --query-row");

  EmbeddingVector query;
  if (!o.query_id.empty()) {
    auto it = std::find_if(records.begin(), records.end(), [&](const auto& r) { return r.unique_id == o.query_id; });
    if (it == records.end()) throw UsageError("no record with unique_id " + o.query_id);
    query = it->embedding;
  } else if (o.query_row) {
    if (*o.query_row >= records.size()) throw UsageError("--query-row out of range");
    query = records[*o.query_row].embedding;
  } else {
    std::ifstream in(o.query_file, std::ios::binary);
    if (!in) throw UsageError("cannot read " + o.query_file);
    const std::string bytes{std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
    if (bytes.size() % 4 != 0) throw UsageError("query file is not a whole number of float32 values");
    query.resize(bytes.size() / 4);
    std::memcpy(query.data(), bytes.data(), bytes.size());
  }

  const Metric metric = parse_metric(o.metric);
  const std::optional<LatLonBox> filter = o.bbox.empty() ? std::nullopt : std::optional(parse_bbox(o.bbox));
  if (!o.quantize.empty()) {
    const auto store = quantize(embeddings_of(records), parse_quant_mode(o.quantize));
    for (std::size_t i = 0; i < records.size(); ++i) records[i].embedding = store.dequantize(i);
  }
  const auto result = knn(query, records, o.k, metric, filter);
  json hits = json::array();
  for (const auto& h : result.hits) {
    const auto& r = records[h.index];
    hits.push_back({{"unique_id", h.unique_id},
                    {"score", h.score},
                    {"grid_cell", r.grid_cell},
                    {"centre_lat", r.centre_lat},
                    {"centre_lon", r.centre_lon}});
  }
  std::cout << json{{"metric", to_string(metric)}, {"k", o.k}, {"hits", hits}}.dump(2) << "\n";
  return kExitOk;
}

// ---------------------------------------------------------------------------

int run_convert(const std::vector<std::string>& inputs, const std::string& out, const std::string& from_raw) {
  if (!from_raw.empty()) {
    if (!inputs.empty()) throw UsageError("--from-raw takes no archives");
    auto records = reattach_raw(from_raw);
    const auto manifest = write_archive(std::move(records), out);
    std::cout << manifest.to_json() << "\n";
    return kExitOk;
  }
  const auto archives = expand_archives(inputs);
  const RawManifest m = convert_to_raw(archives, out);
  std::cout << json{{"out", out}, {"dtype", m.dtype}, {"dim", m.dim}, {"count", m.count}}.dump(2) << "\n";
  return kExitOk;
}

int run_inspect(const std::string& path) {
  const auto reader = parquet::FileReader::open(path);
  json columns = json::array();
  for (const auto& c : reader.schema()) {
    std::string type(parquet::to_string(c.type));
    if (c.utf8) type = "STRING";
    if (c.list) type = "list<" + type + ">";
    columns.push_back({{"name", c.name}, {"type", type}});
  }
  json meta = json::object();
  for (const auto& [k, v] : reader.metadata()) {
    const auto parsed = json::parse(v, nullptr, false);
    meta[k] = parsed.is_discarded() ? json(v) : parsed;
  }
  std::cout << json{{"path", path},
                    {"rows", reader.num_rows()},
                    {"row_groups", reader.num_row_groups()},
                    {"columns", columns},
                    {"metadata", meta}}
                   .dump(2)
            << "\n";
  return kExitOk;
}

// ---------------------------------------------------------------------------

struct SynthOptions {
  std::string out, crs = "EPSG:32633", format = std::string(kRawF32), bands = "B04,B03,B02";
  std::size_t cells = 4, size = 1068;
  std::uint64_t seed = 1;
  double easting = 300000, northing = 5000000, pixel = 10;
};

int run_synth(const SynthOptions& o) {
  std::vector<std::string> bands;
  std::stringstream ss(o.bands);
  for (std::string b; std::getline(ss, b, ',');) bands.push_back(b);
  if (bands.empty()) throw UsageError("--bands must name at least one band");
  std::vector<RasterCell> cells;
  for (std::size_t i = 0; i < o.cells; ++i) {
    // Neighbouring cells sit side by side on the UTM grid.
    AffineTransform t{o.easting + static_cast<double>(i % 8) * o.pixel * o.size,
                      o.northing - static_cast<double>(i / 8) * o.pixel * o.size, o.pixel};
    auto cell = synth_cell(o.seed + i, o.size, bands.size(), o.crs, t, bands);
    cell.grid_row_u = static_cast<std::int32_t>(100 - i / 8);
    cell.grid_col_r = static_cast<std::int32_t>(200 + i % 8);
    cell.grid_cell = std::to_string(cell.grid_row_u) + "U_" + std::to_string(cell.grid_col_r) + "R";
    cells.push_back(std::move(cell));
  }
  write_source_archive(o.out, cells, o.format);
  std::cout << json{{"out", o.out}, {"cells", o.cells}, {"size", o.size}, {"bands", bands}}.dump(2) << "\n";
  return kExitOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Embedding archives for gridded Earth-observation rasters"};
  app.require_subcommand(1);

  EmbedOptions embed;
  auto* embed_cmd = app.add_subcommand("embed", "Fragment, preprocess, embed and pack source archives");
  embed_cmd->add_option("--source", embed.source, "Source archive or directory");
  embed_cmd->add_option("--out", embed.out, "Output directory");
  embed_cmd->add_option("--profile", embed.profile, "Model profile name");
  embed_cmd->add_option("--config", embed.config, "Config file")->check(CLI::ExistingFile);
  embed_cmd->add_option("--workers", embed.workers, "Worker threads")->check(CLI::PositiveNumber);
  embed_cmd->add_option("--batch", embed.batch, "Fragments per backend call")->check(CLI::PositiveNumber);
  embed_cmd->add_option("--seed", embed.seed, "Reference backend seed");
  embed_cmd->add_option("--backend", embed.backend, "reference | sidecar:<host:port|stdio:cmd>");
  embed_cmd->add_flag("--no-validate", embed.no_validate, "Skip validation of written archives");

  std::vector<std::string> validate_inputs;
  auto* validate_cmd = app.add_subcommand("validate", "Check archives row by row");
  validate_cmd->add_option("archives", validate_inputs, "Archives or directories")->required();

  std::vector<std::string> pca_inputs;
  std::size_t pca_k = 3;
  std::string pca_out;
  auto* pca_cmd = app.add_subcommand("pca", "Fit a PCA model to archive embeddings");
  pca_cmd->add_option("--archives", pca_inputs, "Archives or directories")->required();
  pca_cmd->add_option("--components", pca_k, "Number of components")->check(CLI::PositiveNumber);
  pca_cmd->add_option("--out", pca_out, "Model JSON path")->required();

  std::vector<std::string> map_inputs;
  std::size_t map_k = 3;
  std::string map_model, map_out;
  auto* map_cmd = app.add_subcommand("map", "Render central-fragment PCA colours, one pixel per grid cell");
  map_cmd->add_option("--archives", map_inputs, "Archives or directories")->required();
  map_cmd->add_option("--components", map_k, "Must be 3");
  map_cmd->add_option("--model", map_model, "Saved PCA model (fit on the archives otherwise)");
  map_cmd->add_option("--out", map_out, "PNG path")->required();

  SearchOptions search;
  auto* search_cmd = app.add_subcommand("search", "Exact k-nearest-neighbour search");
  search_cmd->add_option("--archives", search.archives, "Archives or directories")->required();
  search_cmd->add_option("--query-id", search.query_id, "unique_id of a stored record");
  search_cmd->add_option("--query-row", search.query_row, "Row index across the given archives");
  search_cmd->add_option("--query-file", search.query_file, "Raw little-endian float32 vector");
  search_cmd->add_option("-k", search.k, "Results")->check(CLI::PositiveNumber);
  search_cmd->add_option("--metric", search.metric, "cosine | euclidean");
  search_cmd->add_option("--bbox", search.bbox, "min_lat,min_lon,max_lat,max_lon on fragment centres");
  search_cmd->add_option("--quantize", search.quantize, "Search reduced-precision vectors: f16 | i8");

  std::vector<std::string> convert_inputs;
  std::string convert_out, convert_from_raw;
  auto* convert_cmd = app.add_subcommand("convert", "Split archives into metadata + flat vectors, or back");
  convert_cmd->add_option("archives", convert_inputs, "Archives or directories");
  convert_cmd->add_option("--from-raw", convert_from_raw, "Rebuild an archive from a converted directory");
  convert_cmd->add_option("--out", convert_out, "Output directory (or archive with --from-raw)")->required();

  std::string inspect_path;
  auto* inspect_cmd = app.add_subcommand("inspect", "Print schema, row counts and file metadata");
  inspect_cmd->add_option("archive", inspect_path, "Parquet file")->required()->check(CLI::ExistingFile);

  SynthOptions synth;
  auto* synth_cmd = app.add_subcommand("synth", "Write a synthetic source archive");
  synth_cmd->add_option("--out", synth.out, "Source archive path")->required();
  synth_cmd->add_option("--cells", synth.cells, "Number of cells");
  synth_cmd->add_option("--size", synth.size, "Cell size in pixels")->check(CLI::PositiveNumber);
  synth_cmd->add_option("--bands", synth.bands, "Comma-separated band names");
  synth_cmd->add_option("--seed", synth.seed, "Seed of the first cell");
  synth_cmd->add_option("--crs", synth.crs, "UTM CRS, EPSG:326zz or EPSG:327zz");
  synth_cmd->add_option("--format", synth.format, "raw-f32 | tiff-uncompressed");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return kExitUsage;
  }

  try {
    if (embed_cmd->parsed()) return run_embed(embed);
    if (validate_cmd->parsed()) return run_validate(validate_inputs);
    if (pca_cmd->parsed()) return run_pca(pca_inputs, pca_k, pca_out);
    if (map_cmd->parsed()) return run_map(map_inputs, map_k, map_model, map_out);
    if (search_cmd->parsed()) return run_search(search);
    if (convert_cmd->parsed()) return run_convert(convert_inputs, convert_out, convert_from_raw);
    if (inspect_cmd->parsed()) return run_inspect(inspect_path);
    if (synth_cmd->parsed()) return run_synth(synth);
  } catch (const UsageError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitUsage;
  } catch (const ConfigError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitUsage;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitRuntime;
  }
  return kExitUsage;
}
