#include "tomembed/pipeline.hpp"

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cstdio>
#include <mutex>
#include <thread>
#include <utility>

#include "json.hpp"
#include "tomembed/error.hpp"

namespace tomembed {

namespace fs = std::filesystem;

void PipelineConfig::validate_config() const {
  if (workers < 1) throw ConfigError("workers must be at least 1");
  if (batch < 1) throw ConfigError("batch must be at least 1");
  if (out.empty()) throw ConfigError("an output directory is required");
  try {
    profile.validate();
  } catch (const std::invalid_argument& e) {
    throw ConfigError(e.what());
  }
}

std::string RunReport::to_json() const {
  nlohmann::json failures_json = nlohmann::json::array();
  for (const auto& f : failures) {
    failures_json.push_back({{"archive", f.archive}, {"row", f.row}, {"message", f.message}});
  }
  std::vector<std::string> out;
  for (const auto& p : outputs) out.push_back(p.string());
  const nlohmann::json j = {{"archives", archives},
                            {"cells", cells},
                            {"cells_ok", cells_ok},
                            {"fragments", fragments},
                            {"records", records},
                            {"validation_violations", validation_violations},
                            {"failures", failures_json},
                            {"outputs", out},
                            {"wall_seconds", wall_seconds}};
  return j.dump(2);
}

std::vector<EmbeddingRecord> embed_cell(const RasterCell& cell, const ModelProfile& profile,
                                        EmbeddingBackend& backend, std::size_t batch) {
  cell.validate();
  FragmentConfig fc;
  fc.source_size = static_cast<std::int32_t>(cell.size());
  fc.fragment_size = profile.fragment_size;
  fc.target_overlap = profile.target_overlap;
  fc.border_shift = profile.border_shift;
  const FragmentPlan plan = plan_fragments(fc);
  const Block bands = select_bands(cell.bands, cell.band_names, profile.band_selection);

  std::vector<EmbeddingRecord> records;
  records.reserve(plan.specs.size());
  std::vector<Block> pending;
  std::vector<const FragmentSpec*> pending_specs;
  auto flush = [&] {
    auto vectors = embed_batch(pending, backend);
    for (std::size_t i = 0; i < vectors.size(); ++i) {
      if (vectors[i].size() != profile.embedding_dim) {
        throw ProtocolError("backend returned " + std::to_string(vectors[i].size()) + " values, profile expects " +
                            std::to_string(profile.embedding_dim));
      }
      records.push_back(make_record(std::move(vectors[i]), cell, pending_specs[i]->pixel_bbox));
    }
    pending.clear();
    pending_specs.clear();
  };
  for (const auto& spec : plan.specs) {
    pending.push_back(apply_profile(std::move(extract_fragment(bands, spec).block), profile));
    pending_specs.push_back(&spec);
    if (pending.size() >= std::max<std::size_t>(batch, 1)) flush();
  }
  if (!pending.empty()) flush();
  return records;
}

std::vector<fs::path> list_sources(const fs::path& source) {
  if (fs::is_regular_file(source)) return {source};
  if (!fs::is_directory(source)) throw Error("source " + source.string() + " does not exist");
  std::vector<fs::path> out;
  for (const auto& entry : fs::directory_iterator(source)) {
    if (entry.is_regular_file() && entry.path().extension() == ".parquet") out.push_back(entry.path());
  }
  std::sort(out.begin(), out.end());
  return out;
}

std::string part_name(std::size_t index) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "part-%03zu.parquet", index);
  return buf;
}

namespace {

struct CellResult {
  std::vector<EmbeddingRecord> records;
  std::size_t fragments = 0;
  std::optional<std::string> error;
};

BackendRef backend_for(const PipelineConfig& config) {
  BackendRef ref = config.profile.backend;
  if (ref.kind == BackendRef::Kind::kReference) ref.seed = config.seed;
  return ref;
}

}  // namespace

RunReport run_pipeline(const PipelineConfig& config) {
  config.validate_config();
  const auto started = std::chrono::steady_clock::now();
  const auto sources = list_sources(config.source);
  fs::create_directories(config.out);
  const BackendRef backend_ref = backend_for(config);

  RunReport report;
  report.archives = sources.size();

  // One backend per worker; sidecar connections are never shared.
  std::vector<std::unique_ptr<EmbeddingBackend>> backends(config.workers);
  for (auto& b : backends) b = make_backend(backend_ref, config.profile.embedding_dim);

  for (std::size_t a = 0; a < sources.size(); ++a) {
    const SourceArchive archive = SourceArchive::open(sources[a], config.decoder);
    const std::size_t cells = archive.size();
    std::vector<CellResult> results(cells);
    std::atomic<std::size_t> next{0};

    auto work = [&](std::size_t w) {
      while (true) {
        const std::size_t row = next.fetch_add(1);
        if (row >= cells) return;
        CellResult& result = results[row];
        try {
          if (!backends[w]) backends[w] = make_backend(backend_ref, config.profile.embedding_dim);
          const RasterCell cell = archive.read(row);
          result.records = embed_cell(cell, config.profile, *backends[w], config.batch);
          result.fragments = result.records.size();
        } catch (const ProtocolError& e) {
          // The connection is in an unknown state; reconnect for the next cell.
          backends[w].reset();
          result.records.clear();
          result.error = e.what();
        } catch (const std::exception& e) {
          result.records.clear();
          result.error = e.what();
        }
      }
    };
    const std::size_t threads = std::min(config.workers, std::max<std::size_t>(cells, 1));
    std::vector<std::thread> pool;
    for (std::size_t w = 1; w < threads; ++w) pool.emplace_back(work, w);
    work(0);
    for (auto& t : pool) t.join();

    // Single writer: merge in row order.
    std::vector<EmbeddingRecord> records;
    for (std::size_t row = 0; row < cells; ++row) {
      auto& r = results[row];
      ++report.cells;
      if (r.error) {
        report.failures.push_back({sources[a].filename().string(), row, *r.error});
        continue;
      }
      ++report.cells_ok;
      report.fragments += r.fragments;
      std::move(r.records.begin(), r.records.end(), std::back_inserter(records));
    }
    report.records += records.size();

    ArchiveManifest info;
    info.profile = config.profile.name;
    info.embedding_dim = config.profile.embedding_dim;
    info.source = sources[a].filename().string();
    info.source_sha256 = sha256_file(sources[a]);
    const fs::path out_path = config.out / part_name(a);
    write_archive(std::move(records), out_path, info);
    report.outputs.push_back(out_path);
    if (config.validate) report.validation_violations += validate_archive(out_path).violations.size();
  }
  report.wall_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - started).count();
  return report;
}

}  // namespace tomembed
