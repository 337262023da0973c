#pragma once

// End-to-end run: source archives -> fragments -> preprocessing ->
// embeddings -> one output archive per source archive.

#include <cstdint>
#include <filesystem>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "tomembed/archive.hpp"
#include "tomembed/embed.hpp"
#include "tomembed/fragmenter.hpp"
#include "tomembed/grid_raster.hpp"
#include "tomembed/preprocess.hpp"

namespace tomembed {

struct PipelineConfig {
  std::filesystem::path source;  // a source archive or a directory of them
  ModelProfile profile;
  std::filesystem::path out;
  std::size_t workers = 1;
  std::size_t batch = 32;
  bool validate = true;  // re-validate written archives
  std::uint64_t seed = 0;
  std::shared_ptr<const RasterDecoder> decoder = reference_decoder();

  void validate_config() const;
};

struct CellFailure {
  std::string archive;
  std::size_t row = 0;
  std::string message;
};

struct RunReport {
  std::size_t archives = 0;
  std::size_t cells = 0;
  std::size_t cells_ok = 0;
  std::size_t fragments = 0;
  std::size_t records = 0;
  std::size_t validation_violations = 0;
  std::vector<CellFailure> failures;  // ordered by archive, then row
  std::vector<std::filesystem::path> outputs;
  double wall_seconds = 0.0;

  std::string to_json() const;
};

// Embeds every fragment of one cell. The result has one record per planned
// fragment, in plan order.
std::vector<EmbeddingRecord> embed_cell(const RasterCell& cell, const ModelProfile& profile,
                                        EmbeddingBackend& backend, std::size_t batch = 32);

// Source archives in processing order: the file itself, or the sorted
// *.parquet files of a directory.
std::vector<std::filesystem::path> list_sources(const std::filesystem::path& source);

// "part-000.parquet", "part-001.parquet", ...
std::string part_name(std::size_t index);

// Failures of individual cells are collected in the report; unopenable
// sources, unusable backends and unwritable outputs throw.
RunReport run_pipeline(const PipelineConfig& config);

}  // namespace tomembed
