#pragma once

// Consumer-side vector operations: PCA, PCA scores to RGB, exact k-NN
// search and precision reduction.

#include <array>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "tomembed/archive.hpp"
#include "tomembed/embed.hpp"

namespace tomembed {

struct PcaModel {
  std::size_t dim = 0;
  std::vector<double> mean;                // dim
  std::vector<double> components;          // k x dim, row-major, orthonormal rows
  std::vector<double> explained_variance;  // k, non-increasing

  std::size_t k() const { return explained_variance.size(); }
  std::span<const double> component(std::size_t i) const { return {components.data() + i * dim, dim}; }
};

// Top-k eigenpairs of the sample covariance (N - 1 denominator). Each
// component's largest-magnitude entry is made positive. Throws
// std::invalid_argument unless N > k >= 1 and all vectors share a length.
PcaModel pca_fit(std::span<const EmbeddingVector> vectors, std::size_t k);

// N x k scores, row-major.
std::vector<double> pca_project(const PcaModel& model, std::span<const EmbeddingVector> vectors);
std::vector<double> pca_project(const PcaModel& model, std::span<const float> vector);

// `json_path` holds dim, k, mean and variances; the components go to
// `json_path` with extension ".f32" as k x dim little-endian floats.
void save_pca(const PcaModel& model, const std::filesystem::path& json_path);
PcaModel load_pca(const std::filesystem::path& json_path);

using Rgb = std::array<std::uint8_t, 3>;

// `scores` is N x 3, row-major. Each component is clipped at its 2nd and
// 98th percentile and mapped to [0, 255]; a component with no spread maps
// to 128. Channels are then scaled by per-channel gains so that their 8-bit
// means agree with a common target to within 0.5.
std::vector<Rgb> scores_to_rgb(std::span<const double> scores);

// Linear interpolation between closest ranks; `sorted` must be ascending.
double percentile(std::span<const double> sorted, double p);

enum class Metric { kCosine, kEuclidean };
std::string_view to_string(Metric metric);
Metric parse_metric(std::string_view text);

// Filter on centre_lat / centre_lon, bounds inclusive.
struct LatLonBox {
  double min_lat = -90.0;
  double min_lon = -180.0;
  double max_lat = 90.0;
  double max_lon = 180.0;

  bool contains(double lat, double lon) const {
    return lat >= min_lat && lat <= max_lat && lon >= min_lon && lon <= max_lon;
  }
};

struct SearchHit {
  std::string unique_id;
  double score = 0.0;
  std::size_t index = 0;  // position in the searched collection

  bool operator==(const SearchHit&) const = default;
};

struct QueryResult {
  Metric metric = Metric::kCosine;
  std::vector<SearchHit> hits;  // best first
};

// Cosine similarity (0 when either vector is zero) or Euclidean distance,
// accumulated in double. Ties are broken by unique_id ascending.
double cosine_similarity(std::span<const float> a, std::span<const float> b);
double euclidean_distance(std::span<const float> a, std::span<const float> b);

// Exact brute-force search. `vectors` is N x dim, row-major; `ids` has N
// entries; `mask`, when non-empty, marks candidate rows.
QueryResult knn(std::span<const float> query, std::span<const float> vectors, std::size_t dim,
                std::span<const std::string> ids, std::size_t k, Metric metric, std::span<const bool> mask = {});
QueryResult knn(std::span<const float> query, std::span<const EmbeddingRecord> records, std::size_t k, Metric metric,
                const std::optional<LatLonBox>& filter = std::nullopt);

// IEEE 754 binary16 with round-to-nearest-even.
std::uint16_t float_to_half(float value);
float half_to_float(std::uint16_t half);

enum class QuantMode { kF16, kI8 };
std::string_view to_string(QuantMode mode);
QuantMode parse_quant_mode(std::string_view text);

struct QuantizedStore {
  QuantMode mode = QuantMode::kF16;
  std::size_t dim = 0;
  std::size_t count = 0;
  std::vector<std::uint16_t> halves;  // f16: count x dim
  std::vector<std::int8_t> codes;     // i8: count x dim
  std::vector<float> scales;          // i8: one per vector, max|x| / 127

  EmbeddingVector dequantize(std::size_t i) const;
  // count x dim, row-major.
  std::vector<float> dequantize_all() const;
};

QuantizedStore quantize(std::span<const EmbeddingVector> vectors, QuantMode mode);

}  // namespace tomembed
