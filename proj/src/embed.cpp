#include "tomembed/embed.hpp"

#include <array>
#include <cmath>
#include <stdexcept>

#include "tomembed/error.hpp"
#include "tomembed/sidecar.hpp"
#include "tomembed/splitmix64.hpp"

namespace tomembed {
namespace {

constexpr std::size_t kFeaturesPerChannel = 18;
constexpr std::size_t kPool = 4;

std::vector<double> make_projection(std::uint64_t seed, std::size_t dim, std::size_t features) {
  std::vector<double> m(dim * features);
  SplitMix64 rng(seed);
  for (double& v : m) v = 2.0 * rng.next_unit() - 1.0;
  return m;
}

EmbeddingVector project(std::span<const double> features, std::span<const double> matrix, std::size_t dim) {
  const std::size_t cols = features.size();
  std::vector<double> e(dim);
  double norm2 = 0.0;
  for (std::size_t i = 0; i < dim; ++i) {
    double acc = 0.0;
    const double* row = matrix.data() + i * cols;
    for (std::size_t j = 0; j < cols; ++j) acc += row[j] * features[j];
    e[i] = acc;
    norm2 += acc * acc;
  }
  const double norm = std::sqrt(norm2);
  EmbeddingVector out(dim, 0.0f);
  if (norm < 1e-12) return out;
  for (std::size_t i = 0; i < dim; ++i) out[i] = static_cast<float>(e[i] / norm);
  return out;
}

}  // namespace

BackendRef BackendRef::parse(std::string_view text) {
  BackendRef ref;
  if (text == "reference") return ref;
  constexpr std::string_view prefix = "sidecar:";
  if (text.starts_with(prefix) && text.size() > prefix.size()) {
    ref.kind = Kind::kSidecar;
    ref.endpoint = std::string(text.substr(prefix.size()));
    return ref;
  }
  throw ConfigError("backend must be 'reference' or 'sidecar:<endpoint>', got '" + std::string(text) + "'");
}

std::string BackendRef::to_string() const {
  return kind == Kind::kReference ? "reference" : "sidecar:" + endpoint;
}

std::vector<double> reference_features(const Block& block) {
  const std::size_t rows = block.rows();
  const std::size_t cols = block.cols();
  const double n = static_cast<double>(rows * cols);
  // Bin b spans [floor(b*s/4), max(floor(b*s/4) + 1, floor((b+1)*s/4))), so
  // no bin is empty even when s < 4.
  auto bin_edges = [](std::size_t s) {
    std::array<std::size_t, kPool + 1> lo{};
    std::array<std::size_t, kPool> hi{};
    for (std::size_t b = 0; b < kPool; ++b) {
      lo[b] = b * s / kPool;
      hi[b] = std::max(lo[b] + 1, (b + 1) * s / kPool);
    }
    return std::pair{lo, hi};
  };
  const auto [row_lo, row_hi] = bin_edges(rows);
  const auto [col_lo, col_hi] = bin_edges(cols);

  std::vector<double> f;
  f.reserve(block.channels() * kFeaturesPerChannel);
  for (std::size_t c = 0; c < block.channels(); ++c) {
    const auto plane = block.plane(c);
    double sum = 0.0;
    std::array<double, kPool * kPool> pooled{};
    if (rows >= kPool && cols >= kPool) {
      // Bins tile the plane, so the total and the bin sums share one pass.
      // Each accumulator still sees its values in row-major order.
      for (std::size_t br = 0; br < kPool; ++br) {
        for (std::size_t r = row_lo[br]; r < row_hi[br]; ++r) {
          const float* row = plane.data() + r * cols;
          for (std::size_t bc = 0; bc < kPool; ++bc) {
            double acc = pooled[br * kPool + bc];
            for (std::size_t col = col_lo[bc]; col < col_hi[bc]; ++col) {
              sum += row[col];
              acc += row[col];
            }
            pooled[br * kPool + bc] = acc;
          }
        }
      }
    } else {
      for (float v : plane) sum += v;
      for (std::size_t br = 0; br < kPool; ++br) {
        for (std::size_t bc = 0; bc < kPool; ++bc) {
          double acc = 0.0;
          for (std::size_t r = row_lo[br]; r < row_hi[br]; ++r) {
            const float* row = plane.data() + r * cols;
            for (std::size_t col = col_lo[bc]; col < col_hi[bc]; ++col) acc += row[col];
          }
          pooled[br * kPool + bc] = acc;
        }
      }
    }
    const double mean = sum / n;
    double ss = 0.0;
    for (float v : plane) {
      const double d = v - mean;
      ss += d * d;
    }
    f.push_back(mean);
    f.push_back(std::sqrt(ss / n));
    for (std::size_t br = 0; br < kPool; ++br) {
      for (std::size_t bc = 0; bc < kPool; ++bc) {
        f.push_back(pooled[br * kPool + bc] /
                    static_cast<double>((row_hi[br] - row_lo[br]) * (col_hi[bc] - col_lo[bc])));
      }
    }
  }
  return f;
}

EmbeddingVector reference_embed(const Block& block, std::uint64_t seed, std::size_t dim) {
  if (dim < 1) throw std::invalid_argument("embedding dim must be >= 1");
  const auto features = reference_features(block);
  const auto matrix = make_projection(seed, dim, features.size());
  return project(features, matrix, dim);
}

ReferenceBackend::ReferenceBackend(std::uint64_t seed, std::size_t dim) : seed_(seed), dim_(dim) {
  if (dim < 1) throw std::invalid_argument("embedding dim must be >= 1");
}

const std::vector<double>& ReferenceBackend::projection(std::size_t channels) {
  auto it = projections_.find(channels);
  if (it == projections_.end()) {
    it = projections_.emplace(channels, make_projection(seed_, dim_, channels * kFeaturesPerChannel)).first;
  }
  return it->second;
}

EmbeddingVector ReferenceBackend::embed_one(const Block& block) {
  const auto features = reference_features(block);
  return project(features, projection(block.channels()), dim_);
}

std::vector<EmbeddingVector> ReferenceBackend::embed(std::span<const Block> blocks) {
  std::vector<EmbeddingVector> out;
  out.reserve(blocks.size());
  for (const Block& b : blocks) out.push_back(embed_one(b));
  return out;
}

std::vector<EmbeddingVector> embed_batch(std::span<const Block> blocks, EmbeddingBackend& backend) {
  if (blocks.empty()) return {};
  for (const Block& b : blocks) {
    if (!b.same_shape(blocks.front())) throw std::invalid_argument("embed_batch: blocks differ in shape");
  }
  auto out = backend.embed(blocks);
  if (out.size() != blocks.size()) throw ProtocolError("backend returned the wrong number of embeddings");
  for (const auto& v : out) {
    if (v.size() != backend.dim()) throw ProtocolError("backend returned an embedding of the wrong size");
  }
  return out;
}

std::unique_ptr<EmbeddingBackend> make_backend(const BackendRef& ref, std::size_t expected_dim) {
  std::unique_ptr<EmbeddingBackend> backend;
  if (ref.kind == BackendRef::Kind::kReference) {
    backend = std::make_unique<ReferenceBackend>(ref.seed, expected_dim);
  } else {
    backend = mteb::SidecarClient::connect(ref.endpoint, ref.timeout);
  }
  if (backend->dim() != expected_dim) {
    throw ConfigError("backend '" + backend->name() + "' produces " + std::to_string(backend->dim()) +
                      "-d embeddings but the profile expects " + std::to_string(expected_dim));
  }
  return backend;
}

}  // namespace tomembed
