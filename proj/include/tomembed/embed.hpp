#pragma once

// Embedding backend contract and the deterministic reference embedder.

#include <chrono>
#include <cstdint>
#include <map>
#include <memory>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "tomembed/block.hpp"

namespace tomembed {

using EmbeddingVector = std::vector<float>;

struct BackendRef {
  enum class Kind { kReference, kSidecar };

  Kind kind = Kind::kReference;
  std::uint64_t seed = 0;
  // "host:port" or "stdio:<shell command>"
  std::string endpoint;
  std::chrono::milliseconds timeout{60000};

  // "reference" or "sidecar:<endpoint>".
  static BackendRef parse(std::string_view text);
  std::string to_string() const;
};

class EmbeddingBackend {
 public:
  virtual ~EmbeddingBackend() = default;
  virtual std::size_t dim() const = 0;
  virtual std::string name() const = 0;
  // Output i belongs to input i.
  virtual std::vector<EmbeddingVector> embed(std::span<const Block> blocks) = 0;
};

// Per channel: mean, population std and a 4x4 average-pooled grid (18
// values). The feature vector is projected by a dim x 18C matrix drawn from
// SplitMix64(seed) as 2u - 1 and L2-normalized. Accumulation happens in
// double in index order; the result is rounded to float once.
EmbeddingVector reference_embed(const Block& block, std::uint64_t seed, std::size_t dim);

// The 18C feature vector used by reference_embed.
std::vector<double> reference_features(const Block& block);

class ReferenceBackend final : public EmbeddingBackend {
 public:
  ReferenceBackend(std::uint64_t seed, std::size_t dim);

  std::size_t dim() const override { return dim_; }
  std::string name() const override { return "reference"; }
  std::vector<EmbeddingVector> embed(std::span<const Block> blocks) override;
  EmbeddingVector embed_one(const Block& block);

 private:
  const std::vector<double>& projection(std::size_t channels);

  std::uint64_t seed_;
  std::size_t dim_;
  std::map<std::size_t, std::vector<double>> projections_;
};

// Requires equal block shapes; equivalent to calling the backend per block.
std::vector<EmbeddingVector> embed_batch(std::span<const Block> blocks, EmbeddingBackend& backend);

// Sidecar backends are connected (and handshaken) here. Throws ConfigError
// when the backend's dimension disagrees with `expected_dim`.
std::unique_ptr<EmbeddingBackend> make_backend(const BackendRef& ref, std::size_t expected_dim);

}  // namespace tomembed
