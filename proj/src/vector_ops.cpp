#include "tomembed/vector_ops.hpp"

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <memory>
#include <numeric>
#include <stdexcept>

#include "json.hpp"
#include "tomembed/error.hpp"

namespace tomembed {
namespace {

std::size_t common_length(std::span<const EmbeddingVector> vectors) {
  if (vectors.empty()) return 0;
  const std::size_t d = vectors.front().size();
  for (const auto& v : vectors) {
    if (v.size() != d) throw std::invalid_argument("vectors have mixed lengths");
  }
  return d;
}

}  // namespace

// ---------------------------------------------------------------------------
// PCA

PcaModel pca_fit(std::span<const EmbeddingVector> vectors, std::size_t k) {
  const std::size_t n = vectors.size();
  if (k < 1 || n <= k) {
    throw std::invalid_argument("pca_fit needs N > k >= 1, got N=" + std::to_string(n) + " k=" + std::to_string(k));
  }
  const std::size_t d = common_length(vectors);
  if (k > d) throw std::invalid_argument("pca_fit: k exceeds the vector dimension");

  PcaModel model;
  model.dim = d;
  model.mean.assign(d, 0.0);
  for (const auto& v : vectors) {
    for (std::size_t j = 0; j < d; ++j) model.mean[j] += v[j];
  }
  for (double& m : model.mean) m /= static_cast<double>(n);

  Eigen::MatrixXd centered(n, d);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < d; ++j) {
      if (!std::isfinite(vectors[i][j])) throw std::invalid_argument("pca_fit: non-finite input");
      centered(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) = vectors[i][j] - model.mean[j];
    }
  }
  const Eigen::MatrixXd cov = (centered.transpose() * centered) / static_cast<double>(n - 1);
  const Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> solver(cov);
  if (solver.info() != Eigen::Success) throw Error("eigendecomposition failed");

  // Eigen sorts eigenvalues ascending.
  model.components.resize(k * d);
  model.explained_variance.resize(k);
  for (std::size_t c = 0; c < k; ++c) {
    const auto col = static_cast<Eigen::Index>(d - 1 - c);
    model.explained_variance[c] = std::max(0.0, solver.eigenvalues()(col));
    Eigen::VectorXd v = solver.eigenvectors().col(col);
    Eigen::Index arg = 0;
    v.cwiseAbs().maxCoeff(&arg);
    if (v(arg) < 0) v = -v;
    for (std::size_t j = 0; j < d; ++j) model.components[c * d + j] = v(static_cast<Eigen::Index>(j));
  }
  return model;
}

std::vector<double> pca_project(const PcaModel& model, std::span<const float> vector) {
  if (vector.size() != model.dim) {
    throw std::invalid_argument("pca_project: vector has " + std::to_string(vector.size()) + " values, model expects " +
                                std::to_string(model.dim));
  }
  std::vector<double> scores(model.k(), 0.0);
  for (std::size_t c = 0; c < model.k(); ++c) {
    const auto comp = model.component(c);
    double s = 0.0;
    for (std::size_t j = 0; j < model.dim; ++j) s += (vector[j] - model.mean[j]) * comp[j];
    scores[c] = s;
  }
  return scores;
}

std::vector<double> pca_project(const PcaModel& model, std::span<const EmbeddingVector> vectors) {
  std::vector<double> out;
  out.reserve(vectors.size() * model.k());
  for (const auto& v : vectors) {
    const auto s = pca_project(model, std::span<const float>(v));
    out.insert(out.end(), s.begin(), s.end());
  }
  return out;
}

void save_pca(const PcaModel& model, const std::filesystem::path& json_path) {
  std::filesystem::path bin = json_path;
  bin.replace_extension(".f32");
  const nlohmann::json j = {{"dim", model.dim},
                            {"k", model.k()},
                            {"mean", model.mean},
                            {"explained_variance", model.explained_variance},
                            {"components_file", bin.filename().string()}};
  std::ofstream js(json_path, std::ios::trunc);
  js << j.dump(2) << "\n";
  std::ofstream out(bin, std::ios::binary | std::ios::trunc);
  for (double c : model.components) {
    const float f = static_cast<float>(c);
    out.write(reinterpret_cast<const char*>(&f), sizeof f);
  }
  if (!js || !out) throw Error("cannot write PCA model to " + json_path.string());
}

PcaModel load_pca(const std::filesystem::path& json_path) {
  std::ifstream js(json_path);
  if (!js) throw Error("cannot read " + json_path.string());
  PcaModel model;
  std::filesystem::path bin;
  try {
    const auto j = nlohmann::json::parse(js);
    model.dim = j.at("dim").get<std::size_t>();
    model.mean = j.at("mean").get<std::vector<double>>();
    model.explained_variance = j.at("explained_variance").get<std::vector<double>>();
    bin = json_path.parent_path() / j.at("components_file").get<std::string>();
  } catch (const nlohmann::json::exception& e) {
    throw FormatError("bad PCA model " + json_path.string() + ": " + e.what());
  }
  if (model.mean.size() != model.dim) throw FormatError("PCA mean length disagrees with dim");
  std::ifstream in(bin, std::ios::binary);
  std::vector<float> raw(model.k() * model.dim);
  in.read(reinterpret_cast<char*>(raw.data()), static_cast<std::streamsize>(raw.size() * sizeof(float)));
  if (!in || in.peek() != std::char_traits<char>::eof()) {
    throw FormatError(bin.string() + " does not hold " + std::to_string(raw.size()) + " floats");
  }
  model.components.assign(raw.begin(), raw.end());
  return model;
}

// ---------------------------------------------------------------------------
// RGB mapping

double percentile(std::span<const double> sorted, double p) {
  if (sorted.empty()) throw std::invalid_argument("percentile of an empty sample");
  const double pos = p / 100.0 * static_cast<double>(sorted.size() - 1);
  const auto lo = static_cast<std::size_t>(std::floor(pos));
  const std::size_t hi = std::min(lo + 1, sorted.size() - 1);
  const double frac = pos - static_cast<double>(lo);
  return sorted[lo] + (sorted[hi] - sorted[lo]) * frac;
}

namespace {

std::uint8_t to_byte(double v) { return static_cast<std::uint8_t>(std::floor(std::clamp(v, 0.0, 255.0) + 0.5)); }

double scaled_mean(std::span<const double> values, double gain) {
  double sum = 0.0;
  for (double v : values) sum += to_byte(gain * v);
  return sum / static_cast<double>(values.size());
}

// Gain whose rounded output mean is closest to `target`; the mean is a
// non-decreasing step function of the gain.
double fit_gain(std::span<const double> values, double mean, double target) {
  double guess = mean > 0 ? target / mean : 1.0;
  if (std::abs(scaled_mean(values, guess) - target) <= 0.5) return guess;
  double lo = 0.0;
  double hi = std::max(guess, 1.0);
  while (scaled_mean(values, hi) < target && hi < 1e12) hi *= 2.0;
  for (int i = 0; i < 200 && hi - lo > 1e-12 * hi; ++i) {
    const double mid = 0.5 * (lo + hi);
    (scaled_mean(values, mid) < target ? lo : hi) = mid;
  }
  return std::abs(scaled_mean(values, lo) - target) < std::abs(scaled_mean(values, hi) - target) ? lo : hi;
}

}  // namespace

std::vector<Rgb> scores_to_rgb(std::span<const double> scores) {
  if (scores.size() % 3 != 0) throw std::invalid_argument("scores_to_rgb expects N x 3 scores");
  const std::size_t n = scores.size() / 3;
  if (n < 2) throw std::invalid_argument("scores_to_rgb needs at least 2 rows");

  std::array<std::vector<double>, 3> mapped;
  std::array<bool, 3> degenerate{};
  for (std::size_t c = 0; c < 3; ++c) {
    std::vector<double> col(n);
    for (std::size_t i = 0; i < n; ++i) {
      col[i] = scores[i * 3 + c];
      if (!std::isfinite(col[i])) throw std::invalid_argument("scores_to_rgb: non-finite score");
    }
    std::vector<double> sorted = col;
    std::sort(sorted.begin(), sorted.end());
    const double p2 = percentile(sorted, 2.0);
    const double p98 = percentile(sorted, 98.0);
    degenerate[c] = !(p98 > p2);
    mapped[c].resize(n);
    for (std::size_t i = 0; i < n; ++i) {
      mapped[c][i] = degenerate[c] ? 128.0 : (std::clamp(col[i], p2, p98) - p2) / (p98 - p2) * 255.0;
    }
  }

  std::array<double, 3> means{};
  for (std::size_t c = 0; c < 3; ++c) {
    means[c] = std::accumulate(mapped[c].begin(), mapped[c].end(), 0.0) / static_cast<double>(n);
  }
  double target = 128.0;
  if (std::none_of(degenerate.begin(), degenerate.end(), [](bool d) { return d; })) {
    target = (means[0] + means[1] + means[2]) / 3.0;
    // A channel cannot exceed 255 times its share of non-zero values.
    for (std::size_t c = 0; c < 3; ++c) {
      const auto positive = std::count_if(mapped[c].begin(), mapped[c].end(), [](double v) { return v > 0.0; });
      target = std::min(target, 255.0 * static_cast<double>(positive) / static_cast<double>(n));
    }
  }

  std::vector<Rgb> out(n);
  for (std::size_t c = 0; c < 3; ++c) {
    const double gain = degenerate[c] ? 1.0 : fit_gain(mapped[c], means[c], target);
    for (std::size_t i = 0; i < n; ++i) out[i][c] = to_byte(gain * mapped[c][i]);
  }
  return out;
}

// ---------------------------------------------------------------------------
// Search

std::string_view to_string(Metric metric) { return metric == Metric::kCosine ? "cosine" : "euclidean"; }

Metric parse_metric(std::string_view text) {
  if (text == "cosine") return Metric::kCosine;
  if (text == "euclidean") return Metric::kEuclidean;
  throw std::invalid_argument("unknown metric '" + std::string(text) + "'");
}

double cosine_similarity(std::span<const float> a, std::span<const float> b) {
  double dot = 0.0, na = 0.0, nb = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    dot += static_cast<double>(a[i]) * b[i];
    na += static_cast<double>(a[i]) * a[i];
    nb += static_cast<double>(b[i]) * b[i];
  }
  if (na == 0.0 || nb == 0.0) return 0.0;
  return dot / (std::sqrt(na) * std::sqrt(nb));
}

double euclidean_distance(std::span<const float> a, std::span<const float> b) {
  double sum = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double d = static_cast<double>(a[i]) - b[i];
    sum += d * d;
  }
  return std::sqrt(sum);
}

QueryResult knn(std::span<const float> query, std::span<const float> vectors, std::size_t dim,
                std::span<const std::string> ids, std::size_t k, Metric metric, std::span<const bool> mask) {
  if (k < 1) throw std::invalid_argument("knn: k must be at least 1");
  if (query.size() != dim) throw std::invalid_argument("knn: query length differs from the vector dimension");
  const std::size_t n = ids.size();
  if (vectors.size() != n * dim) throw std::invalid_argument("knn: vector block does not match the id count");
  if (!mask.empty() && mask.size() != n) throw std::invalid_argument("knn: mask length differs from the id count");

  QueryResult result;
  result.metric = metric;
  std::vector<SearchHit> hits;
  hits.reserve(mask.empty() ? n : static_cast<std::size_t>(std::count(mask.begin(), mask.end(), true)));
  for (std::size_t i = 0; i < n; ++i) {
    if (!mask.empty() && !mask[i]) continue;
    const auto v = vectors.subspan(i * dim, dim);
    hits.push_back({ids[i], metric == Metric::kCosine ? cosine_similarity(query, v) : euclidean_distance(query, v), i});
  }
  const auto better = [metric](const SearchHit& a, const SearchHit& b) {
    if (a.score != b.score) return metric == Metric::kCosine ? a.score > b.score : a.score < b.score;
    return a.unique_id < b.unique_id;
  };
  const std::size_t keep = std::min(k, hits.size());
  std::partial_sort(hits.begin(), hits.begin() + static_cast<std::ptrdiff_t>(keep), hits.end(), better);
  hits.resize(keep);
  result.hits = std::move(hits);
  return result;
}

QueryResult knn(std::span<const float> query, std::span<const EmbeddingRecord> records, std::size_t k, Metric metric,
                const std::optional<LatLonBox>& filter) {
  const std::size_t dim = query.size();
  std::vector<float> flat;
  flat.reserve(records.size() * dim);
  std::vector<std::string> ids;
  ids.reserve(records.size());
  std::unique_ptr<bool[]> mask(new bool[records.size()]);
  for (std::size_t i = 0; i < records.size(); ++i) {
    if (records[i].embedding.size() != dim) {
      throw std::invalid_argument("knn: record " + std::to_string(i) + " has dim " +
                                  std::to_string(records[i].embedding.size()) + ", query has " + std::to_string(dim));
    }
    flat.insert(flat.end(), records[i].embedding.begin(), records[i].embedding.end());
    ids.push_back(records[i].unique_id);
    mask[i] = !filter || filter->contains(records[i].centre_lat, records[i].centre_lon);
  }
  return knn(query, flat, dim, ids, k, metric,
             filter ? std::span<const bool>(mask.get(), records.size()) : std::span<const bool>());
}

// ---------------------------------------------------------------------------
// Quantization

std::uint16_t float_to_half(float value) {
  std::uint32_t bits;
  std::memcpy(&bits, &value, 4);
  const auto sign = static_cast<std::uint16_t>((bits >> 16) & 0x8000u);
  const std::uint32_t exp = (bits >> 23) & 0xFFu;
  const std::uint32_t mant = bits & 0x7FFFFFu;

  if (exp == 0xFF) return static_cast<std::uint16_t>(sign | 0x7C00u | (mant ? 0x200u | (mant >> 13) : 0u));
  const int e = static_cast<int>(exp) - 127 + 15;
  if (e >= 31) return static_cast<std::uint16_t>(sign | 0x7C00u);
  if (e <= 0) {
    if (e < -10) return sign;
    const std::uint32_t m = mant | 0x800000u;
    const int shift = 14 - e;
    std::uint32_t half = m >> shift;
    const std::uint32_t rem = m & ((1u << shift) - 1);
    const std::uint32_t halfway = 1u << (shift - 1);
    if (rem > halfway || (rem == halfway && (half & 1u))) ++half;
    return static_cast<std::uint16_t>(sign | half);
  }
  std::uint32_t half = (static_cast<std::uint32_t>(e) << 10) | (mant >> 13);
  const std::uint32_t rem = mant & 0x1FFFu;
  if (rem > 0x1000u || (rem == 0x1000u && (half & 1u))) ++half;
  return static_cast<std::uint16_t>(sign | std::min<std::uint32_t>(half, 0x7C00u));
}

float half_to_float(std::uint16_t half) {
  const std::uint32_t sign = static_cast<std::uint32_t>(half & 0x8000u) << 16;
  const std::uint32_t exp = (half >> 10) & 0x1Fu;
  std::uint32_t mant = half & 0x3FFu;
  std::uint32_t bits;
  if (exp == 0x1F) {
    bits = sign | 0x7F800000u | (mant << 13);
  } else if (exp != 0) {
    bits = sign | ((exp + 112) << 23) | (mant << 13);
  } else if (mant == 0) {
    bits = sign;
  } else {
    int e = 113;
    while ((mant & 0x400u) == 0) {
      mant <<= 1;
      --e;
    }
    bits = sign | (static_cast<std::uint32_t>(e) << 23) | ((mant & 0x3FFu) << 13);
  }
  float out;
  std::memcpy(&out, &bits, 4);
  return out;
}

std::string_view to_string(QuantMode mode) { return mode == QuantMode::kF16 ? "f16" : "i8"; }

QuantMode parse_quant_mode(std::string_view text) {
  if (text == "f16") return QuantMode::kF16;
  if (text == "i8") return QuantMode::kI8;
  throw std::invalid_argument("unknown quantization mode '" + std::string(text) + "'");
}

QuantizedStore quantize(std::span<const EmbeddingVector> vectors, QuantMode mode) {
  QuantizedStore store;
  store.mode = mode;
  store.dim = common_length(vectors);
  store.count = vectors.size();
  if (mode == QuantMode::kF16) {
    store.halves.reserve(store.count * store.dim);
    for (const auto& v : vectors) {
      for (float x : v) store.halves.push_back(float_to_half(x));
    }
    return store;
  }
  store.codes.reserve(store.count * store.dim);
  store.scales.reserve(store.count);
  for (const auto& v : vectors) {
    float max_abs = 0.0f;
    for (float x : v) max_abs = std::max(max_abs, std::abs(x));
    const float s = max_abs / 127.0f;
    store.scales.push_back(s);
    for (float x : v) {
      const long q = s > 0.0f ? std::lround(x / s) : 0;
      store.codes.push_back(static_cast<std::int8_t>(std::clamp(q, -127L, 127L)));
    }
  }
  return store;
}

EmbeddingVector QuantizedStore::dequantize(std::size_t i) const {
  if (i >= count) throw std::out_of_range("quantized vector index out of range");
  EmbeddingVector out(dim);
  for (std::size_t j = 0; j < dim; ++j) {
    out[j] = mode == QuantMode::kF16 ? half_to_float(halves[i * dim + j])
                                     : static_cast<float>(codes[i * dim + j]) * scales[i];
  }
  return out;
}

std::vector<float> QuantizedStore::dequantize_all() const {
  std::vector<float> out;
  out.reserve(count * dim);
  for (std::size_t i = 0; i < count; ++i) {
    const auto v = dequantize(i);
    out.insert(out.end(), v.begin(), v.end());
  }
  return out;
}

}  // namespace tomembed
