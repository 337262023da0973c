#include "tomembed/vector_ops.hpp"

#include <gtest/gtest.h>

#include <bit>
#include <cmath>
#include <numeric>

#include "oracles.hpp"
#include "test_util.hpp"
#include "tomembed/splitmix64.hpp"

namespace tomembed {
namespace {

using testutil::TempDir;

std::vector<EmbeddingVector> random_vectors(SplitMix64& rng, std::size_t n, std::size_t dim,
                                            std::span<const double> scales = {}) {
  std::vector<EmbeddingVector> out(n, EmbeddingVector(dim));
  for (auto& v : out) {
    for (std::size_t j = 0; j < dim; ++j) {
      const double s = scales.empty() ? 1.0 : scales[j];
      v[j] = static_cast<float>((rng.next_unit() * 2.0 - 1.0) * s);
    }
  }
  return out;
}

TEST(Pca, MatchesJacobiOracle) {
  SplitMix64 rng(8);
  for (int trial = 0; trial < 20; ++trial) {
    const std::size_t n = 100, d = 16, k = 5;
    std::vector<double> scales(d);
    for (std::size_t j = 0; j < d; ++j) scales[j] = 0.5 + rng.next_unit() * 3.0;
    const auto data = random_vectors(rng, n, d, scales);
    // Mix the axes so the covariance is not near-diagonal.
    std::vector<EmbeddingVector> mixed = data;
    for (auto& v : mixed) {
      for (std::size_t j = 1; j < d; ++j) v[j] += 0.5f * v[j - 1];
    }

    std::vector<double> mean(d, 0.0), cov(d * d, 0.0);
    for (const auto& v : mixed) {
      for (std::size_t j = 0; j < d; ++j) mean[j] += v[j] / double(n);
    }
    for (const auto& v : mixed) {
      for (std::size_t p = 0; p < d; ++p) {
        for (std::size_t q = 0; q < d; ++q) cov[p * d + q] += (v[p] - mean[p]) * (v[q] - mean[q]) / double(n - 1);
      }
    }
    std::vector<double> values, vectors;
    oracle::jacobi_eigen(cov, d, values, vectors);
    std::vector<std::size_t> order(d);
    std::iota(order.begin(), order.end(), 0);
    std::sort(order.begin(), order.end(), [&](auto a, auto b) { return values[a] > values[b]; });

    const auto model = pca_fit(mixed, k);
    ASSERT_EQ(model.k(), k);
    for (std::size_t c = 0; c < k; ++c) {
      double dot = 0.0;
      for (std::size_t j = 0; j < d; ++j) dot += model.component(c)[j] * vectors[j * d + order[c]];
      EXPECT_GE(std::abs(dot), 1.0 - 1e-4) << "trial " << trial << " component " << c;
      EXPECT_NEAR(model.explained_variance[c], values[order[c]], 1e-9 * values[order[0]]);
    }
  }
}

TEST(Pca, RecoversALine) {
  std::vector<EmbeddingVector> pts;
  for (int i = 0; i < 50; ++i) {
    const float t = static_cast<float>(i) - 25.0f;
    pts.push_back({1.0f + 3.0f * t, 2.0f - 4.0f * t, 0.5f});
  }
  const auto m = pca_fit(pts, 1);
  EXPECT_NEAR(std::abs(m.component(0)[0]), 0.6, 1e-9);
  EXPECT_NEAR(std::abs(m.component(0)[1]), 0.8, 1e-9);
  // Largest-magnitude entry is positive.
  EXPECT_GT(m.component(0)[1], 0.0);
  const auto scores = pca_project(m, pts);
  // t = -25 sits 24.5 below the mean of t.
  EXPECT_NEAR(scores[0], 24.5 * 5.0, 1e-3);
}

TEST(Pca, ConstantDataHasZeroVariance) {
  std::vector<EmbeddingVector> pts(10, EmbeddingVector{1.0f, 2.0f, 3.0f});
  const auto m = pca_fit(pts, 2);
  for (double v : m.explained_variance) EXPECT_NEAR(v, 0.0, 1e-12);
  for (double s : pca_project(m, pts)) EXPECT_NEAR(s, 0.0, 1e-9);
}

TEST(Pca, IsotropicComponentsAreOrthonormal) {
  SplitMix64 rng(9);
  const auto pts = random_vectors(rng, 2000, 8);
  const auto m = pca_fit(pts, 8);
  for (std::size_t a = 0; a < 8; ++a) {
    EXPECT_NEAR(m.explained_variance[a], 1.0 / 3.0, 0.05);
    for (std::size_t b = 0; b < 8; ++b) {
      double dot = 0;
      for (std::size_t j = 0; j < 8; ++j) dot += m.component(a)[j] * m.component(b)[j];
      EXPECT_NEAR(dot, a == b ? 1.0 : 0.0, 1e-9);
    }
    if (a > 0) {
      EXPECT_LE(m.explained_variance[a], m.explained_variance[a - 1]);
    }
  }
}

TEST(Pca, RejectsBadInput) {
  std::vector<EmbeddingVector> pts(3, EmbeddingVector{1.0f, 2.0f});
  EXPECT_THROW(pca_fit(pts, 3), std::invalid_argument);
  EXPECT_THROW(pca_fit(pts, 0), std::invalid_argument);
  pts[1].push_back(0.0f);
  EXPECT_THROW(pca_fit(pts, 1), std::invalid_argument);
}

TEST(Pca, SaveLoadRoundTrip) {
  TempDir dir;
  SplitMix64 rng(10);
  const auto m = pca_fit(random_vectors(rng, 30, 6), 3);
  save_pca(m, dir / "pca.json");
  EXPECT_TRUE(std::filesystem::exists(dir / "pca.f32"));
  const auto back = load_pca(dir / "pca.json");
  EXPECT_EQ(back.dim, 6u);
  EXPECT_EQ(back.mean, m.mean);
  EXPECT_EQ(back.explained_variance, m.explained_variance);
  for (std::size_t i = 0; i < m.components.size(); ++i) {
    EXPECT_EQ(back.components[i], static_cast<double>(static_cast<float>(m.components[i])));
  }
}

TEST(Percentile, LinearInterpolation) {
  const std::vector<double> v = {1, 2, 3, 4, 5};
  EXPECT_EQ(percentile(v, 0), 1.0);
  EXPECT_EQ(percentile(v, 100), 5.0);
  EXPECT_EQ(percentile(v, 50), 3.0);
  EXPECT_DOUBLE_EQ(percentile(v, 2), 1.08);
  EXPECT_DOUBLE_EQ(percentile(v, 98), 4.92);
}

void expect_balanced(const std::vector<Rgb>& rgb) {
  std::array<double, 3> means{};
  for (const auto& p : rgb) {
    for (int c = 0; c < 3; ++c) means[c] += p[c] / double(rgb.size());
  }
  EXPECT_LE(std::abs(means[0] - means[1]), 1.0) << means[0] << " " << means[1];
  EXPECT_LE(std::abs(means[0] - means[2]), 1.0) << means[0] << " " << means[2];
  EXPECT_LE(std::abs(means[1] - means[2]), 1.0) << means[1] << " " << means[2];
}

TEST(ScoresToRgb, ChannelMeansAgree) {
  SplitMix64 rng(12);
  for (int trial = 0; trial < 50; ++trial) {
    const std::size_t n = 10 + rng.next() % 500;
    std::vector<double> scores(n * 3);
    const double skew = 1.0 + rng.next_unit() * 4.0;
    for (std::size_t i = 0; i < n; ++i) {
      scores[i * 3] = rng.next_unit() * 10.0;
      scores[i * 3 + 1] = std::pow(rng.next_unit(), skew) * 0.1;
      scores[i * 3 + 2] = -std::pow(rng.next_unit(), 1.0 / skew) * 1e4;
    }
    expect_balanced(scores_to_rgb(scores));
  }
}

TEST(ScoresToRgb, DegenerateComponentIsMidGray) {
  std::vector<double> scores;
  for (int i = 0; i < 20; ++i) {
    scores.insert(scores.end(), {static_cast<double>(i), 7.0, static_cast<double>(i % 5)});
  }
  const auto rgb = scores_to_rgb(scores);
  for (const auto& p : rgb) EXPECT_EQ(p[1], 128);
  expect_balanced(rgb);
}

TEST(ScoresToRgb, RejectsBadShapes) {
  EXPECT_THROW(scores_to_rgb(std::vector<double>{1, 2}), std::invalid_argument);
  EXPECT_THROW(scores_to_rgb(std::vector<double>{1, 2, 3}), std::invalid_argument);
  EXPECT_THROW(scores_to_rgb(std::vector<double>{1, 2, NAN, 4, 5, 6}), std::invalid_argument);
}

TEST(Knn, MatchesLinearScanOracle) {
  SplitMix64 rng(13);
  const std::size_t n = 10000, dim = 64;
  std::vector<float> vecs(n * dim);
  for (float& v : vecs) v = static_cast<float>(rng.next_unit() * 2 - 1);
  // Exact duplicates exercise the id tie-break.
  for (std::size_t j = 0; j < dim; ++j) vecs[77 * dim + j] = vecs[5 * dim + j];
  std::vector<std::string> ids(n);
  for (std::size_t i = 0; i < n; ++i) ids[i] = std::to_string((i * 7919) % n);
  std::vector<bool> mask(n);
  for (std::size_t i = 0; i < n; ++i) mask[i] = rng.next() % 3 != 0;

  std::vector<float> query(vecs.begin() + 5 * dim, vecs.begin() + 6 * dim);
  query[0] += 0.01f;
  const std::unique_ptr<bool[]> mask_arr(new bool[n]);
  for (std::size_t i = 0; i < n; ++i) mask_arr[i] = mask[i];

  for (Metric metric : {Metric::kCosine, Metric::kEuclidean}) {
    for (std::size_t k : {1, 10, 100}) {
      for (bool filtered : {false, true}) {
        SCOPED_TRACE(testing::Message() << to_string(metric) << " k=" << k << " filtered=" << filtered);
        const auto res = knn(query, vecs, dim, ids, k, metric,
                             filtered ? std::span<const bool>(mask_arr.get(), n) : std::span<const bool>());
        const auto expect = oracle::linear_scan_knn(query, vecs, dim, ids, k, metric, filtered ? mask : std::vector<bool>{});
        ASSERT_EQ(res.hits.size(), expect.size());
        for (std::size_t i = 0; i < expect.size(); ++i) {
          ASSERT_EQ(res.hits[i].index, expect[i]) << "rank " << i;
          ASSERT_EQ(res.hits[i].unique_id, ids[expect[i]]);
        }
      }
    }
  }
}

TEST(Knn, RecordsOverloadFiltersByCentre) {
  std::vector<EmbeddingRecord> records(4);
  for (std::size_t i = 0; i < 4; ++i) {
    records[i].unique_id = "id" + std::to_string(i);
    records[i].embedding = {1.0f, static_cast<float>(i)};
    records[i].centre_lat = 10.0 * i;
    records[i].centre_lon = 5.0;
  }
  const std::vector<float> q = {1.0f, 3.0f};
  const auto all = knn(q, records, 2, Metric::kEuclidean);
  EXPECT_EQ(all.hits[0].unique_id, "id3");
  EXPECT_EQ(all.hits[1].unique_id, "id2");
  EXPECT_DOUBLE_EQ(all.hits[1].score, 1.0);
  const auto box = knn(q, records, 10, Metric::kEuclidean, LatLonBox{-1, 0, 15, 10});
  ASSERT_EQ(box.hits.size(), 2u);
  EXPECT_EQ(box.hits[0].unique_id, "id1");
  EXPECT_EQ(box.hits[1].index, 0u);
}

TEST(Knn, MetricsAndErrors) {
  const std::vector<float> a = {1, 0}, b = {0, 2}, z = {0, 0};
  EXPECT_EQ(cosine_similarity(a, b), 0.0);
  EXPECT_EQ(cosine_similarity(a, z), 0.0);
  EXPECT_DOUBLE_EQ(euclidean_distance(a, b), std::sqrt(5.0));
  EXPECT_EQ(parse_metric("cosine"), Metric::kCosine);
  EXPECT_THROW(parse_metric("l1"), std::invalid_argument);
  const std::vector<std::string> ids = {"x"};
  EXPECT_THROW(knn(a, a, 2, ids, 0, Metric::kCosine), std::invalid_argument);
  EXPECT_THROW(knn(b, std::vector<float>{1, 2, 3}, 3, ids, 1, Metric::kCosine), std::invalid_argument);
}

// Independent decoder straight from the binary16 definition.
double half_value(std::uint16_t h) {
  const int sign = h >> 15 ? -1 : 1;
  const int e = (h >> 10) & 0x1f;
  const int m = h & 0x3ff;
  if (e == 0) return sign * std::ldexp(m, -24);
  if (e == 31) return m ? NAN : sign * INFINITY;
  return sign * std::ldexp(1024 + m, e - 25);
}

TEST(Half, DecodesEveryPattern) {
  for (std::uint32_t h = 0; h < 65536; ++h) {
    const double expect = half_value(static_cast<std::uint16_t>(h));
    const float got = half_to_float(static_cast<std::uint16_t>(h));
    if (std::isnan(expect)) {
      ASSERT_TRUE(std::isnan(got)) << h;
    } else {
      ASSERT_EQ(static_cast<double>(got), expect) << h;
      ASSERT_EQ(std::signbit(got), (h >> 15) != 0) << h;
      ASSERT_EQ(float_to_half(got), h) << h;
    }
  }
}

TEST(Half, RoundsHalfwayCasesToEven) {
  for (std::uint32_t h = 0; h < 0x7bff; ++h) {
    const double lo = half_value(static_cast<std::uint16_t>(h));
    const double hi = half_value(static_cast<std::uint16_t>(h + 1));
    const auto mid = static_cast<float>((lo + hi) / 2);
    ASSERT_EQ(static_cast<double>(mid), (lo + hi) / 2);
    ASSERT_EQ(float_to_half(mid), (h % 2 == 0) ? h : h + 1) << h;
    ASSERT_EQ(float_to_half(std::nextafter(mid, 0.0f)), h) << h;
    ASSERT_EQ(float_to_half(std::nextafter(mid, INFINITY)), h + 1) << h;
    ASSERT_EQ(float_to_half(-mid), ((h % 2 == 0) ? h : h + 1) | 0x8000) << h;
  }
}

// numpy.float16 conversions.
TEST(Half, MatchesNumpy) {
  const std::pair<float, std::uint16_t> cases[] = {
      {65519.0f, 0x7bff},
      {65520.0f, 0x7c00},
      {std::ldexp(1.0f, -25), 0x0000},
      {std::nextafter(std::ldexp(1.0f, -25), 1.0f), 0x0001},
      {1.0f + std::ldexp(1.0f, -11), 0x3c00},
      {1.0f + 3 * std::ldexp(1.0f, -11), 0x3c02},
      {-0.0f, 0x8000},
      {6.103515625e-05f, 0x0400},
      {6.097555160522461e-05f, 0x03ff},
      {0.1f, 0x2e66},
      {-2.5f, 0xc100},
      {1e-8f, 0x0000},
      {4.57763671875e-05f, 0x0300},
  };
  for (const auto& [in, out] : cases) EXPECT_EQ(float_to_half(in), out) << in;
  EXPECT_EQ(float_to_half(INFINITY), 0x7c00);
  EXPECT_EQ(float_to_half(-1e10f), 0xfc00);
  EXPECT_EQ(float_to_half(NAN) & 0x7c00, 0x7c00);
  EXPECT_NE(float_to_half(NAN) & 0x03ff, 0);
}

TEST(Quantize, Int8ErrorWithinHalfStep) {
  SplitMix64 rng(14);
  auto vecs = random_vectors(rng, 200, 32);
  vecs[3].assign(32, 0.0f);
  const auto store = quantize(vecs, QuantMode::kI8);
  EXPECT_EQ(store.count, 200u);
  EXPECT_EQ(store.codes.size(), 200u * 32);
  for (std::size_t i = 0; i < vecs.size(); ++i) {
    const auto back = store.dequantize(i);
    const float s = store.scales[i];
    for (std::size_t j = 0; j < 32; ++j) {
      ASSERT_LE(std::abs(back[j] - vecs[i][j]), s / 2 * (1 + 1e-6f)) << i << " " << j;
    }
  }
  EXPECT_EQ(store.dequantize(3), EmbeddingVector(32, 0.0f));
}

TEST(Quantize, F16StoreMatchesElementwise) {
  SplitMix64 rng(15);
  const auto vecs = random_vectors(rng, 10, 8);
  const auto store = quantize(vecs, QuantMode::kF16);
  const auto all = store.dequantize_all();
  for (std::size_t i = 0; i < 10; ++i) {
    for (std::size_t j = 0; j < 8; ++j) EXPECT_EQ(all[i * 8 + j], half_to_float(float_to_half(vecs[i][j])));
  }
  EXPECT_EQ(parse_quant_mode(to_string(QuantMode::kI8)), QuantMode::kI8);
  EXPECT_THROW(parse_quant_mode("i4"), std::invalid_argument);
}

TEST(Quantize, SearchRecallAtTen) {
  SplitMix64 rng(16);
  const std::size_t n = 5000, dim = 64;
  const auto vecs = random_vectors(rng, n, dim);
  std::vector<float> flat;
  for (const auto& v : vecs) flat.insert(flat.end(), v.begin(), v.end());
  std::vector<std::string> ids(n);
  for (std::size_t i = 0; i < n; ++i) ids[i] = std::to_string(i);
  for (QuantMode mode : {QuantMode::kF16, QuantMode::kI8}) {
    const auto approx = quantize(vecs, mode).dequantize_all();
    std::size_t found = 0;
    const std::size_t queries = 50;
    for (std::size_t q = 0; q < queries; ++q) {
      const auto query = random_vectors(rng, 1, dim)[0];
      const auto exact = knn(query, flat, dim, ids, 10, Metric::kCosine);
      const auto got = knn(query, approx, dim, ids, 10, Metric::kCosine);
      for (const auto& h : got.hits) {
        found += std::count_if(exact.hits.begin(), exact.hits.end(), [&](const SearchHit& e) { return e.index == h.index; });
      }
    }
    EXPECT_GE(static_cast<double>(found) / (queries * 10), 0.95) << to_string(mode);
  }
}

}  // namespace
}  // namespace tomembed
