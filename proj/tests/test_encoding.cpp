#include <doctest.h>

#include <cmath>

#include "test_support.hpp"
#include "vcshot/encoding.hpp"

using namespace vcshot;
using namespace vcshot::testing;

namespace {

DistanceTensor constant_tensor(std::uint32_t H, std::uint32_t W, std::uint32_t V, float value) {
  DistanceTensor t;
  t.height = H;
  t.width = W;
  t.vcs = V;
  t.values.assign(std::size_t{H} * W * V, value);
  return t;
}

DistanceTensor random_tensor(Rng& rng) {
  DistanceTensor t;
  t.height = static_cast<std::uint32_t>(1 + rng.below(5));
  t.width = static_cast<std::uint32_t>(1 + rng.below(5));
  t.vcs = static_cast<std::uint32_t>(1 + rng.below(6));
  t.values.resize(std::size_t{t.height} * t.width * t.vcs);
  for (float& x : t.values) x = static_cast<float>(2.0 * rng.uniform01());
  return t;
}

FeatureGrid grid_of(std::vector<std::vector<float>> positions, std::uint32_t H, std::uint32_t W) {
  FeatureGrid g;
  g.image_id = "g";
  g.height = H;
  g.width = W;
  g.channels = static_cast<std::uint32_t>(positions.front().size());
  for (const auto& p : positions) g.data.insert(g.data.end(), p.begin(), p.end());
  return g;
}

VcDictionary axis_dictionary(std::size_t V, std::size_t dim) {
  VcDictionary d;
  d.dim = dim;
  d.means.assign(V * dim, 0.0);
  for (std::size_t v = 0; v < V; ++v) d.means[v * dim + v % dim] = 1.0;
  d.concentrations.assign(V, 1.0);
  d.weights.assign(V, 1.0 / static_cast<double>(V));
  return d;
}

}  // namespace

TEST_CASE("parallel and antipodal features give distances 0 and 2") {
  const auto dict = axis_dictionary(2, 3);
  const auto g = grid_of({{3.0f, 0.0f, 0.0f}, {-0.5f, 0.0f, 0.0f}}, 1, 2);
  const auto d = compute_distances(g, dict);
  CHECK(d.at(0, 0) == 0.0f);
  CHECK(d.at(1, 0) == 2.0f);
  CHECK(d.at(0, 1) == doctest::Approx(1.0));
}

TEST_CASE("near-zero positions carry the sentinel distance") {
  const auto dict = axis_dictionary(3, 3);
  const auto g = grid_of({{0.0f, 0.0f, 0.0f}, {1e-10f, 0.0f, 0.0f}, {1.0f, 1.0f, 0.0f}}, 3, 1);
  const auto d = compute_distances(g, dict);
  for (std::size_t v = 0; v < 3; ++v) {
    CHECK(d.at(0, v) == kDegenerateDistance);
    CHECK(d.at(1, v) == kDegenerateDistance);
  }
}

TEST_CASE("compute_distances rejects a channel mismatch") {
  const auto dict = axis_dictionary(2, 4);
  CHECK_THROWS_AS(compute_distances(grid_of({{1.0f, 0.0f, 0.0f}}, 1, 1), dict), ShapeMismatch);
}

TEST_CASE("distances, bits and statistics match the naive oracle") {
  Rng rng(19);
  for (int trial = 0; trial < 100; ++trial) {
    const auto H = static_cast<std::uint32_t>(1 + rng.below(4));
    const auto W = static_cast<std::uint32_t>(1 + rng.below(4));
    const auto C = static_cast<std::uint32_t>(2 + rng.below(8));
    const auto dict = random_dictionary(1 + rng.below(6), C, rng);
    const auto g = random_grid(H, W, C, rng, 0.1);
    const auto d = compute_distances(g, dict);
    const auto oracle = naive_distances(g, dict);
    for (std::size_t p = 0; p < g.positions(); ++p) {
      for (std::size_t v = 0; v < dict.size(); ++v) CHECK(std::abs(d.at(p, v) - oracle[p][v]) < 1e-6);
    }
    const double T = 2.0 * rng.uniform01();
    const auto e = encode(d, T);
    for (std::size_t i = 0; i < e.bits.size(); ++i) CHECK((e.bits[i] != 0) == (double(d.values[i]) < T));
    const auto stats = naive_stats(d, T);
    CHECK(e.coverage == doctest::Approx(stats.coverage).epsilon(1e-12));
    CHECK(e.firerate == doctest::Approx(stats.firerate).epsilon(1e-12));
  }
}

TEST_CASE("distances are invariant to rescaling a feature") {
  Rng rng(5);
  const auto dict = random_dictionary(5, 6, rng);
  auto g = random_grid(3, 3, 6, rng);
  const auto before = compute_distances(g, dict);
  for (std::size_t p = 0; p < g.positions(); ++p) {
    const float s = static_cast<float>(0.01 + 100.0 * rng.uniform01());
    for (std::size_t c = 0; c < 6; ++c) g.data[p * 6 + c] *= s;
  }
  const auto after = compute_distances(g, dict);
  for (std::size_t i = 0; i < before.values.size(); ++i) CHECK(std::abs(before.values[i] - after.values[i]) < 1e-6);
}

TEST_CASE("encode edge thresholds") {
  const auto t = constant_tensor(2, 2, 3, 0.7f);
  const auto zero = encode(t, 0.0);
  CHECK(zero.coverage == 0.0);
  CHECK(zero.firerate == 0.0);
  const auto all = encode(t, 2.0);
  CHECK(all.coverage == 1.0);
  CHECK(all.firerate == 3.0);
  CHECK_THROWS_AS(encode(t, 2.0 + 1e-9), InvalidArgument);
  CHECK_THROWS_AS(encode(t, -1e-9), InvalidArgument);
  CHECK(encode(t, 0.7f).firerate == 0.0);  // strict inequality at equality
}

TEST_CASE("three of four positions firing one VC each") {
  DistanceTensor t = constant_tensor(2, 2, 2, 1.5f);
  t.values[0 * 2 + 0] = 0.1f;
  t.values[1 * 2 + 1] = 0.2f;
  t.values[3 * 2 + 0] = 0.3f;
  const auto e = encode(t, 0.5);
  CHECK(e.coverage == 0.75);
  CHECK(e.firerate == 0.75);
  const auto s = encoding_stats(e);
  CHECK(s.coverage == e.coverage);
  CHECK(s.firerate == e.firerate);
}

TEST_CASE("coverage and firerate are non-decreasing in the threshold") {
  Rng rng(12);
  for (int trial = 0; trial < 50; ++trial) {
    const auto t = random_tensor(rng);
    double cov = 0.0;
    double fire = 0.0;
    for (double T = 0.0; T <= 2.0; T += 0.05) {
      const auto e = encode(t, T);
      CHECK(e.coverage >= cov);
      CHECK(e.firerate >= fire);
      cov = e.coverage;
      fire = e.firerate;
    }
  }
}

TEST_CASE("threshold search picks the first grid point strictly above a critical distance") {
  const std::vector<DistanceTensor> half{constant_tensor(3, 3, 2, 0.5f)};
  CHECK(search_threshold(half) == doctest::Approx(0.501).epsilon(1e-12));
  const std::vector<DistanceTensor> single{constant_tensor(1, 1, 1, 0.3f)};
  CHECK(search_threshold(single) == doctest::Approx(0.301).epsilon(1e-12));
}

TEST_CASE("threshold search equals the exhaustive scan and is minimal") {
  Rng rng(99);
  for (int trial = 0; trial < 100; ++trial) {
    std::vector<DistanceTensor> tensors;
    const std::size_t n = 1 + rng.below(4);
    for (std::size_t i = 0; i < n; ++i) tensors.push_back(random_tensor(rng));
    const double target = 0.05 + 0.95 * rng.uniform01();
    const double step = trial % 2 == 0 ? 0.001 : 0.0137;
    const double T = search_threshold(tensors, {target, step});
    CHECK(T == naive_threshold(tensors, target, step));
    CHECK(mean_coverage(tensors, T) >= target);
    if (T > 0.0 && T < 2.0) CHECK(mean_coverage(tensors, (std::round(T / step) - 1.0) * step) < target);
  }
}

TEST_CASE("threshold search fails by name when no grid point works") {
  const std::vector<DistanceTensor> antipodal{constant_tensor(2, 2, 1, 2.0f)};
  CHECK_THROWS_AS(search_threshold(antipodal), NoThresholdFound);
  CHECK_THROWS_AS(search_threshold(std::vector<DistanceTensor>{}), InvalidArgument);
  const std::vector<DistanceTensor> ok{constant_tensor(1, 1, 1, 0.1f)};
  CHECK_THROWS_AS(search_threshold(ok, {0.0, 0.001}), InvalidArgument);
  CHECK_THROWS_AS(search_threshold(ok, {0.8, 0.0}), InvalidArgument);
}

TEST_CASE("VCBE layout is position-major, VC fastest, LSB first") {
  VcEncoding e;
  e.height = 1;
  e.width = 3;
  e.vcs = 3;
  e.bits = {1, 0, 0, 0, 1, 1, 0, 0, 1};
  const auto bytes = serialize_encoding_bits(e);
  REQUIRE(bytes.size() == 4 + 12 + 2);
  CHECK(std::string(bytes.begin(), bytes.begin() + 4) == "VCBE");
  CHECK(bytes[16] == 0b00110001);
  CHECK(bytes[17] == 0b00000001);
  const auto back = parse_encoding_bits(bytes);
  CHECK(back.bits == e.bits);
  CHECK(back.coverage == doctest::Approx(1.0));
  CHECK(back.firerate == doctest::Approx(4.0 / 3.0));

  auto bad = bytes;
  bad.pop_back();
  CHECK_THROWS_AS(parse_encoding_bits(bad), StoreError);
  bad = bytes;
  bad.push_back(0);
  CHECK_THROWS_AS(parse_encoding_bits(bad), StoreError);
}

TEST_CASE("VCBE round-trips random encodings") {
  Rng rng(4);
  for (int trial = 0; trial < 50; ++trial) {
    const auto e = random_encoding(static_cast<std::uint32_t>(1 + rng.below(6)),
                                   static_cast<std::uint32_t>(1 + rng.below(6)),
                                   static_cast<std::uint32_t>(1 + rng.below(9)), rng.uniform01(), rng);
    const auto back = parse_encoding_bits(serialize_encoding_bits(e));
    CHECK(back.bits == e.bits);
    CHECK(back.coverage == e.coverage);
    CHECK(back.firerate == e.firerate);
  }
}
