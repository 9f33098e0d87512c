#include <doctest.h>

#include <cmath>
#include <sstream>

#include "test_support.hpp"
#include "vcshot/classifiers.hpp"

using namespace vcshot;
using namespace vcshot::testing;

namespace {

VcEncoding from_bits(std::uint32_t H, std::uint32_t W, std::uint32_t V, std::vector<std::uint8_t> bits) {
  VcEncoding e;
  e.height = H;
  e.width = W;
  e.vcs = V;
  e.bits = std::move(bits);
  return e;
}

std::vector<double> clamp_all(std::vector<double> v, double eps) {
  for (double& x : v) x = std::clamp(x, eps, 1.0 - eps);
  return v;
}

}  // namespace

TEST_CASE("self-similarity is one for every radius") {
  Rng rng(1);
  for (int trial = 0; trial < 50; ++trial) {
    const auto b = random_encoding(4, 5, 3, 0.3, rng);
    for (std::uint32_t r = 0; r <= 4; ++r) CHECK(similarity(b, b, {r}) == 1.0);
  }
}

TEST_CASE("disjoint supports at radius zero score zero") {
  const auto a = from_bits(2, 2, 1, {1, 0, 0, 0});
  const auto b = from_bits(2, 2, 1, {0, 0, 0, 1});
  CHECK(similarity(a, b, {0}) == 0.0);
}

TEST_CASE("a one-cell shift is absorbed by radius one") {
  // Both encodings are 3x3x1; b' is b shifted right by one column.
  const auto b = from_bits(3, 3, 1, {1, 1, 0, 0, 1, 0, 0, 0, 0});
  const auto shifted = from_bits(3, 3, 1, {0, 1, 1, 0, 0, 1, 0, 0, 0});
  // Radius 0: forward 1/3 (only (0,1) overlaps), backward 1/3.
  CHECK(similarity(b, shifted, {0}) == doctest::Approx(1.0 / 3.0));
  CHECK(similarity(b, shifted, {1}) == 1.0);
}

TEST_CASE("kernel is symmetric, bounded, monotone in radius and matches the literal neighbourhood sum") {
  Rng rng(2);
  for (int trial = 0; trial < 200; ++trial) {
    const auto H = static_cast<std::uint32_t>(1 + rng.below(5));
    const auto W = static_cast<std::uint32_t>(1 + rng.below(5));
    const auto V = static_cast<std::uint32_t>(1 + rng.below(4));
    const auto a = random_encoding(H, W, V, rng.uniform01(), rng);
    const auto b = random_encoding(H, W, V, rng.uniform01(), rng);
    double prev = -1.0;
    for (std::uint32_t r = 0; r <= std::min(H, W); ++r) {
      const double k = similarity(a, b, {r});
      CHECK(k == similarity(b, a, {r}));
      CHECK(k >= 0.0);
      CHECK(k <= 1.0);
      CHECK(k >= prev);
      CHECK(k == doctest::Approx(naive_similarity(a, b, static_cast<int>(r))).epsilon(1e-14));
      prev = k;
    }
  }
}

TEST_CASE("similarity errors") {
  const auto a = from_bits(2, 2, 1, {1, 0, 0, 0});
  const auto empty = from_bits(2, 2, 1, {0, 0, 0, 0});
  CHECK_THROWS_AS(similarity(a, empty, {1}), EmptyEncoding);
  CHECK_THROWS_AS(similarity(a, from_bits(1, 4, 1, {1, 0, 0, 0}), {1}), ShapeMismatch);
  CHECK_THROWS_AS(similarity(a, a, {3}), InvalidArgument);
}

TEST_CASE("nearest neighbour returns the exact duplicate and breaks ties toward the first") {
  Rng rng(3);
  std::vector<LabeledEncoding> support;
  for (std::uint32_t k = 0; k < 5; ++k) support.push_back({random_encoding(4, 4, 6, 0.2, rng), 10 + k});
  CHECK(classify_nn(support[3].encoding, support, {0}) == 13);

  const auto q = from_bits(1, 2, 1, {1, 0});
  const std::vector<LabeledEncoding> tied{{from_bits(1, 2, 1, {0, 1}), 7}, {from_bits(1, 2, 1, {0, 1}), 2}};
  CHECK(classify_nn(q, tied, {0}) == 7);
  CHECK_THROWS_AS(classify_nn(q, std::span<const LabeledEncoding>{}, {0}), InvalidArgument);
}

TEST_CASE("nearest neighbour agrees with the exhaustive similarity table") {
  Rng rng(4);
  for (int trial = 0; trial < 50; ++trial) {
    std::vector<LabeledEncoding> support;
    for (std::uint32_t k = 0; k < 5; ++k) support.push_back({random_encoding(4, 4, 5, 0.25, rng), k});
    const auto q = random_encoding(4, 4, 5, 0.25, rng);
    std::size_t best = 0;
    double best_k = -1.0;
    for (std::size_t i = 0; i < support.size(); ++i) {
      const double k = naive_similarity(q, support[i].encoding, 1);
      if (k - best_k > kTieTolerance * std::max(1.0, std::abs(best_k))) {
        best_k = k;
        best = i;
      }
    }
    CHECK(classify_nn(q, support, {1}) == support[best].category_id);
  }
}

TEST_CASE("one-shot model without smoothing is the clamped encoding") {
  Rng rng(5);
  const auto b = random_encoding(3, 4, 2, 0.5, rng);
  const std::vector<LabeledEncoding> one{{b, 0}};
  const auto model = fit_likelihood(one, 1e-4, 1e-3);
  std::vector<double> want(b.bits.begin(), b.bits.end());
  CHECK(model.theta[0] == clamp_all(want, 1e-3));

  const std::vector<LabeledEncoding> two{{b, 0}, {b, 0}};
  CHECK(fit_likelihood(two, 1.2).theta[0] == fit_likelihood(one, 1.2).theta[0]);
}

TEST_CASE("smoothed model matches the dense convolution oracle") {
  Rng rng(6);
  for (int trial = 0; trial < 20; ++trial) {
    const auto H = static_cast<std::uint32_t>(2 + rng.below(6));
    const auto W = static_cast<std::uint32_t>(2 + rng.below(6));
    const auto V = static_cast<std::uint32_t>(1 + rng.below(4));
    std::vector<LabeledEncoding> support;
    std::vector<double> mean(std::size_t{H} * W * V, 0.0);
    for (int k = 0; k < 5; ++k) {
      support.push_back({random_encoding(H, W, V, 0.3, rng), 4});
      for (std::size_t i = 0; i < mean.size(); ++i) mean[i] += support.back().encoding.bits[i] / 5.0;
    }
    const auto model = fit_likelihood(support, 1.2);
    const auto want = clamp_all(naive_smooth(mean, int(H), int(W), int(V), 1.2), 1e-3);
    REQUIRE(model.categories == std::vector<std::uint32_t>{4});
    for (std::size_t i = 0; i < want.size(); ++i) CHECK(std::abs(model.theta[0][i] - want[i]) < 1e-6);
  }
}

TEST_CASE("periodic smoothing preserves each map's mean") {
  Rng rng(7);
  for (int trial = 0; trial < 20; ++trial) {
    const auto H = static_cast<std::uint32_t>(7 + rng.below(5));
    const auto W = static_cast<std::uint32_t>(7 + rng.below(5));
    const std::uint32_t V = 3;
    std::vector<double> map(std::size_t{H} * W * V);
    for (double& x : map) x = rng.uniform01();
    const auto out = gaussian_smooth(map, H, W, V, 1.2, SmoothingBorder::kPeriodic);
    for (std::uint32_t v = 0; v < V; ++v) {
      double a = 0.0;
      double b = 0.0;
      for (std::size_t p = 0; p < std::size_t{H} * W; ++p) {
        a += map[p * V + v];
        b += out[p * V + v];
      }
      CHECK(std::abs(a - b) / (H * W) < 1e-9);
    }
  }
}

TEST_CASE("log-likelihood identities") {
  Rng rng(8);
  const double eps = 1e-3;
  const auto b = random_encoding(2, 3, 4, 0.5, rng);
  std::vector<double> matched(b.bits.begin(), b.bits.end());
  CHECK(log_likelihood(b, clamp_all(matched, eps)) == doctest::Approx(24 * std::log(1.0 - eps)).epsilon(1e-12));
  const std::vector<double> half(b.bits.size(), 0.5);
  for (int trial = 0; trial < 10; ++trial) {
    CHECK(log_likelihood(random_encoding(2, 3, 4, 0.5, rng), half) ==
          doctest::Approx(24 * std::log(0.5)).epsilon(1e-12));
  }
  CHECK_THROWS_AS(log_likelihood(b, std::vector<double>(5, 0.5)), ShapeMismatch);
}

TEST_CASE("log-likelihood equals the logged product form") {
  Rng rng(9);
  for (int trial = 0; trial < 100; ++trial) {
    const auto b = random_encoding(2, 2, 3, 0.5, rng);
    std::vector<double> theta(12);
    for (double& t : theta) t = 1e-3 + (1.0 - 2e-3) * rng.uniform01();
    CHECK(std::abs(log_likelihood(b, theta) - naive_log_likelihood(b, theta)) < 1e-10);
  }
}

TEST_CASE("likelihood classifier picks the sole matching category and breaks ties toward the smaller id") {
  const auto a = from_bits(2, 2, 1, {1, 0, 0, 0});
  const auto b = from_bits(2, 2, 1, {0, 0, 0, 1});
  const std::vector<LabeledEncoding> support{{b, 9}, {a, 3}};
  const auto model = fit_likelihood(support, 1e-4);
  CHECK(model.categories == std::vector<std::uint32_t>{3, 9});
  CHECK(classify_lh(a, model) == 3);
  CHECK(classify_lh(b, model) == 9);

  const std::vector<LabeledEncoding> same{{a, 8}, {a, 5}};
  CHECK(classify_lh(b, fit_likelihood(same)) == 5);
}

TEST_CASE("likelihood classifier matches full enumeration on a 2x2x2 lattice") {
  Rng rng(10);
  for (int trial = 0; trial < 40; ++trial) {
    std::vector<LabeledEncoding> support;
    for (std::uint32_t y = 0; y < 3; ++y) {
      for (int k = 0; k < 2; ++k) support.push_back({random_encoding(2, 2, 2, 0.4, rng), y * 2});
    }
    const auto model = fit_likelihood(support);
    for (unsigned code = 0; code < 256; ++code) {
      VcEncoding q = from_bits(2, 2, 2, std::vector<std::uint8_t>(8));
      for (unsigned i = 0; i < 8; ++i) q.bits[i] = (code >> i) & 1u;
      std::size_t best = 0;
      double best_ll = -1e300;
      for (std::size_t y = 0; y < model.categories.size(); ++y) {
        const double ll = naive_log_likelihood(q, model.theta[y]);
        if (ll - best_ll > kTieTolerance * std::max(1.0, std::abs(best_ll))) {
          best_ll = ll;
          best = y;
        }
      }
      CHECK(classify_lh(q, model) == model.categories[best]);
    }
  }
}

TEST_CASE("likelihood trace rows sum to the log-likelihood") {
  Rng rng(11);
  std::vector<LabeledEncoding> support{{random_encoding(2, 2, 2, 0.5, rng), 1}, {random_encoding(2, 2, 2, 0.5, rng), 4}};
  const auto model = fit_likelihood(support);
  const auto q = random_encoding(2, 2, 2, 0.5, rng);
  std::ostringstream csv;
  write_likelihood_trace_csv(csv, q, model);
  std::istringstream in(csv.str());
  std::string line;
  std::getline(in, line);
  CHECK(line == "category_id,row,col,vc,bit,theta,contribution");
  std::map<std::uint32_t, double> totals;
  std::size_t rows = 0;
  while (std::getline(in, line)) {
    std::istringstream fields(line);
    std::string f;
    std::vector<std::string> parts;
    while (std::getline(fields, f, ',')) parts.push_back(f);
    REQUIRE(parts.size() == 7);
    totals[static_cast<std::uint32_t>(std::stoul(parts[0]))] += std::stod(parts[6]);
    ++rows;
  }
  CHECK(rows == 16);
  CHECK(totals[1] == doctest::Approx(log_likelihood(q, model.theta[0])).epsilon(1e-9));
  CHECK(totals[4] == doctest::Approx(log_likelihood(q, model.theta[1])).epsilon(1e-9));
}
