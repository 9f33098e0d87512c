#include <doctest.h>

#include <cmath>
#include <cstdlib>
#include <numbers>
#include <numeric>

#include "test_support.hpp"
#include "vcshot/synthetic.hpp"
#include "vcshot/vmf.hpp"

using namespace vcshot;
using vcshot::testing::random_unit;

namespace {

VectorSet make_set(const std::vector<std::vector<double>>& rows) {
  VectorSet s;
  s.dim = rows.front().size();
  for (const auto& r : rows) s.values.insert(s.values.end(), r.begin(), r.end());
  return s;
}

VectorSet random_vectors(std::size_t M, std::size_t dim, Rng& rng) {
  std::vector<std::vector<double>> rows;
  for (std::size_t m = 0; m < M; ++m) rows.push_back(random_unit(dim, rng));
  return make_set(rows);
}

// log C_3(kappa) = log kappa - log(4 pi sinh kappa), overflow-free.
double log_c3(double kappa) {
  return std::log(kappa) - std::log(2.0 * std::numbers::pi) - kappa - std::log(-std::expm1(-2.0 * kappa));
}

double dot(std::span<const double> a, std::span<const double> b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}

struct ThreadsGuard {
  explicit ThreadsGuard(const char* value) { setenv("VC_THREADS", value, 1); }
  ~ThreadsGuard() { unsetenv("VC_THREADS"); }
};

}  // namespace

TEST_CASE("log density matches the d = 3 closed form") {
  const std::vector<double> mu{0.0, 0.0, 1.0};
  for (double kappa : {0.1, 1.0, 2.0, 10.0, 100.0, 1e4}) {
    for (double cosine : {1.0, 0.3, -0.7}) {
      const std::vector<double> f{std::sqrt(1.0 - cosine * cosine), 0.0, cosine};
      const double want = log_c3(kappa) + kappa * cosine;
      CHECK(std::abs(vmf_log_density(f, mu, kappa) - want) <= 1e-10 * std::max(1.0, std::abs(want)));
    }
  }
}

TEST_CASE("mean direction is the mode") {
  Rng rng(2);
  for (int trial = 0; trial < 50; ++trial) {
    const std::size_t d = 2 + rng.below(30);
    const auto mu = random_unit(d, rng);
    const double kappa = 0.01 + 200.0 * rng.uniform01();
    const double at_mode = vmf_log_density(mu, mu, kappa);
    for (int k = 0; k < 10; ++k) CHECK(vmf_log_density(random_unit(d, rng), mu, kappa) <= at_mode);
  }
}

TEST_CASE("density integrates to one on the 2-sphere") {
  Rng rng(17);
  const std::vector<double> mu{0.0, 1.0, 0.0};
  const int n = 100000;
  double sum = 0.0;
  for (int i = 0; i < n; ++i) sum += std::exp(vmf_log_density(random_unit(3, rng), mu, 1.0));
  const double integral = 4.0 * std::numbers::pi * sum / n;
  CHECK(integral == doctest::Approx(1.0).epsilon(0.02));
}

TEST_CASE("vmf_log_density rejects out-of-range kappa and mismatched shapes") {
  const std::vector<double> mu{1.0, 0.0};
  CHECK_THROWS_AS(vmf_log_density(mu, mu, 0.0), InvalidArgument);
  CHECK_THROWS_AS(vmf_log_density(mu, mu, -1.0), InvalidArgument);
  CHECK_THROWS_AS(vmf_log_density(mu, mu, 2e5), InvalidArgument);
  CHECK_THROWS_AS(vmf_log_density(mu, std::vector<double>{1.0, 0.0, 0.0}, 1.0), ShapeMismatch);
}

TEST_CASE("identical vectors drive one VC to the concentration cap") {
  Rng rng(5);
  const auto f = random_unit(8, rng);
  const auto set = make_set(std::vector<std::vector<double>>(20, f));
  FitConfig cfg;
  cfg.num_vcs = 1;
  const auto dict = fit_vmfm(set, cfg);
  for (std::size_t c = 0; c < 8; ++c) CHECK(dict.mean(0)[c] == doctest::Approx(f[c]).epsilon(1e-12));
  CHECK(dict.concentrations[0] == kDefaultKappaMax);
  CHECK(dict.weights[0] == 1.0);
}

TEST_CASE("two EM steps reproduce the straight-line transcript") {
  // tests/oracles/em_transcript.py
  const auto set = make_set({
      {0.9950371902099893, 0.09950371902099893, 0.0},
      {0.9704949588309457, 0.21566554640687682, 0.10783277320343841},
      {0.9938079899999066, -0.09938079899999067, 0.04969039949999533},
      {0.0, 0.9805806756909201, 0.19611613513818402},
      {0.10976425998969035, 0.9878783399072131, -0.10976425998969035},
      {-0.09901475429766743, 0.9901475429766743, 0.09901475429766743},
  });
  VcDictionary init;
  init.dim = 3;
  init.means = {1.0, 0.0, 0.0, 0.0, 1.0, 0.0};
  init.concentrations = {5.0, 5.0};
  init.weights = {0.5, 0.5};
  FitConfig cfg;
  cfg.num_vcs = 2;
  cfg.max_iters = 2;
  cfg.rel_tol = 1e-300;
  const auto dict = run_em(set, init, cfg);

  const std::vector<double> trace{-5.8772796073460725622, 5.2147212569656198862, 6.0744504245298403292};
  REQUIRE(dict.log_likelihood_trace.size() == 3);
  for (std::size_t i = 0; i < 3; ++i) CHECK(std::abs(dict.log_likelihood_trace[i] - trace[i]) < 1e-9);
  CHECK(dict.iterations == 2);
  CHECK(dict.concentrations[0] == doctest::Approx(105.29332955594963436).epsilon(1e-9));
  CHECK(dict.concentrations[1] == doctest::Approx(84.819451662742022713).epsilon(1e-9));
  CHECK(dict.weights[0] == doctest::Approx(0.49999999999999977436).epsilon(1e-9));
  const std::vector<double> mu{0.99594957094400848606, 0.07262241596303084569,  0.053013553324955781389,
                               0.0036261660924892247769, 0.99803647638238018889, 0.062530334476255225443};
  for (std::size_t i = 0; i < 6; ++i) CHECK(std::abs(dict.means[i] - mu[i]) < 1e-9);
}

TEST_CASE("EM log-likelihood never decreases") {
  Rng rng(23);
  for (std::size_t d : {4u, 16u}) {
    for (std::size_t V : {2u, 5u}) {
      auto cs = synth::make_cluster_store({.clusters = 4, .points_per_cluster = 40, .dim = d, .kappa = 20.0,
                                           .seed = rng.next_u64()});
      const auto pooled = collect_vectors(cs.store, [](std::string_view) { return true; });
      FitConfig cfg;
      cfg.num_vcs = V;
      cfg.seed = rng.next_u64();
      const auto dict = fit_vmfm(pooled.vectors, cfg);
      const auto& t = dict.log_likelihood_trace;
      for (std::size_t i = 1; i < t.size(); ++i) CHECK(t[i] >= t[i - 1] - 1e-8 * std::abs(t[i - 1]));
    }
  }
}

TEST_CASE("fitted dictionaries satisfy the invariants") {
  Rng rng(31);
  const auto set = random_vectors(150, 6, rng);
  FitConfig cfg;
  cfg.num_vcs = 7;
  cfg.seed = 9;
  const auto dict = fit_vmfm(set, cfg);
  CHECK_NOTHROW(validate_dictionary(dict));
  for (std::size_t v = 0; v < dict.size(); ++v) {
    CHECK(std::abs(std::sqrt(dot(dict.mean(v), dict.mean(v))) - 1.0) < 1e-12);
    CHECK(dict.concentrations[v] > 0.0);
    CHECK(dict.concentrations[v] <= kDefaultKappaMax);
  }
  const auto gamma = responsibilities(set, dict);
  for (std::size_t m = 0; m < set.size(); ++m) {
    double s = 0.0;
    for (std::size_t v = 0; v < dict.size(); ++v) s += gamma[m * dict.size() + v];
    CHECK(std::abs(s - 1.0) < 1e-9);
  }
}

TEST_CASE("fit is deterministic, order-invariant and independent of worker count") {
  Rng rng(41);
  auto set = random_vectors(300, 5, rng);
  FitConfig cfg;
  cfg.num_vcs = 6;
  cfg.seed = 3;
  const auto a = fit_vmfm(set, cfg);
  const auto b = fit_vmfm(set, cfg);
  CHECK(a.means == b.means);
  CHECK(a.concentrations == b.concentrations);
  CHECK(a.log_likelihood_trace == b.log_likelihood_trace);

  std::vector<std::size_t> order(set.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  rng.shuffle(std::span(order));
  VectorSet shuffled;
  shuffled.dim = set.dim;
  for (std::size_t m : order) shuffled.values.insert(shuffled.values.end(), set.row(m).begin(), set.row(m).end());
  const auto c = fit_vmfm(shuffled, cfg);
  CHECK(c.log_likelihood == a.log_likelihood);
  CHECK(c.means == a.means);

  {
    ThreadsGuard one("1");
    const auto s1 = fit_vmfm(set, cfg);
    CHECK(serialize_dictionary(s1) == serialize_dictionary(a));
  }
  {
    ThreadsGuard eight("8");
    const auto s8 = fit_vmfm(set, cfg);
    CHECK(serialize_dictionary(s8) == serialize_dictionary(a));
  }
}

TEST_CASE("fit_vmfm input validation") {
  Rng rng(1);
  FitConfig cfg;
  cfg.num_vcs = 10;
  CHECK_THROWS_AS(fit_vmfm(random_vectors(5, 4, rng), cfg), InsufficientData);
  auto set = random_vectors(20, 4, rng);
  set.values[0] *= 1.5;
  cfg.num_vcs = 2;
  CHECK_THROWS_AS(fit_vmfm(set, cfg), InvalidArgument);
  VectorSet scalar;
  scalar.dim = 1;
  scalar.values = {1.0, -1.0, 1.0};
  cfg.num_vcs = 1;
  CHECK_THROWS_AS(fit_vmfm(scalar, cfg), InvalidArgument);
}

TEST_CASE("assign_hard picks the matching mean and breaks ties toward the smaller index") {
  VcDictionary dict;
  dict.dim = 3;
  dict.means = {1, 0, 0, 0, 1, 0, 0, 0, 1, -1, 0, 0};
  dict.concentrations = {10, 10, 10, 10};
  dict.weights = {0.25, 0.25, 0.25, 0.25};
  const double h = std::sqrt(0.5);
  const auto set = make_set({{-1, 0, 0}, {h, h, 0}, {0, h, h}, {0, 0, 1}});
  const auto idx = assign_hard(set, dict);
  CHECK(idx == std::vector<std::size_t>{3, 0, 1, 2});
  CHECK_THROWS_AS(assign_hard(make_set({{1, 0}}), dict), ShapeMismatch);
}

TEST_CASE("assign_hard agrees with a direct posterior computation") {
  Rng rng(77);
  for (int trial = 0; trial < 30; ++trial) {
    auto dict = vcshot::testing::random_dictionary(1 + rng.below(6), 3, rng);
    for (auto& w : dict.weights) w = 0.1 + rng.uniform01();
    double total = 0.0;
    for (double w : dict.weights) total += w;
    for (auto& w : dict.weights) w /= total;
    const auto set = random_vectors(40, 3, rng);
    const auto got = assign_hard(set, dict);
    const auto gamma = responsibilities(set, dict);
    for (std::size_t m = 0; m < set.size(); ++m) {
      std::vector<double> joint(dict.size());
      double z = 0.0;
      for (std::size_t v = 0; v < dict.size(); ++v) {
        joint[v] = dict.weights[v] * std::exp(log_c3(dict.concentrations[v]) +
                                              dict.concentrations[v] * dot(set.row(m), dict.mean(v)));
        z += joint[v];
      }
      std::size_t best = 0;
      for (std::size_t v = 1; v < dict.size(); ++v) {
        if (joint[v] > joint[best]) best = v;
      }
      CHECK(got[m] == best);
      for (std::size_t v = 0; v < dict.size(); ++v) {
        CHECK(gamma[m * dict.size() + v] == doctest::Approx(joint[v] / z).epsilon(1e-9));
      }
    }
  }
}

TEST_CASE("three planted clusters are recovered") {
  const auto cs = synth::make_cluster_store({});
  const auto pooled = collect_vectors(cs.store, [](std::string_view) { return true; });
  FitConfig cfg;
  cfg.num_vcs = 3;
  cfg.seed = 1;
  const auto dict = fit_vmfm(pooled.vectors, cfg);
  std::vector<std::size_t> match(3);
  for (std::size_t k = 0; k < 3; ++k) {
    double best = -2.0;
    for (std::size_t v = 0; v < 3; ++v) {
      const double s = dot(cs.means[k], dict.mean(v));
      if (s > best) {
        best = s;
        match[k] = v;
      }
    }
    CHECK(1.0 - best < 0.05);
  }
  CHECK(match[0] != match[1]);
  CHECK(match[1] != match[2]);
  CHECK(match[0] != match[2]);
}

TEST_CASE("VCDC round-trip and corruption") {
  Rng rng(8);
  auto dict = vcshot::testing::random_dictionary(4, 5, rng);
  dict.log_likelihood = -123.456;
  const auto bytes = serialize_dictionary(dict);
  CHECK(bytes.size() == 4 + 2 + 4 + 4 + 4 * (4 * 5 + 4 + 4) + 8);
  const auto back = parse_dictionary(bytes);
  CHECK(back.log_likelihood == dict.log_likelihood);
  for (std::size_t i = 0; i < dict.means.size(); ++i) CHECK(back.means[i] == doctest::Approx(dict.means[i]).epsilon(1e-6));
  CHECK(serialize_dictionary(back) == bytes);

  auto bad = bytes;
  bad[1] = 'X';
  CHECK_THROWS_AS(parse_dictionary(bad), StoreError);
  CHECK_THROWS_AS(parse_dictionary(std::span(bytes).first(bytes.size() - 1)), StoreError);
}
