#include "vcshot/vmf.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <iterator>
#include <limits>
#include <numbers>
#include <numeric>
#include <string>

#include "vcshot/bessel.hpp"
#include "vcshot/detail/binary_io.hpp"
#include "vcshot/parallel.hpp"
#include "vcshot/random.hpp"

namespace vcshot {

namespace {

constexpr double kRbarCeiling = 1.0 - 1e-9;
constexpr std::size_t kBlock = 256;

double dot(std::span<const double> a, std::span<const double> b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}

double norm(std::span<const double> a) { return std::sqrt(dot(a, a)); }

void check_unit_vectors(const VectorSet& vectors) {
  for (std::size_t m = 0; m < vectors.size(); ++m) {
    if (std::abs(norm(vectors.row(m)) - 1.0) >= kUnitNormTolerance) {
      throw InvalidArgument("fit_vmfm: input vector " + std::to_string(m) + " is not unit length");
    }
  }
}

// Unnormalised log posterior log alpha_v + log V_d(f | mu_v, kappa_v) for
// every component, written to out[0..V).
void log_joint(std::span<const double> f, const VcDictionary& dict, std::span<const double> log_norms,
               std::span<double> out) {
  for (std::size_t v = 0; v < dict.size(); ++v) {
    const double w = dict.weights[v];
    out[v] = w > 0.0 ? std::log(w) + log_norms[v] + dict.concentrations[v] * dot(f, dict.mean(v))
                     : -std::numeric_limits<double>::infinity();
  }
}

double log_sum_exp(std::span<const double> xs) {
  const double top = *std::max_element(xs.begin(), xs.end());
  if (!std::isfinite(top)) return top;
  double s = 0.0;
  for (double x : xs) s += std::exp(x - top);
  return top + std::log(s);
}

std::vector<double> log_normalizers(const VcDictionary& dict) {
  std::vector<double> out(dict.size());
  for (std::size_t v = 0; v < dict.size(); ++v) out[v] = vmf_log_normalizer(dict.dim, dict.concentrations[v]);
  return out;
}

struct EStep {
  std::vector<double> gamma;  // M x V
  double log_likelihood = 0.0;
};

EStep expectation(const VectorSet& vectors, const VcDictionary& dict) {
  const std::size_t M = vectors.size();
  const std::size_t V = dict.size();
  const auto log_norms = log_normalizers(dict);

  EStep out;
  out.gamma.resize(M * V);
  std::vector<double> per_vector(M);
  const std::size_t blocks = (M + kBlock - 1) / kBlock;
  parallel_for(blocks, [&](std::size_t b) {
    const std::size_t end = std::min(M, (b + 1) * kBlock);
    for (std::size_t m = b * kBlock; m < end; ++m) {
      std::span<double> row(out.gamma.data() + m * V, V);
      log_joint(vectors.row(m), dict, log_norms, row);
      const double total = log_sum_exp(row);
      per_vector[m] = total;
      for (double& g : row) g = std::exp(g - total);
    }
  });

  // Index-ordered reduction: identical for any worker count.
  for (double lp : per_vector) out.log_likelihood += lp;
  if (!std::isfinite(out.log_likelihood)) {
    throw NumericalError("vMF EM: non-finite data log-likelihood");
  }
  return out;
}

double global_kappa(const VectorSet& vectors, double kappa_max) {
  std::vector<double> sum(vectors.dim, 0.0);
  for (std::size_t m = 0; m < vectors.size(); ++m) {
    const auto f = vectors.row(m);
    for (std::size_t c = 0; c < vectors.dim; ++c) sum[c] += f[c];
  }
  return estimate_kappa(norm(sum) / static_cast<double>(vectors.size()), vectors.dim, kappa_max);
}

// Concentration part of the EM objective for one component with mean
// already set to the resultant direction.
double kappa_objective(double kappa, double mass, double resultant, std::size_t dim) {
  return mass * vmf_log_normalizer(dim, kappa) + kappa * resultant;
}

void maximization(const VectorSet& vectors, const std::vector<double>& gamma, double kappa_fallback,
                  const FitConfig& config, VcDictionary& dict) {
  const std::size_t M = vectors.size();
  const std::size_t V = dict.size();
  const std::size_t d = dict.dim;

  std::vector<double> mass(V, 0.0);
  std::vector<double> resultant(V * d, 0.0);
  parallel_for(V, [&](std::size_t v) {
    double n = 0.0;
    double* r = resultant.data() + v * d;
    for (std::size_t m = 0; m < M; ++m) {
      const double g = gamma[m * V + v];
      n += g;
      const auto f = vectors.row(m);
      for (std::size_t c = 0; c < d; ++c) r[c] += g * f[c];
    }
    mass[v] = n;
  });

  double total_mass = 0.0;
  for (double n : mass) total_mass += n;

  std::vector<bool> used_for_reseed(M, false);
  for (std::size_t v = 0; v < V; ++v) {
    dict.weights[v] = mass[v] / total_mass;
    std::span<double> mu(dict.means.data() + v * d, d);
    const std::span<const double> r(resultant.data() + v * d, d);
    const double length = norm(r);

    if (mass[v] < kStarvedMass || length <= 1e-12 * mass[v]) {
      // Move the component onto the worst-explained vector.
      std::size_t worst = M;
      double worst_score = std::numeric_limits<double>::infinity();
      for (std::size_t m = 0; m < M; ++m) {
        if (used_for_reseed[m]) continue;
        const auto row = std::span<const double>(gamma.data() + m * V, V);
        const double best = *std::max_element(row.begin(), row.end());
        if (best < worst_score) {
          worst_score = best;
          worst = m;
        }
      }
      if (worst < M) {
        used_for_reseed[worst] = true;
        const auto f = vectors.row(worst);
        std::copy(f.begin(), f.end(), mu.begin());
      }
      dict.concentrations[v] = kappa_fallback;
      continue;
    }

    for (std::size_t c = 0; c < d; ++c) mu[c] = r[c] / length;
    const double proposed = estimate_kappa(length / mass[v], d, config.kappa_max);
    const double current = dict.concentrations[v];
    // The closed-form kappa is approximate; keep the previous value when it
    // scores better so that no M-step lowers the EM objective.
    if (kappa_objective(proposed, mass[v], length, d) >= kappa_objective(current, mass[v], length, d)) {
      dict.concentrations[v] = proposed;
    }
  }
}

std::size_t best_match(std::span<const double> f, const std::vector<double>& centres, std::size_t dim,
                       std::size_t count, double* similarity) {
  std::size_t best = 0;
  double best_sim = -std::numeric_limits<double>::infinity();
  for (std::size_t j = 0; j < count; ++j) {
    const double s = dot(f, {centres.data() + j * dim, dim});
    if (s > best_sim) {
      best_sim = s;
      best = j;
    }
  }
  if (similarity != nullptr) *similarity = best_sim;
  return best;
}

}  // namespace

double vmf_log_normalizer(std::size_t dim, double kappa) {
  const double half = 0.5 * static_cast<double>(dim);
  return (half - 1.0) * std::log(kappa) - half * std::log(2.0 * std::numbers::pi) -
         log_bessel_i(half - 1.0, kappa);
}

double vmf_log_density(std::span<const double> f, std::span<const double> mu, double kappa, double kappa_max) {
  if (f.size() != mu.size()) throw ShapeMismatch("vmf_log_density: dimension mismatch");
  if (f.size() < 2) throw InvalidArgument("vmf_log_density: dimension must be at least 2");
  if (!(kappa > 0.0) || !(kappa <= kappa_max)) {
    throw InvalidArgument("vmf_log_density: kappa " + std::to_string(kappa) + " outside (0, " +
                          std::to_string(kappa_max) + "]");
  }
  return vmf_log_normalizer(f.size(), kappa) + kappa * dot(f, mu);
}

double estimate_kappa(double rbar, std::size_t dim, double kappa_max) {
  const double r = std::clamp(rbar, 0.0, kRbarCeiling);
  const double d = static_cast<double>(dim);
  const double kappa = (r * d - r * r * r) / (1.0 - r * r);
  return std::clamp(kappa, kKappaMin, kappa_max);
}

VcDictionary initialize_dictionary(const VectorSet& vectors, const FitConfig& config) {
  const std::size_t M = vectors.size();
  const std::size_t V = config.num_vcs;
  const std::size_t d = vectors.dim;
  if (V == 0) throw InvalidArgument("number of VCs must be positive");
  if (M < V) {
    throw InsufficientData("need at least " + std::to_string(V) + " vectors to fit " + std::to_string(V) +
                           " VCs, got " + std::to_string(M));
  }

  Rng rng(config.seed);
  std::vector<double> centres(V * d);

  // k-means++ with cosine distance 1 - f.mu (proportional to squared chord).
  const std::size_t first = static_cast<std::size_t>(rng.below(M));
  std::copy_n(vectors.row(first).begin(), d, centres.begin());
  std::vector<double> gap(M);
  for (std::size_t m = 0; m < M; ++m) gap[m] = std::max(0.0, 1.0 - dot(vectors.row(m), vectors.row(first)));
  for (std::size_t j = 1; j < V; ++j) {
    double total = 0.0;
    for (double g : gap) total += g;
    std::size_t pick = static_cast<std::size_t>(rng.below(M));
    if (total > 0.0) {
      const double target = rng.uniform01() * total;
      double running = 0.0;
      pick = M - 1;
      for (std::size_t m = 0; m < M; ++m) {
        running += gap[m];
        if (running > target && gap[m] > 0.0) {
          pick = m;
          break;
        }
      }
    }
    const auto chosen = vectors.row(pick);
    std::copy(chosen.begin(), chosen.end(), centres.begin() + static_cast<std::ptrdiff_t>(j * d));
    for (std::size_t m = 0; m < M; ++m) {
      gap[m] = std::min(gap[m], std::max(0.0, 1.0 - dot(vectors.row(m), chosen)));
    }
  }

  // Spherical k-means refinement.
  std::vector<std::size_t> label(M, 0);
  std::vector<double> similarity(M, 0.0);
  auto assign = [&] {
    const std::size_t blocks = (M + kBlock - 1) / kBlock;
    parallel_for(blocks, [&](std::size_t b) {
      const std::size_t end = std::min(M, (b + 1) * kBlock);
      for (std::size_t m = b * kBlock; m < end; ++m) {
        label[m] = best_match(vectors.row(m), centres, d, V, &similarity[m]);
      }
    });
  };
  std::vector<double> sums(V * d);
  std::vector<std::size_t> counts(V);
  auto accumulate = [&] {
    std::fill(sums.begin(), sums.end(), 0.0);
    std::fill(counts.begin(), counts.end(), 0);
    for (std::size_t m = 0; m < M; ++m) {
      const auto f = vectors.row(m);
      double* s = sums.data() + label[m] * d;
      for (std::size_t c = 0; c < d; ++c) s[c] += f[c];
      ++counts[label[m]];
    }
  };

  for (std::size_t iter = 0; iter < config.kmeans_iters; ++iter) {
    assign();
    accumulate();
    std::vector<bool> taken(M, false);
    for (std::size_t j = 0; j < V; ++j) {
      std::span<const double> s(sums.data() + j * d, d);
      const double length = norm(s);
      std::span<double> centre(centres.data() + j * d, d);
      if (counts[j] > 0 && length > 1e-12) {
        for (std::size_t c = 0; c < d; ++c) centre[c] = s[c] / length;
        continue;
      }
      // Empty cluster: restart it at the least similar vector.
      std::size_t worst = 0;
      double worst_sim = std::numeric_limits<double>::infinity();
      for (std::size_t m = 0; m < M; ++m) {
        if (!taken[m] && similarity[m] < worst_sim) {
          worst_sim = similarity[m];
          worst = m;
        }
      }
      taken[worst] = true;
      std::copy_n(vectors.row(worst).begin(), d, centre.begin());
    }
  }
  assign();
  accumulate();

  VcDictionary dict;
  dict.dim = d;
  dict.means = centres;
  dict.concentrations.resize(V);
  dict.weights.resize(V);
  const double fallback = global_kappa(vectors, config.kappa_max);
  for (std::size_t j = 0; j < V; ++j) {
    dict.weights[j] = (static_cast<double>(counts[j]) + 1.0) / static_cast<double>(M + V);
    const double length = norm({sums.data() + j * d, d});
    dict.concentrations[j] =
        counts[j] > 0 ? estimate_kappa(length / static_cast<double>(counts[j]), d, config.kappa_max) : fallback;
  }
  return dict;
}

VcDictionary run_em(const VectorSet& vectors, VcDictionary dict, const FitConfig& config) {
  if (dict.dim != vectors.dim) throw ShapeMismatch("run_em: dictionary and vectors differ in dimension");
  const double fallback = global_kappa(vectors, config.kappa_max);

  dict.log_likelihood_trace.clear();
  dict.iterations = 0;
  for (;;) {
    const EStep e = expectation(vectors, dict);
    dict.log_likelihood = e.log_likelihood;
    dict.log_likelihood_trace.push_back(e.log_likelihood);

    const auto& trace = dict.log_likelihood_trace;
    if (trace.size() >= 2) {
      const double prev = trace[trace.size() - 2];
      const double gain = (trace.back() - prev) / std::max(std::abs(prev), 1e-300);
      if (gain < config.rel_tol) break;
    }
    if (dict.iterations >= config.max_iters) break;

    maximization(vectors, e.gamma, fallback, config, dict);
    ++dict.iterations;
  }
  return dict;
}

VcDictionary fit_vmfm(const VectorSet& vectors, const FitConfig& config) {
  if (vectors.dim < 2) throw InvalidArgument("fit_vmfm: vector dimension must be at least 2");
  if (config.max_iters == 0) throw InvalidArgument("fit_vmfm: max_iters must be positive");
  if (!(config.rel_tol > 0.0)) throw InvalidArgument("fit_vmfm: rel_tol must be positive");
  if (!(config.kappa_max > kKappaMin)) throw InvalidArgument("fit_vmfm: kappa_max too small");
  if (config.num_vcs == 0) throw InvalidArgument("fit_vmfm: number of VCs must be positive");
  if (vectors.size() < config.num_vcs) {
    throw InsufficientData("fit_vmfm: " + std::to_string(vectors.size()) + " vectors for " +
                           std::to_string(config.num_vcs) + " VCs");
  }
  check_unit_vectors(vectors);

  const std::size_t M = vectors.size();
  const std::size_t d = vectors.dim;
  std::vector<std::size_t> order(M);
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    const auto ra = vectors.row(a);
    const auto rb = vectors.row(b);
    return std::lexicographical_compare(ra.begin(), ra.end(), rb.begin(), rb.end());
  });
  VectorSet canonical;
  canonical.dim = d;
  canonical.values.reserve(vectors.values.size());
  for (std::size_t m : order) {
    const auto r = vectors.row(m);
    canonical.values.insert(canonical.values.end(), r.begin(), r.end());
  }

  return run_em(canonical, initialize_dictionary(canonical, config), config);
}

std::vector<double> responsibilities(const VectorSet& vectors, const VcDictionary& dict) {
  if (vectors.dim != dict.dim) throw ShapeMismatch("responsibilities: dimension mismatch");
  if (vectors.size() == 0) return {};
  return expectation(vectors, dict).gamma;
}

std::vector<std::size_t> assign_hard(const VectorSet& vectors, const VcDictionary& dict) {
  if (vectors.dim != dict.dim) {
    throw ShapeMismatch("assign_hard: vectors have dimension " + std::to_string(vectors.dim) +
                        ", dictionary " + std::to_string(dict.dim));
  }
  const auto log_norms = log_normalizers(dict);
  std::vector<std::size_t> out(vectors.size());
  parallel_for(vectors.size(), [&](std::size_t m) {
    std::vector<double> scores(dict.size());
    log_joint(vectors.row(m), dict, log_norms, scores);
    std::size_t best = 0;
    for (std::size_t v = 1; v < scores.size(); ++v) {
      if (scores[v] > scores[best]) best = v;
    }
    out[m] = best;
  });
  return out;
}

void validate_dictionary(const VcDictionary& dict, double kappa_max) {
  const std::size_t V = dict.size();
  if (V == 0 || dict.dim == 0) throw InvalidArgument("dictionary is empty");
  if (dict.means.size() != V * dict.dim || dict.weights.size() != V) {
    throw InvalidArgument("dictionary arrays have inconsistent sizes");
  }
  double total = 0.0;
  for (std::size_t v = 0; v < V; ++v) {
    if (std::abs(norm(dict.mean(v)) - 1.0) >= kUnitNormTolerance) {
      throw InvalidArgument("dictionary mean " + std::to_string(v) + " is not unit length");
    }
    const double k = dict.concentrations[v];
    if (!(k > 0.0) || !(k <= kappa_max)) {
      throw InvalidArgument("dictionary concentration " + std::to_string(v) + " out of range");
    }
    if (!(dict.weights[v] >= 0.0)) throw InvalidArgument("dictionary weight " + std::to_string(v) + " negative");
    total += dict.weights[v];
  }
  if (std::abs(total - 1.0) > 1e-9) throw InvalidArgument("dictionary weights do not sum to 1");
}

namespace {
constexpr char kDictMagic[4] = {'V', 'C', 'D', 'C'};
constexpr std::uint16_t kDictVersion = 1;
}  // namespace

std::vector<std::uint8_t> serialize_dictionary(const VcDictionary& dict) {
  validate_dictionary(dict);
  detail::ByteWriter w;
  w.put_bytes({kDictMagic, 4});
  w.put(kDictVersion);
  w.put(static_cast<std::uint32_t>(dict.size()));
  w.put(static_cast<std::uint32_t>(dict.dim));
  for (double x : dict.means) w.put(static_cast<float>(x));
  for (double x : dict.concentrations) w.put(static_cast<float>(x));
  for (double x : dict.weights) w.put(static_cast<float>(x));
  w.put(dict.log_likelihood);
  return std::move(w.bytes());
}

VcDictionary parse_dictionary(std::span<const std::uint8_t> bytes) {
  auto truncated = [](std::size_t offset) -> void {
    throw StoreError(StoreErrc::kTruncatedPayload, "dictionary", static_cast<std::int64_t>(offset));
  };
  if (bytes.size() < 4 || std::memcmp(bytes.data(), kDictMagic, 4) != 0) {
    throw StoreError(StoreErrc::kBadMagic, "expected \"VCDC\"", 0);
  }
  detail::ByteReader r(bytes, truncated);
  r.get_span(4);
  if (const auto version = r.get<std::uint16_t>(); version != kDictVersion) {
    throw StoreError(StoreErrc::kUnsupportedVersion, "dictionary version " + std::to_string(version), 4);
  }
  const std::size_t V = r.get<std::uint32_t>();
  const std::size_t C = r.get<std::uint32_t>();
  if (V == 0 || C == 0) throw StoreError(StoreErrc::kInvalidShape, "dictionary with V or C = 0", 6);
  r.require(4 * (V * C + 2 * V) + 8);

  VcDictionary dict;
  dict.dim = C;
  dict.means.resize(V * C);
  dict.concentrations.resize(V);
  dict.weights.resize(V);
  for (double& x : dict.means) x = r.get<float>();
  for (double& x : dict.concentrations) x = r.get<float>();
  for (double& x : dict.weights) x = r.get<float>();
  dict.log_likelihood = r.get<double>();
  if (r.remaining() != 0) {
    throw StoreError(StoreErrc::kTrailingBytes, "dictionary", static_cast<std::int64_t>(r.offset()));
  }

  for (double x : dict.means) {
    if (!std::isfinite(x)) throw StoreError(StoreErrc::kNonFiniteData, "dictionary mean");
  }
  // f32 storage loses the exact normalisation; restore it in double.
  for (std::size_t v = 0; v < V; ++v) {
    std::span<double> mu(dict.means.data() + v * C, C);
    const double n = norm(mu);
    if (!(n > 0.0)) throw StoreError(StoreErrc::kInvalidShape, "dictionary mean " + std::to_string(v) + " is zero");
    for (double& x : mu) x /= n;
  }
  double total = 0.0;
  for (double w : dict.weights) total += w;
  if (!(total > 0.0) || !std::isfinite(total)) throw StoreError(StoreErrc::kNonFiniteData, "dictionary weights");
  for (double& w : dict.weights) w /= total;
  validate_dictionary(dict);
  return dict;
}

void save_dictionary(const VcDictionary& dict, const std::filesystem::path& path) {
  const auto bytes = serialize_dictionary(dict);
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw StoreError(StoreErrc::kIo, "cannot open " + path.string() + " for writing");
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw StoreError(StoreErrc::kIo, "write to " + path.string() + " failed");
}

VcDictionary load_dictionary(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw StoreError(StoreErrc::kIo, "cannot open " + path.string());
  std::vector<std::uint8_t> bytes{std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
  return parse_dictionary(bytes);
}

}  // namespace vcshot
