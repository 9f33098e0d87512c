#pragma once

// Mixture of von Mises-Fisher distributions on the unit sphere, fitted by EM.
// The fitted mean directions are the visual concepts (VCs).

#include <cstdint>
#include <filesystem>
#include <span>
#include <vector>

#include "vcshot/feature_store.hpp"

namespace vcshot {

inline constexpr double kDefaultKappaMax = 1e5;
inline constexpr double kKappaMin = 1e-6;
inline constexpr double kUnitNormTolerance = 1e-6;
// Components whose total responsibility falls below this are reseeded.
inline constexpr double kStarvedMass = 1e-6;

struct VcDictionary {
  std::size_t dim = 0;
  std::vector<double> means;           // size() * dim, each row unit length
  std::vector<double> concentrations;  // kappa_v in (0, kappa_max]
  std::vector<double> weights;         // alpha_v, sums to 1
  double log_likelihood = 0.0;
  std::size_t iterations = 0;          // EM M-steps performed
  // Data log-likelihood evaluated before each M-step and after the last one.
  // Not persisted.
  std::vector<double> log_likelihood_trace;

  std::size_t size() const { return concentrations.size(); }
  std::span<const double> mean(std::size_t v) const { return {means.data() + v * dim, dim}; }
};

struct FitConfig {
  std::size_t num_vcs = 200;
  std::uint64_t seed = 0;
  std::size_t max_iters = 200;
  double rel_tol = 1e-6;
  double kappa_max = kDefaultKappaMax;
  std::size_t kmeans_iters = 10;
};

// log C_d(kappa) = (d/2 - 1) log kappa - (d/2) log 2pi - log I_{d/2-1}(kappa).
double vmf_log_normalizer(std::size_t dim, double kappa);

// log V_d(f | mu, kappa) = log C_d(kappa) + kappa mu.f
double vmf_log_density(std::span<const double> f, std::span<const double> mu, double kappa,
                       double kappa_max = kDefaultKappaMax);

// Closed-form approximation of the concentration MLE from the mean
// resultant length rbar, clipped to [kKappaMin, kappa_max].
double estimate_kappa(double rbar, std::size_t dim, double kappa_max);

// Seeds V directions by cosine k-means++, refines them with spherical
// k-means, and derives initial weights and concentrations from the hard
// clusters. Deterministic in (vectors, config).
VcDictionary initialize_dictionary(const VectorSet& vectors, const FitConfig& config);

// Runs EM from `initial` on vectors in the given order. Stops after
// config.max_iters M-steps or when the relative log-likelihood gain drops
// below config.rel_tol.
VcDictionary run_em(const VectorSet& vectors, VcDictionary initial, const FitConfig& config);

// Full fit: validates input, puts the vectors into a canonical
// (lexicographic) order so the result does not depend on arrival order,
// seeds and runs EM.
VcDictionary fit_vmfm(const VectorSet& vectors, const FitConfig& config);

// Posterior responsibilities gamma[m * V + v]; each row sums to 1.
std::vector<double> responsibilities(const VectorSet& vectors, const VcDictionary& dict);

// argmax_v of the posterior for each vector, ties to the smaller index.
std::vector<std::size_t> assign_hard(const VectorSet& vectors, const VcDictionary& dict);

// Throws InvalidArgument if the dictionary breaks its invariants.
void validate_dictionary(const VcDictionary& dict, double kappa_max = kDefaultKappaMax);

// VCDC file: "VCDC" u16 version(=1) u32 V u32 C, V*C f32 means,
// V f32 concentrations, V f32 weights, f64 log-likelihood. Little-endian.
std::vector<std::uint8_t> serialize_dictionary(const VcDictionary& dict);
VcDictionary parse_dictionary(std::span<const std::uint8_t> bytes);
void save_dictionary(const VcDictionary& dict, const std::filesystem::path& path);
VcDictionary load_dictionary(const std::filesystem::path& path);

}  // namespace vcshot
