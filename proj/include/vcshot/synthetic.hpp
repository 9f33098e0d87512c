#pragma once

// Synthetic feature stores with known structure, for tests and demos.

#include <cstdint>
#include <vector>

#include "vcshot/feature_store.hpp"
#include "vcshot/random.hpp"

namespace vcshot::synth {

std::vector<double> random_unit_vector(std::size_t dim, Rng& rng);

// One draw from vMF(mu, kappa) by Wood's rejection scheme. mu must be unit.
std::vector<double> sample_vmf(const std::vector<double>& mu, double kappa, Rng& rng);

struct ClusterStoreConfig {
  std::size_t clusters = 3;
  std::size_t points_per_cluster = 300;
  std::size_t dim = 16;
  double kappa = 50.0;
  std::uint64_t seed = 7;
};

// One 1x1 grid per sample; category_id is the generating cluster.
struct ClusterStore {
  FeatureStore store;
  std::vector<std::vector<double>> means;
};
ClusterStore make_cluster_store(const ClusterStoreConfig& config);

struct PlantedPartsConfig {
  std::size_t categories = 8;
  std::size_t images_per_category = 24;
  std::uint32_t height = 5;
  std::uint32_t width = 5;
  std::uint32_t channels = 16;
  std::size_t parts_per_category = 10;
  std::size_t background_directions = 0;
  double kappa = 30.0;
  std::uint64_t seed = 11;
};

// Every category owns `parts_per_category` lattice positions, each with its
// own mean direction, identical across the category's images. Remaining
// positions draw from `background_directions` directions shared by all
// categories, or are uniform on the sphere when that count is 0. Planted
// and shared features are vMF(kappa) samples around their direction.
FeatureStore make_planted_parts_store(const PlantedPartsConfig& config);

// Isotropic Gaussian features with no category structure.
FeatureStore make_random_store(std::size_t categories, std::size_t images_per_category, std::uint32_t height,
                               std::uint32_t width, std::uint32_t channels, std::uint64_t seed);

}  // namespace vcshot::synth
