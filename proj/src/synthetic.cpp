#include "vcshot/synthetic.hpp"

#include <cmath>
#include <numbers>
#include <random>
#include <string>

namespace vcshot::synth {

namespace {

double normal(Rng& rng) {
  // Box-Muller; 1 - u keeps the log argument in (0, 1].
  const double u = 1.0 - rng.uniform01();
  const double v = rng.uniform01();
  return std::sqrt(-2.0 * std::log(u)) * std::cos(2.0 * std::numbers::pi * v);
}

double beta_symmetric(double a, Rng& rng) {
  std::gamma_distribution<double> gamma(a, 1.0);
  const double x = gamma(rng.engine());
  const double y = gamma(rng.engine());
  return x / (x + y);
}

void push_grid(FeatureStore& store, std::string id, std::uint32_t category, std::uint32_t height,
               std::uint32_t width, std::uint32_t channels, std::vector<float> data) {
  FeatureGrid g;
  g.image_id = std::move(id);
  g.category_id = category;
  g.height = height;
  g.width = width;
  g.channels = channels;
  g.rf_offset = 4;
  g.rf_stride = 8;
  g.rf_size = 36;
  g.data = std::move(data);
  store.grids.push_back(std::move(g));
}

}  // namespace

std::vector<double> random_unit_vector(std::size_t dim, Rng& rng) {
  std::vector<double> v(dim);
  double sq = 0.0;
  do {
    sq = 0.0;
    for (double& x : v) {
      x = normal(rng);
      sq += x * x;
    }
  } while (sq < 1e-20);
  const double n = std::sqrt(sq);
  for (double& x : v) x /= n;
  return v;
}

std::vector<double> sample_vmf(const std::vector<double>& mu, double kappa, Rng& rng) {
  const double d = static_cast<double>(mu.size());
  const double m1 = d - 1.0;
  const double b = m1 / (2.0 * kappa + std::sqrt(4.0 * kappa * kappa + m1 * m1));
  const double x0 = (1.0 - b) / (1.0 + b);
  const double c = kappa * x0 + m1 * std::log(1.0 - x0 * x0);

  double w = 0.0;
  for (;;) {
    const double z = beta_symmetric(0.5 * m1, rng);
    w = (1.0 - (1.0 + b) * z) / (1.0 - (1.0 - b) * z);
    const double u = 1.0 - rng.uniform01();
    if (kappa * w + m1 * std::log(1.0 - x0 * w) - c >= std::log(u)) break;
  }

  // Uniform direction in the tangent space at mu.
  std::vector<double> tangent;
  double tn = 0.0;
  do {
    tangent = random_unit_vector(mu.size(), rng);
    double proj = 0.0;
    for (std::size_t i = 0; i < mu.size(); ++i) proj += tangent[i] * mu[i];
    tn = 0.0;
    for (std::size_t i = 0; i < mu.size(); ++i) {
      tangent[i] -= proj * mu[i];
      tn += tangent[i] * tangent[i];
    }
  } while (tn < 1e-12);
  tn = std::sqrt(tn);

  const double s = std::sqrt(std::max(0.0, 1.0 - w * w));
  std::vector<double> out(mu.size());
  for (std::size_t i = 0; i < mu.size(); ++i) out[i] = w * mu[i] + s * tangent[i] / tn;
  return out;
}

ClusterStore make_cluster_store(const ClusterStoreConfig& config) {
  Rng rng(config.seed);
  ClusterStore out;
  out.store.layer_name = "synthetic-clusters";
  for (std::size_t k = 0; k < config.clusters; ++k) {
    out.means.push_back(random_unit_vector(config.dim, rng));
    out.store.categories[static_cast<std::uint32_t>(k)] = "cluster" + std::to_string(k);
  }
  for (std::size_t k = 0; k < config.clusters; ++k) {
    for (std::size_t i = 0; i < config.points_per_cluster; ++i) {
      const auto x = sample_vmf(out.means[k], config.kappa, rng);
      push_grid(out.store, "c" + std::to_string(k) + "_" + std::to_string(i), static_cast<std::uint32_t>(k), 1, 1,
                static_cast<std::uint32_t>(config.dim), std::vector<float>(x.begin(), x.end()));
    }
  }
  return out;
}

FeatureStore make_planted_parts_store(const PlantedPartsConfig& config) {
  Rng rng(config.seed);
  const std::size_t P = std::size_t{config.height} * config.width;
  const std::size_t C = config.channels;

  std::vector<std::vector<double>> background;
  for (std::size_t i = 0; i < config.background_directions; ++i) background.push_back(random_unit_vector(C, rng));

  struct Part {
    std::size_t position;
    std::vector<double> direction;
  };
  std::vector<std::vector<Part>> parts(config.categories);
  for (auto& category_parts : parts) {
    for (std::size_t pos : rng.sample_without_replacement(P, config.parts_per_category)) {
      category_parts.push_back({pos, random_unit_vector(C, rng)});
    }
  }

  FeatureStore store;
  store.layer_name = "synthetic-planted-parts";
  for (std::size_t y = 0; y < config.categories; ++y) {
    store.categories[static_cast<std::uint32_t>(y)] = "category" + std::to_string(y);
  }
  for (std::size_t y = 0; y < config.categories; ++y) {
    for (std::size_t n = 0; n < config.images_per_category; ++n) {
      std::vector<const std::vector<double>*> direction(P, nullptr);
      for (const auto& part : parts[y]) direction[part.position] = &part.direction;
      std::vector<float> data(P * C);
      for (std::size_t p = 0; p < P; ++p) {
        const auto* mu = direction[p];
        if (mu == nullptr && !background.empty()) {
          mu = &background[static_cast<std::size_t>(rng.below(background.size()))];
        }
        const auto x = mu != nullptr ? sample_vmf(*mu, config.kappa, rng) : random_unit_vector(C, rng);
        // Raw activations are not unit length; distances must not care.
        const double magnitude = 0.5 + 1.5 * rng.uniform01();
        for (std::size_t c = 0; c < C; ++c) data[p * C + c] = static_cast<float>(magnitude * x[c]);
      }
      push_grid(store, "img" + std::to_string(y) + "_" + std::to_string(n), static_cast<std::uint32_t>(y),
                config.height, config.width, config.channels, std::move(data));
    }
  }
  return store;
}

FeatureStore make_random_store(std::size_t categories, std::size_t images_per_category, std::uint32_t height,
                               std::uint32_t width, std::uint32_t channels, std::uint64_t seed) {
  Rng rng(seed);
  FeatureStore store;
  store.layer_name = "synthetic-random";
  for (std::size_t y = 0; y < categories; ++y) {
    store.categories[static_cast<std::uint32_t>(y)] = "category" + std::to_string(y);
  }
  const std::size_t count = std::size_t{height} * width * channels;
  for (std::size_t y = 0; y < categories; ++y) {
    for (std::size_t n = 0; n < images_per_category; ++n) {
      std::vector<float> data(count);
      for (float& x : data) x = static_cast<float>(normal(rng));
      push_grid(store, "rand" + std::to_string(y) + "_" + std::to_string(n), static_cast<std::uint32_t>(y), height,
                width, channels, std::move(data));
    }
  }
  return store;
}

}  // namespace vcshot::synth
