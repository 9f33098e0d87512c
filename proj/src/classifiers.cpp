#include "vcshot/classifiers.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <ostream>
#include <string>

namespace vcshot {

namespace {

void require_same_shape(const VcEncoding& a, const VcEncoding& b, const char* where) {
  if (a.height != b.height || a.width != b.width || a.vcs != b.vcs) {
    throw ShapeMismatch(std::string(where) + ": encodings have shapes " + std::to_string(a.height) + "x" +
                        std::to_string(a.width) + "x" + std::to_string(a.vcs) + " and " +
                        std::to_string(b.height) + "x" + std::to_string(b.width) + "x" +
                        std::to_string(b.vcs));
  }
}

std::size_t popcount(const VcEncoding& b) {
  std::size_t n = 0;
  for (auto x : b.bits) n += x;
  return n;
}

bool beats(double candidate, double incumbent) {
  return candidate - incumbent > kTieTolerance * std::max(1.0, std::abs(incumbent));
}

double directed_overlap(const VcEncoding& b, const std::vector<std::uint8_t>& dilated_other) {
  std::size_t hit = 0;
  std::size_t total = 0;
  for (std::size_t i = 0; i < b.bits.size(); ++i) {
    total += b.bits[i];
    hit += b.bits[i] & dilated_other[i];
  }
  return static_cast<double>(hit) / static_cast<double>(total);
}

// 1-D smoothing along one axis. `stride` separates consecutive samples,
// `count` samples per line.
void smooth_lines(std::vector<double>& data, std::size_t lines_outer, std::size_t outer_stride,
                  std::size_t count, std::size_t stride, std::size_t inner, const std::vector<double>& kernel,
                  SmoothingBorder border) {
  const auto radius = static_cast<std::ptrdiff_t>(kernel.size() / 2);
  const auto n = static_cast<std::ptrdiff_t>(count);
  std::vector<double> line(count);
  for (std::size_t o = 0; o < lines_outer; ++o) {
    for (std::size_t c = 0; c < inner; ++c) {
      const std::size_t base = o * outer_stride + c;
      for (std::size_t i = 0; i < count; ++i) line[i] = data[base + i * stride];
      for (std::ptrdiff_t i = 0; i < n; ++i) {
        double acc = 0.0;
        double weight = 0.0;
        for (std::ptrdiff_t k = -radius; k <= radius; ++k) {
          std::ptrdiff_t j = i + k;
          if (border == SmoothingBorder::kPeriodic) {
            j = ((j % n) + n) % n;
          } else if (j < 0 || j >= n) {
            continue;
          }
          const double w = kernel[static_cast<std::size_t>(k + radius)];
          acc += w * line[static_cast<std::size_t>(j)];
          weight += w;
        }
        data[base + static_cast<std::size_t>(i) * stride] = acc / weight;
      }
    }
  }
}

}  // namespace

std::vector<std::uint8_t> dilate(const VcEncoding& b, std::uint32_t radius) {
  const std::size_t H = b.height;
  const std::size_t W = b.width;
  const std::size_t V = b.vcs;
  if (radius == 0) return b.bits;
  const auto r = static_cast<std::ptrdiff_t>(radius);

  // Separable: max along columns, then along rows.
  std::vector<std::uint8_t> horizontal(b.bits.size(), 0);
  for (std::size_t y = 0; y < H; ++y) {
    for (std::size_t x = 0; x < W; ++x) {
      const auto lo = static_cast<std::size_t>(std::max<std::ptrdiff_t>(0, static_cast<std::ptrdiff_t>(x) - r));
      const auto hi = std::min(W - 1, x + radius);
      for (std::size_t v = 0; v < V; ++v) {
        std::uint8_t m = 0;
        for (std::size_t q = lo; q <= hi && m == 0; ++q) m = b.bits[(y * W + q) * V + v];
        horizontal[(y * W + x) * V + v] = m;
      }
    }
  }
  std::vector<std::uint8_t> out(b.bits.size(), 0);
  for (std::size_t y = 0; y < H; ++y) {
    const auto lo = static_cast<std::size_t>(std::max<std::ptrdiff_t>(0, static_cast<std::ptrdiff_t>(y) - r));
    const auto hi = std::min(H - 1, y + radius);
    for (std::size_t x = 0; x < W; ++x) {
      for (std::size_t v = 0; v < V; ++v) {
        std::uint8_t m = 0;
        for (std::size_t q = lo; q <= hi && m == 0; ++q) m = horizontal[(q * W + x) * V + v];
        out[(y * W + x) * V + v] = m;
      }
    }
  }
  return out;
}

double similarity(const VcEncoding& b, const VcEncoding& b_prime, const NeighborhoodSpec& nbhd) {
  require_same_shape(b, b_prime, "similarity");
  if (nbhd.radius > std::min(b.height, b.width)) {
    throw InvalidArgument("similarity: neighbourhood radius " + std::to_string(nbhd.radius) +
                          " exceeds lattice size");
  }
  if (popcount(b) == 0 || popcount(b_prime) == 0) {
    throw EmptyEncoding("similarity: encoding has no set bits");
  }
  const double forward = directed_overlap(b, dilate(b_prime, nbhd.radius));
  const double backward = directed_overlap(b_prime, dilate(b, nbhd.radius));
  return 0.5 * (forward + backward);
}

std::uint32_t classify_nn(const VcEncoding& query, std::span<const LabeledEncoding> support,
                          const NeighborhoodSpec& nbhd) {
  if (support.empty()) throw InvalidArgument("classify_nn: empty support set");
  std::size_t best = 0;
  double best_score = similarity(query, support[0].encoding, nbhd);
  for (std::size_t i = 1; i < support.size(); ++i) {
    const double s = similarity(query, support[i].encoding, nbhd);
    if (beats(s, best_score)) {
      best_score = s;
      best = i;
    }
  }
  return support[best].category_id;
}

std::vector<double> gaussian_smooth(std::span<const double> map, std::uint32_t height, std::uint32_t width,
                                    std::uint32_t channels, double sigma, SmoothingBorder border) {
  if (!(sigma > 0.0) || !std::isfinite(sigma)) throw InvalidArgument("gaussian_smooth: sigma must be positive");
  if (map.size() != std::size_t{height} * width * channels) {
    throw ShapeMismatch("gaussian_smooth: map size does not match H*W*channels");
  }
  const auto radius = static_cast<std::size_t>(std::ceil(3.0 * sigma));
  std::vector<double> kernel(2 * radius + 1);
  for (std::size_t i = 0; i < kernel.size(); ++i) {
    const double x = static_cast<double>(i) - static_cast<double>(radius);
    kernel[i] = std::exp(-x * x / (2.0 * sigma * sigma));
  }

  std::vector<double> out(map.begin(), map.end());
  const std::size_t C = channels;
  // Along width: one line per (row, channel).
  smooth_lines(out, height, std::size_t{width} * C, width, C, C, kernel, border);
  // Along height: one line per (column, channel).
  smooth_lines(out, 1, 0, height, std::size_t{width} * C, std::size_t{width} * C, kernel, border);
  return out;
}

LikelihoodModel fit_likelihood(std::span<const LabeledEncoding> support, double sigma, double epsilon) {
  if (support.empty()) throw InvalidArgument("fit_likelihood: empty support set");
  if (!(epsilon > 0.0 && epsilon < 0.5)) throw InvalidArgument("fit_likelihood: epsilon must lie in (0, 0.5)");
  const VcEncoding& first = support[0].encoding;
  for (const auto& s : support) require_same_shape(first, s.encoding, "fit_likelihood");

  std::map<std::uint32_t, std::pair<std::vector<double>, std::size_t>> sums;
  for (const auto& s : support) {
    auto& [acc, count] = sums[s.category_id];
    if (acc.empty()) acc.assign(s.encoding.bits.size(), 0.0);
    for (std::size_t i = 0; i < acc.size(); ++i) acc[i] += s.encoding.bits[i];
    ++count;
  }

  LikelihoodModel model;
  model.height = first.height;
  model.width = first.width;
  model.vcs = first.vcs;
  model.sigma = sigma;
  model.epsilon = epsilon;
  for (auto& [category, entry] : sums) {
    auto& [acc, count] = entry;
    for (double& x : acc) x /= static_cast<double>(count);
    auto smoothed = gaussian_smooth(acc, model.height, model.width, model.vcs, sigma);
    for (double& x : smoothed) x = std::clamp(x, epsilon, 1.0 - epsilon);
    model.categories.push_back(category);
    model.theta.push_back(std::move(smoothed));
  }
  return model;
}

double log_likelihood(const VcEncoding& b, std::span<const double> theta) {
  if (theta.size() != b.bits.size()) throw ShapeMismatch("log_likelihood: theta size does not match encoding");
  double total = 0.0;
  for (std::size_t i = 0; i < theta.size(); ++i) {
    total += std::log(b.bits[i] != 0 ? theta[i] : 1.0 - theta[i]);
  }
  return total;
}

std::uint32_t classify_lh(const VcEncoding& query, const LikelihoodModel& model) {
  if (model.categories.empty()) throw InvalidArgument("classify_lh: model has no categories");
  if (query.height != model.height || query.width != model.width || query.vcs != model.vcs) {
    throw ShapeMismatch("classify_lh: query shape does not match the model");
  }
  std::size_t best = 0;
  double best_score = log_likelihood(query, model.theta[0]);
  for (std::size_t y = 1; y < model.categories.size(); ++y) {
    const double s = log_likelihood(query, model.theta[y]);
    if (beats(s, best_score)) {
      best_score = s;
      best = y;
    }
  }
  return model.categories[best];
}

void write_likelihood_trace_csv(std::ostream& out, const VcEncoding& query, const LikelihoodModel& model) {
  if (query.height != model.height || query.width != model.width || query.vcs != model.vcs) {
    throw ShapeMismatch("likelihood trace: query shape does not match the model");
  }
  out << "category_id,row,col,vc,bit,theta,contribution\n";
  out.precision(17);
  for (std::size_t y = 0; y < model.categories.size(); ++y) {
    const auto& theta = model.theta[y];
    for (std::size_t row = 0; row < model.height; ++row) {
      for (std::size_t col = 0; col < model.width; ++col) {
        for (std::size_t v = 0; v < model.vcs; ++v) {
          const std::size_t i = (row * model.width + col) * model.vcs + v;
          const bool bit = query.bits[i] != 0;
          out << model.categories[y] << ',' << row << ',' << col << ',' << v << ',' << (bit ? 1 : 0) << ','
              << theta[i] << ',' << std::log(bit ? theta[i] : 1.0 - theta[i]) << '\n';
        }
      }
    }
  }
}

}  // namespace vcshot
