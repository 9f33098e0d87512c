#include "vcshot/encoding.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <limits>
#include <string>

#include "vcshot/detail/binary_io.hpp"

namespace vcshot {

DistanceTensor compute_distances(const FeatureGrid& grid, const VcDictionary& dict) {
  if (grid.channels != dict.dim) {
    throw ShapeMismatch("compute_distances: grid '" + grid.image_id + "' has C=" + std::to_string(grid.channels) +
                        ", dictionary has C=" + std::to_string(dict.dim));
  }
  const std::size_t V = dict.size();
  const std::size_t C = dict.dim;

  std::vector<double> mean_norms(V);
  for (std::size_t v = 0; v < V; ++v) {
    double sq = 0.0;
    for (double x : dict.mean(v)) sq += x * x;
    mean_norms[v] = std::sqrt(sq);
  }

  DistanceTensor out;
  out.height = grid.height;
  out.width = grid.width;
  out.vcs = static_cast<std::uint32_t>(V);
  out.values.resize(grid.positions() * V);
  for (std::size_t p = 0; p < grid.positions(); ++p) {
    const auto f = grid.at(p);
    double sq = 0.0;
    for (float x : f) sq += double{x} * double{x};
    const double f_norm = std::sqrt(sq);
    float* row = out.values.data() + p * V;
    if (f_norm < kMinFeatureNorm) {
      std::fill(row, row + V, kDegenerateDistance);
      continue;
    }
    for (std::size_t v = 0; v < V; ++v) {
      const auto mu = dict.mean(v);
      double d = 0.0;
      for (std::size_t c = 0; c < C; ++c) d += double{f[c]} * mu[c];
      const double distance = 1.0 - d / (f_norm * mean_norms[v]);
      row[v] = static_cast<float>(std::clamp(distance, 0.0, 2.0));
    }
  }
  return out;
}

EncodingStats encoding_stats(const VcEncoding& encoding) {
  const std::size_t P = encoding.positions();
  const std::size_t V = encoding.vcs;
  std::size_t covered = 0;
  std::size_t fired = 0;
  for (std::size_t p = 0; p < P; ++p) {
    std::size_t here = 0;
    for (std::size_t v = 0; v < V; ++v) here += encoding.bits[p * V + v];
    fired += here;
    covered += here > 0 ? 1 : 0;
  }
  return {static_cast<double>(covered) / static_cast<double>(P), static_cast<double>(fired) / static_cast<double>(P)};
}

VcEncoding encode(const DistanceTensor& distances, double threshold) {
  if (!(threshold >= 0.0 && threshold <= 2.0)) {
    throw InvalidArgument("encode: threshold " + std::to_string(threshold) + " outside [0, 2]");
  }
  VcEncoding out;
  out.height = distances.height;
  out.width = distances.width;
  out.vcs = distances.vcs;
  out.threshold = threshold;
  out.bits.resize(distances.values.size());
  for (std::size_t i = 0; i < distances.values.size(); ++i) {
    out.bits[i] = double{distances.values[i]} < threshold ? 1 : 0;
  }
  const auto stats = encoding_stats(out);
  out.coverage = stats.coverage;
  out.firerate = stats.firerate;
  return out;
}

namespace {

// Per-image sorted minimum distance over VCs at each position. A position
// is covered at T exactly when its minimum distance is below T.
std::vector<std::vector<double>> sorted_minima(std::span<const DistanceTensor> tensors) {
  std::vector<std::vector<double>> out;
  out.reserve(tensors.size());
  for (const auto& t : tensors) {
    std::vector<double> minima(t.positions(), std::numeric_limits<double>::infinity());
    for (std::size_t p = 0; p < t.positions(); ++p) {
      for (std::size_t v = 0; v < t.vcs; ++v) minima[p] = std::min(minima[p], double{t.at(p, v)});
    }
    std::sort(minima.begin(), minima.end());
    out.push_back(std::move(minima));
  }
  return out;
}

double mean_coverage_sorted(const std::vector<std::vector<double>>& minima, double threshold) {
  double total = 0.0;
  for (const auto& m : minima) {
    const auto covered = std::lower_bound(m.begin(), m.end(), threshold) - m.begin();
    total += static_cast<double>(covered) / static_cast<double>(m.size());
  }
  return total / static_cast<double>(minima.size());
}

}  // namespace

double mean_coverage(std::span<const DistanceTensor> tensors, double threshold) {
  if (tensors.empty()) throw InvalidArgument("mean_coverage: no tensors");
  return mean_coverage_sorted(sorted_minima(tensors), threshold);
}

double search_threshold(std::span<const DistanceTensor> training, const ThresholdSearch& search) {
  if (training.empty()) throw InvalidArgument("search_threshold: no training tensors");
  if (!(search.coverage_target > 0.0 && search.coverage_target <= 1.0)) {
    throw InvalidArgument("search_threshold: coverage target must lie in (0, 1]");
  }
  if (!(search.step > 0.0) || !std::isfinite(search.step)) {
    throw InvalidArgument("search_threshold: step must be positive");
  }
  for (const auto& t : training) {
    if (t.positions() == 0 || t.vcs == 0) throw InvalidArgument("search_threshold: empty distance tensor");
  }

  const auto minima = sorted_minima(training);
  const auto last = static_cast<std::size_t>(std::floor(2.0 / search.step + 1e-9));
  auto grid_point = [&](std::size_t i) { return std::min(static_cast<double>(i) * search.step, 2.0); };
  auto satisfied = [&](std::size_t i) {
    return mean_coverage_sorted(minima, grid_point(i)) >= search.coverage_target;
  };

  if (!satisfied(last)) {
    throw NoThresholdFound("search_threshold: mean coverage " +
                           std::to_string(mean_coverage_sorted(minima, grid_point(last))) +
                           " at T=2 is below the target " + std::to_string(search.coverage_target));
  }
  // Coverage is monotone in T, so bisect for the first satisfying index.
  std::size_t lo = 0;
  std::size_t hi = last;
  while (lo < hi) {
    const std::size_t mid = lo + (hi - lo) / 2;
    if (satisfied(mid)) {
      hi = mid;
    } else {
      lo = mid + 1;
    }
  }
  return grid_point(lo);
}

namespace {
constexpr char kBitsMagic[4] = {'V', 'C', 'B', 'E'};
}

std::vector<std::uint8_t> serialize_encoding_bits(const VcEncoding& encoding) {
  detail::ByteWriter w;
  w.put_bytes({kBitsMagic, 4});
  w.put(encoding.height);
  w.put(encoding.width);
  w.put(encoding.vcs);
  std::vector<std::uint8_t> packed((encoding.bits.size() + 7) / 8, 0);
  for (std::size_t i = 0; i < encoding.bits.size(); ++i) {
    if (encoding.bits[i] != 0) packed[i / 8] |= static_cast<std::uint8_t>(1u << (i % 8));
  }
  auto& bytes = w.bytes();
  bytes.insert(bytes.end(), packed.begin(), packed.end());
  return std::move(bytes);
}

VcEncoding parse_encoding_bits(std::span<const std::uint8_t> bytes) {
  auto truncated = [](std::size_t offset) -> void {
    throw StoreError(StoreErrc::kTruncatedPayload, "encoding", static_cast<std::int64_t>(offset));
  };
  if (bytes.size() < 4 || std::memcmp(bytes.data(), kBitsMagic, 4) != 0) {
    throw StoreError(StoreErrc::kBadMagic, "expected \"VCBE\"", 0);
  }
  detail::ByteReader r(bytes, truncated);
  r.get_span(4);
  VcEncoding out;
  out.height = r.get<std::uint32_t>();
  out.width = r.get<std::uint32_t>();
  out.vcs = r.get<std::uint32_t>();
  const std::size_t count = std::size_t{out.height} * out.width * out.vcs;
  if (count == 0) throw StoreError(StoreErrc::kInvalidShape, "encoding with a zero dimension", 4);
  const auto packed = r.get_span((count + 7) / 8);
  if (r.remaining() != 0) {
    throw StoreError(StoreErrc::kTrailingBytes, "encoding", static_cast<std::int64_t>(r.offset()));
  }
  out.bits.resize(count);
  for (std::size_t i = 0; i < count; ++i) out.bits[i] = (packed[i / 8] >> (i % 8)) & 1u;
  out.threshold = std::numeric_limits<double>::quiet_NaN();
  const auto stats = encoding_stats(out);
  out.coverage = stats.coverage;
  out.firerate = stats.firerate;
  return out;
}

void save_encoding_bits(const VcEncoding& encoding, const std::filesystem::path& path) {
  const auto bytes = serialize_encoding_bits(encoding);
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw StoreError(StoreErrc::kIo, "cannot open " + path.string() + " for writing");
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw StoreError(StoreErrc::kIo, "write to " + path.string() + " failed");
}

}  // namespace vcshot
