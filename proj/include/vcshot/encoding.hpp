#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <vector>

#include "vcshot/feature_store.hpp"
#include "vcshot/vmf.hpp"

namespace vcshot {

// Distance assigned to every VC at positions whose feature vector is ~0.
inline constexpr float kDegenerateDistance = 1.0f;

// d[p, v] = 1 - cos(f_p, mu_v), position-major with v fastest.
struct DistanceTensor {
  std::uint32_t height = 0;
  std::uint32_t width = 0;
  std::uint32_t vcs = 0;
  std::vector<float> values;

  std::size_t positions() const { return std::size_t{height} * width; }
  float at(std::size_t position, std::size_t v) const { return values[position * vcs + v]; }
};

// Binary VC-Encoding b[p, v] = (d[p, v] < threshold), same layout.
struct VcEncoding {
  std::uint32_t height = 0;
  std::uint32_t width = 0;
  std::uint32_t vcs = 0;
  std::vector<std::uint8_t> bits;  // 0 or 1
  double threshold = 0.0;
  double coverage = 0.0;  // fraction of positions where some VC fires
  double firerate = 0.0;  // mean number of firing VCs per position

  std::size_t positions() const { return std::size_t{height} * width; }
  bool bit(std::size_t position, std::size_t v) const { return bits[position * vcs + v] != 0; }
  bool bit(std::size_t row, std::size_t col, std::size_t v) const { return bit(row * width + col, v); }
};

struct EncodingStats {
  double coverage = 0.0;
  double firerate = 0.0;
};

DistanceTensor compute_distances(const FeatureGrid& grid, const VcDictionary& dict);

// Throws InvalidArgument unless 0 <= threshold <= 2.
VcEncoding encode(const DistanceTensor& distances, double threshold);

// Coverage and firerate recomputed from the bits alone.
EncodingStats encoding_stats(const VcEncoding& encoding);

struct ThresholdSearch {
  double coverage_target = 0.8;
  double step = 0.001;
};

class NoThresholdFound : public Error {
 public:
  using Error::Error;
};

// Smallest grid point T in {0, step, 2 step, ..., 2} at which the mean
// (unweighted, per image) coverage of the encodings reaches the target.
// Throws NoThresholdFound if even T = 2 falls short.
double search_threshold(std::span<const DistanceTensor> training, const ThresholdSearch& search = {});

// Mean per-image coverage of the tensors thresholded at T.
double mean_coverage(std::span<const DistanceTensor> tensors, double threshold);

// VCBE file: "VCBE" u32 H u32 W u32 V, then ceil(H*W*V/8) bytes holding the
// bits position-major, v fastest, least significant bit first.
std::vector<std::uint8_t> serialize_encoding_bits(const VcEncoding& encoding);
// The threshold is not part of the format and comes back as NaN; coverage
// and firerate are recomputed from the bits.
VcEncoding parse_encoding_bits(std::span<const std::uint8_t> bytes);
void save_encoding_bits(const VcEncoding& encoding, const std::filesystem::path& path);

}  // namespace vcshot
