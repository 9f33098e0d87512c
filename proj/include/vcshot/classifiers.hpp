#pragma once

// Few-shot classifiers over binary VC-Encodings.
//
// Nearest neighbour: a spatially tolerant overlap kernel
//   K(b, b') = 1/2 [ sum b . dilate(b') / sum b + sum b' . dilate(b) / sum b' ]
// where dilate takes the max over the Chebyshev neighbourhood of each
// position within one VC channel.
//
// Likelihood: independent Bernoulli bits with per-category probability maps
// estimated from the support encodings, smoothed spatially with a Gaussian
// and clamped away from 0 and 1.

#include <cstdint>
#include <iosfwd>
#include <span>
#include <vector>

#include "vcshot/encoding.hpp"

namespace vcshot {

struct NeighborhoodSpec {
  std::uint32_t radius = 1;
};

class EmptyEncoding : public Error {
 public:
  using Error::Error;
};

struct LabeledEncoding {
  VcEncoding encoding;
  std::uint32_t category_id = 0;
};

// Per-channel max filter over the (2r+1) x (2r+1) window, clipped at the
// lattice borders.
std::vector<std::uint8_t> dilate(const VcEncoding& b, std::uint32_t radius);

double similarity(const VcEncoding& b, const VcEncoding& b_prime, const NeighborhoodSpec& nbhd);

// Scores closer than this (relative to max(1, |score|)) count as tied, so
// that equal sums accumulated in a different order still tie.
inline constexpr double kTieTolerance = 1e-12;

// Category of the most similar support example; ties go to the earliest.
std::uint32_t classify_nn(const VcEncoding& query, std::span<const LabeledEncoding> support,
                          const NeighborhoodSpec& nbhd);

enum class SmoothingBorder {
  kRenormalize,  // drop out-of-lattice taps and renormalise the kernel
  kPeriodic,     // wrap around (used to check mass preservation)
};

// Spatial Gaussian smoothing of a position-major map with `channels` values
// per position. Kernel truncated at ceil(3 sigma); channels never mix.
std::vector<double> gaussian_smooth(std::span<const double> map, std::uint32_t height, std::uint32_t width,
                                    std::uint32_t channels, double sigma,
                                    SmoothingBorder border = SmoothingBorder::kRenormalize);

inline constexpr double kDefaultSigma = 1.2;
inline constexpr double kDefaultEpsilon = 1e-3;

struct LikelihoodModel {
  std::uint32_t height = 0;
  std::uint32_t width = 0;
  std::uint32_t vcs = 0;
  std::vector<std::uint32_t> categories;   // ascending
  std::vector<std::vector<double>> theta;  // one H*W*V map per category
  double sigma = kDefaultSigma;
  double epsilon = kDefaultEpsilon;
};

LikelihoodModel fit_likelihood(std::span<const LabeledEncoding> support, double sigma = kDefaultSigma,
                               double epsilon = kDefaultEpsilon);

// sum_{p,v} log(b theta + (1 - b)(1 - theta)).
double log_likelihood(const VcEncoding& b, std::span<const double> theta);

// argmax over categories of log_likelihood; ties go to the smaller id.
std::uint32_t classify_lh(const VcEncoding& query, const LikelihoodModel& model);

// Per-position, per-VC log-likelihood contributions of `query` under every
// category, as CSV with header
//   category_id,row,col,vc,bit,theta,contribution
void write_likelihood_trace_csv(std::ostream& out, const VcEncoding& query, const LikelihoodModel& model);

}  // namespace vcshot
