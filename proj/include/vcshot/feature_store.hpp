#pragma once

// Feature-grid container (VCFS) and pooled-vector access.
//
// VCFS layout, all integers little-endian:
//   "VCFS" u16 version(=1)
//   u16 len + UTF-8 layer_name
//   u32 category count, then per category: u32 id, u16 len, UTF-8 name
//   u32 grid count, then per grid:
//     u16 len + UTF-8 image_id, u32 category_id, u32 H, u32 W, u32 C,
//     i32 rf_offset, u32 rf_stride, u32 rf_size,
//     H*W*C f32, row-major over positions, channels contiguous.

#include <cstdint>
#include <filesystem>
#include <functional>
#include <iosfwd>
#include <map>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "vcshot/error.hpp"

namespace vcshot {

inline constexpr std::uint16_t kStoreVersion = 1;

// Positions whose feature norm falls below this are treated as degenerate.
inline constexpr double kMinFeatureNorm = 1e-8;

struct FeatureGrid {
  std::string image_id;
  std::uint32_t category_id = 0;
  std::uint32_t height = 0;
  std::uint32_t width = 0;
  std::uint32_t channels = 0;
  std::int32_t rf_offset = 0;   // input-pixel centre of lattice cell (0, 0)
  std::uint32_t rf_stride = 1;  // input pixels per lattice step
  std::uint32_t rf_size = 1;    // receptive-field side in input pixels
  std::vector<float> data;      // height * width * channels

  std::size_t positions() const { return std::size_t{height} * width; }

  std::span<const float> at(std::size_t position) const {
    return {data.data() + position * channels, channels};
  }
  std::span<const float> at(std::size_t row, std::size_t col) const {
    return at(row * width + col);
  }

  // Input-pixel centre of a lattice cell (affine receptive-field map).
  std::int64_t input_coord(std::size_t lattice_index) const {
    return std::int64_t{rf_offset} + std::int64_t{rf_stride} * static_cast<std::int64_t>(lattice_index);
  }

  bool operator==(const FeatureGrid&) const = default;
};

struct FeatureStore {
  std::uint16_t version = kStoreVersion;
  std::string layer_name;
  std::map<std::uint32_t, std::string> categories;
  std::vector<FeatureGrid> grids;

  bool operator==(const FeatureStore&) const = default;
};

enum class StoreErrc {
  kBadMagic,
  kUnsupportedVersion,
  kTruncatedPayload,
  kTrailingBytes,
  kNonFiniteData,
  kDuplicateImageId,
  kUnknownCategory,
  kInvalidShape,
  kStringTooLong,
  kIo,
};

std::string_view to_string(StoreErrc code);

class StoreError : public Error {
 public:
  // offset is the byte position in the stream where the problem was found,
  // or -1 for in-memory validation.
  StoreError(StoreErrc code, std::string detail, std::int64_t offset = -1);

  StoreErrc code() const { return code_; }
  std::int64_t offset() const { return offset_; }

 private:
  StoreErrc code_;
  std::int64_t offset_;
};

// Throws StoreError describing the first invariant violation found.
void validate_store(const FeatureStore& store);

std::vector<std::uint8_t> serialize_store(const FeatureStore& store);
FeatureStore parse_store(std::span<const std::uint8_t> bytes);

void write_store(const FeatureStore& store, std::ostream& out);
FeatureStore read_store(std::istream& in);

void save_store(const FeatureStore& store, const std::filesystem::path& path);
FeatureStore load_store(const std::filesystem::path& path);

// Row-major set of unit vectors of a common dimension.
struct VectorSet {
  std::size_t dim = 0;
  std::vector<double> values;

  std::size_t size() const { return dim == 0 ? 0 : values.size() / dim; }
  std::span<const double> row(std::size_t i) const { return {values.data() + i * dim, dim}; }
};

struct VectorSource {
  std::size_t grid_index;
  std::uint32_t row;
  std::uint32_t col;
};

struct PooledVectors {
  VectorSet vectors;
  std::vector<VectorSource> sources;  // parallel to vectors
  std::size_t excluded = 0;           // positions dropped for near-zero norm
};

// L2-normalised feature vectors of the selected grids, in store order.
// Throws ShapeMismatch if the selected grids disagree on C.
PooledVectors collect_vectors(const FeatureStore& store,
                              const std::function<bool(std::string_view)>& image_filter);
PooledVectors collect_vectors(const FeatureStore& store, std::span<const std::size_t> grid_indices);

}  // namespace vcshot
