#include "vcshot/feature_store.hpp"

#include <cmath>
#include <fstream>
#include <iterator>
#include <limits>
#include <numeric>
#include <sstream>
#include <unordered_set>

#include "vcshot/detail/binary_io.hpp"

namespace vcshot {

namespace {

constexpr char kMagic[4] = {'V', 'C', 'F', 'S'};

std::string format_message(StoreErrc code, const std::string& detail, std::int64_t offset) {
  std::ostringstream os;
  os << to_string(code);
  if (offset >= 0) os << " at offset " << offset;
  if (!detail.empty()) os << ": " << detail;
  return os.str();
}

void check_string(std::string_view what, const std::string& value) {
  if (value.size() > std::numeric_limits<std::uint16_t>::max()) {
    throw StoreError(StoreErrc::kStringTooLong, std::string(what) + " exceeds 65535 bytes");
  }
}

void validate_grid_shape(const FeatureGrid& grid, std::int64_t offset) {
  if (grid.height == 0 || grid.width == 0 || grid.channels == 0) {
    throw StoreError(StoreErrc::kInvalidShape, "grid '" + grid.image_id + "' has a zero dimension", offset);
  }
  if (grid.rf_stride == 0 || grid.rf_size == 0) {
    throw StoreError(StoreErrc::kInvalidShape, "grid '" + grid.image_id + "' has zero rf_stride or rf_size",
                     offset);
  }
}

std::size_t element_count(const FeatureGrid& grid) {
  return std::size_t{grid.height} * grid.width * grid.channels;
}

}  // namespace

std::string_view to_string(StoreErrc code) {
  switch (code) {
    case StoreErrc::kBadMagic: return "bad magic";
    case StoreErrc::kUnsupportedVersion: return "unsupported version";
    case StoreErrc::kTruncatedPayload: return "truncated payload";
    case StoreErrc::kTrailingBytes: return "trailing bytes";
    case StoreErrc::kNonFiniteData: return "non-finite data";
    case StoreErrc::kDuplicateImageId: return "duplicate image_id";
    case StoreErrc::kUnknownCategory: return "unknown category_id";
    case StoreErrc::kInvalidShape: return "invalid shape";
    case StoreErrc::kStringTooLong: return "string too long";
    case StoreErrc::kIo: return "i/o failure";
  }
  return "unknown store error";
}

StoreError::StoreError(StoreErrc code, std::string detail, std::int64_t offset)
    : Error(format_message(code, detail, offset)), code_(code), offset_(offset) {}

void validate_store(const FeatureStore& store) {
  if (store.version != kStoreVersion) {
    throw StoreError(StoreErrc::kUnsupportedVersion, "version " + std::to_string(store.version));
  }
  check_string("layer_name", store.layer_name);
  for (const auto& [id, name] : store.categories) check_string("category name", name);

  std::unordered_set<std::string_view> seen;
  for (const auto& grid : store.grids) {
    check_string("image_id", grid.image_id);
    validate_grid_shape(grid, -1);
    if (grid.data.size() != element_count(grid)) {
      throw StoreError(StoreErrc::kInvalidShape, "grid '" + grid.image_id + "' data length " +
                                                     std::to_string(grid.data.size()) + " != H*W*C");
    }
    if (!store.categories.contains(grid.category_id)) {
      throw StoreError(StoreErrc::kUnknownCategory, "grid '" + grid.image_id + "' references category " +
                                                        std::to_string(grid.category_id));
    }
    if (!seen.insert(grid.image_id).second) {
      throw StoreError(StoreErrc::kDuplicateImageId, grid.image_id);
    }
    for (float x : grid.data) {
      if (!std::isfinite(x)) throw StoreError(StoreErrc::kNonFiniteData, "grid '" + grid.image_id + "'");
    }
  }
}

std::vector<std::uint8_t> serialize_store(const FeatureStore& store) {
  validate_store(store);

  detail::ByteWriter w;
  w.put_bytes({kMagic, 4});
  w.put(store.version);
  w.put(static_cast<std::uint16_t>(store.layer_name.size()));
  w.put_bytes(store.layer_name);

  w.put(static_cast<std::uint32_t>(store.categories.size()));
  for (const auto& [id, name] : store.categories) {
    w.put(id);
    w.put(static_cast<std::uint16_t>(name.size()));
    w.put_bytes(name);
  }

  w.put(static_cast<std::uint32_t>(store.grids.size()));
  for (const auto& g : store.grids) {
    w.put(static_cast<std::uint16_t>(g.image_id.size()));
    w.put_bytes(g.image_id);
    w.put(g.category_id);
    w.put(g.height);
    w.put(g.width);
    w.put(g.channels);
    w.put(g.rf_offset);
    w.put(g.rf_stride);
    w.put(g.rf_size);
    for (float x : g.data) w.put(x);
  }
  return std::move(w.bytes());
}

FeatureStore parse_store(std::span<const std::uint8_t> bytes) {
  auto truncated = [](std::size_t offset) -> void {
    throw StoreError(StoreErrc::kTruncatedPayload, "", static_cast<std::int64_t>(offset));
  };
  detail::ByteReader r(bytes, truncated);

  if (bytes.size() < 4 || std::memcmp(bytes.data(), kMagic, 4) != 0) {
    throw StoreError(StoreErrc::kBadMagic, "expected \"VCFS\"", 0);
  }
  r.get_span(4);

  FeatureStore store;
  const std::size_t version_offset = r.offset();
  store.version = r.get<std::uint16_t>();
  if (store.version != kStoreVersion) {
    throw StoreError(StoreErrc::kUnsupportedVersion, "version " + std::to_string(store.version),
                     static_cast<std::int64_t>(version_offset));
  }
  store.layer_name = r.get_string(r.get<std::uint16_t>());

  const auto category_count = r.get<std::uint32_t>();
  for (std::uint32_t i = 0; i < category_count; ++i) {
    const auto id = r.get<std::uint32_t>();
    store.categories[id] = r.get_string(r.get<std::uint16_t>());
  }

  const auto grid_count = r.get<std::uint32_t>();
  std::unordered_set<std::string> seen;
  for (std::uint32_t i = 0; i < grid_count; ++i) {
    const auto grid_offset = static_cast<std::int64_t>(r.offset());
    FeatureGrid g;
    g.image_id = r.get_string(r.get<std::uint16_t>());
    g.category_id = r.get<std::uint32_t>();
    g.height = r.get<std::uint32_t>();
    g.width = r.get<std::uint32_t>();
    g.channels = r.get<std::uint32_t>();
    g.rf_offset = r.get<std::int32_t>();
    g.rf_stride = r.get<std::uint32_t>();
    g.rf_size = r.get<std::uint32_t>();
    validate_grid_shape(g, grid_offset);

    if (!store.categories.contains(g.category_id)) {
      throw StoreError(StoreErrc::kUnknownCategory,
                       "grid '" + g.image_id + "' references category " + std::to_string(g.category_id),
                       grid_offset);
    }
    if (!seen.insert(g.image_id).second) {
      throw StoreError(StoreErrc::kDuplicateImageId, g.image_id, grid_offset);
    }

    // Checked before allocating so a corrupt header cannot request gigabytes.
    const std::size_t count = element_count(g);
    if (count > r.remaining() / sizeof(float)) truncated(r.offset() + (r.remaining() / 4) * 4);
    const std::size_t data_offset = r.offset();
    g.data.resize(count);
    for (std::size_t k = 0; k < count; ++k) {
      g.data[k] = r.get<float>();
      if (!std::isfinite(g.data[k])) {
        throw StoreError(StoreErrc::kNonFiniteData, "grid '" + g.image_id + "'",
                         static_cast<std::int64_t>(data_offset + 4 * k));
      }
    }
    store.grids.push_back(std::move(g));
  }

  if (r.remaining() != 0) {
    throw StoreError(StoreErrc::kTrailingBytes, std::to_string(r.remaining()) + " unread bytes",
                     static_cast<std::int64_t>(r.offset()));
  }
  return store;
}

void write_store(const FeatureStore& store, std::ostream& out) {
  const auto bytes = serialize_store(store);
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw StoreError(StoreErrc::kIo, "write failed");
}

FeatureStore read_store(std::istream& in) {
  std::vector<std::uint8_t> bytes{std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
  if (in.bad()) throw StoreError(StoreErrc::kIo, "read failed");
  return parse_store(bytes);
}

void save_store(const FeatureStore& store, const std::filesystem::path& path) {
  const auto bytes = serialize_store(store);
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw StoreError(StoreErrc::kIo, "cannot open " + path.string() + " for writing");
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw StoreError(StoreErrc::kIo, "write to " + path.string() + " failed");
}

FeatureStore load_store(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw StoreError(StoreErrc::kIo, "cannot open " + path.string());
  return read_store(in);
}

PooledVectors collect_vectors(const FeatureStore& store, std::span<const std::size_t> grid_indices) {
  PooledVectors out;
  for (std::size_t gi : grid_indices) {
    const FeatureGrid& grid = store.grids.at(gi);
    if (out.vectors.dim == 0) {
      out.vectors.dim = grid.channels;
    } else if (out.vectors.dim != grid.channels) {
      throw ShapeMismatch("collect_vectors: grid '" + grid.image_id + "' has C=" +
                          std::to_string(grid.channels) + ", expected " + std::to_string(out.vectors.dim));
    }
  }

  for (std::size_t gi : grid_indices) {
    const FeatureGrid& grid = store.grids[gi];
    for (std::uint32_t row = 0; row < grid.height; ++row) {
      for (std::uint32_t col = 0; col < grid.width; ++col) {
        const auto f = grid.at(row, col);
        double sq = 0.0;
        for (float x : f) sq += double{x} * double{x};
        const double norm = std::sqrt(sq);
        if (norm < kMinFeatureNorm) {
          ++out.excluded;
          continue;
        }
        for (float x : f) out.vectors.values.push_back(double{x} / norm);
        out.sources.push_back({gi, row, col});
      }
    }
  }
  return out;
}

PooledVectors collect_vectors(const FeatureStore& store,
                              const std::function<bool(std::string_view)>& image_filter) {
  std::vector<std::size_t> selected;
  for (std::size_t i = 0; i < store.grids.size(); ++i) {
    if (!image_filter || image_filter(store.grids[i].image_id)) selected.push_back(i);
  }
  return collect_vectors(store, selected);
}

}  // namespace vcshot
