#pragma once

/**
 * @file model.hpp
 * @brief Shared data model and quadtree tile geometry.
 *
 * Layer l of the atlas is a regular 2^l x 2^l grid over the unit square.
 * Tiles own the half-open area [ix*s, (ix+1)*s) x [iy*s, (iy+1)*s) with
 * s = 2^-l, except that the outer boundary at 1.0 is closed and belongs to
 * the last row/column.
 */

#include <array>
#include <cstdint>
#include <map>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

namespace aeye {

using ItemId = std::uint64_t;

/// Base class for all errors raised by the library. The exit code is what the
/// CLI reports when the error escapes a subcommand.
class Error : public std::runtime_error {
public:
  enum class Kind { contract, bad_input, missing_stage, validation, io };

  Error(Kind kind, const std::string &what) : std::runtime_error(what), kind_(kind) {}

  Kind kind() const noexcept { return kind_; }

  int exit_code() const noexcept {
    switch (kind_) {
    case Kind::contract:
      return 2;
    case Kind::missing_stage:
      return 3;
    case Kind::validation:
      return 4;
    case Kind::bad_input:
    case Kind::io:
      return 5;
    }
    return 5;
  }

private:
  Kind kind_;
};

inline Error contract_violation(const std::string &what) {
  return Error(Error::Kind::contract, what);
}
inline Error bad_input(const std::string &what) { return Error(Error::Kind::bad_input, what); }
inline Error io_error(const std::string &what) { return Error(Error::Kind::io, what); }
inline Error missing_stage(const std::string &what) {
  return Error(Error::Kind::missing_stage, what);
}

struct Point2 {
  double x = 0.0;
  double y = 0.0;

  friend bool operator==(const Point2 &, const Point2 &) = default;
};

inline double squared_distance(const Point2 &a, const Point2 &b) noexcept {
  const double dx = a.x - b.x;
  const double dy = a.y - b.y;
  return dx * dx + dy * dy;
}

struct EmbeddingRecord {
  ItemId id = 0;
  std::vector<float> vector;
  std::map<std::string, std::string> metadata;
  std::optional<std::string> caption;
};

/// An item's position normalized to the unit square.
struct ProjectedPoint {
  ItemId id = 0;
  double x = 0.0;
  double y = 0.0;

  Point2 pos() const noexcept { return {x, y}; }
};

struct TileKey {
  int layer = 0;
  std::int64_t ix = 0;
  std::int64_t iy = 0;

  friend auto operator<=>(const TileKey &, const TileKey &) = default;

  /// Number of tiles along one axis of this key's layer.
  std::int64_t grid_size() const noexcept { return std::int64_t{1} << layer; }

  double side() const noexcept { return 1.0 / static_cast<double>(grid_size()); }

  bool valid() const noexcept {
    return layer >= 0 && layer < 62 && ix >= 0 && iy >= 0 && ix < grid_size() &&
           iy < grid_size();
  }

  std::string to_string() const {
    return "(" + std::to_string(layer) + "," + std::to_string(ix) + "," + std::to_string(iy) + ")";
  }
};

namespace detail {

inline std::int64_t cell_index(double v, std::int64_t cells) noexcept {
  if (v >= 1.0) {
    return cells - 1;
  }
  if (v <= 0.0) {
    return 0;
  }
  auto i = static_cast<std::int64_t>(v * static_cast<double>(cells));
  return i < cells ? i : cells - 1;
}

} // namespace detail

/// The tile at `layer` containing (x, y). Coordinates exactly 1.0 fall into
/// the last tile of their axis.
inline TileKey tile_for_point(double x, double y, int layer) {
  if (layer < 0 || layer >= 62) {
    throw contract_violation("tile_for_point: layer out of range: " + std::to_string(layer));
  }
  if (!(x >= 0.0 && x <= 1.0 && y >= 0.0 && y <= 1.0)) {
    throw contract_violation("tile_for_point: point outside the unit square");
  }
  const std::int64_t cells = std::int64_t{1} << layer;
  return {layer, detail::cell_index(x, cells), detail::cell_index(y, cells)};
}

inline TileKey tile_for_point(const ProjectedPoint &p, int layer) {
  return tile_for_point(p.x, p.y, layer);
}

inline TileKey tile_for_point(const Point2 &p, int layer) { return tile_for_point(p.x, p.y, layer); }

/// Children in (ix, iy) order: (2ix,2iy), (2ix+1,2iy), (2ix,2iy+1), (2ix+1,2iy+1).
inline std::array<TileKey, 4> tile_children(const TileKey &t) {
  const int l = t.layer + 1;
  const std::int64_t x = 2 * t.ix;
  const std::int64_t y = 2 * t.iy;
  return {TileKey{l, x, y}, TileKey{l, x + 1, y}, TileKey{l, x, y + 1}, TileKey{l, x + 1, y + 1}};
}

inline TileKey tile_parent(const TileKey &t) {
  if (t.layer == 0) {
    throw contract_violation("tile_parent: layer 0 has no parent");
  }
  return {t.layer - 1, t.ix / 2, t.iy / 2};
}

struct TileRepresentative {
  ItemId id = 0;
  float x = 0.0f;
  float y = 0.0f;
  std::uint16_t introduced_at_layer = 0;

  friend bool operator==(const TileRepresentative &, const TileRepresentative &) = default;
};

struct Tile {
  TileKey key;
  /// Sorted by ascending id.
  std::vector<TileRepresentative> representatives;

  friend bool operator==(const Tile &, const Tile &) = default;
};

enum class ProjectionMethod { none, pca, external };

inline std::string to_string(ProjectionMethod m) {
  switch (m) {
  case ProjectionMethod::pca:
    return "pca";
  case ProjectionMethod::external:
    return "external";
  case ProjectionMethod::none:
    break;
  }
  return "none";
}

inline ProjectionMethod projection_method_from_string(const std::string &s) {
  if (s == "pca") {
    return ProjectionMethod::pca;
  }
  if (s == "external") {
    return ProjectionMethod::external;
  }
  if (s == "none" || s.empty()) {
    return ProjectionMethod::none;
  }
  throw bad_input("unknown projection method '" + s + "'");
}

struct Bounds {
  double min_x = 0.0;
  double min_y = 0.0;
  double max_x = 0.0;
  double max_y = 0.0;

  friend bool operator==(const Bounds &, const Bounds &) = default;
};

/// Global description of a dataset store. Fields are filled stage by stage.
struct AtlasManifest {
  std::string dataset_name;
  std::uint64_t item_count = 0;
  std::uint32_t dimension = 0;

  ProjectionMethod projection_method = ProjectionMethod::none;
  Bounds bounds_raw;
  bool projection_rank_deficient = false;

  bool tiled = false;
  std::uint32_t k = 0;
  int depth = 0;
  bool depth_capped = false;
  std::uint64_t tiling_seed = 0;
  std::vector<std::uint64_t> per_layer_nonempty_tile_counts;

  std::string index_kind; // "", "flat" or "hnsw"

  bool projected() const noexcept { return projection_method != ProjectionMethod::none; }
};

} // namespace aeye
