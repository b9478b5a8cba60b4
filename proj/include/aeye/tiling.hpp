#pragma once

/**
 * @file tiling.hpp
 * @brief Layered tile pyramid of representatives.
 *
 * Layers are processed top down. For every non-empty tile of layer l the
 * representatives chosen on coarser layers that fall inside the tile become
 * fixed centers of a k-means run with k centers in total; the points
 * nearest to the free centers join them as the tile's new representatives.
 * Layer `depth` is the first layer whose tiles all hold at most k points and
 * lists every item.
 *
 * Positions are quantized to float32 before any work is done, which is the
 * precision tile records are stored in.
 */

#include "aeye/binary_io.hpp"
#include "aeye/hashing.hpp"
#include "aeye/kmeans.hpp"
#include "aeye/model.hpp"
#include "aeye/parallel.hpp"
#include "aeye/store.hpp"

#include <algorithm>
#include <cstdint>
#include <limits>
#include <map>
#include <set>
#include <span>
#include <string>
#include <vector>

namespace aeye {

struct TilingConfig {
  std::uint32_t k = 25;
  int max_iterations = 50;
  double convergence_eps = 1e-6;
  std::uint64_t rng_seed = 0;
  int max_depth_cap = 16;
  unsigned threads = default_thread_count();

  KMeansConfig kmeans() const { return {max_iterations, convergence_eps}; }

  void check() const {
    if (k < 1) {
      throw contract_violation("tiling: k must be >= 1");
    }
    if (max_depth_cap < 1 || max_depth_cap > 30) {
      throw contract_violation("tiling: max_depth_cap must be in [1, 30]");
    }
    if (max_iterations < 0) {
      throw contract_violation("tiling: max_iterations must be >= 0");
    }
  }
};

struct DepthResult {
  int depth = 0;
  /// True when max_depth_cap was reached before every tile held <= k points.
  bool capped = false;
};

using TileLayer = std::map<TileKey, Tile>;

struct TilePyramid {
  std::uint32_t k = 0;
  int depth = 0;
  bool depth_capped = false;
  std::uint64_t seed = 0;
  /// layers[l] holds the non-empty tiles of layer l, l = 0..depth.
  std::vector<TileLayer> layers;

  std::vector<std::uint64_t> nonempty_tile_counts() const {
    std::vector<std::uint64_t> counts;
    for (const auto &layer : layers) {
      counts.push_back(layer.size());
    }
    return counts;
  }

  const Tile *find(const TileKey &key) const {
    if (key.layer < 0 || key.layer >= static_cast<int>(layers.size())) {
      return nullptr;
    }
    const auto it = layers[key.layer].find(key);
    return it == layers[key.layer].end() ? nullptr : &it->second;
  }
};

namespace detail {

// The volatile store keeps GCC 11's SLP vectorizer from folding the round trip away.
inline double to_f32(double v) {
  volatile float f = static_cast<float>(v);
  return static_cast<double>(f);
}

inline std::uint64_t tile_code(const TileKey &t) {
  return (static_cast<std::uint64_t>(t.ix) << 32) | static_cast<std::uint64_t>(t.iy);
}

/// Size of the most crowded tile at `layer`.
inline std::size_t max_tile_occupancy(std::span<const Point2> pts, int layer) {
  std::vector<std::uint64_t> codes(pts.size());
  for (std::size_t i = 0; i < pts.size(); ++i) {
    codes[i] = tile_code(tile_for_point(pts[i], layer));
  }
  std::sort(codes.begin(), codes.end());
  std::size_t best = 0;
  for (std::size_t i = 0; i < codes.size();) {
    std::size_t j = i;
    while (j < codes.size() && codes[j] == codes[i]) {
      ++j;
    }
    best = std::max(best, j - i);
    i = j;
  }
  return best;
}

inline std::uint64_t tile_seed(std::uint64_t seed, const TileKey &t) {
  std::uint64_t h = mix64(seed);
  h = mix64(h ^ static_cast<std::uint64_t>(t.layer));
  h = mix64(h ^ static_cast<std::uint64_t>(t.ix));
  return mix64(h ^ static_cast<std::uint64_t>(t.iy));
}

} // namespace detail

inline DepthResult compute_depth(std::span<const Point2> positions, const TilingConfig &cfg) {
  cfg.check();
  if (positions.empty()) {
    throw contract_violation("compute_depth: no points");
  }
  for (int d = 0; d < cfg.max_depth_cap; ++d) {
    if (detail::max_tile_occupancy(positions, d) <= cfg.k) {
      return {d, false};
    }
  }
  if (detail::max_tile_occupancy(positions, cfg.max_depth_cap) <= cfg.k) {
    return {cfg.max_depth_cap, false};
  }
  return {cfg.max_depth_cap, true};
}

inline DepthResult compute_depth(std::span<const ProjectedPoint> points, const TilingConfig &cfg) {
  std::vector<Point2> pos(points.size());
  for (std::size_t i = 0; i < points.size(); ++i) {
    pos[i] = points[i].pos();
  }
  return compute_depth(pos, cfg);
}

/// Representatives of one tile: the inherited ids plus, for every free
/// center, the tile point nearest to it (ties to the lowest id). Returned
/// sorted and without duplicates.
inline std::vector<ItemId> select_representatives(std::span<const ProjectedPoint> tile_points,
                                                  std::span<const Point2> free_centers,
                                                  std::span<const ItemId> inherited) {
  std::set<ItemId> reps(inherited.begin(), inherited.end());
  for (const auto &c : free_centers) {
    double best = std::numeric_limits<double>::infinity();
    ItemId best_id = std::numeric_limits<ItemId>::max();
    for (const auto &p : tile_points) {
      const double d = squared_distance(p.pos(), c);
      if (d < best || (d == best && p.id < best_id)) {
        best = d;
        best_id = p.id;
      }
    }
    if (best_id != std::numeric_limits<ItemId>::max()) {
      reps.insert(best_id);
    }
  }
  return {reps.begin(), reps.end()};
}

namespace detail {

struct TileJob {
  TileKey key;
  std::vector<ProjectedPoint> points;
};

/// Groups points by their tile at `layer`, in TileKey order.
inline std::vector<TileJob> group_by_tile(std::span<const ProjectedPoint> points, int layer) {
  std::map<TileKey, std::vector<ProjectedPoint>> groups;
  for (const auto &p : points) {
    groups[tile_for_point(p, layer)].push_back(p);
  }
  std::vector<TileJob> jobs;
  jobs.reserve(groups.size());
  for (auto &[key, pts] : groups) {
    jobs.push_back({key, std::move(pts)});
  }
  return jobs;
}

inline Tile build_tile(const TileJob &job, const Tile *parent, const TilingConfig &cfg) {
  // Inherited: the parent's cumulative representatives located in this tile.
  std::map<ItemId, std::uint16_t> inherited;
  std::vector<ItemId> inherited_ids;
  std::vector<Point2> fixed;
  if (parent != nullptr) {
    for (const auto &r : parent->representatives) {
      if (tile_for_point(r.x, r.y, job.key.layer) == job.key) {
        inherited[r.id] = r.introduced_at_layer;
        inherited_ids.push_back(r.id);
        fixed.push_back({r.x, r.y});
      }
    }
  }

  std::vector<ItemId> ids;
  if (job.points.size() <= cfg.k) {
    for (const auto &p : job.points) {
      ids.push_back(p.id);
    }
  } else {
    std::vector<Point2> pos(job.points.size());
    for (std::size_t i = 0; i < pos.size(); ++i) {
      pos[i] = job.points[i].pos();
    }
    const auto km = constrained_kmeans(pos, fixed, cfg.k, cfg.kmeans(), tile_seed(cfg.rng_seed, job.key));
    ids = select_representatives(job.points, km.free_centers, inherited_ids);
  }

  std::map<ItemId, const ProjectedPoint *> by_id;
  for (const auto &p : job.points) {
    by_id[p.id] = &p;
  }
  Tile tile{job.key, {}};
  std::sort(ids.begin(), ids.end());
  for (ItemId id : ids) {
    const auto *p = by_id.at(id);
    const auto it = inherited.find(id);
    const auto introduced =
        it != inherited.end() ? it->second : static_cast<std::uint16_t>(job.key.layer);
    tile.representatives.push_back(
        {id, static_cast<float>(p->x), static_cast<float>(p->y), introduced});
  }
  return tile;
}

} // namespace detail

/// Builds the full pyramid. Tiles of one layer are processed in parallel;
/// each tile's k-means seed is derived from (cfg.rng_seed, tile key), so the
/// result does not depend on scheduling.
inline TilePyramid build_pyramid(std::span<const ProjectedPoint> input, const TilingConfig &cfg) {
  cfg.check();
  if (input.empty()) {
    throw contract_violation("build_pyramid: no points");
  }
  std::vector<ProjectedPoint> points(input.begin(), input.end());
  std::set<ItemId> seen;
  for (auto &p : points) {
    if (!(p.x >= 0.0 && p.x <= 1.0 && p.y >= 0.0 && p.y <= 1.0)) {
      throw contract_violation("build_pyramid: item " + std::to_string(p.id) + " outside the unit square");
    }
    if (!seen.insert(p.id).second) {
      throw contract_violation("build_pyramid: duplicate item id " + std::to_string(p.id));
    }
    p.x = detail::to_f32(p.x);
    p.y = detail::to_f32(p.y);
  }

  const DepthResult depth = compute_depth(std::span<const ProjectedPoint>(points), cfg);
  TilePyramid pyramid;
  pyramid.k = cfg.k;
  pyramid.depth = depth.depth;
  pyramid.depth_capped = depth.capped;
  pyramid.seed = cfg.rng_seed;
  pyramid.layers.resize(static_cast<std::size_t>(depth.depth) + 1);

  for (int l = 0; l < depth.depth; ++l) {
    const auto jobs = detail::group_by_tile(points, l);
    std::vector<Tile> built(jobs.size());
    const TileLayer *parent_layer = l > 0 ? &pyramid.layers[l - 1] : nullptr;
    parallel_for(
        jobs.size(),
        [&](std::size_t i) {
          const Tile *parent = nullptr;
          if (parent_layer != nullptr) {
            parent = &parent_layer->at(tile_parent(jobs[i].key));
          }
          built[i] = detail::build_tile(jobs[i], parent, cfg);
        },
        cfg.threads);
    for (auto &t : built) {
      pyramid.layers[l].emplace(t.key, std::move(t));
    }
  }

  // Final layer: every point, annotated with the layer it first appeared on.
  std::map<ItemId, std::uint16_t> introduced;
  if (depth.depth > 0) {
    for (const auto &[key, tile] : pyramid.layers[depth.depth - 1]) {
      for (const auto &r : tile.representatives) {
        introduced[r.id] = r.introduced_at_layer;
      }
    }
  }
  for (auto &job : detail::group_by_tile(points, depth.depth)) {
    Tile tile{job.key, {}};
    std::sort(job.points.begin(), job.points.end(),
              [](const ProjectedPoint &a, const ProjectedPoint &b) { return a.id < b.id; });
    for (const auto &p : job.points) {
      const auto it = introduced.find(p.id);
      const auto layer = it != introduced.end() ? it->second : static_cast<std::uint16_t>(depth.depth);
      tile.representatives.push_back({p.id, static_cast<float>(p.x), static_cast<float>(p.y), layer});
    }
    pyramid.layers[depth.depth].emplace(job.key, std::move(tile));
  }
  return pyramid;
}

// ---------------------------------------------------------------------------
// Persistence: tiles/<layer>/tiles.bin holds the layer's tiles in key order,
// each as  ix u32 | iy u32 | count u32 | count * (id u64, x f32, y f32,
// introduced_at_layer u16).

inline std::string encode_tile(const Tile &t) {
  ByteWriter w;
  w.put(static_cast<std::uint32_t>(t.representatives.size()));
  for (const auto &r : t.representatives) {
    w.put(r.id);
    w.put(r.x);
    w.put(r.y);
    w.put(r.introduced_at_layer);
  }
  return w.take();
}

inline std::string encode_layer(const TileLayer &layer) {
  ByteWriter w;
  for (const auto &[key, tile] : layer) {
    w.put(static_cast<std::uint32_t>(key.ix));
    w.put(static_cast<std::uint32_t>(key.iy));
    w.put_bytes(encode_tile(tile));
  }
  return w.take();
}

inline TileLayer decode_layer(std::string_view bytes, int layer, const std::string &source) {
  TileLayer out;
  ByteReader r(bytes, source);
  while (!r.done()) {
    TileKey key{layer, r.get<std::uint32_t>(), r.get<std::uint32_t>()};
    if (!key.valid()) {
      throw bad_input(source + ": tile " + key.to_string() + " outside the layer grid");
    }
    Tile tile{key, {}};
    const auto count = r.get<std::uint32_t>();
    if (count > r.remaining() / 18) {
      throw bad_input(source + ": tile " + key.to_string() + " truncated");
    }
    tile.representatives.reserve(count);
    for (std::uint32_t i = 0; i < count; ++i) {
      TileRepresentative rep;
      rep.id = r.get<std::uint64_t>();
      rep.x = r.get<float>();
      rep.y = r.get<float>();
      rep.introduced_at_layer = r.get<std::uint16_t>();
      tile.representatives.push_back(rep);
    }
    if (!out.emplace(key, std::move(tile)).second) {
      throw bad_input(source + ": tile " + key.to_string() + " stored twice");
    }
  }
  return out;
}

inline fs::path layer_file(const fs::path &root, int layer) {
  return root / store_files::tiles_dir / std::to_string(layer) / "tiles.bin";
}

/// Writes the pyramid into the store and records it in the manifest.
inline void save_pyramid(const fs::path &root, const TilePyramid &p) {
  AtlasManifest m = read_manifest(root);
  fs::remove_all(root / store_files::tiles_dir);
  for (int l = 0; l <= p.depth; ++l) {
    write_file(layer_file(root, l), encode_layer(p.layers[l]));
  }
  m.tiled = true;
  m.k = p.k;
  m.depth = p.depth;
  m.depth_capped = p.depth_capped;
  m.tiling_seed = p.seed;
  m.per_layer_nonempty_tile_counts = p.nonempty_tile_counts();
  write_manifest(root, m);
}

inline TilePyramid load_pyramid(const fs::path &root, const AtlasManifest &m) {
  if (!m.tiled) {
    throw missing_stage(root.string() + ": no tile pyramid; run tile first");
  }
  TilePyramid p;
  p.k = m.k;
  p.depth = m.depth;
  p.depth_capped = m.depth_capped;
  p.seed = m.tiling_seed;
  for (int l = 0; l <= m.depth; ++l) {
    const auto path = layer_file(root, l);
    if (!fs::exists(path)) {
      throw missing_stage(path.string() + " missing; run tile again");
    }
    p.layers.push_back(decode_layer(read_file(path), l, path.string()));
  }
  return p;
}

inline TilePyramid load_pyramid(const fs::path &root) { return load_pyramid(root, read_manifest(root)); }

/// Digest of the pyramid contents (tile records plus k, depth and seed).
inline std::string pyramid_digest(const TilePyramid &p) {
  Sha256 h;
  h.update("k=" + std::to_string(p.k) + ";depth=" + std::to_string(p.depth) +
           ";capped=" + std::to_string(p.depth_capped) + ";seed=" + std::to_string(p.seed) + ";");
  for (const auto &layer : p.layers) {
    const auto bytes = encode_layer(layer);
    h.update(std::to_string(bytes.size()) + ":");
    h.update(bytes);
  }
  return h.hex();
}

} // namespace aeye
