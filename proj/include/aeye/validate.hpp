#pragma once

// Invariant checker for a built pyramid against the positions it was built
// from. Every violation is reported with the tile it was found in.

#include "aeye/model.hpp"
#include "aeye/tiling.hpp"
#include "aeye/vector_index.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <random>
#include <set>
#include <span>
#include <string>
#include <vector>

namespace aeye {

struct ValidationReport {
  std::vector<std::string> violations;
  std::size_t tiles_checked = 0;

  bool ok() const noexcept { return violations.empty(); }

  void fail(std::string msg) { violations.push_back(std::move(msg)); }

  void merge(const ValidationReport &other) {
    violations.insert(violations.end(), other.violations.begin(), other.violations.end());
    tiles_checked += other.tiles_checked;
  }
};

/// `positions[id]` is item id's unit-square position.
inline ValidationReport validate_pyramid(const TilePyramid &p, std::span<const Point2> positions) {
  ValidationReport report;
  const std::uint64_t n = positions.size();
  if (p.layers.size() != static_cast<std::size_t>(p.depth) + 1) {
    report.fail("pyramid has " + std::to_string(p.layers.size()) + " layers, expected depth+1 = " +
                std::to_string(p.depth + 1));
    return report;
  }

  // id -> first layer it appears on
  std::map<ItemId, int> first_layer;
  std::set<ItemId> previous;
  for (int l = 0; l <= p.depth; ++l) {
    std::set<ItemId> current;
    for (const auto &[key, tile] : p.layers[l]) {
      ++report.tiles_checked;
      const std::string where = "tile " + key.to_string();
      if (key.layer != l || !key.valid() || tile.key != key) {
        report.fail(where + ": key does not belong to layer " + std::to_string(l));
        continue;
      }
      if (tile.representatives.empty()) {
        report.fail(where + ": empty tile stored");
      }
      if (l < p.depth && tile.representatives.size() > p.k) {
        report.fail(where + ": " + std::to_string(tile.representatives.size()) +
                    " representatives exceed k=" + std::to_string(p.k));
      }
      std::set<ItemId> in_tile;
      std::size_t inherited = 0;
      for (const auto &r : tile.representatives) {
        const std::string item = where + ": item " + std::to_string(r.id);
        if (!in_tile.insert(r.id).second) {
          report.fail(item + " listed twice");
          continue;
        }
        if (!current.insert(r.id).second) {
          report.fail(item + " appears in more than one tile of layer " + std::to_string(l));
        }
        if (r.id >= n) {
          report.fail(item + " is not a dataset item (n=" + std::to_string(n) + ")");
          continue;
        }
        const auto &pos = positions[r.id];
        if (r.x != static_cast<float>(pos.x) || r.y != static_cast<float>(pos.y)) {
          report.fail(item + " position differs from the dataset position");
        }
        if (!(r.x >= 0.0f && r.x <= 1.0f && r.y >= 0.0f && r.y <= 1.0f) ||
            tile_for_point(r.x, r.y, l) != key) {
          report.fail(item + " lies outside the tile area");
        }
        if (r.introduced_at_layer > l) {
          report.fail(item + " introduced at layer " + std::to_string(r.introduced_at_layer) +
                      " after its tile's layer");
        }
        if (r.introduced_at_layer < l) {
          ++inherited;
        }
        const auto it = first_layer.emplace(r.id, l).first;
        if (r.introduced_at_layer != it->second) {
          report.fail(item + " introduced_at_layer=" + std::to_string(r.introduced_at_layer) +
                      " but first appears on layer " + std::to_string(it->second));
        }
      }
      if (inherited > p.k) {
        report.fail(where + ": " + std::to_string(inherited) + " inherited representatives exceed k=" +
                    std::to_string(p.k));
      }
    }
    for (ItemId id : previous) {
      if (!current.contains(id)) {
        report.fail("layer " + std::to_string(l) + ": representative " + std::to_string(id) +
                    " from a coarser layer disappeared");
      }
    }
    previous = std::move(current);
  }

  // Completeness of the final layer.
  if (previous.size() != n) {
    report.fail("layer " + std::to_string(p.depth) + " holds " + std::to_string(previous.size()) +
                " items, expected all " + std::to_string(n));
  }
  if (!p.depth_capped) {
    for (const auto &[key, tile] : p.layers[p.depth]) {
      if (tile.representatives.size() > p.k) {
        report.fail("tile " + key.to_string() + ": final layer tile exceeds k without the depth cap");
      }
    }
  }
  if (p.depth > 0) {
    bool any_over = false;
    for (const auto &entry : p.layers[p.depth - 1]) {
      const TileKey &key = entry.first;
      std::size_t count = 0;
      for (const auto &child : tile_children(key)) {
        if (const Tile *t = p.find(child)) {
          count += t->representatives.size();
        }
      }
      any_over = any_over || count > p.k;
    }
    if (!any_over) {
      report.fail("depth " + std::to_string(p.depth) + " is not minimal: every layer " +
                  std::to_string(p.depth - 1) + " tile already holds <= k items");
    }
  }
  return report;
}

struct IndexCheckConfig {
  std::size_t samples = 64;
  std::size_t n = 10;
  std::uint64_t seed = 1;
  /// Minimum mean recall@n of an approximate index against exact search.
  double min_recall = 0.9;
};

/// Spot checks `index` on sampled items: reported similarities equal the
/// exact cosine, results are ordered, a flat index matches exact search
/// exactly and an approximate one reaches cfg.min_recall.
inline ValidationReport validate_index(const VectorIndex &index, const IndexCheckConfig &cfg = {}) {
  ValidationReport report;
  const auto &vectors = index.vectors();
  const FlatIndex exact(std::shared_ptr<const VectorMatrix>(&vectors, [](const VectorMatrix *) {}));
  std::mt19937_64 rng(cfg.seed);
  const std::size_t samples = std::min<std::uint64_t>(cfg.samples, vectors.rows);
  double recall = 0.0;
  for (std::size_t s = 0; s < samples; ++s) {
    const ItemId id = samples == vectors.rows ? s : rng() % vectors.rows;
    const auto q = vectors.row(id);
    const auto got = index.query(q, cfg.n);
    const auto want = exact.query(q, cfg.n);
    const std::string where = to_string(index.kind()) + " index, query item " + std::to_string(id);
    const auto qn = normalized_query(q, vectors.dim);
    for (std::size_t i = 0; i < got.entries.size(); ++i) {
      const auto &h = got.entries[i];
      if (h.id >= vectors.rows) {
        report.fail(where + ": result id " + std::to_string(h.id) + " out of range");
        continue;
      }
      if (std::abs(h.similarity - dot_exact(qn, vectors.row(h.id))) > 1e-6) {
        report.fail(where + ": similarity of item " + std::to_string(h.id) + " differs from the exact cosine");
      }
      if (i > 0 && ranks_before(h, got.entries[i - 1])) {
        report.fail(where + ": results out of order at rank " + std::to_string(i));
      }
    }
    if (got.entries.size() != want.entries.size()) {
      report.fail(where + ": returned " + std::to_string(got.entries.size()) + " results, expected " +
                  std::to_string(want.entries.size()));
      continue;
    }
    std::size_t hits = 0;
    for (const auto &h : got.entries) {
      hits += std::any_of(want.entries.begin(), want.entries.end(), [&](const SearchHit &w) { return w.id == h.id; });
    }
    recall += want.entries.empty() ? 1.0 : static_cast<double>(hits) / static_cast<double>(want.entries.size());
    if (index.kind() == IndexKind::flat) {
      for (std::size_t i = 0; i < got.entries.size(); ++i) {
        if (got.entries[i].id != want.entries[i].id) {
          report.fail(where + ": rank " + std::to_string(i) + " differs from exact search");
          break;
        }
      }
    }
  }
  if (samples > 0 && recall / static_cast<double>(samples) < cfg.min_recall) {
    report.fail(to_string(index.kind()) + " index: spot-check recall@" + std::to_string(cfg.n) + " = " +
                std::to_string(recall / static_cast<double>(samples)) + " below " + std::to_string(cfg.min_recall));
  }
  return report;
}

} // namespace aeye
