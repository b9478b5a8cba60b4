#pragma once

/**
 * @file vector_index.hpp
 * @brief Top-n cosine similarity search over unit-normalized embeddings.
 *
 * Two index kinds share one interface:
 *  - FlatIndex scans every vector; it is exact.
 *  - HnswIndex is a hierarchical navigable small-world graph (Malkov &
 *    Yashunin) with the neighbor-selection heuristic. Graph traversal uses
 *    float dot products; the final candidates are rescored in double
 *    precision so both kinds report identical similarity values.
 *
 * Results are ordered by similarity descending, ties by ascending id.
 */

#include "aeye/binary_io.hpp"
#include "aeye/hashing.hpp"
#include "aeye/model.hpp"
#include "aeye/store.hpp"

#include <Eigen/Core>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <memory>
#include <queue>
#include <random>
#include <span>
#include <string>
#include <utility>
#include <vector>

namespace aeye {

struct SearchHit {
  ItemId id = 0;
  double similarity = 0.0;

  friend bool operator==(const SearchHit &, const SearchHit &) = default;
};

struct SearchResult {
  std::vector<SearchHit> entries;

  friend bool operator==(const SearchResult &, const SearchResult &) = default;
};

/// Strict ordering used for every result list.
inline bool ranks_before(const SearchHit &a, const SearchHit &b) noexcept {
  return a.similarity > b.similarity || (a.similarity == b.similarity && a.id < b.id);
}

enum class IndexKind { flat, hnsw };

inline std::string to_string(IndexKind k) { return k == IndexKind::flat ? "flat" : "hnsw"; }

inline IndexKind index_kind_from_string(const std::string &s) {
  if (s == "flat") {
    return IndexKind::flat;
  }
  if (s == "hnsw") {
    return IndexKind::hnsw;
  }
  throw bad_input("unknown index kind '" + s + "' (expected flat or hnsw)");
}

struct HnswParams {
  std::uint32_t M = 16;
  std::uint32_t ef_construction = 200;
  std::uint32_t ef_search = 64;
  std::uint64_t seed = 42;
};

/// Normalizes a query in double precision. Throws on a zero, non-finite or
/// wrongly sized vector.
inline std::vector<double> normalized_query(std::span<const float> q, std::uint32_t dim) {
  if (q.size() != dim) {
    throw bad_input("query dimension mismatch: expected " + std::to_string(dim) + ", got " +
                    std::to_string(q.size()));
  }
  double sq = 0.0;
  for (float f : q) {
    if (!std::isfinite(f)) {
      throw bad_input("query vector has a non-finite component");
    }
    sq += static_cast<double>(f) * f;
  }
  if (sq == 0.0) {
    throw bad_input("query vector is zero; cosine similarity is undefined");
  }
  const double inv = 1.0 / std::sqrt(sq);
  std::vector<double> out(q.size());
  for (std::size_t i = 0; i < q.size(); ++i) {
    out[i] = q[i] * inv;
  }
  return out;
}

inline double dot_exact(std::span<const double> q, std::span<const float> v) {
  double s = 0.0;
  for (std::size_t i = 0; i < q.size(); ++i) {
    s += q[i] * static_cast<double>(v[i]);
  }
  return s;
}

class VectorIndex {
public:
  virtual ~VectorIndex() = default;

  virtual IndexKind kind() const noexcept = 0;

  /// Top-min(n, size()) items for q. `ef_search` overrides the HNSW beam
  /// width when non-zero; the flat index ignores it.
  virtual SearchResult query(std::span<const float> q, std::size_t n, std::uint32_t ef_search = 0) const = 0;

  std::uint32_t dimension() const noexcept { return vectors_->dim; }
  std::uint64_t size() const noexcept { return vectors_->rows; }
  const VectorMatrix &vectors() const noexcept { return *vectors_; }

protected:
  explicit VectorIndex(std::shared_ptr<const VectorMatrix> vectors) : vectors_(std::move(vectors)) {
    if (!vectors_ || vectors_->dim == 0) {
      throw bad_input("vector index: dimension must be positive");
    }
    if (vectors_->rows == 0) {
      throw bad_input("vector index: no vectors");
    }
    if (vectors_->rows > 0xFFFFFFFFull) {
      throw bad_input("vector index: more than 2^32-1 vectors");
    }
  }

  std::shared_ptr<const VectorMatrix> vectors_;
};

class FlatIndex final : public VectorIndex {
public:
  explicit FlatIndex(std::shared_ptr<const VectorMatrix> vectors) : VectorIndex(std::move(vectors)) {}

  IndexKind kind() const noexcept override { return IndexKind::flat; }

  SearchResult query(std::span<const float> q, std::size_t n, std::uint32_t = 0) const override {
    const auto qn = normalized_query(q, dimension());
    std::vector<SearchHit> hits(size());
    for (std::uint64_t i = 0; i < size(); ++i) {
      hits[i] = {i, dot_exact(qn, vectors_->row(i))};
    }
    const std::size_t take = std::min<std::size_t>(n, hits.size());
    std::partial_sort(hits.begin(), hits.begin() + static_cast<std::ptrdiff_t>(take), hits.end(), ranks_before);
    hits.resize(take);
    return {std::move(hits)};
  }
};

class HnswIndex final : public VectorIndex {
public:
  using NodeId = std::uint32_t;

  /// Builds the graph by inserting vectors 0..n-1 in order.
  HnswIndex(std::shared_ptr<const VectorMatrix> vectors, HnswParams params)
      : VectorIndex(std::move(vectors)), params_(params) {
    check_params();
    const auto n = static_cast<NodeId>(size());
    links_.resize(n);
    std::mt19937_64 rng(params_.seed);
    const double level_mult = 1.0 / std::log(static_cast<double>(std::max<std::uint32_t>(2, params_.M)));
    Visited visited(n);
    for (NodeId i = 0; i < n; ++i) {
      const double u = 1.0 - uniform01(rng); // (0, 1]
      const int level = static_cast<int>(std::floor(-std::log(u) * level_mult));
      insert(i, std::min(level, 30), visited);
    }
  }

  IndexKind kind() const noexcept override { return IndexKind::hnsw; }

  const HnswParams &params() const noexcept { return params_; }
  int max_level() const noexcept { return max_level_; }
  NodeId entry_point() const noexcept { return entry_; }
  const std::vector<NodeId> &neighbors(NodeId node, int level) const { return links_[node][level]; }
  int level_of(NodeId node) const { return static_cast<int>(links_[node].size()) - 1; }

  SearchResult query(std::span<const float> q, std::size_t n, std::uint32_t ef_search = 0) const override {
    const auto qn = normalized_query(q, dimension());
    std::vector<float> qf(qn.begin(), qn.end());
    const std::size_t take = std::min<std::size_t>(n, size());
    const std::size_t ef = std::max<std::size_t>(take, ef_search != 0 ? ef_search : params_.ef_search);

    NodeId cur = entry_;
    float cur_dist = distance(qf.data(), cur);
    for (int lc = max_level_; lc > 0; --lc) {
      greedy_step(qf.data(), cur, cur_dist, lc);
    }
    Visited visited(static_cast<NodeId>(size()));
    auto found = search_layer(qf.data(), {{cur_dist, cur}}, ef, 0, visited);

    std::vector<SearchHit> hits;
    hits.reserve(found.size());
    for (const auto &c : found) {
      hits.push_back({c.second, dot_exact(qn, vectors_->row(c.second))});
    }
    std::sort(hits.begin(), hits.end(), ranks_before);
    hits.resize(std::min(take, hits.size()));
    return {std::move(hits)};
  }

  // -- persistence: "AEH1" | M u32 | ef_construction u32 | ef_search u32 |
  // seed u64 | n u64 | entry u32 | max_level i32 | per node: level u32, then
  // for each level 0..level a length-prefixed (u32) array of u32 ids.

  std::string serialize() const {
    ByteWriter w;
    w.put_bytes("AEH1");
    w.put(params_.M);
    w.put(params_.ef_construction);
    w.put(params_.ef_search);
    w.put(params_.seed);
    w.put(static_cast<std::uint64_t>(size()));
    w.put(entry_);
    w.put(static_cast<std::int32_t>(max_level_));
    for (const auto &node : links_) {
      w.put(static_cast<std::uint32_t>(node.size() - 1));
      for (const auto &list : node) {
        w.put(static_cast<std::uint32_t>(list.size()));
        for (NodeId id : list) {
          w.put(id);
        }
      }
    }
    return w.take();
  }

  static std::unique_ptr<HnswIndex> deserialize(std::string_view bytes, std::shared_ptr<const VectorMatrix> vectors,
                                                const std::string &source) {
    ByteReader r(bytes, source);
    if (r.get_bytes(4) != "AEH1") {
      throw bad_input(source + ": bad magic, expected AEH1");
    }
    HnswParams params;
    params.M = r.get<std::uint32_t>();
    params.ef_construction = r.get<std::uint32_t>();
    params.ef_search = r.get<std::uint32_t>();
    params.seed = r.get<std::uint64_t>();
    const auto n = r.get<std::uint64_t>();
    if (n != vectors->rows) {
      throw bad_input(source + ": graph has " + std::to_string(n) + " nodes, store has " +
                      std::to_string(vectors->rows));
    }
    std::unique_ptr<HnswIndex> index(new HnswIndex(std::move(vectors), params, Empty{}));
    index->entry_ = r.get<std::uint32_t>();
    index->max_level_ = r.get<std::int32_t>();
    index->links_.resize(n);
    for (auto &node : index->links_) {
      const auto level = r.get<std::uint32_t>();
      if (level > 64) {
        throw bad_input(source + ": implausible node level " + std::to_string(level));
      }
      node.resize(level + 1);
      for (auto &list : node) {
        const auto count = r.get<std::uint32_t>();
        if (count > r.remaining() / 4) {
          throw bad_input(source + ": truncated adjacency list");
        }
        list.resize(count);
        for (auto &id : list) {
          id = r.get<std::uint32_t>();
          if (id >= n) {
            throw bad_input(source + ": neighbor id out of range");
          }
        }
      }
    }
    if (!r.done() || index->entry_ >= n || index->max_level_ != index->level_of(index->entry_)) {
      throw bad_input(source + ": inconsistent graph header");
    }
    return index;
  }

private:
  struct Empty {};
  HnswIndex(std::shared_ptr<const VectorMatrix> vectors, HnswParams params, Empty)
      : VectorIndex(std::move(vectors)), params_(params) {
    check_params();
  }

  void check_params() const {
    if (params_.M < 2) {
      throw bad_input("hnsw: M must be >= 2");
    }
    if (params_.ef_construction < 1 || params_.ef_search < 1) {
      throw bad_input("hnsw: ef parameters must be >= 1");
    }
  }

  /// (distance, node); ordered so that std::priority_queue is a max-heap on
  /// distance with ties broken by node id.
  using Candidate = std::pair<float, NodeId>;

  /// Epoch-tagged visited set, reusable across searches.
  class Visited {
  public:
    explicit Visited(NodeId n) : tags_(n, 0) {}
    void reset() {
      if (++epoch_ == 0) {
        std::fill(tags_.begin(), tags_.end(), 0);
        epoch_ = 1;
      }
    }
    bool insert(NodeId id) {
      if (tags_[id] == epoch_) {
        return false;
      }
      tags_[id] = epoch_;
      return true;
    }

  private:
    std::vector<std::uint32_t> tags_;
    std::uint32_t epoch_ = 0;
  };

  std::size_t max_links(int level) const { return level == 0 ? 2 * params_.M : params_.M; }

  float dot(const float *a, const float *b) const {
    const Eigen::Map<const Eigen::VectorXf> va(a, dimension());
    const Eigen::Map<const Eigen::VectorXf> vb(b, dimension());
    return va.dot(vb);
  }

  float distance(const float *q, NodeId node) const { return 1.0f - dot(q, vectors_->row(node).data()); }

  float distance(NodeId a, NodeId b) const {
    return 1.0f - dot(vectors_->row(a).data(), vectors_->row(b).data());
  }

  void greedy_step(const float *q, NodeId &cur, float &cur_dist, int level) const {
    bool changed = true;
    while (changed) {
      changed = false;
      for (NodeId nb : links_[cur][level]) {
        const float d = distance(q, nb);
        if (d < cur_dist || (d == cur_dist && nb < cur)) {
          cur_dist = d;
          cur = nb;
          changed = true;
        }
      }
    }
  }

  /// Beam search on one level. Returns up to `ef` nearest nodes found,
  /// sorted by ascending distance.
  std::vector<Candidate> search_layer(const float *q, const std::vector<Candidate> &entries, std::size_t ef,
                                      int level, Visited &visited) const {
    visited.reset();
    std::priority_queue<Candidate, std::vector<Candidate>, std::greater<>> frontier;
    std::priority_queue<Candidate> best;
    for (const auto &e : entries) {
      visited.insert(e.second);
      frontier.push(e);
      best.push(e);
    }
    while (best.size() > ef) {
      best.pop();
    }
    while (!frontier.empty()) {
      const Candidate c = frontier.top();
      if (best.size() >= ef && c > best.top()) {
        break;
      }
      frontier.pop();
      for (NodeId nb : links_[c.second][level]) {
        if (!visited.insert(nb)) {
          continue;
        }
        const Candidate cand{distance(q, nb), nb};
        if (best.size() < ef || cand < best.top()) {
          frontier.push(cand);
          best.push(cand);
          if (best.size() > ef) {
            best.pop();
          }
        }
      }
    }
    std::vector<Candidate> out;
    out.reserve(best.size());
    while (!best.empty()) {
      out.push_back(best.top());
      best.pop();
    }
    std::reverse(out.begin(), out.end());
    return out;
  }

  /// Neighbor-selection heuristic: walk candidates nearest first and keep one
  /// only if it is closer to the base than to every neighbor kept so far.
  std::vector<NodeId> select_neighbors(const std::vector<Candidate> &sorted, std::size_t m) const {
    std::vector<NodeId> kept;
    kept.reserve(m);
    for (const auto &c : sorted) {
      if (kept.size() >= m) {
        break;
      }
      bool diverse = true;
      for (NodeId k : kept) {
        if (distance(c.second, k) < c.first) {
          diverse = false;
          break;
        }
      }
      if (diverse) {
        kept.push_back(c.second);
      }
    }
    return kept;
  }

  void insert(NodeId node, int level, Visited &visited) {
    links_[node].resize(static_cast<std::size_t>(level) + 1);
    if (node == 0) {
      entry_ = 0;
      max_level_ = level;
      return;
    }
    const float *q = vectors_->row(node).data();
    NodeId cur = entry_;
    float cur_dist = distance(q, cur);
    for (int lc = max_level_; lc > level; --lc) {
      greedy_step(q, cur, cur_dist, lc);
    }
    std::vector<Candidate> entries{{cur_dist, cur}};
    for (int lc = std::min(level, max_level_); lc >= 0; --lc) {
      const auto found = search_layer(q, entries, params_.ef_construction, lc, visited);
      links_[node][lc] = select_neighbors(found, params_.M);
      for (NodeId nb : links_[node][lc]) {
        auto &list = links_[nb][lc];
        list.push_back(node);
        if (list.size() > max_links(lc)) {
          std::vector<Candidate> cands;
          cands.reserve(list.size());
          for (NodeId x : list) {
            cands.push_back({distance(nb, x), x});
          }
          std::sort(cands.begin(), cands.end());
          list = select_neighbors(cands, max_links(lc));
        }
      }
      entries = found;
    }
    if (level > max_level_) {
      max_level_ = level;
      entry_ = node;
    }
  }

  HnswParams params_;
  std::vector<std::vector<std::vector<NodeId>>> links_;
  NodeId entry_ = 0;
  int max_level_ = 0;
};

// ---------------------------------------------------------------------------

inline std::unique_ptr<VectorIndex> build_index(std::shared_ptr<const VectorMatrix> normalized, IndexKind kind,
                                                const HnswParams &params = {}) {
  if (kind == IndexKind::flat) {
    return std::make_unique<FlatIndex>(std::move(normalized));
  }
  return std::make_unique<HnswIndex>(std::move(normalized), params);
}

inline std::unique_ptr<VectorIndex> build_index(const DatasetStore &store, IndexKind kind,
                                                const HnswParams &params = {}) {
  return build_index(std::make_shared<const VectorMatrix>(store.normalized), kind, params);
}

/// Persists the index and records its kind in the manifest. The flat index
/// reuses the store's normalized matrix and writes nothing else.
inline void save_index(const fs::path &root, const VectorIndex &index) {
  AtlasManifest m = read_manifest(root);
  fs::remove_all(root / "index");
  if (index.kind() == IndexKind::hnsw) {
    write_file(root / store_files::hnsw, static_cast<const HnswIndex &>(index).serialize());
  }
  m.index_kind = to_string(index.kind());
  write_manifest(root, m);
}

/// Loads the index recorded in the manifest, or a flat index when none was
/// built.
inline std::unique_ptr<VectorIndex> load_index(const fs::path &root, const AtlasManifest &m,
                                               std::shared_ptr<const VectorMatrix> normalized) {
  if (m.index_kind == "hnsw") {
    const auto path = root / store_files::hnsw;
    return HnswIndex::deserialize(read_file(path), std::move(normalized), path.string());
  }
  return std::make_unique<FlatIndex>(std::move(normalized));
}

} // namespace aeye
