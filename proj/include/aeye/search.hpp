#pragma once

#include "aeye/embedder.hpp"
#include "aeye/model.hpp"
#include "aeye/store.hpp"
#include "aeye/vector_index.hpp"

#include <algorithm>
#include <optional>
#include <string>
#include <vector>

namespace aeye {

enum class QueryKind { text, image, vector, item };

inline QueryKind query_kind_from_string(const std::string &s) {
  if (s == "text") {
    return QueryKind::text;
  }
  if (s == "image") {
    return QueryKind::image;
  }
  if (s == "vector") {
    return QueryKind::vector;
  }
  if (s == "item") {
    return QueryKind::item;
  }
  throw bad_input("unknown query kind '" + s + "' (expected text, image, vector or item)");
}

inline constexpr std::size_t kDefaultResultCount = 9;
inline constexpr std::size_t kMaxResultCount = 100;
inline constexpr std::size_t kMaxImageBytes = 8u << 20;

/// An uploaded image exceeded kMaxImageBytes.
class PayloadTooLarge : public Error {
public:
  explicit PayloadTooLarge(const std::string &what) : Error(Kind::bad_input, what) {}
};

/// An item id that is not in the store.
class UnknownItem : public Error {
public:
  explicit UnknownItem(ItemId id) : Error(Kind::bad_input, "unknown item id " + std::to_string(id)), id_(id) {}
  ItemId id() const noexcept { return id_; }

private:
  ItemId id_;
};

/// Exactly one payload is meaningful, selected by `kind`.
struct Query {
  QueryKind kind = QueryKind::text;
  std::string text;
  std::string image; // raw bytes
  std::vector<float> vector;
  ItemId item = 0;
  std::size_t n = kDefaultResultCount;

  static Query for_text(std::string t, std::size_t n = kDefaultResultCount) {
    Query q;
    q.kind = QueryKind::text;
    q.text = std::move(t);
    q.n = n;
    return q;
  }
  static Query for_image(std::string bytes, std::size_t n = kDefaultResultCount) {
    Query q;
    q.kind = QueryKind::image;
    q.image = std::move(bytes);
    q.n = n;
    return q;
  }
  static Query for_vector(std::vector<float> v, std::size_t n = kDefaultResultCount) {
    Query q;
    q.kind = QueryKind::vector;
    q.vector = std::move(v);
    q.n = n;
    return q;
  }
  static Query for_item(ItemId id, std::size_t n = kDefaultResultCount) {
    Query q;
    q.kind = QueryKind::item;
    q.item = id;
    q.n = n;
    return q;
  }
};

struct SemanticSearchResult {
  SearchResult result;
  /// Position of the top result, for the viewer to fly to.
  std::optional<ProjectedPoint> best_match;
};

/// Embeds a text or image query through `embedder`.
inline std::vector<float> embed_query(Embedder &embedder, EmbedKind kind, std::string_view payload) {
  if (payload.empty()) {
    throw bad_input("empty " + to_string(kind) + " query");
  }
  if (kind == EmbedKind::image && payload.size() > kMaxImageBytes) {
    throw PayloadTooLarge("image upload of " + std::to_string(payload.size()) + " bytes exceeds the " +
                          std::to_string(kMaxImageBytes) + "-byte limit");
  }
  return embedder.embed(kind, payload);
}

/// Resolves `q` to a vector and ranks the store's items against it. Item
/// queries exclude the item itself. `embedder` may be null, in which case
/// text and image queries fail with EmbedderUnavailable.
inline SemanticSearchResult semantic_search(const Query &q, const VectorIndex &index, const DatasetStore &store,
                                            Embedder *embedder) {
  if (q.n < 1 || q.n > kMaxResultCount) {
    throw bad_input("result count n must be in [1, " + std::to_string(kMaxResultCount) + "], got " +
                    std::to_string(q.n));
  }
  SemanticSearchResult out;
  switch (q.kind) {
  case QueryKind::text:
  case QueryKind::image: {
    const auto kind = q.kind == QueryKind::text ? EmbedKind::text : EmbedKind::image;
    const std::string &payload = q.kind == QueryKind::text ? q.text : q.image;
    if (payload.empty()) {
      throw bad_input("empty " + to_string(kind) + " query");
    }
    if (embedder == nullptr) {
      throw EmbedderUnavailable("no embedding service configured");
    }
    out.result = index.query(embed_query(*embedder, kind, payload), q.n);
    break;
  }
  case QueryKind::vector:
    out.result = index.query(q.vector, q.n);
    break;
  case QueryKind::item: {
    if (q.item >= index.size()) {
      throw UnknownItem(q.item);
    }
    const auto v = index.vectors().row(q.item);
    auto r = index.query(v, q.n + 1);
    std::erase_if(r.entries, [&](const SearchHit &h) { return h.id == q.item; });
    if (r.entries.size() > q.n) {
      r.entries.resize(q.n);
    }
    out.result = std::move(r);
    break;
  }
  }
  if (!out.result.entries.empty() && !store.positions.empty()) {
    const ItemId top = out.result.entries.front().id;
    out.best_match = ProjectedPoint{top, store.positions[top].x, store.positions[top].y};
  }
  return out;
}

} // namespace aeye
