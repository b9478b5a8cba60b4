#pragma once

/**
 * @file server.hpp
 * @brief Read-only HTTP API over a directory of dataset stores.
 *
 * Routes (all JSON unless noted):
 *
 *     GET  /healthz
 *     GET  /api/schema                                  JSON Schema of every payload below
 *     GET  /api/datasets                                [{name, item_count, depth, k, ...}]
 *     GET  /api/datasets/{ds}/manifest
 *     GET  /api/datasets/{ds}/tiles/{layer}/{ix}/{iy}
 *     GET  /api/datasets/{ds}/items/{id}
 *     POST /api/datasets/{ds}/search                    body: {kind, text|image|vector|id, n?}
 *     GET  /media/{ds}/{id}/{32|128|512|original}       image bytes
 *
 * Stores are opened once at construction and never written to.
 */

#include "aeye/embedder.hpp"
#include "aeye/hashing.hpp"
#include "aeye/search.hpp"
#include "aeye/store.hpp"
#include "aeye/tiling.hpp"
#include "aeye/vector_index.hpp"

#include "aeye/http.hpp"
#include <json.hpp>
#include <opencv2/imgcodecs.hpp>

#include <charconv>
#include <chrono>
#include <functional>
#include <iostream>
#include <map>
#include <memory>
#include <optional>
#include <string>
#include <vector>

namespace aeye {

struct ServerConfig {
  std::string host = "127.0.0.1";
  int port = 8080;
  fs::path datasets_root;
  /// max-age for media responses, seconds.
  long media_max_age = 31'536'000;
  /// Base URL of the embedding service; text and image search answer 503
  /// without it unless use_mock_embedder is set.
  std::optional<std::string> embedder_url;
  bool use_mock_embedder = false;
  std::chrono::milliseconds embedder_timeout{10'000};
  unsigned embedder_max_in_flight = 4;
  /// Origins allowed to call the API cross-origin; same-origin needs nothing.
  std::vector<std::string> cors_allowlist;
  /// Development switch: allow every origin.
  bool cors_allow_any = false;
  /// Start even when no dataset could be loaded.
  bool allow_empty = false;
  unsigned threads = std::max(8u, default_thread_count());
  std::function<void(const std::string &)> log = [](const std::string &line) { std::cerr << line << '\n'; };
};

inline constexpr const char *kPlaceholderHeader = "X-AEye-Placeholder";

inline constexpr const char *kApiSchema = R"json({
  "$schema": "https://json-schema.org/draft/2020-12/schema",
  "title": "aeye API payloads",
  "$defs": {
    "error": {
      "type": "object",
      "required": ["error", "message"],
      "properties": {"error": {"type": "string"}, "message": {"type": "string"}}
    },
    "dataset_list": {
      "type": "array",
      "items": {
        "type": "object",
        "required": ["name", "item_count", "depth", "k", "tiled", "dimension", "index_kind"],
        "properties": {
          "name": {"type": "string"},
          "item_count": {"type": "integer", "minimum": 0},
          "depth": {"type": ["integer", "null"], "minimum": 0},
          "k": {"type": ["integer", "null"], "minimum": 1},
          "tiled": {"type": "boolean"},
          "dimension": {"type": "integer", "minimum": 2},
          "index_kind": {"type": "string", "enum": ["flat", "hnsw"]}
        }
      }
    },
    "manifest": {
      "type": "object",
      "required": ["dataset_name", "item_count", "dimension", "projection_method", "bounds_raw",
                   "projection_rank_deficient", "tiled", "k", "depth", "depth_capped", "tiling_seed",
                   "per_layer_nonempty_tile_counts", "index_kind"],
      "properties": {
        "dataset_name": {"type": "string"},
        "item_count": {"type": "integer", "minimum": 1},
        "dimension": {"type": "integer", "minimum": 2},
        "projection_method": {"type": "string", "enum": ["none", "pca", "external"]},
        "bounds_raw": {"type": "array", "items": {"type": "number"}, "minItems": 4, "maxItems": 4},
        "projection_rank_deficient": {"type": "boolean"},
        "tiled": {"type": "boolean"},
        "k": {"type": "integer", "minimum": 0},
        "depth": {"type": "integer", "minimum": 0},
        "depth_capped": {"type": "boolean"},
        "tiling_seed": {"type": "integer", "minimum": 0},
        "per_layer_nonempty_tile_counts": {"type": "array", "items": {"type": "integer", "minimum": 1}},
        "index_kind": {"type": "string", "enum": ["", "flat", "hnsw"]}
      }
    },
    "thumbnails": {
      "type": "object",
      "required": ["32", "128", "512"],
      "properties": {"32": {"type": "string"}, "128": {"type": "string"}, "512": {"type": "string"}}
    },
    "tile": {
      "type": "object",
      "required": ["layer", "ix", "iy", "representatives"],
      "properties": {
        "layer": {"type": "integer", "minimum": 0},
        "ix": {"type": "integer", "minimum": 0},
        "iy": {"type": "integer", "minimum": 0},
        "representatives": {
          "type": "array",
          "items": {
            "type": "object",
            "required": ["id", "x", "y", "introduced_at_layer", "thumbnails"],
            "properties": {
              "id": {"type": "integer", "minimum": 0},
              "x": {"type": "number", "minimum": 0, "maximum": 1},
              "y": {"type": "number", "minimum": 0, "maximum": 1},
              "introduced_at_layer": {"type": "integer", "minimum": 0},
              "thumbnails": {"$ref": "#/$defs/thumbnails"}
            }
          }
        }
      }
    },
    "hit": {
      "type": "object",
      "required": ["id", "similarity", "position", "thumbnails"],
      "properties": {
        "id": {"type": "integer", "minimum": 0},
        "similarity": {"type": "number", "minimum": -1.000001, "maximum": 1.000001},
        "position": {"$ref": "#/$defs/position"},
        "thumbnails": {"$ref": "#/$defs/thumbnails"}
      }
    },
    "position": {
      "type": ["object", "null"],
      "required": ["x", "y"],
      "properties": {"x": {"type": "number"}, "y": {"type": "number"}}
    },
    "item": {
      "type": "object",
      "required": ["id", "metadata", "caption", "has_caption", "position", "thumbnails", "original", "neighbors"],
      "properties": {
        "id": {"type": "integer", "minimum": 0},
        "metadata": {"type": "object"},
        "caption": {"type": ["string", "null"]},
        "has_caption": {"type": "boolean"},
        "position": {"$ref": "#/$defs/position"},
        "thumbnails": {"$ref": "#/$defs/thumbnails"},
        "original": {"type": "string"},
        "neighbors": {"type": "array", "items": {"$ref": "#/$defs/hit"}}
      }
    },
    "search_result": {
      "type": "object",
      "required": ["results", "best_match"],
      "properties": {
        "results": {"type": "array", "items": {"$ref": "#/$defs/hit"}},
        "best_match": {
          "type": ["object", "null"],
          "required": ["id", "x", "y"],
          "properties": {"id": {"type": "integer"}, "x": {"type": "number"}, "y": {"type": "number"}}
        }
      }
    }
  }
})json";

/// One store as served: its read view, pyramid (when tiled) and index.
struct ServedDataset {
  std::string name;
  DatasetStore store;
  std::optional<TilePyramid> pyramid;
  std::unique_ptr<VectorIndex> index;
  Embedder *embedder = nullptr;

  static ServedDataset load(const fs::path &root, std::string name) {
    ServedDataset d;
    d.name = std::move(name);
    d.store = DatasetStore::open(root);
    if (d.store.manifest.tiled) {
      d.pyramid = load_pyramid(root, d.store.manifest);
    }
    auto vectors = std::make_shared<const VectorMatrix>(std::move(d.store.normalized));
    d.store.normalized = {};
    d.index = load_index(root, d.store.manifest, std::move(vectors));
    return d;
  }
};

namespace detail {

inline nlohmann::json error_body(const std::string &code, const std::string &message) {
  return {{"error", code}, {"message", message}};
}

inline bool parse_u64(const std::string &s, std::uint64_t &out) {
  if (s.empty() || s.size() > 19) {
    return false;
  }
  const auto res = std::from_chars(s.data(), s.data() + s.size(), out);
  return res.ec == std::errc{} && res.ptr == s.data() + s.size();
}

inline std::string mime_for(const fs::path &p) {
  const auto ext = lower_extension(p);
  if (ext == ".jpg" || ext == ".jpeg") {
    return "image/jpeg";
  }
  if (ext == ".png") {
    return "image/png";
  }
  if (ext == ".gif") {
    return "image/gif";
  }
  if (ext == ".webp") {
    return "image/webp";
  }
  if (ext == ".bmp") {
    return "image/bmp";
  }
  return "application/octet-stream";
}

/// Neutral grey PNG square used for missing media.
inline std::string placeholder_png(int size) {
  const cv::Mat img(size, size, CV_8UC3, cv::Scalar(200, 200, 200));
  std::vector<uchar> buf;
  cv::imencode(".png", img, buf);
  return {reinterpret_cast<const char *>(buf.data()), buf.size()};
}

} // namespace detail

class AtlasServer {
public:
  explicit AtlasServer(ServerConfig cfg) : cfg_(std::move(cfg)) {
    load_datasets();
    if (datasets_.empty() && !cfg_.allow_empty) {
      throw missing_stage("no loadable dataset store under " + cfg_.datasets_root.string() +
                          " (pass the allow-empty override to start anyway)");
    }
    for (int size : kThumbnailSizes) {
      placeholders_[std::to_string(size)] = detail::placeholder_png(size);
    }
    placeholders_["original"] = detail::placeholder_png(512);
    setup_embedders();
    setup_routes();
  }

  AtlasServer(const AtlasServer &) = delete;
  AtlasServer &operator=(const AtlasServer &) = delete;
  ~AtlasServer() { stop(); }

  const std::map<std::string, ServedDataset> &datasets() const noexcept { return datasets_; }

  /// Binds to cfg.port (0 picks a free port) and returns the bound port.
  int bind() {
    if (cfg_.port == 0) {
      port_ = http_.bind_to_any_port(cfg_.host);
    } else {
      port_ = http_.bind_to_port(cfg_.host, cfg_.port) ? cfg_.port : -1;
    }
    if (port_ < 0) {
      throw io_error("cannot bind " + cfg_.host + ":" + std::to_string(cfg_.port));
    }
    return port_;
  }

  /// Serves until stop(); call bind() first.
  void listen() {
    log("listening on http://" + cfg_.host + ":" + std::to_string(port_) + " with " +
        std::to_string(datasets_.size()) + " dataset(s)");
    http_.listen_after_bind();
  }

  void stop() { http_.stop(); }

  void wait_until_ready() const { http_.wait_until_ready(); }

  int port() const noexcept { return port_; }

private:
  void log(const std::string &line) const {
    if (cfg_.log) {
      cfg_.log(line);
    }
  }

  void load_datasets() {
    const auto &root = cfg_.datasets_root;
    if (!fs::is_directory(root)) {
      return;
    }
    std::vector<std::pair<std::string, fs::path>> candidates;
    if (fs::exists(root / store_files::manifest)) {
      candidates.emplace_back(fs::absolute(root).lexically_normal().filename().string(), root);
    } else {
      for (const auto &e : fs::directory_iterator(root)) {
        if (e.is_directory() && fs::exists(e.path() / store_files::manifest)) {
          candidates.emplace_back(e.path().filename().string(), e.path());
        }
      }
    }
    std::sort(candidates.begin(), candidates.end());
    for (const auto &[name, path] : candidates) {
      try {
        datasets_.emplace(name, ServedDataset::load(path, name));
        log("loaded dataset '" + name + "' from " + path.string());
      } catch (const std::exception &e) {
        log("skipping dataset '" + name + "': " + e.what());
      }
    }
  }

  void setup_embedders() {
    std::shared_ptr<InFlightLimit> limit = std::make_shared<InFlightLimit>(cfg_.embedder_max_in_flight);
    for (auto &[name, ds] : datasets_) {
      const auto dim = ds.store.manifest.dimension;
      auto &slot = embedders_[dim];
      if (!slot) {
        if (cfg_.use_mock_embedder) {
          slot = std::make_unique<MockEmbedder>(dim);
        } else if (cfg_.embedder_url && !cfg_.embedder_url->empty()) {
          HttpEmbedder::Options opt;
          opt.endpoint_url = *cfg_.embedder_url;
          opt.dimension = dim;
          opt.timeout = cfg_.embedder_timeout;
          opt.limit = limit;
          slot = std::make_unique<HttpEmbedder>(opt);
        }
      }
      ds.embedder = slot.get();
    }
  }

  const ServedDataset *find(const std::string &name) const {
    const auto it = datasets_.find(name);
    return it == datasets_.end() ? nullptr : &it->second;
  }

  static void send_json(httplib::Response &res, int status, const nlohmann::json &body) {
    res.status = status;
    res.set_content(body.dump(), "application/json");
  }

  static void send_error(httplib::Response &res, int status, const std::string &code, const std::string &msg) {
    send_json(res, status, detail::error_body(code, msg));
  }

  nlohmann::json thumbnails(const std::string &ds, ItemId id) const {
    nlohmann::json t = nlohmann::json::object();
    for (int size : kThumbnailSizes) {
      t[std::to_string(size)] = "/media/" + ds + "/" + std::to_string(id) + "/" + std::to_string(size);
    }
    return t;
  }

  nlohmann::json position(const ServedDataset &d, ItemId id) const {
    if (d.store.positions.empty()) {
      return nullptr;
    }
    return {{"x", d.store.positions[id].x}, {"y", d.store.positions[id].y}};
  }

  nlohmann::json hits_json(const ServedDataset &d, const SearchResult &r) const {
    nlohmann::json arr = nlohmann::json::array();
    for (const auto &h : r.entries) {
      arr.push_back({{"id", h.id},
                     {"similarity", h.similarity},
                     {"position", position(d, h.id)},
                     {"thumbnails", thumbnails(d.name, h.id)}});
    }
    return arr;
  }

  void setup_routes() {
    http_.new_task_queue = [n = cfg_.threads] { return new httplib::ThreadPool(n); };
    http_.set_payload_max_length(16u << 20);
    http_.set_exception_handler([this](const httplib::Request &, httplib::Response &res, std::exception_ptr ep) {
      std::string what = "unknown error";
      try {
        std::rethrow_exception(ep);
      } catch (const std::exception &e) {
        what = e.what();
      } catch (...) {
      }
      log("internal error: " + what);
      send_error(res, 500, "internal", what);
    });
    http_.set_post_routing_handler([this](const httplib::Request &req, httplib::Response &res) {
      apply_cors(req, res);
    });
    http_.Options(R"(/.*)", [this](const httplib::Request &req, httplib::Response &res) {
      apply_cors(req, res);
      res.set_header("Access-Control-Allow-Methods", "GET, POST, OPTIONS");
      res.set_header("Access-Control-Allow-Headers", "Content-Type");
      res.status = 204;
    });

    http_.Get("/healthz", [](const httplib::Request &, httplib::Response &res) {
      send_json(res, 200, {{"status", "ok"}});
    });

    http_.Get("/api/schema", [](const httplib::Request &, httplib::Response &res) {
      res.set_content(kApiSchema, "application/schema+json");
    });

    http_.Get("/api/datasets", [this](const httplib::Request &, httplib::Response &res) {
      nlohmann::json list = nlohmann::json::array();
      for (const auto &[name, d] : datasets_) {
        const auto &m = d.store.manifest;
        list.push_back({{"name", name},
                        {"item_count", m.item_count},
                        {"depth", m.tiled ? nlohmann::json(m.depth) : nlohmann::json(nullptr)},
                        {"k", m.tiled ? nlohmann::json(m.k) : nlohmann::json(nullptr)},
                        {"tiled", m.tiled},
                        {"dimension", m.dimension},
                        {"index_kind", to_string(d.index->kind())}});
      }
      send_json(res, 200, list);
    });

    http_.Get(R"(/api/datasets/([^/]+)/manifest)", [this](const httplib::Request &req, httplib::Response &res) {
      const auto *d = find(req.matches[1]);
      if (d == nullptr) {
        return send_error(res, 404, "unknown_dataset", "no dataset named '" + std::string(req.matches[1]) + "'");
      }
      send_json(res, 200, manifest_to_json(d->store.manifest));
    });

    http_.Get(R"(/api/datasets/([^/]+)/tiles/([^/]+)/([^/]+)/([^/]+))",
              [this](const httplib::Request &req, httplib::Response &res) { handle_tile(req, res); });

    http_.Get(R"(/api/datasets/([^/]+)/items/([^/]+))",
              [this](const httplib::Request &req, httplib::Response &res) { handle_item(req, res); });

    http_.Post(R"(/api/datasets/([^/]+)/search)",
               [this](const httplib::Request &req, httplib::Response &res) { handle_search(req, res); });

    http_.Get(R"(/media/([^/]+)/([^/]+)/([^/]+))",
              [this](const httplib::Request &req, httplib::Response &res) { handle_media(req, res); });
  }

  void apply_cors(const httplib::Request &req, httplib::Response &res) const {
    if (!req.has_header("Origin")) {
      return;
    }
    const auto origin = req.get_header_value("Origin");
    if (cfg_.cors_allow_any) {
      res.set_header("Access-Control-Allow-Origin", "*");
      return;
    }
    if (std::find(cfg_.cors_allowlist.begin(), cfg_.cors_allowlist.end(), origin) != cfg_.cors_allowlist.end()) {
      res.set_header("Access-Control-Allow-Origin", origin);
      res.set_header("Vary", "Origin");
    }
  }

  void handle_tile(const httplib::Request &req, httplib::Response &res) const {
    const auto *d = find(req.matches[1]);
    if (d == nullptr) {
      return send_error(res, 404, "unknown_dataset", "no dataset named '" + std::string(req.matches[1]) + "'");
    }
    if (!d->pyramid) {
      return send_error(res, 409, "not_tiled", "dataset has no tile pyramid yet");
    }
    std::uint64_t layer = 0;
    std::uint64_t ix = 0;
    std::uint64_t iy = 0;
    if (!detail::parse_u64(req.matches[2], layer) || !detail::parse_u64(req.matches[3], ix) ||
        !detail::parse_u64(req.matches[4], iy)) {
      return send_error(res, 400, "bad_tile_key", "layer, ix and iy must be non-negative integers");
    }
    if (layer > static_cast<std::uint64_t>(d->pyramid->depth)) {
      return send_error(res, 400, "layer_out_of_range",
                        "layer " + std::to_string(layer) + " > depth " + std::to_string(d->pyramid->depth));
    }
    const std::uint64_t grid = std::uint64_t{1} << layer;
    if (ix >= grid || iy >= grid) {
      return send_error(res, 400, "tile_out_of_range",
                        "ix and iy must be < " + std::to_string(grid) + " on layer " + std::to_string(layer));
    }
    const TileKey key{static_cast<int>(layer), static_cast<std::int64_t>(ix), static_cast<std::int64_t>(iy)};
    nlohmann::json reps = nlohmann::json::array();
    if (const Tile *t = d->pyramid->find(key)) {
      for (const auto &r : t->representatives) {
        reps.push_back({{"id", r.id},
                        {"x", r.x},
                        {"y", r.y},
                        {"introduced_at_layer", r.introduced_at_layer},
                        {"thumbnails", thumbnails(d->name, r.id)}});
      }
    }
    res.set_header("Cache-Control", "public, max-age=3600");
    send_json(res, 200, {{"layer", layer}, {"ix", ix}, {"iy", iy}, {"representatives", reps}});
  }

  void handle_item(const httplib::Request &req, httplib::Response &res) const {
    const auto *d = find(req.matches[1]);
    if (d == nullptr) {
      return send_error(res, 404, "unknown_dataset", "no dataset named '" + std::string(req.matches[1]) + "'");
    }
    std::uint64_t id = 0;
    if (!detail::parse_u64(req.matches[2], id) || id >= d->store.size()) {
      return send_error(res, 404, "unknown_item", "no item '" + std::string(req.matches[2]) + "'");
    }
    const auto found = semantic_search(Query::for_item(id), *d->index, d->store, nullptr);
    nlohmann::json meta = nlohmann::json::object();
    for (const auto &[k, v] : d->store.metadata[id]) {
      meta[k] = v;
    }
    const auto &caption = d->store.captions[id];
    send_json(res, 200,
              {{"id", id},
               {"metadata", meta},
               {"caption", caption ? nlohmann::json(*caption) : nlohmann::json(nullptr)},
               {"has_caption", caption.has_value()},
               {"position", position(*d, id)},
               {"thumbnails", thumbnails(d->name, id)},
               {"original", "/media/" + d->name + "/" + std::to_string(id) + "/original"},
               {"neighbors", hits_json(*d, found.result)}});
  }

  void handle_search(const httplib::Request &req, httplib::Response &res) const {
    const auto *d = find(req.matches[1]);
    if (d == nullptr) {
      return send_error(res, 404, "unknown_dataset", "no dataset named '" + std::string(req.matches[1]) + "'");
    }
    Query q;
    try {
      q = parse_query(req.body);
    } catch (const PayloadTooLarge &e) {
      return send_error(res, 413, "payload_too_large", e.what());
    } catch (const std::exception &e) {
      return send_error(res, 400, "bad_request", e.what());
    }
    try {
      const auto found = semantic_search(q, *d->index, d->store, d->embedder);
      nlohmann::json best = nullptr;
      if (found.best_match) {
        best = {{"id", found.best_match->id}, {"x", found.best_match->x}, {"y", found.best_match->y}};
      }
      send_json(res, 200, {{"results", hits_json(*d, found.result)}, {"best_match", best}});
    } catch (const EmbedderUnavailable &e) {
      res.set_header("Retry-After", "5");
      send_error(res, 503, "embedder_unavailable", e.what());
    } catch (const EmbedderProtocolError &e) {
      send_error(res, 502, "embedder_protocol_error", e.what());
    } catch (const PayloadTooLarge &e) {
      send_error(res, 413, "payload_too_large", e.what());
    } catch (const UnknownItem &e) {
      send_error(res, 404, "unknown_item", e.what());
    } catch (const Error &e) {
      send_error(res, 400, "bad_request", e.what());
    }
  }

  /// Body: {"kind": "text", "text": "..."} | {"kind": "image", "image": "<base64>"} |
  /// {"kind": "vector", "vector": [...]} | {"kind": "item", "id": 7}, plus optional "n".
  static Query parse_query(const std::string &body) {
    nlohmann::json j;
    try {
      j = nlohmann::json::parse(body);
    } catch (const nlohmann::json::parse_error &) {
      throw bad_input("request body is not valid JSON");
    }
    if (!j.is_object() || !j.contains("kind") || !j["kind"].is_string()) {
      throw bad_input("request body must be an object with a string 'kind'");
    }
    Query q;
    q.kind = query_kind_from_string(j["kind"].get<std::string>());
    if (j.contains("n")) {
      if (!j["n"].is_number_integer() || j["n"].get<std::int64_t>() < 1) {
        throw bad_input("'n' must be a positive integer");
      }
      q.n = j["n"].get<std::size_t>();
    }
    auto require = [&](const char *field) -> const nlohmann::json & {
      if (!j.contains(field)) {
        throw bad_input(std::string("missing '") + field + "' for kind " + j["kind"].get<std::string>());
      }
      return j[field];
    };
    switch (q.kind) {
    case QueryKind::text: {
      const auto &t = require("text");
      if (!t.is_string()) {
        throw bad_input("'text' must be a string");
      }
      q.text = t.get<std::string>();
      break;
    }
    case QueryKind::image: {
      const auto &t = require("image");
      if (!t.is_string()) {
        throw bad_input("'image' must be a base64 string");
      }
      // Decoded size is known from the encoded length; check before decoding.
      const auto &s = t.get_ref<const std::string &>();
      if (s.size() / 4 * 3 > kMaxImageBytes + 2) {
        throw PayloadTooLarge("image upload exceeds the " + std::to_string(kMaxImageBytes) + "-byte limit");
      }
      q.image = base64_decode(s);
      break;
    }
    case QueryKind::vector: {
      const auto &v = require("vector");
      if (!v.is_array()) {
        throw bad_input("'vector' must be an array of numbers");
      }
      for (const auto &x : v) {
        if (!x.is_number()) {
          throw bad_input("'vector' must be an array of numbers");
        }
        q.vector.push_back(x.get<float>());
      }
      break;
    }
    case QueryKind::item: {
      const auto &v = require("id");
      if (!v.is_number_unsigned()) {
        throw bad_input("'id' must be a non-negative integer");
      }
      q.item = v.get<ItemId>();
      break;
    }
    }
    return q;
  }

  void handle_media(const httplib::Request &req, httplib::Response &res) const {
    const auto *d = find(req.matches[1]);
    if (d == nullptr) {
      return send_error(res, 404, "unknown_dataset", "no dataset named '" + std::string(req.matches[1]) + "'");
    }
    std::uint64_t id = 0;
    if (!detail::parse_u64(req.matches[2], id) || id >= d->store.size()) {
      return send_error(res, 404, "unknown_item", "no item '" + std::string(req.matches[2]) + "'");
    }
    const std::string size = req.matches[3];
    fs::path asset;
    if (size == "original") {
      asset = d->store.original_asset(id);
    } else if (size == "32" || size == "128" || size == "512") {
      asset = d->store.thumbnail_asset(id, std::stoi(size));
    } else {
      return send_error(res, 400, "bad_size", "size must be 32, 128, 512 or original");
    }
    if (!asset.empty() && fs::exists(asset)) {
      try {
        res.set_content(read_file(asset), detail::mime_for(asset));
        res.set_header("Cache-Control", "public, max-age=" + std::to_string(cfg_.media_max_age) + ", immutable");
        return;
      } catch (const Error &) {
        // fall through to the placeholder
      }
    }
    res.set_header(kPlaceholderHeader, "1");
    res.set_header("Cache-Control", "public, max-age=60");
    res.set_content(placeholders_.at(size), "image/png");
  }

  ServerConfig cfg_;
  std::map<std::string, ServedDataset> datasets_;
  std::map<std::uint32_t, std::unique_ptr<Embedder>> embedders_;
  std::map<std::string, std::string> placeholders_;
  mutable httplib::Server http_;
  int port_ = -1;
};

} // namespace aeye
