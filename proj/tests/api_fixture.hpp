#pragma once

// Fixture stores, an in-process server harness and a small JSON Schema
// checker, shared by the server tests and the acceptance binary.

#include "aeye/embedder.hpp"
#include "aeye/ingest.hpp"
#include "aeye/projection.hpp"
#include "aeye/server.hpp"
#include "aeye/tiling.hpp"
#include "aeye/vector_index.hpp"

#include "test_util.hpp"

#include <opencv2/imgcodecs.hpp>
#include <opencv2/imgproc.hpp>

#include <random>
#include <thread>

namespace aeye::testing {

struct FixtureSpec {
  std::string name = "fixture";
  std::uint64_t n = 300;
  std::uint32_t dim = 16;
  std::uint32_t k = 8;
  std::uint64_t seed = 3;
  IndexKind index = IndexKind::flat;
  /// Items 0..images-1 get a source image, except item 1 whose file is missing.
  int images = 4;
};

inline constexpr const char *kFixtureQuery = "q7";
inline constexpr const char *kFixtureCaption = "a red bicycle";

/// Ingested, projected, tiled and indexed store. Item 7 is built next to the
/// mock embedding of kFixtureQuery; item 2 carries kFixtureCaption.
inline void build_fixture_store(const fs::path &root, const FixtureSpec &spec) {
  auto m = clustered_vectors(spec.n, spec.dim, spec.seed, 6, 0.6f);
  const auto target = MockEmbedder::vector_for(EmbedKind::text, kFixtureQuery, spec.dim);
  std::mt19937_64 rng(spec.seed + 1);
  std::normal_distribution<float> g(0.0f, 0.01f);
  for (std::uint32_t d = 0; d < spec.dim; ++d) {
    m.row(7)[d] = target[d] + g(rng);
  }
  std::vector<std::string> captions(std::min<std::uint64_t>(spec.n, 5));
  captions[2] = kFixtureCaption;
  const auto staging = root.parent_path() / (root.filename().string() + ".inputs");
  const auto files = write_dataset_inputs(staging, m, captions);
  for (int i = 0; i < spec.images && static_cast<std::uint64_t>(i) < spec.n; ++i) {
    if (i == 1) {
      continue;
    }
    cv::Mat img(60 + 10 * i, 90, CV_8UC3, cv::Scalar(30 * i, 90, 200));
    cv::imwrite((staging / ("img" + std::to_string(i) + ".png")).string(), img);
  }

  IngestOptions opt;
  opt.vectors_file = files.vectors;
  opt.meta_file = files.meta;
  opt.captions_file = files.captions;
  opt.images_dir = staging;
  opt.out_root = root;
  opt.dataset_name = spec.name;
  ingest_embeddings(opt);
  fs::remove_all(staging);

  auto store = DatasetStore::open(root);
  save_projection(root, pca_project(store.normalized));
  store = DatasetStore::open(root);
  TilingConfig tc;
  tc.k = spec.k;
  tc.rng_seed = spec.seed;
  save_pyramid(root, build_pyramid(store.projected_points(), tc));
  const auto vectors = std::make_shared<const VectorMatrix>(std::move(store.normalized));
  save_index(root, *build_index(vectors, spec.index, HnswParams{}));
}

/// AtlasServer on an ephemeral port, served from a background thread.
class ServerHarness {
public:
  explicit ServerHarness(ServerConfig cfg) {
    cfg.port = 0;
    cfg.host = "127.0.0.1";
    if (!cfg.log) {
      cfg.log = [](const std::string &) {};
    }
    server_ = std::make_unique<AtlasServer>(std::move(cfg));
    port_ = server_->bind();
    thread_ = std::thread([this] { server_->listen(); });
    server_->wait_until_ready();
  }
  ~ServerHarness() {
    server_->stop();
    thread_.join();
  }
  ServerHarness(const ServerHarness &) = delete;
  ServerHarness &operator=(const ServerHarness &) = delete;

  AtlasServer &server() { return *server_; }

  httplib::Client client() const {
    httplib::Client c("127.0.0.1", port_);
    c.set_read_timeout(30, 0);
    return c;
  }

  httplib::Result get(const std::string &path) const { return client().Get(path); }

  httplib::Result post(const std::string &path, const std::string &body) const {
    return client().Post(path, body, "application/json");
  }

private:
  std::unique_ptr<AtlasServer> server_;
  int port_ = 0;
  std::thread thread_;
};

inline ServerConfig quiet_config(const fs::path &root) {
  ServerConfig cfg;
  cfg.datasets_root = root;
  cfg.use_mock_embedder = true;
  cfg.threads = 8;
  cfg.log = [](const std::string &) {};
  return cfg;
}

/// Checks `value` against the subset of JSON Schema used by the API schema:
/// type (string or list), required, properties, items, minItems, maxItems,
/// enum, minimum, maximum and local $ref. Returns one message per violation.
class SchemaChecker {
public:
  explicit SchemaChecker(nlohmann::json root) : root_(std::move(root)) {}

  std::vector<std::string> check(const std::string &def, const nlohmann::json &value) const {
    std::vector<std::string> errors;
    walk(resolve("#/$defs/" + def), value, "$", errors);
    return errors;
  }

private:
  const nlohmann::json &resolve(const std::string &ref) const {
    if (ref.rfind("#/$defs/", 0) != 0) {
      throw std::runtime_error("unsupported $ref " + ref);
    }
    return root_.at("$defs").at(ref.substr(8));
  }

  static bool has_type(const nlohmann::json &v, const std::string &t) {
    if (t == "object") return v.is_object();
    if (t == "array") return v.is_array();
    if (t == "string") return v.is_string();
    if (t == "integer") return v.is_number_integer();
    if (t == "number") return v.is_number();
    if (t == "boolean") return v.is_boolean();
    if (t == "null") return v.is_null();
    throw std::runtime_error("unknown schema type " + t);
  }

  void walk(const nlohmann::json &s, const nlohmann::json &v, const std::string &at,
            std::vector<std::string> &errors) const {
    if (s.contains("$ref")) {
      return walk(resolve(s["$ref"].get<std::string>()), v, at, errors);
    }
    if (s.contains("type")) {
      std::vector<std::string> types;
      if (s["type"].is_array()) {
        types = s["type"].get<std::vector<std::string>>();
      } else {
        types.push_back(s["type"].get<std::string>());
      }
      const bool ok = std::any_of(types.begin(), types.end(), [&](const std::string &t) { return has_type(v, t); });
      if (!ok) {
        errors.push_back(at + ": expected type " + s["type"].dump() + ", got " + v.dump().substr(0, 60));
        return;
      }
    }
    if (s.contains("enum")) {
      const auto &e = s["enum"];
      if (std::find(e.begin(), e.end(), v) == e.end()) {
        errors.push_back(at + ": " + v.dump() + " not in " + e.dump());
      }
    }
    if (v.is_number()) {
      if (s.contains("minimum") && v.get<double>() < s["minimum"].get<double>()) {
        errors.push_back(at + ": below minimum");
      }
      if (s.contains("maximum") && v.get<double>() > s["maximum"].get<double>()) {
        errors.push_back(at + ": above maximum");
      }
    }
    if (v.is_object()) {
      if (s.contains("required")) {
        for (const auto &r : s["required"]) {
          if (!v.contains(r.get<std::string>())) {
            errors.push_back(at + ": missing '" + r.get<std::string>() + "'");
          }
        }
      }
      if (s.contains("properties")) {
        for (const auto &[key, sub] : s["properties"].items()) {
          if (v.contains(key)) {
            walk(sub, v[key], at + "." + key, errors);
          }
        }
      }
    }
    if (v.is_array() && s.contains("minItems") && v.size() < s["minItems"].get<std::size_t>()) {
      errors.push_back(at + ": too few items");
    }
    if (v.is_array() && s.contains("maxItems") && v.size() > s["maxItems"].get<std::size_t>()) {
      errors.push_back(at + ": too many items");
    }
    if (v.is_array() && s.contains("items")) {
      for (std::size_t i = 0; i < v.size(); ++i) {
        walk(s["items"], v[i], at + "[" + std::to_string(i) + "]", errors);
      }
    }
  }

  nlohmann::json root_;
};

} // namespace aeye::testing
