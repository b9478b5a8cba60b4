#pragma once

/**
 * @file embedder.hpp
 * @brief Clients for the external text/image embedding service.
 *
 * Wire protocol (one endpoint):
 *
 *     POST <endpoint>/embed
 *     {"kind": "text" | "image", "data": "<UTF-8 text | base64 image bytes>"}
 *     -> 200 {"vector": [D numbers]}
 *
 * HttpEmbedder speaks this protocol; MockEmbedder derives a unit vector
 * deterministically from a hash of the payload and needs no service.
 */

#include "aeye/hashing.hpp"
#include "aeye/model.hpp"

#include "aeye/http.hpp"
#include <json.hpp>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <condition_variable>
#include <cstdint>
#include <memory>
#include <mutex>
#include <numbers>
#include <random>
#include <string>
#include <string_view>
#include <vector>

namespace aeye {

enum class EmbedKind { text, image };

inline std::string to_string(EmbedKind k) { return k == EmbedKind::text ? "text" : "image"; }

/// The embedding service could not be reached or timed out.
class EmbedderUnavailable : public Error {
public:
  explicit EmbedderUnavailable(const std::string &what) : Error(Kind::io, what) {}
};

/// The service answered with something other than a D-dimensional finite vector.
class EmbedderProtocolError : public Error {
public:
  explicit EmbedderProtocolError(const std::string &what) : Error(Kind::bad_input, what) {}
};

class Embedder {
public:
  virtual ~Embedder() = default;
  /// `payload` is UTF-8 text or raw image bytes.
  virtual std::vector<float> embed(EmbedKind kind, std::string_view payload) = 0;
  virtual std::uint32_t dimension() const noexcept = 0;
};

/// Checks a service response against the expected dimension.
inline std::vector<float> parse_embed_response(std::string_view body, std::uint32_t dim) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(body);
  } catch (const nlohmann::json::parse_error &e) {
    throw EmbedderProtocolError(std::string("embedder response is not valid JSON: ") + e.what());
  }
  if (!j.is_object() || !j.contains("vector") || !j["vector"].is_array()) {
    throw EmbedderProtocolError("embedder response lacks a 'vector' array");
  }
  const auto &arr = j["vector"];
  if (arr.size() != dim) {
    throw EmbedderProtocolError("embedder returned a vector of dimension " + std::to_string(arr.size()) +
                                ", expected " + std::to_string(dim));
  }
  std::vector<float> v;
  v.reserve(dim);
  for (const auto &x : arr) {
    if (!x.is_number()) {
      throw EmbedderProtocolError("embedder vector contains a non-numeric entry");
    }
    const auto f = x.get<double>();
    if (!std::isfinite(f)) {
      throw EmbedderProtocolError("embedder vector contains a non-finite entry");
    }
    v.push_back(static_cast<float>(f));
  }
  return v;
}

/// Counting semaphore bounding concurrent calls to the embedding service.
/// Several clients (one per vector dimension) may share one limiter.
class InFlightLimit {
public:
  explicit InFlightLimit(unsigned max_in_flight) : max_(std::max(1u, max_in_flight)) {}

  void acquire() {
    std::unique_lock lock(mu_);
    cv_.wait(lock, [&] { return in_flight_ < max_; });
    ++in_flight_;
  }

  void release() {
    {
      std::lock_guard lock(mu_);
      --in_flight_;
    }
    cv_.notify_one();
  }

  unsigned max() const noexcept { return max_; }

private:
  unsigned max_;
  std::mutex mu_;
  std::condition_variable cv_;
  unsigned in_flight_ = 0;
};

class HttpEmbedder final : public Embedder {
public:
  struct Options {
    std::string endpoint_url;
    std::uint32_t dimension = 512;
    std::chrono::milliseconds timeout{10'000};
    unsigned max_in_flight = 4;
    /// When set, overrides max_in_flight and is shared with other clients.
    std::shared_ptr<InFlightLimit> limit;
  };

  explicit HttpEmbedder(Options opt) : opt_(std::move(opt)) {
    const auto scheme = opt_.endpoint_url.find("://");
    const auto path_start = opt_.endpoint_url.find('/', scheme == std::string::npos ? 0 : scheme + 3);
    if (path_start == std::string::npos) {
      base_ = opt_.endpoint_url;
    } else {
      base_ = opt_.endpoint_url.substr(0, path_start);
      prefix_ = opt_.endpoint_url.substr(path_start);
      while (!prefix_.empty() && prefix_.back() == '/') {
        prefix_.pop_back();
      }
    }
    if (!opt_.limit) {
      opt_.limit = std::make_shared<InFlightLimit>(opt_.max_in_flight);
    }
  }

  std::uint32_t dimension() const noexcept override { return opt_.dimension; }

  std::vector<float> embed(EmbedKind kind, std::string_view payload) override {
    if (payload.empty()) {
      throw bad_input("empty " + to_string(kind) + " query");
    }
    nlohmann::json body{{"kind", to_string(kind)},
                        {"data", kind == EmbedKind::text ? std::string(payload) : base64_encode(payload)}};
    InFlight slot(*opt_.limit);
    httplib::Client cli(base_);
    const auto secs = std::chrono::duration_cast<std::chrono::seconds>(opt_.timeout);
    const auto usecs = std::chrono::duration_cast<std::chrono::microseconds>(opt_.timeout - secs);
    cli.set_connection_timeout(secs.count(), usecs.count());
    cli.set_read_timeout(secs.count(), usecs.count());
    cli.set_write_timeout(secs.count(), usecs.count());
    const auto res = cli.Post(prefix_ + "/embed", body.dump(), "application/json");
    if (!res) {
      throw EmbedderUnavailable("embedder at " + opt_.endpoint_url + " unavailable: " +
                                httplib::to_string(res.error()));
    }
    if (res->status >= 500) {
      throw EmbedderUnavailable("embedder at " + opt_.endpoint_url + " answered HTTP " +
                                std::to_string(res->status));
    }
    if (res->status != 200) {
      throw EmbedderProtocolError("embedder answered HTTP " + std::to_string(res->status));
    }
    return parse_embed_response(res->body, opt_.dimension);
  }

private:
  class InFlight {
  public:
    explicit InFlight(InFlightLimit &l) : l_(l) { l_.acquire(); }
    ~InFlight() { l_.release(); }
    InFlight(const InFlight &) = delete;
    InFlight &operator=(const InFlight &) = delete;

  private:
    InFlightLimit &l_;
  };

  Options opt_;
  std::string base_;
  std::string prefix_;
};

/// Deterministic offline stand-in: the payload's FNV-1a hash seeds a
/// Gaussian vector which is then unit-normalized.
class MockEmbedder final : public Embedder {
public:
  explicit MockEmbedder(std::uint32_t dimension) : dim_(dimension) {}

  static std::vector<float> vector_for(EmbedKind kind, std::string_view payload, std::uint32_t dim) {
    std::mt19937_64 rng(mix64(fnv1a64(payload) ^ (kind == EmbedKind::text ? 0x7465787400ULL : 0x696d616765ULL)));
    std::vector<double> v(dim);
    double sq = 0.0;
    for (auto &x : v) {
      // Box-Muller on our own uniform stream keeps results library independent.
      const double u1 = 1.0 - uniform01(rng);
      const double u2 = uniform01(rng);
      x = std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
      sq += x * x;
    }
    std::vector<float> out(dim);
    const double inv = 1.0 / std::sqrt(sq);
    for (std::size_t i = 0; i < dim; ++i) {
      out[i] = static_cast<float>(v[i] * inv);
    }
    return out;
  }

  std::vector<float> embed(EmbedKind kind, std::string_view payload) override {
    if (payload.empty()) {
      throw bad_input("empty " + to_string(kind) + " query");
    }
    return vector_for(kind, payload, dim_);
  }

  std::uint32_t dimension() const noexcept override { return dim_; }

private:
  std::uint32_t dim_;
};

/// Registers POST /embed on `server`, answering with `embedder`. Used to
/// expose the mock over the real protocol.
inline void serve_embedder(httplib::Server &server, Embedder &embedder) {
  server.Post("/embed", [&embedder](const httplib::Request &req, httplib::Response &res) {
    try {
      const auto j = nlohmann::json::parse(req.body);
      const auto kind_s = j.at("kind").get<std::string>();
      const auto data = j.at("data").get<std::string>();
      EmbedKind kind;
      if (kind_s == "text") {
        kind = EmbedKind::text;
      } else if (kind_s == "image") {
        kind = EmbedKind::image;
      } else {
        throw bad_input("unknown kind");
      }
      const auto v = embedder.embed(kind, kind == EmbedKind::text ? data : base64_decode(data));
      res.set_content(nlohmann::json{{"vector", v}}.dump(), "application/json");
    } catch (const std::exception &e) {
      res.status = 400;
      res.set_content(nlohmann::json{{"error", e.what()}}.dump(), "application/json");
    }
  });
}

} // namespace aeye
