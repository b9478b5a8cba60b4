#include "aeye/hashing.hpp"
#include "aeye/server.hpp"

#include "api_fixture.hpp"
#include "oracles.hpp"
#include "test_util.hpp"

#include <gtest/gtest.h>

#include <future>
#include <mutex>
#include <set>

using namespace aeye;
using namespace aeye::testing;
using nlohmann::json;

namespace {

class ServerTest : public ::testing::Test {
protected:
  static void SetUpTestSuite() {
    dir_ = new TempDir("aeye-server");
    FixtureSpec a;
    a.name = "alpha";
    build_fixture_store(*dir_ / "alpha", a);
    FixtureSpec b;
    b.name = "beta";
    b.n = 120;
    b.dim = 8;
    b.k = 4;
    b.index = IndexKind::hnsw;
    b.images = 0;
    build_fixture_store(*dir_ / "beta", b);
    fs::create_directories(*dir_ / "broken");
    write_file(*dir_ / "broken/manifest.json", "{ not json");
    log_ = new std::vector<std::string>;
    auto cfg = quiet_config(dir_->path());
    cfg.log = [](const std::string &line) {
      static std::mutex mu;
      std::lock_guard lock(mu);
      log_->push_back(line);
    };
    harness_ = new ServerHarness(cfg);
    schema_ = new SchemaChecker(json::parse(harness_->get("/api/schema")->body));
  }

  static void TearDownTestSuite() {
    delete schema_;
    delete harness_;
    delete log_;
    delete dir_;
  }

  static json get_json(const std::string &path, int expect_status = 200) {
    const auto res = harness_->get(path);
    EXPECT_TRUE(res) << path;
    if (!res) {
      return nullptr;
    }
    EXPECT_EQ(res->status, expect_status) << path << ": " << res->body;
    return json::parse(res->body);
  }

  static json post_json(const std::string &path, const json &body, int expect_status = 200) {
    const auto res = harness_->post(path, body.dump());
    EXPECT_TRUE(res) << path;
    if (!res) {
      return nullptr;
    }
    EXPECT_EQ(res->status, expect_status) << path << ": " << res->body;
    return json::parse(res->body);
  }

  static void expect_valid(const std::string &def, const json &v) {
    const auto errors = schema_->check(def, v);
    for (const auto &e : errors) {
      ADD_FAILURE() << def << ": " << e;
    }
  }

  static const DatasetStore &alpha() {
    return harness_->server().datasets().at("alpha").store;
  }

  // The served store hands its normalized matrix over to the index.
  static const VectorMatrix &alpha_vectors() {
    return harness_->server().datasets().at("alpha").index->vectors();
  }

  static TempDir *dir_;
  static ServerHarness *harness_;
  static std::vector<std::string> *log_;
  static SchemaChecker *schema_;
};

TempDir *ServerTest::dir_ = nullptr;
ServerHarness *ServerTest::harness_ = nullptr;
std::vector<std::string> *ServerTest::log_ = nullptr;
SchemaChecker *ServerTest::schema_ = nullptr;

} // namespace

TEST_F(ServerTest, Health) {
  EXPECT_EQ(get_json("/healthz")["status"], "ok");
}

TEST_F(ServerTest, ListsLoadableDatasetsAndLogsTheBrokenOne) {
  const auto list = get_json("/api/datasets");
  expect_valid("dataset_list", list);
  ASSERT_EQ(list.size(), 2u);
  EXPECT_EQ(list[0]["name"], "alpha");
  EXPECT_EQ(list[0]["item_count"], 300);
  EXPECT_EQ(list[0]["k"], 8);
  EXPECT_EQ(list[1]["name"], "beta");
  EXPECT_EQ(list[1]["index_kind"], "hnsw");
  const bool logged = std::any_of(log_->begin(), log_->end(), [](const std::string &l) {
    return l.find("skipping dataset 'broken'") != std::string::npos;
  });
  EXPECT_TRUE(logged);
}

TEST_F(ServerTest, Manifest) {
  const auto m = get_json("/api/datasets/alpha/manifest");
  expect_valid("manifest", m);
  const auto &served = harness_->server().datasets().at("alpha");
  EXPECT_EQ(m["depth"], served.pyramid->depth);
  EXPECT_EQ(m["per_layer_nonempty_tile_counts"].size(), static_cast<std::size_t>(served.pyramid->depth) + 1);
  EXPECT_EQ(m["item_count"], 300);
  EXPECT_EQ(m["projection_method"], "pca");
  EXPECT_EQ(get_json("/api/datasets/nope/manifest", 404)["error"], "unknown_dataset");
}

TEST_F(ServerTest, TileRangeChecks) {
  const auto root = get_json("/api/datasets/alpha/tiles/0/0/0");
  expect_valid("tile", root);
  EXPECT_LE(root["representatives"].size(), 8u);
  EXPECT_FALSE(root["representatives"].empty());
  EXPECT_EQ(get_json("/api/datasets/alpha/tiles/2/4/0", 400)["error"], "tile_out_of_range");
  EXPECT_EQ(get_json("/api/datasets/alpha/tiles/0/0/1", 400)["error"], "tile_out_of_range");
  const int depth = harness_->server().datasets().at("alpha").pyramid->depth;
  EXPECT_EQ(get_json("/api/datasets/alpha/tiles/" + std::to_string(depth + 1) + "/0/0", 400)["error"],
            "layer_out_of_range");
  get_json("/api/datasets/alpha/tiles/-1/0/0", 400);
  get_json("/api/datasets/alpha/tiles/x/0/0", 400);
  get_json("/api/datasets/nope/tiles/0/0/0", 404);
}

TEST_F(ServerTest, DeepestLayerSweepCoversEveryItemAndEmptyTilesAre200) {
  const auto &served = harness_->server().datasets().at("alpha");
  const int depth = served.pyramid->depth;
  const std::int64_t grid = std::int64_t{1} << depth;
  std::multiset<ItemId> seen;
  std::size_t empty = 0;
  for (std::int64_t ix = 0; ix < grid; ++ix) {
    for (std::int64_t iy = 0; iy < grid; ++iy) {
      const auto t = get_json("/api/datasets/alpha/tiles/" + std::to_string(depth) + "/" + std::to_string(ix) + "/" +
                              std::to_string(iy));
      empty += t["representatives"].empty();
      for (const auto &r : t["representatives"]) {
        seen.insert(r["id"].get<ItemId>());
        const double x = r["x"];
        const double y = r["y"];
        EXPECT_EQ(tile_for_point(x, y, depth), (TileKey{depth, ix, iy}));
      }
    }
  }
  EXPECT_EQ(seen.size(), 300u);
  for (ItemId id = 0; id < 300; ++id) {
    EXPECT_EQ(seen.count(id), 1u) << id;
  }
  // Clustered data on a fine grid leaves gaps.
  EXPECT_GT(empty, 0u);
}

TEST_F(ServerTest, TileResponsesAreByteIdenticalAndCacheable) {
  const auto a = harness_->get("/api/datasets/alpha/tiles/1/0/1");
  const auto b = harness_->get("/api/datasets/alpha/tiles/1/0/1");
  ASSERT_TRUE(a && b);
  EXPECT_EQ(a->body, b->body);
  EXPECT_NE(a->get_header_value("Cache-Control").find("max-age"), std::string::npos);
}

TEST_F(ServerTest, ItemDetail) {
  const auto item = get_json("/api/datasets/alpha/items/2");
  expect_valid("item", item);
  EXPECT_EQ(item["caption"], kFixtureCaption);
  EXPECT_TRUE(item["has_caption"].get<bool>());
  EXPECT_EQ(item["metadata"]["label"], "class2");
  EXPECT_NEAR(item["position"]["x"].get<double>(), alpha().positions[2].x, 1e-12);
  EXPECT_EQ(item["thumbnails"]["128"], "/media/alpha/2/128");

  const auto plain = get_json("/api/datasets/alpha/items/40");
  EXPECT_TRUE(plain["caption"].is_null());
  EXPECT_FALSE(plain["has_caption"].get<bool>());

  get_json("/api/datasets/alpha/items/300", 404);
  get_json("/api/datasets/alpha/items/abc", 404);
}

TEST_F(ServerTest, NeighborsExcludeSelfAndMatchTheOracle) {
  for (ItemId id : {0u, 7u, 123u, 299u}) {
    const auto item = get_json("/api/datasets/alpha/items/" + std::to_string(id));
    const auto row = alpha_vectors().row(id);
    auto expected = oracle::brute_force_ranking(alpha_vectors(), {row.begin(), row.end()}, 10);
    std::erase(expected, id);
    expected.resize(9);
    std::vector<ItemId> got;
    for (const auto &h : item["neighbors"]) {
      got.push_back(h["id"]);
    }
    EXPECT_EQ(got, expected) << "item " << id;
  }
}

TEST_F(ServerTest, SearchExamples) {
  const auto by_item = post_json("/api/datasets/alpha/search", {{"kind", "item"}, {"id", 11}, {"n", 5}});
  expect_valid("search_result", by_item);
  ASSERT_EQ(by_item["results"].size(), 5u);
  for (const auto &h : by_item["results"]) {
    EXPECT_NE(h["id"], 11);
  }

  const auto row = alpha_vectors().row(42);
  const auto by_vector =
      post_json("/api/datasets/alpha/search", {{"kind", "vector"}, {"vector", std::vector<float>(row.begin(), row.end())}});
  expect_valid("search_result", by_vector);
  EXPECT_EQ(by_vector["results"][0]["id"], 42);
  EXPECT_NEAR(by_vector["results"][0]["similarity"].get<double>(), 1.0, 1e-6);

  const auto by_text = post_json("/api/datasets/alpha/search", {{"kind", "text"}, {"text", kFixtureQuery}});
  expect_valid("search_result", by_text);
  EXPECT_EQ(by_text["results"][0]["id"], 7);
  EXPECT_EQ(by_text["results"].size(), 9u);
  EXPECT_EQ(by_text["best_match"]["id"], 7);
  EXPECT_NEAR(by_text["best_match"]["x"].get<double>(), alpha().positions[7].x, 1e-12);
  EXPECT_NEAR(by_text["best_match"]["y"].get<double>(), alpha().positions[7].y, 1e-12);

  const auto by_image = post_json("/api/datasets/alpha/search", {{"kind", "image"}, {"image", base64_encode("pixels")}});
  EXPECT_EQ(by_image["results"].size(), 9u);
}

TEST_F(ServerTest, SearchErrors) {
  EXPECT_EQ(post_json("/api/datasets/alpha/search", {{"kind", "smell"}, {"text", "x"}}, 400)["error"], "bad_request");
  const auto bad = harness_->post("/api/datasets/alpha/search", "{kind:");
  ASSERT_TRUE(bad);
  EXPECT_EQ(bad->status, 400);
  post_json("/api/datasets/alpha/search", {{"kind", "text"}}, 400);
  post_json("/api/datasets/alpha/search", {{"kind", "text"}, {"text", "x"}, {"n", 0}}, 400);
  post_json("/api/datasets/alpha/search", {{"kind", "text"}, {"text", "x"}, {"n", 101}}, 400);
  post_json("/api/datasets/alpha/search", {{"kind", "vector"}, {"vector", {1, 2}}}, 400);
  post_json("/api/datasets/alpha/search", {{"kind", "item"}, {"id", 5000}}, 404);
  post_json("/api/datasets/nope/search", {{"kind", "item"}, {"id", 1}}, 404);
  const std::string big(kMaxImageBytes + 16, 'x');
  EXPECT_EQ(post_json("/api/datasets/alpha/search", {{"kind", "image"}, {"image", base64_encode(big)}}, 413)["error"],
            "payload_too_large");
}

TEST_F(ServerTest, MediaAssetsAndPlaceholders) {
  const auto thumb = harness_->get("/media/alpha/0/128");
  ASSERT_TRUE(thumb);
  EXPECT_EQ(thumb->status, 200);
  EXPECT_EQ(thumb->get_header_value("Content-Type"), "image/jpeg");
  EXPECT_FALSE(thumb->has_header(kPlaceholderHeader));
  EXPECT_NE(thumb->get_header_value("Cache-Control").find("max-age=31536000"), std::string::npos);
  EXPECT_EQ(thumb->body, read_file(alpha().thumbnail_asset(0, 128)));

  const auto original = harness_->get("/media/alpha/2/original");
  ASSERT_TRUE(original);
  EXPECT_EQ(original->get_header_value("Content-Type"), "image/png");
  EXPECT_EQ(original->body, read_file(alpha().original_asset(2)));

  for (const char *path : {"/media/alpha/1/32", "/media/alpha/1/original", "/media/alpha/250/512"}) {
    const auto ph = harness_->get(path);
    ASSERT_TRUE(ph);
    EXPECT_EQ(ph->status, 200) << path;
    EXPECT_EQ(ph->get_header_value(kPlaceholderHeader), "1") << path;
    EXPECT_EQ(ph->get_header_value("Content-Type"), "image/png");
  }
  get_json("/media/alpha/0/64", 400);
  get_json("/media/alpha/300/32", 404);
  get_json("/media/nope/0/32", 404);
}

TEST_F(ServerTest, RequestsNeverModifyTheStores) {
  const auto before_a = directory_digest(*dir_ / "alpha");
  const auto before_b = directory_digest(*dir_ / "beta");
  get_json("/api/datasets");
  get_json("/api/datasets/alpha/manifest");
  get_json("/api/datasets/alpha/tiles/0/0/0");
  get_json("/api/datasets/beta/items/3");
  post_json("/api/datasets/beta/search", {{"kind", "text"}, {"text", "hello"}});
  post_json("/api/datasets/alpha/search", {{"kind", "item"}, {"id", 3}});
  harness_->get("/media/alpha/0/512");
  harness_->get("/media/alpha/1/512");
  EXPECT_EQ(directory_digest(*dir_ / "alpha"), before_a);
  EXPECT_EQ(directory_digest(*dir_ / "beta"), before_b);
}

TEST_F(ServerTest, ConcurrentRequestsMatchSerialOnes) {
  std::vector<std::pair<std::string, std::string>> requests; // path, POST body ("" = GET)
  for (int i = 0; i < 64; ++i) {
    switch (i % 6) {
    case 0:
      requests.emplace_back("/api/datasets/alpha/tiles/1/" + std::to_string(i % 2) + "/" + std::to_string(i / 2 % 2), "");
      break;
    case 1:
      requests.emplace_back("/api/datasets/alpha/items/" + std::to_string(i * 3), "");
      break;
    case 2:
      requests.emplace_back("/api/datasets/beta/search", json{{"kind", "text"}, {"text", "t" + std::to_string(i)}}.dump());
      break;
    case 3:
      requests.emplace_back("/media/alpha/" + std::to_string(i % 4) + "/32", "");
      break;
    case 4:
      requests.emplace_back("/api/datasets/alpha/search", json{{"kind", "item"}, {"id", i}, {"n", 20}}.dump());
      break;
    default:
      requests.emplace_back("/api/datasets", "");
    }
  }
  auto run = [&](std::size_t i) {
    const auto &[path, body] = requests[i];
    const auto res = body.empty() ? harness_->get(path) : harness_->post(path, body);
    return res ? std::to_string(res->status) + "\n" + res->body : "transport error: " + httplib::to_string(res.error());
  };
  std::vector<std::string> serial;
  for (std::size_t i = 0; i < requests.size(); ++i) {
    serial.push_back(run(i));
  }
  std::vector<std::future<std::string>> parallel;
  for (std::size_t i = 0; i < requests.size(); ++i) {
    parallel.push_back(std::async(std::launch::async, run, i));
  }
  for (std::size_t i = 0; i < requests.size(); ++i) {
    EXPECT_EQ(parallel[i].get(), serial[i]) << requests[i].first;
  }
}

TEST(ServerStartup, NoDatasetsFailsUnlessAllowed) {
  TempDir dir;
  try {
    AtlasServer server(quiet_config(dir.path()));
    FAIL() << "expected startup to fail";
  } catch (const Error &e) {
    EXPECT_EQ(e.exit_code(), 3);
  }
  auto cfg = quiet_config(dir.path());
  cfg.allow_empty = true;
  ServerHarness h(cfg);
  const auto res = h.get("/api/datasets");
  ASSERT_TRUE(res);
  EXPECT_EQ(res->body, "[]");
}

TEST(ServerStartup, ServesASingleStoreRoot) {
  TempDir dir;
  FixtureSpec spec;
  spec.n = 40;
  spec.images = 0;
  build_fixture_store(dir / "solo", spec);
  ServerHarness h(quiet_config(dir / "solo"));
  const auto list = json::parse(h.get("/api/datasets")->body);
  ASSERT_EQ(list.size(), 1u);
  EXPECT_EQ(list[0]["name"], "solo");
}

TEST(ServerEmbedder, DownServiceGives503WhileOtherQueriesWork) {
  TempDir dir;
  FixtureSpec spec;
  spec.n = 50;
  spec.images = 0;
  build_fixture_store(dir / "ds", spec);
  int closed = 0;
  {
    httplib::Server probe;
    closed = probe.bind_to_any_port("127.0.0.1");
  }
  for (bool configured : {true, false}) {
    auto cfg = quiet_config(dir.path());
    cfg.use_mock_embedder = false;
    if (configured) {
      cfg.embedder_url = "http://127.0.0.1:" + std::to_string(closed);
      cfg.embedder_timeout = std::chrono::milliseconds(500);
    }
    ServerHarness h(cfg);
    const auto text = h.post("/api/datasets/ds/search", R"({"kind":"text","text":"q7"})");
    ASSERT_TRUE(text);
    EXPECT_EQ(text->status, 503);
    EXPECT_EQ(json::parse(text->body)["error"], "embedder_unavailable");
    EXPECT_TRUE(text->has_header("Retry-After"));
    const auto item = h.post("/api/datasets/ds/search", R"({"kind":"item","id":3})");
    ASSERT_TRUE(item);
    EXPECT_EQ(item->status, 200);
    EXPECT_EQ(h.get("/api/datasets/ds/items/3")->status, 200);
  }
}

TEST(ServerEmbedder, TalksToARealServiceOverHttp) {
  TempDir dir;
  FixtureSpec spec;
  spec.n = 50;
  spec.images = 0;
  build_fixture_store(dir / "ds", spec);
  MockEmbedder mock(spec.dim);
  httplib::Server service;
  serve_embedder(service, mock);
  const int port = service.bind_to_any_port("127.0.0.1");
  std::thread t([&] { service.listen_after_bind(); });
  service.wait_until_ready();
  {
    auto cfg = quiet_config(dir.path());
    cfg.use_mock_embedder = false;
    cfg.embedder_url = "http://127.0.0.1:" + std::to_string(port);
    ServerHarness h(cfg);
    const auto res = h.post("/api/datasets/ds/search", R"({"kind":"text","text":"q7"})");
    ASSERT_TRUE(res);
    ASSERT_EQ(res->status, 200) << res->body;
    EXPECT_EQ(json::parse(res->body)["results"][0]["id"], 7);
  }
  service.stop();
  t.join();
}

TEST(ServerCors, AllowlistAndWildcard) {
  TempDir dir;
  FixtureSpec spec;
  spec.n = 30;
  spec.images = 0;
  build_fixture_store(dir / "ds", spec);
  auto cfg = quiet_config(dir.path());
  cfg.cors_allowlist = {"http://localhost:5173"};
  {
    ServerHarness h(cfg);
    auto c = h.client();
    auto ok = c.Get("/api/datasets", {{"Origin", "http://localhost:5173"}});
    ASSERT_TRUE(ok);
    EXPECT_EQ(ok->get_header_value("Access-Control-Allow-Origin"), "http://localhost:5173");
    auto other = c.Get("/api/datasets", {{"Origin", "http://evil.example"}});
    ASSERT_TRUE(other);
    EXPECT_FALSE(other->has_header("Access-Control-Allow-Origin"));
    auto same = c.Get("/api/datasets");
    EXPECT_FALSE(same->has_header("Access-Control-Allow-Origin"));
    auto pre = c.Options("/api/datasets/ds/search", {{"Origin", "http://localhost:5173"},
                                                     {"Access-Control-Request-Method", "POST"}});
    ASSERT_TRUE(pre);
    EXPECT_EQ(pre->status, 204);
    EXPECT_EQ(pre->get_header_value("Access-Control-Allow-Origin"), "http://localhost:5173");
    EXPECT_NE(pre->get_header_value("Access-Control-Allow-Methods").find("POST"), std::string::npos);
  }
  cfg.cors_allowlist.clear();
  cfg.cors_allow_any = true;
  ServerHarness h(cfg);
  auto res = h.client().Get("/healthz", {{"Origin", "http://anything.example"}});
  ASSERT_TRUE(res);
  EXPECT_EQ(res->get_header_value("Access-Control-Allow-Origin"), "*");
}

TEST(ServerSchema, CheckerRejectsBadShapes) {
  const SchemaChecker schema(json::parse(kApiSchema));
  EXPECT_TRUE(schema.check("tile", json{{"layer", 0}, {"ix", 0}, {"iy", 0}, {"representatives", json::array()}}).empty());
  EXPECT_FALSE(schema.check("tile", json{{"layer", 0}, {"ix", 0}}).empty());
  EXPECT_FALSE(schema.check("tile", json{{"layer", -1}, {"ix", 0}, {"iy", 0}, {"representatives", json::array()}}).empty());
  EXPECT_FALSE(schema.check("dataset_list", json{{{"name", 3}}}).empty());
}
