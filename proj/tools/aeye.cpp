// aeye: batch pipeline driver and server launcher.
//
//   aeye ingest   --vectors v.aev --meta m.tsv [--captions c.tsv] [--images dir] --out store/
//   aeye project  --store store/ [--method pca|external] [--coords xy.aec]
//   aeye tile     --store store/ [--k 25] [--seed 0]
//   aeye index    --store store/ [--kind hnsw|flat] [--M 16] [--ef-construction 200] [--seed 42]
//   aeye validate --store store/
//   aeye export   --store store/ --out atlas.tar
//   aeye serve    --root datasets/ [--port 8080] [--embedder-url URL | --mock-embedder]
//
// Exit codes: 0 ok, 2 bad flags or contract violation, 3 missing stage,
// 4 validation failure, 5 bad input or I/O.

#include "aeye/aeye.hpp"

#include <CLI11.hpp>

#include <chrono>
#include <csignal>
#include <pthread.h>
#include <thread>
#include <cstdlib>
#include <iostream>

namespace {

using namespace aeye;

void log_line(const std::string &line) { std::cerr << line << std::endl; }

/// Logs `stage=<name> elapsed_ms=<ms>` when it goes out of scope.
class StageTimer {
public:
  explicit StageTimer(std::string name) : name_(std::move(name)), start_(std::chrono::steady_clock::now()) {}
  ~StageTimer() {
    const auto ms = std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - start_).count();
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.1f", ms);
    log_line("stage=" + name_ + " elapsed_ms=" + buf);
  }

private:
  std::string name_;
  std::chrono::steady_clock::time_point start_;
};

void log_param(const std::string &name, const std::string &value, bool defaulted) {
  log_line("param " + name + "=" + value + (defaulted ? " (default)" : ""));
}

struct IngestArgs {
  std::string vectors, meta, captions, images, out, name;
  unsigned threads = default_thread_count();
};

struct ProjectArgs {
  std::string store, method = "pca", coords;
};

struct TileArgs {
  std::string store;
  std::uint32_t k = 25;
  std::uint64_t seed = 0;
  int max_iterations = 50;
  double eps = 1e-6;
  int max_depth = 16;
  unsigned threads = default_thread_count();
};

struct IndexArgs {
  std::string store, kind = "hnsw";
  HnswParams hnsw;
};

struct ValidateArgs {
  std::string store;
  std::size_t spot_checks = 64;
  std::uint64_t seed = 1;
};

struct ExportArgs {
  std::string store, out;
};

struct ServeArgs {
  std::string root, host = "127.0.0.1", embedder_url;
  int port = 8080;
  bool mock = false, cors_any = false, allow_empty = false;
  std::vector<std::string> cors;
  long media_max_age = 31'536'000;
  unsigned threads = std::max(8u, default_thread_count());
};

int run_ingest(const IngestArgs &a) {
  IngestOptions opt;
  opt.vectors_file = a.vectors;
  opt.meta_file = a.meta;
  if (!a.captions.empty()) {
    opt.captions_file = a.captions;
  }
  if (!a.images.empty()) {
    opt.images_dir = a.images;
  }
  opt.out_root = a.out;
  opt.dataset_name = a.name;
  opt.threads = a.threads;
  fs::create_directories(opt.out_root);
  StoreLock lock(opt.out_root);
  IngestReport report;
  {
    StageTimer t("ingest");
    report = ingest_embeddings(opt, [](const std::string &w) { log_line("warning: " + w); });
  }
  log_line("ingested n=" + std::to_string(report.item_count) + " dim=" + std::to_string(report.dimension) +
           " thumbnails=" + std::to_string(report.thumbnails_written) + " into " + a.out);
  return 0;
}

int run_project(const ProjectArgs &a) {
  StoreLock lock(a.store);
  const auto m = read_manifest(a.store);
  ProjectionResult r;
  {
    StageTimer t("project");
    if (a.method == "pca") {
      r = pca_project(read_vector_file(fs::path(a.store) / store_files::vectors));
    } else {
      if (a.coords.empty()) {
        throw contract_violation("project --method external needs --coords");
      }
      r = load_external_coords(a.coords, m.item_count);
    }
    save_projection(a.store, r);
  }
  if (r.rank_deficient()) {
    log_line("warning: projection is rank deficient (rank " + std::to_string(r.rank) + ")");
  }
  log_line("projected n=" + std::to_string(r.points.size()) + " method=" + a.method);
  return 0;
}

int run_tile(const TileArgs &a, const CLI::App &cmd) {
  StoreLock lock(a.store);
  const auto m = read_manifest(a.store);
  if (!m.projected()) {
    throw missing_stage(a.store + ": no positions; run project first");
  }
  TilingConfig cfg;
  cfg.k = a.k;
  cfg.rng_seed = a.seed;
  cfg.max_iterations = a.max_iterations;
  cfg.convergence_eps = a.eps;
  cfg.max_depth_cap = a.max_depth;
  cfg.threads = a.threads;
  cfg.check();
  log_param("k", std::to_string(a.k), cmd.count("--k") == 0);
  log_param("seed", std::to_string(a.seed), cmd.count("--seed") == 0);
  TilePyramid p;
  {
    StageTimer t("tile");
    const auto positions = read_coords_file(fs::path(a.store) / store_files::positions);
    std::vector<ProjectedPoint> pts(positions.size());
    for (std::size_t i = 0; i < pts.size(); ++i) {
      pts[i] = {i, positions[i].x, positions[i].y};
    }
    p = build_pyramid(pts, cfg);
    save_pyramid(a.store, p);
  }
  if (p.depth_capped) {
    log_line("warning: depth cap " + std::to_string(a.max_depth) + " reached; final layer tiles may exceed k");
  }
  log_line("tiled depth=" + std::to_string(p.depth) + " digest=" + pyramid_digest(p));
  return 0;
}

int run_index(const IndexArgs &a, const CLI::App &cmd) {
  StoreLock lock(a.store);
  const auto kind = index_kind_from_string(a.kind);
  const auto m = read_manifest(a.store);
  if (kind == IndexKind::hnsw) {
    log_param("M", std::to_string(a.hnsw.M), cmd.count("--M") == 0);
    log_param("ef_construction", std::to_string(a.hnsw.ef_construction), cmd.count("--ef-construction") == 0);
    log_param("ef_search", std::to_string(a.hnsw.ef_search), cmd.count("--ef-search") == 0);
    log_param("seed", std::to_string(a.hnsw.seed), cmd.count("--seed") == 0);
  }
  StageTimer t("index");
  auto vectors = std::make_shared<const VectorMatrix>(read_vector_file(fs::path(a.store) / store_files::normalized));
  if (vectors->rows != m.item_count) {
    throw bad_input(a.store + ": normalized vectors disagree with the manifest");
  }
  const auto index = build_index(std::move(vectors), kind, a.hnsw);
  save_index(a.store, *index);
  log_line("indexed kind=" + a.kind + " n=" + std::to_string(index->size()));
  return 0;
}

int run_validate(const ValidateArgs &a) {
  StoreLock lock(a.store);
  StageTimer t("validate");
  const auto store = DatasetStore::open(a.store);
  ValidationReport report;
  for (std::uint64_t i = 0; i < store.size(); ++i) {
    double sq = 0.0;
    for (float x : store.normalized.row(i)) {
      sq += static_cast<double>(x) * x;
    }
    if (std::abs(std::sqrt(sq) - 1.0) > 1e-6) {
      report.fail("item " + std::to_string(i) + ": normalized vector has norm " + std::to_string(std::sqrt(sq)));
    }
  }
  if (store.manifest.tiled) {
    const auto pyramid = load_pyramid(a.store, store.manifest);
    report.merge(validate_pyramid(pyramid, store.positions));
    if (pyramid.nonempty_tile_counts() != store.manifest.per_layer_nonempty_tile_counts) {
      report.fail("manifest tile counts disagree with the stored pyramid");
    }
  } else {
    log_line("no tile pyramid; skipping pyramid checks");
  }
  const auto vectors = std::make_shared<const VectorMatrix>(store.normalized);
  const auto index = load_index(a.store, store.manifest, vectors);
  IndexCheckConfig icfg;
  icfg.samples = a.spot_checks;
  icfg.seed = a.seed;
  report.merge(validate_index(*index, icfg));
  for (const auto &v : report.violations) {
    log_line("violation: " + v);
  }
  if (!report.ok()) {
    throw Error(Error::Kind::validation, std::to_string(report.violations.size()) + " violation(s); first: " +
                                             report.violations.front());
  }
  log_line("valid: " + std::to_string(report.tiles_checked) + " tiles, " + std::to_string(icfg.samples) +
           " index spot checks");
  return 0;
}

int run_export(const ExportArgs &a) {
  StoreLock lock(a.store);
  StageTimer t("export");
  const auto entries = export_entries(a.store);
  write_file(a.out, write_tar(entries));
  log_line("exported " + std::to_string(entries.size()) + " files to " + a.out);
  return 0;
}

int run_serve(const ServeArgs &a) {
  ServerConfig cfg;
  cfg.host = a.host;
  cfg.port = a.port;
  cfg.datasets_root = a.root;
  cfg.media_max_age = a.media_max_age;
  cfg.use_mock_embedder = a.mock;
  if (!a.embedder_url.empty()) {
    cfg.embedder_url = a.embedder_url;
  } else if (const char *env = std::getenv("AEYE_EMBEDDER_URL"); env != nullptr && *env != '\0') {
    cfg.embedder_url = env;
  }
  if (!cfg.embedder_url && !cfg.use_mock_embedder) {
    log_line("warning: no embedder configured; text and image search will answer 503");
  }
  cfg.cors_allowlist = a.cors;
  cfg.cors_allow_any = a.cors_any;
  cfg.allow_empty = a.allow_empty;
  cfg.threads = a.threads;
  cfg.log = log_line;
  // Block the shutdown signals before any server thread exists; one thread waits for them.
  sigset_t shutdown;
  sigemptyset(&shutdown);
  sigaddset(&shutdown, SIGINT);
  sigaddset(&shutdown, SIGTERM);
  pthread_sigmask(SIG_BLOCK, &shutdown, nullptr);

  AtlasServer server(cfg);
  const int port = server.bind();
  std::cout << "port=" << port << std::endl;
  std::thread waiter([&] {
    int sig = 0;
    sigwait(&shutdown, &sig);
    server.stop();
  });
  server.listen();
  pthread_kill(waiter.native_handle(), SIGTERM);
  waiter.join();
  return 0;
}

} // namespace

int main(int argc, char **argv) {
  CLI::App app{"aeye: embedding atlas pipeline"};
  app.require_subcommand(1);

  IngestArgs ingest;
  auto *ingest_cmd = app.add_subcommand("ingest", "Build a dataset store from precomputed embeddings");
  ingest_cmd->add_option("--vectors", ingest.vectors, "AEV1 vector file")->required()->check(CLI::ExistingFile);
  ingest_cmd->add_option("--meta", ingest.meta, "Metadata file, one record per line")
      ->required()
      ->check(CLI::ExistingFile);
  ingest_cmd->add_option("--captions", ingest.captions, "Captions file (id<TAB>text)")->check(CLI::ExistingFile);
  ingest_cmd->add_option("--images", ingest.images, "Directory of source images")->check(CLI::ExistingDirectory);
  ingest_cmd->add_option("--out", ingest.out, "Store directory")->required();
  ingest_cmd->add_option("--name", ingest.name, "Dataset name (default: directory name)");
  ingest_cmd->add_option("--threads", ingest.threads)->check(CLI::PositiveNumber);

  ProjectArgs project;
  auto *project_cmd = app.add_subcommand("project", "Compute 2-D positions");
  project_cmd->add_option("--store", project.store)->required()->check(CLI::ExistingDirectory);
  project_cmd->add_option("--method", project.method)->check(CLI::IsMember({"pca", "external"}));
  project_cmd->add_option("--coords", project.coords, "AEC1 file for --method external")->check(CLI::ExistingFile);

  TileArgs tile;
  auto *tile_cmd = app.add_subcommand("tile", "Build the tile pyramid");
  tile_cmd->add_option("--store", tile.store)->required()->check(CLI::ExistingDirectory);
  tile_cmd->add_option("--k", tile.k, "Representatives per tile")->check(CLI::PositiveNumber);
  tile_cmd->add_option("--seed", tile.seed, "Tiling seed");
  tile_cmd->add_option("--max-iterations", tile.max_iterations)->check(CLI::NonNegativeNumber);
  tile_cmd->add_option("--eps", tile.eps, "Convergence threshold on center moves")->check(CLI::NonNegativeNumber);
  tile_cmd->add_option("--max-depth", tile.max_depth)->check(CLI::Range(1, 30));
  tile_cmd->add_option("--threads", tile.threads)->check(CLI::PositiveNumber);

  IndexArgs index;
  auto *index_cmd = app.add_subcommand("index", "Build the vector index");
  index_cmd->add_option("--store", index.store)->required()->check(CLI::ExistingDirectory);
  index_cmd->add_option("--kind", index.kind)->check(CLI::IsMember({"flat", "hnsw"}));
  index_cmd->add_option("--M", index.hnsw.M, "Graph degree")->check(CLI::Range(2u, 1024u));
  index_cmd->add_option("--ef-construction", index.hnsw.ef_construction)->check(CLI::PositiveNumber);
  index_cmd->add_option("--ef-search", index.hnsw.ef_search)->check(CLI::PositiveNumber);
  index_cmd->add_option("--seed", index.hnsw.seed);

  ValidateArgs validate;
  auto *validate_cmd = app.add_subcommand("validate", "Check every store invariant");
  validate_cmd->add_option("--store", validate.store)->required()->check(CLI::ExistingDirectory);
  validate_cmd->add_option("--spot-checks", validate.spot_checks, "Index queries to verify");
  validate_cmd->add_option("--seed", validate.seed, "Spot-check sampling seed");

  ExportArgs exp;
  auto *export_cmd = app.add_subcommand("export", "Write the store as a tar archive");
  export_cmd->add_option("--store", exp.store)->required()->check(CLI::ExistingDirectory);
  export_cmd->add_option("--out", exp.out, "Archive path")->required();

  ServeArgs serve;
  auto *serve_cmd = app.add_subcommand("serve", "Serve stores over HTTP");
  serve_cmd->add_option("--root", serve.root, "A store or a directory of stores")
      ->required()
      ->check(CLI::ExistingDirectory);
  serve_cmd->add_option("--host", serve.host);
  serve_cmd->add_option("--port", serve.port, "0 picks a free port")->check(CLI::Range(0, 65535));
  serve_cmd->add_option("--embedder-url", serve.embedder_url, "Embedding service (default $AEYE_EMBEDDER_URL)");
  serve_cmd->add_flag("--mock-embedder", serve.mock, "Use the built-in deterministic embedder");
  serve_cmd->add_option("--cors-origin", serve.cors, "Allowed cross-origin caller (repeatable)");
  serve_cmd->add_flag("--cors-any", serve.cors_any, "Allow every origin (development)");
  serve_cmd->add_flag("--allow-empty", serve.allow_empty, "Start without any loadable dataset");
  serve_cmd->add_option("--media-max-age", serve.media_max_age, "Cache lifetime of media, seconds");
  serve_cmd->add_option("--threads", serve.threads)->check(CLI::PositiveNumber);

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp &e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp &e) {
    return app.exit(e);
  } catch (const CLI::ParseError &e) {
    app.exit(e);
    return 2;
  }

  try {
    if (*ingest_cmd) {
      return run_ingest(ingest);
    }
    if (*project_cmd) {
      return run_project(project);
    }
    if (*tile_cmd) {
      return run_tile(tile, *tile_cmd);
    }
    if (*index_cmd) {
      return run_index(index, *index_cmd);
    }
    if (*validate_cmd) {
      return run_validate(validate);
    }
    if (*export_cmd) {
      return run_export(exp);
    }
    if (*serve_cmd) {
      return run_serve(serve);
    }
  } catch (const Error &e) {
    log_line("error: " + std::string(e.what()));
    return e.exit_code();
  } catch (const std::exception &e) {
    log_line("error: " + std::string(e.what()));
    return 5;
  }
  return 2;
}
