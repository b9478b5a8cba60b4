#pragma once

/**
 * @file store.hpp
 * @brief On-disk dataset store shared by every pipeline stage.
 *
 * Layout below the store root:
 *
 *     manifest.json          AtlasManifest (structured text)
 *     vectors.aev            embeddings as ingested (AEV1)
 *     vectors.norm.aev       unit-normalized copies (AEV1)
 *     metadata.tsv           one record per line, line i <-> item i
 *     captions.tsv           "<id>\t<caption>" lines, ascending id
 *     coords_raw.aec         pre-normalization 2D coordinates (AEC1)
 *     positions.aec          unit-square positions (AEC1)
 *     tiles/<layer>/tiles.bin
 *     index/hnsw.bin
 *     assets/original/<id><ext>, assets/thumbs/<size>/<id>.jpg
 *
 * A metadata record is a TAB separated list of `key:value` fields, for
 * example `filename:0001.jpg<TAB>label:cat<TAB>url:https://...`. Only the
 * first ':' of a field separates key from value. An empty line is an item
 * without metadata.
 */

#include "aeye/binary_io.hpp"
#include "aeye/model.hpp"

#include <json.hpp>

#include <fcntl.h>
#include <sys/file.h>
#include <unistd.h>

#include <algorithm>
#include <array>
#include <cctype>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

namespace aeye {

using Metadata = std::map<std::string, std::string>;

inline constexpr std::array<int, 3> kThumbnailSizes = {32, 128, 512};

namespace store_files {
inline constexpr const char *manifest = "manifest.json";
inline constexpr const char *vectors = "vectors.aev";
inline constexpr const char *normalized = "vectors.norm.aev";
inline constexpr const char *metadata = "metadata.tsv";
inline constexpr const char *captions = "captions.tsv";
inline constexpr const char *coords_raw = "coords_raw.aec";
inline constexpr const char *positions = "positions.aec";
inline constexpr const char *tiles_dir = "tiles";
inline constexpr const char *hnsw = "index/hnsw.bin";
inline constexpr const char *lock = ".lock";
} // namespace store_files

namespace detail {

inline std::string lower_extension(const fs::path &p) {
  std::string ext = p.extension().string();
  std::transform(ext.begin(), ext.end(), ext.begin(),
                 [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
  return ext;
}

} // namespace detail

// ---------------------------------------------------------------------------
// Text formats

inline std::vector<std::string_view> split_lines(std::string_view text) {
  std::vector<std::string_view> lines;
  std::size_t start = 0;
  while (start < text.size()) {
    std::size_t end = text.find('\n', start);
    if (end == std::string_view::npos) {
      end = text.size();
    }
    std::string_view line = text.substr(start, end - start);
    if (!line.empty() && line.back() == '\r') {
      line.remove_suffix(1);
    }
    lines.push_back(line);
    start = end + 1;
  }
  return lines;
}

inline Metadata parse_metadata_line(std::string_view line, std::size_t line_no) {
  Metadata m;
  std::size_t start = 0;
  while (start <= line.size() && !line.empty()) {
    std::size_t end = line.find('\t', start);
    if (end == std::string_view::npos) {
      end = line.size();
    }
    const std::string_view field = line.substr(start, end - start);
    if (!field.empty()) {
      const auto colon = field.find(':');
      if (colon == std::string_view::npos || colon == 0) {
        throw bad_input("metadata line " + std::to_string(line_no + 1) + ": field '" +
                        std::string(field) + "' is not key:value");
      }
      m[std::string(field.substr(0, colon))] = std::string(field.substr(colon + 1));
    }
    start = end + 1;
  }
  return m;
}

inline std::vector<Metadata> parse_metadata(std::string_view text) {
  std::vector<Metadata> records;
  const auto lines = split_lines(text);
  records.reserve(lines.size());
  for (std::size_t i = 0; i < lines.size(); ++i) {
    records.push_back(parse_metadata_line(lines[i], i));
  }
  return records;
}

inline std::string format_metadata(const std::vector<Metadata> &records) {
  std::string out;
  for (const auto &m : records) {
    bool first = true;
    for (const auto &[k, v] : m) {
      if (!first) {
        out.push_back('\t');
      }
      first = false;
      out += k;
      out.push_back(':');
      out += v;
    }
    out.push_back('\n');
  }
  return out;
}

/// Parses "<id>\t<caption>" lines. Blank lines are skipped.
inline std::vector<std::optional<std::string>> parse_captions(std::string_view text, std::uint64_t n) {
  std::vector<std::optional<std::string>> captions(n);
  const auto lines = split_lines(text);
  for (std::size_t i = 0; i < lines.size(); ++i) {
    const auto line = lines[i];
    if (line.empty()) {
      continue;
    }
    const auto tab = line.find('\t');
    const std::string where = "captions line " + std::to_string(i + 1);
    if (tab == std::string_view::npos || tab == 0) {
      throw bad_input(where + ": expected <id><TAB><caption>");
    }
    std::uint64_t id = 0;
    for (char c : line.substr(0, tab)) {
      if (c < '0' || c > '9') {
        throw bad_input(where + ": id is not a non-negative integer");
      }
      id = id * 10 + static_cast<std::uint64_t>(c - '0');
    }
    if (id >= n) {
      throw bad_input(where + ": id " + std::to_string(id) + " out of range (n=" + std::to_string(n) + ")");
    }
    if (captions[id]) {
      throw bad_input(where + ": duplicate caption for id " + std::to_string(id));
    }
    captions[id] = std::string(line.substr(tab + 1));
  }
  return captions;
}

inline std::string format_captions(const std::vector<std::optional<std::string>> &captions) {
  std::string out;
  for (std::size_t i = 0; i < captions.size(); ++i) {
    if (captions[i]) {
      out += std::to_string(i);
      out.push_back('\t');
      out += *captions[i];
      out.push_back('\n');
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// Manifest

inline nlohmann::json manifest_to_json(const AtlasManifest &m) {
  nlohmann::json j;
  j["dataset_name"] = m.dataset_name;
  j["item_count"] = m.item_count;
  j["dimension"] = m.dimension;
  j["projection_method"] = to_string(m.projection_method);
  j["projection_rank_deficient"] = m.projection_rank_deficient;
  j["bounds_raw"] = {m.bounds_raw.min_x, m.bounds_raw.min_y, m.bounds_raw.max_x, m.bounds_raw.max_y};
  j["tiled"] = m.tiled;
  j["k"] = m.k;
  j["depth"] = m.depth;
  j["depth_capped"] = m.depth_capped;
  j["tiling_seed"] = m.tiling_seed;
  j["per_layer_nonempty_tile_counts"] = m.per_layer_nonempty_tile_counts;
  j["index_kind"] = m.index_kind;
  return j;
}

inline AtlasManifest manifest_from_json(const nlohmann::json &j) {
  AtlasManifest m;
  try {
    m.dataset_name = j.at("dataset_name").get<std::string>();
    m.item_count = j.at("item_count").get<std::uint64_t>();
    m.dimension = j.at("dimension").get<std::uint32_t>();
    m.projection_method = projection_method_from_string(j.value("projection_method", "none"));
    m.projection_rank_deficient = j.value("projection_rank_deficient", false);
    const auto b = j.value("bounds_raw", std::vector<double>{0, 0, 0, 0});
    if (b.size() != 4) {
      throw bad_input("manifest: bounds_raw must have 4 entries");
    }
    m.bounds_raw = {b[0], b[1], b[2], b[3]};
    m.tiled = j.value("tiled", false);
    m.k = j.value("k", 0u);
    m.depth = j.value("depth", 0);
    m.depth_capped = j.value("depth_capped", false);
    m.tiling_seed = j.value("tiling_seed", std::uint64_t{0});
    m.per_layer_nonempty_tile_counts =
        j.value("per_layer_nonempty_tile_counts", std::vector<std::uint64_t>{});
    m.index_kind = j.value("index_kind", std::string{});
  } catch (const nlohmann::json::exception &e) {
    throw bad_input(std::string("manifest: ") + e.what());
  }
  if (m.tiled && m.per_layer_nonempty_tile_counts.size() != static_cast<std::size_t>(m.depth) + 1) {
    throw bad_input("manifest: per_layer_nonempty_tile_counts must have depth+1 entries");
  }
  return m;
}

inline void write_manifest(const fs::path &root, const AtlasManifest &m) {
  write_file(root / store_files::manifest, manifest_to_json(m).dump(2) + "\n");
}

inline AtlasManifest read_manifest(const fs::path &root) {
  const auto path = root / store_files::manifest;
  if (!fs::exists(path)) {
    throw missing_stage(root.string() + " is not a dataset store (no manifest.json); run ingest first");
  }
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(read_file(path));
  } catch (const nlohmann::json::parse_error &e) {
    throw bad_input(path.string() + ": " + e.what());
  }
  return manifest_from_json(j);
}

// ---------------------------------------------------------------------------
// Store

/// Read view of a dataset store. Members that belong to stages which have
/// not run yet are left empty.
struct DatasetStore {
  fs::path root;
  AtlasManifest manifest;
  VectorMatrix normalized;
  std::vector<Metadata> metadata;
  std::vector<std::optional<std::string>> captions;
  std::vector<Point2> positions;

  std::uint64_t size() const noexcept { return manifest.item_count; }

  fs::path path(const char *file) const { return root / file; }

  /// Loads the manifest and every artifact present.
  static DatasetStore open(const fs::path &root) {
    DatasetStore s;
    s.root = root;
    s.manifest = read_manifest(root);
    const auto n = s.manifest.item_count;
    s.normalized = read_vector_file(root / store_files::normalized);
    if (s.normalized.rows != n || s.normalized.dim != s.manifest.dimension) {
      throw bad_input(root.string() + ": normalized vectors disagree with manifest");
    }
    s.metadata = parse_metadata(read_file(root / store_files::metadata));
    if (s.metadata.size() != n) {
      throw bad_input(root.string() + ": metadata record count disagrees with manifest");
    }
    if (fs::exists(root / store_files::captions)) {
      s.captions = parse_captions(read_file(root / store_files::captions), n);
    } else {
      s.captions.assign(n, std::nullopt);
    }
    if (s.manifest.projected()) {
      s.positions = read_coords_file(root / store_files::positions);
      if (s.positions.size() != n) {
        throw bad_input(root.string() + ": position count disagrees with manifest");
      }
    }
    return s;
  }

  std::vector<ProjectedPoint> projected_points() const {
    std::vector<ProjectedPoint> pts(positions.size());
    for (std::size_t i = 0; i < positions.size(); ++i) {
      pts[i] = {static_cast<ItemId>(i), positions[i].x, positions[i].y};
    }
    return pts;
  }

  /// The copied source image of `id`, or an empty path when there is none.
  fs::path original_asset(ItemId id) const {
    if (id >= metadata.size()) {
      return {};
    }
    const auto it = metadata[id].find("filename");
    if (it == metadata[id].end()) {
      return {};
    }
    auto p = root / "assets" / "original" / (std::to_string(id) + detail::lower_extension(it->second));
    return fs::exists(p) ? p : fs::path{};
  }

  fs::path thumbnail_asset(ItemId id, int size) const {
    return root / "assets" / "thumbs" / std::to_string(size) / (std::to_string(id) + ".jpg");
  }
};

/// Exclusive advisory lock on a store, held for the lifetime of the object.
class StoreLock {
public:
  explicit StoreLock(const fs::path &root) {
    fs::create_directories(root);
    const auto path = root / store_files::lock;
    fd_ = ::open(path.c_str(), O_RDWR | O_CREAT, 0644);
    if (fd_ < 0) {
      throw io_error("cannot open lock file " + path.string());
    }
    if (::flock(fd_, LOCK_EX | LOCK_NB) != 0) {
      ::close(fd_);
      throw io_error("store " + root.string() + " is locked by another command");
    }
  }
  StoreLock(const StoreLock &) = delete;
  StoreLock &operator=(const StoreLock &) = delete;
  ~StoreLock() {
    ::flock(fd_, LOCK_UN);
    ::close(fd_);
  }

private:
  int fd_ = -1;
};

} // namespace aeye
