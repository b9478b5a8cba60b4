#pragma once

#include "aeye/binary_io.hpp"
#include "aeye/model.hpp"
#include "aeye/parallel.hpp"
#include "aeye/store.hpp"

#include <opencv2/imgcodecs.hpp>
#include <opencv2/imgproc.hpp>

#include <algorithm>
#include <cctype>
#include <cmath>
#include <functional>
#include <optional>
#include <string>
#include <vector>

namespace aeye {

struct IngestOptions {
  fs::path vectors_file;
  fs::path meta_file;
  std::optional<fs::path> captions_file;
  std::optional<fs::path> images_dir;
  fs::path out_root;
  /// Defaults to the output directory's name.
  std::string dataset_name;
  unsigned threads = default_thread_count();
};

struct IngestReport {
  std::uint64_t item_count = 0;
  std::uint32_t dimension = 0;
  std::uint64_t thumbnails_written = 0;
  std::vector<std::string> warnings;
};

/// Unit-normalizes every row in double precision. Rows that are zero or
/// contain non-finite components are reported by id and nothing is returned.
inline VectorMatrix normalize_rows(const VectorMatrix &m) {
  VectorMatrix out{m.rows, m.dim, std::vector<float>(m.data.size())};
  std::vector<std::uint64_t> zero_rows;
  std::vector<std::uint64_t> nonfinite_rows;
  for (std::uint64_t i = 0; i < m.rows; ++i) {
    const auto row = m.row(i);
    double sq = 0.0;
    bool finite = true;
    for (float f : row) {
      finite = finite && std::isfinite(f);
      sq += static_cast<double>(f) * f;
    }
    if (!finite) {
      nonfinite_rows.push_back(i);
      continue;
    }
    if (sq == 0.0) {
      zero_rows.push_back(i);
      continue;
    }
    const double inv = 1.0 / std::sqrt(sq);
    auto dst = out.row(i);
    for (std::size_t d = 0; d < row.size(); ++d) {
      dst[d] = static_cast<float>(row[d] * inv);
    }
  }
  auto list = [](const std::vector<std::uint64_t> &ids) {
    std::string s;
    for (std::size_t i = 0; i < ids.size() && i < 10; ++i) {
      s += (i ? ", " : "") + std::to_string(ids[i]);
    }
    if (ids.size() > 10) {
      s += ", ... (" + std::to_string(ids.size()) + " total)";
    }
    return s;
  };
  std::string problems;
  if (!nonfinite_rows.empty()) {
    problems = "non-finite vector component in item(s) " + list(nonfinite_rows);
  }
  if (!zero_rows.empty()) {
    problems += (problems.empty() ? "" : "; ") + std::string("zero-norm vector in item(s) ") + list(zero_rows);
  }
  if (!problems.empty()) {
    throw bad_input(problems);
  }
  return out;
}

namespace detail {

/// Resizes so that the longest edge equals `edge` pixels.
inline cv::Mat resize_longest_edge(const cv::Mat &img, int edge) {
  const int longest = std::max(img.cols, img.rows);
  const double scale = static_cast<double>(edge) / longest;
  const int w = std::max(1, static_cast<int>(std::lround(img.cols * scale)));
  const int h = std::max(1, static_cast<int>(std::lround(img.rows * scale)));
  cv::Mat out;
  cv::resize(img, out, cv::Size(w, h), 0, 0, scale < 1.0 ? cv::INTER_AREA : cv::INTER_LINEAR);
  return out;
}

/// Returns false when the source image is missing or cannot be decoded.
inline bool write_item_assets(const fs::path &src, const fs::path &root, ItemId id) {
  cv::Mat img = cv::imread(src.string(), cv::IMREAD_COLOR);
  if (img.empty()) {
    return false;
  }
  const auto original_dir = root / "assets" / "original";
  fs::create_directories(original_dir);
  fs::copy_file(src, original_dir / (std::to_string(id) + lower_extension(src)),
                fs::copy_options::overwrite_existing);
  for (int size : kThumbnailSizes) {
    const auto dir = root / "assets" / "thumbs" / std::to_string(size);
    fs::create_directories(dir);
    const auto thumb = resize_longest_edge(img, size);
    std::vector<uchar> buf;
    cv::imencode(".jpg", thumb, buf, {cv::IMWRITE_JPEG_QUALITY, 90});
    write_file(dir / (std::to_string(id) + ".jpg"),
               std::string_view(reinterpret_cast<const char *>(buf.data()), buf.size()));
  }
  return true;
}

/// Clears a previous store at `root`. Refuses to touch a non-empty directory
/// that does not look like a store.
inline void prepare_output_root(const fs::path &root) {
  if (fs::exists(root)) {
    if (!fs::is_directory(root)) {
      throw io_error(root.string() + " exists and is not a directory");
    }
    bool empty = true;
    for (const auto &e : fs::directory_iterator(root)) {
      if (e.path().filename() != store_files::lock) {
        empty = false;
        break;
      }
    }
    if (!empty && !fs::exists(root / store_files::manifest)) {
      throw io_error("refusing to ingest into non-empty directory " + root.string() +
                     " that is not a dataset store");
    }
    for (const auto &e : fs::directory_iterator(root)) {
      if (e.path().filename() != store_files::lock) {
        fs::remove_all(e.path());
      }
    }
  }
  fs::create_directories(root);
}

} // namespace detail

/// Builds a fresh dataset store from an AEV1 vector file, a metadata file
/// with one record per item, optional captions and an optional image
/// directory. Image files are located through each record's `filename`.
inline IngestReport ingest_embeddings(const IngestOptions &opt,
                                      const std::function<void(const std::string &)> &warn = {}) {
  IngestReport report;
  auto warning = [&](std::string msg) {
    if (warn) {
      warn(msg);
    }
    report.warnings.push_back(std::move(msg));
  };

  const VectorMatrix vectors = read_vector_file(opt.vectors_file);
  if (vectors.rows == 0) {
    throw bad_input(opt.vectors_file.string() + ": contains no vectors");
  }
  const VectorMatrix normalized = normalize_rows(vectors);

  auto metadata = parse_metadata(read_file(opt.meta_file));
  if (metadata.size() != vectors.rows) {
    throw bad_input(opt.meta_file.string() + ": has " + std::to_string(metadata.size()) +
                    " records but the vector file has n=" + std::to_string(vectors.rows));
  }
  std::vector<std::optional<std::string>> captions(vectors.rows);
  if (opt.captions_file) {
    captions = parse_captions(read_file(*opt.captions_file), vectors.rows);
  }

  detail::prepare_output_root(opt.out_root);
  write_vector_file(opt.out_root / store_files::vectors, vectors);
  write_vector_file(opt.out_root / store_files::normalized, normalized);
  write_file(opt.out_root / store_files::metadata, format_metadata(metadata));
  write_file(opt.out_root / store_files::captions, format_captions(captions));

  if (opt.images_dir) {
    fs::create_directories(opt.out_root / "assets" / "original");
    for (int size : kThumbnailSizes) {
      fs::create_directories(opt.out_root / "assets" / "thumbs" / std::to_string(size));
    }
    std::vector<char> ok(vectors.rows, 0);
    parallel_for(
        vectors.rows,
        [&](std::size_t i) {
          const auto it = metadata[i].find("filename");
          if (it == metadata[i].end() || it->second.empty()) {
            return;
          }
          ok[i] = detail::write_item_assets(*opt.images_dir / it->second, opt.out_root, i) ? 1 : 0;
        },
        opt.threads);
    for (std::uint64_t i = 0; i < vectors.rows; ++i) {
      if (ok[i]) {
        ++report.thumbnails_written;
        continue;
      }
      const auto it = metadata[i].find("filename");
      warning(it == metadata[i].end() ? "item " + std::to_string(i) + ": no filename, placeholder will be served"
                                      : "item " + std::to_string(i) + ": unreadable image '" + it->second +
                                            "', placeholder will be served");
    }
  }

  AtlasManifest m;
  m.dataset_name = opt.dataset_name.empty() ? opt.out_root.filename().string() : opt.dataset_name;
  if (m.dataset_name.empty()) {
    m.dataset_name = fs::absolute(opt.out_root).parent_path().filename().string();
  }
  m.item_count = vectors.rows;
  m.dimension = vectors.dim;
  write_manifest(opt.out_root, m);

  report.item_count = vectors.rows;
  report.dimension = vectors.dim;
  return report;
}

} // namespace aeye
