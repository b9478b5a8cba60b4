#pragma once

/**
 * @file export.hpp
 * @brief Portable archive of a tiled store.
 *
 * The archive is a POSIX ustar file. Every entry sits under one top-level
 * directory named after the dataset, timestamps are zero and entries are
 * sorted, so exporting the same store twice yields identical bytes.
 *
 * Contents: manifest.json, vectors.aev (the ingested file, unchanged),
 * metadata.tsv, captions.tsv when present, coords_raw.aec, positions.aec,
 * tiles/<layer>/tiles.bin and index/hnsw.bin when built.
 */

#include "aeye/binary_io.hpp"
#include "aeye/store.hpp"

#include <algorithm>
#include <cstdio>
#include <cstring>
#include <string>
#include <vector>

namespace aeye {

struct TarEntry {
  std::string name;
  std::string data;
};

namespace detail {

inline void tar_octal(char *field, std::size_t width, std::uint64_t value) {
  // width - 1 digits plus a terminating NUL.
  std::snprintf(field, width, "%0*llo", static_cast<int>(width - 1), static_cast<unsigned long long>(value));
}

inline std::uint64_t tar_parse_octal(const char *field, std::size_t width) {
  std::uint64_t v = 0;
  for (std::size_t i = 0; i < width && field[i] != '\0' && field[i] != ' '; ++i) {
    if (field[i] < '0' || field[i] > '7') {
      throw bad_input("archive: bad octal field");
    }
    v = v * 8 + static_cast<std::uint64_t>(field[i] - '0');
  }
  return v;
}

inline std::uint64_t tar_checksum(const char *header) {
  std::uint64_t sum = 0;
  for (int i = 0; i < 512; ++i) {
    sum += (i >= 148 && i < 156) ? ' ' : static_cast<unsigned char>(header[i]);
  }
  return sum;
}

} // namespace detail

inline std::string write_tar(const std::vector<TarEntry> &entries) {
  std::string out;
  for (const auto &e : entries) {
    if (e.name.empty() || e.name.size() > 99) {
      throw bad_input("archive: entry name must be 1..99 bytes: '" + e.name + "'");
    }
    char h[512] = {};
    std::memcpy(h, e.name.data(), e.name.size());
    detail::tar_octal(h + 100, 8, 0644);
    detail::tar_octal(h + 108, 8, 0);
    detail::tar_octal(h + 116, 8, 0);
    detail::tar_octal(h + 124, 12, e.data.size());
    detail::tar_octal(h + 136, 12, 0);
    h[156] = '0';
    std::memcpy(h + 257, "ustar", 6);
    std::memcpy(h + 263, "00", 2);
    std::snprintf(h + 148, 8, "%06llo", static_cast<unsigned long long>(detail::tar_checksum(h)));
    h[155] = ' ';
    out.append(h, 512);
    out += e.data;
    out.append((512 - e.data.size() % 512) % 512, '\0');
  }
  out.append(1024, '\0');
  return out;
}

inline std::vector<TarEntry> read_tar(std::string_view bytes) {
  std::vector<TarEntry> entries;
  std::size_t off = 0;
  while (off + 512 <= bytes.size()) {
    const char *h = bytes.data() + off;
    if (std::all_of(h, h + 512, [](char c) { return c == '\0'; })) {
      return entries;
    }
    if (detail::tar_parse_octal(h + 148, 8) != detail::tar_checksum(h)) {
      throw bad_input("archive: header checksum mismatch at offset " + std::to_string(off));
    }
    const auto size = detail::tar_parse_octal(h + 124, 12);
    if (off + 512 + size > bytes.size()) {
      throw bad_input("archive: truncated entry");
    }
    TarEntry e;
    e.name.assign(h, strnlen(h, 100));
    e.data.assign(bytes.substr(off + 512, size));
    if (h[156] == '0' || h[156] == '\0') {
      entries.push_back(std::move(e));
    }
    off += 512 + (size + 511) / 512 * 512;
  }
  throw bad_input("archive: missing end-of-archive marker");
}

/// Collects the archive entries of a tiled store.
inline std::vector<TarEntry> export_entries(const fs::path &root) {
  const auto m = read_manifest(root);
  if (!m.tiled) {
    throw missing_stage(root.string() + ": export needs a tiled store (run tile first)");
  }
  std::vector<std::string> files{store_files::manifest, store_files::vectors, store_files::metadata,
                                 store_files::captions, store_files::coords_raw, store_files::positions,
                                 store_files::hnsw};
  for (int l = 0; l <= m.depth; ++l) {
    files.push_back(std::string(store_files::tiles_dir) + "/" + std::to_string(l) + "/tiles.bin");
  }
  std::sort(files.begin(), files.end());
  std::string prefix = m.dataset_name.empty() ? "dataset" : m.dataset_name;
  std::replace_if(prefix.begin(), prefix.end(), [](char c) { return c == '/' || c == '\\'; }, '_');
  std::vector<TarEntry> entries;
  for (const auto &f : files) {
    const auto p = root / f;
    if (fs::exists(p)) {
      entries.push_back({prefix + "/" + f, read_file(p)});
    } else if (f != store_files::captions && f != store_files::hnsw) {
      throw missing_stage(p.string() + " is missing");
    }
  }
  return entries;
}

inline void export_store(const fs::path &root, const fs::path &archive) {
  write_file(archive, write_tar(export_entries(root)));
}

} // namespace aeye
