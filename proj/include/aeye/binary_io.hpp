#pragma once

// Little-endian binary formats: "AEV1" vector files and "AEC1" coordinate
// files, plus the primitive readers/writers the store and index use.
//
//   AEV1: magic "AEV1" | version u32 | n u64 | D u32 | n*D float32, row-major
//   AEC1: magic "AEC1" | n u64 | n * (x float32, y float32)

#include "aeye/model.hpp"

#include <bit>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace aeye {

namespace fs = std::filesystem;

inline constexpr std::uint32_t kVectorFileVersion = 1;
inline constexpr std::size_t kVectorHeaderBytes = 20;
inline constexpr std::size_t kCoordsHeaderBytes = 12;

/// Append-only little-endian byte sink.
class ByteWriter {
public:
  template <class T> void put(T v) {
    static_assert(std::is_trivially_copyable_v<T>);
    if constexpr (std::is_same_v<T, float>) {
      put(std::bit_cast<std::uint32_t>(v));
    } else if constexpr (std::is_same_v<T, double>) {
      put(std::bit_cast<std::uint64_t>(v));
    } else {
      using U = std::make_unsigned_t<T>;
      auto u = static_cast<U>(v);
      for (std::size_t i = 0; i < sizeof(T); ++i) {
        bytes_.push_back(static_cast<char>((u >> (8 * i)) & 0xFF));
      }
    }
  }

  void put_bytes(std::string_view s) { bytes_.append(s); }

  const std::string &bytes() const noexcept { return bytes_; }
  std::string take() noexcept { return std::move(bytes_); }

private:
  std::string bytes_;
};

/// Bounds-checked little-endian reader over a byte buffer.
class ByteReader {
public:
  ByteReader(std::string_view data, std::string source) : data_(data), source_(std::move(source)) {}

  template <class T> T get() {
    if constexpr (std::is_same_v<T, float>) {
      return std::bit_cast<float>(get<std::uint32_t>());
    } else if constexpr (std::is_same_v<T, double>) {
      return std::bit_cast<double>(get<std::uint64_t>());
    } else {
      require(sizeof(T));
      using U = std::make_unsigned_t<T>;
      U u = 0;
      for (std::size_t i = 0; i < sizeof(T); ++i) {
        u |= static_cast<U>(static_cast<unsigned char>(data_[pos_ + i])) << (8 * i);
      }
      pos_ += sizeof(T);
      return static_cast<T>(u);
    }
  }

  std::string_view get_bytes(std::size_t n) {
    require(n);
    auto s = data_.substr(pos_, n);
    pos_ += n;
    return s;
  }

  std::size_t remaining() const noexcept { return data_.size() - pos_; }
  std::size_t position() const noexcept { return pos_; }
  bool done() const noexcept { return pos_ == data_.size(); }

private:
  void require(std::size_t n) const {
    if (data_.size() - pos_ < n) {
      throw bad_input(source_ + ": truncated at byte " + std::to_string(pos_));
    }
  }

  std::string_view data_;
  std::size_t pos_ = 0;
  std::string source_;
};

inline std::string read_file(const fs::path &path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) {
    throw io_error("cannot open " + path.string());
  }
  in.seekg(0, std::ios::end);
  const auto size = static_cast<std::size_t>(in.tellg());
  in.seekg(0);
  std::string data(size, '\0');
  if (size > 0 && !in.read(data.data(), static_cast<std::streamsize>(size))) {
    throw io_error("cannot read " + path.string());
  }
  return data;
}

/// Writes via a temporary sibling and renames, so readers never observe a
/// partially written file.
inline void write_file(const fs::path &path, std::string_view data) {
  if (path.has_parent_path()) {
    fs::create_directories(path.parent_path());
  }
  fs::path tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) {
      throw io_error("cannot create " + tmp.string());
    }
    out.write(data.data(), static_cast<std::streamsize>(data.size()));
    if (!out) {
      throw io_error("cannot write " + tmp.string());
    }
  }
  std::error_code ec;
  fs::rename(tmp, path, ec);
  if (ec) {
    throw io_error("cannot rename " + tmp.string() + ": " + ec.message());
  }
}

/// Dense row-major n x D float32 matrix.
struct VectorMatrix {
  std::uint64_t rows = 0;
  std::uint32_t dim = 0;
  std::vector<float> data;

  std::span<const float> row(std::uint64_t i) const {
    return {data.data() + i * dim, static_cast<std::size_t>(dim)};
  }
  std::span<float> row(std::uint64_t i) { return {data.data() + i * dim, static_cast<std::size_t>(dim)}; }
};

inline std::string encode_vector_file(const VectorMatrix &m) {
  ByteWriter w;
  w.put_bytes("AEV1");
  w.put(kVectorFileVersion);
  w.put(m.rows);
  w.put(m.dim);
  for (float f : m.data) {
    w.put(f);
  }
  return w.take();
}

inline VectorMatrix decode_vector_file(std::string_view bytes, const std::string &source) {
  if (bytes.size() < kVectorHeaderBytes) {
    throw bad_input(source + ": file shorter than the " + std::to_string(kVectorHeaderBytes) +
                    "-byte AEV1 header");
  }
  ByteReader r(bytes, source);
  if (r.get_bytes(4) != "AEV1") {
    throw bad_input(source + ": bad magic, expected AEV1");
  }
  const auto version = r.get<std::uint32_t>();
  if (version != kVectorFileVersion) {
    throw bad_input(source + ": unsupported AEV1 version " + std::to_string(version));
  }
  VectorMatrix m;
  m.rows = r.get<std::uint64_t>();
  m.dim = r.get<std::uint32_t>();
  if (m.dim < 2) {
    throw bad_input(source + ": dimension must be >= 2, header says " + std::to_string(m.dim));
  }
  const std::uint64_t payload = r.remaining();
  if (m.rows > payload / 4 / m.dim || payload != m.rows * m.dim * 4) {
    throw bad_input(source + ": dimension mismatch: header declares n=" + std::to_string(m.rows) +
                    " D=" + std::to_string(m.dim) + " (" + std::to_string(m.rows * m.dim * 4) +
                    " payload bytes) but file has " + std::to_string(payload));
  }
  m.data.resize(m.rows * m.dim);
  for (auto &f : m.data) {
    f = r.get<float>();
  }
  return m;
}

inline VectorMatrix read_vector_file(const fs::path &path) {
  return decode_vector_file(read_file(path), path.string());
}

inline void write_vector_file(const fs::path &path, const VectorMatrix &m) {
  write_file(path, encode_vector_file(m));
}

inline std::string encode_coords_file(std::span<const Point2> pts) {
  ByteWriter w;
  w.put_bytes("AEC1");
  w.put(static_cast<std::uint64_t>(pts.size()));
  for (const auto &p : pts) {
    w.put(static_cast<float>(p.x));
    w.put(static_cast<float>(p.y));
  }
  return w.take();
}

/// Reads an AEC1 file. Non-finite coordinates are rejected with the row index.
inline std::vector<Point2> decode_coords_file(std::string_view bytes, const std::string &source) {
  ByteReader r(bytes, source);
  if (bytes.size() < kCoordsHeaderBytes || r.get_bytes(4) != "AEC1") {
    throw bad_input(source + ": bad magic, expected AEC1");
  }
  const auto n = r.get<std::uint64_t>();
  if (r.remaining() != n * 8 || n > r.remaining()) {
    throw bad_input(source + ": header declares " + std::to_string(n) + " pairs but payload has " +
                    std::to_string(r.remaining()) + " bytes");
  }
  std::vector<Point2> pts(n);
  for (std::uint64_t i = 0; i < n; ++i) {
    const float x = r.get<float>();
    const float y = r.get<float>();
    if (!std::isfinite(x) || !std::isfinite(y)) {
      throw bad_input(source + ": non-finite coordinate at row " + std::to_string(i));
    }
    pts[i] = {x, y};
  }
  return pts;
}

inline std::vector<Point2> read_coords_file(const fs::path &path) {
  return decode_coords_file(read_file(path), path.string());
}

inline void write_coords_file(const fs::path &path, std::span<const Point2> pts) {
  write_file(path, encode_coords_file(pts));
}

} // namespace aeye
