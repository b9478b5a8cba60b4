#pragma once

/**
 * @file projection.hpp
 * @brief 2D layout of the embedding set.
 *
 * Positions come either from an external projector (an AEC1 file, e.g. UMAP
 * output) or from the built-in PCA projector. Both paths finish with the
 * same aspect-preserving normalization into [m, 1-m]^2, m = 0.01.
 */

#include "aeye/binary_io.hpp"
#include "aeye/model.hpp"
#include "aeye/store.hpp"

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <span>
#include <vector>

namespace aeye {

inline constexpr double kProjectionMargin = 0.01;

struct ProjectionResult {
  ProjectionMethod method = ProjectionMethod::none;
  Bounds raw_bounds;
  std::vector<Point2> raw;
  std::vector<ProjectedPoint> points;
  /// Number of principal axes actually spanned by the data (2 for a full
  /// PCA result or an external file; 1 or 0 when PCA degraded).
  int rank = 2;

  bool rank_deficient() const noexcept { return rank < 2; }
};

inline Bounds bounding_box(std::span<const Point2> raw) {
  Bounds b{raw[0].x, raw[0].y, raw[0].x, raw[0].y};
  for (const auto &p : raw) {
    b.min_x = std::min(b.min_x, p.x);
    b.min_y = std::min(b.min_y, p.y);
    b.max_x = std::max(b.max_x, p.x);
    b.max_y = std::max(b.max_y, p.y);
  }
  return b;
}

/// Uniform scale and translation taking the bounding box of `raw` into
/// [m, 1-m]^2. The longer axis spans exactly 1-2m; the shorter one is
/// centered on 0.5, as is any zero-extent axis.
inline std::vector<Point2> normalize_coords(std::span<const Point2> raw, double margin = kProjectionMargin) {
  if (raw.empty()) {
    throw contract_violation("normalize_coords: no points");
  }
  const Bounds b = bounding_box(raw);
  const double extent = std::max(b.max_x - b.min_x, b.max_y - b.min_y);
  const double scale = extent > 0.0 ? (1.0 - 2.0 * margin) / extent : 0.0;
  const double cx = 0.5 * (b.min_x + b.max_x);
  const double cy = 0.5 * (b.min_y + b.max_y);
  std::vector<Point2> out(raw.size());
  for (std::size_t i = 0; i < raw.size(); ++i) {
    out[i] = {0.5 + (raw[i].x - cx) * scale, 0.5 + (raw[i].y - cy) * scale};
  }
  return out;
}

inline ProjectionResult make_projection(ProjectionMethod method, std::vector<Point2> raw, int rank = 2) {
  ProjectionResult r;
  r.method = method;
  r.rank = rank;
  r.raw_bounds = bounding_box(raw);
  const auto unit = normalize_coords(raw);
  r.points.resize(unit.size());
  for (std::size_t i = 0; i < unit.size(); ++i) {
    r.points[i] = {static_cast<ItemId>(i), unit[i].x, unit[i].y};
  }
  r.raw = std::move(raw);
  return r;
}

struct PcaBasis {
  Eigen::VectorXd mean;
  Eigen::VectorXd axis1;
  Eigen::VectorXd axis2;
  double eigenvalue1 = 0.0;
  double eigenvalue2 = 0.0;
  int rank = 2;
};

namespace detail {

/// Flips `v` so that its largest-magnitude component (lowest index on ties)
/// is positive.
inline void fix_sign(Eigen::VectorXd &v) {
  Eigen::Index best = 0;
  for (Eigen::Index i = 1; i < v.size(); ++i) {
    if (std::abs(v[i]) > std::abs(v[best])) {
      best = i;
    }
  }
  if (v[best] < 0.0) {
    v = -v;
  }
}

} // namespace detail

/// Top-2 principal axes of the mean-centered rows of `m`.
inline PcaBasis pca_basis(const VectorMatrix &m) {
  if (m.rows < 2 || m.dim < 2) {
    throw contract_violation("pca_project needs n >= 2 and D >= 2");
  }
  const auto n = static_cast<Eigen::Index>(m.rows);
  const auto dim = static_cast<Eigen::Index>(m.dim);
  using RowMajorF = Eigen::Matrix<float, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
  const Eigen::Map<const RowMajorF> x(m.data.data(), n, dim);

  PcaBasis basis;
  basis.mean = x.cast<double>().colwise().sum().transpose() / static_cast<double>(n);

  Eigen::MatrixXd cov = Eigen::MatrixXd::Zero(dim, dim);
  double mean_sq_norm = 0.0;
  constexpr Eigen::Index kBlock = 2048;
  for (Eigen::Index start = 0; start < n; start += kBlock) {
    const Eigen::Index rows = std::min(kBlock, n - start);
    Eigen::MatrixXd block = x.middleRows(start, rows).cast<double>();
    mean_sq_norm += block.squaredNorm();
    block.rowwise() -= basis.mean.transpose();
    cov.selfadjointView<Eigen::Lower>().rankUpdate(block.transpose());
  }
  cov = cov.selfadjointView<Eigen::Lower>();
  cov /= static_cast<double>(n - 1);
  mean_sq_norm /= static_cast<double>(n);

  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> solver(cov);
  if (solver.info() != Eigen::Success) {
    throw bad_input("pca: eigen decomposition failed");
  }
  const auto &values = solver.eigenvalues();
  basis.eigenvalue1 = std::max(0.0, values[dim - 1]);
  basis.eigenvalue2 = std::max(0.0, values[dim - 2]);
  basis.axis1 = solver.eigenvectors().col(dim - 1);
  basis.axis2 = solver.eigenvectors().col(dim - 2);
  detail::fix_sign(basis.axis1);
  detail::fix_sign(basis.axis2);

  if (basis.eigenvalue1 <= 1e-20 * std::max(1.0, mean_sq_norm)) {
    basis.rank = 0;
  } else if (basis.eigenvalue2 <= 1e-10 * basis.eigenvalue1) {
    basis.rank = 1;
  }
  return basis;
}

/// Projects every row onto the top-2 principal axes. Rank-deficient data
/// degrades to y = 0 (rank 1) or to the origin (rank 0) and is flagged.
inline ProjectionResult pca_project(const VectorMatrix &m) {
  const PcaBasis basis = pca_basis(m);
  std::vector<Point2> raw(m.rows);
  for (std::uint64_t i = 0; i < m.rows; ++i) {
    const auto row = m.row(i);
    double px = 0.0;
    double py = 0.0;
    for (std::uint32_t d = 0; d < m.dim; ++d) {
      const double c = static_cast<double>(row[d]) - basis.mean[d];
      px += c * basis.axis1[d];
      py += c * basis.axis2[d];
    }
    raw[i] = {basis.rank >= 1 ? px : 0.0, basis.rank >= 2 ? py : 0.0};
  }
  return make_projection(ProjectionMethod::pca, std::move(raw), basis.rank);
}

inline ProjectionResult pca_project(const DatasetStore &store) {
  return pca_project(read_vector_file(store.path(store_files::vectors)));
}

/// Adopts externally computed coordinates (AEC1) as raw positions.
inline ProjectionResult load_external_coords(const fs::path &coords_file, std::uint64_t expected_n) {
  auto raw = read_coords_file(coords_file);
  if (raw.size() != expected_n) {
    throw bad_input(coords_file.string() + ": has " + std::to_string(raw.size()) +
                    " coordinate pairs but the store has n=" + std::to_string(expected_n));
  }
  return make_projection(ProjectionMethod::external, std::move(raw));
}

inline ProjectionResult load_external_coords(const fs::path &coords_file, const DatasetStore &store) {
  return load_external_coords(coords_file, store.size());
}

/// Persists positions and updates the manifest. Any tiling and index built
/// on the old positions is discarded.
inline void save_projection(const fs::path &root, const ProjectionResult &r) {
  AtlasManifest m = read_manifest(root);
  if (r.points.size() != m.item_count) {
    throw contract_violation("save_projection: point count does not match store");
  }
  std::vector<Point2> unit(r.points.size());
  for (std::size_t i = 0; i < unit.size(); ++i) {
    unit[i] = r.points[i].pos();
  }
  write_coords_file(root / store_files::coords_raw, r.raw);
  write_coords_file(root / store_files::positions, unit);
  fs::remove_all(root / store_files::tiles_dir);
  m.projection_method = r.method;
  m.bounds_raw = r.raw_bounds;
  m.projection_rank_deficient = r.rank_deficient();
  m.tiled = false;
  m.k = 0;
  m.depth = 0;
  m.depth_capped = false;
  m.tiling_seed = 0;
  m.per_layer_nonempty_tile_counts.clear();
  write_manifest(root, m);
}

} // namespace aeye
