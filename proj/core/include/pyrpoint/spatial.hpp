#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

#include "pyrpoint/autodiff.hpp"

namespace pyrpoint {

using Vec3 = std::array<double, 3>;

inline double squared_distance(const Vec3& a, const Vec3& b) {
  const double dx = a[0] - b[0];
  const double dy = a[1] - b[1];
  const double dz = a[2] - b[2];
  return dx * dx + dy * dy + dz * dz;
}

/// Positions plus per-point features (row-major N x F) and optional labels.
struct PointCloud {
  std::vector<Vec3> positions;
  std::vector<double> features;
  std::vector<std::string> feature_names;
  std::vector<int> labels;  // empty = unlabeled
  std::size_t class_count = 0;
  std::optional<int> ignore_index;

  std::size_t size() const { return positions.size(); }
  std::size_t feature_count() const { return feature_names.size(); }
  bool has_labels() const { return !labels.empty(); }
  double feature(std::size_t point, std::size_t f) const { return features[point * feature_count() + f]; }

  /// Throws on non-finite positions, ragged feature storage, or labels outside
  /// [0, C) that are not the ignore index.
  void validate() const;
};

/// Fixed-width neighbour lists into a support set of `support_count` points.
/// Rows are nearest-first; unused slots hold the shadow index (= support_count).
struct NeighborTable {
  ad::IndexTable table;
  std::vector<std::size_t> counts;

  std::size_t rows() const { return table.rows; }
  std::size_t cols() const { return table.cols; }
  std::size_t shadow() const { return table.shadow; }
  std::size_t at(std::size_t r, std::size_t c) const { return table.at(r, c); }
};

/// Uniform hash grid over a point set. Queries reproduce a brute-force scan
/// exactly, including the (distance, index) ordering.
class PointGrid {
 public:
  PointGrid(std::span<const Vec3> points, double cell_size);

  /// Indices within `radius` of q (inclusive), sorted by (distance, index).
  void radius_query(const Vec3& q, double radius, std::vector<std::pair<double, std::size_t>>& out) const;
  /// Nearest point; ties resolve to the lowest index.
  std::size_t nearest(const Vec3& q) const;

 private:
  using Key = std::array<std::int64_t, 3>;
  struct KeyHash {
    std::size_t operator()(const Key& k) const noexcept;
  };
  Key key_of(const Vec3& p) const;

  std::span<const Vec3> points_;
  double cell_;
  Key lo_{}, hi_{};
  std::unordered_map<Key, std::vector<std::size_t>, KeyHash> cells_;
};

/// One point per occupied voxel: barycentric position, mean features,
/// majority label (ties to the smallest class). Output follows lexicographic
/// voxel-key order.
PointCloud grid_subsample(const PointCloud& cloud, double cell_size);

/// Up to `cap` supports within `radius` of each query, nearest-first.
/// The table width is the largest row count actually found (at least 1).
NeighborTable radius_neighbors(std::span<const Vec3> queries, std::span<const Vec3> supports, double radius,
                               std::size_t cap);

/// Nearest coarse point for each fine point (ties to the lowest index).
std::vector<std::size_t> nearest_upsample_index(std::span<const Vec3> fine, std::span<const Vec3> coarse);

struct Level {
  std::vector<Vec3> points;
  double cell_size = 0.0;
  NeighborTable conv_neighbors;
  /// Queries at the next level over supports at this one (absent on the last level).
  NeighborTable pool_neighbors;
  /// For each point here, its nearest point on the next level (absent on the last level).
  std::vector<std::size_t> upsample_index;
};

/// Precomputed pyramid geometry for one forward pass. levels[0] is the
/// finest level (level 1); `base` is the subsampled level-1 cloud carrying
/// features and labels.
struct LevelSet {
  std::vector<Level> levels;
  PointCloud base;
  double conv_radius_factor = 0.0;

  std::size_t level_count() const { return levels.size(); }
  /// FNV-1a digest of every point and table; used to compare geometry across runs.
  std::uint64_t digest() const;
};

struct LevelParams {
  double base_cell = 0.25;
  std::size_t level_count = 5;
  double conv_radius_factor = 2.5;
  std::size_t neighbor_cap = 40;
};

LevelSet build_levels(const PointCloud& cloud, const LevelParams& params);

}  // namespace pyrpoint
