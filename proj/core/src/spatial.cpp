#include "pyrpoint/spatial.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <limits>
#include <numeric>

#include "pyrpoint/errors.hpp"
#include "pyrpoint/parallel.hpp"

namespace pyrpoint {

void PointCloud::validate() const {
  if (positions.empty()) throw DegenerateInputError("point cloud is empty");
  for (const auto& p : positions) {
    if (!std::isfinite(p[0]) || !std::isfinite(p[1]) || !std::isfinite(p[2])) {
      throw NumericError("point cloud has a non-finite position");
    }
  }
  if (features.size() != positions.size() * feature_count()) {
    throw DimensionError("feature storage does not match point count x feature count");
  }
  if (!labels.empty()) {
    if (labels.size() != positions.size()) throw DimensionError("label count does not match point count");
    for (int l : labels) {
      if (ignore_index && l == *ignore_index) continue;
      if (l < 0 || static_cast<std::size_t>(l) >= class_count) {
        throw LabelError("label " + std::to_string(l) + " outside [0," + std::to_string(class_count) + ")");
      }
    }
  }
}

// ---------------------------------------------------------------------------

std::size_t PointGrid::KeyHash::operator()(const Key& k) const noexcept {
  std::uint64_t h = 0x9e3779b97f4a7c15ULL;
  for (auto v : k) {
    h ^= static_cast<std::uint64_t>(v) + 0x9e3779b97f4a7c15ULL + (h << 6) + (h >> 2);
  }
  return static_cast<std::size_t>(h);
}

PointGrid::Key PointGrid::key_of(const Vec3& p) const {
  return {static_cast<std::int64_t>(std::floor(p[0] / cell_)), static_cast<std::int64_t>(std::floor(p[1] / cell_)),
          static_cast<std::int64_t>(std::floor(p[2] / cell_))};
}

PointGrid::PointGrid(std::span<const Vec3> points, double cell_size) : points_(points), cell_(cell_size) {
  if (!(cell_size > 0.0)) throw ConfigError("PointGrid: cell size must be positive");
  lo_ = {std::numeric_limits<std::int64_t>::max(), std::numeric_limits<std::int64_t>::max(),
         std::numeric_limits<std::int64_t>::max()};
  hi_ = {std::numeric_limits<std::int64_t>::min(), std::numeric_limits<std::int64_t>::min(),
         std::numeric_limits<std::int64_t>::min()};
  cells_.reserve(points.size());
  for (std::size_t i = 0; i < points.size(); ++i) {
    const Key k = key_of(points[i]);
    for (int a = 0; a < 3; ++a) {
      lo_[a] = std::min(lo_[a], k[a]);
      hi_[a] = std::max(hi_[a], k[a]);
    }
    cells_[k].push_back(i);
  }
}

void PointGrid::radius_query(const Vec3& q, double radius, std::vector<std::pair<double, std::size_t>>& out) const {
  out.clear();
  if (points_.empty()) return;
  const double r2 = radius * radius;
  Key from{}, to{};
  double span_cells = 1.0;
  for (int a = 0; a < 3; ++a) {
    const double lo = std::floor((q[a] - radius) / cell_);
    const double hi = std::floor((q[a] + radius) / cell_);
    from[a] = static_cast<std::int64_t>(std::max(lo, static_cast<double>(lo_[a])));
    to[a] = static_cast<std::int64_t>(std::min(hi, static_cast<double>(hi_[a])));
    if (from[a] > to[a]) return;
    span_cells *= static_cast<double>(to[a] - from[a] + 1);
  }
  auto consider = [&](std::size_t i) {
    const double d2 = squared_distance(points_[i], q);
    if (d2 <= r2) out.emplace_back(d2, i);
  };
  if (span_cells > static_cast<double>(cells_.size())) {
    for (const auto& [key, members] : cells_)
      for (std::size_t i : members) consider(i);
  } else {
    for (std::int64_t x = from[0]; x <= to[0]; ++x)
      for (std::int64_t y = from[1]; y <= to[1]; ++y)
        for (std::int64_t z = from[2]; z <= to[2]; ++z) {
          auto it = cells_.find({x, y, z});
          if (it == cells_.end()) continue;
          for (std::size_t i : it->second) consider(i);
        }
  }
  std::sort(out.begin(), out.end());
}

std::size_t PointGrid::nearest(const Vec3& q) const {
  if (points_.empty()) throw DegenerateInputError("nearest: empty point set");
  const Key c = key_of(q);
  std::int64_t max_ring = 0;
  for (int a = 0; a < 3; ++a) max_ring = std::max({max_ring, std::abs(c[a] - lo_[a]), std::abs(hi_[a] - c[a])});

  double best_d2 = std::numeric_limits<double>::infinity();
  std::size_t best = points_.size();
  auto consider = [&](std::size_t i) {
    const double d2 = squared_distance(points_[i], q);
    if (d2 < best_d2 || (d2 == best_d2 && i < best)) {
      best_d2 = d2;
      best = i;
    }
  };
  auto brute = [&] {
    for (std::size_t i = 0; i < points_.size(); ++i) consider(i);
    return best;
  };

  for (std::int64_t k = 0; k <= max_ring; ++k) {
    const double side = static_cast<double>(2 * k + 1);
    if (side * side * side > 8.0 * static_cast<double>(points_.size()) + 64.0) return brute();
    for (std::int64_t dx = -k; dx <= k; ++dx)
      for (std::int64_t dy = -k; dy <= k; ++dy)
        for (std::int64_t dz = -k; dz <= k; ++dz) {
          if (std::max({std::abs(dx), std::abs(dy), std::abs(dz)}) != k) continue;
          auto it = cells_.find({c[0] + dx, c[1] + dy, c[2] + dz});
          if (it == cells_.end()) continue;
          for (std::size_t i : it->second) consider(i);
        }
    // Anything outside the visited block lies at least k cells away.
    const double reach = static_cast<double>(k) * cell_;
    if (best < points_.size() && best_d2 < reach * reach) return best;
  }
  return best;
}

// ---------------------------------------------------------------------------

namespace {

using VoxelKey = std::array<std::int64_t, 3>;

VoxelKey voxel_of(const Vec3& p, double cell) {
  return {static_cast<std::int64_t>(std::floor(p[0] / cell)), static_cast<std::int64_t>(std::floor(p[1] / cell)),
          static_cast<std::int64_t>(std::floor(p[2] / cell))};
}

int majority_label(std::span<const std::size_t> members, const PointCloud& cloud, std::vector<std::size_t>& votes) {
  std::fill(votes.begin(), votes.end(), 0);
  bool any = false;
  for (std::size_t i : members) {
    const int l = cloud.labels[i];
    if (cloud.ignore_index && l == *cloud.ignore_index) continue;
    if (l < 0) continue;
    if (static_cast<std::size_t>(l) >= votes.size()) votes.resize(static_cast<std::size_t>(l) + 1, 0);
    ++votes[static_cast<std::size_t>(l)];
    any = true;
  }
  if (!any) return cloud.ignore_index.value_or(-1);
  std::size_t best = 0;
  for (std::size_t c = 1; c < votes.size(); ++c)
    if (votes[c] > votes[best]) best = c;
  return static_cast<int>(best);
}

}  // namespace

PointCloud grid_subsample(const PointCloud& cloud, double cell_size) {
  if (!(cell_size > 0.0)) throw ConfigError("grid_subsample: cell size must be positive");
  if (cloud.positions.empty()) throw DegenerateInputError("grid_subsample: empty input cloud");
  const std::size_t n = cloud.size();
  const std::size_t nf = cloud.feature_count();

  std::vector<VoxelKey> keys(n);
  for (std::size_t i = 0; i < n; ++i) keys[i] = voxel_of(cloud.positions[i], cell_size);
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    return keys[a] != keys[b] ? keys[a] < keys[b] : a < b;
  });

  PointCloud out;
  out.feature_names = cloud.feature_names;
  out.class_count = cloud.class_count;
  out.ignore_index = cloud.ignore_index;
  std::vector<std::size_t> votes(cloud.class_count, 0);
  for (std::size_t start = 0; start < n;) {
    std::size_t stop = start + 1;
    while (stop < n && keys[order[stop]] == keys[order[start]]) ++stop;
    const std::span<const std::size_t> members(order.data() + start, stop - start);
    const double count = static_cast<double>(members.size());

    Vec3 sum{0.0, 0.0, 0.0};
    for (std::size_t i : members)
      for (int a = 0; a < 3; ++a) sum[a] += cloud.positions[i][a];
    out.positions.push_back({sum[0] / count, sum[1] / count, sum[2] / count});
    for (std::size_t f = 0; f < nf; ++f) {
      double acc = 0.0;
      for (std::size_t i : members) acc += cloud.features[i * nf + f];
      out.features.push_back(acc / count);
    }
    if (cloud.has_labels()) out.labels.push_back(majority_label(members, cloud, votes));
    start = stop;
  }
  return out;
}

NeighborTable radius_neighbors(std::span<const Vec3> queries, std::span<const Vec3> supports, double radius,
                               std::size_t cap) {
  if (!(radius > 0.0)) throw ConfigError("radius_neighbors: radius must be positive");
  if (cap < 1) throw ConfigError("radius_neighbors: cap must be at least 1");
  const std::size_t m = queries.size();
  std::vector<std::vector<std::size_t>> rows(m);
  if (!supports.empty()) {
    const PointGrid grid(supports, radius);
    parallel_for(m, [&](std::size_t lo, std::size_t hi) {
      std::vector<std::pair<double, std::size_t>> found;
      for (std::size_t q = lo; q < hi; ++q) {
        grid.radius_query(queries[q], radius, found);
        const std::size_t keep = std::min(cap, found.size());
        rows[q].reserve(keep);
        for (std::size_t j = 0; j < keep; ++j) rows[q].push_back(found[j].second);
      }
    });
  }
  std::size_t width = 1;
  for (const auto& r : rows) width = std::max(width, r.size());

  NeighborTable out;
  out.table.rows = m;
  out.table.cols = width;
  out.table.shadow = supports.size();
  out.table.indices.assign(m * width, supports.size());
  out.counts.resize(m);
  for (std::size_t q = 0; q < m; ++q) {
    std::copy(rows[q].begin(), rows[q].end(), out.table.indices.begin() + static_cast<std::ptrdiff_t>(q * width));
    out.counts[q] = rows[q].size();
  }
  return out;
}

std::vector<std::size_t> nearest_upsample_index(std::span<const Vec3> fine, std::span<const Vec3> coarse) {
  if (coarse.empty()) throw DegenerateInputError("nearest_upsample_index: coarse set is empty");
  // Cell edge from the coarse bounding-box density: about one point per cell.
  Vec3 lo = coarse[0], hi = coarse[0];
  for (const auto& p : coarse)
    for (int a = 0; a < 3; ++a) {
      lo[a] = std::min(lo[a], p[a]);
      hi[a] = std::max(hi[a], p[a]);
    }
  double extent = 0.0;
  for (int a = 0; a < 3; ++a) extent = std::max(extent, hi[a] - lo[a]);
  double cell = extent / std::max(1.0, std::cbrt(static_cast<double>(coarse.size())));
  if (!(cell > 0.0)) cell = 1.0;

  const PointGrid grid(coarse, cell);
  std::vector<std::size_t> out(fine.size());
  parallel_for(fine.size(), [&](std::size_t b, std::size_t e) {
    for (std::size_t i = b; i < e; ++i) out[i] = grid.nearest(fine[i]);
  });
  return out;
}

// ---------------------------------------------------------------------------

std::uint64_t LevelSet::digest() const {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  auto mix = [&h](const void* data, std::size_t bytes) {
    const auto* p = static_cast<const unsigned char*>(data);
    for (std::size_t i = 0; i < bytes; ++i) {
      h ^= p[i];
      h *= 0x100000001b3ULL;
    }
  };
  for (const auto& lvl : levels) {
    mix(lvl.points.data(), lvl.points.size() * sizeof(Vec3));
    mix(&lvl.cell_size, sizeof(double));
    mix(lvl.conv_neighbors.table.indices.data(), lvl.conv_neighbors.table.indices.size() * sizeof(std::size_t));
    mix(lvl.pool_neighbors.table.indices.data(), lvl.pool_neighbors.table.indices.size() * sizeof(std::size_t));
    mix(lvl.upsample_index.data(), lvl.upsample_index.size() * sizeof(std::size_t));
  }
  mix(base.features.data(), base.features.size() * sizeof(double));
  mix(base.labels.data(), base.labels.size() * sizeof(int));
  return h;
}

LevelSet build_levels(const PointCloud& cloud, const LevelParams& params) {
  if (params.level_count < 2) throw ConfigError("build_levels: need at least 2 levels");
  if (!(params.base_cell > 0.0)) throw ConfigError("build_levels: base cell must be positive");
  if (!(params.conv_radius_factor > 0.0)) throw ConfigError("build_levels: radius factor must be positive");
  if (cloud.positions.empty()) throw DegenerateInputError("build_levels: level 1 would be empty (input cloud is empty)");

  LevelSet set;
  set.conv_radius_factor = params.conv_radius_factor;
  set.base = grid_subsample(cloud, params.base_cell);
  set.levels.resize(params.level_count);
  set.levels[0].points = set.base.positions;
  set.levels[0].cell_size = params.base_cell;

  PointCloud current;
  current.positions = set.base.positions;
  for (std::size_t l = 1; l < params.level_count; ++l) {
    const double cell = params.base_cell * std::ldexp(1.0, static_cast<int>(l));
    current = grid_subsample(current, cell);
    if (current.positions.empty()) {
      throw DegenerateInputError("build_levels: level " + std::to_string(l + 1) + " collapsed to 0 points");
    }
    set.levels[l].points = current.positions;
    set.levels[l].cell_size = cell;
  }
  for (std::size_t l = 0; l < params.level_count; ++l) {
    Level& lvl = set.levels[l];
    const double radius = params.conv_radius_factor * lvl.cell_size;
    lvl.conv_neighbors = radius_neighbors(lvl.points, lvl.points, radius, params.neighbor_cap);
    if (l + 1 < params.level_count) {
      const Level& next = set.levels[l + 1];
      lvl.pool_neighbors = radius_neighbors(next.points, lvl.points, radius, params.neighbor_cap);
      lvl.upsample_index = nearest_upsample_index(lvl.points, next.points);
    }
  }
  return set;
}

}  // namespace pyrpoint
