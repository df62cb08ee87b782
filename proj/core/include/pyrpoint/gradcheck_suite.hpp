#pragma once

#include <cstdint>
#include <limits>
#include <string>
#include <vector>

#include "pyrpoint/config.hpp"
#include "pyrpoint/spatial.hpp"

namespace pyrpoint {

enum class GradcheckScope { ops, blocks, network, all };
GradcheckScope gradcheck_scope_from_string(const std::string& text);

inline constexpr double kOpsGradTolerance = 1e-4;
inline constexpr double kBlocksGradTolerance = 1e-4;
inline constexpr double kNetworkGradTolerance = 1e-3;

struct GradcheckItem {
  std::string scope;
  std::string name;
  double error = std::numeric_limits<double>::infinity();
  double threshold = 0.0;
  bool passed = false;
  std::string note;  // set when the check itself threw
};

struct GradcheckReport {
  std::vector<GradcheckItem> items;
  double seconds = 0.0;

  bool passed() const;
  std::string table() const;
  json to_json() const;
};

/// Central-difference checks of every autodiff op, every block type, and a
/// 3-level toy network, all in double with frozen normalization. With
/// `inject_fault` an op with a deliberately wrong backward joins the ops scope.
GradcheckReport run_gradcheck(GradcheckScope scope, std::uint64_t seed, bool inject_fault = false);

/// 3 levels, dims 4/8/16, two decoder chains, 5 kernel points, 3 classes.
NetworkConfig toy_network_config(std::uint64_t seed);
/// `n` labeled points in the unit cube, pairwise farther apart than a level-1
/// voxel diagonal so each survives subsampling.
PointCloud toy_cloud(std::uint64_t seed, std::size_t n = 12, std::size_t class_count = 3);

}  // namespace pyrpoint
