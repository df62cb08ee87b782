#pragma once

#include <array>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "pyrpoint/config.hpp"
#include "pyrpoint/spatial.hpp"

namespace pyrpoint {

/// Count and size range of one primitive kind. Sizes are meters:
/// buildings draw width, depth and height from the range; poles draw height
/// (radius fixed at kPoleRadius); vegetation draws the sphere radius; wires
/// draw the span length.
struct PrimitiveSpec {
  std::size_t count = 0;
  double size_min = 1.0;
  double size_max = 1.0;
};

inline constexpr double kSynthNoise = 0.02;
inline constexpr double kPoleRadius = 0.15;
inline constexpr double kWireWidth = 0.1;  // nominal width used for a wire's sampling area
inline constexpr double kWireHeight = 7.0;

/// Ground is always present. Every other kind present in the recipe adds a
/// class, in the order ground, building, pole, vegetation, wire.
struct SceneRecipe {
  std::uint64_t seed = 0;
  std::array<double, 2> extent{40.0, 40.0};
  double density = 20.0;  // points per square meter of surface
  std::optional<PrimitiveSpec> buildings, poles, vegetation, wires;

  std::vector<std::string> class_names() const;
  void validate() const;
  json to_json() const;
  static SceneRecipe from_json(const json& doc);
  static SceneRecipe load(const std::string& path);
};

/// Surface area each labeled primitive of a generated scene was sampled over,
/// per class. Filled by synth_scene for histogram checks.
struct SceneAreas {
  std::vector<double> per_class;
};

PointCloud synth_scene(const SceneRecipe& recipe, SceneAreas* areas = nullptr);

}  // namespace pyrpoint
