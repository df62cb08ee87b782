#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include "pyrpoint/spatial.hpp"

namespace pyrpoint {

enum class PlyFormat { ascii, binary };

/// Label -> RGB. Labels outside the table (including an ignore index) map to grey.
struct Palette {
  std::vector<std::array<std::uint8_t, 3>> colors;
  std::array<std::uint8_t, 3> color(int label) const;
};

/// Distinct colours for `class_count` classes.
Palette default_palette(std::size_t class_count);

/// Reads ascii or binary_little_endian PLY. x/y/z become positions;
/// red/green/blue/intensity (and any property named by a "comment feature"
/// line) become features; class/scalar_class/label become labels. Other
/// properties are skipped and reported through `warnings` (stderr when null).
PointCloud read_ply(const std::string& path, std::vector<std::string>* warnings = nullptr);

/// Positions and features as double, labels as int "class". With a palette,
/// per-point red/green/blue uchar colours replace any colour features.
void write_ply(const PointCloud& cloud, const std::string& path, PlyFormat format, const Palette* palette = nullptr);

}  // namespace pyrpoint
