#pragma once

// On-disk scene, dataset and network files for command-level tests.

#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>

#include "pyrpoint/config.hpp"
#include "pyrpoint_tools/commands.hpp"

namespace fixture {

namespace fs = std::filesystem;
using pyrpoint::json;

inline void write_json(const fs::path& p, const json& doc) {
  std::ofstream(p) << doc.dump(2) << '\n';
}

/// 4-class scene (ground, building, pole, vegetation).
inline json scene_recipe(std::uint64_t seed, double extent, double density) {
  return {{"seed", seed},
          {"extent", {extent, extent}},
          {"density", density},
          {"buildings", {{"count", 1}, {"size_min", 3.0}, {"size_max", 5.0}}},
          {"poles", {{"count", 4}, {"size_min", 5.0}, {"size_max", 7.0}}},
          {"vegetation", {{"count", 3}, {"size_min", 1.0}, {"size_max", 2.0}}}};
}

inline json dataset_spec(const std::string& ply, double base_cell, double radius) {
  return {{"name", "fixture"},
          {"class_names", {"ground", "building", "pole", "vegetation"}},
          {"ignore_index", nullptr},
          {"base_cell", base_cell},
          {"input_sphere_radius", radius},
          {"files", {{"train", {ply}}, {"val", json::array()}, {"test", {ply}}}}};
}

/// Fast network for command plumbing tests.
inline json tiny_network() {
  return {{"feature_dims", {8, 16, 32}},
          {"pyramid_start", 2},
          {"class_count", 4},
          {"hidden_layers", 1},
          {"kernel_points", 5},
          {"neighbor_cap", 16},
          {"head_width", 8},
          {"seed", 1},
          {"training", {{"epochs", 2}, {"steps_per_epoch", 3}, {"min_level1_points", 10}, {"augment", false}}}};
}

struct Workspace {
  fs::path dir;
  fs::path ply, dataset, network;
};

/// Synthesises the scene through the synth command and writes the specs next to it.
inline Workspace make_workspace(const fs::path& dir, const json& recipe, const json& network, double base_cell,
                                double radius) {
  fs::remove_all(dir);
  fs::create_directories(dir);
  Workspace w{dir, dir / "scene.ply", dir / "dataset.json", dir / "network.json"};
  write_json(dir / "recipe.json", recipe);
  std::ostringstream out, err;
  if (pyrpoint::cli::cmd_synth({(dir / "recipe.json").string(), w.ply.string(), false}, out, err) != 0) {
    throw std::runtime_error("synth failed: " + err.str());
  }
  write_json(w.dataset, dataset_spec("scene.ply", base_cell, radius));
  write_json(w.network, network);
  return w;
}

inline std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), {}};
}

}  // namespace fixture
