#pragma once

#include <cstdint>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "pyrpoint/autodiff.hpp"
#include "pyrpoint/config.hpp"
#include "pyrpoint/rng.hpp"
#include "pyrpoint/spatial.hpp"

namespace pyrpoint {

enum class Split { train, val, test };
std::string to_string(Split s);
Split split_from_string(const std::string& text);

struct DatasetSpec {
  std::string name;
  std::vector<std::string> class_names;
  std::optional<int> ignore_index;
  double base_cell = 0.25;
  double input_sphere_radius = 15.0;
  std::vector<std::string> train_files, val_files, test_files;
  std::string root;  // directory relative file names resolve against

  std::size_t class_count() const { return class_names.size(); }
  const std::vector<std::string>& files(Split s) const;
  void validate() const;
  json to_json() const;
  static DatasetSpec from_json(const json& doc, const std::string& root = ".");
  static DatasetSpec load(const std::string& path);
};

/// Reads every PLY of a split and checks labels against the dataset's classes.
std::vector<PointCloud> load_split(const DatasetSpec& spec, Split split);

/// Points within `radius` of `center` (inclusive), in cloud order.
PointCloud sample_sphere(const PointCloud& cloud, const Vec3& center, double radius,
                         std::vector<std::size_t>* source_indices = nullptr);

struct SamplerParams {
  double radius = 15.0;
  LevelParams levels;
  std::size_t batch_size = 1;
  std::size_t min_level1_points = 100;
  bool augment = true;
  AugmentationConfig augmentation;
  std::vector<std::string> input_recipe{"one", "height"};
};

/// Sampler parameters implied by a network config, with the dataset's cell
/// size and sphere radius taking precedence.
SamplerParams sampler_params(const NetworkConfig& config, const DatasetSpec* dataset = nullptr);

/// One input sphere. Positions are expressed relative to the sphere center in
/// x/y (z is kept), after any augmentation.
struct Sample {
  LevelSet levels;
  ad::Value input;
  std::size_t cloud = 0;
  Vec3 center{};
  std::vector<std::size_t> source_indices;  // sphere points in the source cloud
  std::vector<Vec3> local_positions;        // those points, transformed like the levels
};

struct Batch {
  std::size_t step = 0;
  std::vector<Sample> samples;
};

/// Train mode draws sphere centers class-balanced (class picked with
/// probability proportional to 1/frequency, then a uniform point of that
/// class) and augments. Batches are a pure function of (seed, step).
/// Val/test mode tiles each cloud with a grid of centers spaced one radius
/// apart, which covers every point; empty tiles are skipped.
class BatchIterator {
 public:
  BatchIterator(std::shared_ptr<const std::vector<PointCloud>> clouds, Split mode, SamplerParams params,
                std::uint64_t seed);

  Split mode() const { return mode_; }
  const SamplerParams& params() const { return params_; }
  const std::vector<PointCloud>& clouds() const { return *clouds_; }

  /// Train mode only.
  Batch batch(std::size_t step) const;
  /// Train mode: the sphere centers `batch(step)` would use, without building levels.
  std::vector<std::pair<std::size_t, Vec3>> centers(std::size_t step) const;

  /// Val/test mode tiles in deterministic order.
  std::size_t tile_count() const { return tiles_.size(); }
  std::pair<std::size_t, Vec3> tile_center(std::size_t i) const { return tiles_.at(i); }
  Sample tile(std::size_t i) const;

  /// Stream form: train mode yields batch(0), batch(1), ...; val/test yields
  /// batches of consecutive tiles and then nothing.
  std::optional<Batch> next();

  /// Per-class point counts over the train clouds (ignored labels excluded).
  const std::vector<std::size_t>& class_frequency() const { return frequency_; }

 private:
  Sample build(std::size_t cloud, const Vec3& center, Rng* augment_rng) const;

  std::shared_ptr<const std::vector<PointCloud>> clouds_;
  Split mode_;
  SamplerParams params_;
  std::uint64_t seed_;
  std::vector<std::size_t> frequency_;
  std::vector<std::vector<std::pair<std::size_t, std::size_t>>> by_class_;  // (cloud, point)
  std::vector<std::pair<std::size_t, Vec3>> tiles_;
  std::size_t cursor_ = 0;
};

}  // namespace pyrpoint
