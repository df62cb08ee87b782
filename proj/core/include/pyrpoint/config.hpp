#pragma once

#include <cstdint>
#include <initializer_list>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "pyrpoint/blocks.hpp"
#include "pyrpoint/point_conv.hpp"

namespace pyrpoint {

using json = nlohmann::json;

/// Throws ConfigError naming every key of `doc` not in `allowed`.
void reject_unknown_keys(const json& doc, std::initializer_list<const char*> allowed, const std::string& where);

struct AugmentationConfig {
  bool rotate = true;  // random rotation about the vertical axis
  double scale_min = 0.9;
  double scale_max = 1.1;
  double jitter = 0.01;  // Gaussian sigma, meters

  json to_json() const;
  static AugmentationConfig from_json(const json& doc);
};

struct TrainingSchedule {
  std::size_t epochs = 1;
  std::size_t steps_per_epoch = 100;
  double learning_rate = 1e-2;
  double lr_decay = 0.95;  // per epoch
  double momentum = 0.98;
  std::size_t batch_size = 1;
  std::size_t checkpoint_every = 1;  // epochs
  bool class_weighting = true;       // inverse sqrt frequency
  double grad_clip_norm = 100.0;     // <= 0 disables
  std::size_t min_level1_points = 100;
  bool augment = true;
  AugmentationConfig augmentation;

  double learning_rate_at(std::size_t epoch) const;
  void validate() const;
  json to_json() const;
  static TrainingSchedule from_json(const json& doc);
};

/// Complete architecture and training description of one network.
struct NetworkConfig {
  std::size_t level_count = 5;
  std::vector<std::size_t> feature_dims{64, 128, 256, 512, 1024};
  std::size_t pyramid_start = 3;  // first (1-based) level that spawns a decoder chain
  std::size_t class_count = 8;
  std::size_t hidden_layers = 3;
  AttentionMode attention_mode = AttentionMode::max_mean;
  std::size_t kernel_points = 15;
  double conv_radius_factor = 2.5;
  double influence_factor = 0.5;  // sigma = factor * kernel radius
  std::size_t neighbor_cap = 40;
  double base_cell = 0.25;
  double input_sphere_radius = 15.0;
  std::vector<std::string> input_features{"one", "height"};
  std::size_t head_width = 64;
  Normalization normalization = Normalization::batch;
  double norm_momentum = kBatchNormMomentum;
  std::uint64_t seed = 0;
  TrainingSchedule training;

  /// Collects every violated invariant into one ConfigError.
  void validate() const;
  json to_json() const;
  static NetworkConfig from_json(const json& doc);
  static NetworkConfig load(const std::string& path);
};

json read_json_file(const std::string& path);
void write_json_file(const std::string& path, const json& doc);

}  // namespace pyrpoint
