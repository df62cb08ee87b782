#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "pyrpoint/config.hpp"
#include "pyrpoint/network.hpp"

namespace pyrpoint {

/// Loop position and history carried across checkpoints.
struct TrainState {
  std::size_t step = 0;
  std::size_t epoch = 0;
  double learning_rate = 0.0;
  double best_val_miou = -1.0;  // negative until a validation pass has run
  std::uint64_t seed = 0;
  std::vector<double> loss_history;  // one entry per optimizer step
  json metric_history = json::array();

  json to_json() const;
  static TrainState from_json(const json& doc);
};

/// Writes config, every registered parameter (values as raw little-endian
/// doubles, plus momentum buffers when present) and the train state.
void save_checkpoint(const std::string& path, const PyramidNetwork& net, const TrainState& state);

struct LoadedCheckpoint {
  PyramidNetwork network;
  TrainState state;
};

/// Rebuilds the network from the stored config and restores every parameter.
/// Throws IoError / ParseError on damaged files and ConfigError when the stored
/// tensors do not match the network the config describes.
LoadedCheckpoint load_checkpoint(const std::string& path);

/// Restores parameters from `path` into an existing network with the same
/// parameter names and shapes.
TrainState load_checkpoint_into(const std::string& path, PyramidNetwork& net);

}  // namespace pyrpoint
