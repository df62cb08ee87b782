#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "pyrpoint/checkpoint.hpp"
#include "pyrpoint/dataset.hpp"
#include "pyrpoint/metrics.hpp"
#include "pyrpoint/network.hpp"

namespace pyrpoint {

/// buffer <- momentum * buffer + grad; param <- param - lr * buffer.
/// Throws NumericError naming `name` when the gradient is not finite.
void sgd_update(std::span<double> param, std::span<const double> grad, std::vector<double>& buffer, double lr,
                double momentum, const std::string& name = "parameter");

/// Applies sgd_update to every trainable parameter, reading gradients from the
/// autodiff leaves (missing gradients count as zero).
void sgd_step(ParameterStore& store, double lr, double momentum);

/// L2 norm over every trainable gradient.
double gradient_norm(const ParameterStore& store);
/// Rescales every gradient so the global norm is at most `max_norm`. Returns the norm before clipping.
double clip_gradients(ParameterStore& store, double max_norm);

/// w_c proportional to 1/sqrt(frequency), scaled to average 1 over present classes; 0 for absent ones.
std::vector<double> class_weights(const std::vector<std::size_t>& frequency);

struct StepLog {
  std::size_t step = 0;
  std::size_t epoch = 0;
  double learning_rate = 0.0;
  double loss = 0.0;
  double grad_norm = 0.0;
};

struct TrainOptions {
  std::string out_dir;                 // checkpoints and metrics.jsonl; empty keeps everything in memory
  std::optional<std::size_t> epochs;   // overrides the schedule
  std::optional<std::size_t> max_steps;  // stop after this many total steps
  bool deterministic = true;           // single-threaded
  std::vector<std::string> class_names;
  std::shared_ptr<const std::vector<PointCloud>> validation;  // evaluated at every checkpoint when set
  std::function<void(const StepLog&)> on_step;
  std::function<void(const json&)> on_record;
};

/// Runs the schedule from `state.step` onward and returns the final state.
/// Each epoch appends one record (mean loss, training-batch metrics and,
/// when configured, validation metrics) to the state and to metrics.jsonl,
/// and checkpoints every `checkpoint_every` epochs and at the end.
TrainState train(PyramidNetwork& net, std::shared_ptr<const std::vector<PointCloud>> clouds,
                 const SamplerParams& sampler, TrainState state, const TrainOptions& options);

struct EvalResult {
  ConfusionMatrix confusion;
  Metrics metrics;
  std::vector<std::vector<int>> predictions;  // per cloud, per raw point
  std::size_t tiles = 0;
};

/// Tiles every cloud, averages tile logits per raw point and scores the argmax.
EvalResult evaluate(const PyramidNetwork& net, std::shared_ptr<const std::vector<PointCloud>> clouds,
                    const SamplerParams& sampler);

// ---------------------------------------------------------------------------

enum class AblationGrid { attention, hidden, both };
AblationGrid ablation_grid_from_string(const std::string& text);
std::string to_string(AblationGrid g);

struct AblationVariant {
  AttentionMode mode = AttentionMode::max_mean;
  std::size_t hidden_layers = 3;
  std::string row;  // table row label
};

/// Row labels "(1) No Focused Kernel" .. "(4) Max, Mean Focused Kernel" for
/// the attention grid, hidden-layer counts 2/3/4 for the hidden grid, and
/// their product for both.
std::vector<AblationVariant> ablation_variants(AblationGrid grid, const NetworkConfig& base);
std::string attention_row_label(AttentionMode mode);

struct AblationRow {
  AblationVariant variant;
  double miou = 0.0;
  double overall_accuracy = 0.0;
  double final_loss = 0.0;
  std::uint64_t geometry_digest = 0;  // digest of the first training batch's levels
  std::size_t parameter_count = 0;
};

struct AblationResult {
  AblationGrid grid = AblationGrid::both;
  std::vector<AblationRow> rows;

  std::string table() const;
  json to_json() const;
};

/// Trains and evaluates every variant from the same seed and schedule.
AblationResult ablate(const NetworkConfig& base, AblationGrid grid,
                      std::shared_ptr<const std::vector<PointCloud>> train_clouds,
                      std::shared_ptr<const std::vector<PointCloud>> eval_clouds, const SamplerParams& sampler,
                      const TrainOptions& options);

}  // namespace pyrpoint
