#include "pyrpoint/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <numeric>
#include <sstream>

#include "pyrpoint/errors.hpp"
#include "pyrpoint/parallel.hpp"

namespace pyrpoint {

void sgd_update(std::span<double> param, std::span<const double> grad, std::vector<double>& buffer, double lr,
                double momentum, const std::string& name) {
  if (!grad.empty() && grad.size() != param.size()) throw DimensionError(name + ": gradient size does not match");
  for (double g : grad)
    if (!std::isfinite(g)) throw NumericError("non-finite gradient in parameter '" + name + "'");
  if (buffer.size() != param.size()) buffer.assign(param.size(), 0.0);
  for (std::size_t i = 0; i < param.size(); ++i) {
    const double g = grad.empty() ? 0.0 : grad[i];
    buffer[i] = momentum * buffer[i] + g;
    param[i] -= lr * buffer[i];
  }
}

void sgd_step(ParameterStore& store, double lr, double momentum) {
  for (auto& entry : store) {
    Parameter& p = *entry;
    if (!p.trainable) continue;
    const std::span<const double> grad = p.value.has_grad() ? p.value.grad() : std::span<const double>{};
    sgd_update(p.value.mutable_data(), grad, p.momentum, lr, momentum, p.name);
  }
}

double gradient_norm(const ParameterStore& store) {
  double sum = 0.0;
  for (const auto& entry : store) {
    if (!entry->trainable || !entry->value.has_grad()) continue;
    for (double g : entry->value.grad()) sum += g * g;
  }
  return std::sqrt(sum);
}

double clip_gradients(ParameterStore& store, double max_norm) {
  const double norm = gradient_norm(store);
  if (max_norm > 0.0 && norm > max_norm && std::isfinite(norm)) {
    const double s = max_norm / norm;
    for (auto& entry : store) {
      if (!entry->trainable || !entry->value.has_grad()) continue;
      for (double& g : entry->value.node()->grad) g *= s;
    }
  }
  return norm;
}

std::vector<double> class_weights(const std::vector<std::size_t>& frequency) {
  std::vector<double> w(frequency.size(), 0.0);
  double sum = 0.0;
  std::size_t present = 0;
  for (std::size_t c = 0; c < frequency.size(); ++c) {
    if (frequency[c] == 0) continue;
    w[c] = 1.0 / std::sqrt(static_cast<double>(frequency[c]));
    sum += w[c];
    ++present;
  }
  if (present == 0) return w;
  for (double& v : w) v *= static_cast<double>(present) / sum;
  return w;
}

namespace {

class ThreadCapGuard {
 public:
  explicit ThreadCapGuard(bool single) : previous_(thread_cap()) {
    if (single) set_thread_cap(1);
  }
  ~ThreadCapGuard() { set_thread_cap(previous_); }
  ThreadCapGuard(const ThreadCapGuard&) = delete;
  ThreadCapGuard& operator=(const ThreadCapGuard&) = delete;

 private:
  std::size_t previous_;
};

[[noreturn]] void numeric_abort(const ParameterStore& store, std::size_t step, double lr, double loss) {
  std::string worst = "(none)";
  double worst_norm = -1.0;
  for (const auto& entry : store) {
    if (!entry->trainable || !entry->value.has_grad()) continue;
    double s = 0.0;
    for (double g : entry->value.grad()) s += g * g;
    const double n = std::sqrt(s);
    if (std::isnan(n) || n > worst_norm) {
      worst_norm = n;
      worst = entry->name;
      if (std::isnan(n)) break;
    }
  }
  std::ostringstream os;
  os << "training diverged at step " << step << ": loss " << loss << ", lr " << lr << ", largest gradient norm "
     << worst_norm << " in '" << worst << "'";
  throw NumericError(os.str());
}

std::optional<int> shared_ignore_index(const std::vector<PointCloud>& clouds) {
  return clouds.empty() ? std::nullopt : clouds.front().ignore_index;
}

void check_class_count(const PyramidNetwork& net, const std::vector<PointCloud>& clouds) {
  for (const auto& c : clouds) {
    if (c.has_labels() && c.class_count != net.config().class_count) {
      throw ConfigError("network predicts " + std::to_string(net.config().class_count) + " classes but the data has " +
                        std::to_string(c.class_count));
    }
  }
}

}  // namespace

TrainState train(PyramidNetwork& net, std::shared_ptr<const std::vector<PointCloud>> clouds,
                 const SamplerParams& sampler, TrainState state, const TrainOptions& options) {
  const TrainingSchedule& sched = net.config().training;
  sched.validate();
  check_class_count(net, *clouds);
  const ThreadCapGuard guard(options.deterministic);
  ParameterStore& store = net.parameters();
  const std::size_t classes = net.config().class_count;
  const auto ignore = shared_ignore_index(*clouds);

  BatchIterator batches(clouds, Split::train, sampler, state.seed);
  const std::vector<double> weights =
      sched.class_weighting ? class_weights(batches.class_frequency()) : std::vector<double>{};

  const std::size_t spe = sched.steps_per_epoch;
  std::size_t total = options.epochs.value_or(sched.epochs) * spe;
  if (options.max_steps) total = std::min(total, *options.max_steps);
  if (state.loss_history.empty() && state.step == 0) state.learning_rate = sched.learning_rate_at(0);

  const std::filesystem::path out(options.out_dir);
  if (!options.out_dir.empty()) std::filesystem::create_directories(out);
  const auto checkpoint = [&](const std::string& file) {
    if (!options.out_dir.empty()) save_checkpoint((out / file).string(), net, state);
  };
  if (state.step >= total) {
    checkpoint("checkpoint.bin");
    return state;
  }

  double epoch_loss = 0.0;
  std::size_t epoch_steps = 0;
  ConfusionMatrix epoch_cm(classes);
  const ForwardContext train_ctx{true};

  while (state.step < total) {
    const std::size_t epoch = state.step / spe;
    const double lr = sched.learning_rate_at(epoch);
    const Batch batch = batches.batch(state.step);
    store.zero_grad();

    double loss = 0.0;
    const double share = 1.0 / static_cast<double>(batch.samples.size());
    for (const Sample& s : batch.samples) {
      const LevelGeometry geo = net.prepare(s.levels);
      const ad::Value logits = net.forward(s.levels, geo, s.input, train_ctx);
      const ad::Value l = ad::softmax_cross_entropy(logits, s.levels.base.labels, weights, ignore);
      ad::scale(l, share).backward();
      loss += share * l.item();
      epoch_cm.merge(accumulate_confusion(argmax_rows(logits), s.levels.base.labels, classes, ignore));
    }
    if (!std::isfinite(loss)) numeric_abort(store, state.step, lr, loss);
    const double norm = clip_gradients(store, sched.grad_clip_norm);
    if (!std::isfinite(norm)) numeric_abort(store, state.step, lr, loss);
    sgd_step(store, lr, sched.momentum);

    ++state.step;
    state.epoch = state.step / spe;
    state.learning_rate = lr;
    state.loss_history.push_back(loss);
    epoch_loss += loss;
    ++epoch_steps;
    if (options.on_step) options.on_step({state.step, epoch, lr, loss, norm});

    if (state.step % spe != 0 && state.step != total) continue;

    json record = {{"step", state.step},
                   {"epoch", epoch},
                   {"learning_rate", lr},
                   {"loss", epoch_loss / static_cast<double>(epoch_steps)}};
    if (epoch_cm.total() > 0) {
      const Metrics m = metrics(epoch_cm);
      record["train"] = m.to_json();
      record["iou"] = m.to_json()["iou"];
      record["miou"] = m.mean_iou;
      record["oa"] = m.overall_accuracy;
    }
    bool improved = false;
    if (options.validation) {
      const EvalResult val = evaluate(net, options.validation, sampler);
      record["val"] = val.metrics.to_json();
      record["iou"] = val.metrics.to_json()["iou"];
      record["miou"] = val.metrics.mean_iou;
      record["oa"] = val.metrics.overall_accuracy;
      if (val.metrics.mean_iou > state.best_val_miou) {
        state.best_val_miou = val.metrics.mean_iou;
        improved = true;
      }
    }
    state.metric_history.push_back(record);
    if (!options.out_dir.empty()) {
      std::ofstream log(out / "metrics.jsonl", std::ios::app);
      log << record.dump() << '\n';
    }
    if (options.on_record) options.on_record(record);
    const std::size_t epochs_done = (state.step + spe - 1) / spe;
    if (epochs_done % sched.checkpoint_every == 0 || state.step == total) checkpoint("checkpoint.bin");
    if (improved) checkpoint("best.bin");
    epoch_loss = 0.0;
    epoch_steps = 0;
    epoch_cm = ConfusionMatrix(classes);
  }
  return state;
}

EvalResult evaluate(const PyramidNetwork& net, std::shared_ptr<const std::vector<PointCloud>> clouds,
                    const SamplerParams& sampler) {
  check_class_count(net, *clouds);
  const std::size_t c = net.config().class_count;
  BatchIterator tiles(clouds, Split::test, sampler, net.config().seed);
  std::vector<std::vector<double>> sums(clouds->size());
  std::vector<std::vector<std::uint32_t>> votes(clouds->size());
  for (std::size_t i = 0; i < clouds->size(); ++i) {
    sums[i].assign((*clouds)[i].size() * c, 0.0);
    votes[i].assign((*clouds)[i].size(), 0);
  }

  const ForwardContext frozen{false};
  for (std::size_t t = 0; t < tiles.tile_count(); ++t) {
    const Sample s = tiles.tile(t);
    if (s.levels.level_count() == 0) continue;
    const ad::Value logits = net.forward(s.levels, s.input, frozen);
    const auto nearest = nearest_upsample_index(s.local_positions, s.levels.levels[0].points);
    const auto data = logits.data();
    auto& sum = sums[s.cloud];
    for (std::size_t j = 0; j < nearest.size(); ++j) {
      const std::size_t raw = s.source_indices[j];
      for (std::size_t k = 0; k < c; ++k) sum[raw * c + k] += data[nearest[j] * c + k];
      ++votes[s.cloud][raw];
    }
  }

  EvalResult result;
  result.tiles = tiles.tile_count();
  result.confusion = ConfusionMatrix(c);
  for (std::size_t ci = 0; ci < clouds->size(); ++ci) {
    const PointCloud& cloud = (*clouds)[ci];
    std::vector<int> pred(cloud.size(), 0);
    for (std::size_t i = 0; i < cloud.size(); ++i) {
      if (votes[ci][i] == 0) throw DatasetError("evaluation tiling left point " + std::to_string(i) + " unscored");
      const double inv = 1.0 / votes[ci][i];
      std::size_t best = 0;
      for (std::size_t k = 1; k < c; ++k)
        if (sums[ci][i * c + k] * inv > sums[ci][i * c + best] * inv) best = k;
      pred[i] = static_cast<int>(best);
    }
    if (cloud.has_labels()) result.confusion.merge(accumulate_confusion(pred, cloud.labels, c, cloud.ignore_index));
    result.predictions.push_back(std::move(pred));
  }
  if (result.confusion.total() > 0) result.metrics = metrics(result.confusion);
  return result;
}

// ---------------------------------------------------------------------------

AblationGrid ablation_grid_from_string(const std::string& text) {
  if (text == "attention") return AblationGrid::attention;
  if (text == "hidden") return AblationGrid::hidden;
  if (text == "both") return AblationGrid::both;
  throw ConfigError("unknown ablation grid '" + text + "' (expected attention, hidden or both)");
}

std::string to_string(AblationGrid g) {
  switch (g) {
    case AblationGrid::attention: return "attention";
    case AblationGrid::hidden: return "hidden";
    case AblationGrid::both: return "both";
  }
  return "unknown";
}

std::string attention_row_label(AttentionMode mode) {
  switch (mode) {
    case AttentionMode::none: return "(1) No Focused Kernel";
    case AttentionMode::max_only: return "(2) Max Focused Kernel";
    case AttentionMode::mean_only: return "(3) Mean Focused Kernel";
    case AttentionMode::max_mean: return "(4) Max, Mean Focused Kernel";
  }
  return "unknown";
}

std::vector<AblationVariant> ablation_variants(AblationGrid grid, const NetworkConfig& base) {
  static const AttentionMode modes[] = {AttentionMode::none, AttentionMode::max_only, AttentionMode::mean_only,
                                        AttentionMode::max_mean};
  static const std::size_t hidden[] = {2, 3, 4};
  std::vector<AblationVariant> out;
  switch (grid) {
    case AblationGrid::attention:
      for (auto m : modes) out.push_back({m, base.hidden_layers, attention_row_label(m)});
      break;
    case AblationGrid::hidden:
      for (auto h : hidden) out.push_back({base.attention_mode, h, std::to_string(h)});
      break;
    case AblationGrid::both:
      for (auto m : modes)
        for (auto h : hidden) out.push_back({m, h, attention_row_label(m) + " / " + std::to_string(h)});
      break;
  }
  return out;
}

namespace {

std::vector<std::size_t> ranking(const std::vector<AblationRow>& rows) {
  std::vector<std::size_t> order(rows.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](auto a, auto b) { return rows[a].miou > rows[b].miou; });
  return order;
}

std::string hex(std::uint64_t v) {
  char buf[24];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(v));
  return buf;
}

}  // namespace

std::string AblationResult::table() const {
  std::ostringstream os;
  char buf[256];
  switch (grid) {
    case AblationGrid::attention:
      std::snprintf(buf, sizeof buf, "%-32s %8s %8s\n", "Variation", "mIoU", "OA");
      break;
    case AblationGrid::hidden:
      std::snprintf(buf, sizeof buf, "%-32s %8s %8s\n", "# Hidden Layers", "mIoU", "OA");
      break;
    case AblationGrid::both:
      std::snprintf(buf, sizeof buf, "%-32s %-16s %8s %8s\n", "Variation", "# Hidden Layers", "mIoU", "OA");
      break;
  }
  os << buf;
  for (const auto& r : rows) {
    if (grid == AblationGrid::both) {
      std::snprintf(buf, sizeof buf, "%-32s %-16zu %8.1f %8.1f\n", attention_row_label(r.variant.mode).c_str(),
                    r.variant.hidden_layers, 100.0 * r.miou, 100.0 * r.overall_accuracy);
    } else {
      std::snprintf(buf, sizeof buf, "%-32s %8.1f %8.1f\n", r.variant.row.c_str(), 100.0 * r.miou,
                    100.0 * r.overall_accuracy);
    }
    os << buf;
  }
  os << "ranking by mIoU:";
  for (auto i : ranking(rows)) os << " [" << rows[i].variant.row << "]";
  os << '\n';
  return os.str();
}

json AblationResult::to_json() const {
  json out = {{"grid", to_string(grid)}};
  json list = json::array();
  for (const auto& r : rows) {
    list.push_back({{"row", r.variant.row},
                    {"variation", attention_row_label(r.variant.mode)},
                    {"attention_mode", to_string(r.variant.mode)},
                    {"hidden_layers", r.variant.hidden_layers},
                    {"miou", r.miou},
                    {"oa", r.overall_accuracy},
                    {"final_loss", r.final_loss},
                    {"geometry_digest", hex(r.geometry_digest)},
                    {"parameter_count", r.parameter_count}});
  }
  out["rows"] = list;
  json order = json::array();
  for (auto i : ranking(rows)) order.push_back(rows[i].variant.row);
  out["ranking"] = order;
  return out;
}

AblationResult ablate(const NetworkConfig& base, AblationGrid grid,
                      std::shared_ptr<const std::vector<PointCloud>> train_clouds,
                      std::shared_ptr<const std::vector<PointCloud>> eval_clouds, const SamplerParams& sampler,
                      const TrainOptions& options) {
  AblationResult result;
  result.grid = grid;
  const auto variants = ablation_variants(grid, base);
  for (std::size_t v = 0; v < variants.size(); ++v) {
    NetworkConfig cfg = base;
    cfg.attention_mode = variants[v].mode;
    cfg.hidden_layers = variants[v].hidden_layers;
    PyramidNetwork net(cfg);

    TrainOptions opts = options;
    if (!options.out_dir.empty()) {
      opts.out_dir = (std::filesystem::path(options.out_dir) / ("variant_" + std::to_string(v + 1))).string();
    }
    TrainState state;
    state.seed = cfg.seed;
    const BatchIterator probe(train_clouds, Split::train, sampler, state.seed);
    const std::uint64_t digest = probe.batch(0).samples.front().levels.digest();

    state = train(net, train_clouds, sampler, std::move(state), opts);
    const EvalResult eval = evaluate(net, eval_clouds, sampler);

    AblationRow row;
    row.variant = variants[v];
    row.miou = eval.metrics.mean_iou;
    row.overall_accuracy = eval.metrics.overall_accuracy;
    row.final_loss = state.loss_history.empty() ? 0.0 : state.loss_history.back();
    row.geometry_digest = digest;
    row.parameter_count = net.parameters().trainable_count();
    result.rows.push_back(row);
  }
  return result;
}

}  // namespace pyrpoint
