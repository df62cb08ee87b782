#include "pyrpoint/config.hpp"

#include <cmath>
#include <fstream>
#include <set>
#include <sstream>

#include "pyrpoint/errors.hpp"

namespace pyrpoint {

void reject_unknown_keys(const json& doc, std::initializer_list<const char*> allowed, const std::string& where) {
  if (!doc.is_object()) throw ConfigError(where + ": expected a JSON object");
  const std::set<std::string> known(allowed.begin(), allowed.end());
  std::string bad;
  for (auto it = doc.begin(); it != doc.end(); ++it) {
    if (!known.count(it.key())) bad += (bad.empty() ? "" : ", ") + it.key();
  }
  if (!bad.empty()) throw ConfigError(where + ": unknown key(s): " + bad);
}

namespace {

template <typename T>
void read_key(const json& doc, const char* key, T& out, const std::string& where) {
  if (!doc.contains(key)) return;
  try {
    out = doc.at(key).get<T>();
  } catch (const json::exception& e) {
    throw ConfigError(where + "." + key + ": " + e.what());
  }
}

}  // namespace

json AugmentationConfig::to_json() const {
  return {{"rotate", rotate}, {"scale_min", scale_min}, {"scale_max", scale_max}, {"jitter", jitter}};
}

AugmentationConfig AugmentationConfig::from_json(const json& doc) {
  const std::string where = "augmentation";
  reject_unknown_keys(doc, {"rotate", "scale_min", "scale_max", "jitter"}, where);
  AugmentationConfig a;
  read_key(doc, "rotate", a.rotate, where);
  read_key(doc, "scale_min", a.scale_min, where);
  read_key(doc, "scale_max", a.scale_max, where);
  read_key(doc, "jitter", a.jitter, where);
  if (!(a.scale_min > 0.0) || a.scale_max < a.scale_min || a.jitter < 0.0) {
    throw ConfigError("augmentation: need 0 < scale_min <= scale_max and jitter >= 0");
  }
  return a;
}

double TrainingSchedule::learning_rate_at(std::size_t epoch) const {
  return learning_rate * std::pow(lr_decay, static_cast<double>(epoch));
}

void TrainingSchedule::validate() const {
  std::vector<std::string> errors;
  if (!(learning_rate > 0.0)) errors.emplace_back("learning_rate must be > 0");
  if (!(lr_decay > 0.0)) errors.emplace_back("lr_decay must be > 0");
  if (momentum < 0.0 || momentum >= 1.0) errors.emplace_back("momentum must be in [0, 1)");
  if (batch_size < 1) errors.emplace_back("batch_size must be >= 1");
  if (steps_per_epoch < 1) errors.emplace_back("steps_per_epoch must be >= 1");
  if (checkpoint_every < 1) errors.emplace_back("checkpoint_every must be >= 1");
  if (!errors.empty()) {
    std::string msg = "training schedule invalid:";
    for (const auto& e : errors) msg += "\n  - " + e;
    throw ConfigError(msg);
  }
}

json TrainingSchedule::to_json() const {
  return {{"epochs", epochs},
          {"steps_per_epoch", steps_per_epoch},
          {"learning_rate", learning_rate},
          {"lr_decay", lr_decay},
          {"momentum", momentum},
          {"batch_size", batch_size},
          {"checkpoint_every", checkpoint_every},
          {"class_weighting", class_weighting},
          {"grad_clip_norm", grad_clip_norm},
          {"min_level1_points", min_level1_points},
          {"augment", augment},
          {"augmentation", augmentation.to_json()}};
}

TrainingSchedule TrainingSchedule::from_json(const json& doc) {
  const std::string where = "training";
  reject_unknown_keys(doc,
                      {"epochs", "steps_per_epoch", "learning_rate", "lr_decay", "momentum", "batch_size",
                       "checkpoint_every", "class_weighting", "grad_clip_norm", "min_level1_points", "augment",
                       "augmentation"},
                      where);
  TrainingSchedule s;
  read_key(doc, "epochs", s.epochs, where);
  read_key(doc, "steps_per_epoch", s.steps_per_epoch, where);
  read_key(doc, "learning_rate", s.learning_rate, where);
  read_key(doc, "lr_decay", s.lr_decay, where);
  read_key(doc, "momentum", s.momentum, where);
  read_key(doc, "batch_size", s.batch_size, where);
  read_key(doc, "checkpoint_every", s.checkpoint_every, where);
  read_key(doc, "class_weighting", s.class_weighting, where);
  read_key(doc, "grad_clip_norm", s.grad_clip_norm, where);
  read_key(doc, "min_level1_points", s.min_level1_points, where);
  read_key(doc, "augment", s.augment, where);
  if (doc.contains("augmentation")) s.augmentation = AugmentationConfig::from_json(doc.at("augmentation"));
  s.validate();
  return s;
}

void NetworkConfig::validate() const {
  std::vector<std::string> errors;
  if (level_count < 2) errors.emplace_back("level_count must be >= 2");
  if (feature_dims.size() != level_count) {
    errors.emplace_back("feature_dims has " + std::to_string(feature_dims.size()) + " entries but level_count is " +
                        std::to_string(level_count));
  }
  for (std::size_t i = 0; i < feature_dims.size(); ++i) {
    if (feature_dims[i] == 0) errors.emplace_back("feature_dims must be positive");
    if (i > 0 && feature_dims[i] <= feature_dims[i - 1]) errors.emplace_back("feature_dims must be strictly increasing");
  }
  if (pyramid_start < 2 || pyramid_start > level_count) errors.emplace_back("pyramid_start must satisfy 2 <= s0 <= L");
  if (class_count < 1) errors.emplace_back("class_count must be >= 1");
  if (kernel_points < 2) errors.emplace_back("kernel_points must be >= 2");
  if (!(conv_radius_factor > 0.0)) errors.emplace_back("conv_radius_factor must be > 0");
  if (!(influence_factor > 0.0)) errors.emplace_back("influence_factor must be > 0");
  if (neighbor_cap < 1) errors.emplace_back("neighbor_cap must be >= 1");
  if (!(base_cell > 0.0)) errors.emplace_back("base_cell must be > 0");
  if (!(input_sphere_radius > 0.0)) errors.emplace_back("input_sphere_radius must be > 0");
  if (input_features.empty()) errors.emplace_back("input_features must not be empty");
  if (head_width < 1) errors.emplace_back("head_width must be >= 1");
  if (norm_momentum < 0.0 || norm_momentum >= 1.0) errors.emplace_back("norm_momentum must be in [0, 1)");
  if (!errors.empty()) {
    std::string msg = "network config invalid:";
    for (const auto& e : errors) msg += "\n  - " + e;
    throw ConfigError(msg);
  }
}

json NetworkConfig::to_json() const {
  return {{"level_count", level_count},
          {"feature_dims", feature_dims},
          {"pyramid_start", pyramid_start},
          {"class_count", class_count},
          {"hidden_layers", hidden_layers},
          {"attention_mode", to_string(attention_mode)},
          {"kernel_points", kernel_points},
          {"conv_radius_factor", conv_radius_factor},
          {"influence_factor", influence_factor},
          {"neighbor_cap", neighbor_cap},
          {"base_cell", base_cell},
          {"input_sphere_radius", input_sphere_radius},
          {"input_features", input_features},
          {"head_width", head_width},
          {"normalization", to_string(normalization)},
          {"norm_momentum", norm_momentum},
          {"seed", seed},
          {"training", training.to_json()}};
}

NetworkConfig NetworkConfig::from_json(const json& doc) {
  const std::string where = "network";
  reject_unknown_keys(doc,
                      {"level_count", "feature_dims", "pyramid_start", "class_count", "hidden_layers",
                       "attention_mode", "kernel_points", "conv_radius_factor", "influence_factor", "neighbor_cap",
                       "base_cell", "input_sphere_radius", "input_features", "head_width", "normalization",
                       "norm_momentum", "seed", "training"},
                      where);
  NetworkConfig c;
  read_key(doc, "feature_dims", c.feature_dims, where);
  c.level_count = c.feature_dims.size();
  read_key(doc, "level_count", c.level_count, where);
  read_key(doc, "pyramid_start", c.pyramid_start, where);
  read_key(doc, "class_count", c.class_count, where);
  read_key(doc, "hidden_layers", c.hidden_layers, where);
  if (doc.contains("attention_mode")) {
    std::string mode;
    read_key(doc, "attention_mode", mode, where);
    c.attention_mode = attention_mode_from_string(mode);
  }
  read_key(doc, "kernel_points", c.kernel_points, where);
  read_key(doc, "conv_radius_factor", c.conv_radius_factor, where);
  read_key(doc, "influence_factor", c.influence_factor, where);
  read_key(doc, "neighbor_cap", c.neighbor_cap, where);
  read_key(doc, "base_cell", c.base_cell, where);
  read_key(doc, "input_sphere_radius", c.input_sphere_radius, where);
  read_key(doc, "input_features", c.input_features, where);
  read_key(doc, "head_width", c.head_width, where);
  if (doc.contains("normalization")) {
    std::string norm;
    read_key(doc, "normalization", norm, where);
    c.normalization = normalization_from_string(norm);
  }
  read_key(doc, "norm_momentum", c.norm_momentum, where);
  read_key(doc, "seed", c.seed, where);
  if (doc.contains("training")) c.training = TrainingSchedule::from_json(doc.at("training"));
  c.validate();
  return c;
}

NetworkConfig NetworkConfig::load(const std::string& path) { return from_json(read_json_file(path)); }

json read_json_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open " + path);
  try {
    return json::parse(in);
  } catch (const json::parse_error& e) {
    throw ConfigError(path + ": " + e.what());
  }
}

void write_json_file(const std::string& path, const json& doc) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write " + path);
  out << doc.dump(2) << '\n';
  if (!out) throw IoError("write failed: " + path);
}

}  // namespace pyrpoint
