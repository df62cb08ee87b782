#include "pyrpoint/dataset.hpp"

#include <cmath>
#include <filesystem>
#include <numbers>
#include <set>

#include "pyrpoint/errors.hpp"
#include "pyrpoint/network.hpp"
#include "pyrpoint/ply.hpp"

namespace pyrpoint {

std::string to_string(Split s) {
  switch (s) {
    case Split::train: return "train";
    case Split::val: return "val";
    case Split::test: return "test";
  }
  return "unknown";
}

Split split_from_string(const std::string& text) {
  if (text == "train") return Split::train;
  if (text == "val") return Split::val;
  if (text == "test") return Split::test;
  throw ConfigError("unknown split '" + text + "' (expected train, val or test)");
}

const std::vector<std::string>& DatasetSpec::files(Split s) const {
  switch (s) {
    case Split::train: return train_files;
    case Split::val: return val_files;
    case Split::test: return test_files;
  }
  return train_files;
}

void DatasetSpec::validate() const {
  std::vector<std::string> errors;
  if (class_names.empty()) errors.emplace_back("class_names must not be empty");
  if (std::set<std::string>(class_names.begin(), class_names.end()).size() != class_names.size()) {
    errors.emplace_back("class_names must be unique");
  }
  if (!(base_cell > 0.0)) errors.emplace_back("base_cell must be > 0");
  if (!(input_sphere_radius > 0.0)) errors.emplace_back("input_sphere_radius must be > 0");
  if (ignore_index && *ignore_index >= 0 && static_cast<std::size_t>(*ignore_index) < class_names.size()) {
    errors.emplace_back("ignore_index must not name a real class");
  }
  if (!errors.empty()) {
    std::string msg = "dataset '" + name + "' invalid:";
    for (const auto& e : errors) msg += "\n  - " + e;
    throw ConfigError(msg);
  }
}

json DatasetSpec::to_json() const {
  json doc = {{"name", name},
              {"class_names", class_names},
              {"base_cell", base_cell},
              {"input_sphere_radius", input_sphere_radius},
              {"files", {{"train", train_files}, {"val", val_files}, {"test", test_files}}}};
  doc["ignore_index"] = ignore_index ? json(*ignore_index) : json(nullptr);
  return doc;
}

DatasetSpec DatasetSpec::from_json(const json& doc, const std::string& root) {
  reject_unknown_keys(doc, {"name", "class_names", "ignore_index", "base_cell", "input_sphere_radius", "files"},
                      "dataset");
  DatasetSpec s;
  s.root = root;
  try {
    s.name = doc.at("name").get<std::string>();
    s.class_names = doc.at("class_names").get<std::vector<std::string>>();
    if (doc.contains("ignore_index") && !doc.at("ignore_index").is_null()) s.ignore_index = doc.at("ignore_index").get<int>();
    if (doc.contains("base_cell")) s.base_cell = doc.at("base_cell").get<double>();
    if (doc.contains("input_sphere_radius")) s.input_sphere_radius = doc.at("input_sphere_radius").get<double>();
    const json& files = doc.at("files");
    reject_unknown_keys(files, {"train", "val", "test"}, "dataset.files");
    if (files.contains("train")) s.train_files = files.at("train").get<std::vector<std::string>>();
    if (files.contains("val")) s.val_files = files.at("val").get<std::vector<std::string>>();
    if (files.contains("test")) s.test_files = files.at("test").get<std::vector<std::string>>();
  } catch (const json::exception& e) {
    throw ConfigError(std::string("dataset: ") + e.what());
  }
  s.validate();
  return s;
}

DatasetSpec DatasetSpec::load(const std::string& path) {
  const auto parent = std::filesystem::path(path).parent_path();
  return from_json(read_json_file(path), parent.empty() ? "." : parent.string());
}

std::vector<PointCloud> load_split(const DatasetSpec& spec, Split split) {
  std::vector<PointCloud> out;
  for (const auto& file : spec.files(split)) {
    std::filesystem::path p(file);
    if (p.is_relative()) p = std::filesystem::path(spec.root) / p;
    if (!std::filesystem::exists(p)) throw DatasetError("dataset '" + spec.name + "': missing file " + p.string());
    PointCloud cloud;
    try {
      cloud = read_ply(p.string());
      cloud.class_count = spec.class_count();
      cloud.ignore_index = spec.ignore_index;
      cloud.validate();
    } catch (const LabelError& e) {
      throw DatasetError(p.string() + ": " + e.what());
    } catch (const ParseError& e) {
      throw DatasetError(p.string() + ": " + e.what() + " (byte " + std::to_string(e.offset()) + ")");
    }
    out.push_back(std::move(cloud));
  }
  if (out.empty()) throw DatasetError("dataset '" + spec.name + "': split " + to_string(split) + " lists no files");
  return out;
}

PointCloud sample_sphere(const PointCloud& cloud, const Vec3& center, double radius,
                         std::vector<std::size_t>* source_indices) {
  if (!(radius > 0.0)) throw ConfigError("sample_sphere: radius must be positive");
  PointCloud out;
  out.feature_names = cloud.feature_names;
  out.class_count = cloud.class_count;
  out.ignore_index = cloud.ignore_index;
  if (source_indices) source_indices->clear();
  const double r2 = radius * radius;
  const std::size_t nf = cloud.feature_count();
  for (std::size_t i = 0; i < cloud.size(); ++i) {
    if (squared_distance(cloud.positions[i], center) > r2) continue;
    out.positions.push_back(cloud.positions[i]);
    for (std::size_t f = 0; f < nf; ++f) out.features.push_back(cloud.features[i * nf + f]);
    if (cloud.has_labels()) out.labels.push_back(cloud.labels[i]);
    if (source_indices) source_indices->push_back(i);
  }
  return out;
}

SamplerParams sampler_params(const NetworkConfig& config, const DatasetSpec* dataset) {
  SamplerParams p;
  p.radius = dataset ? dataset->input_sphere_radius : config.input_sphere_radius;
  p.levels.base_cell = dataset ? dataset->base_cell : config.base_cell;
  p.levels.level_count = config.level_count;
  p.levels.conv_radius_factor = config.conv_radius_factor;
  p.levels.neighbor_cap = config.neighbor_cap;
  p.batch_size = config.training.batch_size;
  p.min_level1_points = config.training.min_level1_points;
  p.augment = config.training.augment;
  p.augmentation = config.training.augmentation;
  p.input_recipe = config.input_features;
  return p;
}

// ---------------------------------------------------------------------------

BatchIterator::BatchIterator(std::shared_ptr<const std::vector<PointCloud>> clouds, Split mode, SamplerParams params,
                             std::uint64_t seed)
    : clouds_(std::move(clouds)), mode_(mode), params_(std::move(params)), seed_(seed) {
  if (!clouds_ || clouds_->empty()) throw DatasetError("batch iterator needs at least one cloud");
  if (params_.batch_size < 1) throw ConfigError("batch_size must be >= 1");
  if (!(params_.radius > 0.0)) throw ConfigError("sphere radius must be positive");

  if (mode_ == Split::train) {
    std::size_t classes = 0;
    for (const auto& c : *clouds_) {
      if (!c.has_labels()) throw DatasetError("train mode needs labeled clouds");
      classes = std::max(classes, c.class_count);
    }
    frequency_.assign(classes, 0);
    by_class_.assign(classes, {});
    for (std::size_t ci = 0; ci < clouds_->size(); ++ci) {
      const auto& c = (*clouds_)[ci];
      for (std::size_t i = 0; i < c.size(); ++i) {
        const int l = c.labels[i];
        if (c.ignore_index && l == *c.ignore_index) continue;
        ++frequency_[static_cast<std::size_t>(l)];
        by_class_[static_cast<std::size_t>(l)].emplace_back(ci, i);
      }
    }
    std::size_t total = 0;
    for (auto f : frequency_) total += f;
    if (total == 0) throw DatasetError("train clouds hold no scored points");
    return;
  }

  const double r = params_.radius;
  for (std::size_t ci = 0; ci < clouds_->size(); ++ci) {
    const auto& c = (*clouds_)[ci];
    if (c.size() == 0) continue;
    Vec3 lo = c.positions[0], hi = c.positions[0];
    for (const auto& p : c.positions)
      for (int a = 0; a < 3; ++a) lo[a] = std::min(lo[a], p[a]), hi[a] = std::max(hi[a], p[a]);
    std::array<std::size_t, 3> steps{};
    for (int a = 0; a < 3; ++a) steps[a] = static_cast<std::size_t>(std::ceil((hi[a] - lo[a]) / r)) + 1;
    const PointGrid grid(c.positions, r);
    std::vector<std::pair<double, std::size_t>> found;
    for (std::size_t kz = 0; kz < steps[2]; ++kz)
      for (std::size_t ky = 0; ky < steps[1]; ++ky)
        for (std::size_t kx = 0; kx < steps[0]; ++kx) {
          const Vec3 center{lo[0] + static_cast<double>(kx) * r, lo[1] + static_cast<double>(ky) * r,
                            lo[2] + static_cast<double>(kz) * r};
          grid.radius_query(center, r, found);
          if (!found.empty()) tiles_.emplace_back(ci, center);
        }
  }
}

Sample BatchIterator::build(std::size_t cloud_index, const Vec3& center, Rng* rng) const {
  const PointCloud& cloud = (*clouds_)[cloud_index];
  Sample s;
  s.cloud = cloud_index;
  s.center = center;
  PointCloud sphere = sample_sphere(cloud, center, params_.radius, &s.source_indices);

  double cos_t = 1.0, sin_t = 0.0, scale = 1.0, jitter = 0.0;
  if (rng && params_.augment) {
    const auto& a = params_.augmentation;
    if (a.rotate) {
      const double theta = rng->uniform() * 2.0 * std::numbers::pi;
      cos_t = std::cos(theta);
      sin_t = std::sin(theta);
    }
    scale = rng->uniform(a.scale_min, a.scale_max);
    jitter = a.jitter;
  }
  for (auto& p : sphere.positions) {
    const double x = p[0] - center[0], y = p[1] - center[1];
    p = {scale * (cos_t * x - sin_t * y), scale * (sin_t * x + cos_t * y), scale * p[2]};
    if (jitter > 0.0) {
      for (auto& v : p) v += rng->normal(0.0, jitter);
    }
  }
  s.local_positions = sphere.positions;
  if (sphere.size() == 0) return s;
  s.levels = build_levels(sphere, params_.levels);
  s.input = input_features(s.levels.base, params_.input_recipe);
  return s;
}

std::vector<std::pair<std::size_t, Vec3>> BatchIterator::centers(std::size_t step) const {
  std::vector<std::pair<std::size_t, Vec3>> out;
  const Batch b = batch(step);
  for (const auto& s : b.samples) out.emplace_back(s.cloud, s.center);
  return out;
}

Batch BatchIterator::batch(std::size_t step) const {
  if (mode_ != Split::train) throw ConfigError("batch(step) is only available in train mode");
  Rng rng(derive_seed(derive_seed(seed_, "batch"), static_cast<std::uint64_t>(step)));
  std::vector<double> cumulative;
  double total = 0.0;
  for (auto f : frequency_) {
    total += f > 0 ? 1.0 / static_cast<double>(f) : 0.0;
    cumulative.push_back(total);
  }

  Batch batch;
  batch.step = step;
  constexpr int kMaxAttempts = 100;
  for (std::size_t b = 0; b < params_.batch_size; ++b) {
    bool accepted = false;
    for (int attempt = 0; attempt < kMaxAttempts && !accepted; ++attempt) {
      const double u = rng.uniform() * total;
      std::size_t cls = 0;
      while (cls + 1 < cumulative.size() && (cumulative[cls] <= u || frequency_[cls] == 0)) ++cls;
      const auto& pool = by_class_[cls];
      const auto [ci, pi] = pool[rng.below(pool.size())];
      Sample s = build(ci, (*clouds_)[ci].positions[pi], &rng);
      if (s.levels.level_count() > 0 && s.levels.levels[0].points.size() >= params_.min_level1_points) {
        batch.samples.push_back(std::move(s));
        accepted = true;
      }
    }
    if (!accepted) {
      throw DatasetError("could not draw a sphere with at least " + std::to_string(params_.min_level1_points) +
                         " level-1 points in " + std::to_string(kMaxAttempts) + " attempts");
    }
  }
  return batch;
}

Sample BatchIterator::tile(std::size_t i) const {
  if (mode_ == Split::train) throw ConfigError("tile(i) is only available in val/test mode");
  const auto& [ci, center] = tiles_.at(i);
  return build(ci, center, nullptr);
}

std::optional<Batch> BatchIterator::next() {
  if (mode_ == Split::train) return batch(cursor_++);
  if (cursor_ >= tiles_.size()) return std::nullopt;
  Batch b;
  b.step = cursor_ / params_.batch_size;
  for (std::size_t k = 0; k < params_.batch_size && cursor_ < tiles_.size(); ++k) b.samples.push_back(tile(cursor_++));
  return b;
}

}  // namespace pyrpoint
