#include "pyrpoint/synth.hpp"

#include <cmath>
#include <numbers>

#include "pyrpoint/errors.hpp"
#include "pyrpoint/rng.hpp"

namespace pyrpoint {

namespace {

constexpr double kPi = std::numbers::pi;

json primitive_to_json(const PrimitiveSpec& p) {
  return {{"count", p.count}, {"size_min", p.size_min}, {"size_max", p.size_max}};
}

PrimitiveSpec primitive_from_json(const json& doc, const std::string& where) {
  reject_unknown_keys(doc, {"count", "size_min", "size_max"}, where);
  PrimitiveSpec p;
  try {
    p.count = doc.at("count").get<std::size_t>();
    p.size_min = doc.at("size_min").get<double>();
    p.size_max = doc.at("size_max").get<double>();
  } catch (const json::exception& e) {
    throw ConfigError(where + ": " + e.what());
  }
  return p;
}

std::size_t point_count(double density, double area) {
  return static_cast<std::size_t>(std::llround(density * area));
}

struct Footprint {
  double x0, y0, x1, y1;
  bool overlaps(const Footprint& o, double margin) const {
    return x0 < o.x1 + margin && o.x0 < x1 + margin && y0 < o.y1 + margin && o.y0 < y1 + margin;
  }
  bool contains(double x, double y) const { return x >= x0 && x < x1 && y >= y0 && y < y1; }
};

class Scene {
 public:
  Scene(const SceneRecipe& r, Rng& rng) : recipe_(r), rng_(rng) {}

  /// Random footprint of half-size (hx, hy) inside the extent, clear of
  /// everything placed so far.
  Footprint place(double hx, double hy, const std::string& what) {
    const double ex = recipe_.extent[0], ey = recipe_.extent[1];
    if (2 * hx >= ex || 2 * hy >= ey) throw ConfigError("synth: " + what + " does not fit inside the scene extent");
    for (int attempt = 0; attempt < 2000; ++attempt) {
      const double cx = rng_.uniform(hx, ex - hx);
      const double cy = rng_.uniform(hy, ey - hy);
      const Footprint f{cx - hx, cy - hy, cx + hx, cy + hy};
      bool clear = true;
      for (const auto& o : placed_) clear = clear && !f.overlaps(o, 1.0);
      if (clear) {
        placed_.push_back(f);
        return f;
      }
    }
    throw ConfigError("synth: could not place every " + what + " without overlap; enlarge the extent");
  }

  void emit(const Vec3& p, int label) {
    cloud.positions.push_back({p[0] + rng_.normal(0.0, kSynthNoise), p[1] + rng_.normal(0.0, kSynthNoise),
                               p[2] + rng_.normal(0.0, kSynthNoise)});
    cloud.labels.push_back(label);
  }

  PointCloud cloud;
  std::vector<Footprint> buildings;

 private:
  const SceneRecipe& recipe_;
  Rng& rng_;
  std::vector<Footprint> placed_;
};

}  // namespace

std::vector<std::string> SceneRecipe::class_names() const {
  std::vector<std::string> names{"ground"};
  if (buildings) names.emplace_back("building");
  if (poles) names.emplace_back("pole");
  if (vegetation) names.emplace_back("vegetation");
  if (wires) names.emplace_back("wire");
  return names;
}

void SceneRecipe::validate() const {
  if (!(extent[0] > 0.0) || !(extent[1] > 0.0)) throw ConfigError("scene recipe: extent must be positive");
  if (!(density > 0.0)) throw ConfigError("scene recipe: density must be positive");
  const std::pair<const char*, const std::optional<PrimitiveSpec>*> kinds[] = {
      {"buildings", &buildings}, {"poles", &poles}, {"vegetation", &vegetation}, {"wires", &wires}};
  for (const auto& [name, spec] : kinds) {
    if (!*spec) continue;
    if (!((*spec)->size_min > 0.0) || (*spec)->size_max < (*spec)->size_min) {
      throw ConfigError(std::string("scene recipe: ") + name + " needs 0 < size_min <= size_max");
    }
  }
}

json SceneRecipe::to_json() const {
  json doc = {{"seed", seed}, {"extent", extent}, {"density", density}};
  if (buildings) doc["buildings"] = primitive_to_json(*buildings);
  if (poles) doc["poles"] = primitive_to_json(*poles);
  if (vegetation) doc["vegetation"] = primitive_to_json(*vegetation);
  if (wires) doc["wires"] = primitive_to_json(*wires);
  return doc;
}

SceneRecipe SceneRecipe::from_json(const json& doc) {
  reject_unknown_keys(doc, {"seed", "extent", "density", "buildings", "poles", "vegetation", "wires"}, "scene recipe");
  SceneRecipe r;
  try {
    if (doc.contains("seed")) r.seed = doc.at("seed").get<std::uint64_t>();
    if (doc.contains("extent")) r.extent = doc.at("extent").get<std::array<double, 2>>();
    if (doc.contains("density")) r.density = doc.at("density").get<double>();
  } catch (const json::exception& e) {
    throw ConfigError(std::string("scene recipe: ") + e.what());
  }
  if (doc.contains("buildings")) r.buildings = primitive_from_json(doc.at("buildings"), "scene recipe.buildings");
  if (doc.contains("poles")) r.poles = primitive_from_json(doc.at("poles"), "scene recipe.poles");
  if (doc.contains("vegetation")) r.vegetation = primitive_from_json(doc.at("vegetation"), "scene recipe.vegetation");
  if (doc.contains("wires")) r.wires = primitive_from_json(doc.at("wires"), "scene recipe.wires");
  r.validate();
  return r;
}

SceneRecipe SceneRecipe::load(const std::string& path) { return from_json(read_json_file(path)); }

PointCloud synth_scene(const SceneRecipe& recipe, SceneAreas* areas) {
  recipe.validate();
  Rng rng(derive_seed(recipe.seed, "synth"));
  Scene scene(recipe, rng);
  const auto names = recipe.class_names();
  std::vector<double> area(names.size(), 0.0);
  int next_label = 1;
  const double ex = recipe.extent[0], ey = recipe.extent[1];

  if (recipe.buildings) {
    const int label = next_label++;
    for (std::size_t b = 0; b < recipe.buildings->count; ++b) {
      const double w = rng.uniform(recipe.buildings->size_min, recipe.buildings->size_max);
      const double d = rng.uniform(recipe.buildings->size_min, recipe.buildings->size_max);
      const double h = rng.uniform(recipe.buildings->size_min, recipe.buildings->size_max);
      const Footprint f = scene.place(w / 2, d / 2, "building");
      scene.buildings.push_back(f);
      const double walls_x = w * h, walls_y = d * h, roof = w * d;
      const double total = 2 * walls_x + 2 * walls_y + roof;
      area[label] += total;
      const std::size_t n = point_count(recipe.density, total);
      for (std::size_t i = 0; i < n; ++i) {
        const double pick = rng.uniform() * total;
        const double u = rng.uniform(), v = rng.uniform();
        Vec3 p;
        if (pick < roof) {
          p = {f.x0 + u * w, f.y0 + v * d, h};
        } else if (pick < roof + 2 * walls_x) {
          p = {f.x0 + u * w, pick < roof + walls_x ? f.y0 : f.y1, v * h};
        } else {
          p = {pick < roof + 2 * walls_x + walls_y ? f.x0 : f.x1, f.y0 + u * d, v * h};
        }
        scene.emit(p, label);
      }
    }
  }

  if (recipe.poles) {
    const int label = next_label++;
    for (std::size_t b = 0; b < recipe.poles->count; ++b) {
      const double h = rng.uniform(recipe.poles->size_min, recipe.poles->size_max);
      const Footprint f = scene.place(kPoleRadius, kPoleRadius, "pole");
      const double cx = (f.x0 + f.x1) / 2, cy = (f.y0 + f.y1) / 2;
      const double side = 2 * kPi * kPoleRadius * h, top = kPi * kPoleRadius * kPoleRadius;
      area[label] += side + top;
      const std::size_t n = point_count(recipe.density, side + top);
      for (std::size_t i = 0; i < n; ++i) {
        const double t = rng.uniform() * 2 * kPi;
        if (rng.uniform() * (side + top) < top) {
          const double r = kPoleRadius * std::sqrt(rng.uniform());
          scene.emit({cx + r * std::cos(t), cy + r * std::sin(t), h}, label);
        } else {
          scene.emit({cx + kPoleRadius * std::cos(t), cy + kPoleRadius * std::sin(t), rng.uniform() * h}, label);
        }
      }
    }
  }

  if (recipe.vegetation) {
    const int label = next_label++;
    for (std::size_t b = 0; b < recipe.vegetation->count; ++b) {
      const double r = rng.uniform(recipe.vegetation->size_min, recipe.vegetation->size_max);
      const Footprint f = scene.place(r, r, "vegetation");
      const Vec3 c{(f.x0 + f.x1) / 2, (f.y0 + f.y1) / 2, 1.2 * r + 0.5};
      const double sphere = 4 * kPi * r * r;
      area[label] += sphere;
      const std::size_t n = point_count(recipe.density, sphere);
      for (std::size_t i = 0; i < n; ++i) {
        Vec3 d{rng.normal(), rng.normal(), rng.normal()};
        double norm = std::sqrt(d[0] * d[0] + d[1] * d[1] + d[2] * d[2]);
        while (norm < 1e-12) {
          d = {rng.normal(), rng.normal(), rng.normal()};
          norm = std::sqrt(d[0] * d[0] + d[1] * d[1] + d[2] * d[2]);
        }
        scene.emit({c[0] + r * d[0] / norm, c[1] + r * d[1] / norm, c[2] + r * d[2] / norm}, label);
      }
    }
  }

  if (recipe.wires) {
    const int label = next_label++;
    for (std::size_t b = 0; b < recipe.wires->count; ++b) {
      const double len = std::min(rng.uniform(recipe.wires->size_min, recipe.wires->size_max), 0.9 * std::min(ex, ey));
      const double angle = rng.uniform() * 2 * kPi;
      const double dx = std::cos(angle) * len, dy = std::sin(angle) * len;
      const double x0 = rng.uniform(std::max(0.0, -dx), std::min(ex, ex - dx));
      const double y0 = rng.uniform(std::max(0.0, -dy), std::min(ey, ey - dy));
      const double z = kWireHeight + rng.uniform(0.0, 1.0);
      area[label] += len * kWireWidth;
      const std::size_t n = point_count(recipe.density, len * kWireWidth);
      for (std::size_t i = 0; i < n; ++i) {
        const double t = rng.uniform();
        scene.emit({x0 + t * dx, y0 + t * dy, z}, label);
      }
    }
  }

  double footprint = 0.0;
  for (const auto& f : scene.buildings) footprint += (f.x1 - f.x0) * (f.y1 - f.y0);
  area[0] = ex * ey - footprint;
  const std::size_t ground = point_count(recipe.density, area[0]);
  for (std::size_t i = 0; i < ground;) {
    const double x = rng.uniform() * ex, y = rng.uniform() * ey;
    bool covered = false;
    for (const auto& f : scene.buildings) covered = covered || f.contains(x, y);
    if (covered) continue;
    scene.emit({x, y, 0.0}, 0);
    ++i;
  }

  PointCloud cloud = std::move(scene.cloud);
  cloud.class_count = names.size();
  if (areas) areas->per_class = area;
  cloud.validate();
  return cloud;
}

}  // namespace pyrpoint
