#include "doctest.h"

#include <filesystem>
#include <fstream>
#include <set>

#include "oracles.hpp"
#include "pyrpoint/dataset.hpp"
#include "pyrpoint/errors.hpp"
#include "pyrpoint/ply.hpp"
#include "pyrpoint/synth.hpp"

using namespace pyrpoint;
namespace fs = std::filesystem;

namespace {

std::shared_ptr<const std::vector<PointCloud>> scenes() {
  SceneRecipe r;
  r.seed = 4;
  r.extent = {20, 20};
  r.density = 6;
  r.buildings = PrimitiveSpec{1, 4, 5};
  r.poles = PrimitiveSpec{3, 5, 7};
  r.vegetation = PrimitiveSpec{2, 1, 2};
  auto v = std::make_shared<std::vector<PointCloud>>();
  v->push_back(synth_scene(r));
  r.seed = 5;
  v->push_back(synth_scene(r));
  return v;
}

SamplerParams params() {
  SamplerParams p;
  p.radius = 6.0;
  p.levels.base_cell = 0.4;
  p.levels.level_count = 3;
  p.min_level1_points = 20;
  p.batch_size = 2;
  return p;
}

}  // namespace

TEST_CASE("sample_sphere keeps exactly the points inside the ball") {
  Rng rng(1);
  PointCloud pc;
  pc.positions = oracle::random_points(rng, 500, 4.0);
  pc.positions.push_back({3.0, 2.0, 2.0});  // exactly on the boundary
  std::vector<std::size_t> idx;
  const Vec3 c{2.0, 2.0, 2.0};
  const auto s = sample_sphere(pc, c, 1.0, &idx);
  std::vector<std::size_t> want;
  for (std::size_t i = 0; i < pc.size(); ++i)
    if (squared_distance(pc.positions[i], c) <= 1.0) want.push_back(i);
  CHECK(idx == want);
  CHECK(s.size() == want.size());
  CHECK(idx.back() == 500);
}

TEST_CASE("training batches are a pure function of (seed, step)") {
  const auto clouds = scenes();
  BatchIterator a(clouds, Split::train, params(), 7), b(clouds, Split::train, params(), 7),
      c(clouds, Split::train, params(), 8);
  const auto b5 = b.batch(5);
  (void)a.batch(0);
  const auto a5 = a.batch(5);
  REQUIRE(a5.samples.size() == 2);
  for (std::size_t i = 0; i < 2; ++i) {
    CHECK(a5.samples[i].levels.digest() == b5.samples[i].levels.digest());
    CHECK(a5.samples[i].center == b5.samples[i].center);
    CHECK(a5.samples[i].levels.levels[0].points.size() >= 20);
  }
  CHECK(a.centers(5) == b.centers(5));
  CHECK(a.centers(5) != c.centers(5));
  auto it = BatchIterator(clouds, Split::train, params(), 7);
  it.next();
  CHECK(it.next()->step == 1);
}

TEST_CASE("class-balanced centers favour rare classes") {
  const auto clouds = scenes();
  auto p = params();
  p.batch_size = 1;
  const BatchIterator it(clouds, Split::train, p, 3);
  const auto& freq = it.class_frequency();
  REQUIRE(freq.size() == 4);
  std::vector<std::size_t> hits(4, 0);
  for (std::size_t step = 0; step < 400; ++step) {
    const auto [cloud, center] = it.centers(step).front();
    const auto& pc = (*clouds)[cloud];
    for (std::size_t i = 0; i < pc.size(); ++i)
      if (pc.positions[i] == center) {
        ++hits[static_cast<std::size_t>(pc.labels[i])];
        break;
      }
  }
  // Uniform sampling would hit poles about freq[2]/total of the time.
  const double total = static_cast<double>(freq[0] + freq[1] + freq[2] + freq[3]);
  CHECK(static_cast<double>(hits[2]) / 400.0 > 5.0 * static_cast<double>(freq[2]) / total);
}

TEST_CASE("test tiles cover every point") {
  const auto clouds = scenes();
  const BatchIterator it(clouds, Split::test, params(), 0);
  std::vector<std::set<std::size_t>> seen(clouds->size());
  for (std::size_t t = 0; t < it.tile_count(); ++t) {
    const auto s = it.tile(t);
    CHECK_FALSE(s.source_indices.empty());
    seen[s.cloud].insert(s.source_indices.begin(), s.source_indices.end());
  }
  for (std::size_t c = 0; c < clouds->size(); ++c) CHECK(seen[c].size() == (*clouds)[c].size());
  CHECK_THROWS(it.batch(0));
}

TEST_CASE("dataset spec resolves files and validates labels") {
  const fs::path dir = fs::temp_directory_path() / "pyrpoint-tests" / "dataset";
  fs::create_directories(dir);
  auto pc = (*scenes())[0];
  write_ply(pc, (dir / "a.ply").string(), PlyFormat::binary);
  const json doc = {{"name", "t"},
                    {"class_names", {"ground", "building", "pole", "vegetation"}},
                    {"ignore_index", nullptr},
                    {"base_cell", 0.4},
                    {"input_sphere_radius", 6.0},
                    {"files", {{"train", {"a.ply"}}, {"val", json::array()}, {"test", {"a.ply"}}}}};
  {
    std::ofstream out(dir / "spec.json");
    out << doc.dump();
  }
  const auto spec = DatasetSpec::load((dir / "spec.json").string());
  CHECK(load_split(spec, Split::train).front().size() == pc.size());
  CHECK_THROWS_AS(load_split(spec, Split::val), DatasetError);

  auto narrow = doc;
  narrow["class_names"] = {"ground", "building"};
  CHECK_THROWS_AS(load_split(DatasetSpec::from_json(narrow, dir.string()), Split::train), DatasetError);
  auto missing = doc;
  missing["files"]["train"] = {"nope.ply"};
  CHECK_THROWS_AS(load_split(DatasetSpec::from_json(missing, dir.string()), Split::train), DatasetError);
  CHECK(split_from_string("val") == Split::val);
  CHECK_THROWS_AS(split_from_string("dev"), ConfigError);

  NetworkConfig net;
  const auto sp = sampler_params(net, &spec);
  CHECK(sp.levels.base_cell == 0.4);
  CHECK(sp.radius == 6.0);
}
