#include "doctest.h"

#include <cmath>
#include <filesystem>

#include "oracles.hpp"
#include "pyrpoint/errors.hpp"
#include "pyrpoint/synth.hpp"
#include "pyrpoint/trainer.hpp"

using namespace pyrpoint;
namespace fs = std::filesystem;

namespace {

NetworkConfig tiny_config() {
  NetworkConfig c;
  c.feature_dims = {8, 16, 32};
  c.level_count = 3;
  c.pyramid_start = 2;
  c.class_count = 3;
  c.hidden_layers = 1;
  c.kernel_points = 5;
  c.head_width = 8;
  c.base_cell = 0.6;
  c.neighbor_cap = 16;
  c.seed = 3;
  c.training.steps_per_epoch = 3;
  c.training.epochs = 2;
  c.training.min_level1_points = 10;
  return c;
}

std::shared_ptr<const std::vector<PointCloud>> tiny_scene() {
  SceneRecipe r;
  r.seed = 1;
  r.extent = {14, 14};
  r.density = 3;
  r.buildings = PrimitiveSpec{1, 4, 5};
  r.poles = PrimitiveSpec{3, 4, 6};
  return std::make_shared<std::vector<PointCloud>>(std::vector<PointCloud>{synth_scene(r)});
}

SamplerParams tiny_sampler(const NetworkConfig& c) {
  auto s = sampler_params(c);
  s.radius = 6.0;
  return s;
}

}  // namespace

TEST_CASE("two SGD momentum steps by hand") {
  std::vector<double> p{1.0, -2.0}, buf;
  sgd_update(p, std::vector<double>{0.5, 1.0}, buf, 0.1, 0.9);
  CHECK(p[0] == doctest::Approx(0.95));
  CHECK(p[1] == doctest::Approx(-2.1));
  sgd_update(p, std::vector<double>{0.5, 1.0}, buf, 0.1, 0.9);
  // buffer = 0.9 * g + g = 1.9 g
  CHECK(p[0] == doctest::Approx(0.95 - 0.095));
  CHECK(p[1] == doctest::Approx(-2.1 - 0.19));
  CHECK_THROWS_AS(sgd_update(p, std::vector<double>{NAN, 0.0}, buf, 0.1, 0.9, "w"), NumericError);
}

TEST_CASE("gradient clipping rescales to the global norm") {
  ParameterStore store;
  auto& a = store.create("a", {2}, {0.0, 0.0});
  auto& b = store.create("b", {1}, {0.0});
  ad::sum_all(ad::add(ad::scale(a.value, 3.0), ad::Value::constant({2}, {0, 0}))).backward();
  ad::scale(ad::sum_all(b.value), 4.0).backward();
  CHECK(gradient_norm(store) == doctest::Approx(std::sqrt(9.0 + 9.0 + 16.0)));
  clip_gradients(store, 1.0);
  CHECK(gradient_norm(store) == doctest::Approx(1.0));
}

TEST_CASE("class weights follow inverse square-root frequency") {
  const auto w = class_weights({100, 25, 0, 4});
  CHECK(w[2] == 0.0);
  CHECK(w[1] / w[0] == doctest::Approx(2.0));
  CHECK(w[3] / w[0] == doctest::Approx(5.0));
  CHECK((w[0] + w[1] + w[3]) / 3 == doctest::Approx(1.0));
}

TEST_CASE("learning rate decays per epoch") {
  TrainingSchedule s;
  s.learning_rate = 0.01;
  s.lr_decay = 0.5;
  CHECK(s.learning_rate_at(2) == doctest::Approx(0.0025));
}

TEST_CASE("training is deterministic and resumes seamlessly") {
  const auto clouds = tiny_scene();
  const auto cfg = tiny_config();
  const auto sampler = tiny_sampler(cfg);
  const fs::path dir = fs::temp_directory_path() / "pyrpoint-tests" / "resume";
  fs::remove_all(dir);

  PyramidNetwork a(cfg), b(cfg);
  TrainOptions opts;
  const auto full_a = train(a, clouds, sampler, {}, opts);
  const auto full_b = train(b, clouds, sampler, {}, opts);
  REQUIRE(full_a.loss_history.size() == 6);
  CHECK(full_a.loss_history == full_b.loss_history);
  CHECK(full_a.metric_history.size() == 2);

  PyramidNetwork c(cfg);
  TrainOptions first = opts;
  first.out_dir = dir.string();
  first.max_steps = 4;
  const auto half = train(c, clouds, sampler, {}, first);
  CHECK(half.step == 4);
  CHECK(fs::exists(dir / "checkpoint.bin"));
  auto loaded = load_checkpoint((dir / "checkpoint.bin").string());
  CHECK(loaded.state.step == 4);
  const auto rest = train(loaded.network, clouds, sampler, loaded.state, opts);
  REQUIRE(rest.loss_history.size() == 6);
  for (std::size_t i = 0; i < 6; ++i) CHECK(std::abs(rest.loss_history[i] - full_a.loss_history[i]) <= 1e-12);
}

TEST_CASE("non-finite parameters stop training with a named error") {
  const auto clouds = tiny_scene();
  const auto cfg = tiny_config();
  PyramidNetwork net(cfg);
  net.parameters().find("encoder.L1.rfkp.reduce.weight")->value.mutable_data()[0] = NAN;
  CHECK_THROWS_AS(train(net, clouds, tiny_sampler(cfg), {}, {}), NumericError);
}

TEST_CASE("evaluation scores every raw point") {
  const auto clouds = tiny_scene();
  const auto cfg = tiny_config();
  const PyramidNetwork net(cfg);
  const auto r = evaluate(net, clouds, tiny_sampler(cfg));
  CHECK(r.predictions.front().size() == clouds->front().size());
  CHECK(r.confusion.total() == clouds->front().size());
  CHECK(r.tiles > 0);
}

TEST_CASE("ablation grids") {
  NetworkConfig base;
  const auto att = ablation_variants(AblationGrid::attention, base);
  REQUIRE(att.size() == 4);
  CHECK(att[0].row == "(1) No Focused Kernel");
  CHECK(att[3].row == "(4) Max, Mean Focused Kernel");
  const auto hid = ablation_variants(AblationGrid::hidden, base);
  REQUIRE(hid.size() == 3);
  CHECK(hid[0].hidden_layers == 2);
  CHECK(hid[2].row == "4");
  CHECK(ablation_variants(AblationGrid::both, base).size() == 12);
  CHECK(ablation_grid_from_string("both") == AblationGrid::both);
  CHECK_THROWS_AS(ablation_grid_from_string("all"), ConfigError);
}
