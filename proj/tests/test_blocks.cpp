#include "doctest.h"

#include "oracles.hpp"
#include "pyrpoint/blocks.hpp"
#include "pyrpoint/errors.hpp"

using namespace pyrpoint;
namespace ad = pyrpoint::ad;

namespace {

struct Geometry {
  std::vector<Vec3> points;
  NeighborTable neighbors;
  ConvGeometry conv;
};

Geometry geometry(Rng& rng, std::size_t n) {
  Geometry g;
  g.points = oracle::random_points(rng, n, 1.0);
  g.neighbors = radius_neighbors(g.points, g.points, 0.7, n);
  g.conv = make_conv_geometry(g.points, g.points, g.neighbors, make_disposition(5, 0.6, 3));
  return g;
}

void perturb_biases(ParameterStore& store, Rng& rng) {
  for (auto& p : store)
    if (p->name.find("bias") != std::string::npos)
      for (auto& v : p->value.mutable_data()) v = rng.uniform(-0.3, 0.3);
}

}  // namespace

TEST_CASE("recurrent FKP unrolling") {
  Rng rng(1);
  auto g = geometry(rng, 9);
  const std::size_t d = 4;
  const auto x = ad::Value::constant({9, d}, oracle::random_vector(rng, 9 * d));

  SUBCASE("H = 0 is the plain feed-forward convolution") {
    ParameterStore store;
    RecurrentFkp r(store, "r", d, 0, 5, AttentionMode::max_mean, 7);
    CHECK(store.find("r.recur.kernels") == nullptr);
    const auto got = r.forward(x, g.conv);
    const auto want = fkp_conv(x, g.conv, r.feed_forward());
    CHECK(oracle::max_abs_diff(got.data(), want.data()) == 0.0);
  }
  SUBCASE("H = 1 is FKP_f(x) + FKP_r(FKP_f(x))") {
    ParameterStore store;
    RecurrentFkp r(store, "r", d, 1, 5, AttentionMode::max_mean, 7);
    perturb_biases(store, rng);
    const auto got = r.forward(x, g.conv);
    const auto f = fkp_conv(x, g.conv, r.feed_forward());
    const auto want = ad::add(f, fkp_conv(f, g.conv, r.recurrent()));
    CHECK(oracle::max_abs_diff(got.data(), want.data()) <= 1e-12);
  }
  SUBCASE("H = 3 builds and back-propagates into both weight sets") {
    ParameterStore store;
    RecurrentFkp r(store, "r", d, 3, 5, AttentionMode::max_mean, 7);
    const auto y = r.forward(x, g.conv);
    ad::sum_all(ad::mul(y, y)).backward();
    for (auto* p : {r.feed_forward().kernels, r.recurrent().kernels, r.recurrent().mlp1_w}) {
      REQUIRE(p->value.has_grad());
      double norm = 0;
      for (double v : p->value.grad()) norm += v * v;
      CHECK(norm > 0.0);
    }
  }
}

TEST_CASE("bottleneck widths and shortcut") {
  Rng rng(2);
  auto g = geometry(rng, 10);
  BlockSpec spec;
  spec.in_dim = 6;
  spec.out_dim = 16;
  spec.hidden_layers = 2;
  ParameterStore store;
  RfkpBottleneck block(store, "b", spec, 5, 1);
  CHECK(bottleneck_width(16) == 4);
  CHECK(store.find("b.reduce.weight")->value.shape() == ad::Shape{6, 4});
  CHECK(store.find("b.expand.weight")->value.shape() == ad::Shape{4, 16});
  CHECK(store.find("b.shortcut.weight") != nullptr);
  const auto y = block.forward(ad::Value::constant({10, 6}, oracle::random_vector(rng, 60)), g.conv, {});
  CHECK(y.shape() == ad::Shape{10, 16});

  ParameterStore same;
  spec.in_dim = 16;
  RfkpBottleneck identity(same, "b", spec, 5, 1);
  CHECK(same.find("b.shortcut.weight") == nullptr);
  CHECK_THROWS_AS(identity.forward(ad::Value::zeros({10, 6}), g.conv, {}), DimensionError);
}

TEST_CASE("strided bottleneck lands on the coarse level") {
  Rng rng(3);
  const auto fine = oracle::random_points(rng, 30, 1.0);
  const auto coarse = std::vector<Vec3>(fine.begin(), fine.begin() + 7);
  const auto pool = radius_neighbors(coarse, fine, 0.5, 30);
  const auto geo = make_conv_geometry(coarse, fine, pool, make_disposition(5, 0.5, 2));
  BlockSpec spec;
  spec.in_dim = 8;
  spec.out_dim = 8;
  ParameterStore store;
  StridedBottleneck block(store, "s", spec, 5, 1);
  const auto y = block.forward(ad::Value::constant({30, 8}, oracle::random_vector(rng, 240)), geo, {});
  CHECK(y.shape() == ad::Shape{7, 8});
}

TEST_CASE("decoder stage concatenates upsampled and side features") {
  Rng rng(4);
  BlockSpec spec;
  spec.in_dim = 5 + 3;
  spec.out_dim = 3;
  spec.normalization = Normalization::none;
  spec.activation = false;
  ParameterStore store;
  DecoderStage stage(store, "d", spec, 1);
  const auto coarse = ad::Value::constant({2, 5}, oracle::random_vector(rng, 10));
  const auto side = ad::Value::constant({4, 3}, oracle::random_vector(rng, 12));
  const std::vector<std::size_t> up{0, 1, 1, 0};
  const auto y = stage.forward(coarse, up, {side}, {});
  const auto w = store.find("d.fuse.weight")->value.data();
  for (std::size_t r = 0; r < 4; ++r)
    for (std::size_t o = 0; o < 3; ++o) {
      double s = 0;
      for (std::size_t i = 0; i < 5; ++i) s += coarse.at(up[r] * 5 + i) * w[i * 3 + o];
      for (std::size_t i = 0; i < 3; ++i) s += side.at(r * 3 + i) * w[(5 + i) * 3 + o];
      CHECK(y.at(r * 3 + o) == doctest::Approx(s).epsilon(1e-13));
    }
  CHECK_THROWS_AS(stage.forward(coarse, up, {ad::Value::zeros({3, 3})}, {}), DimensionError);
}

TEST_CASE("batch norm updates running statistics only in training mode") {
  ParameterStore store;
  BatchNorm bn(store, "bn", 2);
  const auto x = ad::Value::constant({4, 2}, {1, 2, 3, 4, 5, 6, 7, 8});
  bn.forward(x, {false});
  CHECK(store.find("bn.running_mean")->value.at(0) == 0.0);
  bn.forward(x, {true});
  CHECK(store.find("bn.running_mean")->value.at(0) == doctest::Approx(0.01 * 4.0));
  CHECK_FALSE(store.find("bn.running_mean")->trainable);
}
