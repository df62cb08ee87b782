#include <benchmark/benchmark.h>

#include <vector>

#include "pyrpoint/network.hpp"
#include "pyrpoint/point_conv.hpp"
#include "pyrpoint/rng.hpp"
#include "pyrpoint/spatial.hpp"
#include "pyrpoint/synth.hpp"

using namespace pyrpoint;

namespace {

std::vector<Vec3> random_points(std::size_t n, double extent, std::uint64_t seed) {
  Rng rng(seed);
  std::vector<Vec3> pts(n);
  for (auto& p : pts) p = {rng.uniform(0, extent), rng.uniform(0, extent), rng.uniform(0, extent / 4)};
  return pts;
}

PointCloud scene(std::size_t density) {
  SceneRecipe r;
  r.seed = 3;
  r.extent = {20.0, 20.0};
  r.density = static_cast<double>(density);
  return synth_scene(r);
}

}  // namespace

static void BM_RadiusNeighbors(benchmark::State& state) {
  const auto n = static_cast<std::size_t>(state.range(0));
  const auto pts = random_points(n, 10.0, 1);
  for (auto _ : state) {
    auto table = radius_neighbors(pts, pts, 0.6, 40);
    benchmark::DoNotOptimize(table.table.indices.data());
  }
  state.SetItemsProcessed(state.iterations() * static_cast<std::int64_t>(n));
}
BENCHMARK(BM_RadiusNeighbors)->Arg(1000)->Arg(10000)->Arg(50000)->Unit(benchmark::kMillisecond);

static void BM_GridSubsample(benchmark::State& state) {
  const PointCloud cloud = scene(static_cast<std::size_t>(state.range(0)));
  for (auto _ : state) {
    auto sub = grid_subsample(cloud, 0.25);
    benchmark::DoNotOptimize(sub.positions.data());
  }
  state.SetItemsProcessed(state.iterations() * static_cast<std::int64_t>(cloud.size()));
}
BENCHMARK(BM_GridSubsample)->Arg(20)->Arg(100)->Unit(benchmark::kMillisecond);

static void BM_FkpConv(benchmark::State& state) {
  const auto mode = static_cast<AttentionMode>(state.range(0));
  const std::size_t n = 4000, d = 32, k = 15;
  const auto pts = random_points(n, 10.0, 2);
  const NeighborTable nb = radius_neighbors(pts, pts, 0.8, 30);
  const KernelDisposition disp = make_disposition(k, 0.8, 5);
  const ConvGeometry geo = make_conv_geometry(pts, pts, nb, disp);
  ParameterStore store;
  const FkpWeights w = make_fkp_weights(store, "conv", k, d, d, mode, 9);
  Rng rng(4);
  std::vector<double> x(n * d);
  for (auto& v : x) v = rng.normal();
  const ad::Value input = ad::Value::constant({n, d}, x);
  for (auto _ : state) {
    ad::Value y = fkp_conv(input, geo, w);
    benchmark::DoNotOptimize(y.data().data());
  }
  state.SetLabel(to_string(mode));
}
BENCHMARK(BM_FkpConv)
    ->Arg(static_cast<int>(AttentionMode::none))
    ->Arg(static_cast<int>(AttentionMode::max_mean))
    ->Unit(benchmark::kMillisecond);

static void BM_NetworkForward(benchmark::State& state) {
  NetworkConfig cfg;
  cfg.feature_dims = {16, 32, 64, 128, 256};
  cfg.class_count = 5;
  cfg.head_width = 32;
  cfg.base_cell = 0.3;
  cfg.hidden_layers = static_cast<std::size_t>(state.range(0));
  const PyramidNetwork net(cfg);
  const PointCloud cloud = scene(10);
  const LevelSet levels = build_levels(cloud, {cfg.base_cell, cfg.level_count, cfg.conv_radius_factor, cfg.neighbor_cap});
  const LevelGeometry geo = net.prepare(levels);
  const ad::Value input = input_features(levels.base, cfg.input_features);
  for (auto _ : state) {
    ad::Value logits = net.forward(levels, geo, input, ForwardContext{false});
    benchmark::DoNotOptimize(logits.data().data());
  }
  state.counters["points"] = static_cast<double>(levels.levels[0].points.size());
}
BENCHMARK(BM_NetworkForward)->Arg(0)->Arg(3)->Unit(benchmark::kMillisecond);

BENCHMARK_MAIN();
