#include "pyrpoint/gradcheck_suite.hpp"

#include <chrono>
#include <cmath>
#include <cstdio>
#include <functional>
#include <sstream>

#include "pyrpoint/blocks.hpp"
#include "pyrpoint/errors.hpp"
#include "pyrpoint/network.hpp"
#include "pyrpoint/point_conv.hpp"
#include "pyrpoint/rng.hpp"

namespace pyrpoint {

using ad::Shape;
using ad::Value;

GradcheckScope gradcheck_scope_from_string(const std::string& text) {
  if (text == "ops") return GradcheckScope::ops;
  if (text == "blocks") return GradcheckScope::blocks;
  if (text == "network") return GradcheckScope::network;
  if (text == "all") return GradcheckScope::all;
  throw ConfigError("unknown gradcheck scope '" + text + "' (expected ops, blocks, network or all)");
}

bool GradcheckReport::passed() const {
  if (items.empty()) return false;
  for (const auto& i : items)
    if (!i.passed) return false;
  return true;
}

std::string GradcheckReport::table() const {
  std::ostringstream os;
  char buf[256];
  std::snprintf(buf, sizeof buf, "%-8s %-40s %12s %10s  %s\n", "scope", "item", "max rel err", "threshold", "result");
  os << buf;
  for (const auto& i : items) {
    std::snprintf(buf, sizeof buf, "%-8s %-40s %12.3e %10.0e  %s%s\n", i.scope.c_str(), i.name.c_str(), i.error,
                  i.threshold, i.passed ? "PASS" : "FAIL", i.note.empty() ? "" : ("  (" + i.note + ")").c_str());
    os << buf;
  }
  std::size_t failed = 0;
  for (const auto& i : items) failed += i.passed ? 0 : 1;
  std::snprintf(buf, sizeof buf, "%zu items, %zu failed, %.2f s\n", items.size(), failed, seconds);
  os << buf;
  return os.str();
}

json GradcheckReport::to_json() const {
  json list = json::array();
  for (const auto& i : items) {
    list.push_back({{"scope", i.scope},
                    {"item", i.name},
                    {"error", std::isfinite(i.error) ? json(i.error) : json(nullptr)},
                    {"threshold", i.threshold},
                    {"passed", i.passed},
                    {"note", i.note}});
  }
  return {{"items", list}, {"passed", passed()}, {"seconds", seconds}};
}

namespace {

constexpr double kFiniteDifferenceStep = 1e-6;

Value random_value(Rng& rng, Shape shape, bool variable, double lo = -1.0, double hi = 1.0) {
  std::vector<double> d(ad::numel(shape));
  for (auto& v : d) v = rng.uniform(lo, hi);
  return variable ? Value::variable(std::move(shape), std::move(d)) : Value::constant(std::move(shape), std::move(d));
}

/// Values bounded away from zero, so kinked activations are not probed at the kink.
Value off_zero(Rng& rng, Shape shape) {
  std::vector<double> d(ad::numel(shape));
  for (auto& v : d) v = (rng.uniform() < 0.5 ? -1.0 : 1.0) * rng.uniform(0.05, 1.0);
  return Value::variable(std::move(shape), std::move(d));
}

/// sum(v * R) for a fixed random R: a scalar whose gradient reaches every output entry.
Value project(const Value& v, std::uint64_t seed) {
  Rng rng(seed);
  return ad::sum_all(ad::mul(v, random_value(rng, v.shape(), false)));
}

std::vector<Vec3> spread_points(Rng& rng, std::size_t n, double min_dist) {
  std::vector<Vec3> pts;
  int guard = 0;
  while (pts.size() < n) {
    if (++guard > 100000) throw DegenerateInputError("spread_points: cannot place points");
    const Vec3 p{rng.uniform(), rng.uniform(), rng.uniform()};
    bool ok = true;
    for (const auto& q : pts) ok = ok && squared_distance(p, q) > min_dist * min_dist;
    if (ok) pts.push_back(p);
  }
  return pts;
}

ad::IndexTable random_table(Rng& rng, std::size_t rows, std::size_t cols, std::size_t support) {
  ad::IndexTable t{rows, cols, support, {}};
  for (std::size_t r = 0; r < rows; ++r)
    for (std::size_t c = 0; c < cols; ++c) t.indices.push_back(c + 1 == cols && r % 2 ? support : rng.below(support));
  return t;
}

/// Moves zero-initialised biases and the normalisation state to generic
/// values; a zero bias over a zero pooled row would park a ReLU exactly on its kink.
void randomize_state(ParameterStore& store, Rng& rng) {
  for (auto& e : store) {
    auto d = e->value.mutable_data();
    const auto ends = [&](const char* suffix) {
      const std::string s(suffix);
      return e->name.size() >= s.size() && e->name.compare(e->name.size() - s.size(), s.size(), s) == 0;
    };
    if (ends(".running_mean") || ends(".beta") || ends(".bias"))
      for (auto& v : d) v = rng.uniform(-0.3, 0.3);
    if (ends(".running_var") || ends(".gamma"))
      for (auto& v : d) v = rng.uniform(0.5, 1.5);
  }
}

class Suite {
 public:
  Suite(std::string scope, double threshold, std::vector<GradcheckItem>& out)
      : scope_(std::move(scope)), threshold_(threshold), out_(out) {}

  void check(const std::string& name, const std::function<Value()>& f, std::vector<Value> inputs) {
    GradcheckItem item;
    item.scope = scope_;
    item.name = name;
    item.threshold = threshold_;
    try {
      item.error = ad::grad_check(f, std::move(inputs), kFiniteDifferenceStep);
      item.passed = item.error < threshold_;
    } catch (const std::exception& e) {
      item.note = e.what();
    }
    out_.push_back(std::move(item));
  }

 private:
  std::string scope_;
  double threshold_;
  std::vector<GradcheckItem>& out_;
};

std::vector<Value> with(std::vector<Value> head, const ParameterStore& store) {
  for (const auto& v : store.trainable_values()) head.push_back(v);
  return head;
}

/// Elementwise square whose backward uses `factor` * x; 2 is correct.
Value square_op(const Value& in, double factor) {
  std::vector<double> d(in.data().begin(), in.data().end());
  for (auto& v : d) v = v * v;
  return ad::custom_op("square", in.shape(), std::move(d), {in}, [factor](ad::Node& self) {
    auto& src = *self.inputs[0];
    src.ensure_grad();
    for (std::size_t i = 0; i < src.data.size(); ++i) src.grad[i] += factor * src.data[i] * self.grad[i];
  });
}

void fault_suite(std::uint64_t seed, std::vector<GradcheckItem>& out) {
  Suite s("ops", kOpsGradTolerance, out);
  Rng rng(derive_seed(seed, "gradcheck.fault"));
  Value x = random_value(rng, {5}, true);
  s.check("custom_op (faulty backward)", [=] { return project(square_op(x, 3.0), derive_seed(seed, "projection")); },
          {x});
}

void ops_suite(std::uint64_t seed, bool inject_fault, std::vector<GradcheckItem>& out) {
  Suite s("ops", kOpsGradTolerance, out);
  Rng rng(derive_seed(seed, "gradcheck.ops"));
  const std::uint64_t p = derive_seed(seed, "projection");

  {
    Value a = random_value(rng, {3, 4}, true), b = random_value(rng, {4, 2}, true);
    s.check("matmul", [=] { return project(ad::matmul(a, b), p); }, {a, b});
  }
  {
    Value a = random_value(rng, {2, 3, 4}, true), b = random_value(rng, {2, 4, 2}, true);
    s.check("batched_matmul", [=] { return project(ad::batched_matmul(a, b), p); }, {a, b});
  }
  {
    Value a = random_value(rng, {3, 4}, true), b = random_value(rng, {3, 4}, true), c = random_value(rng, {4}, true);
    s.check("add", [=] { return project(ad::add(a, b), p); }, {a, b});
    s.check("add (broadcast)", [=] { return project(ad::add(a, c), p); }, {a, c});
    s.check("sub", [=] { return project(ad::sub(a, b), p); }, {a, b});
    s.check("sub (broadcast)", [=] { return project(ad::sub(a, c), p); }, {a, c});
    s.check("mul", [=] { return project(ad::mul(a, b), p); }, {a, b});
    s.check("mul (broadcast)", [=] { return project(ad::mul(a, c), p); }, {a, c});
    s.check("scale", [=] { return project(ad::scale(a, -1.7), p); }, {a});
    s.check("sum_all", [=] { return ad::sum_all(ad::mul(a, a)); }, {a});
  }
  {
    // Distinct values at least 0.05 apart, so no reduction window holds a near-tie.
    std::vector<double> spaced(24);
    for (std::size_t i = 0; i < spaced.size(); ++i) spaced[i] = -0.6 + 0.05 * static_cast<double>(i);
    for (std::size_t i = spaced.size() - 1; i > 0; --i) std::swap(spaced[i], spaced[rng.below(i + 1)]);
    Value x = Value::variable({3, 4, 2}, spaced);
    for (std::size_t axis = 0; axis < 3; ++axis) {
      const std::string ax = " axis " + std::to_string(axis);
      s.check("reduce sum" + ax, [=] { return project(ad::reduce(ad::ReduceKind::sum, x, axis), p); }, {x});
      s.check("reduce mean" + ax, [=] { return project(ad::reduce(ad::ReduceKind::mean, x, axis), p); }, {x});
      s.check("reduce max" + ax, [=] { return project(ad::reduce(ad::ReduceKind::max, x, axis), p); }, {x});
    }
  }
  {
    Value x = off_zero(rng, {4, 5});
    s.check("sigmoid", [=] { return project(ad::sigmoid(x), p); }, {x});
    s.check("leaky_relu", [=] { return project(ad::leaky_relu(x), p); }, {x});
    s.check("relu", [=] { return project(ad::relu(x), p); }, {x});
  }
  {
    Value x = random_value(rng, {6, 3}, true);
    const ad::IndexTable table = random_table(rng, 4, 3, 6);
    const std::vector<std::size_t> rows{5, 0, 0, 3, 2};
    s.check("gather_rows (table)", [=] { return project(ad::gather_rows(x, table), p); }, {x});
    s.check("gather_rows (index list)", [=] { return project(ad::gather_rows(x, rows), p); }, {x});
    s.check("neighborhood_max", [=] { return project(ad::neighborhood_max(x, table), p); }, {x});
  }
  {
    Value a = random_value(rng, {2, 3}, true), b = random_value(rng, {4, 3}, true), c = random_value(rng, {2, 5}, true);
    s.check("concat axis 0", [=] { return project(ad::concat({a, b}, 0), p); }, {a, b});
    s.check("concat axis 1", [=] { return project(ad::concat({a, c}, 1), p); }, {a, c});
    Value x = random_value(rng, {2, 3, 4}, true);
    s.check("reshape", [=] { return project(ad::reshape(x, {6, 4}), p); }, {x});
    s.check("swap_leading_axes", [=] { return project(ad::swap_leading_axes(x), p); }, {x});
  }
  {
    Value logits = random_value(rng, {6, 4}, true, -2.0, 2.0);
    const std::vector<int> labels{0, 3, 1, -1, 2, 3};
    const std::vector<double> weights{0.5, 1.0, 2.0, 1.5};
    s.check("softmax_cross_entropy", [=] { return ad::softmax_cross_entropy(logits, labels, weights, -1); }, {logits});
  }
  {
    Value x = random_value(rng, {7, 3}, true), gamma = random_value(rng, {3}, true, 0.5, 1.5),
          beta = random_value(rng, {3}, true);
    auto mean = std::make_shared<std::vector<double>>(3, 0.1);
    auto var = std::make_shared<std::vector<double>>(3, 0.8);
    s.check("batch_norm (batch statistics)",
            [=] { return project(ad::batch_norm(x, gamma, beta, {*mean, *var}, true), p); }, {x, gamma, beta});
    s.check("batch_norm (frozen)",
            [=] { return project(ad::batch_norm(x, gamma, beta, {*mean, *var}, false), p); }, {x, gamma, beta});
  }
  {
    Value x = random_value(rng, {5}, true);
    s.check("custom_op", [=] { return project(square_op(x, 2.0), p); }, {x});
  }
  if (inject_fault) fault_suite(seed, out);
}

struct BlockFixture {
  std::vector<Vec3> queries, supports;
  NeighborTable conv, pool;
  ConvGeometry conv_geo, pool_geo;
  std::vector<std::size_t> upsample;
};

std::unique_ptr<BlockFixture> make_fixture(Rng& rng, std::size_t kernel_count) {
  auto f = std::make_unique<BlockFixture>();
  f->supports = spread_points(rng, 10, 0.12);
  f->queries.assign(f->supports.begin(), f->supports.begin() + 4);
  f->conv = radius_neighbors(f->supports, f->supports, 0.55, 6);
  f->pool = radius_neighbors(f->queries, f->supports, 0.55, 6);
  const KernelDisposition disp = make_disposition(kernel_count, 0.55, rng.next(), 0.35);
  f->conv_geo = make_conv_geometry(f->supports, f->supports, f->conv, disp);
  f->pool_geo = make_conv_geometry(f->queries, f->supports, f->pool, disp);
  f->upsample = nearest_upsample_index(f->supports, f->queries);
  return f;
}

void blocks_suite(std::uint64_t seed, std::vector<GradcheckItem>& out) {
  Suite s("blocks", kBlocksGradTolerance, out);
  Rng rng(derive_seed(seed, "gradcheck.blocks"));
  const std::uint64_t p = derive_seed(seed, "projection");
  constexpr std::size_t K = 4;
  const auto fx = std::shared_ptr<BlockFixture>(make_fixture(rng, K));
  const ForwardContext frozen{false};
  const std::uint64_t wseed = derive_seed(seed, "weights");

  const auto spec = [](BlockKind kind, std::size_t in, std::size_t outd, Normalization norm, std::size_t h = 0,
                       AttentionMode mode = AttentionMode::max_mean) {
    BlockSpec b;
    b.kind = kind;
    b.in_dim = in;
    b.out_dim = outd;
    b.normalization = norm;
    b.hidden_layers = h;
    b.attention = mode;
    return b;
  };

  for (auto norm : {Normalization::batch, Normalization::none}) {
    auto store = std::make_shared<ParameterStore>();
    auto layer = std::make_shared<UnaryConv>(*store, "unary", spec(BlockKind::unary, 3, 5, norm), wseed);
    randomize_state(*store, rng);
    Value x = random_value(rng, {6, 3}, true);
    s.check("unary_conv (" + to_string(norm) + ")", [=] { return project(layer->forward(x, frozen), p); },
            with({x}, *store));
  }

  for (auto mode : {AttentionMode::none, AttentionMode::max_only, AttentionMode::mean_only, AttentionMode::max_mean}) {
    auto store = std::make_shared<ParameterStore>();
    const FkpWeights w = make_fkp_weights(*store, "fkp", K, 3, 4, mode, wseed);
    randomize_state(*store, rng);
    Value x = random_value(rng, {10, 3}, true);
    s.check("fkp_conv (" + to_string(mode) + ")", [=] { return project(fkp_conv(x, fx->conv_geo, w), p); },
            with({x}, *store));
  }
  {
    auto store = std::make_shared<ParameterStore>();
    const FkpWeights w = make_fkp_weights(*store, "fkp", K, 3, 4, AttentionMode::max_mean, wseed);
    randomize_state(*store, rng);
    Value x = random_value(rng, {10, 3}, true);
    s.check("strided_fkp_conv", [=] { return project(strided_fkp_conv(x, fx->pool_geo, w), p); }, with({x}, *store));
  }
  for (std::size_t h : {0, 1, 3}) {
    auto store = std::make_shared<ParameterStore>();
    auto block = std::make_shared<RecurrentFkp>(*store, "rfkp", 3, h, K, AttentionMode::max_mean, wseed);
    randomize_state(*store, rng);
    Value x = random_value(rng, {10, 3}, true);
    s.check("recurrent_fkp (H=" + std::to_string(h) + ")", [=] { return project(block->forward(x, fx->conv_geo), p); },
            with({x}, *store));
  }
  {
    auto store = std::make_shared<ParameterStore>();
    auto block = std::make_shared<RfkpBottleneck>(
        *store, "enc", spec(BlockKind::rfkp_bottleneck, 3, 8, Normalization::batch, 2), K, wseed);
    randomize_state(*store, rng);
    Value x = random_value(rng, {10, 3}, true);
    s.check("rfkp_bottleneck", [=] { return project(block->forward(x, fx->conv_geo, frozen), p); }, with({x}, *store));
  }
  {
    auto store = std::make_shared<ParameterStore>();
    auto block = std::make_shared<StridedBottleneck>(
        *store, "down", spec(BlockKind::strided_bottleneck, 4, 8, Normalization::batch), K, wseed);
    randomize_state(*store, rng);
    Value x = random_value(rng, {10, 4}, true);
    s.check("strided_bottleneck", [=] { return project(block->forward(x, fx->pool_geo, frozen), p); },
            with({x}, *store));
  }
  {
    auto store = std::make_shared<ParameterStore>();
    auto block =
        std::make_shared<DecoderStage>(*store, "dec", spec(BlockKind::decoder_stage, 5 + 3 + 3, 3, Normalization::batch),
                                       wseed);
    randomize_state(*store, rng);
    Value coarse = random_value(rng, {4, 5}, true), side1 = random_value(rng, {10, 3}, true),
          side2 = random_value(rng, {10, 3}, true);
    s.check("decoder_stage",
            [=] { return project(block->forward(coarse, fx->upsample, {side1, side2}, frozen), p); },
            with({coarse, side1, side2}, *store));
  }
}

void network_suite(std::uint64_t seed, std::vector<GradcheckItem>& out) {
  Suite s("network", kNetworkGradTolerance, out);
  Rng rng(derive_seed(seed, "gradcheck.network"));
  const NetworkConfig cfg = toy_network_config(seed);
  auto net = std::make_shared<PyramidNetwork>(cfg);
  randomize_state(net->parameters(), rng);
  const PointCloud cloud = toy_cloud(seed, 12, cfg.class_count);
  LevelParams lp;
  lp.base_cell = cfg.base_cell;
  lp.level_count = cfg.level_count;
  lp.conv_radius_factor = cfg.conv_radius_factor;
  lp.neighbor_cap = cfg.neighbor_cap;
  auto levels = std::make_shared<LevelSet>(build_levels(cloud, lp));
  auto geo = std::make_shared<LevelGeometry>(net->prepare(*levels));
  const Value fixed = input_features(levels->base, cfg.input_features);
  Value input = Value::variable(fixed.shape(), std::vector<double>(fixed.data().begin(), fixed.data().end()));
  const ForwardContext frozen{false};
  const std::vector<int> labels = levels->base.labels;
  const std::string name = "pyramid L=3, " + std::to_string(levels->levels[0].points.size()) + " points, dims 4/8/16";
  s.check(name,
          [=] {
            return ad::softmax_cross_entropy(net->forward(*levels, *geo, input, frozen), labels);
          },
          with({input}, net->parameters()));
}

}  // namespace

NetworkConfig toy_network_config(std::uint64_t seed) {
  NetworkConfig c;
  c.level_count = 3;
  c.feature_dims = {4, 8, 16};
  c.pyramid_start = 2;
  c.class_count = 3;
  c.hidden_layers = 3;
  c.kernel_points = 5;
  c.base_cell = 0.1;
  c.conv_radius_factor = 2.5;
  c.neighbor_cap = 8;
  c.head_width = 6;
  c.input_sphere_radius = 2.0;
  c.seed = seed;
  return c;
}

PointCloud toy_cloud(std::uint64_t seed, std::size_t n, std::size_t class_count) {
  Rng rng(derive_seed(seed, "toy_cloud"));
  PointCloud cloud;
  // 0.18 exceeds the 0.1 m voxel diagonal, so no two points share a level-1 cell.
  cloud.positions = spread_points(rng, n, 0.18);
  cloud.class_count = class_count;
  for (std::size_t i = 0; i < n; ++i) cloud.labels.push_back(static_cast<int>(i % class_count));
  return cloud;
}

GradcheckReport run_gradcheck(GradcheckScope scope, std::uint64_t seed, bool inject_fault) {
  const auto start = std::chrono::steady_clock::now();
  GradcheckReport report;
  const bool ops = scope == GradcheckScope::ops || scope == GradcheckScope::all;
  if (ops) ops_suite(seed, inject_fault, report.items);
  if (inject_fault && !ops) fault_suite(seed, report.items);
  if (scope == GradcheckScope::blocks || scope == GradcheckScope::all) blocks_suite(seed, report.items);
  if (scope == GradcheckScope::network || scope == GradcheckScope::all) network_suite(seed, report.items);
  report.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  return report;
}

}  // namespace pyrpoint
