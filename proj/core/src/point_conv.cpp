#include "pyrpoint/point_conv.hpp"

#include <algorithm>
#include <cmath>

#include "pyrpoint/errors.hpp"
#include "pyrpoint/rng.hpp"

namespace pyrpoint {

KernelDisposition KernelDisposition::scaled(double new_radius, double new_influence) const {
  KernelDisposition out = *this;
  const double f = new_radius / radius;
  for (auto& p : out.points)
    for (double& c : p) c *= f;
  out.radius = new_radius;
  out.influence = new_influence;
  return out;
}

KernelDisposition make_disposition(std::size_t kernel_count, double radius, std::uint64_t seed, double influence) {
  if (kernel_count < 2) throw ConfigError("make_disposition: need at least 2 kernel points");
  if (!(radius > 0.0)) throw ConfigError("make_disposition: radius must be positive");

  constexpr int kIterations = 100;
  constexpr double kDecay = 0.99;
  constexpr double kInitialStep = 0.02;
  constexpr double kMaxMove = 0.1;

  Rng rng(derive_seed(seed, "kernel_disposition"));
  std::vector<Vec3> pts(kernel_count, Vec3{0.0, 0.0, 0.0});
  for (std::size_t i = 1; i < kernel_count; ++i) {
    Vec3 p;
    do {
      p = {rng.uniform(-1.0, 1.0), rng.uniform(-1.0, 1.0), rng.uniform(-1.0, 1.0)};
    } while (p[0] * p[0] + p[1] * p[1] + p[2] * p[2] > 1.0 || p[0] * p[0] + p[1] * p[1] + p[2] * p[2] < 1e-4);
    pts[i] = p;
  }

  // Unit-ball relaxation; point 0 is pinned and still repels the others.
  std::vector<Vec3> force(kernel_count);
  double step = kInitialStep;
  for (int it = 0; it < kIterations; ++it) {
    for (std::size_t i = 1; i < kernel_count; ++i) {
      Vec3 f{0.0, 0.0, 0.0};
      for (std::size_t j = 0; j < kernel_count; ++j) {
        if (j == i) continue;
        const double d2 = std::max(squared_distance(pts[i], pts[j]), 1e-12);
        const double inv = 1.0 / (d2 * std::sqrt(d2));
        for (int a = 0; a < 3; ++a) f[a] += (pts[i][a] - pts[j][a]) * inv;
      }
      force[i] = f;
    }
    for (std::size_t i = 1; i < kernel_count; ++i) {
      Vec3 move{step * force[i][0], step * force[i][1], step * force[i][2]};
      const double len = std::sqrt(move[0] * move[0] + move[1] * move[1] + move[2] * move[2]);
      if (len > kMaxMove) {
        for (double& c : move) c *= kMaxMove / len;
      }
      for (int a = 0; a < 3; ++a) pts[i][a] += move[a];
      const double norm = std::sqrt(pts[i][0] * pts[i][0] + pts[i][1] * pts[i][1] + pts[i][2] * pts[i][2]);
      if (norm > 1.0) {
        for (double& c : pts[i]) c /= norm;
      }
    }
    step *= kDecay;
  }

  KernelDisposition out;
  out.points = std::move(pts);
  out.radius = 1.0;
  out.influence = 0.5;
  out.seed = seed;
  return out.scaled(radius, influence > 0.0 ? influence : 0.5 * radius);
}

std::vector<double> kp_correlation(std::span<const Vec3> offsets, std::size_t rows, std::size_t cols,
                                   const KernelDisposition& disposition) {
  if (offsets.size() != rows * cols) throw DimensionError("kp_correlation: offset count does not match rows x cols");
  const std::size_t k = disposition.size();
  std::vector<double> h(rows * cols * k, 0.0);
  const double inv_sigma = 1.0 / disposition.influence;
  for (std::size_t s = 0; s < offsets.size(); ++s) {
    for (std::size_t kk = 0; kk < k; ++kk) {
      const double d = std::sqrt(squared_distance(offsets[s], disposition.points[kk]));
      h[s * k + kk] = std::max(0.0, 1.0 - d * inv_sigma);
    }
  }
  return h;
}

ConvGeometry make_conv_geometry(std::span<const Vec3> queries, std::span<const Vec3> supports,
                                const NeighborTable& neighbors, const KernelDisposition& disposition) {
  if (neighbors.rows() != queries.size() || neighbors.shadow() != supports.size()) {
    throw DimensionError("make_conv_geometry: neighbour table does not match query/support sets");
  }
  const std::size_t m = neighbors.rows(), h = neighbors.cols(), k = disposition.size();
  std::vector<Vec3> offsets(m * h);
  for (std::size_t q = 0; q < m; ++q)
    for (std::size_t j = 0; j < h; ++j) {
      const std::size_t idx = neighbors.at(q, j);
      if (idx == supports.size()) {
        offsets[q * h + j] = {kShadowOffset, kShadowOffset, kShadowOffset};
      } else {
        const Vec3& s = supports[idx];
        offsets[q * h + j] = {s[0] - queries[q][0], s[1] - queries[q][1], s[2] - queries[q][2]};
      }
    }
  const std::vector<double> corr = kp_correlation(offsets, m, h, disposition);
  // M x H x K -> M x K x H
  std::vector<double> kernel_major(m * k * h);
  for (std::size_t q = 0; q < m; ++q)
    for (std::size_t j = 0; j < h; ++j)
      for (std::size_t kk = 0; kk < k; ++kk) kernel_major[(q * k + kk) * h + j] = corr[(q * h + j) * k + kk];

  ConvGeometry geo;
  geo.neighbors = &neighbors;
  geo.kernel_count = k;
  geo.correlations = ad::Value::constant({m, k, h}, std::move(kernel_major));
  return geo;
}

std::string to_string(AttentionMode mode) {
  switch (mode) {
    case AttentionMode::none: return "none";
    case AttentionMode::max_only: return "max_only";
    case AttentionMode::mean_only: return "mean_only";
    case AttentionMode::max_mean: return "max_mean";
  }
  return "unknown";
}

AttentionMode attention_mode_from_string(const std::string& text) {
  if (text == "none") return AttentionMode::none;
  if (text == "max_only") return AttentionMode::max_only;
  if (text == "mean_only") return AttentionMode::mean_only;
  if (text == "max_mean") return AttentionMode::max_mean;
  throw ConfigError("unknown attention mode '" + text + "' (expected none, max_only, mean_only, max_mean)");
}

std::size_t FkpWeights::hidden_width() const { return std::max<std::size_t>(1, out_dim / reduction); }

FkpWeights make_fkp_weights(ParameterStore& store, const std::string& prefix, std::size_t kernel_count,
                            std::size_t in_dim, std::size_t out_dim, AttentionMode mode, std::uint64_t seed,
                            std::size_t reduction) {
  if (kernel_count < 1 || in_dim < 1 || out_dim < 1 || reduction < 1) {
    throw ConfigError("make_fkp_weights: dimensions must be positive (" + prefix + ")");
  }
  FkpWeights w;
  w.mode = mode;
  w.reduction = reduction;
  w.in_dim = in_dim;
  w.out_dim = out_dim;
  w.kernel_count = kernel_count;
  w.kernels = &store.create_uniform(prefix + ".kernels", {kernel_count, in_dim, out_dim}, in_dim * kernel_count, seed);
  if (mode != AttentionMode::none) {
    const std::size_t att_in = mode == AttentionMode::max_mean ? 2 * out_dim : out_dim;
    const std::size_t hidden = w.hidden_width();
    w.mlp1_w = &store.create_uniform(prefix + ".attention.fc1.weight", {att_in, hidden}, att_in, seed);
    w.mlp1_b = &store.create(prefix + ".attention.fc1.bias", {hidden}, std::vector<double>(hidden, 0.0));
    w.mlp2_w = &store.create_uniform(prefix + ".attention.fc2.weight", {hidden, out_dim}, hidden, seed);
    w.mlp2_b = &store.create(prefix + ".attention.fc2.bias", {out_dim}, std::vector<double>(out_dim, 0.0));
  }
  return w;
}

ad::Value per_kernel_conv(const ad::Value& features, const ConvGeometry& geometry, const ad::Value& kernels) {
  if (features.rank() != 2 || features.dim(0) != geometry.support_count()) {
    throw DimensionError("per_kernel_conv: features " + ad::shape_string(features.shape()) + " vs " +
                         std::to_string(geometry.support_count()) + " supports");
  }
  if (kernels.rank() != 3 || kernels.dim(0) != geometry.kernel_count || kernels.dim(1) != features.dim(1)) {
    throw DimensionError("per_kernel_conv: kernel weights " + ad::shape_string(kernels.shape()) +
                         " incompatible with features " + ad::shape_string(features.shape()));
  }
  const ad::Value neighborhoods = ad::gather_rows(features, geometry.neighbors->table);         // M x H x Din
  const ad::Value weighted = ad::batched_matmul(geometry.correlations, neighborhoods);            // M x K x Din
  return ad::batched_matmul(ad::swap_leading_axes(weighted), kernels);                           // K x M x Dout
}

ad::Value kernel_attention(const ad::Value& per_kernel, const FkpWeights& weights) {
  if (weights.mode == AttentionMode::none) throw ConfigError("kernel_attention: weights carry no attention MLP");
  if (per_kernel.rank() != 3 || per_kernel.dim(0) < 1) {
    throw DimensionError("kernel_attention: expected [K x M x D], got " + ad::shape_string(per_kernel.shape()));
  }
  ad::Value pooled;
  switch (weights.mode) {
    case AttentionMode::max_only: pooled = ad::reduce(ad::ReduceKind::max, per_kernel, 0); break;
    case AttentionMode::mean_only: pooled = ad::reduce(ad::ReduceKind::mean, per_kernel, 0); break;
    case AttentionMode::max_mean:
      pooled = ad::concat({ad::reduce(ad::ReduceKind::mean, per_kernel, 0), ad::reduce(ad::ReduceKind::max, per_kernel, 0)},
                          1);
      break;
    case AttentionMode::none: break;
  }
  const ad::Value hidden = ad::relu(ad::add(ad::matmul(pooled, weights.mlp1_w->value), weights.mlp1_b->value));
  return ad::sigmoid(ad::add(ad::matmul(hidden, weights.mlp2_w->value), weights.mlp2_b->value));
}

ad::Value focus_and_sum(const ad::Value& per_kernel, const ad::Value& mask) {
  return ad::reduce(ad::ReduceKind::sum, ad::mul(per_kernel, mask), 0);
}

ad::Value fkp_conv(const ad::Value& features, const ConvGeometry& geometry, const FkpWeights& weights) {
  const ad::Value per_kernel = per_kernel_conv(features, geometry, weights.kernels->value);
  if (weights.mode == AttentionMode::none) return ad::reduce(ad::ReduceKind::sum, per_kernel, 0);
  return focus_and_sum(per_kernel, kernel_attention(per_kernel, weights));
}

ad::Value strided_fkp_conv(const ad::Value& features, const ConvGeometry& pool_geometry, const FkpWeights& weights) {
  return fkp_conv(features, pool_geometry, weights);
}

}  // namespace pyrpoint
