#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "pyrpoint/autodiff.hpp"
#include "pyrpoint/parameters.hpp"
#include "pyrpoint/spatial.hpp"

namespace pyrpoint {

/// Rigid kernel geometry. Point 0 sits at the origin; all points lie inside
/// the kernel radius.
struct KernelDisposition {
  std::vector<Vec3> points;
  double radius = 1.0;
  double influence = 0.5;  // linear-correlation extent
  std::uint64_t seed = 0;

  std::size_t size() const { return points.size(); }
  /// Same directions at a new radius and influence.
  KernelDisposition scaled(double new_radius, double new_influence) const;
};

/// Origin plus K-1 points relaxed under pairwise inverse-square repulsion
/// inside the ball (100 iterations, step decay 0.99). Deterministic in seed.
/// `influence` defaults to half the radius.
KernelDisposition make_disposition(std::size_t kernel_count, double radius, std::uint64_t seed,
                                   double influence = -1.0);

/// Offset used for shadow neighbour slots; far outside any influence radius.
inline constexpr double kShadowOffset = 1.0e6;

/// h[m,j,k] = max(0, 1 - |offset[m,j] - kernel_k| / influence), laid out
/// M x H x K. `offsets` is M x H x 3 (neighbour minus query).
std::vector<double> kp_correlation(std::span<const Vec3> offsets, std::size_t rows, std::size_t cols,
                                   const KernelDisposition& disposition);

/// Neighbour table plus its correlations, prepared once per level and shared
/// by every convolution that runs on it.
struct ConvGeometry {
  const NeighborTable* neighbors = nullptr;
  std::size_t kernel_count = 0;
  /// Constant [M x K x H] (kernel-major per query, ready for batched matmul).
  ad::Value correlations;

  std::size_t query_count() const { return neighbors->rows(); }
  std::size_t support_count() const { return neighbors->shadow(); }
};

ConvGeometry make_conv_geometry(std::span<const Vec3> queries, std::span<const Vec3> supports,
                                const NeighborTable& neighbors, const KernelDisposition& disposition);

enum class AttentionMode { none, max_only, mean_only, max_mean };

std::string to_string(AttentionMode mode);
AttentionMode attention_mode_from_string(const std::string& text);

/// Learned state of one focused kernel point convolution.
struct FkpWeights {
  Parameter* kernels = nullptr;  // [K x D_in x D_out]
  Parameter* mlp1_w = nullptr;   // [D_att_in x hidden]
  Parameter* mlp1_b = nullptr;   // [hidden]
  Parameter* mlp2_w = nullptr;   // [hidden x D_out]
  Parameter* mlp2_b = nullptr;   // [D_out]
  AttentionMode mode = AttentionMode::max_mean;
  std::size_t reduction = 4;
  std::size_t in_dim = 0;
  std::size_t out_dim = 0;
  std::size_t kernel_count = 0;

  std::size_t hidden_width() const;
};

inline constexpr std::size_t kAttentionReduction = 4;

/// Registers the weights of one FKP convolution under `prefix`.
FkpWeights make_fkp_weights(ParameterStore& store, const std::string& prefix, std::size_t kernel_count,
                            std::size_t in_dim, std::size_t out_dim, AttentionMode mode, std::uint64_t seed,
                            std::size_t reduction = kAttentionReduction);

/// F[k, m] = sum_j h[m,j,k] * (x_j W_k). features [N_sup x D_in] ->
/// [K x M x D_out].
ad::Value per_kernel_conv(const ad::Value& features, const ConvGeometry& geometry, const ad::Value& kernels);

/// Sigmoid gate over kernel outputs F [K x M x D] -> mask [M x D], from the
/// max and/or mean over the kernel axis fed through a shared two-layer MLP.
ad::Value kernel_attention(const ad::Value& per_kernel, const FkpWeights& weights);

/// sum_k F[k] * mask
ad::Value focus_and_sum(const ad::Value& per_kernel, const ad::Value& mask);

/// Focused kernel point convolution: per-kernel outputs, optional kernel
/// attention, then the sum over kernels. [M x D_out].
ad::Value fkp_conv(const ad::Value& features, const ConvGeometry& geometry, const FkpWeights& weights);

/// fkp_conv whose queries are the next coarser level.
ad::Value strided_fkp_conv(const ad::Value& features, const ConvGeometry& pool_geometry, const FkpWeights& weights);

}  // namespace pyrpoint
