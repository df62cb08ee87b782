#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "pyrpoint/autodiff.hpp"
#include "pyrpoint/parameters.hpp"
#include "pyrpoint/point_conv.hpp"

namespace pyrpoint {

enum class Normalization { batch, none };

inline constexpr double kBatchNormEps = 1e-6;
inline constexpr double kBatchNormMomentum = 0.99;
enum class BlockKind { unary, rfkp_bottleneck, strided_bottleneck, decoder_stage };

std::string to_string(Normalization n);
Normalization normalization_from_string(const std::string& text);
std::string to_string(BlockKind k);

struct BlockSpec {
  BlockKind kind = BlockKind::unary;
  std::size_t in_dim = 0;
  std::size_t out_dim = 0;
  std::size_t hidden_layers = 0;
  AttentionMode attention = AttentionMode::max_mean;
  Normalization normalization = Normalization::batch;
  double norm_momentum = kBatchNormMomentum;  // running-statistic decay
  bool activation = true;  // unary only; false for head / pre-residual layers

  void validate() const;
};

/// Batch-norm mode for one pass. Frozen statistics make every block a
/// deterministic function of its inputs (used by gradient checks and inference).
struct ForwardContext {
  bool training = false;
};

class BatchNorm {
 public:
  BatchNorm() = default;
  BatchNorm(ParameterStore& store, const std::string& prefix, std::size_t width,
            double momentum = kBatchNormMomentum);
  ad::Value forward(const ad::Value& x, const ForwardContext& ctx) const;

 private:
  double momentum_ = kBatchNormMomentum;
  Parameter* gamma_ = nullptr;
  Parameter* beta_ = nullptr;
  Parameter* running_mean_ = nullptr;
  Parameter* running_var_ = nullptr;
};

/// Pointwise linear map, then normalisation, then leaky ReLU (unless the
/// spec disables the activation). Without normalisation a bias is learned.
class UnaryConv {
 public:
  UnaryConv() = default;
  UnaryConv(ParameterStore& store, const std::string& prefix, const BlockSpec& spec, std::uint64_t seed);

  ad::Value forward(const ad::Value& x, const ForwardContext& ctx) const;
  const BlockSpec& spec() const { return spec_; }
  Parameter* weight() const { return weight_; }

 private:
  BlockSpec spec_;
  Parameter* weight_ = nullptr;
  Parameter* bias_ = nullptr;
  std::optional<BatchNorm> norm_;
};

/// z_0 = FKP_f(x); z_t = FKP_f(x) + FKP_r(z_{t-1}) for t = 1..H; returns z_H.
/// Both convolutions keep their weights across the H steps.
class RecurrentFkp {
 public:
  RecurrentFkp() = default;
  RecurrentFkp(ParameterStore& store, const std::string& prefix, std::size_t width, std::size_t hidden_layers,
               std::size_t kernel_count, AttentionMode mode, std::uint64_t seed);

  ad::Value forward(const ad::Value& x, const ConvGeometry& geometry) const;
  std::size_t hidden_layers() const { return hidden_layers_; }
  const FkpWeights& feed_forward() const { return feed_; }
  const FkpWeights& recurrent() const { return recur_; }

 private:
  FkpWeights feed_;
  FkpWeights recur_;
  std::size_t hidden_layers_ = 0;
};

std::size_t bottleneck_width(std::size_t out_dim);

/// unary(D_in -> D_out/4) -> recurrent FKP -> leaky ReLU -> unary without
/// activation (-> D_out), plus shortcut, then leaky ReLU.
class RfkpBottleneck {
 public:
  RfkpBottleneck() = default;
  RfkpBottleneck(ParameterStore& store, const std::string& prefix, const BlockSpec& spec, std::size_t kernel_count,
                 std::uint64_t seed);

  ad::Value forward(const ad::Value& x, const ConvGeometry& geometry, const ForwardContext& ctx) const;
  const BlockSpec& spec() const { return spec_; }
  const RecurrentFkp& core() const { return core_; }

 private:
  BlockSpec spec_;
  UnaryConv reduce_;
  RecurrentFkp core_;
  UnaryConv expand_;
  std::optional<UnaryConv> shortcut_;
};

/// Same shape as the recurrent bottleneck with a single strided FKP in the
/// middle. The shortcut max-pools x over the pooling neighbourhoods and, when
/// widths differ, applies a unary map.
class StridedBottleneck {
 public:
  StridedBottleneck() = default;
  StridedBottleneck(ParameterStore& store, const std::string& prefix, const BlockSpec& spec,
                    std::size_t kernel_count, std::uint64_t seed);

  ad::Value forward(const ad::Value& x, const ConvGeometry& pool_geometry, const ForwardContext& ctx) const;
  const BlockSpec& spec() const { return spec_; }
  const FkpWeights& core() const { return core_; }

 private:
  BlockSpec spec_;
  UnaryConv reduce_;
  FkpWeights core_;
  UnaryConv expand_;
  std::optional<UnaryConv> shortcut_;
};

/// Nearest upsampling of the coarse features, concatenated with same-level
/// side inputs, fused by a unary convolution.
class DecoderStage {
 public:
  DecoderStage() = default;
  DecoderStage(ParameterStore& store, const std::string& prefix, const BlockSpec& spec, std::uint64_t seed);

  ad::Value forward(const ad::Value& coarse, std::span<const std::size_t> upsample_index,
                    const std::vector<ad::Value>& side_inputs, const ForwardContext& ctx) const;
  const BlockSpec& spec() const { return spec_; }

 private:
  BlockSpec spec_;
  UnaryConv fuse_;
};

}  // namespace pyrpoint
