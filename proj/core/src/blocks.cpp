#include "pyrpoint/blocks.hpp"

#include <algorithm>

#include "pyrpoint/errors.hpp"

namespace pyrpoint {

std::string to_string(Normalization n) { return n == Normalization::batch ? "batch" : "none"; }

Normalization normalization_from_string(const std::string& text) {
  if (text == "batch") return Normalization::batch;
  if (text == "none") return Normalization::none;
  throw ConfigError("unknown normalization '" + text + "' (expected batch or none)");
}

std::string to_string(BlockKind k) {
  switch (k) {
    case BlockKind::unary: return "unary";
    case BlockKind::rfkp_bottleneck: return "rfkp_bottleneck";
    case BlockKind::strided_bottleneck: return "strided_bottleneck";
    case BlockKind::decoder_stage: return "decoder_stage";
  }
  return "unknown";
}

void BlockSpec::validate() const {
  if (in_dim == 0 || out_dim == 0) {
    throw ConfigError(to_string(kind) + ": feature widths must be positive (in=" + std::to_string(in_dim) +
                      ", out=" + std::to_string(out_dim) + ")");
  }
}

std::size_t bottleneck_width(std::size_t out_dim) { return std::max<std::size_t>(1, out_dim / 4); }

// ---------------------------------------------------------------------------

BatchNorm::BatchNorm(ParameterStore& store, const std::string& prefix, std::size_t width, double momentum)
    : momentum_(momentum) {
  gamma_ = &store.create(prefix + ".gamma", {width}, std::vector<double>(width, 1.0));
  beta_ = &store.create(prefix + ".beta", {width}, std::vector<double>(width, 0.0));
  running_mean_ = &store.create(prefix + ".running_mean", {width}, std::vector<double>(width, 0.0), false);
  running_var_ = &store.create(prefix + ".running_var", {width}, std::vector<double>(width, 1.0), false);
}

ad::Value BatchNorm::forward(const ad::Value& x, const ForwardContext& ctx) const {
  return ad::batch_norm(x, gamma_->value, beta_->value,
                        {running_mean_->value.mutable_data(), running_var_->value.mutable_data()}, ctx.training,
                        kBatchNormEps, momentum_);
}

UnaryConv::UnaryConv(ParameterStore& store, const std::string& prefix, const BlockSpec& spec, std::uint64_t seed)
    : spec_(spec) {
  spec_.kind = BlockKind::unary;
  spec_.validate();
  weight_ = &store.create_uniform(prefix + ".weight", {spec.in_dim, spec.out_dim}, spec.in_dim, seed);
  if (spec.normalization == Normalization::batch) {
    norm_.emplace(store, prefix + ".norm", spec.out_dim, spec.norm_momentum);
  } else {
    bias_ = &store.create(prefix + ".bias", {spec.out_dim}, std::vector<double>(spec.out_dim, 0.0));
  }
}

ad::Value UnaryConv::forward(const ad::Value& x, const ForwardContext& ctx) const {
  if (x.rank() != 2 || x.dim(1) != spec_.in_dim) {
    throw DimensionError("unary_conv: input " + ad::shape_string(x.shape()) + " but layer expects width " +
                         std::to_string(spec_.in_dim));
  }
  ad::Value y = ad::matmul(x, weight_->value);
  y = norm_ ? norm_->forward(y, ctx) : ad::add(y, bias_->value);
  return spec_.activation ? ad::leaky_relu(y) : y;
}

// ---------------------------------------------------------------------------

RecurrentFkp::RecurrentFkp(ParameterStore& store, const std::string& prefix, std::size_t width,
                           std::size_t hidden_layers, std::size_t kernel_count, AttentionMode mode, std::uint64_t seed)
    : hidden_layers_(hidden_layers) {
  feed_ = make_fkp_weights(store, prefix + ".feed", kernel_count, width, width, mode, seed);
  // A recurrence with H = 0 never reads the recurrent weights; skip them.
  if (hidden_layers > 0) recur_ = make_fkp_weights(store, prefix + ".recur", kernel_count, width, width, mode, seed);
}

ad::Value RecurrentFkp::forward(const ad::Value& x, const ConvGeometry& geometry) const {
  const ad::Value feed = fkp_conv(x, geometry, feed_);
  ad::Value state = feed;
  for (std::size_t t = 1; t <= hidden_layers_; ++t) state = ad::add(feed, fkp_conv(state, geometry, recur_));
  return state;
}

namespace {

BlockSpec unary_spec(const BlockSpec& parent, std::size_t in, std::size_t out, bool activation) {
  BlockSpec s;
  s.kind = BlockKind::unary;
  s.in_dim = in;
  s.out_dim = out;
  s.normalization = parent.normalization;
  s.norm_momentum = parent.norm_momentum;
  s.activation = activation;
  return s;
}

}  // namespace

RfkpBottleneck::RfkpBottleneck(ParameterStore& store, const std::string& prefix, const BlockSpec& spec,
                               std::size_t kernel_count, std::uint64_t seed)
    : spec_(spec) {
  spec_.kind = BlockKind::rfkp_bottleneck;
  spec_.validate();
  const std::size_t mid = bottleneck_width(spec.out_dim);
  reduce_ = UnaryConv(store, prefix + ".reduce", unary_spec(spec, spec.in_dim, mid, true), seed);
  core_ = RecurrentFkp(store, prefix + ".rfkp", mid, spec.hidden_layers, kernel_count, spec.attention, seed);
  expand_ = UnaryConv(store, prefix + ".expand", unary_spec(spec, mid, spec.out_dim, false), seed);
  if (spec.in_dim != spec.out_dim) {
    shortcut_.emplace(store, prefix + ".shortcut", unary_spec(spec, spec.in_dim, spec.out_dim, false),
                      seed);
  }
}

ad::Value RfkpBottleneck::forward(const ad::Value& x, const ConvGeometry& geometry, const ForwardContext& ctx) const {
  const ad::Value u = reduce_.forward(x, ctx);
  const ad::Value v = ad::leaky_relu(core_.forward(u, geometry));
  const ad::Value w = expand_.forward(v, ctx);
  const ad::Value s = shortcut_ ? shortcut_->forward(x, ctx) : x;
  return ad::leaky_relu(ad::add(w, s));
}

StridedBottleneck::StridedBottleneck(ParameterStore& store, const std::string& prefix, const BlockSpec& spec,
                                     std::size_t kernel_count, std::uint64_t seed)
    : spec_(spec) {
  spec_.kind = BlockKind::strided_bottleneck;
  spec_.validate();
  const std::size_t mid = bottleneck_width(spec.out_dim);
  reduce_ = UnaryConv(store, prefix + ".reduce", unary_spec(spec, spec.in_dim, mid, true), seed);
  core_ = make_fkp_weights(store, prefix + ".fkp", kernel_count, mid, mid, spec.attention, seed);
  expand_ = UnaryConv(store, prefix + ".expand", unary_spec(spec, mid, spec.out_dim, false), seed);
  if (spec.in_dim != spec.out_dim) {
    shortcut_.emplace(store, prefix + ".shortcut", unary_spec(spec, spec.in_dim, spec.out_dim, false),
                      seed);
  }
}

ad::Value StridedBottleneck::forward(const ad::Value& x, const ConvGeometry& pool_geometry,
                                     const ForwardContext& ctx) const {
  const ad::Value u = reduce_.forward(x, ctx);
  const ad::Value v = ad::leaky_relu(strided_fkp_conv(u, pool_geometry, core_));
  const ad::Value w = expand_.forward(v, ctx);
  const ad::Value pooled = ad::neighborhood_max(x, pool_geometry.neighbors->table);
  const ad::Value s = shortcut_ ? shortcut_->forward(pooled, ctx) : pooled;
  return ad::leaky_relu(ad::add(w, s));
}

DecoderStage::DecoderStage(ParameterStore& store, const std::string& prefix, const BlockSpec& spec,
                           std::uint64_t seed)
    : spec_(spec) {
  spec_.kind = BlockKind::decoder_stage;
  spec_.validate();
  fuse_ = UnaryConv(store, prefix + ".fuse", unary_spec(spec, spec.in_dim, spec.out_dim, spec.activation),
                    seed);
}

ad::Value DecoderStage::forward(const ad::Value& coarse, std::span<const std::size_t> upsample_index,
                                const std::vector<ad::Value>& side_inputs, const ForwardContext& ctx) const {
  std::vector<ad::Value> parts{ad::gather_rows(coarse, upsample_index)};
  for (const auto& side : side_inputs) {
    if (side.rank() != 2 || side.dim(0) != upsample_index.size()) {
      throw DimensionError("decoder_stage: side input " + ad::shape_string(side.shape()) + " does not have " +
                           std::to_string(upsample_index.size()) + " rows");
    }
    parts.push_back(side);
  }
  return fuse_.forward(parts.size() == 1 ? parts.front() : ad::concat(parts, 1), ctx);
}

}  // namespace pyrpoint
