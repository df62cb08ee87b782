#include "pyrpoint/network.hpp"

#include <cstdio>
#include <sstream>

#include "pyrpoint/errors.hpp"
#include "pyrpoint/rng.hpp"

namespace pyrpoint {

template <typename Fn>
void PyramidNetwork::record_block(const std::string& name, BlockKind kind, std::size_t level, std::size_t in,
                                  std::size_t out, Fn&& build) {
  const std::size_t first = store_->size();
  build();
  std::size_t count = 0;
  for (std::size_t i = first; i < store_->size(); ++i) count += (*store_)[i].value.numel();
  blocks_.push_back({name, to_string(kind), level, in, out, count});
}

PyramidNetwork::PyramidNetwork(NetworkConfig config)
    : config_(std::move(config)), store_(std::make_unique<ParameterStore>()) {
  config_.validate();
  const auto& dims = config_.feature_dims;
  const std::size_t levels = config_.level_count;
  const std::size_t k = config_.kernel_points;
  const std::uint64_t seed = config_.seed;

  disposition_ = make_disposition(k, 1.0, derive_seed(seed, "kernel_disposition"), 0.5);

  BlockSpec base;
  base.hidden_layers = config_.hidden_layers;
  base.attention = config_.attention_mode;
  base.normalization = config_.normalization;
  base.norm_momentum = config_.norm_momentum;

  for (std::size_t l = 1; l <= levels; ++l) {
    BlockSpec spec = base;
    spec.kind = BlockKind::rfkp_bottleneck;
    spec.in_dim = l == 1 ? input_width() : dims[l - 2];
    spec.out_dim = dims[l - 1];
    const std::string name = "encoder.L" + std::to_string(l) + ".rfkp";
    record_block(name, spec.kind, l, spec.in_dim, spec.out_dim,
                 [&] { encoders_.emplace_back(*store_, name, spec, k, seed); });
    if (l < levels) {
      BlockSpec down = base;
      down.kind = BlockKind::strided_bottleneck;
      down.in_dim = dims[l - 1];
      down.out_dim = dims[l - 1];
      const std::string dname = "encoder.L" + std::to_string(l) + ".strided";
      record_block(dname, down.kind, l + 1, down.in_dim, down.out_dim,
                   [&] { strided_.emplace_back(*store_, dname, down, k, seed); });
    }
  }

  for (std::size_t s = levels; s >= config_.pyramid_start; --s) {
    const std::size_t deeper_chains = levels - s;
    for (std::size_t r = s - 1; r >= 1; --r) {
      BlockSpec spec = base;
      spec.kind = BlockKind::decoder_stage;
      spec.in_dim = dims[r] + dims[r - 1] * (1 + deeper_chains);
      spec.out_dim = dims[r - 1];
      const std::string name = "decoder.C" + std::to_string(s) + ".L" + std::to_string(r);
      record_block(name, spec.kind, r, spec.in_dim, spec.out_dim,
                   [&] { decoders_.emplace(std::make_pair(s, r), DecoderStage(*store_, name, spec, seed)); });
    }
  }

  BlockSpec hidden = base;
  hidden.kind = BlockKind::unary;
  hidden.in_dim = head_input_width();
  hidden.out_dim = config_.head_width;
  record_block("head.0", BlockKind::unary, 1, hidden.in_dim, hidden.out_dim,
               [&] { head_.emplace_back(*store_, "head.0", hidden, seed); });
  BlockSpec logits = hidden;
  logits.in_dim = config_.head_width;
  logits.out_dim = config_.class_count;
  logits.normalization = Normalization::none;
  logits.activation = false;
  record_block("head.1", BlockKind::unary, 1, logits.in_dim, logits.out_dim,
               [&] { head_.emplace_back(*store_, "head.1", logits, seed); });
}

PyramidNetwork build_network(const NetworkConfig& config) { return PyramidNetwork(config); }

std::vector<std::size_t> PyramidNetwork::chain_starts() const {
  std::vector<std::size_t> out;
  for (std::size_t s = config_.level_count; s >= config_.pyramid_start; --s) out.push_back(s);
  return out;
}

std::size_t PyramidNetwork::head_input_width() const {
  return (config_.level_count - config_.pyramid_start + 1) * config_.feature_dims.front();
}

const DecoderStage& PyramidNetwork::decoder(std::size_t chain_start, std::size_t level) const {
  auto it = decoders_.find({chain_start, level});
  if (it == decoders_.end()) {
    throw IndexError("no decoder stage for chain " + std::to_string(chain_start) + " at level " + std::to_string(level));
  }
  return it->second;
}

LevelGeometry PyramidNetwork::prepare(const LevelSet& levels) const {
  if (levels.level_count() != config_.level_count) {
    throw ConfigError("level set has " + std::to_string(levels.level_count()) + " levels, network expects " +
                      std::to_string(config_.level_count));
  }
  LevelGeometry geo;
  for (std::size_t l = 0; l < levels.level_count(); ++l) {
    const Level& lvl = levels.levels[l];
    const double radius = config_.conv_radius_factor * lvl.cell_size;
    const KernelDisposition kernel = disposition_.scaled(radius, config_.influence_factor * radius);
    geo.conv.push_back(make_conv_geometry(lvl.points, lvl.points, lvl.conv_neighbors, kernel));
    if (l + 1 < levels.level_count()) {
      geo.pool.push_back(make_conv_geometry(levels.levels[l + 1].points, lvl.points, lvl.pool_neighbors, kernel));
    }
  }
  return geo;
}

ad::Value PyramidNetwork::forward(const LevelSet& levels, const ad::Value& input, const ForwardContext& ctx,
                                  ForwardTrace* trace) const {
  const LevelGeometry geo = prepare(levels);
  return forward(levels, geo, input, ctx, trace);
}

ad::Value PyramidNetwork::forward(const LevelSet& levels, const LevelGeometry& geometry, const ad::Value& input,
                                  const ForwardContext& ctx, ForwardTrace* trace) const {
  const std::size_t nl = config_.level_count;
  if (levels.level_count() != nl || geometry.conv.size() != nl) {
    throw ConfigError("forward: level set / geometry does not match a " + std::to_string(nl) + "-level network");
  }
  if (input.rank() != 2 || input.dim(0) != levels.levels[0].points.size() || input.dim(1) != input_width()) {
    throw DimensionError("forward: input features " + ad::shape_string(input.shape()) + " but level 1 has " +
                         std::to_string(levels.levels[0].points.size()) + " points and the network expects width " +
                         std::to_string(input_width()));
  }

  std::vector<ad::Value> enc(nl);
  enc[0] = encoders_[0].forward(input, geometry.conv[0], ctx);
  for (std::size_t l = 1; l < nl; ++l) {
    const ad::Value down = strided_[l - 1].forward(enc[l - 1], geometry.pool[l - 1], ctx);
    enc[l] = encoders_[l].forward(down, geometry.conv[l], ctx);
  }

  std::map<std::size_t, std::vector<ad::Value>> chains;
  std::vector<ad::Value> head_parts;
  for (std::size_t s : chain_starts()) {
    std::vector<ad::Value> outputs(s - 1);
    ad::Value prev = enc[s - 1];
    for (std::size_t r = s - 1; r >= 1; --r) {
      std::vector<ad::Value> side{enc[r - 1]};
      for (const auto& [deeper, outs] : chains) side.push_back(outs[r - 1]);
      prev = decoder(s, r).forward(prev, levels.levels[r - 1].upsample_index, side, ctx);
      outputs[r - 1] = prev;
    }
    head_parts.push_back(outputs[0]);
    chains.emplace(s, std::move(outputs));
  }
  const ad::Value head_in = head_parts.size() == 1 ? head_parts.front() : ad::concat(head_parts, 1);
  const ad::Value logits = head_[1].forward(head_[0].forward(head_in, ctx), ctx);

  if (trace) {
    trace->encoder = enc;
    trace->chains = std::move(chains);
    trace->head_input = head_in;
  }
  return logits;
}

std::string PyramidNetwork::summarize() const {
  std::ostringstream os;
  char line[256];
  std::snprintf(line, sizeof line, "%-28s %-20s %5s %7s %7s %12s\n", "block", "kind", "level", "in", "out", "params");
  os << line << std::string(84, '-') << '\n';
  std::size_t total = 0;
  for (const auto& b : blocks_) {
    std::snprintf(line, sizeof line, "%-28s %-20s %5zu %7zu %7zu %12zu\n", b.name.c_str(), b.kind.c_str(), b.level,
                  b.in_dim, b.out_dim, b.parameter_count);
    os << line;
    total += b.parameter_count;
  }
  os << std::string(84, '-') << '\n';
  std::snprintf(line, sizeof line, "%-28s %56zu\n", "total (registry)", store_->total_count());
  os << line;
  std::snprintf(line, sizeof line, "%-28s %56zu\n", "trainable", store_->trainable_count());
  os << line;
  std::snprintf(line, sizeof line, "levels %zu, pyramid start %zu, chains %zu, head input width %zu\n",
                config_.level_count, config_.pyramid_start, chain_starts().size(), head_input_width());
  os << line;
  (void)total;
  return os.str();
}

// ---------------------------------------------------------------------------

ad::Value input_features(const PointCloud& cloud, const std::vector<std::string>& recipe) {
  const std::size_t n = cloud.size();
  const std::size_t w = recipe.size();
  std::vector<std::ptrdiff_t> source(w, -1);
  for (std::size_t f = 0; f < w; ++f) {
    if (recipe[f] == "one" || recipe[f] == "height") continue;
    for (std::size_t j = 0; j < cloud.feature_count(); ++j)
      if (cloud.feature_names[j] == recipe[f]) source[f] = static_cast<std::ptrdiff_t>(j);
    if (source[f] < 0) throw ConfigError("input feature '" + recipe[f] + "' is not present in the cloud");
  }
  std::vector<double> data(n * w);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t f = 0; f < w; ++f) {
      double v;
      if (recipe[f] == "one") v = 1.0;
      else if (recipe[f] == "height") v = cloud.positions[i][2];
      else v = cloud.feature(i, static_cast<std::size_t>(source[f]));
      data[i * w + f] = v;
    }
  return ad::Value::constant({n, w}, std::move(data));
}

std::vector<int> argmax_rows(const ad::Value& logits) {
  if (logits.rank() != 2) throw DimensionError("argmax_rows: expected [N x C] logits");
  const std::size_t n = logits.dim(0), c = logits.dim(1);
  std::vector<int> out(n, 0);
  const auto d = logits.data();
  for (std::size_t i = 0; i < n; ++i) {
    std::size_t best = 0;
    for (std::size_t k = 1; k < c; ++k)
      if (d[i * c + k] > d[i * c + best]) best = k;
    out[i] = static_cast<int>(best);
  }
  return out;
}

std::vector<int> predict_labels(const ad::Value& logits, const LevelSet& levels, const PointCloud& original) {
  const std::vector<int> level_labels = argmax_rows(logits);
  if (level_labels.size() != levels.levels.at(0).points.size()) {
    throw DimensionError("predict_labels: logits rows do not match level-1 points");
  }
  const auto nearest = nearest_upsample_index(original.positions, levels.levels[0].points);
  std::vector<int> out(nearest.size());
  for (std::size_t i = 0; i < nearest.size(); ++i) out[i] = level_labels[nearest[i]];
  return out;
}

}  // namespace pyrpoint
