#pragma once

#include <map>
#include <memory>
#include <string>
#include <utility>
#include <vector>

#include "pyrpoint/autodiff.hpp"
#include "pyrpoint/blocks.hpp"
#include "pyrpoint/config.hpp"
#include "pyrpoint/parameters.hpp"
#include "pyrpoint/point_conv.hpp"
#include "pyrpoint/spatial.hpp"

namespace pyrpoint {

/// Convolution geometry for every level of one LevelSet. Holds pointers into
/// the LevelSet's neighbour tables, so the LevelSet must outlive it.
struct LevelGeometry {
  std::vector<ConvGeometry> conv;  // one per level
  std::vector<ConvGeometry> pool;  // level l -> l+1, one per level except the last
};

struct BlockInfo {
  std::string name;
  std::string kind;
  std::size_t level = 0;  // 1-based resolution level the block outputs at
  std::size_t in_dim = 0;
  std::size_t out_dim = 0;
  std::size_t parameter_count = 0;  // scalars registered by the block, buffers included
};

/// Intermediate tensors of one forward pass, kept for inspection.
struct ForwardTrace {
  std::vector<ad::Value> encoder;  // E_l, level-indexed from 0
  /// chain start level s (1-based) -> stage outputs indexed by level (0-based; empty above s-1)
  std::map<std::size_t, std::vector<ad::Value>> chains;
  ad::Value head_input;
};

/// Dense pyramid encoder-decoder. Encoder levels 1..L each run a recurrent
/// FKP bottleneck followed (except at level L) by a strided bottleneck.
/// Decoder chains start at every level s in [s0, L]; the chain from s has s-1
/// stages and each of its stages also sees the encoder output and the
/// deeper chains' outputs at that level. The head concatenates every chain's
/// level-1 output.
class PyramidNetwork {
 public:
  explicit PyramidNetwork(NetworkConfig config);

  PyramidNetwork(const PyramidNetwork&) = delete;
  PyramidNetwork& operator=(const PyramidNetwork&) = delete;
  PyramidNetwork(PyramidNetwork&&) = default;
  PyramidNetwork& operator=(PyramidNetwork&&) = default;

  const NetworkConfig& config() const { return config_; }
  ParameterStore& parameters() { return *store_; }
  const ParameterStore& parameters() const { return *store_; }

  LevelGeometry prepare(const LevelSet& levels) const;

  ad::Value forward(const LevelSet& levels, const ad::Value& input, const ForwardContext& ctx,
                    ForwardTrace* trace = nullptr) const;
  ad::Value forward(const LevelSet& levels, const LevelGeometry& geometry, const ad::Value& input,
                    const ForwardContext& ctx, ForwardTrace* trace = nullptr) const;

  /// Chain start levels in build order (L, L-1, ..., s0).
  std::vector<std::size_t> chain_starts() const;
  std::size_t chain_length(std::size_t start_level) const { return start_level - 1; }
  std::size_t head_input_width() const;
  std::size_t input_width() const { return config_.input_features.size(); }

  /// 1-based level accessors.
  const RfkpBottleneck& encoder(std::size_t level) const { return encoders_.at(level - 1); }
  const StridedBottleneck& downsample(std::size_t level) const { return strided_.at(level - 1); }
  const DecoderStage& decoder(std::size_t chain_start, std::size_t level) const;
  const UnaryConv& head(std::size_t i) const { return head_.at(i); }
  /// Unit-radius kernel disposition shared by all levels (scaled per level).
  const KernelDisposition& disposition() const { return disposition_; }

  const std::vector<BlockInfo>& blocks() const { return blocks_; }
  std::string summarize() const;

 private:
  template <typename Fn>
  void record_block(const std::string& name, BlockKind kind, std::size_t level, std::size_t in, std::size_t out,
                    Fn&& build);

  NetworkConfig config_;
  std::unique_ptr<ParameterStore> store_;
  KernelDisposition disposition_;
  std::vector<RfkpBottleneck> encoders_;
  std::vector<StridedBottleneck> strided_;
  std::map<std::pair<std::size_t, std::size_t>, DecoderStage> decoders_;  // (chain start, level)
  std::vector<UnaryConv> head_;
  std::vector<BlockInfo> blocks_;
};

PyramidNetwork build_network(const NetworkConfig& config);

/// Builds the input feature matrix [N x F] from a cloud. Recipe entries:
/// "one" (constant 1), "height" (raw z), or the name of a cloud feature.
ad::Value input_features(const PointCloud& cloud, const std::vector<std::string>& recipe);

/// Row-wise argmax (ties to the lowest class).
std::vector<int> argmax_rows(const ad::Value& logits);

/// Argmax per level-1 point, carried to every original point through its
/// nearest level-1 point.
std::vector<int> predict_labels(const ad::Value& logits, const LevelSet& levels, const PointCloud& original);

}  // namespace pyrpoint
