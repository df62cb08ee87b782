#pragma once

// Minimal eager reverse-mode automatic differentiation over dense row-major
// arrays of doubles. Every op records its inputs and a backward closure; the
// tape is the graph of shared nodes reachable from the value being
// differentiated.

#include <cstddef>
#include <functional>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <vector>

namespace pyrpoint::ad {

using Shape = std::vector<std::size_t>;

std::size_t numel(const Shape& shape);
std::string shape_string(const Shape& shape);

struct Node;
using NodePtr = std::shared_ptr<Node>;

struct Node {
  Shape shape;
  std::vector<double> data;
  std::vector<double> grad;  // empty until something flows into it
  bool requires_grad = false;
  std::string op;
  std::vector<NodePtr> inputs;
  std::function<void(Node&)> backward_fn;

  bool is_leaf() const { return inputs.empty(); }
  std::vector<double>& ensure_grad() {
    if (grad.empty()) grad.assign(data.size(), 0.0);
    return grad;
  }
};

class Value {
 public:
  Value() = default;
  explicit Value(NodePtr node) : node_(std::move(node)) {}

  static Value constant(Shape shape, std::vector<double> data);
  static Value variable(Shape shape, std::vector<double> data);
  static Value zeros(Shape shape, bool requires_grad = false);
  static Value full(Shape shape, double fill, bool requires_grad = false);
  static Value scalar(double v) { return constant({}, {v}); }

  bool defined() const { return static_cast<bool>(node_); }
  const Shape& shape() const { return node_->shape; }
  std::size_t rank() const { return node_->shape.size(); }
  std::size_t dim(std::size_t axis) const { return node_->shape.at(axis); }
  std::size_t numel() const { return node_->data.size(); }

  std::span<const double> data() const { return node_->data; }
  /// Leaf storage, for optimizers and finite-difference probes.
  std::span<double> mutable_data() { return node_->data; }
  std::span<const double> grad() const { return node_->grad; }
  bool has_grad() const { return !node_->grad.empty(); }
  bool requires_grad() const { return node_->requires_grad; }
  const std::string& op() const { return node_->op; }

  double item() const;
  double at(std::size_t flat_index) const { return node_->data.at(flat_index); }

  void zero_grad() const;
  /// Reverse sweep from this scalar. Leaf gradients accumulate across calls;
  /// interior gradients are reset first.
  void backward() const;

  /// Same data, cut from the graph.
  Value detach() const;

  const NodePtr& node() const { return node_; }

 private:
  NodePtr node_;
};

/// Flat [rows x cols] index table. `shadow` is the padding index that selects
/// an implicit all-zero row.
struct IndexTable {
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::size_t shadow = 0;
  std::vector<std::size_t> indices;

  std::size_t at(std::size_t r, std::size_t c) const { return indices[r * cols + c]; }
};

enum class ElementwiseKind { add, sub, mul };
enum class ReduceKind { sum, max, mean };
enum class ActivationKind { sigmoid, leaky_relu, relu };

inline constexpr double kLeakySlope = 0.1;

Value matmul(const Value& a, const Value& b);
/// [B x M x K] x [B x K x N] -> [B x M x N]
Value batched_matmul(const Value& a, const Value& b);

/// b must have a's shape, or a's shape with the leading axis dropped (it is
/// then repeated along that axis).
Value elementwise(ElementwiseKind kind, const Value& a, const Value& b);
inline Value add(const Value& a, const Value& b) { return elementwise(ElementwiseKind::add, a, b); }
inline Value sub(const Value& a, const Value& b) { return elementwise(ElementwiseKind::sub, a, b); }
inline Value mul(const Value& a, const Value& b) { return elementwise(ElementwiseKind::mul, a, b); }

Value scale(const Value& x, double factor);

Value reduce(ReduceKind kind, const Value& x, std::size_t axis);
Value sum_all(const Value& x);

Value activation(ActivationKind kind, const Value& x);
inline Value sigmoid(const Value& x) { return activation(ActivationKind::sigmoid, x); }
inline Value leaky_relu(const Value& x) { return activation(ActivationKind::leaky_relu, x); }
inline Value relu(const Value& x) { return activation(ActivationKind::relu, x); }

/// x [N x D], table [M x H] -> [M x H x D]; shadow entries give zero rows.
Value gather_rows(const Value& x, const IndexTable& table);
/// x [N x D], index list of length M -> [M x D].
Value gather_rows(const Value& x, std::span<const std::size_t> indices);

/// Row-wise maximum over each neighbourhood: x [N x D], table [M x H] ->
/// [M x D]. Shadow slots are skipped; an empty row yields zeros.
Value neighborhood_max(const Value& x, const IndexTable& table);

Value concat(const std::vector<Value>& values, std::size_t axis);
Value reshape(const Value& x, Shape shape);
/// [A x B x ...] -> [B x A x ...]
Value swap_leading_axes(const Value& x);

/// Mean (class-weighted) negative log-softmax over non-ignored rows.
Value softmax_cross_entropy(const Value& logits, std::span<const int> labels,
                            std::span<const double> class_weights = {},
                            std::optional<int> ignore_index = std::nullopt);

struct BatchNormBuffers {
  std::span<double> running_mean;
  std::span<double> running_var;
};

/// Batch normalisation over the point axis of x [N x D]. In training mode it
/// normalises with batch statistics and updates the running buffers; otherwise
/// it uses the running buffers and is affine in x.
Value batch_norm(const Value& x, const Value& gamma, const Value& beta, BatchNormBuffers buffers,
                 bool training, double eps = 1e-6, double momentum = 0.99);

/// Escape hatch for ops defined outside this file. `backward` receives the
/// output node; input gradients live in node.inputs[i]->grad.
Value custom_op(std::string name, Shape shape, std::vector<double> data, std::vector<Value> inputs,
                std::function<void(Node&)> backward);

/// Max over every coordinate of every input of
/// |analytic - central difference| / max(1, |central difference|).
/// `f` must rebuild its graph from the (mutated in place) input leaves.
double grad_check(const std::function<Value()>& f, std::vector<Value> inputs, double eps = 1e-4);

}  // namespace pyrpoint::ad
