#include "pyrpoint/autodiff.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <sstream>
#include <unordered_set>

#include "pyrpoint/errors.hpp"
#include "pyrpoint/parallel.hpp"

namespace pyrpoint::ad {

std::size_t numel(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
}

std::string shape_string(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) os << (i ? "x" : "") << shape[i];
  os << ']';
  return os.str();
}

namespace {

NodePtr make_leaf(Shape shape, std::vector<double> data, bool requires_grad, const char* op) {
  if (numel(shape) != data.size()) {
    throw DimensionError("data length " + std::to_string(data.size()) + " does not match shape " +
                         shape_string(shape));
  }
  auto node = std::make_shared<Node>();
  node->shape = std::move(shape);
  node->data = std::move(data);
  node->requires_grad = requires_grad;
  node->op = op;
  return node;
}

Value make_result(std::string op, Shape shape, std::vector<double> data, const std::vector<Value>& inputs,
                  std::function<void(Node&)> backward) {
  auto node = std::make_shared<Node>();
  node->shape = std::move(shape);
  node->data = std::move(data);
  node->op = std::move(op);
  for (const auto& in : inputs) node->requires_grad = node->requires_grad || in.requires_grad();
  if (node->requires_grad) {
    node->inputs.reserve(inputs.size());
    for (const auto& in : inputs) node->inputs.push_back(in.node());
    node->backward_fn = std::move(backward);
  }
  return Value(std::move(node));
}

// Accumulation target for input i, or nullptr when it takes no gradient.
double* grad_target(Node& self, std::size_t i) {
  Node& in = *self.inputs[i];
  if (!in.requires_grad) return nullptr;
  return in.ensure_grad().data();
}

void require_rank(const Value& v, std::size_t rank, const char* op) {
  if (v.rank() != rank) {
    throw DimensionError(std::string(op) + ": expected rank " + std::to_string(rank) + ", got shape " +
                         shape_string(v.shape()));
  }
}

}  // namespace

Value Value::constant(Shape shape, std::vector<double> data) {
  return Value(make_leaf(std::move(shape), std::move(data), false, "constant"));
}

Value Value::variable(Shape shape, std::vector<double> data) {
  return Value(make_leaf(std::move(shape), std::move(data), true, "variable"));
}

Value Value::zeros(Shape shape, bool requires_grad) { return full(std::move(shape), 0.0, requires_grad); }

Value Value::full(Shape shape, double fill, bool requires_grad) {
  std::vector<double> data(ad::numel(shape), fill);
  return Value(make_leaf(std::move(shape), std::move(data), requires_grad, requires_grad ? "variable" : "constant"));
}

double Value::item() const {
  if (numel() != 1) throw DimensionError("item() on value of shape " + shape_string(shape()));
  return node_->data[0];
}

void Value::zero_grad() const { node_->grad.clear(); }

Value Value::detach() const { return constant(shape(), node_->data); }

void Value::backward() const {
  if (numel() != 1) throw DimensionError("backward() needs a scalar, got " + shape_string(shape()));
  if (!node_->requires_grad) return;

  // Iterative post-order DFS gives a topological order with each node once.
  std::vector<Node*> order;
  std::unordered_set<Node*> visited;
  std::vector<std::pair<Node*, std::size_t>> stack{{node_.get(), 0}};
  visited.insert(node_.get());
  while (!stack.empty()) {
    auto& [node, next] = stack.back();
    if (next < node->inputs.size()) {
      Node* child = node->inputs[next++].get();
      if (child->requires_grad && visited.insert(child).second) stack.emplace_back(child, 0);
    } else {
      order.push_back(node);
      stack.pop_back();
    }
  }
  for (Node* n : order) {
    if (!n->is_leaf()) n->grad.clear();
  }
  node_->ensure_grad()[0] += 1.0;
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    Node* n = *it;
    if (n->backward_fn && !n->grad.empty()) n->backward_fn(*n);
  }
}

// ---------------------------------------------------------------------------

Value matmul(const Value& a, const Value& b) {
  require_rank(a, 2, "matmul");
  require_rank(b, 2, "matmul");
  const std::size_t m = a.dim(0), k = a.dim(1), n = b.dim(1);
  if (b.dim(0) != k) {
    throw DimensionError("matmul: inner dimensions disagree, " + shape_string(a.shape()) + " x " +
                         shape_string(b.shape()));
  }
  std::vector<double> out(m * n, 0.0);
  const double* A = a.data().data();
  const double* B = b.data().data();
  for (std::size_t i = 0; i < m; ++i) {
    double* row = out.data() + i * n;
    for (std::size_t p = 0; p < k; ++p) {
      const double av = A[i * k + p];
      const double* brow = B + p * n;
      for (std::size_t j = 0; j < n; ++j) row[j] += av * brow[j];
    }
  }
  return make_result("matmul", {m, n}, std::move(out), {a, b}, [m, k, n](Node& self) {
    const double* G = self.grad.data();
    const double* A = self.inputs[0]->data.data();
    const double* B = self.inputs[1]->data.data();
    if (double* gA = grad_target(self, 0)) {
      for (std::size_t i = 0; i < m; ++i)
        for (std::size_t p = 0; p < k; ++p) {
          double s = 0.0;
          for (std::size_t j = 0; j < n; ++j) s += G[i * n + j] * B[p * n + j];
          gA[i * k + p] += s;
        }
    }
    if (double* gB = grad_target(self, 1)) {
      for (std::size_t i = 0; i < m; ++i)
        for (std::size_t p = 0; p < k; ++p) {
          const double av = A[i * k + p];
          for (std::size_t j = 0; j < n; ++j) gB[p * n + j] += av * G[i * n + j];
        }
    }
  });
}

Value batched_matmul(const Value& a, const Value& b) {
  require_rank(a, 3, "batched_matmul");
  require_rank(b, 3, "batched_matmul");
  const std::size_t batch = a.dim(0), m = a.dim(1), k = a.dim(2), n = b.dim(2);
  if (b.dim(0) != batch || b.dim(1) != k) {
    throw DimensionError("batched_matmul: incompatible shapes " + shape_string(a.shape()) + " x " +
                         shape_string(b.shape()));
  }
  std::vector<double> out(batch * m * n, 0.0);
  const double* A = a.data().data();
  const double* B = b.data().data();
  parallel_for(batch, [&](std::size_t lo, std::size_t hi) {
    for (std::size_t t = lo; t < hi; ++t) {
      const double* At = A + t * m * k;
      const double* Bt = B + t * k * n;
      double* Ct = out.data() + t * m * n;
      for (std::size_t i = 0; i < m; ++i)
        for (std::size_t p = 0; p < k; ++p) {
          const double av = At[i * k + p];
          if (av == 0.0) continue;
          for (std::size_t j = 0; j < n; ++j) Ct[i * n + j] += av * Bt[p * n + j];
        }
    }
  }, 8);
  return make_result("batched_matmul", {batch, m, n}, std::move(out), {a, b}, [batch, m, k, n](Node& self) {
    const double* G = self.grad.data();
    const double* A = self.inputs[0]->data.data();
    const double* B = self.inputs[1]->data.data();
    double* gA = grad_target(self, 0);
    double* gB = grad_target(self, 1);
    parallel_for(batch, [&](std::size_t lo, std::size_t hi) {
      for (std::size_t t = lo; t < hi; ++t) {
        const double* Gt = G + t * m * n;
        const double* At = A + t * m * k;
        const double* Bt = B + t * k * n;
        if (gA) {
          double* gAt = gA + t * m * k;
          for (std::size_t i = 0; i < m; ++i)
            for (std::size_t p = 0; p < k; ++p) {
              double s = 0.0;
              for (std::size_t j = 0; j < n; ++j) s += Gt[i * n + j] * Bt[p * n + j];
              gAt[i * k + p] += s;
            }
        }
        if (gB) {
          double* gBt = gB + t * k * n;
          for (std::size_t i = 0; i < m; ++i)
            for (std::size_t p = 0; p < k; ++p) {
              const double av = At[i * k + p];
              if (av == 0.0) continue;
              for (std::size_t j = 0; j < n; ++j) gBt[p * n + j] += av * Gt[i * n + j];
            }
        }
      }
    }, 8);
  });
}

Value elementwise(ElementwiseKind kind, const Value& a, const Value& b) {
  const Shape& sa = a.shape();
  const Shape& sb = b.shape();
  const bool same = sa == sb;
  const bool leading = !same && !sa.empty() && Shape(sa.begin() + 1, sa.end()) == sb;
  if (!same && !leading) {
    throw DimensionError("elementwise: cannot broadcast " + shape_string(sb) + " onto " + shape_string(sa));
  }
  const std::size_t total = a.numel();
  const std::size_t inner = b.numel();
  std::vector<double> out(total);
  const double* A = a.data().data();
  const double* B = b.data().data();
  for (std::size_t i = 0; i < total; ++i) {
    const double bv = B[inner == 0 ? 0 : i % inner];
    switch (kind) {
      case ElementwiseKind::add: out[i] = A[i] + bv; break;
      case ElementwiseKind::sub: out[i] = A[i] - bv; break;
      case ElementwiseKind::mul: out[i] = A[i] * bv; break;
    }
  }
  static constexpr const char* names[] = {"add", "sub", "mul"};
  return make_result(names[static_cast<int>(kind)], sa, std::move(out), {a, b}, [kind, total, inner](Node& self) {
    const double* G = self.grad.data();
    const double* A = self.inputs[0]->data.data();
    const double* B = self.inputs[1]->data.data();
    double* gA = grad_target(self, 0);
    double* gB = grad_target(self, 1);
    for (std::size_t i = 0; i < total; ++i) {
      const std::size_t j = i % inner;
      switch (kind) {
        case ElementwiseKind::add:
          if (gA) gA[i] += G[i];
          if (gB) gB[j] += G[i];
          break;
        case ElementwiseKind::sub:
          if (gA) gA[i] += G[i];
          if (gB) gB[j] -= G[i];
          break;
        case ElementwiseKind::mul:
          if (gA) gA[i] += G[i] * B[j];
          if (gB) gB[j] += G[i] * A[i];
          break;
      }
    }
  });
}

Value scale(const Value& x, double factor) {
  std::vector<double> out(x.data().begin(), x.data().end());
  for (double& v : out) v *= factor;
  return make_result("scale", x.shape(), std::move(out), {x}, [factor](Node& self) {
    double* g = grad_target(self, 0);
    for (std::size_t i = 0; i < self.grad.size(); ++i) g[i] += factor * self.grad[i];
  });
}

Value reduce(ReduceKind kind, const Value& x, std::size_t axis) {
  if (axis >= x.rank()) {
    throw DimensionError("reduce: axis " + std::to_string(axis) + " invalid for shape " + shape_string(x.shape()));
  }
  const Shape& s = x.shape();
  std::size_t outer = 1, inner = 1;
  for (std::size_t i = 0; i < axis; ++i) outer *= s[i];
  for (std::size_t i = axis + 1; i < s.size(); ++i) inner *= s[i];
  const std::size_t n = s[axis];
  Shape out_shape;
  for (std::size_t i = 0; i < s.size(); ++i)
    if (i != axis) out_shape.push_back(s[i]);

  const double* X = x.data().data();
  std::vector<double> out(outer * inner, 0.0);
  std::vector<std::size_t> argmax;
  if (kind == ReduceKind::max) {
    if (n == 0) throw DimensionError("reduce(max): empty axis");
    argmax.assign(outer * inner, 0);
  }
  for (std::size_t o = 0; o < outer; ++o)
    for (std::size_t i = 0; i < inner; ++i) {
      const std::size_t dst = o * inner + i;
      if (kind == ReduceKind::max) {
        std::size_t best = 0;
        double bv = X[o * n * inner + i];
        for (std::size_t r = 1; r < n; ++r) {
          const double v = X[(o * n + r) * inner + i];
          if (v > bv) {
            bv = v;
            best = r;
          }
        }
        out[dst] = bv;
        argmax[dst] = best;
      } else {
        double acc = 0.0;
        for (std::size_t r = 0; r < n; ++r) acc += X[(o * n + r) * inner + i];
        out[dst] = kind == ReduceKind::mean ? acc / static_cast<double>(n) : acc;
      }
    }
  static constexpr const char* names[] = {"reduce_sum", "reduce_max", "reduce_mean"};
  return make_result(names[static_cast<int>(kind)], std::move(out_shape), std::move(out), {x},
                     [kind, outer, inner, n, argmax = std::move(argmax)](Node& self) {
                       double* g = grad_target(self, 0);
                       const double* G = self.grad.data();
                       const double w = kind == ReduceKind::mean ? 1.0 / static_cast<double>(n) : 1.0;
                       for (std::size_t o = 0; o < outer; ++o)
                         for (std::size_t i = 0; i < inner; ++i) {
                           const std::size_t src = o * inner + i;
                           if (kind == ReduceKind::max) {
                             g[(o * n + argmax[src]) * inner + i] += G[src];
                           } else {
                             for (std::size_t r = 0; r < n; ++r) g[(o * n + r) * inner + i] += w * G[src];
                           }
                         }
                     });
}

Value sum_all(const Value& x) {
  double acc = 0.0;
  for (double v : x.data()) acc += v;
  return make_result("sum_all", {}, {acc}, {x}, [](Node& self) {
    double* g = grad_target(self, 0);
    const double gv = self.grad[0];
    for (std::size_t i = 0; i < self.inputs[0]->data.size(); ++i) g[i] += gv;
  });
}

Value activation(ActivationKind kind, const Value& x) {
  const auto in = x.data();
  std::vector<double> out(in.size());
  for (std::size_t i = 0; i < in.size(); ++i) {
    const double t = in[i];
    switch (kind) {
      case ActivationKind::sigmoid:
        out[i] = t >= 0.0 ? 1.0 / (1.0 + std::exp(-t)) : std::exp(t) / (1.0 + std::exp(t));
        break;
      case ActivationKind::leaky_relu: out[i] = t >= 0.0 ? t : kLeakySlope * t; break;
      case ActivationKind::relu: out[i] = t >= 0.0 ? t : 0.0; break;
    }
  }
  static constexpr const char* names[] = {"sigmoid", "leaky_relu", "relu"};
  return make_result(names[static_cast<int>(kind)], x.shape(), std::move(out), {x}, [kind](Node& self) {
    double* g = grad_target(self, 0);
    const auto& X = self.inputs[0]->data;
    for (std::size_t i = 0; i < X.size(); ++i) {
      double d = 0.0;
      switch (kind) {
        case ActivationKind::sigmoid: d = self.data[i] * (1.0 - self.data[i]); break;
        case ActivationKind::leaky_relu: d = X[i] >= 0.0 ? 1.0 : kLeakySlope; break;
        case ActivationKind::relu: d = X[i] >= 0.0 ? 1.0 : 0.0; break;
      }
      g[i] += d * self.grad[i];
    }
  });
}

Value gather_rows(const Value& x, const IndexTable& table) {
  require_rank(x, 2, "gather_rows");
  const std::size_t n = x.dim(0), d = x.dim(1);
  if (table.shadow != n) {
    throw IndexError("gather_rows: table shadow index " + std::to_string(table.shadow) + " but x has " +
                     std::to_string(n) + " rows");
  }
  if (table.indices.size() != table.rows * table.cols) throw DimensionError("gather_rows: malformed index table");
  for (std::size_t idx : table.indices) {
    if (idx > n) throw IndexError("gather_rows: index " + std::to_string(idx) + " > " + std::to_string(n));
  }
  std::vector<double> out(table.rows * table.cols * d, 0.0);
  const double* X = x.data().data();
  for (std::size_t slot = 0; slot < table.indices.size(); ++slot) {
    const std::size_t idx = table.indices[slot];
    if (idx == n) continue;
    std::copy_n(X + idx * d, d, out.data() + slot * d);
  }
  return make_result("gather_rows", {table.rows, table.cols, d}, std::move(out), {x},
                     [indices = table.indices, n, d](Node& self) {
                       double* g = grad_target(self, 0);
                       const double* G = self.grad.data();
                       for (std::size_t slot = 0; slot < indices.size(); ++slot) {
                         const std::size_t idx = indices[slot];
                         if (idx == n) continue;
                         for (std::size_t c = 0; c < d; ++c) g[idx * d + c] += G[slot * d + c];
                       }
                     });
}

Value gather_rows(const Value& x, std::span<const std::size_t> indices) {
  IndexTable table{indices.size(), 1, x.dim(0), std::vector<std::size_t>(indices.begin(), indices.end())};
  return reshape(gather_rows(x, table), {indices.size(), x.dim(1)});
}

Value neighborhood_max(const Value& x, const IndexTable& table) {
  require_rank(x, 2, "neighborhood_max");
  const std::size_t n = x.dim(0), d = x.dim(1);
  if (table.shadow != n) throw IndexError("neighborhood_max: shadow index does not match row count");
  const double* X = x.data().data();
  std::vector<double> out(table.rows * d, 0.0);
  // n marks "no contributor" (empty neighbourhood).
  std::vector<std::size_t> source(table.rows * d, n);
  for (std::size_t r = 0; r < table.rows; ++r) {
    for (std::size_t c = 0; c < table.cols; ++c) {
      const std::size_t idx = table.at(r, c);
      if (idx > n) throw IndexError("neighborhood_max: index out of range");
      if (idx == n) continue;
      for (std::size_t f = 0; f < d; ++f) {
        const double v = X[idx * d + f];
        std::size_t& src = source[r * d + f];
        if (src == n || v > out[r * d + f]) {
          out[r * d + f] = v;
          src = idx;
        }
      }
    }
  }
  return make_result("neighborhood_max", {table.rows, d}, std::move(out), {x},
                     [source = std::move(source), n, d](Node& self) {
                       double* g = grad_target(self, 0);
                       for (std::size_t i = 0; i < source.size(); ++i) {
                         if (source[i] == n) continue;
                         g[source[i] * d + i % d] += self.grad[i];
                       }
                     });
}

Value concat(const std::vector<Value>& values, std::size_t axis) {
  if (values.empty()) throw DimensionError("concat: no inputs");
  const Shape& first = values.front().shape();
  if (axis >= first.size()) throw DimensionError("concat: axis out of range for " + shape_string(first));
  std::size_t total_axis = 0;
  for (const auto& v : values) {
    const Shape& s = v.shape();
    bool ok = s.size() == first.size();
    for (std::size_t i = 0; ok && i < s.size(); ++i) ok = i == axis || s[i] == first[i];
    if (!ok) {
      throw DimensionError("concat: " + shape_string(s) + " incompatible with " + shape_string(first) +
                           " along axis " + std::to_string(axis));
    }
    total_axis += s[axis];
  }
  std::size_t outer = 1, inner = 1;
  for (std::size_t i = 0; i < axis; ++i) outer *= first[i];
  for (std::size_t i = axis + 1; i < first.size(); ++i) inner *= first[i];
  Shape out_shape = first;
  out_shape[axis] = total_axis;

  std::vector<std::size_t> widths;
  for (const auto& v : values) widths.push_back(v.dim(axis) * inner);
  const std::size_t row = total_axis * inner;
  std::vector<double> out(outer * row);
  std::size_t offset = 0;
  for (std::size_t k = 0; k < values.size(); ++k) {
    const double* src = values[k].data().data();
    for (std::size_t o = 0; o < outer; ++o) std::copy_n(src + o * widths[k], widths[k], out.data() + o * row + offset);
    offset += widths[k];
  }
  return make_result("concat", std::move(out_shape), std::move(out), values, [widths, outer, row](Node& self) {
    std::size_t offset = 0;
    for (std::size_t k = 0; k < widths.size(); ++k) {
      if (double* g = grad_target(self, k)) {
        for (std::size_t o = 0; o < outer; ++o)
          for (std::size_t c = 0; c < widths[k]; ++c) g[o * widths[k] + c] += self.grad[o * row + offset + c];
      }
      offset += widths[k];
    }
  });
}

Value reshape(const Value& x, Shape shape) {
  if (numel(shape) != x.numel()) {
    throw DimensionError("reshape: " + shape_string(x.shape()) + " -> " + shape_string(shape));
  }
  std::vector<double> out(x.data().begin(), x.data().end());
  return make_result("reshape", std::move(shape), std::move(out), {x}, [](Node& self) {
    double* g = grad_target(self, 0);
    for (std::size_t i = 0; i < self.grad.size(); ++i) g[i] += self.grad[i];
  });
}

Value swap_leading_axes(const Value& x) {
  if (x.rank() < 2) throw DimensionError("swap_leading_axes: rank < 2");
  const std::size_t a = x.dim(0), b = x.dim(1), inner = x.numel() / std::max<std::size_t>(1, a * b);
  Shape shape = x.shape();
  std::swap(shape[0], shape[1]);
  std::vector<double> out(x.numel());
  const double* X = x.data().data();
  for (std::size_t i = 0; i < a; ++i)
    for (std::size_t j = 0; j < b; ++j) std::copy_n(X + (i * b + j) * inner, inner, out.data() + (j * a + i) * inner);
  return make_result("swap_leading_axes", std::move(shape), std::move(out), {x}, [a, b, inner](Node& self) {
    double* g = grad_target(self, 0);
    for (std::size_t i = 0; i < a; ++i)
      for (std::size_t j = 0; j < b; ++j)
        for (std::size_t c = 0; c < inner; ++c) g[(i * b + j) * inner + c] += self.grad[(j * a + i) * inner + c];
  });
}

Value softmax_cross_entropy(const Value& logits, std::span<const int> labels, std::span<const double> class_weights,
                            std::optional<int> ignore_index) {
  require_rank(logits, 2, "softmax_cross_entropy");
  const std::size_t n = logits.dim(0), c = logits.dim(1);
  if (labels.size() != n) {
    throw DimensionError("softmax_cross_entropy: " + std::to_string(labels.size()) + " labels for " +
                         std::to_string(n) + " rows");
  }
  if (!class_weights.empty() && class_weights.size() != c) {
    throw DimensionError("softmax_cross_entropy: class weight count does not match class count");
  }
  const double* L = logits.data().data();
  std::vector<double> probs(n * c, 0.0);
  std::vector<double> row_weight(n, 0.0);
  double total_weight = 0.0, loss = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const int y = labels[i];
    if (ignore_index && y == *ignore_index) continue;
    if (y < 0 || static_cast<std::size_t>(y) >= c) {
      throw LabelError("softmax_cross_entropy: label " + std::to_string(y) + " outside [0," + std::to_string(c) + ")");
    }
    const double* row = L + i * c;
    const double mx = *std::max_element(row, row + c);
    double z = 0.0;
    for (std::size_t k = 0; k < c; ++k) {
      probs[i * c + k] = std::exp(row[k] - mx);
      z += probs[i * c + k];
    }
    for (std::size_t k = 0; k < c; ++k) probs[i * c + k] /= z;
    const double w = class_weights.empty() ? 1.0 : class_weights[static_cast<std::size_t>(y)];
    row_weight[i] = w;
    total_weight += w;
    loss += w * (std::log(z) - (row[y] - mx));
  }
  const double norm = total_weight > 0.0 ? 1.0 / total_weight : 0.0;
  std::vector<int> y(labels.begin(), labels.end());
  return make_result("softmax_cross_entropy", {}, {loss * norm}, {logits},
                     [probs = std::move(probs), row_weight = std::move(row_weight), y = std::move(y), norm, n,
                      c](Node& self) {
                       double* g = grad_target(self, 0);
                       const double gv = self.grad[0] * norm;
                       for (std::size_t i = 0; i < n; ++i) {
                         if (row_weight[i] == 0.0) continue;
                         const double s = gv * row_weight[i];
                         for (std::size_t k = 0; k < c; ++k) {
                           g[i * c + k] += s * (probs[i * c + k] - (static_cast<int>(k) == y[i] ? 1.0 : 0.0));
                         }
                       }
                     });
}

Value batch_norm(const Value& x, const Value& gamma, const Value& beta, BatchNormBuffers buffers, bool training,
                 double eps, double momentum) {
  require_rank(x, 2, "batch_norm");
  const std::size_t n = x.dim(0), d = x.dim(1);
  if (gamma.numel() != d || beta.numel() != d || buffers.running_mean.size() != d || buffers.running_var.size() != d) {
    throw DimensionError("batch_norm: parameter width does not match " + shape_string(x.shape()));
  }
  const double* X = x.data().data();
  std::vector<double> mean(d, 0.0), inv_std(d, 0.0);
  if (training && n > 0) {
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t f = 0; f < d; ++f) mean[f] += X[i * d + f];
    for (double& m : mean) m /= static_cast<double>(n);
    std::vector<double> var(d, 0.0);
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t f = 0; f < d; ++f) {
        const double c = X[i * d + f] - mean[f];
        var[f] += c * c;
      }
    for (std::size_t f = 0; f < d; ++f) {
      var[f] /= static_cast<double>(n);
      inv_std[f] = 1.0 / std::sqrt(var[f] + eps);
      buffers.running_mean[f] = momentum * buffers.running_mean[f] + (1.0 - momentum) * mean[f];
      buffers.running_var[f] = momentum * buffers.running_var[f] + (1.0 - momentum) * var[f];
    }
  } else {
    for (std::size_t f = 0; f < d; ++f) {
      mean[f] = buffers.running_mean[f];
      inv_std[f] = 1.0 / std::sqrt(buffers.running_var[f] + eps);
    }
  }
  const double* G = gamma.data().data();
  const double* B = beta.data().data();
  std::vector<double> xhat(n * d), out(n * d);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t f = 0; f < d; ++f) {
      xhat[i * d + f] = (X[i * d + f] - mean[f]) * inv_std[f];
      out[i * d + f] = G[f] * xhat[i * d + f] + B[f];
    }
  return make_result(training ? "batch_norm_train" : "batch_norm_frozen", {n, d}, std::move(out), {x, gamma, beta},
                     [xhat = std::move(xhat), inv_std = std::move(inv_std), training, n, d](Node& self) {
                       const double* dy = self.grad.data();
                       const double* gam = self.inputs[1]->data.data();
                       if (double* gg = grad_target(self, 1)) {
                         for (std::size_t i = 0; i < n; ++i)
                           for (std::size_t f = 0; f < d; ++f) gg[f] += dy[i * d + f] * xhat[i * d + f];
                       }
                       if (double* gb = grad_target(self, 2)) {
                         for (std::size_t i = 0; i < n; ++i)
                           for (std::size_t f = 0; f < d; ++f) gb[f] += dy[i * d + f];
                       }
                       double* gx = grad_target(self, 0);
                       if (!gx) return;
                       if (!training) {
                         for (std::size_t i = 0; i < n; ++i)
                           for (std::size_t f = 0; f < d; ++f) gx[i * d + f] += dy[i * d + f] * gam[f] * inv_std[f];
                         return;
                       }
                       std::vector<double> sum_dxhat(d, 0.0), sum_dxhat_xhat(d, 0.0);
                       for (std::size_t i = 0; i < n; ++i)
                         for (std::size_t f = 0; f < d; ++f) {
                           const double dxh = dy[i * d + f] * gam[f];
                           sum_dxhat[f] += dxh;
                           sum_dxhat_xhat[f] += dxh * xhat[i * d + f];
                         }
                       const double inv_n = 1.0 / static_cast<double>(n);
                       for (std::size_t i = 0; i < n; ++i)
                         for (std::size_t f = 0; f < d; ++f) {
                           const double dxh = dy[i * d + f] * gam[f];
                           gx[i * d + f] += inv_std[f] * inv_n *
                                            (static_cast<double>(n) * dxh - sum_dxhat[f] - xhat[i * d + f] * sum_dxhat_xhat[f]);
                         }
                     });
}

Value custom_op(std::string name, Shape shape, std::vector<double> data, std::vector<Value> inputs,
                std::function<void(Node&)> backward) {
  if (numel(shape) != data.size()) throw DimensionError("custom_op: data does not match shape");
  return make_result(std::move(name), std::move(shape), std::move(data), inputs, std::move(backward));
}

double grad_check(const std::function<Value()>& f, std::vector<Value> inputs, double eps) {
  for (auto& in : inputs) in.zero_grad();
  const Value out = f();
  if (!std::isfinite(out.item())) throw NumericError("grad_check: non-finite function value");
  out.backward();

  double worst = 0.0;
  for (auto& in : inputs) {
    if (!in.requires_grad()) continue;
    const std::vector<double> analytic = in.has_grad() ? std::vector<double>(in.grad().begin(), in.grad().end())
                                                       : std::vector<double>(in.numel(), 0.0);
    auto data = in.mutable_data();
    for (std::size_t i = 0; i < data.size(); ++i) {
      const double saved = data[i];
      data[i] = saved + eps;
      const double fp = f().item();
      data[i] = saved - eps;
      const double fm = f().item();
      data[i] = saved;
      if (!std::isfinite(fp) || !std::isfinite(fm)) throw NumericError("grad_check: non-finite perturbed value");
      const double numeric = (fp - fm) / (2.0 * eps);
      const double err = std::abs(analytic[i] - numeric) / std::max(1.0, std::abs(numeric));
      if (!std::isfinite(analytic[i])) throw NumericError("grad_check: non-finite analytic gradient");
      worst = std::max(worst, err);
    }
  }
  return worst;
}

}  // namespace pyrpoint::ad
