// Copyright 2026 The cifnar Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <map>
#include <string>
#include <vector>

#include "cifnar/array.hpp"

namespace cifnar {

// Define-by-run reverse-mode autodiff over Array values. Creating a node
// computes its forward value immediately, so data-dependent graph structure
// (the CIF firing scan) can branch on values while recording. evaluate()
// re-runs the recorded graph with rebound leaves; the structure stays frozen,
// which is exactly the subgradient semantics the losses rely on.

enum class Op : uint8_t {
  kInput,
  kParam,
  kConst,
  kAdd,
  kSub,
  kMul,
  kScale,       // x * c, c compile-time constant
  kScalarMul,   // parents: scalar {1}, tensor
  kRecip,
  kAddBias,     // parents: matrix {r,c}, bias {c}; bias added to every row
  kMatmul,
  kTranspose,
  kSliceRows,   // ints: {r0, r1}, rows [r0, r1)
  kSliceCols,   // ints: {c0, c1}
  kGatherRows,  // ints: row indices
  kConcatRows,  // N parents, rank-2, equal column counts
  kReshape,     // ints: new shape
  kSoftmax,     // rowwise over last dim, rank 1 or 2
  kLogSoftmax,
  kSigmoid,
  kRelu,
  kGelu,        // tanh approximation
  kAbs,         // subgradient 0 at 0
  kLayerNorm,   // parents: x, gamma {d}, beta {d}; scalar attr = eps
  kDepthwiseConv,  // parents: x {U,d}, kernel {K,d}, K odd, zero-padded same
  kSumAll,
  kMeanAll,
  kCrossEntropy,  // parent: logits {L,V}; ints: target class per row; mean over rows
  kCtcLoss,       // parent: logits {U,V+1}, blank = 0; ints: target token ids
};

class Tape;

struct Var {
  int id = -1;
  Tape* tape = nullptr;
  bool valid() const { return id >= 0; }
};

namespace detail {

inline double log_add(double a, double b) {
  if (a == -std::numeric_limits<double>::infinity()) return b;
  if (b == -std::numeric_limits<double>::infinity()) return a;
  double m = std::max(a, b);
  return m + std::log1p(std::exp(std::min(a, b) - m));
}

constexpr double kGeluC0 = 0.7978845608028654;  // sqrt(2/pi)
constexpr double kGeluC1 = 0.044715;

inline double gelu(double x) {
  double u = kGeluC0 * (x + kGeluC1 * x * x * x);
  return 0.5 * x * (1.0 + std::tanh(u));
}

inline double gelu_grad(double x) {
  double u = kGeluC0 * (x + kGeluC1 * x * x * x);
  double t = std::tanh(u);
  double du = kGeluC0 * (1.0 + 3.0 * kGeluC1 * x * x);
  return 0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * du;
}

// C = A(m,k) * B(k,n), accumulated into pre-sized output. The k loop is
// blocked by four so each pass over the output row does four fused updates
// instead of one.
inline void matmul_into(const Array& a, const Array& b, Array& out) {
  int m = a.extent(0), k = a.extent(1), n = b.extent(1);
  const double* ad = a.data().data();
  const double* bd = b.data().data();
  double* od = out.data().data();
  for (int i = 0; i < m; ++i) {
    double* orow = od + static_cast<size_t>(i) * n;
    const double* arow = ad + static_cast<size_t>(i) * k;
    int p = 0;
    for (; p + 4 <= k; p += 4) {
      double a0 = arow[p], a1 = arow[p + 1], a2 = arow[p + 2], a3 = arow[p + 3];
      const double* b0 = bd + static_cast<size_t>(p) * n;
      const double* b1 = b0 + n;
      const double* b2 = b1 + n;
      const double* b3 = b2 + n;
      for (int j = 0; j < n; ++j) {
        orow[j] += a0 * b0[j] + a1 * b1[j] + a2 * b2[j] + a3 * b3[j];
      }
    }
    for (; p < k; ++p) {
      double av = arow[p];
      const double* brow = bd + static_cast<size_t>(p) * n;
      for (int j = 0; j < n; ++j) orow[j] += av * brow[j];
    }
  }
}

}  // namespace detail

struct Node {
  Op op;
  std::vector<int> parents;
  Array value;
  double scalar = 0.0;     // kScale factor, kLayerNorm eps
  std::vector<int> ints;   // op-specific integer payload
  std::string name;        // kInput / kParam only
};

class Tape {
 public:
  // ---- leaves ----

  Var input(const std::string& name, Array v) { return leaf(Op::kInput, name, std::move(v)); }

  Var param(const std::string& name, Array v) { return leaf(Op::kParam, name, std::move(v)); }

  Var constant(Array v) {
    Node n;
    n.op = Op::kConst;
    n.value = std::move(v);
    return push(std::move(n));
  }

  Var constant(double v) { return constant(Array::scalar(v)); }

  // ---- ops ----

  Var add(Var a, Var b) { return binary(Op::kAdd, a, b); }
  Var sub(Var a, Var b) { return binary(Op::kSub, a, b); }
  Var mul(Var a, Var b) { return binary(Op::kMul, a, b); }

  Var scale(Var a, double c) {
    Node n = unary_node(Op::kScale, a);
    n.scalar = c;
    return push(std::move(n));
  }

  Var scalar_mul(Var s, Var x) {
    if (value(s).numel() != 1) throw ShapeError("scalar_mul: first operand must be a scalar");
    Node n;
    n.op = Op::kScalarMul;
    n.parents = {s.id, x.id};
    return push(std::move(n));
  }

  Var recip(Var a) { return push(unary_node(Op::kRecip, a)); }

  Var add_bias(Var m, Var bias) {
    Node n;
    n.op = Op::kAddBias;
    n.parents = {m.id, bias.id};
    return push(std::move(n));
  }

  Var matmul(Var a, Var b) { return binary(Op::kMatmul, a, b); }
  Var transpose(Var a) { return push(unary_node(Op::kTranspose, a)); }

  Var slice_rows(Var a, int r0, int r1) {
    Node n = unary_node(Op::kSliceRows, a);
    n.ints = {r0, r1};
    return push(std::move(n));
  }

  Var slice_cols(Var a, int c0, int c1) {
    Node n = unary_node(Op::kSliceCols, a);
    n.ints = {c0, c1};
    return push(std::move(n));
  }

  Var gather_rows(Var a, std::vector<int> indices) {
    Node n = unary_node(Op::kGatherRows, a);
    n.ints = std::move(indices);
    return push(std::move(n));
  }

  Var concat_rows(const std::vector<Var>& parts) {
    if (parts.empty()) throw ShapeError("concat_rows: no inputs");
    Node n;
    n.op = Op::kConcatRows;
    for (Var p : parts) n.parents.push_back(p.id);
    return push(std::move(n));
  }

  Var reshape(Var a, std::vector<int> shape) {
    Node n = unary_node(Op::kReshape, a);
    n.ints = std::move(shape);
    return push(std::move(n));
  }

  Var softmax(Var a) { return push(unary_node(Op::kSoftmax, a)); }
  Var log_softmax(Var a) { return push(unary_node(Op::kLogSoftmax, a)); }
  Var sigmoid(Var a) { return push(unary_node(Op::kSigmoid, a)); }
  Var relu(Var a) { return push(unary_node(Op::kRelu, a)); }
  Var gelu(Var a) { return push(unary_node(Op::kGelu, a)); }
  Var abs(Var a) { return push(unary_node(Op::kAbs, a)); }

  Var layer_norm(Var x, Var gamma, Var beta, double eps = 1e-5) {
    Node n;
    n.op = Op::kLayerNorm;
    n.parents = {x.id, gamma.id, beta.id};
    n.scalar = eps;
    return push(std::move(n));
  }

  Var depthwise_conv1d(Var x, Var kernel) {
    Node n;
    n.op = Op::kDepthwiseConv;
    n.parents = {x.id, kernel.id};
    return push(std::move(n));
  }

  Var sum_all(Var a) { return push(unary_node(Op::kSumAll, a)); }
  Var mean_all(Var a) { return push(unary_node(Op::kMeanAll, a)); }

  // Mean over rows of -log_softmax(logits)[i, target[i]]. Targets are class
  // indices in [0, V).
  Var cross_entropy(Var logits, std::vector<int> targets) {
    Node n = unary_node(Op::kCrossEntropy, logits);
    n.ints = std::move(targets);
    return push(std::move(n));
  }

  // -log P(target | logits) marginalized over blank-augmented paths.
  // Precondition: the target is reachable in the given number of frames
  // (checked by ctc::loss); an unreachable target makes this +inf and trips
  // the finite check.
  Var ctc_loss(Var logits, std::vector<int> targets) {
    Node n = unary_node(Op::kCtcLoss, logits);
    n.ints = std::move(targets);
    return push(std::move(n));
  }

  // ---- named outputs ----

  void mark_output(const std::string& name, Var v) {
    check_var(v);
    outputs_.emplace_back(name, v.id);
  }

  // ---- execution ----

  // Rebinds the named leaves present in `bindings` (shapes must match) and
  // re-runs the whole recorded graph. Returns the marked outputs.
  std::map<std::string, Array> evaluate(const std::map<std::string, Array>& bindings) {
    for (const auto& [name, arr] : bindings) {
      auto it = leaves_.find(name);
      if (it == leaves_.end()) throw std::runtime_error("evaluate: unbound input '" + name + "'");
      Node& leaf_node = nodes_[it->second];
      if (leaf_node.value.shape() != arr.shape()) {
        throw ShapeError("evaluate: shape mismatch for '" + name + "': expected " +
                         leaf_node.value.shape_string() + ", got " + arr.shape_string());
      }
      leaf_node.value = arr;
    }
    forward();
    std::map<std::string, Array> out;
    for (const auto& [name, id] : outputs_) out[name] = nodes_[id].value;
    return out;
  }

  // Recomputes every non-leaf node in recorded order.
  void forward() {
    for (auto& n : nodes_) {
      if (n.op == Op::kInput || n.op == Op::kParam || n.op == Op::kConst) continue;
      n.value = compute(n);
      if (check_finite_ && !n.value.all_finite()) {
        throw NonFiniteError("non-finite value in " + op_name(n.op) + " node");
      }
    }
  }

  // Reverse sweep from a scalar output. Returns gradients for every named
  // leaf (inputs and parameters); leaves the output does not depend on get
  // zero gradients. Deterministic: fixed iteration order, no reordering.
  std::map<std::string, Array> backward(Var out) {
    check_var(out);
    if (nodes_[out.id].value.numel() != 1) {
      throw std::runtime_error("backward: output must be scalar-valued");
    }
    grads_.assign(nodes_.size(), Array());
    grads_[out.id] = Array::full(nodes_[out.id].value.shape(), 1.0);
    for (int id = out.id; id >= 0; --id) {
      if (grads_[id].empty()) continue;
      propagate(id);
      if (check_finite_ && !grads_[id].all_finite()) {
        throw NonFiniteError("non-finite gradient at " + op_name(nodes_[id].op) + " node");
      }
    }
    std::map<std::string, Array> out_grads;
    for (const auto& [name, id] : leaves_) {
      out_grads[name] =
          grads_[id].empty() ? Array::zeros(nodes_[id].value.shape()) : grads_[id];
    }
    return out_grads;
  }

  // Max over all leaf elements of |analytic - central difference| relative
  // error at the given eps. Graph structure stays frozen across the
  // perturbed re-evaluations.
  double grad_check(Var out, double eps) {
    if (!(eps > 0.0 && eps <= 1e-3)) throw std::runtime_error("grad_check: eps must be in (0, 1e-3]");
    check_var(out);
    auto analytic = backward(out);
    double max_rel = 0.0;
    for (const auto& [name, id] : leaves_) {
      Node& leaf_node = nodes_[id];
      Array saved = leaf_node.value;
      Array work = saved.clone();
      leaf_node.value = work;
      const Array& grad = analytic.at(name);
      for (size_t i = 0; i < work.numel(); ++i) {
        double orig = work.data()[i];
        work.data()[i] = orig + eps;
        forward();
        double fp = nodes_[out.id].value.at(0);
        work.data()[i] = orig - eps;
        forward();
        double fm = nodes_[out.id].value.at(0);
        work.data()[i] = orig;
        if (!std::isfinite(fp) || !std::isfinite(fm)) {
          throw NonFiniteError("grad_check: non-finite perturbed output");
        }
        double fd = (fp - fm) / (2.0 * eps);
        double rel = std::fabs(grad.data()[i] - fd) / std::max(1e-8, std::fabs(fd));
        max_rel = std::max(max_rel, rel);
      }
      leaf_node.value = saved;
    }
    forward();
    return max_rel;
  }

  // ---- introspection ----

  const Array& value(Var v) const {
    check_var(v);
    return nodes_[v.id].value;
  }

  size_t size() const { return nodes_.size(); }

  void set_check_finite(bool on) { check_finite_ = on; }

  const std::map<std::string, int>& leaves() const { return leaves_; }

 private:
  Var leaf(Op op, const std::string& name, Array v) {
    auto it = leaves_.find(name);
    if (it != leaves_.end()) {
      // Idempotent by name so a parameter used twice accumulates into one
      // gradient slot.
      if (nodes_[it->second].value.shape() != v.shape()) {
        throw ShapeError("leaf '" + name + "' rebound with different shape");
      }
      return Var{it->second, this};
    }
    Node n;
    n.op = op;
    n.name = name;
    n.value = std::move(v);
    Var var = push(std::move(n));
    leaves_[name] = var.id;
    return var;
  }

  Node unary_node(Op op, Var a) {
    check_var(a);
    Node n;
    n.op = op;
    n.parents = {a.id};
    return n;
  }

  Var binary(Op op, Var a, Var b) {
    check_var(a);
    check_var(b);
    Node n;
    n.op = op;
    n.parents = {a.id, b.id};
    return push(std::move(n));
  }

  Var push(Node n) {
    for (int p : n.parents) {
      if (p < 0 || p >= static_cast<int>(nodes_.size())) {
        throw std::runtime_error("tape: parent id out of range");
      }
    }
    if (n.op != Op::kInput && n.op != Op::kParam && n.op != Op::kConst) {
      n.value = compute(n);
    }
    if (check_finite_ && !n.value.all_finite()) {
      throw NonFiniteError("non-finite value in " + op_name(n.op) + " node");
    }
    nodes_.push_back(std::move(n));
    return Var{static_cast<int>(nodes_.size()) - 1, this};
  }

  void check_var(Var v) const {
    if (v.tape != this || v.id < 0 || v.id >= static_cast<int>(nodes_.size())) {
      throw std::runtime_error("tape: Var does not belong to this tape");
    }
  }

  const Array& pval(const Node& n, int i) const { return nodes_[n.parents[i]].value; }

  static std::string op_name(Op op) {
    switch (op) {
      case Op::kInput: return "input";
      case Op::kParam: return "param";
      case Op::kConst: return "const";
      case Op::kAdd: return "add";
      case Op::kSub: return "sub";
      case Op::kMul: return "mul";
      case Op::kScale: return "scale";
      case Op::kScalarMul: return "scalar_mul";
      case Op::kRecip: return "recip";
      case Op::kAddBias: return "add_bias";
      case Op::kMatmul: return "matmul";
      case Op::kTranspose: return "transpose";
      case Op::kSliceRows: return "slice_rows";
      case Op::kSliceCols: return "slice_cols";
      case Op::kGatherRows: return "gather_rows";
      case Op::kConcatRows: return "concat_rows";
      case Op::kReshape: return "reshape";
      case Op::kSoftmax: return "softmax";
      case Op::kLogSoftmax: return "log_softmax";
      case Op::kSigmoid: return "sigmoid";
      case Op::kRelu: return "relu";
      case Op::kGelu: return "gelu";
      case Op::kAbs: return "abs";
      case Op::kLayerNorm: return "layer_norm";
      case Op::kDepthwiseConv: return "depthwise_conv1d";
      case Op::kSumAll: return "sum_all";
      case Op::kMeanAll: return "mean_all";
      case Op::kCrossEntropy: return "cross_entropy";
      case Op::kCtcLoss: return "ctc_loss";
    }
    return "?";
  }

  // ---------------------------------------------------------------------
  // Forward rules. Pure in the parent values, so the graph can be re-run.
  // ---------------------------------------------------------------------

  Array compute(const Node& n) const {
    switch (n.op) {
      case Op::kAdd:
      case Op::kSub:
      case Op::kMul: {
        const Array& a = pval(n, 0);
        const Array& b = pval(n, 1);
        if (!a.same_shape(b)) {
          throw ShapeError(op_name(n.op) + ": shape mismatch " + a.shape_string() + " vs " +
                           b.shape_string());
        }
        Array out(a.shape());
        const auto& ad = a.data();
        const auto& bd = b.data();
        auto& od = out.data();
        if (n.op == Op::kAdd) {
          for (size_t i = 0; i < od.size(); ++i) od[i] = ad[i] + bd[i];
        } else if (n.op == Op::kSub) {
          for (size_t i = 0; i < od.size(); ++i) od[i] = ad[i] - bd[i];
        } else {
          for (size_t i = 0; i < od.size(); ++i) od[i] = ad[i] * bd[i];
        }
        return out;
      }
      case Op::kScale: {
        const Array& a = pval(n, 0);
        Array out(a.shape());
        for (size_t i = 0; i < a.numel(); ++i) out.data()[i] = a.data()[i] * n.scalar;
        return out;
      }
      case Op::kScalarMul: {
        double s = pval(n, 0).at(0);
        const Array& x = pval(n, 1);
        Array out(x.shape());
        for (size_t i = 0; i < x.numel(); ++i) out.data()[i] = s * x.data()[i];
        return out;
      }
      case Op::kRecip: {
        const Array& a = pval(n, 0);
        Array out(a.shape());
        for (size_t i = 0; i < a.numel(); ++i) out.data()[i] = 1.0 / a.data()[i];
        return out;
      }
      case Op::kAddBias: {
        const Array& m = pval(n, 0);
        const Array& b = pval(n, 1);
        if (m.rank() != 2 || b.rank() != 1 || b.extent(0) != m.extent(1)) {
          throw ShapeError("add_bias: need matrix + row bias, got " + m.shape_string() + " and " +
                           b.shape_string());
        }
        Array out(m.shape());
        int r = m.extent(0), c = m.extent(1);
        for (int i = 0; i < r; ++i) {
          for (int j = 0; j < c; ++j) out.at(i, j) = m.at(i, j) + b.at(j);
        }
        return out;
      }
      case Op::kMatmul: {
        const Array& a = pval(n, 0);
        const Array& b = pval(n, 1);
        if (a.rank() != 2 || b.rank() != 2 || a.extent(1) != b.extent(0)) {
          throw ShapeError("matmul: incompatible shapes " + a.shape_string() + " x " +
                           b.shape_string());
        }
        Array out = Array::zeros({a.extent(0), b.extent(1)});
        detail::matmul_into(a, b, out);
        return out;
      }
      case Op::kTranspose: {
        const Array& a = pval(n, 0);
        if (a.rank() != 2) throw ShapeError("transpose: rank-2 only");
        Array out({a.extent(1), a.extent(0)});
        for (int i = 0; i < a.extent(0); ++i) {
          for (int j = 0; j < a.extent(1); ++j) out.at(j, i) = a.at(i, j);
        }
        return out;
      }
      case Op::kSliceRows: {
        const Array& a = pval(n, 0);
        int r0 = n.ints[0], r1 = n.ints[1];
        int rows = a.extent(0);
        if (r0 < 0 || r1 > rows || r0 >= r1) throw ShapeError("slice_rows: bad range");
        if (a.rank() == 1) {
          Array out({r1 - r0});
          for (int i = r0; i < r1; ++i) out.at(i - r0) = a.at(i);
          return out;
        }
        if (a.rank() != 2) throw ShapeError("slice_rows: rank 1 or 2 only");
        int c = a.extent(1);
        Array out({r1 - r0, c});
        for (int i = r0; i < r1; ++i) {
          for (int j = 0; j < c; ++j) out.at(i - r0, j) = a.at(i, j);
        }
        return out;
      }
      case Op::kSliceCols: {
        const Array& a = pval(n, 0);
        if (a.rank() != 2) throw ShapeError("slice_cols: rank-2 only");
        int c0 = n.ints[0], c1 = n.ints[1];
        if (c0 < 0 || c1 > a.extent(1) || c0 >= c1) throw ShapeError("slice_cols: bad range");
        Array out({a.extent(0), c1 - c0});
        for (int i = 0; i < a.extent(0); ++i) {
          for (int j = c0; j < c1; ++j) out.at(i, j - c0) = a.at(i, j);
        }
        return out;
      }
      case Op::kGatherRows: {
        const Array& a = pval(n, 0);
        int rows = a.extent(0);
        for (int idx : n.ints) {
          if (idx < 0 || idx >= rows) throw ShapeError("gather_rows: index out of range");
        }
        int m = static_cast<int>(n.ints.size());
        if (a.rank() == 1) {
          Array out({m});
          for (int i = 0; i < m; ++i) out.at(i) = a.at(n.ints[i]);
          return out;
        }
        if (a.rank() != 2) throw ShapeError("gather_rows: rank 1 or 2 only");
        int c = a.extent(1);
        Array out({m, c});
        for (int i = 0; i < m; ++i) {
          for (int j = 0; j < c; ++j) out.at(i, j) = a.at(n.ints[i], j);
        }
        return out;
      }
      case Op::kConcatRows: {
        int cols = -1, rows = 0;
        for (int p : n.parents) {
          const Array& a = nodes_[p].value;
          if (a.rank() != 2) throw ShapeError("concat_rows: rank-2 parts only");
          if (cols < 0) cols = a.extent(1);
          if (a.extent(1) != cols) throw ShapeError("concat_rows: column mismatch");
          rows += a.extent(0);
        }
        Array out({rows, cols});
        int r = 0;
        for (int p : n.parents) {
          const Array& a = nodes_[p].value;
          for (int i = 0; i < a.extent(0); ++i, ++r) {
            for (int j = 0; j < cols; ++j) out.at(r, j) = a.at(i, j);
          }
        }
        return out;
      }
      case Op::kReshape: {
        const Array& a = pval(n, 0);
        Array out(n.ints, a.data());
        return out;
      }
      case Op::kSoftmax:
      case Op::kLogSoftmax: {
        const Array& a = pval(n, 0);
        if (a.rank() > 2) throw ShapeError("softmax: rank 1 or 2 only");
        int rows = a.rank() == 2 ? a.extent(0) : 1;
        int cols = a.rank() == 2 ? a.extent(1) : a.extent(0);
        Array out(a.shape());
        for (int i = 0; i < rows; ++i) {
          const double* src = a.data().data() + static_cast<size_t>(i) * cols;
          double* dst = out.data().data() + static_cast<size_t>(i) * cols;
          double mx = src[0];
          for (int j = 1; j < cols; ++j) mx = std::max(mx, src[j]);
          double z = 0.0;
          for (int j = 0; j < cols; ++j) z += std::exp(src[j] - mx);
          double lz = std::log(z) + mx;
          if (n.op == Op::kSoftmax) {
            for (int j = 0; j < cols; ++j) dst[j] = std::exp(src[j] - lz);
          } else {
            for (int j = 0; j < cols; ++j) dst[j] = src[j] - lz;
          }
        }
        return out;
      }
      case Op::kSigmoid: {
        const Array& a = pval(n, 0);
        Array out(a.shape());
        for (size_t i = 0; i < a.numel(); ++i) {
          double x = a.data()[i];
          out.data()[i] = x >= 0 ? 1.0 / (1.0 + std::exp(-x))
                                 : std::exp(x) / (1.0 + std::exp(x));
        }
        return out;
      }
      case Op::kRelu: {
        const Array& a = pval(n, 0);
        Array out(a.shape());
        for (size_t i = 0; i < a.numel(); ++i) out.data()[i] = std::max(0.0, a.data()[i]);
        return out;
      }
      case Op::kGelu: {
        const Array& a = pval(n, 0);
        Array out(a.shape());
        for (size_t i = 0; i < a.numel(); ++i) out.data()[i] = detail::gelu(a.data()[i]);
        return out;
      }
      case Op::kAbs: {
        const Array& a = pval(n, 0);
        Array out(a.shape());
        for (size_t i = 0; i < a.numel(); ++i) out.data()[i] = std::fabs(a.data()[i]);
        return out;
      }
      case Op::kLayerNorm: {
        const Array& x = pval(n, 0);
        const Array& gamma = pval(n, 1);
        const Array& beta = pval(n, 2);
        int rows = x.rank() == 2 ? x.extent(0) : 1;
        int d = x.rank() == 2 ? x.extent(1) : x.extent(0);
        if (gamma.rank() != 1 || gamma.extent(0) != d || beta.rank() != 1 || beta.extent(0) != d) {
          throw ShapeError("layer_norm: gamma/beta must match last dim");
        }
        Array out(x.shape());
        for (int i = 0; i < rows; ++i) {
          const double* src = x.data().data() + static_cast<size_t>(i) * d;
          double* dst = out.data().data() + static_cast<size_t>(i) * d;
          double mean = 0.0;
          for (int j = 0; j < d; ++j) mean += src[j];
          mean /= d;
          double var = 0.0;
          for (int j = 0; j < d; ++j) var += (src[j] - mean) * (src[j] - mean);
          var /= d;
          double inv = 1.0 / std::sqrt(var + n.scalar);
          for (int j = 0; j < d; ++j) {
            dst[j] = gamma.at(j) * (src[j] - mean) * inv + beta.at(j);
          }
        }
        return out;
      }
      case Op::kDepthwiseConv: {
        const Array& x = pval(n, 0);
        const Array& k = pval(n, 1);
        if (x.rank() != 2 || k.rank() != 2 || k.extent(1) != x.extent(1)) {
          throw ShapeError("depthwise_conv1d: need {U,d} input and {K,d} kernel");
        }
        int kk = k.extent(0);
        if (kk % 2 == 0) throw ShapeError("depthwise_conv1d: kernel size must be odd");
        int pad = (kk - 1) / 2;
        int u_len = x.extent(0), d = x.extent(1);
        Array out = Array::zeros({u_len, d});
        for (int u = 0; u < u_len; ++u) {
          for (int j = 0; j < kk; ++j) {
            int src = u + j - pad;
            if (src < 0 || src >= u_len) continue;
            for (int c = 0; c < d; ++c) out.at(u, c) += x.at(src, c) * k.at(j, c);
          }
        }
        return out;
      }
      case Op::kSumAll:
      case Op::kMeanAll: {
        const Array& a = pval(n, 0);
        double s = 0.0;
        for (double v : a.data()) s += v;
        if (n.op == Op::kMeanAll) s /= static_cast<double>(a.numel());
        return Array::scalar(s);
      }
      case Op::kCrossEntropy: {
        const Array& logits = pval(n, 0);
        if (logits.rank() != 2) throw ShapeError("cross_entropy: logits must be rank 2");
        int rows = logits.extent(0), cols = logits.extent(1);
        if (static_cast<int>(n.ints.size()) != rows) {
          throw ShapeError("cross_entropy: one target per row required");
        }
        double total = 0.0;
        for (int i = 0; i < rows; ++i) {
          int t = n.ints[i];
          if (t < 0 || t >= cols) throw ShapeError("cross_entropy: target index out of range");
          const double* src = logits.data().data() + static_cast<size_t>(i) * cols;
          double mx = src[0];
          for (int j = 1; j < cols; ++j) mx = std::max(mx, src[j]);
          double z = 0.0;
          for (int j = 0; j < cols; ++j) z += std::exp(src[j] - mx);
          total += std::log(z) + mx - src[t];
        }
        return Array::scalar(total / rows);
      }
      case Op::kCtcLoss: {
        const Array& logits = pval(n, 0);
        double neg_log_p;
        ctc_forward(logits, n.ints, &neg_log_p, nullptr);
        return Array::scalar(neg_log_p);
      }
      default:
        throw std::runtime_error("compute called on leaf node");
    }
  }

  // ---------------------------------------------------------------------
  // Backward rules.
  // ---------------------------------------------------------------------

  Array& grad_slot(int id) {
    if (grads_[id].empty()) grads_[id] = Array::zeros(nodes_[id].value.shape());
    return grads_[id];
  }

  void propagate(int id) {
    const Node& n = nodes_[id];
    const Array& g = grads_[id];
    switch (n.op) {
      case Op::kInput:
      case Op::kParam:
      case Op::kConst:
        return;
      case Op::kAdd: {
        axpy(grad_slot(n.parents[0]), g, 1.0);
        axpy(grad_slot(n.parents[1]), g, 1.0);
        return;
      }
      case Op::kSub: {
        axpy(grad_slot(n.parents[0]), g, 1.0);
        axpy(grad_slot(n.parents[1]), g, -1.0);
        return;
      }
      case Op::kMul: {
        const Array& a = pval(n, 0);
        const Array& b = pval(n, 1);
        Array& ga = grad_slot(n.parents[0]);
        Array& gb = grad_slot(n.parents[1]);
        for (size_t i = 0; i < g.numel(); ++i) {
          ga.data()[i] += g.data()[i] * b.data()[i];
          gb.data()[i] += g.data()[i] * a.data()[i];
        }
        return;
      }
      case Op::kScale: {
        axpy(grad_slot(n.parents[0]), g, n.scalar);
        return;
      }
      case Op::kScalarMul: {
        double s = pval(n, 0).at(0);
        const Array& x = pval(n, 1);
        Array& gs = grad_slot(n.parents[0]);
        Array& gx = grad_slot(n.parents[1]);
        double dot = 0.0;
        for (size_t i = 0; i < g.numel(); ++i) {
          dot += g.data()[i] * x.data()[i];
          gx.data()[i] += s * g.data()[i];
        }
        gs.at(0) += dot;
        return;
      }
      case Op::kRecip: {
        const Array& y = n.value;
        Array& gx = grad_slot(n.parents[0]);
        for (size_t i = 0; i < g.numel(); ++i) {
          gx.data()[i] -= g.data()[i] * y.data()[i] * y.data()[i];
        }
        return;
      }
      case Op::kAddBias: {
        Array& gm = grad_slot(n.parents[0]);
        Array& gb = grad_slot(n.parents[1]);
        int r = n.value.extent(0), c = n.value.extent(1);
        for (int i = 0; i < r; ++i) {
          for (int j = 0; j < c; ++j) {
            gm.at(i, j) += g.at(i, j);
            gb.at(j) += g.at(i, j);
          }
        }
        return;
      }
      case Op::kMatmul: {
        const Array& a = pval(n, 0);
        const Array& b = pval(n, 1);
        Array& ga = grad_slot(n.parents[0]);
        Array& gb = grad_slot(n.parents[1]);
        int m = a.extent(0), k = a.extent(1), c = b.extent(1);
        const double* ad = a.data().data();
        const double* bd = b.data().data();
        const double* gd = g.data().data();
        double* gad = ga.data().data();
        double* gbd = gb.data().data();
        // ga[i,p] += sum_j g[i,j] * b[p,j]: four dot products share one pass
        // over the upstream row
        for (int i = 0; i < m; ++i) {
          const double* grow = gd + static_cast<size_t>(i) * c;
          double* garow = gad + static_cast<size_t>(i) * k;
          int p = 0;
          for (; p + 4 <= k; p += 4) {
            const double* b0 = bd + static_cast<size_t>(p) * c;
            const double* b1 = b0 + c;
            const double* b2 = b1 + c;
            const double* b3 = b2 + c;
            double d0 = 0.0, d1 = 0.0, d2 = 0.0, d3 = 0.0;
            for (int j = 0; j < c; ++j) {
              double gv = grow[j];
              d0 += gv * b0[j];
              d1 += gv * b1[j];
              d2 += gv * b2[j];
              d3 += gv * b3[j];
            }
            garow[p] += d0;
            garow[p + 1] += d1;
            garow[p + 2] += d2;
            garow[p + 3] += d3;
          }
          for (; p < k; ++p) {
            const double* brow = bd + static_cast<size_t>(p) * c;
            double dot = 0.0;
            for (int j = 0; j < c; ++j) dot += grow[j] * brow[j];
            garow[p] += dot;
          }
        }
        // gb[p,j] += sum_i a[i,p] * g[i,j]: four upstream rows per pass over
        // each gb row
        {
          int i = 0;
          for (; i + 4 <= m; i += 4) {
            const double* a0 = ad + static_cast<size_t>(i) * k;
            const double* a1 = a0 + k;
            const double* a2 = a1 + k;
            const double* a3 = a2 + k;
            const double* g0 = gd + static_cast<size_t>(i) * c;
            const double* g1 = g0 + c;
            const double* g2 = g1 + c;
            const double* g3 = g2 + c;
            for (int p = 0; p < k; ++p) {
              double v0 = a0[p], v1 = a1[p], v2 = a2[p], v3 = a3[p];
              double* gbrow = gbd + static_cast<size_t>(p) * c;
              for (int j = 0; j < c; ++j) {
                gbrow[j] += v0 * g0[j] + v1 * g1[j] + v2 * g2[j] + v3 * g3[j];
              }
            }
          }
          for (; i < m; ++i) {
            const double* arow = ad + static_cast<size_t>(i) * k;
            const double* grow = gd + static_cast<size_t>(i) * c;
            for (int p = 0; p < k; ++p) {
              double av = arow[p];
              if (av == 0.0) continue;
              double* gbrow = gbd + static_cast<size_t>(p) * c;
              for (int j = 0; j < c; ++j) gbrow[j] += av * grow[j];
            }
          }
        }
        return;
      }
      case Op::kTranspose: {
        Array& ga = grad_slot(n.parents[0]);
        for (int i = 0; i < n.value.extent(0); ++i) {
          for (int j = 0; j < n.value.extent(1); ++j) ga.at(j, i) += g.at(i, j);
        }
        return;
      }
      case Op::kSliceRows: {
        Array& ga = grad_slot(n.parents[0]);
        int r0 = n.ints[0], r1 = n.ints[1];
        if (ga.rank() == 1) {
          for (int i = r0; i < r1; ++i) ga.at(i) += g.at(i - r0);
        } else {
          int c = ga.extent(1);
          for (int i = r0; i < r1; ++i) {
            for (int j = 0; j < c; ++j) ga.at(i, j) += g.at(i - r0, j);
          }
        }
        return;
      }
      case Op::kSliceCols: {
        Array& ga = grad_slot(n.parents[0]);
        int c0 = n.ints[0], c1 = n.ints[1];
        for (int i = 0; i < ga.extent(0); ++i) {
          for (int j = c0; j < c1; ++j) ga.at(i, j) += g.at(i, j - c0);
        }
        return;
      }
      case Op::kGatherRows: {
        Array& ga = grad_slot(n.parents[0]);
        int m = static_cast<int>(n.ints.size());
        if (ga.rank() == 1) {
          for (int i = 0; i < m; ++i) ga.at(n.ints[i]) += g.at(i);
        } else {
          int c = ga.extent(1);
          for (int i = 0; i < m; ++i) {
            for (int j = 0; j < c; ++j) ga.at(n.ints[i], j) += g.at(i, j);
          }
        }
        return;
      }
      case Op::kConcatRows: {
        int r = 0;
        int cols = n.value.extent(1);
        for (int p : n.parents) {
          Array& gp = grad_slot(p);
          for (int i = 0; i < gp.extent(0); ++i, ++r) {
            for (int j = 0; j < cols; ++j) gp.at(i, j) += g.at(r, j);
          }
        }
        return;
      }
      case Op::kReshape: {
        Array& ga = grad_slot(n.parents[0]);
        for (size_t i = 0; i < g.numel(); ++i) ga.data()[i] += g.data()[i];
        return;
      }
      case Op::kSoftmax: {
        const Array& y = n.value;
        Array& gx = grad_slot(n.parents[0]);
        int rows = y.rank() == 2 ? y.extent(0) : 1;
        int cols = y.rank() == 2 ? y.extent(1) : y.extent(0);
        for (int i = 0; i < rows; ++i) {
          size_t off = static_cast<size_t>(i) * cols;
          double dot = 0.0;
          for (int j = 0; j < cols; ++j) dot += g.data()[off + j] * y.data()[off + j];
          for (int j = 0; j < cols; ++j) {
            gx.data()[off + j] += y.data()[off + j] * (g.data()[off + j] - dot);
          }
        }
        return;
      }
      case Op::kLogSoftmax: {
        const Array& y = n.value;  // log-probs
        Array& gx = grad_slot(n.parents[0]);
        int rows = y.rank() == 2 ? y.extent(0) : 1;
        int cols = y.rank() == 2 ? y.extent(1) : y.extent(0);
        for (int i = 0; i < rows; ++i) {
          size_t off = static_cast<size_t>(i) * cols;
          double gsum = 0.0;
          for (int j = 0; j < cols; ++j) gsum += g.data()[off + j];
          for (int j = 0; j < cols; ++j) {
            gx.data()[off + j] += g.data()[off + j] - std::exp(y.data()[off + j]) * gsum;
          }
        }
        return;
      }
      case Op::kSigmoid: {
        const Array& y = n.value;
        Array& gx = grad_slot(n.parents[0]);
        for (size_t i = 0; i < g.numel(); ++i) {
          gx.data()[i] += g.data()[i] * y.data()[i] * (1.0 - y.data()[i]);
        }
        return;
      }
      case Op::kRelu: {
        const Array& x = pval(n, 0);
        Array& gx = grad_slot(n.parents[0]);
        for (size_t i = 0; i < g.numel(); ++i) {
          if (x.data()[i] > 0.0) gx.data()[i] += g.data()[i];
        }
        return;
      }
      case Op::kGelu: {
        const Array& x = pval(n, 0);
        Array& gx = grad_slot(n.parents[0]);
        for (size_t i = 0; i < g.numel(); ++i) {
          gx.data()[i] += g.data()[i] * detail::gelu_grad(x.data()[i]);
        }
        return;
      }
      case Op::kAbs: {
        const Array& x = pval(n, 0);
        Array& gx = grad_slot(n.parents[0]);
        for (size_t i = 0; i < g.numel(); ++i) {
          double s = x.data()[i] > 0.0 ? 1.0 : (x.data()[i] < 0.0 ? -1.0 : 0.0);
          gx.data()[i] += g.data()[i] * s;
        }
        return;
      }
      case Op::kLayerNorm: {
        const Array& x = pval(n, 0);
        const Array& gamma = pval(n, 1);
        Array& gx = grad_slot(n.parents[0]);
        Array& gg = grad_slot(n.parents[1]);
        Array& gb = grad_slot(n.parents[2]);
        int rows = x.rank() == 2 ? x.extent(0) : 1;
        int d = x.rank() == 2 ? x.extent(1) : x.extent(0);
        std::vector<double> xhat(d);
        for (int i = 0; i < rows; ++i) {
          size_t off = static_cast<size_t>(i) * d;
          double mean = 0.0;
          for (int j = 0; j < d; ++j) mean += x.data()[off + j];
          mean /= d;
          double var = 0.0;
          for (int j = 0; j < d; ++j) {
            double c = x.data()[off + j] - mean;
            var += c * c;
          }
          var /= d;
          double inv = 1.0 / std::sqrt(var + n.scalar);
          double m1 = 0.0, m2 = 0.0;
          for (int j = 0; j < d; ++j) {
            xhat[j] = (x.data()[off + j] - mean) * inv;
            double gp = gamma.at(j) * g.data()[off + j];
            m1 += gp;
            m2 += gp * xhat[j];
          }
          m1 /= d;
          m2 /= d;
          for (int j = 0; j < d; ++j) {
            double gp = gamma.at(j) * g.data()[off + j];
            gx.data()[off + j] += (gp - m1 - xhat[j] * m2) * inv;
            gg.at(j) += g.data()[off + j] * xhat[j];
            gb.at(j) += g.data()[off + j];
          }
        }
        return;
      }
      case Op::kDepthwiseConv: {
        const Array& x = pval(n, 0);
        const Array& k = pval(n, 1);
        Array& gx = grad_slot(n.parents[0]);
        Array& gk = grad_slot(n.parents[1]);
        int u_len = x.extent(0), d = x.extent(1);
        int kk = k.extent(0), pad = (kk - 1) / 2;
        for (int u = 0; u < u_len; ++u) {
          for (int j = 0; j < kk; ++j) {
            int src = u + j - pad;
            if (src < 0 || src >= u_len) continue;
            for (int c = 0; c < d; ++c) {
              gx.at(src, c) += g.at(u, c) * k.at(j, c);
              gk.at(j, c) += g.at(u, c) * x.at(src, c);
            }
          }
        }
        return;
      }
      case Op::kSumAll: {
        axpy_fill(grad_slot(n.parents[0]), g.at(0));
        return;
      }
      case Op::kMeanAll: {
        axpy_fill(grad_slot(n.parents[0]),
                  g.at(0) / static_cast<double>(pval(n, 0).numel()));
        return;
      }
      case Op::kCrossEntropy: {
        const Array& logits = pval(n, 0);
        Array& gx = grad_slot(n.parents[0]);
        int rows = logits.extent(0), cols = logits.extent(1);
        double up = g.at(0) / rows;
        for (int i = 0; i < rows; ++i) {
          const double* src = logits.data().data() + static_cast<size_t>(i) * cols;
          double mx = src[0];
          for (int j = 1; j < cols; ++j) mx = std::max(mx, src[j]);
          double z = 0.0;
          for (int j = 0; j < cols; ++j) z += std::exp(src[j] - mx);
          for (int j = 0; j < cols; ++j) {
            double p = std::exp(src[j] - mx) / z;
            gx.at(i, j) += up * (p - (j == n.ints[i] ? 1.0 : 0.0));
          }
        }
        return;
      }
      case Op::kCtcLoss: {
        const Array& logits = pval(n, 0);
        Array grad_logits(logits.shape());
        double neg_log_p;
        ctc_forward(logits, n.ints, &neg_log_p, &grad_logits);
        Array& gx = grad_slot(n.parents[0]);
        double up = g.at(0);
        for (size_t i = 0; i < gx.numel(); ++i) gx.data()[i] += up * grad_logits.data()[i];
        return;
      }
    }
  }

  static void axpy(Array& dst, const Array& src, double a) {
    for (size_t i = 0; i < dst.numel(); ++i) dst.data()[i] += a * src.data()[i];
  }

  static void axpy_fill(Array& dst, double v) {
    for (size_t i = 0; i < dst.numel(); ++i) dst.data()[i] += v;
  }

  // Log-space forward(-backward) over the blank-augmented label lattice.
  // Writes -log P(target) to *nll; when grad != nullptr also writes
  // d nll / d logits using the state-occupancy posteriors.
  static void ctc_forward(const Array& logits, const std::vector<int>& target, double* nll,
                          Array* grad) {
    constexpr double kNegInf = -std::numeric_limits<double>::infinity();
    int u_len = logits.extent(0);
    int classes = logits.extent(1);
    int l_len = static_cast<int>(target.size());
    int s_len = 2 * l_len + 1;
    auto ext = [&](int s) { return s % 2 == 0 ? 0 : target[s / 2]; };
    for (int t : target) {
      if (t < 1 || t >= classes) throw ShapeError("ctc_loss: target id out of vocabulary range");
    }

    // Per-frame log-softmax.
    std::vector<double> logp(static_cast<size_t>(u_len) * classes);
    for (int u = 0; u < u_len; ++u) {
      const double* src = logits.data().data() + static_cast<size_t>(u) * classes;
      double mx = src[0];
      for (int j = 1; j < classes; ++j) mx = std::max(mx, src[j]);
      double z = 0.0;
      for (int j = 0; j < classes; ++j) z += std::exp(src[j] - mx);
      double lz = std::log(z) + mx;
      for (int j = 0; j < classes; ++j) logp[static_cast<size_t>(u) * classes + j] = src[j] - lz;
    }
    auto lp = [&](int u, int k) { return logp[static_cast<size_t>(u) * classes + k]; };

    std::vector<double> alpha(static_cast<size_t>(u_len) * s_len, kNegInf);
    auto a = [&](int u, int s) -> double& { return alpha[static_cast<size_t>(u) * s_len + s]; };
    a(0, 0) = lp(0, 0);
    if (s_len > 1) a(0, 1) = lp(0, ext(1));
    for (int u = 1; u < u_len; ++u) {
      for (int s = 0; s < s_len; ++s) {
        double best = a(u - 1, s);
        if (s >= 1) best = detail::log_add(best, a(u - 1, s - 1));
        if (s >= 2 && ext(s) != 0 && ext(s) != ext(s - 2)) {
          best = detail::log_add(best, a(u - 1, s - 2));
        }
        a(u, s) = best == kNegInf ? kNegInf : best + lp(u, ext(s));
      }
    }
    double log_p = a(u_len - 1, s_len - 1);
    if (s_len > 1) log_p = detail::log_add(log_p, a(u_len - 1, s_len - 2));
    *nll = -log_p;
    if (!grad) return;

    // beta excludes the emission at the current frame, so alpha+beta-logP is
    // the per-(frame,state) occupancy posterior.
    std::vector<double> beta(static_cast<size_t>(u_len) * s_len, kNegInf);
    auto b = [&](int u, int s) -> double& { return beta[static_cast<size_t>(u) * s_len + s]; };
    b(u_len - 1, s_len - 1) = 0.0;
    if (s_len > 1) b(u_len - 1, s_len - 2) = 0.0;
    for (int u = u_len - 2; u >= 0; --u) {
      for (int s = 0; s < s_len; ++s) {
        double best = b(u + 1, s) + lp(u + 1, ext(s));
        if (s + 1 < s_len) {
          best = detail::log_add(best, b(u + 1, s + 1) + lp(u + 1, ext(s + 1)));
        }
        if (s + 2 < s_len && ext(s + 2) != 0 && ext(s + 2) != ext(s)) {
          best = detail::log_add(best, b(u + 1, s + 2) + lp(u + 1, ext(s + 2)));
        }
        b(u, s) = best;
      }
    }
    for (int u = 0; u < u_len; ++u) {
      std::vector<double> occ(classes, kNegInf);
      for (int s = 0; s < s_len; ++s) {
        double q = a(u, s) + b(u, s) - log_p;
        occ[ext(s)] = detail::log_add(occ[ext(s)], q);
      }
      for (int k = 0; k < classes; ++k) {
        double post = occ[k] == kNegInf ? 0.0 : std::exp(occ[k]);
        grad->at(u, k) = std::exp(lp(u, k)) - post;
      }
    }
  }

  std::vector<Node> nodes_;
  std::map<std::string, int> leaves_;
  std::vector<std::pair<std::string, int>> outputs_;
  std::vector<Array> grads_;
  bool check_finite_ = true;
};

// Operator sugar for elementwise arithmetic between tape values.
inline Var operator+(Var a, Var b) { return a.tape->add(a, b); }
inline Var operator-(Var a, Var b) { return a.tape->sub(a, b); }
inline Var operator*(Var a, Var b) { return a.tape->mul(a, b); }

}  // namespace cifnar
