/*
 * Copyright 2026 the mrbc authors
 *
 * Licensed under the Apache License, Version 2.0 (the "License");
 * you may not use this file except in compliance with the License.
 * You may obtain a copy of the License at
 *
 *     http://www.apache.org/licenses/LICENSE-2.0
 *
 * Unless required by applicable law or agreed to in writing, software
 * distributed under the License is distributed on an "AS IS" BASIS,
 * WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
 * See the License for the specific language governing permissions and
 * limitations under the License.
 */
#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

#include "mrbc/tensor.hpp"

namespace mrbc {

class Graph;

/// Handle to a node of a Graph. Cheap to copy; valid as long as the graph is.
struct Var {
  Graph* graph = nullptr;
  std::uint32_t id = 0;

  const Tensor& value() const;
  const std::vector<std::size_t>& shape() const { return value().shape(); }
};

/// Reverse-mode differentiation tape.
///
/// Nodes are appended in evaluation order, so creation order is already a
/// topological order and backward() is a single reverse sweep. Values are
/// immutable once recorded. Gradients of leaves used more than once
/// accumulate.
class Graph {
 public:
  /// Backward rule: given the output gradient, push gradients to the inputs
  /// via accumulate_grad(). Closures capture whatever forward state they need.
  using BackwardFn = std::function<void(Graph&, const Tensor& out_grad)>;

  Var leaf(Tensor value, bool requires_grad, std::string name = {}) {
    return push(std::move(value), requires_grad, {}, nullptr, std::move(name));
  }

  /// Leaf whose grad-ness follows the tensor's own requires_grad flag.
  Var leaf(Tensor value, std::string name = {}) {
    const bool rg = value.requires_grad;
    return push(std::move(value), rg, {}, nullptr, std::move(name));
  }

  /// Records an op node. requires_grad is inherited from the inputs.
  Var op(Tensor out, std::vector<Var> inputs, BackwardFn backward) {
    bool rg = false;
    std::vector<std::uint32_t> ids;
    ids.reserve(inputs.size());
    for (const Var& v : inputs) {
      ids.push_back(v.id);
      rg = rg || nodes_[v.id].requires_grad;
    }
    return push(std::move(out), rg, std::move(ids), std::move(backward), {});
  }

  const Tensor& value(std::uint32_t id) const { return nodes_.at(id).value; }
  std::size_t node_count() const { return nodes_.size(); }
  bool requires_grad(Var v) const { return nodes_.at(v.id).requires_grad; }

  /// Reverse sweep from a scalar root. Gradients for every requires_grad
  /// leaf are available afterwards (zero for leaves the root does not reach).
  /// A root detached from all requires_grad leaves yields no gradients.
  void backward(Var root) {
    const Node& r = nodes_.at(root.id);
    if (!r.value.is_scalar())
      throw ContractError("backward: root must be scalar, got " + shape_string(r.value.shape()));
    grads_.assign(nodes_.size(), Tensor());
    grad_set_.assign(nodes_.size(), 0);
    if (!r.requires_grad) return;  // no differentiable leaf feeds the root

    grads_[root.id] = Tensor::scalar(1.0);
    grad_set_[root.id] = 1;
    for (std::uint32_t id = root.id + 1; id-- > 0;) {
      Node& n = nodes_[id];
      if (!grad_set_[id] || !n.backward) continue;
      n.backward(*this, grads_[id]);
    }
    // Unreached leaves still get a (zero) gradient of matching shape.
    for (std::uint32_t id = 0; id < nodes_.size(); ++id) {
      Node& n = nodes_[id];
      if (n.requires_grad && n.inputs.empty() && !n.backward && !grad_set_[id]) {
        grads_[id] = Tensor(n.value.shape());
        grad_set_[id] = 1;
      }
    }
  }

  bool has_grad(Var v) const { return v.id < grad_set_.size() && grad_set_[v.id]; }

  const Tensor& grad(Var v) const {
    if (!has_grad(v))
      throw ContractError("grad: no gradient recorded for node " + std::to_string(v.id));
    return grads_[v.id];
  }

  /// Called by backward rules. Drops gradients for inputs that do not need
  /// them; accumulates (never overwrites) otherwise.
  void accumulate_grad(std::uint32_t id, const Tensor& g) {
    Node& n = nodes_.at(id);
    if (!n.requires_grad) return;
    if (!n.value.same_shape(g)) throw_shape_mismatch("accumulate_grad", n.value.shape(), g.shape());
    if (grad_set_[id]) {
      Tensor& acc = grads_[id];
      for (std::size_t i = 0; i < acc.size(); ++i) acc[i] += g[i];
    } else {
      grads_[id] = g;
      grad_set_[id] = 1;
    }
  }

  /// Gradients of all named requires_grad leaves. Empty when backward found
  /// no differentiable path (or was never run).
  std::unordered_map<std::string, Tensor> gradient_map() const {
    std::unordered_map<std::string, Tensor> out;
    for (std::uint32_t id = 0; id < nodes_.size(); ++id) {
      const Node& n = nodes_[id];
      if (n.requires_grad && !n.name.empty() && id < grad_set_.size() && grad_set_[id])
        out.emplace(n.name, grads_[id]);
    }
    return out;
  }

 private:
  struct Node {
    Tensor value;
    bool requires_grad = false;
    std::vector<std::uint32_t> inputs;
    BackwardFn backward;
    std::string name;
  };

  Var push(Tensor value, bool requires_grad, std::vector<std::uint32_t> inputs,
           BackwardFn backward, std::string name) {
    nodes_.push_back(Node{std::move(value), requires_grad, std::move(inputs), std::move(backward),
                          std::move(name)});
    return Var{this, static_cast<std::uint32_t>(nodes_.size() - 1)};
  }

  std::vector<Node> nodes_;
  std::vector<Tensor> grads_;
  std::vector<std::uint8_t> grad_set_;
};

inline const Tensor& Var::value() const { return graph->value(id); }

// ---------------------------------------------------------------------------
// Core differentiable ops.
// ---------------------------------------------------------------------------

inline Var g_add(Var a, Var b) {
  Graph& g = *a.graph;
  Tensor out = add(a.value(), b.value());
  return g.op(std::move(out), {a, b}, [ia = a.id, ib = b.id](Graph& gg, const Tensor& go) {
    gg.accumulate_grad(ia, go);
    gg.accumulate_grad(ib, go);
  });
}

inline Var g_sub(Var a, Var b) {
  Graph& g = *a.graph;
  Tensor out = sub(a.value(), b.value());
  return g.op(std::move(out), {a, b}, [ia = a.id, ib = b.id](Graph& gg, const Tensor& go) {
    gg.accumulate_grad(ia, go);
    gg.accumulate_grad(ib, scale(go, -1.0));
  });
}

inline Var g_mul(Var a, Var b) {
  Graph& g = *a.graph;
  Tensor out = mul(a.value(), b.value());
  return g.op(std::move(out), {a, b}, [ia = a.id, ib = b.id](Graph& gg, const Tensor& go) {
    gg.accumulate_grad(ia, mul(go, gg.value(ib)));
    gg.accumulate_grad(ib, mul(go, gg.value(ia)));
  });
}

inline Var g_scale(Var a, double s) {
  Graph& g = *a.graph;
  return g.op(scale(a.value(), s), {a}, [ia = a.id, s](Graph& gg, const Tensor& go) {
    gg.accumulate_grad(ia, scale(go, s));
  });
}

inline Var g_sum(Var a) {
  Graph& g = *a.graph;
  return g.op(Tensor::scalar(sum(a.value())), {a}, [ia = a.id](Graph& gg, const Tensor& go) {
    gg.accumulate_grad(ia, Tensor(gg.value(ia).shape(), go[0]));
  });
}

inline Var g_reshape(Var a, std::vector<std::size_t> shape) {
  Graph& g = *a.graph;
  Tensor out = a.value().reshaped(shape);
  return g.op(std::move(out), {a}, [ia = a.id](Graph& gg, const Tensor& go) {
    gg.accumulate_grad(ia, go.reshaped(gg.value(ia).shape()));
  });
}

inline Var g_matmul(Var a, Var b) {
  Graph& g = *a.graph;
  Tensor out = matmul(a.value(), b.value());
  return g.op(std::move(out), {a, b}, [ia = a.id, ib = b.id](Graph& gg, const Tensor& go) {
    const Tensor& av = gg.value(ia);
    const Tensor& bv = gg.value(ib);
    // grad_a = g * b^T ; grad_b = a^T * g
    Tensor ga(av.shape());
    detail::gemm_bt(go.data(), bv.data(), ga.data(), av.extent(0), go.extent(1), av.extent(1));
    gg.accumulate_grad(ia, ga);
    Tensor gb(bv.shape());
    detail::gemm_at(av.data(), go.data(), gb.data(), bv.extent(0), av.extent(0), bv.extent(1));
    gg.accumulate_grad(ib, gb);
  });
}

/// Stacks equal-length rank-1 vars into a [rows x dim] matrix.
inline Var g_stack_rows(Graph& g, const std::vector<Var>& rows) {
  if (rows.empty()) throw ContractError("stack_rows: no rows");
  const std::size_t dim = rows[0].value().size();
  Tensor out({rows.size(), dim});
  std::vector<Var> inputs;
  std::vector<std::uint32_t> ids;
  for (std::size_t r = 0; r < rows.size(); ++r) {
    const Tensor& v = rows[r].value();
    if (v.size() != dim) throw_shape_mismatch("stack_rows", rows[0].shape(), v.shape());
    for (std::size_t i = 0; i < dim; ++i) out[r * dim + i] = v[i];
    inputs.push_back(rows[r]);
    ids.push_back(rows[r].id);
  }
  return g.op(std::move(out), inputs, [ids, dim](Graph& gg, const Tensor& go) {
    for (std::size_t r = 0; r < ids.size(); ++r) {
      Tensor gr(gg.value(ids[r]).shape());
      for (std::size_t i = 0; i < dim; ++i) gr[i] = go[r * dim + i];
      gg.accumulate_grad(ids[r], gr);
    }
  });
}

}  // namespace mrbc
