#pragma once

#include <cstddef>
#include <functional>
#include <memory>
#include <string>
#include <utility>
#include <vector>

#include "pbmrc/rng.hpp"
#include "pbmrc/tensor.hpp"

namespace pbmrc {

// One vertex of a reverse-mode tape. Values are tensors; gradients are
// allocated lazily on the first accumulation. The graph is a DAG built
// child -> parents; backward() runs a reverse topological sweep.
struct Node {
  Tensor value;
  Tensor grad;  // empty until first use
  bool requires_grad = false;
  std::vector<std::shared_ptr<Node>> parents;
  std::function<void(Node&)> backprop;  // accumulates into parents' grads
  std::string name;

  Tensor& ensure_grad();
};

using NodePtr = std::shared_ptr<Node>;

// Leaf carrying learnable values; shares the tensor buffer (no copy).
NodePtr leaf(const Tensor& value, std::string name = {});
// Leaf excluded from differentiation (inputs, masks).
NodePtr constant(const Tensor& value, std::string name = {});

NodePtr matmul(const NodePtr& a, const NodePtr& b);
NodePtr matmul_nt(const NodePtr& a, const NodePtr& b);  // a * b^T
NodePtr add(const NodePtr& a, const NodePtr& b);
NodePtr mul(const NodePtr& a, const NodePtr& b);
NodePtr scale(const NodePtr& a, double c);
// Adds row vector v [1xq] to every row of a [pxq].
NodePtr add_row(const NodePtr& a, const NodePtr& v);
// Adds a non-differentiated tensor (e.g. an additive attention mask).
NodePtr add_const(const NodePtr& a, const Tensor& c);
NodePtr softmax_rows(const NodePtr& x);
NodePtr layer_norm(const NodePtr& x, const NodePtr& gain, const NodePtr& bias, double eps);
// tanh-approximation gelu: 0.5*x*(1+tanh(sqrt(2/pi)*(x+0.044715*x^3)))
NodePtr gelu(const NodePtr& x);
// Inverted dropout; identity when !training or p == 0.
NodePtr dropout(const NodePtr& x, double p, Rng& rng, bool training);
// Gathers rows of table [Vxd] by id; backward scatter-adds.
NodePtr embedding_rows(const NodePtr& table, const std::vector<int>& ids);
// Replaces rows [start_row, start_row+repl.rows) of base with repl.
NodePtr row_substitute(const NodePtr& base, const NodePtr& repl, std::size_t start_row);
// Row k of the result is [E[pairs[k].first] ; E[pairs[k].second]]  ->  [Px2d]
NodePtr pair_concat(const NodePtr& e, const std::vector<std::pair<int, int>>& pairs);
NodePtr slice_cols(const NodePtr& a, std::size_t lo, std::size_t hi);
NodePtr slice_rows(const NodePtr& a, std::size_t lo, std::size_t hi);
NodePtr concat_cols(const std::vector<NodePtr>& parts);
NodePtr concat_rows(const std::vector<NodePtr>& parts);
NodePtr reshape(const NodePtr& a, std::size_t rows, std::size_t cols);
NodePtr sum(const NodePtr& a);   // -> [1x1]
NodePtr mean(const NodePtr& a);  // -> [1x1]
// Mean binary cross-entropy with logits over positions where mask != 0.
// Numerically stable; zero mask count yields loss 0.
NodePtr bce_with_logits(const NodePtr& logits, const Tensor& targets, const Tensor& mask);

// Reverse sweep from a scalar-shaped [1x1] root. Gradients accumulate
// additively across fan-out; deterministic for a fixed graph.
void backward(const NodePtr& root);

double sigmoid(double x);

}  // namespace pbmrc
