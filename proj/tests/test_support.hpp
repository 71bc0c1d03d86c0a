#pragma once

#include <cmath>
#include <functional>
#include <vector>

#include "pbmrc/autodiff.hpp"
#include "pbmrc/rng.hpp"
#include "pbmrc/tensor.hpp"

namespace pbmrc::testing {

inline Tensor random_tensor(std::size_t rows, std::size_t cols, Rng& rng, double lo = -2.0,
                            double hi = 2.0) {
  Tensor t(rows, cols);
  for (std::size_t i = 0; i < t.size(); ++i) t.ptr()[i] = lo + (hi - lo) * rng.uniform();
  return t;
}

// Central finite differences (h = 1e-5) on every coordinate of every leaf.
// build() must construct a scalar loss graph from the current leaf tensors.
// Returns the max relative error (floored denominator) across all leaves.
inline double max_grad_error(std::vector<Tensor>& leaf_values,
                             const std::function<NodePtr(std::vector<NodePtr>&)>& build) {
  std::vector<NodePtr> leaves;
  for (auto& t : leaf_values) leaves.push_back(leaf(t));
  NodePtr root = build(leaves);
  backward(root);

  const double h = 1e-5;
  double worst = 0.0;
  for (std::size_t k = 0; k < leaf_values.size(); ++k) {
    Tensor& t = leaf_values[k];
    for (std::size_t i = 0; i < t.size(); ++i) {
      const double orig = t.ptr()[i];
      auto eval = [&]() {
        std::vector<NodePtr> fresh;
        for (auto& lt : leaf_values) fresh.push_back(constant(lt));
        // at least one leaf must require grad for ops to build; use constants
        // for value-only evaluation
        return build(fresh)->value.at(0, 0);
      };
      t.ptr()[i] = orig + h;
      const double lp = eval();
      t.ptr()[i] = orig - h;
      const double lm = eval();
      t.ptr()[i] = orig;
      const double fd = (lp - lm) / (2.0 * h);
      const double an = leaves[k]->grad.empty() ? 0.0 : leaves[k]->grad.ptr()[i];
      const double rel = std::abs(an - fd) / std::max({std::abs(an), std::abs(fd), 1e-3});
      worst = std::max(worst, rel);
    }
  }
  return worst;
}

}  // namespace pbmrc::testing
