#include "pbmrc/autodiff.hpp"

#include <cmath>
#include <stdexcept>
#include <unordered_set>

namespace pbmrc {

namespace {

constexpr double kGeluC = 0.7978845608028654;  // sqrt(2/pi)
constexpr double kGeluA = 0.044715;

void accum(Node& p, const Tensor& g) {
  if (!p.requires_grad) return;
  Tensor& dst = p.ensure_grad();
  if (!dst.same_shape(g)) throw std::invalid_argument("gradient shape mismatch");
  for (std::size_t i = 0; i < dst.size(); ++i) dst.ptr()[i] += g.ptr()[i];
}

NodePtr make(Tensor value, std::vector<NodePtr> parents, std::function<void(Node&)> backprop) {
  auto n = std::make_shared<Node>();
  n->value = std::move(value);
  n->parents = std::move(parents);
  for (const auto& p : n->parents) {
    if (p->requires_grad) {
      n->requires_grad = true;
      break;
    }
  }
  if (n->requires_grad) n->backprop = std::move(backprop);
  return n;
}

}  // namespace

Tensor& Node::ensure_grad() {
  if (grad.empty() && value.size() > 0) grad = Tensor(value.rows(), value.cols(), 0.0);
  return grad;
}

NodePtr leaf(const Tensor& value, std::string name) {
  auto n = std::make_shared<Node>();
  n->value = value;
  n->requires_grad = true;
  n->name = std::move(name);
  return n;
}

NodePtr constant(const Tensor& value, std::string name) {
  auto n = std::make_shared<Node>();
  n->value = value;
  n->name = std::move(name);
  return n;
}

NodePtr matmul(const NodePtr& a, const NodePtr& b) {
  return make(t_matmul(a->value, b->value), {a, b}, [](Node& self) {
    Node& a = *self.parents[0];
    Node& b = *self.parents[1];
    if (a.requires_grad) accum(a, t_matmul_nt(self.grad, b.value));
    if (b.requires_grad) accum(b, t_matmul_tn(a.value, self.grad));
  });
}

NodePtr matmul_nt(const NodePtr& a, const NodePtr& b) {
  return make(t_matmul_nt(a->value, b->value), {a, b}, [](Node& self) {
    Node& a = *self.parents[0];
    Node& b = *self.parents[1];
    if (a.requires_grad) accum(a, t_matmul(self.grad, b.value));
    if (b.requires_grad) accum(b, t_matmul_tn(self.grad, a.value));
  });
}

NodePtr add(const NodePtr& a, const NodePtr& b) {
  return make(t_add(a->value, b->value), {a, b}, [](Node& self) {
    accum(*self.parents[0], self.grad);
    accum(*self.parents[1], self.grad);
  });
}

NodePtr mul(const NodePtr& a, const NodePtr& b) {
  return make(t_mul(a->value, b->value), {a, b}, [](Node& self) {
    Node& a = *self.parents[0];
    Node& b = *self.parents[1];
    if (a.requires_grad) accum(a, t_mul(self.grad, b.value));
    if (b.requires_grad) accum(b, t_mul(self.grad, a.value));
  });
}

NodePtr scale(const NodePtr& a, double c) {
  return make(t_scale(a->value, c), {a},
              [c](Node& self) { accum(*self.parents[0], t_scale(self.grad, c)); });
}

NodePtr add_row(const NodePtr& a, const NodePtr& v) {
  const Tensor& av = a->value;
  const Tensor& vv = v->value;
  if (vv.rows() != 1 || vv.cols() != av.cols())
    throw std::invalid_argument("add_row: v must be [1 x cols(a)]");
  Tensor out(av.rows(), av.cols());
  for (std::size_t i = 0; i < av.rows(); ++i)
    for (std::size_t j = 0; j < av.cols(); ++j) out.at(i, j) = av.at(i, j) + vv.at(0, j);
  return make(std::move(out), {a, v}, [](Node& self) {
    Node& a = *self.parents[0];
    Node& v = *self.parents[1];
    if (a.requires_grad) accum(a, self.grad);
    if (v.requires_grad) {
      Tensor g(1, self.grad.cols(), 0.0);
      for (std::size_t i = 0; i < self.grad.rows(); ++i)
        for (std::size_t j = 0; j < self.grad.cols(); ++j) g.at(0, j) += self.grad.at(i, j);
      accum(v, g);
    }
  });
}

NodePtr add_const(const NodePtr& a, const Tensor& c) {
  return make(t_add(a->value, c), {a},
              [](Node& self) { accum(*self.parents[0], self.grad); });
}

NodePtr softmax_rows(const NodePtr& x) {
  const Tensor& xv = x->value;
  Tensor y(xv.rows(), xv.cols());
  for (std::size_t i = 0; i < xv.rows(); ++i) {
    double mx = xv.at(i, 0);
    for (std::size_t j = 1; j < xv.cols(); ++j) mx = std::max(mx, xv.at(i, j));
    double s = 0.0;
    for (std::size_t j = 0; j < xv.cols(); ++j) {
      double e = std::exp(xv.at(i, j) - mx);
      y.at(i, j) = e;
      s += e;
    }
    for (std::size_t j = 0; j < xv.cols(); ++j) y.at(i, j) /= s;
  }
  Tensor ycopy = y;
  return make(std::move(y), {x}, [ycopy](Node& self) {
    Node& x = *self.parents[0];
    Tensor g(ycopy.rows(), ycopy.cols());
    for (std::size_t i = 0; i < ycopy.rows(); ++i) {
      double dot = 0.0;
      for (std::size_t j = 0; j < ycopy.cols(); ++j) dot += self.grad.at(i, j) * ycopy.at(i, j);
      for (std::size_t j = 0; j < ycopy.cols(); ++j)
        g.at(i, j) = ycopy.at(i, j) * (self.grad.at(i, j) - dot);
    }
    accum(x, g);
  });
}

NodePtr layer_norm(const NodePtr& x, const NodePtr& gain, const NodePtr& bias, double eps) {
  const Tensor& xv = x->value;
  const std::size_t p = xv.rows(), d = xv.cols();
  if (gain->value.cols() != d || bias->value.cols() != d || gain->value.rows() != 1 ||
      bias->value.rows() != 1)
    throw std::invalid_argument("layer_norm: gain/bias must be [1 x d]");
  Tensor xhat(p, d);
  Tensor inv_std(p, 1);
  for (std::size_t i = 0; i < p; ++i) {
    double mu = 0.0;
    for (std::size_t j = 0; j < d; ++j) mu += xv.at(i, j);
    mu /= static_cast<double>(d);
    double var = 0.0;
    for (std::size_t j = 0; j < d; ++j) {
      double t = xv.at(i, j) - mu;
      var += t * t;
    }
    var /= static_cast<double>(d);
    double is = 1.0 / std::sqrt(var + eps);
    inv_std.at(i, 0) = is;
    for (std::size_t j = 0; j < d; ++j) xhat.at(i, j) = (xv.at(i, j) - mu) * is;
  }
  Tensor out(p, d);
  for (std::size_t i = 0; i < p; ++i)
    for (std::size_t j = 0; j < d; ++j)
      out.at(i, j) = xhat.at(i, j) * gain->value.at(0, j) + bias->value.at(0, j);
  return make(std::move(out), {x, gain, bias}, [xhat, inv_std](Node& self) {
    Node& x = *self.parents[0];
    Node& gain = *self.parents[1];
    Node& bias = *self.parents[2];
    const std::size_t p = xhat.rows(), d = xhat.cols();
    if (gain.requires_grad) {
      Tensor g(1, d, 0.0);
      for (std::size_t i = 0; i < p; ++i)
        for (std::size_t j = 0; j < d; ++j) g.at(0, j) += self.grad.at(i, j) * xhat.at(i, j);
      accum(gain, g);
    }
    if (bias.requires_grad) {
      Tensor g(1, d, 0.0);
      for (std::size_t i = 0; i < p; ++i)
        for (std::size_t j = 0; j < d; ++j) g.at(0, j) += self.grad.at(i, j);
      accum(bias, g);
    }
    if (x.requires_grad) {
      Tensor g(p, d);
      for (std::size_t i = 0; i < p; ++i) {
        double m1 = 0.0, m2 = 0.0;
        for (std::size_t j = 0; j < d; ++j) {
          double dxh = self.grad.at(i, j) * gain.value.at(0, j);
          m1 += dxh;
          m2 += dxh * xhat.at(i, j);
        }
        m1 /= static_cast<double>(d);
        m2 /= static_cast<double>(d);
        for (std::size_t j = 0; j < d; ++j) {
          double dxh = self.grad.at(i, j) * gain.value.at(0, j);
          g.at(i, j) = inv_std.at(i, 0) * (dxh - m1 - xhat.at(i, j) * m2);
        }
      }
      accum(x, g);
    }
  });
}

NodePtr gelu(const NodePtr& x) {
  const Tensor& xv = x->value;
  Tensor out(xv.rows(), xv.cols());
  for (std::size_t i = 0; i < xv.size(); ++i) {
    double v = xv.ptr()[i];
    double u = kGeluC * (v + kGeluA * v * v * v);
    out.ptr()[i] = 0.5 * v * (1.0 + std::tanh(u));
  }
  return make(std::move(out), {x}, [](Node& self) {
    Node& x = *self.parents[0];
    Tensor g(x.value.rows(), x.value.cols());
    for (std::size_t i = 0; i < x.value.size(); ++i) {
      double v = x.value.ptr()[i];
      double u = kGeluC * (v + kGeluA * v * v * v);
      double t = std::tanh(u);
      double du = kGeluC * (1.0 + 3.0 * kGeluA * v * v);
      double d = 0.5 * (1.0 + t) + 0.5 * v * (1.0 - t * t) * du;
      g.ptr()[i] = self.grad.ptr()[i] * d;
    }
    accum(x, g);
  });
}

NodePtr dropout(const NodePtr& x, double p, Rng& rng, bool training) {
  if (p < 0.0 || p >= 1.0) throw std::invalid_argument("dropout: p must be in [0, 1)");
  if (!training || p == 0.0) return x;
  const Tensor& xv = x->value;
  const double keep = 1.0 - p;
  Tensor mask(xv.rows(), xv.cols());
  for (std::size_t i = 0; i < xv.size(); ++i)
    mask.ptr()[i] = (rng.uniform() < p) ? 0.0 : 1.0 / keep;
  Tensor out = t_mul(xv, mask);
  return make(std::move(out), {x}, [mask](Node& self) {
    accum(*self.parents[0], t_mul(self.grad, mask));
  });
}

NodePtr embedding_rows(const NodePtr& table, const std::vector<int>& ids) {
  const Tensor& tv = table->value;
  Tensor out(ids.size(), tv.cols());
  for (std::size_t i = 0; i < ids.size(); ++i) {
    if (ids[i] < 0 || static_cast<std::size_t>(ids[i]) >= tv.rows())
      throw std::invalid_argument("embedding_rows: id out of range");
    for (std::size_t j = 0; j < tv.cols(); ++j) out.at(i, j) = tv.at(ids[i], j);
  }
  return make(std::move(out), {table}, [ids](Node& self) {
    Node& table = *self.parents[0];
    if (!table.requires_grad) return;
    Tensor& g = table.ensure_grad();
    for (std::size_t i = 0; i < ids.size(); ++i)
      for (std::size_t j = 0; j < g.cols(); ++j) g.at(ids[i], j) += self.grad.at(i, j);
  });
}

NodePtr row_substitute(const NodePtr& base, const NodePtr& repl, std::size_t start_row) {
  const Tensor& bv = base->value;
  const Tensor& rv = repl->value;
  if (rv.cols() != bv.cols() || start_row + rv.rows() > bv.rows())
    throw std::invalid_argument("row_substitute: replacement out of range");
  Tensor out = bv.clone();
  for (std::size_t i = 0; i < rv.rows(); ++i)
    for (std::size_t j = 0; j < rv.cols(); ++j) out.at(start_row + i, j) = rv.at(i, j);
  const std::size_t m = rv.rows();
  return make(std::move(out), {base, repl}, [start_row, m](Node& self) {
    Node& base = *self.parents[0];
    Node& repl = *self.parents[1];
    if (base.requires_grad) {
      Tensor g = self.grad.clone();
      for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = 0; j < g.cols(); ++j) g.at(start_row + i, j) = 0.0;
      accum(base, g);
    }
    if (repl.requires_grad) {
      Tensor g(m, self.grad.cols());
      for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = 0; j < g.cols(); ++j) g.at(i, j) = self.grad.at(start_row + i, j);
      accum(repl, g);
    }
  });
}

NodePtr pair_concat(const NodePtr& e, const std::vector<std::pair<int, int>>& pairs) {
  const Tensor& ev = e->value;
  const std::size_t d = ev.cols();
  Tensor out(pairs.size(), 2 * d);
  for (std::size_t k = 0; k < pairs.size(); ++k) {
    const auto [i, j] = pairs[k];
    for (std::size_t c = 0; c < d; ++c) {
      out.at(k, c) = ev.at(i, c);
      out.at(k, d + c) = ev.at(j, c);
    }
  }
  return make(std::move(out), {e}, [pairs, d](Node& self) {
    Node& e = *self.parents[0];
    if (!e.requires_grad) return;
    Tensor& g = e.ensure_grad();
    for (std::size_t k = 0; k < pairs.size(); ++k) {
      const auto [i, j] = pairs[k];
      for (std::size_t c = 0; c < d; ++c) {
        g.at(i, c) += self.grad.at(k, c);
        g.at(j, c) += self.grad.at(k, d + c);
      }
    }
  });
}

NodePtr slice_cols(const NodePtr& a, std::size_t lo, std::size_t hi) {
  const Tensor& av = a->value;
  if (lo >= hi || hi > av.cols()) throw std::invalid_argument("slice_cols: bad range");
  Tensor out(av.rows(), hi - lo);
  for (std::size_t i = 0; i < av.rows(); ++i)
    for (std::size_t j = lo; j < hi; ++j) out.at(i, j - lo) = av.at(i, j);
  return make(std::move(out), {a}, [lo](Node& self) {
    Node& a = *self.parents[0];
    if (!a.requires_grad) return;
    Tensor& g = a.ensure_grad();
    for (std::size_t i = 0; i < self.grad.rows(); ++i)
      for (std::size_t j = 0; j < self.grad.cols(); ++j) g.at(i, lo + j) += self.grad.at(i, j);
  });
}

NodePtr slice_rows(const NodePtr& a, std::size_t lo, std::size_t hi) {
  const Tensor& av = a->value;
  if (lo >= hi || hi > av.rows()) throw std::invalid_argument("slice_rows: bad range");
  Tensor out(hi - lo, av.cols());
  for (std::size_t i = lo; i < hi; ++i)
    for (std::size_t j = 0; j < av.cols(); ++j) out.at(i - lo, j) = av.at(i, j);
  return make(std::move(out), {a}, [lo](Node& self) {
    Node& a = *self.parents[0];
    if (!a.requires_grad) return;
    Tensor& g = a.ensure_grad();
    for (std::size_t i = 0; i < self.grad.rows(); ++i)
      for (std::size_t j = 0; j < self.grad.cols(); ++j) g.at(lo + i, j) += self.grad.at(i, j);
  });
}

NodePtr concat_cols(const std::vector<NodePtr>& parts) {
  if (parts.empty()) throw std::invalid_argument("concat_cols: empty");
  std::size_t rows = parts[0]->value.rows(), cols = 0;
  for (const auto& p : parts) {
    if (p->value.rows() != rows) throw std::invalid_argument("concat_cols: row mismatch");
    cols += p->value.cols();
  }
  Tensor out(rows, cols);
  std::vector<std::size_t> offs;
  std::size_t off = 0;
  for (const auto& p : parts) {
    offs.push_back(off);
    for (std::size_t i = 0; i < rows; ++i)
      for (std::size_t j = 0; j < p->value.cols(); ++j) out.at(i, off + j) = p->value.at(i, j);
    off += p->value.cols();
  }
  return make(std::move(out), parts, [offs](Node& self) {
    for (std::size_t k = 0; k < self.parents.size(); ++k) {
      Node& p = *self.parents[k];
      if (!p.requires_grad) continue;
      Tensor g(p.value.rows(), p.value.cols());
      for (std::size_t i = 0; i < g.rows(); ++i)
        for (std::size_t j = 0; j < g.cols(); ++j) g.at(i, j) = self.grad.at(i, offs[k] + j);
      accum(p, g);
    }
  });
}

NodePtr concat_rows(const std::vector<NodePtr>& parts) {
  if (parts.empty()) throw std::invalid_argument("concat_rows: empty");
  std::size_t cols = parts[0]->value.cols(), rows = 0;
  for (const auto& p : parts) {
    if (p->value.cols() != cols) throw std::invalid_argument("concat_rows: col mismatch");
    rows += p->value.rows();
  }
  Tensor out(rows, cols);
  std::vector<std::size_t> offs;
  std::size_t off = 0;
  for (const auto& p : parts) {
    offs.push_back(off);
    for (std::size_t i = 0; i < p->value.rows(); ++i)
      for (std::size_t j = 0; j < cols; ++j) out.at(off + i, j) = p->value.at(i, j);
    off += p->value.rows();
  }
  return make(std::move(out), parts, [offs](Node& self) {
    for (std::size_t k = 0; k < self.parents.size(); ++k) {
      Node& p = *self.parents[k];
      if (!p.requires_grad) continue;
      Tensor g(p.value.rows(), p.value.cols());
      for (std::size_t i = 0; i < g.rows(); ++i)
        for (std::size_t j = 0; j < g.cols(); ++j) g.at(i, j) = self.grad.at(offs[k] + i, j);
      accum(p, g);
    }
  });
}

NodePtr reshape(const NodePtr& a, std::size_t rows, std::size_t cols) {
  const Tensor& av = a->value;
  if (rows * cols != av.size()) throw std::invalid_argument("reshape: size mismatch");
  Tensor out(rows, cols);
  for (std::size_t i = 0; i < av.size(); ++i) out.ptr()[i] = av.ptr()[i];
  return make(std::move(out), {a}, [](Node& self) {
    Node& a = *self.parents[0];
    if (!a.requires_grad) return;
    Tensor g(a.value.rows(), a.value.cols());
    for (std::size_t i = 0; i < g.size(); ++i) g.ptr()[i] = self.grad.ptr()[i];
    accum(a, g);
  });
}

NodePtr sum(const NodePtr& a) {
  double s = 0.0;
  for (std::size_t i = 0; i < a->value.size(); ++i) s += a->value.ptr()[i];
  Tensor out(1, 1, s);
  return make(std::move(out), {a}, [](Node& self) {
    Node& a = *self.parents[0];
    if (!a.requires_grad) return;
    Tensor g(a.value.rows(), a.value.cols(), self.grad.at(0, 0));
    accum(a, g);
  });
}

NodePtr mean(const NodePtr& a) {
  return scale(sum(a), 1.0 / static_cast<double>(a->value.size()));
}

NodePtr bce_with_logits(const NodePtr& logits, const Tensor& targets, const Tensor& mask) {
  const Tensor& z = logits->value;
  if (!z.same_shape(targets) || !z.same_shape(mask))
    throw std::invalid_argument("bce_with_logits: shape mismatch");
  double cnt = 0.0;
  for (std::size_t i = 0; i < mask.size(); ++i)
    if (mask.ptr()[i] != 0.0) cnt += 1.0;
  double loss = 0.0;
  if (cnt > 0.0) {
    for (std::size_t i = 0; i < z.size(); ++i) {
      if (mask.ptr()[i] == 0.0) continue;
      double zi = z.ptr()[i], t = targets.ptr()[i];
      loss += std::max(zi, 0.0) - zi * t + std::log1p(std::exp(-std::abs(zi)));
    }
    loss /= cnt;
  }
  Tensor out(1, 1, loss);
  return make(std::move(out), {logits}, [targets, mask, cnt](Node& self) {
    Node& logits = *self.parents[0];
    if (!logits.requires_grad || cnt == 0.0) return;
    const double g0 = self.grad.at(0, 0) / cnt;
    Tensor g(logits.value.rows(), logits.value.cols(), 0.0);
    for (std::size_t i = 0; i < g.size(); ++i) {
      if (mask.ptr()[i] == 0.0) continue;
      g.ptr()[i] = g0 * (sigmoid(logits.value.ptr()[i]) - targets.ptr()[i]);
    }
    accum(logits, g);
  });
}

void backward(const NodePtr& root) {
  if (root->value.rows() != 1 || root->value.cols() != 1)
    throw std::invalid_argument("backward: root must be scalar-shaped [1x1]");
  // iterative post-order DFS -> topological order
  std::vector<Node*> order;
  std::unordered_set<Node*> visited;
  std::vector<std::pair<Node*, std::size_t>> stack;
  stack.emplace_back(root.get(), 0);
  visited.insert(root.get());
  while (!stack.empty()) {
    auto& [n, idx] = stack.back();
    if (idx < n->parents.size()) {
      Node* p = n->parents[idx++].get();
      if (p->requires_grad && visited.insert(p).second) stack.emplace_back(p, 0);
    } else {
      order.push_back(n);
      stack.pop_back();
    }
  }
  root->ensure_grad();
  root->grad.at(0, 0) = 1.0;
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    Node* n = *it;
    if (n->backprop && !n->grad.empty()) n->backprop(*n);
  }
}

double sigmoid(double x) {
  if (x >= 0.0) {
    double e = std::exp(-x);
    return 1.0 / (1.0 + e);
  }
  double e = std::exp(x);
  return e / (1.0 + e);
}

}  // namespace pbmrc
