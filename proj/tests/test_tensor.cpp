#include <doctest.h>

#include <cmath>

#include "pbmrc/autodiff.hpp"
#include "pbmrc/rng.hpp"
#include "test_support.hpp"

using namespace pbmrc;
using pbmrc::testing::max_grad_error;
using pbmrc::testing::random_tensor;

TEST_CASE("matmul identity and hand arithmetic") {
  Tensor eye(3, 3);
  for (int i = 0; i < 3; ++i) eye.at(i, i) = 1.0;
  Rng rng(1);
  Tensor m = random_tensor(3, 3, rng);
  NodePtr out = matmul(constant(eye), constant(m));
  for (std::size_t i = 0; i < m.size(); ++i) CHECK(out->value.ptr()[i] == doctest::Approx(m.ptr()[i]));

  NodePtr prod = matmul(constant(Tensor::from(1, 2, {1, 2})), constant(Tensor::from(2, 1, {3, 4})));
  CHECK(prod->value.at(0, 0) == doctest::Approx(11.0));
}

TEST_CASE("matmul gradient vs finite differences") {
  Rng rng(2);
  std::vector<Tensor> leaves = {random_tensor(3, 4, rng), random_tensor(4, 2, rng)};
  double err = max_grad_error(leaves, [](std::vector<NodePtr>& l) {
    return sum(matmul(l[0], l[1]));
  });
  CHECK(err <= 1e-6);
}

TEST_CASE("softmax rows") {
  Tensor x = Tensor::from(2, 2, {5.0, 5.0, 0.0, std::log(3.0)});
  NodePtr y = softmax_rows(constant(x));
  CHECK(y->value.at(0, 0) == doctest::Approx(0.5));
  CHECK(y->value.at(0, 1) == doctest::Approx(0.5));
  CHECK(y->value.at(1, 0) == doctest::Approx(0.25));
  CHECK(y->value.at(1, 1) == doctest::Approx(0.75));

  // rows sum to one
  Rng rng(3);
  Tensor r = random_tensor(5, 7, rng);
  NodePtr s = softmax_rows(constant(r));
  for (std::size_t i = 0; i < 5; ++i) {
    double rowsum = 0;
    for (std::size_t j = 0; j < 7; ++j) rowsum += s->value.at(i, j);
    CHECK(std::abs(rowsum - 1.0) <= 1e-9);
  }

  std::vector<Tensor> leaves = {random_tensor(3, 5, rng)};
  // weight rows so the gradient is not trivially zero (rows sum to 1)
  Tensor w = random_tensor(3, 5, rng);
  double err = max_grad_error(leaves, [&](std::vector<NodePtr>& l) {
    return sum(mul(softmax_rows(l[0]), constant(w)));
  });
  CHECK(err <= 1e-6);
}

TEST_CASE("layer_norm values and gradient") {
  Tensor gain(1, 2, 1.0), bias(1, 2, 0.0);
  NodePtr y = layer_norm(constant(Tensor::from(1, 2, {1.0, 3.0})), constant(gain), constant(bias),
                         1e-12);
  CHECK(y->value.at(0, 0) == doctest::Approx(-1.0));
  CHECK(y->value.at(0, 1) == doctest::Approx(1.0));

  // constant row with unit gain, zero bias -> all zeros
  NodePtr z = layer_norm(constant(Tensor::from(1, 3, {4.0, 4.0, 4.0})), constant(Tensor(1, 3, 1.0)),
                         constant(Tensor(1, 3, 0.0)), 1e-12);
  for (int j = 0; j < 3; ++j) CHECK(std::abs(z->value.at(0, j)) <= 1e-9);

  Rng rng(4);
  std::vector<Tensor> leaves = {random_tensor(3, 6, rng), random_tensor(1, 6, rng),
                                random_tensor(1, 6, rng)};
  Tensor w = random_tensor(3, 6, rng);
  double err = max_grad_error(leaves, [&](std::vector<NodePtr>& l) {
    return sum(mul(layer_norm(l[0], l[1], l[2], 1e-12), constant(w)));
  });
  CHECK(err <= 1e-6);

  // mean ~0, variance ~1 with gain=1, bias=0
  Tensor x = random_tensor(4, 8, rng);
  NodePtr n = layer_norm(constant(x), constant(Tensor(1, 8, 1.0)), constant(Tensor(1, 8, 0.0)),
                         1e-12);
  for (std::size_t i = 0; i < 4; ++i) {
    double mu = 0, var = 0;
    for (std::size_t j = 0; j < 8; ++j) mu += n->value.at(i, j);
    mu /= 8;
    for (std::size_t j = 0; j < 8; ++j) {
      double t = n->value.at(i, j) - mu;
      var += t * t;
    }
    var /= 8;
    CHECK(std::abs(mu) <= 1e-9);
    CHECK(std::abs(var - 1.0) <= 1e-6);
  }
}

TEST_CASE("dropout") {
  Rng rng(5);
  Tensor x = random_tensor(10, 10, rng);
  NodePtr id1 = dropout(constant(x), 0.5, rng, /*training=*/false);
  CHECK(id1->value.bitwise_equal(x));
  NodePtr id2 = dropout(constant(x), 0.0, rng, /*training=*/true);
  CHECK(id2->value.bitwise_equal(x));

  Tensor big(250, 400, 1.0);  // 1e5 elements
  Rng drng(42, 9);
  NodePtr dr = dropout(constant(big), 0.5, drng, /*training=*/true);
  std::size_t survivors = 0;
  for (std::size_t i = 0; i < big.size(); ++i) {
    double v = dr->value.ptr()[i];
    if (v != 0.0) {
      ++survivors;
      CHECK(v == doctest::Approx(2.0));
    }
  }
  double frac = static_cast<double>(survivors) / static_cast<double>(big.size());
  CHECK(frac > 0.49);
  CHECK(frac < 0.51);
}

TEST_CASE("gelu gradient") {
  Rng rng(6);
  std::vector<Tensor> leaves = {random_tensor(4, 4, rng)};
  double err = max_grad_error(leaves, [](std::vector<NodePtr>& l) { return sum(gelu(l[0])); });
  CHECK(err <= 1e-6);
}

TEST_CASE("backward basics") {
  Tensor x0(1, 1, 3.0);
  NodePtr x = leaf(x0);
  backward(add(x, scale(x, 0.0)));  // root = x (plus zero)
  CHECK(x->grad.at(0, 0) == doctest::Approx(1.0));

  NodePtr y = leaf(Tensor(1, 1, 2.0));
  NodePtr r = add(y, y);  // fan-out accumulation
  backward(r);
  CHECK(y->grad.at(0, 0) == doctest::Approx(2.0));

  CHECK_THROWS(backward(leaf(Tensor(2, 2, 1.0))));  // non-scalar root
}

TEST_CASE("composite graph gradient") {
  Rng rng(7);
  std::vector<Tensor> leaves = {random_tensor(3, 4, rng), random_tensor(4, 4, rng),
                                random_tensor(1, 4, rng)};
  double err = max_grad_error(leaves, [](std::vector<NodePtr>& l) {
    NodePtr h = gelu(add_row(matmul(l[0], l[1]), l[2]));
    return mean(mul(softmax_rows(h), h));
  });
  CHECK(err <= 1e-4);
}

TEST_CASE("embedding, pair_concat, row_substitute, slices gradients") {
  Rng rng(8);
  std::vector<Tensor> leaves = {random_tensor(6, 4, rng), random_tensor(2, 4, rng)};
  std::vector<int> ids = {1, 3, 3, 0, 5};
  std::vector<std::pair<int, int>> pairs = {{0, 1}, {1, 1}, {2, 4}};
  double err = max_grad_error(leaves, [&](std::vector<NodePtr>& l) {
    NodePtr e = embedding_rows(l[0], ids);              // [5x4]
    e = row_substitute(e, l[1], 1);                     // rows 1..2 replaced
    NodePtr p = pair_concat(e, pairs);                  // [3x8]
    NodePtr s = slice_cols(p, 2, 6);                    // [3x4]
    NodePtr c = concat_cols({s, slice_rows(e, 0, 3)});  // [3x8]
    return sum(reshape(c, 8, 3));
  });
  CHECK(err <= 1e-6);
}

TEST_CASE("bce_with_logits values and gradient") {
  // zero logits: BCE = ln 2 regardless of target
  Tensor z(4, 1, 0.0), t(4, 1, 0.0), m(4, 1, 1.0);
  t.at(1, 0) = 1.0;
  NodePtr l = bce_with_logits(constant(z), t, m);
  CHECK(l->value.at(0, 0) == doctest::Approx(std::log(2.0)));

  // saturated logits at the right answers -> tiny loss
  Tensor zs(4, 1, -20.0);
  zs.at(1, 0) = 20.0;
  NodePtr ls = bce_with_logits(constant(zs), t, m);
  CHECK(ls->value.at(0, 0) < 1e-6);

  // masked-out positions do not contribute
  Tensor m2 = m.clone();
  m2.at(3, 0) = 0.0;
  Tensor zbad = zs.clone();
  zbad.at(3, 0) = 1e4;  // would explode if unmasked
  NodePtr lm = bce_with_logits(constant(zbad), t, m2);
  CHECK(lm->value.at(0, 0) < 1e-6);

  Rng rng(9);
  Tensor targets(3, 4, 0.0);
  targets.at(0, 1) = 1.0;
  targets.at(2, 2) = 1.0;
  Tensor mask(3, 4, 1.0);
  mask.at(1, 1) = 0.0;
  std::vector<Tensor> leaves = {random_tensor(3, 4, rng)};
  double err = max_grad_error(leaves, [&](std::vector<NodePtr>& l) {
    return bce_with_logits(l[0], targets, mask);
  });
  CHECK(err <= 1e-6);
}

TEST_CASE("rng determinism and truncated normal bounds") {
  Rng a(123, 4), b(123, 4);
  for (int i = 0; i < 100; ++i) CHECK(a.next_u64() == b.next_u64());
  Rng c(123, 5);
  CHECK(Rng(123, 4).next_u64() != c.next_u64());
  Rng d(99);
  for (int i = 0; i < 1000; ++i) {
    double v = d.truncated_normal(0.02);
    CHECK(std::abs(v) <= 0.04);
  }
}

TEST_CASE("backward is deterministic bitwise") {
  Rng rng(10);
  Tensor a = random_tensor(4, 4, rng), b = random_tensor(4, 4, rng);
  auto run = [&]() {
    NodePtr la = leaf(a), lb = leaf(b);
    backward(mean(mul(softmax_rows(matmul(la, lb)), la)));
    return std::make_pair(la->grad.clone(), lb->grad.clone());
  };
  auto [g1a, g1b] = run();
  auto [g2a, g2b] = run();
  CHECK(g1a.bitwise_equal(g2a));
  CHECK(g1b.bitwise_equal(g2b));
}
