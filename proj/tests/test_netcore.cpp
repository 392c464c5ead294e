#include <doctest.h>

#include <cmath>
#include <memory>

#include "pbp/adam.hpp"
#include "pbp/graph.hpp"
#include "pbp/ops.hpp"
#include "testutil.hpp"

using namespace pbp;

namespace {

// scalar objective <w, y> for finite-difference checks of any op output
template <typename S>
int weighted_sum(GraphT<S>& g, int y, const TensorT<S>& w) {
  const auto& yv = g.value(y);
  TensorT<S> out = TensorT<S>::scalar((yv.data.array() * w.data.array()).sum());
  auto wcopy = std::make_shared<TensorT<S>>(w);
  return g.emit(std::move(out), {y}, [=](GraphT<S>& gr, int outid) {
    if (!gr.requires_grad(y)) return;
    TensorT<S> dy;
    dy.shape = gr.value(y).shape;
    dy.data = gr.grad(outid).data(0) * wcopy->data;
    gr.accumulate_grad(y, dy);
  });
}

}  // namespace

TEST_CASE("dense: identity weights, hand matmul, gradients") {
  SUBCASE("identity") {
    GraphT<float> g;
    int x = g.input(Tensor::from_flat({2, 2}, (Tensor::Flat(4) << 1, 2, 3, 4).finished()));
    Tensor w({2, 2});
    w.data << 1, 0, 0, 1;
    int y = dense(g, x, g.input(w), g.input(Tensor::zeros({2})));
    CHECK(g.value(y).data == g.value(x).data);
  }
  SUBCASE("hand matmul [[1,2]]*[[1],[1]]+[1] = [[4]]") {
    GraphT<float> g;
    int x = g.input(Tensor::from_flat({1, 2}, (Tensor::Flat(2) << 1, 2).finished()));
    int w = g.input(Tensor::from_flat({2, 1}, (Tensor::Flat(2) << 1, 1).finished()));
    int b = g.input(Tensor::from_flat({1}, (Tensor::Flat(1) << 1).finished()));
    int y = dense(g, x, w, b);
    CHECK(g.value(y).data(0) == 4.f);
  }
  SUBCASE("finite differences") {
    RandomEngine eng(5);
    auto x0 = testutil::random_tensor<double>({3, 4}, eng);
    auto w0 = testutil::random_tensor<double>({4, 2}, eng);
    auto b0 = testutil::random_tensor<double>({2}, eng);
    auto wt = testutil::random_tensor<double>({3, 2}, eng);

    GraphT<double> g;
    int x = g.input(x0, true), w = g.input(w0, true), b = g.input(b0, true);
    int loss = weighted_sum(g, dense(g, x, w, b), wt);
    g.backward(loss);

    auto fd_check = [&](const TensorT<double>& base, int which,
                        const TensorT<double>& grad) {
      for (Eigen::Index i = 0; i < base.size(); ++i) {
        auto f = [&](double v) {
          TensorT<double> m = base;
          m.data(i) = v;
          GraphT<double> gg;
          int xs = gg.input(which == 0 ? m : x0);
          int ws = gg.input(which == 1 ? m : w0);
          int bs = gg.input(which == 2 ? m : b0);
          return gg.value(weighted_sum(gg, dense(gg, xs, ws, bs), wt)).data(0);
        };
        const double fd = testutil::central_difference(f, base.data(i), 1e-6);
        CHECK(testutil::rel_error(grad.data(i), fd, 1e-8) <= 1e-3);
      }
    };
    fd_check(x0, 0, g.grad(x));
    fd_check(w0, 1, g.grad(w));
    fd_check(b0, 2, g.grad(b));
  }
  SUBCASE("shape mismatch") {
    GraphT<float> g;
    CHECK_THROWS_AS(dense(g, g.input(Tensor::zeros({2, 3})),
                          g.input(Tensor::zeros({4, 2})),
                          g.input(Tensor::zeros({2}))),
                    ShapeError);
  }
}

TEST_CASE("conv2d: identity kernel, all-ones valid, oracle, gradients") {
  SUBCASE("1x1 identity kernel") {
    RandomEngine eng(7);
    auto x0 = testutil::random_tensor<float>({1, 4, 4, 1}, eng);
    Tensor k({1, 1, 1, 1});
    k.data(0) = 1.f;
    GraphT<float> g;
    int y = conv2d(g, g.input(x0), g.input(k));
    CHECK((g.value(y).data - x0.data).cwiseAbs().maxCoeff() == 0.f);
  }
  SUBCASE("3x3 ones kernel on 3x3 ones input, valid -> 9") {
    GraphT<float> g;
    int y = conv2d(g, g.input(Tensor::full({1, 3, 3, 1}, 1.f)),
                   g.input(Tensor::full({3, 3, 1, 1}, 1.f)), 1, Pad::valid);
    CHECK(g.value(y).shape == std::vector<Eigen::Index>{1, 1, 1, 1});
    CHECK(g.value(y).data(0) == 9.f);
  }
  SUBCASE("matches naive nested-loop oracle (same & valid, stride 1 & 2)") {
    RandomEngine eng(11);
    for (int stride : {1, 2}) {
      for (bool same : {true, false}) {
        auto x0 = testutil::random_tensor<float>({2, 6, 6, 3}, eng);
        auto k0 = testutil::random_tensor<float>({3, 3, 3, 4}, eng);
        GraphT<float> g;
        int y = conv2d(g, g.input(x0), g.input(k0), stride,
                       same ? Pad::same : Pad::valid);
        auto expect = testutil::naive_conv2d(x0, k0, stride, same);
        REQUIRE(g.value(y).shape == expect.shape);
        CHECK((g.value(y).data - expect.data).cwiseAbs().maxCoeff() <= 1e-5f);
      }
    }
  }
  SUBCASE("finite differences for x and k") {
    RandomEngine eng(13);
    auto x0 = testutil::random_tensor<double>({1, 4, 4, 2}, eng);
    auto k0 = testutil::random_tensor<double>({3, 3, 2, 3}, eng);
    GraphT<double> g;
    int x = g.input(x0, true), k = g.input(k0, true);
    int y = conv2d(g, x, k);
    auto wt = testutil::random_tensor<double>(g.value(y).shape, eng);
    int loss = weighted_sum(g, y, wt);
    g.backward(loss);

    auto eval = [&](const TensorT<double>& xm, const TensorT<double>& km) {
      GraphT<double> gg;
      return gg.value(weighted_sum(gg, conv2d(gg, gg.input(xm), gg.input(km)), wt))
          .data(0);
    };
    for (Eigen::Index i = 0; i < x0.size(); i += 3) {
      auto f = [&](double v) {
        TensorT<double> m = x0;
        m.data(i) = v;
        return eval(m, k0);
      };
      const double fd = testutil::central_difference(f, x0.data(i), 1e-6);
      CHECK(testutil::rel_error(g.grad(x).data(i), fd, 1e-8) <= 1e-3);
    }
    for (Eigen::Index i = 0; i < k0.size(); i += 5) {
      auto f = [&](double v) {
        TensorT<double> m = k0;
        m.data(i) = v;
        return eval(x0, m);
      };
      const double fd = testutil::central_difference(f, k0.data(i), 1e-6);
      CHECK(testutil::rel_error(g.grad(k).data(i), fd, 1e-8) <= 1e-3);
    }
  }
}

TEST_CASE("relu forward and mask") {
  GraphT<float> g;
  int x = g.input(Tensor::from_flat({3}, (Tensor::Flat(3) << -1, 0, 2).finished()),
                  true);
  int y = relu(g, x);
  CHECK(g.value(y).data(0) == 0.f);
  CHECK(g.value(y).data(1) == 0.f);
  CHECK(g.value(y).data(2) == 2.f);
  g.backward(weighted_sum(g, y, Tensor::full({3}, 1.f)));
  CHECK(g.grad(x).data(0) == 0.f);
  CHECK(g.grad(x).data(1) == 0.f);  // derivative at 0 defined as 0
  CHECK(g.grad(x).data(2) == 1.f);
}

TEST_CASE("maxpool2d: values, argmax routing, tie to first index") {
  GraphT<float> g;
  Tensor x({1, 2, 2, 1});
  x.data << 1, 2, 3, 4;
  int xid = g.input(x, true);
  int y = maxpool2d(g, xid);
  CHECK(g.value(y).data(0) == 4.f);
  g.backward(weighted_sum(g, y, Tensor::full({1, 1, 1, 1}, 1.f)));
  CHECK(g.grad(xid).data(3) == 1.f);
  CHECK(g.grad(xid).data.cwiseAbs().sum() == 1.f);

  GraphT<float> g2;
  int c = g2.input(Tensor::full({1, 2, 2, 1}, 3.f), true);
  int yc = maxpool2d(g2, c);
  CHECK(g2.value(yc).data(0) == 3.f);
  g2.backward(weighted_sum(g2, yc, Tensor::full({1, 1, 1, 1}, 1.f)));
  CHECK(g2.grad(c).data(0) == 1.f);  // tie routes to the first window element
  CHECK(g2.grad(c).data.cwiseAbs().sum() == 1.f);

  GraphT<float> g3;
  CHECK_THROWS_AS(maxpool2d(g3, g3.input(Tensor::zeros({1, 3, 4, 1}))),
                  InvalidInputError);
}

TEST_CASE("global_maxpool_points: forward, permutation invariance, routing") {
  GraphT<float> g;
  Tensor x({1, 3, 1});
  x.data << 1, 5, 3;
  int xid = g.input(x, true);
  int y = global_maxpool_points(g, xid);
  CHECK(g.value(y).data(0) == 5.f);
  g.backward(weighted_sum(g, y, Tensor::full({1, 1}, 1.f)));
  CHECK(g.grad(xid).data(1) == 1.f);
  CHECK(g.grad(xid).data.cwiseAbs().sum() == 1.f);

  RandomEngine eng(19);
  auto a = testutil::random_tensor<float>({1, 8, 5}, eng);
  Tensor b({1, 8, 5});
  for (Eigen::Index n = 0; n < 8; ++n)
    b.data.segment((7 - n) * 5, 5) = a.data.segment(n * 5, 5);
  GraphT<float> ga, gb;
  CHECK(ga.value(global_maxpool_points(ga, ga.input(a))).data ==
        gb.value(global_maxpool_points(gb, gb.input(b))).data);

  GraphT<float> g1;
  auto single = testutil::random_tensor<float>({2, 1, 4}, eng);
  CHECK(g1.value(global_maxpool_points(g1, g1.input(single))).data == single.data);
}

TEST_CASE("softmax_cross_entropy: uniform, saturated, gradient, label range") {
  SUBCASE("uniform logits over K=4 -> ln 4") {
    GraphT<float> g;
    int loss = softmax_cross_entropy(g, g.input(Tensor::zeros({3, 4})), {0, 1, 3});
    CHECK(g.value(loss).data(0) == doctest::Approx(std::log(4.0)).epsilon(1e-6));
  }
  SUBCASE("large margin on the true class -> loss ~ 0") {
    GraphT<float> g;
    Tensor logits({1, 3});
    logits.data << 30.f, 0.f, 0.f;
    int loss = softmax_cross_entropy(g, g.input(logits), {0});
    CHECK(g.value(loss).data(0) < 1e-6f);
  }
  SUBCASE("d_logits matches finite differences") {
    RandomEngine eng(23);
    auto l0 = testutil::random_tensor<double>({4, 3}, eng);
    std::vector<int> labels{0, 2, 1, 2};
    GraphT<double> g;
    int l = g.input(l0, true);
    g.backward(softmax_cross_entropy(g, l, labels));
    for (Eigen::Index i = 0; i < l0.size(); ++i) {
      auto f = [&](double v) {
        TensorT<double> m = l0;
        m.data(i) = v;
        GraphT<double> gg;
        return gg.value(softmax_cross_entropy(gg, gg.input(m), labels)).data(0);
      };
      const double fd = testutil::central_difference(f, l0.data(i), 1e-6);
      CHECK(testutil::rel_error(g.grad(l).data(i), fd, 1e-8) <= 1e-3);
    }
  }
  SUBCASE("label out of range") {
    GraphT<float> g;
    CHECK_THROWS_AS(softmax_cross_entropy(g, g.input(Tensor::zeros({1, 3})), {3}),
                    InvalidInputError);
  }
}

TEST_CASE("adam_update: zero grad, first-step size, determinism") {
  SUBCASE("zero gradient leaves parameters unchanged") {
    Tensor p = Tensor::full({4}, 1.5f);
    AdamState st = AdamState::zeros_like(p);
    adam_update(p, Tensor::zeros({4}), st, 0.01f);
    CHECK((p.data.array() == 1.5f).all());
  }
  SUBCASE("bias-corrected first step moves by ~lr for unit gradient") {
    Tensor p = Tensor::full({1}, 1.f);
    AdamState st = AdamState::zeros_like(p);
    adam_update(p, Tensor::full({1}, 1.f), st, 0.001f);
    CHECK(std::abs(p.data(0) - (1.f - 0.001f)) <= 1e-6f);
  }
  SUBCASE("identical calls from identical state produce identical results") {
    RandomEngine eng(29);
    auto grad = testutil::random_tensor<float>({16}, eng);
    Tensor p1 = Tensor::full({16}, 0.5f), p2 = Tensor::full({16}, 0.5f);
    AdamState s1 = AdamState::zeros_like(p1), s2 = AdamState::zeros_like(p2);
    for (int i = 0; i < 5; ++i) {
      adam_update(p1, grad, s1, 0.01f);
      adam_update(p2, grad, s2, 0.01f);
    }
    CHECK(p1.data == p2.data);
  }
}

TEST_CASE("backward over a 2-op chain equals the hand-fused derivative") {
  RandomEngine eng(31);
  auto x0 = testutil::random_tensor<double>({2, 3}, eng);
  auto w0 = testutil::random_tensor<double>({3, 3}, eng);
  auto b0 = testutil::random_tensor<double>({3}, eng);
  auto wt = testutil::random_tensor<double>({2, 3}, eng);

  GraphT<double> g;
  int x = g.input(x0, true);
  int y = relu(g, dense(g, x, g.input(w0), g.input(b0)));
  g.backward(weighted_sum(g, y, wt));

  Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor> pre =
      x0.matrix(2, 3) * w0.matrix(3, 3);
  pre.rowwise() += b0.data.transpose();
  Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor> masked =
      (pre.array() > 0).select(wt.matrix(2, 3), 0.0);
  Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor> dx =
      masked * w0.matrix(3, 3).transpose();
  for (Eigen::Index i = 0; i < 6; ++i)
    CHECK(g.grad(x).data(i) == doctest::Approx(dx(i / 3, i % 3)).epsilon(1e-12));
}

TEST_CASE("upsample_nearest2: forward replication and gradient block sum") {
  GraphT<float> g;
  Tensor x({1, 2, 2, 1});
  x.data << 1, 2, 3, 4;
  int xid = g.input(x, true);
  int y = upsample_nearest2(g, xid);
  REQUIRE(g.value(y).shape == std::vector<Eigen::Index>{1, 4, 4, 1});
  CHECK(g.value(y).data(0) == 1.f);   // (0,0) <- x(0,0)
  CHECK(g.value(y).data(1) == 1.f);   // (0,1) <- x(0,0)
  CHECK(g.value(y).data(2) == 2.f);   // (0,2) <- x(0,1)
  CHECK(g.value(y).data(10) == 4.f);  // (2,2) <- x(1,1)
  g.backward(weighted_sum(g, y, Tensor::full({1, 4, 4, 1}, 1.f)));
  CHECK((g.grad(xid).data.array() == 4.f).all());
}

TEST_CASE("forward passes are deterministic") {
  RandomEngine eng(37);
  auto x0 = testutil::random_tensor<float>({2, 8, 8, 3}, eng);
  auto k0 = testutil::random_tensor<float>({3, 3, 3, 8}, eng);
  GraphT<float> a, b;
  int ya = maxpool2d(a, relu(a, conv2d(a, a.input(x0), a.input(k0))));
  int yb = maxpool2d(b, relu(b, conv2d(b, b.input(x0), b.input(k0))));
  CHECK(a.value(ya).data == b.value(yb).data);
}
