#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "testutil.hpp"
#include "tsdistill/rng.hpp"
#include "tsdistill/tensor.hpp"

using namespace tsdistill;
using testutil::grad_check;

TEST_CASE("rng streams are deterministic and split-independent") {
  Rng a(42), b(42);
  for (int i = 0; i < 100; ++i) CHECK(a.next_u64() == b.next_u64());

  Rng parent(7);
  parent.next_u64();
  parent.next_u64();
  Rng c1 = parent.split(3);
  Rng fresh(7);
  Rng c2 = fresh.split(3);
  // split depends on the key only, not on how far the parent has advanced
  for (int i = 0; i < 10; ++i) CHECK(c1.next_u64() == c2.next_u64());

  Rng s1 = parent.split(1), s2 = parent.split(2);
  CHECK(s1.next_u64() != s2.next_u64());
}

TEST_CASE("rng uniform and normal moments") {
  Rng rng(123);
  double sum = 0.0, sq = 0.0;
  const int n = 200000;
  for (int i = 0; i < n; ++i) {
    double u = rng.uniform();
    CHECK(u >= 0.0);
    CHECK(u < 1.0);
    sum += u;
    sq += u * u;
  }
  CHECK(std::fabs(sum / n - 0.5) < 0.005);
  double m = 0.0, v = 0.0;
  for (int i = 0; i < n; ++i) {
    double z = rng.normal();
    m += z;
    v += z * z;
  }
  CHECK(std::fabs(m / n) < 0.01);
  CHECK(std::fabs(v / n - 1.0) < 0.02);
}

TEST_CASE("matmul identity and hand arithmetic") {
  Tensor eye = Tensor::from_data({2, 2}, {1, 0, 0, 1});
  Tensor b = Tensor::from_data({2, 2}, {3, 4, 5, 6});
  Tensor c = matmul(eye, b);
  for (int i = 0; i < 4; ++i) CHECK(c.data()[i] == b.data()[i]);

  Tensor a = Tensor::from_data({1, 2}, {1, 2});
  Tensor d = Tensor::from_data({2, 1}, {3, 4});
  CHECK(matmul(a, d).item() == doctest::Approx(11.0));

  CHECK_THROWS_AS(matmul(Tensor::zeros({2, 3}), Tensor::zeros({2, 3})), ShapeError);
}

TEST_CASE("matmul gradient vs finite differences") {
  Rng rng(11);
  Tensor a = Tensor::randn({4, 5}, rng, 0.5f);
  Tensor b = Tensor::randn({5, 3}, rng, 0.5f);
  double err = grad_check([&] { return sum_all(matmul(a, b)); }, {a, b});
  CHECK(err < 1e-3);
}

TEST_CASE("matmul_nt and bmm gradients") {
  Rng rng(13);
  Tensor a = Tensor::randn({3, 4}, rng, 0.5f);
  Tensor b = Tensor::randn({5, 4}, rng, 0.5f);
  CHECK(grad_check([&] { return sum_all(matmul_nt(a, b)); }, {a, b}) < 1e-3);

  Tensor p = Tensor::randn({2, 3, 4}, rng, 0.5f);
  Tensor q = Tensor::randn({2, 4, 2}, rng, 0.5f);
  CHECK(grad_check([&] { return sum_all(bmm(p, q)); }, {p, q}) < 1e-3);

  Tensor r = Tensor::randn({2, 5, 4}, rng, 0.5f);
  CHECK(grad_check([&] { return sum_all(bmm_nt(p, r)); }, {p, r}) < 1e-3);
}

TEST_CASE("conv1d_same box filter and identity kernel") {
  Tensor x = Tensor::from_data({1, 1, 5}, {0, 0, 1, 0, 0});
  Tensor w = Tensor::from_data({1, 1, 3}, {1, 1, 1});
  Tensor b = Tensor::zeros({1});
  Tensor y = conv1d_same(x, w, b);
  const float want[5] = {0, 1, 1, 1, 0};
  for (int i = 0; i < 5; ++i) CHECK(y.data()[i] == doctest::Approx(want[i]));

  Tensor delta = Tensor::from_data({1, 1, 3}, {0, 1, 0});
  Rng rng(5);
  Tensor any = Tensor::randn({2, 1, 7}, rng);
  Tensor same = conv1d_same(any, reshape(delta, {1, 1, 3}), Tensor::zeros({1}));
  for (int64_t i = 0; i < any.size(); ++i)
    CHECK(same.data()[i] == doctest::Approx(any.data()[i]));

  CHECK_THROWS_AS(conv1d_same(x, Tensor::zeros({1, 1, 4}), b), ConfigError);
}

TEST_CASE("conv1d_same gradient") {
  Rng rng(17);
  Tensor x = Tensor::randn({2, 2, 6}, rng, 0.5f);
  Tensor w = Tensor::randn({3, 2, 3}, rng, 0.5f);
  Tensor b = Tensor::randn({3}, rng, 0.5f);
  CHECK(grad_check([&] { return sum_all(conv1d_same(x, w, b)); }, {x, w, b}) < 1e-3);
}

TEST_CASE("layer_norm constant vector, symmetry, gradient") {
  Tensor x = Tensor::from_data({1, 4}, {2, 2, 2, 2});
  Tensor gamma = Tensor::full({4}, 1.0f);
  Tensor beta = Tensor::zeros({4});
  Tensor y = layer_norm(x, gamma, beta);
  for (int i = 0; i < 4; ++i) CHECK(std::fabs(y.data()[i]) < 1e-4);

  Tensor x2 = Tensor::from_data({1, 2}, {1, 3});
  Tensor y2 = layer_norm(x2, Tensor::full({2}, 1.0f), Tensor::zeros({2}), 1e-10f);
  CHECK(y2.data()[0] == doctest::Approx(-1.0).epsilon(1e-4));
  CHECK(y2.data()[1] == doctest::Approx(1.0).epsilon(1e-4));

  Rng rng(23);
  Tensor xr = Tensor::randn({3, 6}, rng);
  Tensor g = Tensor::randn({6}, rng, 0.3f);
  Tensor b = Tensor::randn({6}, rng, 0.3f);
  Tensor w = Tensor::randn({3, 6}, rng);
  CHECK(grad_check([&] { return sum_all(mul(layer_norm(xr, g, b), w)); },
                   {xr, g, b}) < 1e-3);
}

TEST_CASE("softmax uniform, shift invariance, row sums, gradient") {
  Tensor x = Tensor::zeros({1, 3});
  Tensor y = softmax_last(x, 1.0);
  for (int i = 0; i < 3; ++i) CHECK(y.data()[i] == doctest::Approx(1.0 / 3));

  Tensor a = Tensor::from_data({1, 2}, {5.0f, -3.0f});
  Tensor b = Tensor::from_data({1, 2}, {1005.0f, 997.0f});
  Tensor ya = softmax_last(a), yb = softmax_last(b);
  for (int i = 0; i < 2; ++i)
    CHECK(ya.data()[i] == doctest::Approx(yb.data()[i]).epsilon(1e-6));

  Rng rng(31);
  Tensor r = Tensor::randn({4, 7}, rng, 2.0f);
  Tensor sm = softmax_last(r, 0.5);
  for (int64_t row = 0; row < 4; ++row) {
    double s = 0.0;
    for (int64_t i = 0; i < 7; ++i) s += sm.data()[row * 7 + i];
    CHECK(std::fabs(s - 1.0) < 1e-6);
  }

  // log_softmax == log(softmax)
  Tensor ls = log_softmax_last(r, 0.5);
  for (int64_t i = 0; i < r.size(); ++i)
    CHECK(std::fabs(std::log(sm.data()[i]) - ls.data()[i]) < 1e-5);

  Tensor xr = Tensor::randn({2, 5}, rng);
  Tensor weights = Tensor::randn({2, 5}, rng);
  CHECK(grad_check([&] { return sum_all(mul(softmax_last(xr, 0.7), weights)); },
                   {xr}) < 1e-3);
  CHECK(grad_check([&] { return sum_all(mul(log_softmax_last(xr, 0.7), weights)); },
                   {xr}) < 1e-3);
  CHECK_THROWS_AS(softmax_last(xr, 0.0), ConfigError);
}

TEST_CASE("gelu anchor and gradient") {
  Tensor zero = Tensor::zeros({1});
  CHECK(gelu(zero).item() == doctest::Approx(0.0));
  Rng rng(37);
  Tensor x = Tensor::randn({2, 5}, rng);
  CHECK(grad_check([&] { return sum_all(gelu(x)); }, {x}) < 1e-3);
}

TEST_CASE("dropout determinism and scaling") {
  Rng r1(99), r2(99);
  Tensor x = Tensor::full({1, 1000}, 1.0f);
  Tensor y1 = dropout(x, 0.3f, true, r1);
  Tensor y2 = dropout(x, 0.3f, true, r2);
  for (int64_t i = 0; i < x.size(); ++i) CHECK(y1.data()[i] == y2.data()[i]);
  int kept = 0;
  for (int64_t i = 0; i < x.size(); ++i) {
    if (y1.data()[i] != 0.0f) {
      CHECK(y1.data()[i] == doctest::Approx(1.0f / 0.7f));
      ++kept;
    }
  }
  CHECK(kept > 600);
  CHECK(kept < 800);

  Rng r3(1);
  Tensor ye = dropout(x, 0.3f, false, r3);
  for (int64_t i = 0; i < x.size(); ++i) CHECK(ye.data()[i] == 1.0f);
}

TEST_CASE("linear_resize hand interpolation, identity, gradient") {
  Tensor x = Tensor::from_data({1, 4}, {0, 1, 2, 3});
  Tensor y = linear_resize(x, 7);
  const float want[7] = {0, 0.5, 1, 1.5, 2, 2.5, 3};
  for (int i = 0; i < 7; ++i) CHECK(y.data()[i] == doctest::Approx(want[i]));

  Tensor same = linear_resize(x, 4);
  for (int i = 0; i < 4; ++i) CHECK(same.data()[i] == doctest::Approx(x.data()[i]));

  Rng rng(41);
  Tensor xr = Tensor::randn({2, 9}, rng);
  CHECK(grad_check([&] { return sum_all(linear_resize(xr, 5)); }, {xr}) < 1e-3);
  CHECK_THROWS_AS(linear_resize(xr, 1), ConfigError);
}

TEST_CASE("first_diff values and gradient") {
  Tensor x = Tensor::from_data({1, 4}, {1, 4, 9, 16});
  Tensor d = first_diff(x);
  const float want[4] = {0, 3, 5, 7};
  for (int i = 0; i < 4; ++i) CHECK(d.data()[i] == doctest::Approx(want[i]));
  Rng rng(43);
  Tensor xr = Tensor::randn({2, 6}, rng);
  Tensor w = Tensor::randn({2, 6}, rng);
  CHECK(grad_check([&] { return sum_all(mul(first_diff(xr), w)); }, {xr}) < 1e-3);
}

TEST_CASE("patch stats and pooled means") {
  Tensor x = Tensor::from_data({1, 4}, {1, 3, 10, 14});
  Tensor m = patch_mean(x, 2);
  CHECK(m.data()[0] == doctest::Approx(2.0));
  CHECK(m.data()[1] == doctest::Approx(12.0));
  Tensor s = patch_std(x, 2, 0.0f);
  CHECK(s.data()[0] == doctest::Approx(1.0));
  CHECK(s.data()[1] == doctest::Approx(2.0));

  Rng rng(47);
  Tensor xr = Tensor::randn({2, 8}, rng);
  Tensor w2 = Tensor::randn({2, 2}, rng);
  CHECK(grad_check([&] { return sum_all(mul(patch_mean(xr, 2), w2)); }, {xr}) < 1e-3);
  CHECK(grad_check([&] { return sum_all(mul(patch_std(xr, 2, 1e-8f), w2)); }, {xr}) < 1e-3);

  Tensor x3 = Tensor::randn({2, 4, 3}, rng);
  Tensor w3 = Tensor::randn({2, 2, 3}, rng);
  CHECK(grad_check([&] { return sum_all(mul(patch_pool_mean(x3, 2), w3)); }, {x3}) < 1e-3);
}

TEST_CASE("structural ops gradients") {
  Rng rng(53);
  Tensor x = Tensor::randn({2, 3, 4}, rng);
  Tensor w = Tensor::randn({4, 3, 2}, rng);
  CHECK(grad_check([&] { return sum_all(mul(permute(x, {2, 1, 0}), w)); }, {x}) < 1e-3);

  Tensor n = Tensor::randn({3, 4}, rng);
  CHECK(grad_check([&] { return sum_all(narrow(n, 1, 1, 2)); }, {n}) < 1e-3);

  Tensor a = Tensor::randn({2, 3}, rng);
  Tensor b = Tensor::randn({2, 2}, rng);
  Tensor wc = Tensor::randn({2, 5}, rng);
  CHECK(grad_check([&] { return sum_all(mul(concat_last({a, b}), wc)); }, {a, b}) < 1e-3);

  Tensor r = Tensor::randn({4, 3}, rng);
  std::vector<int64_t> rows = {2, 0, 2};
  CHECK(grad_check([&] { return sum_all(index_select_rows(r, rows)); }, {r}) < 1e-3);

  Tensor y = Tensor::randn({6}, rng);
  Tensor xb = Tensor::randn({2, 3, 2}, rng);
  Tensor yb = Tensor::randn({3, 2}, rng);
  CHECK(grad_check([&] { return sum_all(add_bcast(xb, yb)); }, {xb, yb}) < 1e-3);
  (void)y;
}

TEST_CASE("model-specific primitives gradients") {
  Rng rng(59);
  Tensor v = Tensor::randn({2, 3}, rng, 2.0f);
  Tensor emb = Tensor::randn({5, 4}, rng, 0.5f);
  Tensor bias = Tensor::randn({5, 4}, rng, 0.5f);
  std::vector<float> scales = {0.01f, 0.1f, 1.0f, 10.0f, 100.0f};
  Tensor wse = Tensor::randn({2, 3, 4}, rng);
  CHECK(grad_check(
            [&] { return sum_all(mul(scalar_encode(v, emb, bias, scales, 1.1f), wse)); },
            {v, emb, bias}) < 1e-3);

  Tensor x = Tensor::randn({2, 3, 4}, rng);
  Tensor token = Tensor::randn({4}, rng);
  std::vector<uint8_t> mask = {1, 0, 1, 0, 0, 1};
  Tensor wm = Tensor::randn({2, 3, 4}, rng);
  CHECK(grad_check([&] { return sum_all(mul(mask_rows(x, mask, token), wm)); },
                   {x, token}) < 1e-3);

  Tensor row = Tensor::randn({4}, rng);
  Tensor wp = Tensor::randn({2, 4, 4}, rng);
  CHECK(grad_check([&] { return sum_all(mul(prepend_row(x, row), wp)); },
                   {x, row}) < 1e-3);

  Tensor feats = Tensor::randn({3, 5}, rng);
  Tensor wn = Tensor::randn({3, 5}, rng);
  CHECK(grad_check([&] { return sum_all(mul(l2_normalize_rows(feats, 1e-8f), wn)); },
                   {feats}) < 1e-3);

  Tensor vmat = Tensor::randn({4, 5}, rng);
  Tensor gvec = Tensor::randn({4}, rng);
  Tensor wr = Tensor::randn({4, 5}, rng);
  CHECK(grad_check([&] { return sum_all(mul(scale_rows(vmat, gvec), wr)); },
                   {vmat, gvec}) < 1e-3);
}

TEST_CASE("gradient oracle across many seeds") {
  // the per-op FD invariant from the module contract: >= 20 seeds
  for (uint64_t seed = 0; seed < 20; ++seed) {
    Rng rng(seed * 7919 + 1);
    Tensor a = Tensor::randn({3, 4}, rng, 0.4f);
    Tensor b = Tensor::randn({4, 6}, rng, 0.4f);
    Tensor g = Tensor::randn({6}, rng, 0.3f);
    Tensor be = Tensor::randn({6}, rng, 0.3f);
    auto loss = [&] {
      Tensor h = gelu(matmul(a, b));
      Tensor n = layer_norm(h, g, be);
      return sum_all(mul(softmax_last(n, 1.0), n));
    };
    CHECK(grad_check(loss, {a, b, g, be}) < 1e-3);
  }
}

TEST_CASE("single-use tape: second backward throws") {
  Rng rng(61);
  Tensor x = Tensor::randn({2, 2}, rng);
  x.set_requires_grad(true);
  Graph g;
  GraphScope scope(g);
  Tensor loss = sum_all(mul(x, x.clone()));
  g.backward(loss);
  CHECK_THROWS_AS(g.backward(loss), std::runtime_error);
}

TEST_CASE("no-grad scope suppresses recording") {
  Rng rng(67);
  Tensor x = Tensor::randn({2, 2}, rng);
  x.set_requires_grad(true);
  Graph g;
  GraphScope scope(g);
  {
    NoGradScope ng;
    Tensor y = mul(x, x.clone());
    (void)y;
  }
  CHECK(g.size() == 0);
}

TEST_CASE("ops are deterministic under a fixed seed") {
  auto run = [] {
    Rng rng(4242);
    Tensor x = Tensor::randn({4, 8}, rng);
    Tensor w = Tensor::randn({8, 8}, rng);
    Tensor y = dropout(gelu(matmul(x, w)), 0.2f, true, rng);
    return y;
  };
  Tensor a = run(), b = run();
  for (int64_t i = 0; i < a.size(); ++i) CHECK(a.data()[i] == b.data()[i]);
}

TEST_CASE("finite outputs for well-scaled inputs") {
  Rng rng(71);
  Tensor x = Tensor::randn({8, 16}, rng, 10.0f);
  CHECK(all_finite(softmax_last(x, 0.04)));
  CHECK(all_finite(log_softmax_last(x, 0.04)));
  CHECK(all_finite(gelu(x)));
  CHECK(all_finite(l2_normalize_rows(x, 1e-8f)));
}
