// SPDX-License-Identifier: Apache-2.0
#include <doctest.h>

#include <algorithm>
#include <cmath>

#include "gradcheck.hpp"
#include "melbench/ops.hpp"

using namespace melbench;
using testsupport::check_gradients;
using testsupport::random_tensor;

namespace {

// Weighted sum with fixed random weights so every output element matters.
Tensor<double> probe(const Tensor<double>& y, std::uint64_t seed = 77) {
  Rng rng(seed);
  auto w = random_tensor(y.shape(), rng);
  return sum(mul(y, w));
}

constexpr double kTol = 1e-4;

}  // namespace

TEST_CASE("matmul: identity and hand arithmetic") {
  Rng rng(0);
  auto a = random_tensor({3, 3}, rng);
  Tensor<double> eye({3, 3}, std::vector<double>{1, 0, 0, 0, 1, 0, 0, 0, 1});
  auto out = matmul(eye, a);
  for (std::size_t i = 0; i < 9; ++i) CHECK(out.data()[i] == a.data()[i]);

  Tensor<double> m({2, 2}, std::vector<double>{1, 2, 3, 4});
  Tensor<double> v({2, 1}, std::vector<double>{0, 1});
  auto r = matmul(m, v);
  CHECK(r.shape() == Shape{2, 1});
  CHECK(r.data()[0] == 2.0);
  CHECK(r.data()[1] == 4.0);
}

TEST_CASE("matmul: shape mismatch names both shapes") {
  Tensor<double> a({2, 3}), b({4, 2});
  try {
    matmul(a, b);
    FAIL("expected an error");
  } catch (const std::invalid_argument& e) {
    const std::string msg = e.what();
    CHECK(msg.find("[2x3]") != std::string::npos);
    CHECK(msg.find("[4x2]") != std::string::npos);
  }
}

TEST_CASE("matmul: grad of sum(AB) w.r.t. A is the row sums of B broadcast") {
  Rng rng(1);
  auto a = random_tensor({3, 4}, rng).set_requires_grad(true);
  auto b = random_tensor({4, 5}, rng).set_requires_grad(true);
  sum(matmul(a, b)).backward();
  for (std::size_t i = 0; i < 3; ++i) {
    for (std::size_t k = 0; k < 4; ++k) {
      double row = 0.0;
      for (std::size_t j = 0; j < 5; ++j) row += b.at({k, j});
      CHECK(a.grad()[i * 4 + k] == doctest::Approx(row).epsilon(1e-12));
    }
  }
  auto rep = check_gradients([&] { return probe(matmul(a, b)); }, {a, b});
  CHECK(rep.max_rel_error < kTol);
}

TEST_CASE("bmm and transpose gradients") {
  Rng rng(2);
  auto a = random_tensor({2, 3, 4}, rng).set_requires_grad(true);
  auto b = random_tensor({2, 4, 5}, rng).set_requires_grad(true);
  auto c = random_tensor({2, 5, 4}, rng).set_requires_grad(true);
  CHECK(check_gradients([&] { return probe(bmm(a, b)); }, {a, b}).max_rel_error < kTol);
  CHECK(check_gradients([&] { return probe(bmm(a, c, true)); }, {a, c}).max_rel_error < kTol);
  CHECK(check_gradients([&] { return probe(transpose(a)); }, {a}).max_rel_error < kTol);
  CHECK(transpose(a).shape() == Shape{2, 4, 3});
}

TEST_CASE("elementwise gradients") {
  Rng rng(3);
  auto a = random_tensor({3, 4}, rng).set_requires_grad(true);
  auto b = random_tensor({3, 4}, rng).set_requires_grad(true);
  auto bias = random_tensor({4}, rng).set_requires_grad(true);
  CHECK(check_gradients([&] { return probe(add(a, b)); }, {a, b}).max_rel_error < kTol);
  CHECK(check_gradients([&] { return probe(sub(a, b)); }, {a, b}).max_rel_error < kTol);
  CHECK(check_gradients([&] { return probe(mul(a, b)); }, {a, b}).max_rel_error < kTol);
  CHECK(check_gradients([&] { return probe(scale(a, -2.5)); }, {a}).max_rel_error < kTol);
  CHECK(check_gradients([&] { return probe(add_broadcast(a, bias)); }, {a, bias}).max_rel_error < kTol);
  CHECK(check_gradients([&] { return mean(a); }, {a}).max_rel_error < kTol);
}

TEST_CASE("softmax: uniform on zeros, stable at 1000, rows sum to one") {
  Tensor<double> z({1, 4}, 0.0);
  auto s = softmax(z, 1);
  for (double v : s.data()) CHECK(v == doctest::Approx(0.25));

  Tensor<double> big({1, 2}, std::vector<double>{1000.0, 0.0});
  auto t = softmax(big, 1);
  CHECK(t.data()[0] == 1.0);
  CHECK(t.data()[1] == doctest::Approx(0.0));
  CHECK(std::isfinite(t.data()[1]));

  Rng rng(4);
  for (int trial = 0; trial < 50; ++trial) {
    auto x = random_tensor({3, 7, 5}, rng, -1e3, 1e3);
    for (std::size_t axis = 0; axis < 3; ++axis) {
      auto y = softmax(x, axis);
      const auto& sh = x.shape();
      std::size_t inner = 1;
      for (std::size_t i = axis + 1; i < 3; ++i) inner *= sh[i];
      std::size_t outer = 1;
      for (std::size_t i = 0; i < axis; ++i) outer *= sh[i];
      for (std::size_t o = 0; o < outer; ++o) {
        for (std::size_t in = 0; in < inner; ++in) {
          double total = 0.0;
          for (std::size_t k = 0; k < sh[axis]; ++k) {
            const double v = y.data()[(o * sh[axis] + k) * inner + in];
            CHECK(v >= 0.0);
            total += v;
          }
          CHECK(std::abs(total - 1.0) < 1e-6);
        }
      }
    }
  }
  CHECK_THROWS_AS(softmax(Tensor<double>({2, 2}), 2), std::out_of_range);
}

TEST_CASE("softmax: Jacobian-vector products match finite differences") {
  Rng rng(5);
  for (int trial = 0; trial < 10; ++trial) {
    auto x = random_tensor({5}, rng, -3.0, 3.0).set_requires_grad(true);
    CHECK(check_gradients([&] { return probe(softmax(x, 0), 100 + trial); }, {x}).max_rel_error < kTol);
  }
  auto x3 = random_tensor({2, 3, 4}, rng).set_requires_grad(true);
  CHECK(check_gradients([&] { return probe(softmax(x3, 1)); }, {x3}).max_rel_error < kTol);
}

TEST_CASE("gelu: exact erf form") {
  Tensor<double> x({3}, std::vector<double>{0.0, 10.0, -1.0});
  auto y = gelu(x);
  CHECK(y.data()[0] == 0.0);
  CHECK(std::abs(y.data()[1] - 10.0) < 1e-6);
  CHECK(y.data()[2] == doctest::Approx(-1.0 * 0.5 * std::erfc(1.0 / std::sqrt(2.0))).epsilon(1e-14));

  std::vector<double> grid;
  for (int i = 0; i <= 60; ++i) grid.push_back(-3.0 + 0.1 * i);
  Tensor<double> g({grid.size()}, grid);
  g.set_requires_grad(true);
  auto rep = check_gradients([&] { return sum(gelu(g)); }, {g}, grid.size());
  CHECK(rep.probed == grid.size());
  CHECK(rep.max_rel_error < kTol);
}

TEST_CASE("shape ops and their gradients") {
  Rng rng(6);
  auto a = random_tensor({2, 3, 4}, rng).set_requires_grad(true);
  auto b = random_tensor({2, 2, 4}, rng).set_requires_grad(true);
  auto row = random_tensor({3, 4}, rng).set_requires_grad(true);
  CHECK(reshape(a, {6, 4}).shape() == Shape{6, 4});
  CHECK_THROWS(reshape(a, {5, 5}));
  CHECK(flatten(a).shape() == Shape{2, 12});
  CHECK(concat<double>({a, b}, 1).shape() == Shape{2, 5, 4});
  CHECK(narrow(a, 2, 1, 2).shape() == Shape{2, 3, 2});
  CHECK(repeat_batch(row, 3).shape() == Shape{3, 3, 4});
  CHECK(check_gradients([&] { return probe(reshape(a, {4, 6})); }, {a}).max_rel_error < kTol);
  CHECK(check_gradients([&] { return probe(concat<double>({a, b}, 1)); }, {a, b}).max_rel_error < kTol);
  CHECK(check_gradients([&] { return probe(narrow(a, 2, 1, 2)); }, {a}).max_rel_error < kTol);
  CHECK(check_gradients([&] { return probe(repeat_batch(row, 3)); }, {row}).max_rel_error < kTol);
  auto c = concat<double>({a, b}, 1);
  CHECK(c.at({1, 4, 3}) == b.at({1, 1, 3}));
  CHECK(c.at({0, 2, 0}) == a.at({0, 2, 0}));
}

TEST_CASE("shape algebra on random shapes") {
  Rng rng(7);
  for (int trial = 0; trial < 200; ++trial) {
    const std::size_t B = 1 + rng.uniform_int(3), m = 1 + rng.uniform_int(5), k = 1 + rng.uniform_int(5),
                      n = 1 + rng.uniform_int(5);
    Tensor<float> a({B, m, k}), b({k, n}), c({B, k, n});
    CHECK(matmul(a, b).shape() == Shape{B, m, n});
    CHECK(bmm(a, c).shape() == Shape{B, m, n});
    CHECK(transpose(a).shape() == Shape{B, k, m});
    CHECK(softmax(a, 1).shape() == a.shape());
    CHECK(gelu(a).shape() == a.shape());
    const std::size_t H = 2 + rng.uniform_int(6), W = 2 + rng.uniform_int(6), pool = 1 + rng.uniform_int(2);
    Tensor<float> x({B, 2, H, W}), w({3, 2, 3, 3}), bias({3});
    CHECK(conv2d(x, w, bias, 1).shape() == Shape{B, 3, H, W});
    CHECK(maxpool2d(x, pool).shape() == Shape{B, 2, H / pool, W / pool});
  }
}

TEST_CASE("conv2d: identity kernel and all-ones counts") {
  Rng rng(8);
  auto x = random_tensor({1, 1, 4, 5}, rng);
  Tensor<double> w({1, 1, 1, 1}, 1.0), b({1}, 0.0);
  auto y = conv2d(x, w, b, 0);
  for (std::size_t i = 0; i < x.numel(); ++i) CHECK(y.data()[i] == x.data()[i]);

  Tensor<double> ones({1, 1, 3, 3}, 1.0), k3({1, 1, 3, 3}, 1.0);
  auto z = conv2d(ones, k3, b, 1);
  CHECK(z.shape() == Shape{1, 1, 3, 3});
  CHECK(z.at({0, 0, 1, 1}) == 9.0);
  CHECK(z.at({0, 0, 0, 0}) == 4.0);
  CHECK(z.at({0, 0, 2, 2}) == 4.0);
  CHECK(z.at({0, 0, 0, 1}) == 6.0);

  Tensor<double> two_ch({1, 2, 3, 3});
  CHECK_THROWS(conv2d(two_ch, k3, b, 1));
}

TEST_CASE("conv2d gradients") {
  Rng rng(9);
  auto x = random_tensor({1, 1, 5, 5}, rng).set_requires_grad(true);
  auto w = random_tensor({1, 1, 3, 3}, rng).set_requires_grad(true);
  auto b = random_tensor({1}, rng).set_requires_grad(true);
  CHECK(check_gradients([&] { return probe(conv2d(x, w, b, 1)); }, {w, x, b}, 25).max_rel_error < kTol);
  auto x2 = random_tensor({2, 3, 4, 5}, rng).set_requires_grad(true);
  auto w2 = random_tensor({4, 3, 3, 3}, rng).set_requires_grad(true);
  auto b2 = random_tensor({4}, rng).set_requires_grad(true);
  CHECK(check_gradients([&] { return probe(conv2d(x2, w2, b2, 1)); }, {x2, w2, b2}).max_rel_error < kTol);
  CHECK(check_gradients([&] { return probe(conv2d(x2, w2, b2, 0)); }, {x2, w2, b2}).max_rel_error < kTol);
}

TEST_CASE("maxpool2d: values, floor shape and argmax routing") {
  Tensor<double> c({1, 1, 5, 5}, 3.0);
  auto pc = maxpool2d(c, 2);
  CHECK(pc.shape() == Shape{1, 1, 2, 2});
  for (double v : pc.data()) CHECK(v == 3.0);

  Tensor<double> s({1, 1, 2, 2}, std::vector<double>{1, 2, 3, 4});
  CHECK(maxpool2d(s, 2).item() == 4.0);

  // Exhaustive check: exactly one 1 per window, at the first maximum.
  Rng rng(10);
  for (int trial = 0; trial < 200; ++trial) {
    Tensor<double> x({1, 1, 4, 4});
    for (auto& v : x.mutable_data()) v = static_cast<double>(rng.uniform_int(3));  // many ties
    x.set_requires_grad(true);
    sum(maxpool2d(x, 2)).backward();
    for (std::size_t wr = 0; wr < 2; ++wr) {
      for (std::size_t wc = 0; wc < 2; ++wc) {
        double best = -1.0;
        std::size_t best_idx = 0;
        for (std::size_t r = 0; r < 2; ++r) {
          for (std::size_t cc = 0; cc < 2; ++cc) {
            const std::size_t idx = (2 * wr + r) * 4 + 2 * wc + cc;
            if (x.data()[idx] > best) {
              best = x.data()[idx];
              best_idx = idx;
            }
          }
        }
        for (std::size_t r = 0; r < 2; ++r) {
          for (std::size_t cc = 0; cc < 2; ++cc) {
            const std::size_t idx = (2 * wr + r) * 4 + 2 * wc + cc;
            CHECK(x.grad()[idx] == (idx == best_idx ? 1.0 : 0.0));
          }
        }
      }
    }
  }
}

TEST_CASE("batch norm: normalization, shift, running stats, errors") {
  Rng rng(11);
  auto x = random_tensor({8, 3, 4, 4}, rng, -5.0, 9.0);
  Tensor<double> gamma({3}, 1.0), beta({3}, 0.0);
  RunningStats<double> stats{Tensor<double>({3}, 0.0), Tensor<double>({3}, 1.0)};
  auto y = batch_norm(x, gamma, beta, stats, true);
  for (std::size_t c = 0; c < 3; ++c) {
    double m = 0.0, sq = 0.0;
    std::size_t n = 0;
    for (std::size_t b = 0; b < 8; ++b) {
      for (std::size_t i = 0; i < 16; ++i) {
        const double v = y.data()[(b * 3 + c) * 16 + i];
        m += v;
        sq += v * v;
        ++n;
      }
    }
    m /= n;
    CHECK(std::abs(m) < 1e-5);
    CHECK(std::abs(sq / n - m * m - 1.0) < 1e-3);
  }
  // Running stats moved towards the batch statistics with momentum 0.1.
  double batch_mean0 = 0.0;
  for (std::size_t b = 0; b < 8; ++b)
    for (std::size_t i = 0; i < 16; ++i) batch_mean0 += x.data()[(b * 3) * 16 + i];
  batch_mean0 /= 128.0;
  CHECK(stats.mean.data()[0] == doctest::Approx(0.1 * batch_mean0).epsilon(1e-12));

  Tensor<double> beta5({3}, 5.0);
  auto y5 = batch_norm(x, gamma, beta5, stats, true);
  double total = 0.0;
  for (double v : y5.data()) total += v;
  CHECK(total / y5.numel() == doctest::Approx(5.0).epsilon(1e-9));

  // Eval mode uses the stored statistics.
  RunningStats<double> fixed{Tensor<double>({3}, 1.0), Tensor<double>({3}, 4.0)};
  auto ye = batch_norm(x, gamma, beta, fixed, false);
  CHECK(ye.data()[0] == doctest::Approx((x.data()[0] - 1.0) / std::sqrt(4.0 + 1e-5)).epsilon(1e-12));

  Tensor<double> single({1, 3, 2, 2});
  CHECK_THROWS(batch_norm(single, gamma, beta, stats, true));
  CHECK_NOTHROW(batch_norm(single, gamma, beta, stats, false));
}

TEST_CASE("batch norm and layer norm gradients") {
  Rng rng(12);
  auto x = random_tensor({4, 3, 2, 2}, rng).set_requires_grad(true);
  auto gamma = random_tensor({3}, rng, 0.5, 1.5).set_requires_grad(true);
  auto beta = random_tensor({3}, rng).set_requires_grad(true);
  RunningStats<double> stats{Tensor<double>({3}, 0.0), Tensor<double>({3}, 1.0)};
  auto rep = check_gradients([&] { return probe(batch_norm(x, gamma, beta, stats, true)); }, {x, gamma, beta});
  CHECK(rep.max_rel_error < 1e-3);
  // [B, features] input, as used by the CNN head.
  auto x2 = random_tensor({5, 3}, rng).set_requires_grad(true);
  CHECK(check_gradients([&] { return probe(batch_norm(x2, gamma, beta, stats, true)); }, {x2, gamma, beta})
            .max_rel_error < 1e-3);

  auto x3 = random_tensor({2, 4, 6}, rng).set_requires_grad(true);
  auto lg = random_tensor({6}, rng, 0.5, 1.5).set_requires_grad(true);
  auto lb = random_tensor({6}, rng).set_requires_grad(true);
  CHECK(check_gradients([&] { return probe(layer_norm(x3, lg, lb)); }, {x3, lg, lb}).max_rel_error < kTol);
}

TEST_CASE("layer norm normalizes the last axis") {
  Rng rng(13);
  auto x = random_tensor({3, 8}, rng, -4.0, 4.0);
  Tensor<double> g({8}, 1.0), b({8}, 0.0);
  auto y = layer_norm(x, g, b);
  for (std::size_t r = 0; r < 3; ++r) {
    double m = 0.0, sq = 0.0;
    for (std::size_t c = 0; c < 8; ++c) m += y.data()[r * 8 + c];
    m /= 8;
    for (std::size_t c = 0; c < 8; ++c) sq += (y.data()[r * 8 + c] - m) * (y.data()[r * 8 + c] - m);
    CHECK(std::abs(m) < 1e-9);
    CHECK(std::abs(sq / 8 - 1.0) < 1e-3);
  }
}

TEST_CASE("dropout: identities, rate and errors") {
  Rng rng(14);
  auto x = random_tensor({100000}, rng, 0.5, 1.0);
  auto same = dropout(x, 0.0, rng, true);
  for (std::size_t i = 0; i < 100; ++i) CHECK(same.data()[i] == x.data()[i]);
  auto eval = dropout(x, 0.7, rng, false);
  for (std::size_t i = 0; i < 100; ++i) CHECK(eval.data()[i] == x.data()[i]);

  Rng seeded(2024);
  auto y = dropout(x, 0.2, seeded, true);
  std::size_t zeros = 0;
  for (std::size_t i = 0; i < y.numel(); ++i) {
    if (y.data()[i] == 0.0) ++zeros;
    else CHECK(y.data()[i] == doctest::Approx(x.data()[i] / 0.8).epsilon(1e-12));
  }
  const double frac = static_cast<double>(zeros) / y.numel();
  CHECK(frac >= 0.19);
  CHECK(frac <= 0.21);
  CHECK_THROWS(dropout(x, 1.0, rng, true));

  auto xs = random_tensor({20}, rng).set_requires_grad(true);
  // Re-seed inside the closure so every evaluation uses the same mask.
  CHECK(check_gradients(
            [&] {
              Rng r(5);
              return probe(dropout(xs, 0.3, r, true));
            },
            {xs})
            .max_rel_error < kTol);
}

TEST_CASE("cross entropy and bce: values and gradients") {
  Tensor<double> uniform({2, 5}, 0.0);
  std::vector<int> labels5{0, 3};
  CHECK(cross_entropy(uniform, labels5).item() == doctest::Approx(std::log(5.0)).epsilon(1e-12));
  Tensor<double> zero({3, 1}, 0.0);
  std::vector<int> labels2{0, 1, 1};
  CHECK(bce_with_logits(zero, labels2).item() == doctest::Approx(std::log(2.0)).epsilon(1e-12));

  Rng rng(15);
  auto logits = random_tensor({4, 5}, rng, -3.0, 3.0).set_requires_grad(true);
  std::vector<int> labels{1, 4, 0, 2};
  cross_entropy(logits, labels).backward();
  auto p = softmax(logits.detach(), 1);
  for (std::size_t b = 0; b < 4; ++b) {
    for (std::size_t c = 0; c < 5; ++c) {
      const double expected = (p.at({b, c}) - (static_cast<int>(c) == labels[b] ? 1.0 : 0.0)) / 4.0;
      CHECK(logits.grad()[b * 5 + c] == doctest::Approx(expected).epsilon(1e-10));
    }
  }
  CHECK(check_gradients([&] { return cross_entropy(logits, labels); }, {logits}).max_rel_error < kTol);

  auto bl = random_tensor({6, 1}, rng, -4.0, 4.0).set_requires_grad(true);
  std::vector<int> bin{0, 1, 1, 0, 1, 0};
  CHECK(check_gradients([&] { return bce_with_logits(bl, bin); }, {bl}).max_rel_error < kTol);

  // Large logits stay finite.
  Tensor<double> huge({1, 2}, std::vector<double>{1000.0, -1000.0});
  std::vector<int> wrong{1};
  CHECK(cross_entropy(huge, wrong).item() == doctest::Approx(2000.0));
  Tensor<double> hb({1, 1}, -800.0);
  std::vector<int> one{1};
  CHECK(bce_with_logits(hb, one).item() == doctest::Approx(800.0));

  std::vector<int> bad{5, 0};
  CHECK_THROWS(cross_entropy(uniform, bad));
  std::vector<int> bad_bin{2, 0, 0};
  CHECK_THROWS(bce_with_logits(zero, bad_bin));
}
