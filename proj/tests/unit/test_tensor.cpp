// SPDX-License-Identifier: Apache-2.0
#include <doctest.h>

#include <cmath>
#include <cstring>
#include <limits>

#include "melbench/checkpoint.hpp"
#include "melbench/error.hpp"
#include "melbench/nn.hpp"
#include "melbench/ops.hpp"
#include "melbench/rng.hpp"
#include "melbench/tensor.hpp"
#include "tempdir.hpp"

using namespace melbench;

TEST_CASE("tensor construction keeps product(shape) == len(data)") {
  Tensor<float> t({2, 3, 4}, 1.5f);
  CHECK(t.numel() == 24);
  CHECK(t.rank() == 3);
  CHECK(t.dim(2) == 4);
  CHECK_FALSE(t.has_grad());
  CHECK_THROWS(Tensor<float>({2, 2}, std::vector<float>{1, 2, 3}));
}

TEST_CASE("backward of sum(x) is all ones and accumulates on a second call") {
  Tensor<double> x({2, 3}, std::vector<double>{1, 2, 3, 4, 5, 6});
  x.set_requires_grad(true);
  sum(x).backward();
  for (double g : x.grad()) CHECK(g == 1.0);
  sum(x).backward();
  for (double g : x.grad()) CHECK(g == 2.0);
  x.zero_grad();
  for (double g : x.grad()) CHECK(g == 0.0);
}

TEST_CASE("backward of sum(x*x) is 2x") {
  Tensor<double> x({4}, std::vector<double>{-1.5, 0.0, 2.0, 3.25});
  x.set_requires_grad(true);
  sum(mul(x, x)).backward();
  for (std::size_t i = 0; i < 4; ++i) CHECK(x.grad()[i] == 2.0 * x.data()[i]);
}

TEST_CASE("backward on a non-scalar is an error") {
  Tensor<double> x({3}, 1.0);
  x.set_requires_grad(true);
  CHECK_THROWS(scale(x, 2.0).backward());
}

TEST_CASE("leaves without requires_grad never receive gradients") {
  Tensor<double> a({2}, std::vector<double>{1, 2});
  Tensor<double> b({2}, std::vector<double>{3, 4});
  b.set_requires_grad(true);
  sum(mul(a, b)).backward();
  CHECK_FALSE(a.has_grad());
  CHECK(b.grad()[0] == 1.0);
  CHECK(b.grad()[1] == 2.0);
}

TEST_CASE("no-grad guard disables the tape") {
  Tensor<double> x({2}, 1.0);
  x.set_requires_grad(true);
  Tensor<double> y;
  {
    NoGradGuard guard;
    CHECK_FALSE(grad_enabled());
    y = scale(x, 3.0);
  }
  CHECK(grad_enabled());
  CHECK(y.is_leaf());
  CHECK_FALSE(y.requires_grad());
}

TEST_CASE("detach and clone") {
  Tensor<float> x({2}, std::vector<float>{1, 2});
  auto c = x.clone();
  CHECK_FALSE(c.same_storage(x));
  c.mutable_data()[0] = 9;
  CHECK(x.data()[0] == 1.0f);
  Tensor<float> alias = x;
  CHECK(alias.same_storage(x));
}

TEST_CASE("rng: same seed gives the same sequence, derive and split are independent of consumption") {
  Rng a(42), b(42);
  for (int i = 0; i < 100; ++i) CHECK(a.next_u64() == b.next_u64());
  Rng c(42);
  auto child_before = c.split(3);
  c.next_u64();
  auto child_after = c.split(3);
  CHECK(child_before.next_u64() == child_after.next_u64());
  auto d1 = Rng::derive(5, {1, 2});
  auto d2 = Rng::derive(5, {1, 2});
  auto d3 = Rng::derive(5, {2, 1});
  const auto v1 = d1.next_u64();
  CHECK(v1 == d2.next_u64());
  CHECK(v1 != d3.next_u64());
}

TEST_CASE("rng distributions stay in range") {
  Rng rng(1);
  for (int i = 0; i < 10000; ++i) {
    const double u = rng.uniform();
    CHECK(u >= 0.0);
    CHECK(u < 1.0);
    CHECK(rng.uniform_int(7) < 7);
    const double x = rng.uniform(-2.0, 3.0);
    CHECK(x >= -2.0);
    CHECK(x < 3.0);
  }
  double mean = 0.0, sq = 0.0;
  const int n = 200000;
  for (int i = 0; i < n; ++i) {
    const double z = rng.normal();
    mean += z;
    sq += z * z;
  }
  mean /= n;
  CHECK(std::abs(mean) < 0.01);
  CHECK(std::abs(sq / n - 1.0) < 0.02);
}

TEST_CASE("dropout masks and initializations are bit-identical under the same seed") {
  Tensor<float> x({1000}, 1.0f);
  Rng r1(9), r2(9);
  auto a = dropout(x, 0.3, r1, true);
  auto b = dropout(x, 0.3, r2, true);
  CHECK(std::memcmp(a.data().data(), b.data().data(), a.numel() * sizeof(float)) == 0);
  Rng i1(3), i2(3);
  auto w1 = kaiming_uniform<float>({16, 8}, 16, i1);
  auto w2 = kaiming_uniform<float>({16, 8}, 16, i2);
  CHECK(std::memcmp(w1.data().data(), w2.data().data(), w1.numel() * sizeof(float)) == 0);
}

TEST_CASE("kaiming uniform respects its bound") {
  Rng rng(0);
  auto w = kaiming_uniform<double>({64, 32}, 64, rng);
  const double bound = std::sqrt(6.0 / 64.0);
  for (double v : w.data()) CHECK(std::abs(v) <= bound);
}

TEST_CASE("checkpoint round trip is bit exact") {
  Checkpoint ckpt;
  Rng rng(11);
  NamedArray a{"layer.weight", {3, 4}, {}};
  for (int i = 0; i < 12; ++i) a.values.push_back(static_cast<float>(rng.normal()));
  a.values[0] = std::numeric_limits<float>::denorm_min();
  a.values[1] = -0.0f;
  a.values[2] = std::numeric_limits<float>::max();
  NamedArray b{"bias", {4}, {1, 2, 3, 4}};
  ckpt.arrays = {a, b};
  ckpt.metadata["note"] = "x";

  testsupport::TempDir dir("ckpt");
  write_checkpoint(dir / "m.ckpt", ckpt);
  auto back = read_checkpoint(dir / "m.ckpt");
  REQUIRE(back.arrays.size() == 2);
  CHECK(back.arrays[0].name == "layer.weight");
  CHECK(back.arrays[0].shape == Shape{3, 4});
  CHECK(std::memcmp(back.arrays[0].values.data(), a.values.data(), 12 * sizeof(float)) == 0);
  CHECK(back.metadata["note"] == "x");
  CHECK(serialize_checkpoint(back) == serialize_checkpoint(ckpt));
  CHECK(read_checkpoint_header(dir / "m.ckpt")["arrays"].size() == 2);
}

TEST_CASE("corrupt checkpoints are rejected") {
  CHECK_THROWS_AS(parse_checkpoint("not a checkpoint"), InputError);
  Checkpoint ckpt;
  ckpt.arrays = {NamedArray{"w", {8}, std::vector<float>(8, 1.0f)}};
  auto bytes = serialize_checkpoint(ckpt);
  CHECK_THROWS_AS(parse_checkpoint(std::string_view(bytes).substr(0, bytes.size() - 4)), InputError);
}

TEST_CASE("parameter set save and load") {
  Rng rng(2);
  ParameterSet<float> p;
  Linear<float> lin(p, "fc", 3, 2, rng);
  BatchNorm<float> bn(p, "bn", 2);
  CHECK(p.parameter_count() == 3 * 2 + 2 + 2 + 2);
  CHECK(p.trainable().size() == 4);
  auto ckpt = p.to_checkpoint();

  Rng rng2(99);
  ParameterSet<float> q;
  Linear<float> lin2(q, "fc", 3, 2, rng2);
  BatchNorm<float> bn2(q, "bn", 2);
  q.load(ckpt);
  for (std::size_t i = 0; i < 6; ++i) CHECK(lin2.weight.data()[i] == lin.weight.data()[i]);

  ParameterSet<float> wrong;
  Linear<float> lin3(wrong, "fc", 4, 2, rng2);
  CHECK_THROWS(wrong.load(ckpt));
}
