// SPDX-License-Identifier: Apache-2.0
#include <doctest.h>

#include <cmath>
#include <cstring>
#include <limits>
#include <map>

#include "gradcheck.hpp"
#include "melbench/commands.hpp"
#include "melbench/error.hpp"
#include "melbench/training.hpp"
#include "model_check.hpp"

using namespace melbench;
using testsupport::tiny_config;

namespace {

// Two classes that differ by which mel band carries energy.
struct Toy {
  Manifest manifest;
  std::vector<MelSpectrogram> specs;
  TrainData data() const { return TrainData{&manifest, specs, 24}; }
};

Toy make_toy(std::size_t n_train0, std::size_t n_train1, std::size_t n_devel, std::uint64_t seed = 1) {
  std::string csv = "path,label,split\n";
  std::vector<int> labels;
  auto add = [&](int label, const char* split, std::size_t n) {
    for (std::size_t i = 0; i < n; ++i) {
      csv += std::string(split) + std::to_string(label) + "_" + std::to_string(i) + ",c" + std::to_string(label) + "," + split + "\n";
      labels.push_back(label);
    }
  };
  add(0, "train", n_train0);
  add(1, "train", n_train1);
  add(0, "devel", n_devel);
  add(1, "devel", n_devel);
  Toy toy;
  toy.manifest = parse_manifest(csv);
  Rng rng(seed);
  for (int label : labels) {
    MelSpectrogram s;
    s.n_mels = 32;
    s.n_frames = 30;
    s.values.resize(32 * 30);
    for (std::size_t m = 0; m < 32; ++m) {
      const bool hot = label == 0 ? (m >= 4 && m < 10) : (m >= 20 && m < 26);
      for (std::size_t t = 0; t < 30; ++t) s.at(m, t) = static_cast<float>((hot ? 0.8 : 0.2) + 0.1 * rng.uniform());
    }
    toy.specs.push_back(s);
  }
  return toy;
}

TrainConfig quick_config(std::size_t epochs) {
  TrainConfig c;
  c.epochs = epochs;
  c.batch_size = 8;
  c.lr = 1e-3;
  c.task = Task::binary;
  c.seed = 5;
  return c;
}

}  // namespace

TEST_CASE("adamw: zero gradient and zero decay leaves parameters unchanged") {
  ParameterSet<double> p;
  auto w = p.add("w", Tensor<double>({3}, std::vector<double>{1.0, -2.0, 3.0}));
  AdamW<double> opt(p, {0.9, 0.999, 1e-8, 0.0});
  w.mutable_grad();
  for (int i = 0; i < 10; ++i) opt.step(1e-2);
  CHECK(w.data()[0] == 1.0);
  CHECK(w.data()[1] == -2.0);
  CHECK(opt.steps() == 10);
  CHECK(opt.first_moment(0).size() == 3);
  CHECK(opt.second_moment(0).size() == 3);
}

TEST_CASE("adamw: constant gradient approaches lr * sign(g)") {
  for (double g : {0.37, -4.0}) {
    ParameterSet<double> p;
    auto w = p.add("w", Tensor<double>::scalar(0.5));
    AdamW<double> opt(p, {0.9, 0.999, 1e-8, 0.0});
    const double lr = 1e-3;
    double previous = w.item();
    double step = 0.0;
    for (int i = 0; i < 1000; ++i) {
      w.mutable_grad()[0] = g;
      opt.step(lr);
      step = w.item() - previous;
      previous = w.item();
    }
    const double expected = -lr * (g > 0 ? 1.0 : -1.0);
    CHECK(std::abs(step - expected) <= 0.01 * lr);
  }
}

TEST_CASE("adamw: decay without gradient is a pure exponential shrink") {
  ParameterSet<double> p;
  auto w = p.add("w", Tensor<double>({2}, std::vector<double>{2.0, -1.0}));
  const double lr = 0.1, wd = 0.05;
  AdamW<double> opt(p, {0.9, 0.999, 1e-8, wd});
  w.mutable_grad();
  for (int t = 0; t < 25; ++t) opt.step(lr);
  CHECK(w.data()[0] == doctest::Approx(2.0 * std::pow(1.0 - lr * wd, 25)).epsilon(1e-12));
  CHECK(w.data()[1] == doctest::Approx(-1.0 * std::pow(1.0 - lr * wd, 25)).epsilon(1e-12));
}

TEST_CASE("adamw: buffers are skipped and a NaN gradient names the parameter") {
  ParameterSet<float> p;
  p.add("ok", Tensor<float>({2}, 1.0f));
  auto bad = p.add("layer.bad", Tensor<float>({2}, 1.0f));
  auto buffer = p.add("stats", Tensor<float>({2}, 3.0f), false);
  AdamW<float> opt(p, {0.9, 0.999, 1e-8, 0.1});
  bad.mutable_grad()[1] = std::numeric_limits<float>::quiet_NaN();
  try {
    opt.step(1e-3);
    FAIL("expected NumericError");
  } catch (const NumericError& e) {
    CHECK(std::string(e.what()).find("layer.bad") != std::string::npos);
  }
  bad.zero_grad();
  opt.step(1e-3);
  CHECK(buffer.data()[0] == 3.0f);
}

TEST_CASE("task losses at the reference points and their gradient") {
  Tensor<double> uniform({3, 5}, 0.0);
  std::vector<int> labels{0, 2, 4};
  CHECK(task_loss(uniform, labels, Task::multiclass).item() == doctest::Approx(std::log(5.0)).epsilon(1e-12));
  Tensor<double> zero({2, 1}, 0.0);
  std::vector<int> bin{0, 1};
  CHECK(task_loss(zero, bin, Task::binary).item() == doctest::Approx(std::log(2.0)).epsilon(1e-12));
  std::vector<int> out_of_range{0, 5, 1};
  CHECK_THROWS(task_loss(uniform, out_of_range, Task::multiclass));

  Rng rng(1);
  auto logits = testsupport::random_tensor({2, 5}, rng).set_requires_grad(true);
  std::vector<int> two{3, 1};
  CHECK(testsupport::check_gradients([&] { return task_loss(logits, two, Task::multiclass); }, {logits})
            .max_rel_error < 1e-4);
}

TEST_CASE("predictions and scores") {
  Tensor<double> bin({3, 1}, std::vector<double>{-0.1, 0.0, 2.0});
  CHECK(predict_classes(bin, Task::binary) == std::vector<int>{0, 1, 1});
  auto s = positive_scores(bin, Task::binary);
  CHECK(s[1] == doctest::Approx(0.5));
  Tensor<double> multi({2, 3}, std::vector<double>{1, 5, 2, 9, 0, 0});
  CHECK(predict_classes(multi, Task::multiclass) == std::vector<int>{1, 0});
}

TEST_CASE("lr_at: constant, exponential, and the near-one limit") {
  TrainConfig c;
  c.lr = 0.01;
  for (std::size_t k : {0, 1, 50, 199}) CHECK(lr_at(k, c) == 0.01);
  c.scheduler = Scheduler::exponential;
  c.scheduler_base = 0.9;
  CHECK(lr_at(2, c) == doctest::Approx(0.81 * 0.01).epsilon(1e-12));
  const double eps = 1e-6;
  c.scheduler_base = 1.0 - eps;
  for (std::size_t k : {1, 10, 200}) CHECK(std::abs(lr_at(k, c) - c.lr) <= eps * static_cast<double>(k) * c.lr);
}

TEST_CASE("train config validation") {
  TrainConfig c;
  CHECK(c.validate().empty());
  c.scheduler = Scheduler::exponential;
  c.scheduler_base = 0.5;
  c.batch_size = 1;
  c.lr = 0.0;
  CHECK(c.validate().size() == 3);
  c.scheduler_base = 0.88;
  c.batch_size = 2;
  c.lr = 1e-4;
  CHECK(c.validate().empty());
}

TEST_CASE("batch sizes keep the last partial batch unless it has one sample") {
  CHECK(batch_sizes(10, 4) == std::vector<std::size_t>{4, 4, 2});
  CHECK(batch_sizes(9, 4) == std::vector<std::size_t>{4, 5});
  CHECK(batch_sizes(8, 4) == std::vector<std::size_t>{4, 4});
  CHECK(batch_sizes(3, 8) == std::vector<std::size_t>{3});
  CHECK(batch_sizes(0, 8).empty());
}

TEST_CASE("train with zero epochs returns the initialized model") {
  auto toy = make_toy(6, 3, 2);
  Rng rng(0);
  auto model = make_model<float>(tiny_config(Arch::cnn, 1), rng);
  const auto before = model->params().snapshot();
  auto result = train(*model, toy.data(), quick_config(0), AugmentParams{});
  CHECK(result.history.empty());
  CHECK(model->params().snapshot() == before);
  CHECK(serialize_checkpoint(result.best_checkpoint) == serialize_checkpoint(model->params().to_checkpoint()));
}

TEST_CASE("train is deterministic for a fixed seed") {
  auto toy = make_toy(10, 4, 3);
  AugmentParams aug{0.2, 0.1, 0.2, 0.3};
  std::vector<std::string> runs[2];
  std::string ckpts[2];
  for (int r = 0; r < 2; ++r) {
    Rng rng(Rng::derive(5, {0}));
    auto model = make_model<float>(tiny_config(Arch::cnn, 1), rng);
    auto result = train(*model, toy.data(), quick_config(3), aug);
    for (const auto& h : result.history) runs[r].push_back(format_history_line(h));
    ckpts[r] = serialize_checkpoint(result.best_checkpoint);
  }
  CHECK(runs[0].size() == 3);
  CHECK(runs[0] == runs[1]);
  CHECK(ckpts[0] == ckpts[1]);
}

TEST_CASE("evaluation inputs are never augmented") {
  auto toy = make_toy(8, 4, 3);
  AugmentParams aug{0.5, 0.5, 0.5, 0.5};
  std::map<std::size_t, std::uint64_t> first_seen;
  std::size_t calls = 0;
  bool stable = true;
  TrainHooks hooks;
  hooks.on_eval_input = [&](std::size_t idx, const MelSpectrogram& s) {
    ++calls;
    const std::string_view bytes(reinterpret_cast<const char*>(s.values.data()), s.values.size() * sizeof(float));
    const auto h = fnv1a64(bytes);
    auto [it, inserted] = first_seen.emplace(idx, h);
    if (!inserted) stable = stable && it->second == h;
    CHECK(toy.manifest.samples()[idx].split == Split::devel);
  };
  Rng rng(0);
  auto model = make_model<float>(tiny_config(Arch::cnn, 1), rng);
  train(*model, toy.data(), quick_config(4), aug, &hooks);
  CHECK(calls == 4 * 6);
  CHECK(stable);
  // The recorded inputs are the plain centre crops.
  for (auto [idx, h] : first_seen) {
    Rng unused(0);
    auto expected = crop_or_pad(toy.specs[idx], 24, unused, false);
    CHECK(fnv1a64(std::string_view(reinterpret_cast<const char*>(expected.values.data()),
                                   expected.values.size() * sizeof(float))) == h);
  }
}

TEST_CASE("reloading the best checkpoint reproduces the recorded devel UAR") {
  auto toy = make_toy(12, 5, 4);
  Rng rng(3);
  auto cfg = tiny_config(Arch::cnn, 1);
  auto model = make_model<float>(cfg, rng);
  auto tc = quick_config(5);
  auto result = train(*model, toy.data(), tc, AugmentParams{0.1, 0.1, 0.1, 0.1});
  CHECK(result.best_epoch >= 1);
  CHECK(result.best_devel_uar == result.history[result.best_epoch - 1].devel_uar);
  for (const auto& h : result.history) CHECK(h.devel_uar <= result.best_devel_uar);

  Rng other(99);
  auto fresh = make_model<float>(cfg, other);
  fresh->params().load(parse_checkpoint(serialize_checkpoint(result.best_checkpoint)));
  CHECK(evaluate(*fresh, toy.data(), Split::devel, tc).uar == result.best_devel_uar);
  CHECK(evaluate(*model, toy.data(), Split::devel, tc).uar == result.best_devel_uar);
}

TEST_CASE("training loss on one repeated batch does not increase over 50 steps") {
  auto toy = make_toy(4, 4, 1);
  std::vector<const MelSpectrogram*> ptrs;
  std::vector<int> labels;
  std::vector<MelSpectrogram> crops;
  for (std::size_t i : toy.manifest.indices(Split::train)) {
    Rng unused(0);
    crops.push_back(crop_or_pad(toy.specs[i], 24, unused, false));
    labels.push_back(toy.manifest.samples()[i].label);
  }
  for (const auto& c : crops) ptrs.push_back(&c);
  for (Arch arch : {Arch::cnn, Arch::ssc, Arch::vit, Arch::vvit}) {
    auto cfg = tiny_config(arch, 1);
    cfg.dropout = 0.0;
    Rng rng(4);
    auto model = make_model<float>(cfg, rng);
    AdamW<float> opt(model->params(), {0.9, 0.999, 1e-8, 0.0});
    const auto batch = spectrogram_batch<float>(ptrs);
    double previous = std::numeric_limits<double>::infinity();
    int increases = 0;
    double first = 0.0, last = 0.0;
    for (int step = 0; step < 50; ++step) {
      ForwardContext ctx{true, nullptr};
      model->params().zero_grad();
      auto loss = task_loss(model->forward(batch, ctx), labels, Task::binary);
      const double v = loss.item();
      if (step == 0) first = v;
      last = v;
      if (v > previous) {
        ++increases;
        MESSAGE(to_string(arch), " step ", step, ": ", previous, " -> ", v);
      }
      previous = v;
      loss.backward();
      opt.step(1e-3);
    }
    INFO(to_string(arch), " first ", first, " last ", last);
    CHECK(increases == 0);
    CHECK(last < first);
  }
}

TEST_CASE("train rejects mismatched tasks, empty devel and NaN inputs") {
  auto toy = make_toy(6, 3, 2);
  Rng rng(0);
  auto five = make_model<float>(tiny_config(Arch::cnn, 5), rng);
  CHECK_THROWS_AS(train(*five, toy.data(), quick_config(1), AugmentParams{}), ConfigError);

  auto model = make_model<float>(tiny_config(Arch::cnn, 1), rng);
  auto bad_cfg = quick_config(1);
  bad_cfg.batch_size = 1;
  CHECK_THROWS_AS(train(*model, toy.data(), bad_cfg, AugmentParams{}), ConfigError);

  auto no_devel = toy;
  no_devel.manifest = parse_manifest("path,label,split\na,x,train\nb,y,train\n");
  no_devel.specs.resize(2);
  CHECK_THROWS_AS(train(*model, no_devel.data(), quick_config(1), AugmentParams{}), InputError);

  auto poisoned = toy;
  for (auto& s : poisoned.specs) std::fill(s.values.begin(), s.values.end(), std::numeric_limits<float>::quiet_NaN());
  CHECK_THROWS_AS(train(*model, poisoned.data(), quick_config(1), AugmentParams{}), NumericError);
}
