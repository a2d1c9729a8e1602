// SPDX-License-Identifier: Apache-2.0
#include "melbench/training.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

#include <json.hpp>

#include "melbench/error.hpp"

namespace melbench {

std::string_view to_string(Task task) { return task == Task::multiclass ? "multiclass" : "binary"; }

bool parse_task(std::string_view text, Task& out) {
  if (text == "multiclass") out = Task::multiclass;
  else if (text == "binary") out = Task::binary;
  else return false;
  return true;
}

std::string_view to_string(Scheduler scheduler) { return scheduler == Scheduler::none ? "none" : "exponential"; }

bool parse_scheduler(std::string_view text, Scheduler& out) {
  if (text == "none") out = Scheduler::none;
  else if (text == "exponential") out = Scheduler::exponential;
  else return false;
  return true;
}

std::vector<std::string> TrainConfig::validate() const {
  std::vector<std::string> p;
  if (epochs < 1) p.push_back("train.epochs must be >= 1");
  if (batch_size < 2) p.push_back("train.batch_size must be >= 2");
  if (!(std::isfinite(lr) && lr > 0.0)) p.push_back("train.lr must be finite and > 0");
  if (!(std::isfinite(weight_decay) && weight_decay >= 0.0)) p.push_back("train.weight_decay must be finite and >= 0");
  if (scheduler == Scheduler::exponential && !(scheduler_base >= 0.88 && scheduler_base < 1.0)) {
    p.push_back("train.scheduler_base must be in [0.88, 1) when the exponential scheduler is enabled");
  }
  return p;
}

double lr_at(std::size_t epoch, const TrainConfig& cfg) {
  if (cfg.scheduler == Scheduler::none) return cfg.lr;
  return cfg.lr * std::pow(cfg.scheduler_base, static_cast<double>(epoch));
}

template <typename T>
AdamW<T>::AdamW(const ParameterSet<T>& params, AdamWSettings settings) : settings_(settings) {
  for (const auto& e : params.entries()) {
    if (!e.trainable) continue;
    names_.push_back(e.name);
    params_.push_back(e.tensor);
    m_.emplace_back(e.tensor.numel(), T(0));
    v_.emplace_back(e.tensor.numel(), T(0));
  }
}

template <typename T>
void AdamW<T>::step(double lr) {
  for (std::size_t i = 0; i < params_.size(); ++i) {
    if (!params_[i].has_grad()) continue;
    for (T g : params_[i].grad()) {
      if (!std::isfinite(static_cast<double>(g))) {
        throw NumericError("non-finite gradient in parameter '" + names_[i] + "' at optimizer step " +
                           std::to_string(steps_ + 1));
      }
    }
  }
  ++steps_;
  const double b1 = settings_.beta1;
  const double b2 = settings_.beta2;
  const double c1 = 1.0 - std::pow(b1, static_cast<double>(steps_));
  const double c2 = 1.0 - std::pow(b2, static_cast<double>(steps_));
  const double decay = 1.0 - lr * settings_.weight_decay;
  for (std::size_t i = 0; i < params_.size(); ++i) {
    auto theta = params_[i].mutable_data();
    const bool has_grad = params_[i].has_grad();
    const auto grad = params_[i].grad();
    auto& m = m_[i];
    auto& v = v_[i];
    for (std::size_t j = 0; j < theta.size(); ++j) {
      const double g = has_grad ? static_cast<double>(grad[j]) : 0.0;
      const double mj = b1 * static_cast<double>(m[j]) + (1.0 - b1) * g;
      const double vj = b2 * static_cast<double>(v[j]) + (1.0 - b2) * g * g;
      m[j] = static_cast<T>(mj);
      v[j] = static_cast<T>(vj);
      double t = static_cast<double>(theta[j]) * decay;
      t -= lr * (mj / c1) / (std::sqrt(vj / c2) + settings_.eps);
      theta[j] = static_cast<T>(t);
    }
  }
}

template <typename T>
Tensor<T> task_loss(const Tensor<T>& logits, std::span<const int> labels, Task task) {
  return task == Task::multiclass ? cross_entropy(logits, labels) : bce_with_logits(logits, labels);
}

template <typename T>
std::vector<int> predict_classes(const Tensor<T>& logits, Task task) {
  const std::size_t B = logits.dim(0);
  const std::size_t C = logits.numel() / B;
  const auto d = logits.data();
  std::vector<int> out(B);
  for (std::size_t b = 0; b < B; ++b) {
    if (task == Task::binary) {
      out[b] = d[b * C] >= T(0) ? 1 : 0;
    } else {
      const auto row = d.subspan(b * C, C);
      out[b] = static_cast<int>(std::max_element(row.begin(), row.end()) - row.begin());
    }
  }
  return out;
}

template <typename T>
std::vector<double> positive_scores(const Tensor<T>& logits, Task task) {
  const std::size_t B = logits.dim(0);
  const std::size_t C = logits.numel() / B;
  const auto d = logits.data();
  std::vector<double> out(B);
  for (std::size_t b = 0; b < B; ++b) {
    if (task == Task::binary || C == 1) {
      out[b] = 1.0 / (1.0 + std::exp(-static_cast<double>(d[b * C])));
    } else {
      const auto row = d.subspan(b * C, C);
      const double mx = static_cast<double>(*std::max_element(row.begin(), row.end()));
      double z = 0.0;
      for (T v : row) z += std::exp(static_cast<double>(v) - mx);
      out[b] = std::exp(static_cast<double>(row[1]) - mx) / z;
    }
  }
  return out;
}

MelSpectrogram prepare_input(const MelSpectrogram& spec, std::size_t target_frames, const AugmentParams* augment,
                             Rng& rng, bool training) {
  MelSpectrogram out = crop_or_pad(spec, target_frames, rng, training);
  if (training && augment != nullptr && augment->any()) out = apply_all(out, *augment, rng);
  return out;
}

std::string format_history_line(const EpochRecord& r) {
  nlohmann::ordered_json j;
  j["epoch"] = r.epoch;
  j["train_loss"] = r.train_loss;
  j["devel_uar"] = r.devel_uar;
  j["lr"] = r.lr;
  return j.dump();
}

std::vector<std::size_t> batch_sizes(std::size_t n, std::size_t batch_size) {
  if (batch_size == 0) throw std::invalid_argument("batch_size must be positive");
  std::vector<std::size_t> sizes;
  for (std::size_t done = 0; done < n; done += sizes.back()) sizes.push_back(std::min(batch_size, n - done));
  if (sizes.size() >= 2 && sizes.back() == 1) {
    sizes.pop_back();
    sizes.back() += 1;
  }
  return sizes;
}

namespace {

void check_task(const Manifest& m, const ModelConfig& model, Task task) {
  std::vector<std::string> p;
  if (task == Task::binary) {
    if (m.n_classes() != 2) p.push_back("binary task needs exactly 2 classes, manifest has " + std::to_string(m.n_classes()));
    if (model.n_logits != 1) p.push_back("binary task needs model.n_logits = 1");
  } else if (model.n_logits != m.n_classes()) {
    p.push_back("multiclass task needs model.n_logits = " + std::to_string(m.n_classes()) + " (classes in manifest)");
  }
  if (!p.empty()) throw ConfigError(std::move(p));
}

std::vector<int> labels_of(const Manifest& m, std::span<const std::size_t> idx) {
  std::vector<int> out;
  out.reserve(idx.size());
  for (std::size_t i : idx) out.push_back(m.samples()[i].label);
  return out;
}

// Stream tags keep the per-purpose rngs of one seed disjoint.
constexpr std::uint64_t kEpochStream = 1;
constexpr std::uint64_t kSampleStream = 2;
constexpr std::uint64_t kDropoutStream = 3;

}  // namespace

template <typename T>
Evaluation evaluate(Model<T>& model, const TrainData& data, Split split, const TrainConfig& cfg,
                    const TrainHooks* hooks) {
  const Manifest& m = *data.manifest;
  const auto& idx = m.indices(split);
  if (idx.empty()) throw InputError(std::string("split '") + std::string(to_string(split)) + "' is empty");
  NoGradGuard no_grad;
  ForwardContext ctx;
  Evaluation ev;
  ev.labels = labels_of(m, idx);
  Rng unused(0);
  for (std::size_t start = 0; start < idx.size(); start += cfg.batch_size) {
    const std::size_t n = std::min(cfg.batch_size, idx.size() - start);
    std::vector<MelSpectrogram> inputs;
    inputs.reserve(n);
    for (std::size_t k = 0; k < n; ++k) {
      const std::size_t i = idx[start + k];
      inputs.push_back(prepare_input(data.spectrograms[i], data.target_frames, nullptr, unused, false));
      if (hooks && hooks->on_eval_input) hooks->on_eval_input(i, inputs.back());
    }
    std::vector<const MelSpectrogram*> ptrs;
    for (const auto& s : inputs) ptrs.push_back(&s);
    const Tensor<T> logits = model.forward(spectrogram_batch<T>(ptrs), ctx);
    for (int p : predict_classes(logits, cfg.task)) ev.predictions.push_back(p);
    for (double s : positive_scores(logits, cfg.task)) ev.scores.push_back(s);
  }
  ev.cm = confusion(ev.labels, ev.predictions, m.n_classes());
  ev.uar = uar(ev.cm);
  return ev;
}

template <typename T>
TrainResult train(Model<T>& model, const TrainData& data, const TrainConfig& cfg, const AugmentParams& augment,
                  const TrainHooks* hooks) {
  if (data.manifest == nullptr) throw std::invalid_argument("train: no manifest");
  const Manifest& m = *data.manifest;
  if (data.spectrograms.size() != m.samples().size()) {
    throw std::invalid_argument("train: spectrogram count does not match manifest");
  }
  {
    auto problems = augment.validate();
    if (cfg.epochs != 0) {
      for (auto& p : cfg.validate()) problems.push_back(std::move(p));
    }
    if (!problems.empty()) throw ConfigError(std::move(problems));
  }
  check_task(m, model.config(), cfg.task);
  if (m.indices(Split::train).empty()) throw InputError("train split is empty");
  if (m.indices(Split::devel).empty()) throw InputError("devel split is empty");

  TrainResult result;
  result.best_checkpoint = model.params().to_checkpoint();
  if (cfg.epochs == 0) return result;

  AdamW<T> opt(model.params(), {0.9, 0.999, 1e-8, cfg.weight_decay});
  std::vector<std::vector<T>> best = model.params().snapshot();
  bool have_best = false;

  for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
    const double lr = lr_at(epoch, cfg);
    Rng epoch_rng = Rng::derive(cfg.seed, {kEpochStream, epoch});
    const std::vector<std::size_t> order = cfg.oversample ? draw_epoch(m, epoch_rng) : natural_epoch(m, epoch_rng);

    double loss_sum = 0.0;
    std::size_t pos = 0;
    std::size_t batch_no = 0;
    for (std::size_t n : batch_sizes(order.size(), cfg.batch_size)) {
      std::vector<MelSpectrogram> inputs(n);
      for (std::size_t k = 0; k < n; ++k) {
        Rng sample_rng = Rng::derive(cfg.seed, {kSampleStream, epoch, pos + k});
        inputs[k] = prepare_input(data.spectrograms[order[pos + k]], data.target_frames, &augment, sample_rng, true);
      }
      std::vector<const MelSpectrogram*> ptrs;
      for (const auto& s : inputs) ptrs.push_back(&s);
      const std::vector<int> labels = labels_of(m, std::span(order).subspan(pos, n));

      Rng dropout_rng = Rng::derive(cfg.seed, {kDropoutStream, epoch, batch_no});
      ForwardContext ctx{true, &dropout_rng};
      model.params().zero_grad();
      const Tensor<T> loss = task_loss(model.forward(spectrogram_batch<T>(ptrs), ctx), labels, cfg.task);
      const double value = static_cast<double>(loss.item());
      if (!std::isfinite(value)) {
        throw NumericError("non-finite training loss at epoch " + std::to_string(epoch + 1) + ", batch " +
                           std::to_string(batch_no + 1));
      }
      loss.backward();
      opt.step(lr);
      loss_sum += value * static_cast<double>(n);
      pos += n;
      ++batch_no;
    }
    model.params().zero_grad();

    EpochRecord rec;
    rec.epoch = epoch + 1;
    rec.train_loss = loss_sum / static_cast<double>(order.size());
    rec.devel_uar = evaluate(model, data, Split::devel, cfg, hooks).uar;
    rec.lr = lr;
    result.history.push_back(rec);
    if (hooks && hooks->on_epoch) hooks->on_epoch(rec);
    if (!have_best || rec.devel_uar > result.best_devel_uar) {
      have_best = true;
      result.best_devel_uar = rec.devel_uar;
      result.best_epoch = rec.epoch;
      best = model.params().snapshot();
    }
  }
  model.params().restore(best);
  result.best_checkpoint = model.params().to_checkpoint();
  result.best_checkpoint.metadata["best_epoch"] = result.best_epoch;
  result.best_checkpoint.metadata["best_devel_uar"] = result.best_devel_uar;
  return result;
}

#define MELBENCH_INSTANTIATE_TRAINING(T)                                                                    \
  template class AdamW<T>;                                                                                  \
  template Tensor<T> task_loss<T>(const Tensor<T>&, std::span<const int>, Task);                            \
  template std::vector<int> predict_classes<T>(const Tensor<T>&, Task);                                     \
  template std::vector<double> positive_scores<T>(const Tensor<T>&, Task);                                  \
  template Evaluation evaluate<T>(Model<T>&, const TrainData&, Split, const TrainConfig&, const TrainHooks*); \
  template TrainResult train<T>(Model<T>&, const TrainData&, const TrainConfig&, const AugmentParams&,     \
                                const TrainHooks*);

MELBENCH_INSTANTIATE_TRAINING(float)
MELBENCH_INSTANTIATE_TRAINING(double)

}  // namespace melbench
