// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "melbench/augment.hpp"
#include "melbench/checkpoint.hpp"
#include "melbench/metrics.hpp"
#include "melbench/models.hpp"
#include "melbench/sampling.hpp"

namespace melbench {

enum class Task { multiclass, binary };
enum class Scheduler { none, exponential };

std::string_view to_string(Task task);
bool parse_task(std::string_view text, Task& out);
std::string_view to_string(Scheduler scheduler);
bool parse_scheduler(std::string_view text, Scheduler& out);

struct TrainConfig {
  std::size_t epochs = 200;
  std::size_t batch_size = 32;
  double lr = 1e-3;
  double weight_decay = 1e-2;
  Scheduler scheduler = Scheduler::none;
  double scheduler_base = 0.95;  // lr_k = lr * base^k
  std::uint64_t seed = 0;
  Task task = Task::multiclass;
  bool oversample = true;  // false: every train sample once per epoch, no rebalancing

  std::vector<std::string> validate() const;
};

double lr_at(std::size_t epoch, const TrainConfig& cfg);

struct AdamWSettings {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 0.0;
};

/// Decoupled weight decay: theta -= lr*wd*theta, then the bias-corrected Adam
/// step. Only trainable entries of the parameter set are updated.
template <typename T>
class AdamW {
 public:
  AdamW(const ParameterSet<T>& params, AdamWSettings settings);

  /// Throws NumericError naming the first parameter with a non-finite gradient.
  void step(double lr);
  std::uint64_t steps() const { return steps_; }
  const std::vector<T>& first_moment(std::size_t i) const { return m_[i]; }
  const std::vector<T>& second_moment(std::size_t i) const { return v_[i]; }

 private:
  std::vector<std::string> names_;
  std::vector<Tensor<T>> params_;
  std::vector<std::vector<T>> m_;
  std::vector<std::vector<T>> v_;
  AdamWSettings settings_;
  std::uint64_t steps_ = 0;
};

/// Mean cross-entropy (multiclass) or sigmoid BCE on a single logit (binary).
template <typename T>
Tensor<T> task_loss(const Tensor<T>& logits, std::span<const int> labels, Task task);

/// Argmax (multiclass) or sigmoid(logit) >= 0.5 (binary).
template <typename T>
std::vector<int> predict_classes(const Tensor<T>& logits, Task task);

/// Positive-class probability for binary tasks; softmax of class 1 otherwise.
template <typename T>
std::vector<double> positive_scores(const Tensor<T>& logits, Task task);

/// Spectrograms aligned with manifest.samples(), normalized for the model and
/// not yet cropped.
struct TrainData {
  const Manifest* manifest = nullptr;
  std::span<const MelSpectrogram> spectrograms;
  std::size_t target_frames = 0;
};

/// Crop/pad (and, for train draws, augment) with one stream per sample.
MelSpectrogram prepare_input(const MelSpectrogram& spec, std::size_t target_frames, const AugmentParams* augment,
                             Rng& rng, bool training);

struct EpochRecord {
  std::size_t epoch = 0;
  double train_loss = 0.0;
  double devel_uar = 0.0;
  double lr = 0.0;
};

std::string format_history_line(const EpochRecord& r);

struct TrainHooks {
  std::function<void(const EpochRecord&)> on_epoch;
  /// Sees every evaluation input (manifest index, model-ready spectrogram).
  std::function<void(std::size_t, const MelSpectrogram&)> on_eval_input;
};

struct TrainResult {
  std::vector<EpochRecord> history;
  double best_devel_uar = 0.0;
  std::size_t best_epoch = 0;
  Checkpoint best_checkpoint;
};

struct Evaluation {
  std::vector<int> labels;
  std::vector<int> predictions;
  std::vector<double> scores;
  ConfusionMatrix cm;
  double uar = 0.0;
};

template <typename T>
Evaluation evaluate(Model<T>& model, const TrainData& data, Split split, const TrainConfig& cfg,
                    const TrainHooks* hooks = nullptr);

/// Sizes of consecutive batches covering n items; a trailing batch of one is
/// merged into its predecessor because batch normalization needs two samples.
std::vector<std::size_t> batch_sizes(std::size_t n, std::size_t batch_size);

/// Runs cfg.epochs epochs, evaluating devel UAR after each; the model ends up
/// holding the best-devel weights, which are also returned as a checkpoint.
template <typename T>
TrainResult train(Model<T>& model, const TrainData& data, const TrainConfig& cfg, const AugmentParams& augment,
                  const TrainHooks* hooks = nullptr);

}  // namespace melbench
