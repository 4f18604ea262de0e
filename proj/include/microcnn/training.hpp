#pragma once

#include <chrono>
#include <cmath>
#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "microcnn/data.hpp"
#include "microcnn/errors.hpp"
#include "microcnn/loss_optim.hpp"
#include "microcnn/model.hpp"

namespace microcnn {

struct TrainConfig {
  int epochs = 50;
  std::size_t batch_size = 64;
  double target_val_accuracy = 0.95;
  double learning_rate = 0.001;
  std::uint64_t seed = 42;
  SplitRatios split_ratios{0.8, 0.1, 0.1};
  float dropout_rate = 0.2f;

  void validate() const {
    if (epochs < 1) throw ConfigError("epochs must be >= 1");
    if (batch_size < 1) throw ConfigError("batch_size must be >= 1");
    // 0 is accepted and means "stop after the first epoch".
    if (!(target_val_accuracy >= 0.0 && target_val_accuracy <= 1.0))
      throw ConfigError("target_val_accuracy must be in [0, 1]");
    if (!(learning_rate >= 0.0)) throw ConfigError("learning_rate must be >= 0");
    if (!(dropout_rate >= 0.0f && dropout_rate < 1.0f)) throw ConfigError("dropout_rate must be in [0, 1)");
  }
};

struct EpochMetrics {
  int epoch = 0;  // 1-based
  double train_loss = 0.0;
  double train_accuracy = 0.0;
  double val_loss = 0.0;
  double val_accuracy = 0.0;
  double wall_time_seconds = 0.0;
};

struct CostRecord {
  std::size_t batch = 0;  // global, 1-based
  int epoch = 0;
  double loss = 0.0;
};

using CostLog = std::vector<CostRecord>;

struct TrainResult {
  std::vector<EpochMetrics> history;
  CostLog cost_log;
  bool stopped_early = false;
};

struct EvalResult {
  double loss = 0.0;
  double accuracy = 0.0;
};

/// Fraction of rows whose argmax (lowest index on ties) equals the label.
inline double accuracy(const Tensor& probs, std::span<const int> labels) {
  if (probs.rank() != 2 || probs.dim(0) != labels.size())
    throw DimensionError("accuracy: " + std::to_string(labels.size()) + " labels for probabilities " +
                         probs.shape().to_string());
  if (labels.empty()) throw std::invalid_argument("accuracy of an empty batch");
  const std::size_t k = probs.dim(1);
  std::size_t correct = 0;
  for (std::size_t n = 0; n < labels.size(); ++n)
    if (static_cast<int>(argmax(probs.data().subspan(n * k, k))) == labels[n]) ++correct;
  return static_cast<double>(correct) / static_cast<double>(labels.size());
}

/// Infer-mode loss and accuracy. Does not modify the model.
inline EvalResult evaluate(const Sequential& model, std::span<const LabeledImage> images, std::size_t batch_size = 64) {
  if (images.empty()) throw std::invalid_argument("evaluate needs at least one image");
  Rng unused(0);
  const auto seq = batches(images, batch_size, false, unused);
  double loss_sum = 0.0;
  std::size_t correct = 0;
  for (std::size_t b = 0; b < seq.size(); ++b) {
    const Batch batch = seq[b];
    const Tensor probs = model.infer(batch.x);
    const LossValue loss = cross_entropy(probs, batch.y);
    for (double l : loss.per_sample) loss_sum += l;
    correct += static_cast<std::size_t>(std::llround(accuracy(probs, batch.labels) * batch.labels.size()));
  }
  const double n = static_cast<double>(images.size());
  return {loss_sum / n, static_cast<double>(correct) / n};
}

/// Epoch loop with early stopping: after each epoch the validation
/// accuracy is computed in infer mode and training stops at the first epoch
/// where it reaches `target_val_accuracy`. Weights from that epoch are kept.
inline TrainResult train(Sequential& model, const DatasetSplit& split_data, const TrainConfig& cfg,
                         const std::function<void(const EpochMetrics&)>& on_epoch = {}) {
  cfg.validate();
  if (split_data.train.empty() || split_data.val.empty())
    throw DataError("training needs non-empty train and validation partitions");
  if (split_data.train.size() % cfg.batch_size == 1 && split_data.train.size() > 1)
    throw ConfigError("batch_size " + std::to_string(cfg.batch_size) + " leaves a final batch of one image out of " +
                      std::to_string(split_data.train.size()) + "; batch normalization needs at least two");
  AdamConfig adam = model.optimizer();
  adam.learning_rate = cfg.learning_rate;
  model.set_optimizer(adam);

  // Batch order gets its own stream so it does not shift with the number of
  // draws used for initialisation or splitting.
  Rng order_rng(cfg.seed ^ 0x6d6963726f636e6eULL);
  TrainResult result;
  std::size_t global_batch = 0;
  for (int epoch = 1; epoch <= cfg.epochs; ++epoch) {
    const auto start = std::chrono::steady_clock::now();
    const auto seq = batches(split_data.train, cfg.batch_size, true, order_rng);
    double loss_sum = 0.0;
    std::size_t correct = 0, seen = 0;
    for (std::size_t b = 0; b < seq.size(); ++b) {
      const Batch batch = seq[b];
      Tensor probs;
      const LossValue loss = model.train_step(batch.x, batch.y, &probs);
      ++global_batch;
      if (!std::isfinite(loss.mean_loss))
        throw NumericalError("non-finite loss at epoch " + std::to_string(epoch) + ", batch " +
                             std::to_string(b + 1) + " (global batch " + std::to_string(global_batch) + ")");
      result.cost_log.push_back({global_batch, epoch, loss.mean_loss});
      const auto n = batch.labels.size();
      loss_sum += loss.mean_loss * static_cast<double>(n);
      correct += static_cast<std::size_t>(std::llround(accuracy(probs, batch.labels) * n));
      seen += n;
    }
    const EvalResult val = evaluate(model, split_data.val, cfg.batch_size);
    EpochMetrics m;
    m.epoch = epoch;
    m.train_loss = loss_sum / static_cast<double>(seen);
    m.train_accuracy = static_cast<double>(correct) / static_cast<double>(seen);
    m.val_loss = val.loss;
    m.val_accuracy = val.accuracy;
    m.wall_time_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    result.history.push_back(m);
    if (on_epoch) on_epoch(m);
    if (m.val_accuracy >= cfg.target_val_accuracy) {
      result.stopped_early = true;
      break;
    }
  }
  return result;
}

}  // namespace microcnn
