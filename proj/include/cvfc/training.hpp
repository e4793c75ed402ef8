#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "cvfc/checkpoint.hpp"
#include "cvfc/model.hpp"

namespace cvfc {

enum class DecayMode { weight_decay, poly_lr };

struct TrainConfig {
  std::uint64_t seed = 0;
  std::size_t epochs = 100;
  double lr = 0.006;
  double weight_decay = 0.01;
  /// weight_decay: constant lr with L2 decay. poly_lr: lr (1 - t/T)^poly_power, no L2 decay.
  DecayMode decay_mode = DecayMode::weight_decay;
  double poly_power = 0.9;
  double momentum = 0.0;
  std::size_t batch_size = 8;
  std::size_t image_size = 48;
  bool augment = true;
  double bg_threshold = 0.3;
  ModelConfig model;

  /// Throws ConfigError on lr <= 0, epochs < 1, batch_size < 1 and similar.
  void validate() const;
  std::string to_json() const;
  /// Unknown keys are a ConfigError; missing keys keep their defaults.
  static TrainConfig from_json(const std::string& text);
  static TrainConfig load(const std::string& path);
  /// FNV-1a of the canonical JSON with `epochs` removed, so a run can be
  /// extended with a larger epoch budget.
  std::uint64_t hash() const;
};

/// w <- w - lr (g + wd w); with momentum mu > 0 a velocity v <- mu v + (g + wd w)
/// replaces the bracket. Non-finite gradients raise TrainError naming the parameter.
void sgd_step(Parameter& p, double lr, double weight_decay, double momentum = 0.0, Tensor* velocity = nullptr);

/// Raised when a step produces a non-finite loss; carries what was computed.
class NonFiniteLossError : public TrainError {
 public:
  NonFiniteLossError(const std::string& what, LossBreakdown snapshot) : TrainError(what), snapshot_(snapshot) {}
  const LossBreakdown& snapshot() const { return snapshot_; }

 private:
  LossBreakdown snapshot_;
};

struct EpochLog {
  std::size_t epoch = 0;  // 1-based
  std::size_t steps = 0;
  LossBreakdown mean;
  std::string to_json_line() const;
};

std::string breakdown_json(const LossBreakdown& b);

class Trainer {
 public:
  Trainer(TrainConfig cfg, std::unique_ptr<SegmentationNet> net);
  /// Model built from cfg.model.
  explicit Trainer(TrainConfig cfg);

  /// One forward, one backward, one SGD update of every trainable parameter.
  LossBreakdown co_train_step(std::span<const LabeledPatch* const> batch);
  LossBreakdown co_train_step(std::span<const LabeledPatch> batch);

  /// Shuffles with the trainer RNG, augments each patch from
  /// (seed, epoch, index), and steps through batches (the last one may be short).
  EpochLog train_epoch(std::span<const LabeledPatch> dataset);
  /// Runs epochs until cfg.epochs are complete; `on_epoch` sees each log.
  void train(std::span<const LabeledPatch> dataset, const std::function<void(const EpochLog&)>& on_epoch = {});

  Checkpoint checkpoint() const;
  /// Restores parameters, optimizer state, RNG, and counters. The stored
  /// config must hash equal to this trainer's config.
  void restore(const Checkpoint& ck);

  SegmentationNet& net() { return *net_; }
  const TrainConfig& config() const { return cfg_; }
  std::size_t epoch() const { return epoch_; }
  std::uint64_t step() const { return step_; }
  /// Number of parameter tensors the optimizer updates.
  std::size_t optimized_count() const { return trainable_.size(); }

 private:
  double current_lr() const;

  TrainConfig cfg_;
  std::unique_ptr<SegmentationNet> net_;
  std::vector<Parameter*> trainable_;
  std::vector<Tensor> velocity_;
  std::mt19937_64 rng_;
  std::size_t epoch_ = 0;
  std::uint64_t step_ = 0;
  std::uint64_t total_steps_ = 0;  // known after the first epoch for poly_lr
};

/// Config stored in a checkpoint.
TrainConfig config_from_checkpoint(const Checkpoint& ck);
/// Model rebuilt from a checkpoint's config with its parameters loaded.
std::unique_ptr<SegmentationNet> model_from_checkpoint(const Checkpoint& ck);

}  // namespace cvfc
