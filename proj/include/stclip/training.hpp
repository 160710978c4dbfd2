#pragma once

// Few-shot sampling, the multi-aspect loss and SGD with cosine annealing over
// the trainable partition.

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "stclip/dataset.hpp"
#include "stclip/model.hpp"

namespace stclip {

struct TrainingConfig {
  std::size_t shots = 16;
  std::size_t batch_size = 32;
  double learning_rate = 0.002;
  std::optional<std::size_t> epochs;  // unset: the default for `shots`
  std::uint64_t seed = 0;

  /// 100 epochs for 8-16 shots, 50 for 2-4, 20 for 1.
  static std::size_t default_epochs(std::size_t shots);
  std::size_t resolved_epochs() const { return epochs.value_or(default_epochs(shots)); }

  void validate() const;
  std::map<std::string, std::string> to_map() const;
  static TrainingConfig from_map(const std::map<std::string, std::string>& kv, TrainingConfig base);
};

/// lr0 * (1 + cos(pi * step / total)) / 2
double cosine_lr(std::size_t step, std::size_t total, double lr0);

/// -log p[target], with p clamped at 1e-12.
Var aspect_loss(Var probabilities, std::size_t target);

/// Sum over samples and aspects of the aspect losses.
Var total_loss(Tape& tape, const ModelState& model, const std::vector<const LabeledSample*>& batch);

/// Pool indices (sorted, deduplicated) holding exactly `shots` draws per
/// (aspect, class). `labels[i][p]` is pool sample i's class for aspect p.
std::vector<std::size_t> few_shot_sample(const std::vector<std::vector<std::size_t>>& labels,
                                         const AspectSet& aspects, std::size_t shots, std::uint64_t seed);

struct StepStats {
  double loss = 0;                   // summed over the batch
  std::vector<std::size_t> correct;  // per aspect, before the update
  std::size_t clamped = 0;           // losses that hit the probability floor
};

/// One update on the mean loss of `batch`.
StepStats sgd_step(ModelState& model, const std::vector<const LabeledSample*>& batch, double lr);

struct EpochRecord {
  std::size_t epoch = 0;  // 1-based
  double learning_rate = 0;
  double loss = 0;       // summed over the epoch's samples and aspects
  double mean_loss = 0;  // per sample
  std::vector<double> accuracy;  // per aspect, predictions made before each update
  std::size_t clamped = 0;
};

struct TrainingLog {
  std::vector<EpochRecord> epochs;
  std::uint64_t frozen_hash_before = 0;
  std::uint64_t frozen_hash_after = 0;
};

/// Shuffled mini-batch SGD; the learning rate follows the cosine schedule per
/// epoch. NumericError on a non-finite loss, ContractError if the frozen
/// partition changes.
TrainingLog train(ModelState& model, const std::vector<LabeledSample>& samples, const TrainingConfig& config);

void write_training_log(const std::filesystem::path& path, const TrainingLog& log, const AspectSet& aspects);

}  // namespace stclip
