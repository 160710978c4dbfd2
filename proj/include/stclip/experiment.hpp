#pragma once

// One few-shot trial on a dataset: fresh trainables over a shared backbone,
// few-shot draw from the train split, training, evaluation on the test split.

#include <cstdint>
#include <vector>

#include "stclip/dataset.hpp"
#include "stclip/inference.hpp"
#include "stclip/training.hpp"

namespace stclip {

struct TrialResult {
  std::vector<AspectMetrics> metrics;
  double mean_macro_f1 = 0;
  std::size_t train_size = 0;
  std::uint64_t frozen_hash_before = 0;
  std::uint64_t frozen_hash_after = 0;
  std::uint64_t backbone_hash = 0;  // of `base`
};

/// Model with the layout of `base` under `ablation`, trainables initialized
/// from `seed`, frozen values copied from `base`.
ModelState fresh_trainables(const ModelState& base, const AblationFlags& ablation, std::uint64_t seed);

/// Train / test inputs prepared once per backbone and reused across trials.
struct PreparedSplits {
  std::vector<LabeledSample> train;
  std::vector<LabeledSample> test;
};

PreparedSplits prepare_splits(const ModelState& base, const Dataset& data);

/// The trial seed drives trainable init, the few-shot draw and shuffling.
TrialResult run_trial(const ModelState& base, const PreparedSplits& splits, const AblationFlags& ablation,
                      const TrainingConfig& training);

}  // namespace stclip
