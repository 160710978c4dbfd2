#include "stclip/experiment.hpp"

#include "stclip/error.hpp"

namespace stclip {

ModelState fresh_trainables(const ModelState& base, const AblationFlags& ablation, std::uint64_t seed) {
  ModelConfig c = base.config();
  c.ablation = ablation;
  c.seed = seed;
  ModelState m = ModelState::init(c, base.aspects());
  const auto src = base.params().all();
  const auto dst = m.params().all();
  if (src.size() != dst.size()) throw ShapeError("parameter layout differs from the base model");
  for (std::size_t i = 0; i < src.size(); ++i) {
    if (src[i]->name != dst[i]->name || !src[i]->value.same_shape(dst[i]->value))
      throw ShapeError("parameter '" + dst[i]->name + "' differs from the base model");
    if (src[i]->frozen) dst[i]->value = src[i]->value;
  }
  return m;
}

PreparedSplits prepare_splits(const ModelState& base, const Dataset& data) {
  return {prepare_samples(base, data, data.split("train")), prepare_samples(base, data, data.split("test"))};
}

TrialResult run_trial(const ModelState& base, const PreparedSplits& splits, const AblationFlags& ablation,
                      const TrainingConfig& training) {
  if (splits.test.empty()) throw DataError("test split is empty");
  TrialResult out;
  out.backbone_hash = base.frozen_hash();
  ModelState m = fresh_trainables(base, ablation, training.seed);

  std::vector<std::vector<std::size_t>> labels;
  labels.reserve(splits.train.size());
  for (const auto& s : splits.train) labels.push_back(s.labels);
  std::vector<LabeledSample> pool;
  for (std::size_t i : few_shot_sample(labels, m.aspects(), training.shots, training.seed))
    pool.push_back(splits.train[i]);
  out.train_size = pool.size();

  const auto log = train(m, pool, training);
  out.frozen_hash_before = log.frozen_hash_before;
  out.frozen_hash_after = log.frozen_hash_after;
  out.metrics = evaluate_model(m, splits.test).metrics;
  for (const auto& a : out.metrics) out.mean_macro_f1 += a.macro_f1;
  out.mean_macro_f1 /= static_cast<double>(out.metrics.size());
  return out;
}

}  // namespace stclip
