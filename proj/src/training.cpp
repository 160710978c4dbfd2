#include "stclip/training.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numbers>

#include "stclip/csv.hpp"
#include "stclip/error.hpp"

namespace stclip {

std::size_t TrainingConfig::default_epochs(std::size_t shots) {
  if (shots >= 8) return 100;
  if (shots >= 2) return 50;
  return 20;
}

void TrainingConfig::validate() const {
  if (shots == 0) throw ConfigError("train.shots must be positive");
  if (batch_size == 0) throw ConfigError("train.batch_size must be positive");
  if (!(learning_rate >= 0) || !std::isfinite(learning_rate))
    throw ConfigError("train.learning_rate must be finite and non-negative");
}

std::map<std::string, std::string> TrainingConfig::to_map() const {
  return {
      {"train.shots", std::to_string(shots)},
      {"train.batch_size", std::to_string(batch_size)},
      {"train.learning_rate", csv::format_double(learning_rate)},
      {"train.epochs", epochs ? std::to_string(*epochs) : std::string("auto")},
      {"train.seed", std::to_string(seed)},
  };
}

TrainingConfig TrainingConfig::from_map(const std::map<std::string, std::string>& kv, TrainingConfig c) {
  auto count = [&](const char* key, auto& out) {
    if (auto it = kv.find(key); it != kv.end()) {
      const auto n = csv::parse_int(it->second, std::string("config key '") + key + "'");
      if (n < 0) throw ConfigError(std::string("config key '") + key + "' must be non-negative");
      out = static_cast<std::remove_reference_t<decltype(out)>>(n);
    }
  };
  count("train.shots", c.shots);
  count("train.batch_size", c.batch_size);
  if (auto it = kv.find("train.epochs"); it != kv.end()) {
    if (it->second == "auto") {
      c.epochs.reset();
    } else {
      std::size_t n = 0;
      count("train.epochs", n);
      c.epochs = n;
    }
  }
  count("train.seed", c.seed);
  if (auto it = kv.find("train.learning_rate"); it != kv.end())
    c.learning_rate = csv::parse_double(it->second, "config key 'train.learning_rate'");
  return c;
}

double cosine_lr(std::size_t step, std::size_t total, double lr0) {
  if (total == 0) return lr0;
  const double frac = static_cast<double>(std::min(step, total)) / static_cast<double>(total);
  return lr0 * 0.5 * (1.0 + std::cos(std::numbers::pi * frac));
}

Var aspect_loss(Var probabilities, std::size_t target) { return cross_entropy(probabilities, target); }

namespace {

Var sample_loss(const ForwardResult& r, const LabeledSample& s) {
  if (s.labels.size() != r.probabilities.size())
    throw DataError("sample '" + s.id + "' has " + std::to_string(s.labels.size()) + " labels, model has " +
                    std::to_string(r.probabilities.size()) + " aspects");
  std::vector<Var> parts;
  for (std::size_t p = 0; p < s.labels.size(); ++p) parts.push_back(aspect_loss(r.probabilities[p], s.labels[p]));
  return sum(parts);
}

std::size_t argmax(const Tensor& row) {
  std::size_t best = 0;
  for (std::size_t j = 1; j < row.size(); ++j)
    if (row[j] > row[best]) best = j;
  return best;
}

}  // namespace

Var total_loss(Tape& tape, const ModelState& model, const std::vector<const LabeledSample*>& batch) {
  if (batch.empty()) throw DataError("empty batch");
  std::vector<Var> parts;
  for (const LabeledSample* s : batch) parts.push_back(sample_loss(forward(tape, model, s->input), *s));
  return sum(parts);
}

std::vector<std::size_t> few_shot_sample(const std::vector<std::vector<std::size_t>>& labels, const AspectSet& aspects,
                                         std::size_t shots, std::uint64_t seed) {
  auto rng = substream(seed, "train.few_shot");
  std::vector<std::size_t> chosen;
  for (std::size_t p = 0; p < aspects.size(); ++p) {
    for (std::size_t k = 0; k < aspects[p].words.size(); ++k) {
      std::vector<std::size_t> pool;
      for (std::size_t i = 0; i < labels.size(); ++i) {
        if (labels[i].size() != aspects.size())
          throw DataError("pool sample " + std::to_string(i) + " is not labeled in every aspect");
        if (labels[i][p] == k) pool.push_back(i);
      }
      if (pool.size() < shots)
        throw SamplingError("aspect '" + aspects[p].name + "' class '" + aspects[p].words[k] + "' has " +
                            std::to_string(pool.size()) + " candidates, " + std::to_string(shots) + " needed");
      for (std::size_t j = 0; j < shots; ++j) {
        std::uniform_int_distribution<std::size_t> u(j, pool.size() - 1);
        std::swap(pool[j], pool[u(rng)]);
        chosen.push_back(pool[j]);
      }
    }
  }
  std::sort(chosen.begin(), chosen.end());
  chosen.erase(std::unique(chosen.begin(), chosen.end()), chosen.end());
  return chosen;
}

StepStats sgd_step(ModelState& model, const std::vector<const LabeledSample*>& batch, double lr) {
  if (batch.empty()) throw DataError("empty batch");
  auto params = model.params().trainable();
  for (Parameter* p : params) p->grad = Tensor();
  StepStats st;
  st.correct.assign(model.aspects().size(), 0);
  for (const LabeledSample* s : batch) {
    Tape tape;
    const auto r = forward(tape, model, s->input);
    Var loss = sample_loss(r, *s);
    st.loss += loss.value()[0];
    for (std::size_t p = 0; p < r.probabilities.size(); ++p) {
      const Tensor& probs = r.probabilities[p].value();
      if (argmax(probs) == s->labels[p]) ++st.correct[p];
      if (probs[s->labels[p]] < kProbabilityFloor) ++st.clamped;
    }
    tape.backward(loss);
  }
  if (!std::isfinite(st.loss)) return st;
  const double step = lr / static_cast<double>(batch.size());
  for (Parameter* p : params) {
    if (p->grad.empty()) continue;
    auto& v = p->value.data();
    const auto& g = p->grad.data();
    for (std::size_t i = 0; i < v.size(); ++i) v[i] -= step * g[i];
  }
  return st;
}

TrainingLog train(ModelState& model, const std::vector<LabeledSample>& samples, const TrainingConfig& config) {
  config.validate();
  if (samples.empty()) throw DataError("training set is empty");
  TrainingLog log;
  log.frozen_hash_before = model.frozen_hash();
  const std::size_t epochs = config.resolved_epochs();
  auto rng = substream(config.seed, "train.shuffle");
  std::vector<std::size_t> order(samples.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;

  for (std::size_t e = 0; e < epochs; ++e) {
    EpochRecord rec;
    rec.epoch = e + 1;
    rec.learning_rate = cosine_lr(e, epochs, config.learning_rate);
    std::shuffle(order.begin(), order.end(), rng);
    std::vector<std::size_t> correct(model.aspects().size(), 0);
    for (std::size_t start = 0, b = 0; start < order.size(); start += config.batch_size, ++b) {
      std::vector<const LabeledSample*> batch;
      for (std::size_t i = start; i < std::min(order.size(), start + config.batch_size); ++i)
        batch.push_back(&samples[order[i]]);
      const std::string where = "epoch " + std::to_string(e + 1) + ", batch " + std::to_string(b + 1);
      StepStats st;
      try {
        st = sgd_step(model, batch, rec.learning_rate);
      } catch (const NumericError& err) {
        throw NumericError(std::string(err.what()) + " at " + where);
      }
      if (!std::isfinite(st.loss)) throw NumericError("non-finite loss at " + where);
      rec.loss += st.loss;
      rec.clamped += st.clamped;
      for (std::size_t p = 0; p < correct.size(); ++p) correct[p] += st.correct[p];
    }
    rec.mean_loss = rec.loss / static_cast<double>(samples.size());
    for (std::size_t c : correct) rec.accuracy.push_back(static_cast<double>(c) / static_cast<double>(samples.size()));
    log.epochs.push_back(std::move(rec));
  }

  log.frozen_hash_after = model.frozen_hash();
  if (log.frozen_hash_after != log.frozen_hash_before)
    throw ContractError("frozen parameters changed during training");
  return log;
}

void write_training_log(const std::filesystem::path& path, const TrainingLog& log, const AspectSet& aspects) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream os(path);
  if (!os) throw DataError("cannot write " + path.string());
  std::vector<std::string> header{"epoch", "lr", "loss", "mean_loss"};
  for (const auto& a : aspects) header.push_back("acc_" + a.name);
  header.push_back("clamped");
  csv::write_row(os, header);
  for (const auto& r : log.epochs) {
    std::vector<std::string> row{std::to_string(r.epoch), csv::format_double(r.learning_rate),
                                 csv::format_double(r.loss), csv::format_double(r.mean_loss)};
    for (double a : r.accuracy) row.push_back(csv::format_double(a));
    row.push_back(std::to_string(r.clamped));
    csv::write_row(os, row);
  }
}

}  // namespace stclip
