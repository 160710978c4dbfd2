#pragma once

// Per-aspect prediction, template descriptions, ACC / macro-F1 and attention
// dumps.

#include <filesystem>
#include <string>
#include <vector>

#include "stclip/dataset.hpp"
#include "stclip/model.hpp"

namespace stclip {

struct AspectPrediction {
  std::size_t index = 0;
  Tensor probabilities;  // 1 x K
};

/// First index of the maximum.
std::size_t argmax_first(const Tensor& row);

std::vector<AspectPrediction> predict_aspects(const ModelState& model, const SampleInput& sample);

inline constexpr const char* kDefaultTemplate =
    "The road is in the [CLASS] scene. The surface is [CLASS] and the width is [CLASS]. It is [CLASS] to pass "
    "through.";

/// Text with one placeholder per aspect. Plain `[CLASS]` markers map to the
/// aspects in order; `[CLASS:<aspect name>]` or `[CLASS:<1-based index>]`
/// name their aspect explicitly. The two styles cannot be mixed.
class DescriptionTemplate {
 public:
  DescriptionTemplate(std::string text, const AspectSet& aspects);
  static DescriptionTemplate load(const std::filesystem::path& path, const AspectSet& aspects);

  std::string render(const std::vector<std::size_t>& predicted, const AspectSet& aspects) const;
  const std::string& text() const { return text_; }

 private:
  struct Slot {
    std::size_t begin, end, aspect;
  };
  std::string text_;
  std::vector<Slot> slots_;
};

std::string render_description(const std::vector<AspectPrediction>& predictions, const DescriptionTemplate& tmpl,
                               const AspectSet& aspects);

struct AspectMetrics {
  std::string aspect;
  std::size_t total = 0;
  std::size_t correct = 0;
  double accuracy = 0;
  double macro_f1 = 0;
  std::vector<double> f1;                          // per class
  std::vector<std::vector<std::size_t>> confusion;  // [truth][predicted]
};

/// Macro-F1 averages over every class; a class with no support and no
/// predictions scores 0.
AspectMetrics aspect_metrics(const std::string& name, std::size_t classes, const std::vector<std::size_t>& predicted,
                             const std::vector<std::size_t>& truth);
double macro_f1(const std::vector<std::vector<std::size_t>>& confusion);

/// `predicted[i][p]` and `truth[i][p]`: sample i, aspect p.
std::vector<AspectMetrics> evaluate(const std::vector<std::vector<std::size_t>>& predicted,
                                    const std::vector<std::vector<std::size_t>>& truth, const AspectSet& aspects);

struct EvaluationRun {
  std::vector<std::vector<AspectPrediction>> predictions;  // per sample
  std::vector<AspectMetrics> metrics;
};

EvaluationRun evaluate_model(const ModelState& model, const std::vector<LabeledSample>& samples);

void write_predictions(const std::filesystem::path& path, const std::vector<LabeledSample>& samples,
                       const EvaluationRun& run, const AspectSet& aspects);
/// aspect, ACC, F1 with a 3-decimal accuracy, plus the raw counts.
void write_metrics(const std::filesystem::path& path, const std::vector<AspectMetrics>& metrics);

struct AttentionDump {
  std::vector<std::vector<Tensor>> cross_aspect;  // [p][q], M x M
  Tensor aggregate;                               // P x P, rows sum to 1
  std::vector<std::vector<Tensor>> cross_modal;   // [p][head], M x N_p
};

/// Subregion sums of the MP x MP attention matrix, each row normalized.
Tensor aggregate_attention(const std::vector<std::vector<Tensor>>& blocks);

AttentionDump collect_attention(const ModelState& model, const SampleInput& sample);
void write_attention(const std::filesystem::path& path, const AttentionDump& dump, const AspectSet& aspects);
void export_attention(const ModelState& model, const SampleInput& sample, const std::filesystem::path& path);

}  // namespace stclip
