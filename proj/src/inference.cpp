#include "stclip/inference.hpp"

#include <cmath>
#include <fstream>
#include <iomanip>
#include <sstream>

#include "stclip/csv.hpp"
#include "stclip/error.hpp"

namespace stclip {

std::size_t argmax_first(const Tensor& row) {
  if (row.size() == 0) throw ShapeError("argmax of an empty row");
  std::size_t best = 0;
  for (std::size_t j = 1; j < row.size(); ++j)
    if (row[j] > row[best]) best = j;
  return best;
}

std::vector<AspectPrediction> predict_aspects(const ModelState& model, const SampleInput& sample) {
  Tape tape(false);
  const auto r = forward(tape, model, sample);
  std::vector<AspectPrediction> out;
  for (const Var& p : r.probabilities) {
    Tensor probs = p.value();
    for (double v : probs.data())
      if (!std::isfinite(v)) throw NumericError("non-finite class probability");
    out.push_back({argmax_first(probs), std::move(probs)});
  }
  return out;
}

DescriptionTemplate::DescriptionTemplate(std::string text, const AspectSet& aspects) : text_(std::move(text)) {
  static const std::string open = "[CLASS";
  bool any_plain = false, any_named = false;
  std::size_t pos = 0;
  while ((pos = text_.find(open, pos)) != std::string::npos) {
    const std::size_t close = text_.find(']', pos);
    if (close == std::string::npos) throw TemplateError("unterminated placeholder at offset " + std::to_string(pos));
    const std::string inner = text_.substr(pos + open.size(), close - pos - open.size());
    std::size_t aspect = slots_.size();
    if (inner.empty()) {
      any_plain = true;
    } else if (inner.front() == ':') {
      any_named = true;
      const std::string key = inner.substr(1);
      aspect = aspects.size();
      for (std::size_t p = 0; p < aspects.size(); ++p)
        if (aspects[p].name == key) aspect = p;
      if (aspect == aspects.size() && !key.empty() &&
          key.find_first_not_of("0123456789") == std::string::npos) {
        const std::size_t n = std::stoul(key);
        if (n >= 1 && n <= aspects.size()) aspect = n - 1;
      }
      if (aspect == aspects.size()) throw TemplateError("placeholder names unknown aspect '" + key + "'");
    } else {
      throw TemplateError("malformed placeholder '" + text_.substr(pos, close - pos + 1) + "'");
    }
    slots_.push_back({pos, close + 1, aspect});
    pos = close + 1;
  }
  if (any_plain && any_named) throw TemplateError("template mixes ordered and named placeholders");
  if (slots_.size() != aspects.size())
    throw TemplateError("template has " + std::to_string(slots_.size()) + " placeholders for " +
                        std::to_string(aspects.size()) + " aspects");
  std::vector<bool> seen(aspects.size(), false);
  for (const auto& s : slots_) {
    if (seen[s.aspect]) throw TemplateError("aspect '" + aspects[s.aspect].name + "' has two placeholders");
    seen[s.aspect] = true;
  }
}

DescriptionTemplate DescriptionTemplate::load(const std::filesystem::path& path, const AspectSet& aspects) {
  std::ifstream is(path);
  if (!is) throw DataError("cannot read template " + path.string());
  std::stringstream ss;
  ss << is.rdbuf();
  std::string text = ss.str();
  while (!text.empty() && (text.back() == '\n' || text.back() == '\r')) text.pop_back();
  return DescriptionTemplate(std::move(text), aspects);
}

std::string DescriptionTemplate::render(const std::vector<std::size_t>& predicted, const AspectSet& aspects) const {
  if (predicted.size() != slots_.size())
    throw TemplateError(std::to_string(predicted.size()) + " predictions for " + std::to_string(slots_.size()) +
                        " placeholders");
  std::string out;
  std::size_t at = 0;
  for (const auto& s : slots_) {
    const auto& words = aspects.at(s.aspect).words;
    if (predicted[s.aspect] >= words.size())
      throw TemplateError("prediction " + std::to_string(predicted[s.aspect]) + " out of range for aspect '" +
                          aspects[s.aspect].name + "'");
    out.append(text_, at, s.begin - at);
    out += words[predicted[s.aspect]];
    at = s.end;
  }
  out.append(text_, at, std::string::npos);
  return out;
}

std::string render_description(const std::vector<AspectPrediction>& predictions, const DescriptionTemplate& tmpl,
                               const AspectSet& aspects) {
  std::vector<std::size_t> idx;
  for (const auto& p : predictions) idx.push_back(p.index);
  return tmpl.render(idx, aspects);
}

double macro_f1(const std::vector<std::vector<std::size_t>>& confusion) {
  const std::size_t k = confusion.size();
  if (k == 0) return 0;
  double total = 0;
  for (std::size_t c = 0; c < k; ++c) {
    double tp = static_cast<double>(confusion[c][c]), support = 0, predicted = 0;
    for (std::size_t j = 0; j < k; ++j) {
      support += static_cast<double>(confusion[c][j]);
      predicted += static_cast<double>(confusion[j][c]);
    }
    if (tp > 0) total += 2 * tp / (support + predicted);
  }
  return total / static_cast<double>(k);
}

AspectMetrics aspect_metrics(const std::string& name, std::size_t classes, const std::vector<std::size_t>& predicted,
                             const std::vector<std::size_t>& truth) {
  if (predicted.size() != truth.size()) throw EvaluationError("prediction and label counts differ");
  if (truth.empty()) throw EvaluationError("no samples to evaluate for aspect '" + name + "'");
  AspectMetrics m;
  m.aspect = name;
  m.total = truth.size();
  m.confusion.assign(classes, std::vector<std::size_t>(classes, 0));
  for (std::size_t i = 0; i < truth.size(); ++i) {
    if (truth[i] >= classes || predicted[i] >= classes)
      throw EvaluationError("class index out of range for aspect '" + name + "'");
    ++m.confusion[truth[i]][predicted[i]];
    if (truth[i] == predicted[i]) ++m.correct;
  }
  m.accuracy = static_cast<double>(m.correct) / static_cast<double>(m.total);
  for (std::size_t c = 0; c < classes; ++c) {
    double tp = static_cast<double>(m.confusion[c][c]), support = 0, pred = 0;
    for (std::size_t j = 0; j < classes; ++j) {
      support += static_cast<double>(m.confusion[c][j]);
      pred += static_cast<double>(m.confusion[j][c]);
    }
    m.f1.push_back(tp > 0 ? 2 * tp / (support + pred) : 0.0);
  }
  m.macro_f1 = macro_f1(m.confusion);
  return m;
}

std::vector<AspectMetrics> evaluate(const std::vector<std::vector<std::size_t>>& predicted,
                                    const std::vector<std::vector<std::size_t>>& truth, const AspectSet& aspects) {
  if (truth.empty()) throw EvaluationError("empty evaluation set");
  if (predicted.size() != truth.size()) throw EvaluationError("prediction and label counts differ");
  std::vector<AspectMetrics> out;
  for (std::size_t p = 0; p < aspects.size(); ++p) {
    std::vector<std::size_t> pr, tr;
    for (std::size_t i = 0; i < truth.size(); ++i) {
      if (predicted[i].size() != aspects.size() || truth[i].size() != aspects.size())
        throw EvaluationError("sample " + std::to_string(i) + " does not cover every aspect");
      pr.push_back(predicted[i][p]);
      tr.push_back(truth[i][p]);
    }
    out.push_back(aspect_metrics(aspects[p].name, aspects[p].words.size(), pr, tr));
  }
  return out;
}

EvaluationRun evaluate_model(const ModelState& model, const std::vector<LabeledSample>& samples) {
  if (samples.empty()) throw EvaluationError("empty evaluation set");
  EvaluationRun run;
  std::vector<std::vector<std::size_t>> predicted, truth;
  for (const auto& s : samples) {
    auto preds = predict_aspects(model, s.input);
    std::vector<std::size_t> idx;
    for (const auto& p : preds) idx.push_back(p.index);
    predicted.push_back(std::move(idx));
    truth.push_back(s.labels);
    run.predictions.push_back(std::move(preds));
  }
  run.metrics = evaluate(predicted, truth, model.aspects());
  return run;
}

namespace {

std::ofstream open_out(const std::filesystem::path& path) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream os(path);
  if (!os) throw DataError("cannot write " + path.string());
  return os;
}

std::string fixed3(double v) {
  std::ostringstream ss;
  ss << std::fixed << std::setprecision(3) << v;
  return ss.str();
}

void write_matrix(std::ostream& os, const Tensor& t) {
  for (std::size_t r = 0; r < t.rows(); ++r) {
    for (std::size_t c = 0; c < t.cols(); ++c) os << (c ? " " : "") << csv::format_double(t(r, c));
    os << '\n';
  }
}

}  // namespace

void write_predictions(const std::filesystem::path& path, const std::vector<LabeledSample>& samples,
                       const EvaluationRun& run, const AspectSet& aspects) {
  auto os = open_out(path);
  csv::write_row(os, {"sample_id", "aspect", "predicted_index", "predicted_word", "true_index", "probabilities"});
  for (std::size_t i = 0; i < samples.size(); ++i) {
    for (std::size_t p = 0; p < aspects.size(); ++p) {
      const auto& pred = run.predictions[i][p];
      std::string probs;
      for (std::size_t k = 0; k < pred.probabilities.size(); ++k)
        probs += (k ? ";" : "") + csv::format_double(pred.probabilities[k]);
      csv::write_row(os, {samples[i].id, aspects[p].name, std::to_string(pred.index), aspects[p].words[pred.index],
                          std::to_string(samples[i].labels[p]), probs});
    }
  }
}

void write_metrics(const std::filesystem::path& path, const std::vector<AspectMetrics>& metrics) {
  auto os = open_out(path);
  csv::write_row(os, {"aspect", "ACC", "F1", "correct", "total"});
  for (const auto& m : metrics)
    csv::write_row(os, {m.aspect, fixed3(m.accuracy), fixed3(m.macro_f1), std::to_string(m.correct),
                        std::to_string(m.total)});
}

Tensor aggregate_attention(const std::vector<std::vector<Tensor>>& blocks) {
  const std::size_t n = blocks.size();
  Tensor agg(n, n);
  for (std::size_t p = 0; p < n; ++p) {
    if (blocks[p].size() != n) throw ShapeError("attention blocks are not P x P");
    double row = 0;
    for (std::size_t q = 0; q < n; ++q) {
      double s = 0;
      for (double v : blocks[p][q].data()) s += v;
      agg(p, q) = s;
      row += s;
    }
    if (row > 0)
      for (std::size_t q = 0; q < n; ++q) agg(p, q) /= row;
  }
  return agg;
}

AttentionDump collect_attention(const ModelState& model, const SampleInput& sample) {
  Tape tape(false);
  ForwardTrace trace;
  forward(tape, model, sample, &trace);
  AttentionDump d;
  const std::size_t n = model.aspects().size();
  if (trace.cross_aspect.size() == n * n) {
    d.cross_aspect.resize(n);
    for (std::size_t p = 0; p < n; ++p)
      for (std::size_t q = 0; q < n; ++q) d.cross_aspect[p].push_back(trace.cross_aspect[p * n + q]);
    d.aggregate = aggregate_attention(d.cross_aspect);
  }
  for (auto& t : trace.cross_modal) d.cross_modal.push_back(std::move(t.heads));
  return d;
}

void write_attention(const std::filesystem::path& path, const AttentionDump& dump, const AspectSet& aspects) {
  auto os = open_out(path);
  for (std::size_t p = 0; p < dump.cross_aspect.size(); ++p)
    for (std::size_t q = 0; q < dump.cross_aspect[p].size(); ++q) {
      const Tensor& t = dump.cross_aspect[p][q];
      os << "[cross_aspect " << aspects[p].name << ' ' << aspects[q].name << ' ' << t.rows() << 'x' << t.cols()
         << "]\n";
      write_matrix(os, t);
    }
  if (!dump.aggregate.empty()) {
    os << "[aggregate " << dump.aggregate.rows() << 'x' << dump.aggregate.cols() << "]\n";
    write_matrix(os, dump.aggregate);
  }
  for (std::size_t p = 0; p < dump.cross_modal.size(); ++p)
    for (std::size_t h = 0; h < dump.cross_modal[p].size(); ++h) {
      const Tensor& t = dump.cross_modal[p][h];
      os << "[cross_modal " << aspects[p].name << " head " << h << ' ' << t.rows() << 'x' << t.cols() << "]\n";
      write_matrix(os, t);
    }
}

void export_attention(const ModelState& model, const SampleInput& sample, const std::filesystem::path& path) {
  write_attention(path, collect_attention(model, sample), model.aspects());
}

}  // namespace stclip
