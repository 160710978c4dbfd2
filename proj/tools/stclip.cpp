// stclip: synthetic data, map matching, training and evaluation from the
// command line.

#include <CLI11.hpp>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "stclip/csv.hpp"
#include "stclip/dataset.hpp"
#include "stclip/error.hpp"
#include "stclip/experiment.hpp"
#include "stclip/inference.hpp"
#include "stclip/map_match.hpp"
#include "stclip/run_config.hpp"
#include "stclip/seeding.hpp"
#include "stclip/synth.hpp"
#include "stclip/training.hpp"
#include "stclip/verify.hpp"

namespace fs = std::filesystem;
using namespace stclip;

namespace {

constexpr const char* kExitCodes =
    "Exit codes:\n"
    "  0  success\n"
    "  2  usage: unknown flag, bad config key or value\n"
    "  3  data: missing or malformed input files\n"
    "  4  numeric: non-finite values, failed gradient check\n"
    "  5  contract: frozen backbone changed during training\n";

// Keys whose seeds are taken from the global `seed`.
const char* kDerivedSeeds[] = {"synth.seed", "model.seed", "train.seed"};

KeyValues without_derived_seeds(KeyValues kv) {
  for (const char* k : kDerivedSeeds) kv.erase(k);
  return kv;
}

KeyValues defaults() {
  KeyValues kv{{"seed", "0"},   {"out", "out"},   {"threads", "1"},  {"data", ""},     {"stats", ""},
               {"checkpoint", ""}, {"gps", ""}, {"samples", ""}, {"template", ""}, {"sample", ""},
               {"split", "test"},  {"predictions", ""}};
  kv = overlay(kv, without_derived_seeds(SynthConfig{}.to_map()));
  kv = overlay(kv, without_derived_seeds(ModelConfig::desk().to_map()));
  kv = overlay(kv, without_derived_seeds(TrainingConfig{}.to_map()));
  kv = overlay(kv, MatchSettings{}.to_map());
  return kv;
}

struct Flags {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::optional<std::string> out;
  std::optional<unsigned> threads;
  std::optional<std::size_t> shots;
  std::optional<std::size_t> nw;
  std::vector<std::string> ablate;
  std::optional<std::string> class_pos;
  std::optional<std::size_t> prompt_len;
  std::optional<std::string> data, stats, checkpoint, gps, samples, tmpl, sample, split, predictions;
  std::vector<std::string> set;

  KeyValues to_map() const {
    KeyValues kv;
    for (const auto& s : set) {
      const auto eq = s.find('=');
      if (eq == std::string::npos || eq == 0) throw ConfigError("--set expects key=value, got '" + s + "'");
      kv[s.substr(0, eq)] = s.substr(eq + 1);
    }
    if (seed) kv["seed"] = std::to_string(*seed);
    if (out) kv["out"] = *out;
    if (threads) kv["threads"] = std::to_string(*threads);
    if (shots) kv["train.shots"] = std::to_string(*shots);
    if (nw) kv["model.window"] = std::to_string(*nw);
    if (!ablate.empty()) {
      AblationFlags f;
      for (const auto& a : ablate) f.enable(a);
      kv["model.ablation"] = f.to_string();
    }
    if (class_pos) kv["model.class_position"] = *class_pos;
    if (prompt_len) kv["model.prompt_len"] = std::to_string(*prompt_len);
    const std::pair<const std::optional<std::string>*, const char*> paths[] = {
        {&data, "data"},     {&stats, "stats"},   {&checkpoint, "checkpoint"}, {&gps, "gps"},
        {&samples, "samples"}, {&tmpl, "template"}, {&sample, "sample"},       {&split, "split"},
        {&predictions, "predictions"}};
    for (const auto& [v, key] : paths)
      if (*v) kv[key] = **v;
    return kv;
  }
};

void add_flags(CLI::App* cmd, Flags& f) {
  cmd->add_option("--config", f.config, "key=value file; flags override it");
  cmd->add_option("--seed", f.seed, "global seed (data generation, init, sampling)");
  cmd->add_option("--out", f.out, "output directory");
  cmd->add_option("--threads", f.threads, "worker cap")->check(CLI::PositiveNumber);
  cmd->add_option("--shots", f.shots, "labeled samples per class")->check(CLI::IsMember({1, 2, 4, 8, 16}));
  cmd->add_option("--nw", f.nw, "tracklet half-window");
  cmd->add_option("--ablate", f.ablate, "drop a component (repeatable)")
      ->check(CLI::IsMember({"nst", "nsf", "ndf", "nt", "ncm", "nca"}));
  cmd->add_option("--class-pos", f.class_pos, "class word position")->check(CLI::IsMember({"start", "middle", "end"}));
  cmd->add_option("--prompt-len", f.prompt_len, "prompt rows per aspect")->check(CLI::PositiveNumber);
  cmd->add_option("--data", f.data, "dataset directory");
  cmd->add_option("--stats", f.stats, "dynamic_stats.csv to use instead of the dataset's");
  cmd->add_option("--checkpoint", f.checkpoint, "trained model");
  cmd->add_option("--gps", f.gps, "gps.csv (default: <data>/gps.csv)");
  cmd->add_option("--samples", f.samples, "file listing image paths, one per line");
  cmd->add_option("--template", f.tmpl, "description template file");
  cmd->add_option("--sample", f.sample, "image path of one sample");
  cmd->add_option("--split", f.split, "train or test")->check(CLI::IsMember({"train", "test"}));
  cmd->add_option("--predictions", f.predictions, "predictions.csv to score instead of a checkpoint");
  cmd->add_option("--set", f.set, "any config key, as key=value (repeatable)");
}

/// Config values go through the CSV parsers; a bad value is a usage error.
template <class F>
auto config_value(F&& f) {
  try {
    return f();
  } catch (const ParseError& e) {
    std::string msg = e.what();
    if (const std::string pre = "parse error: "; msg.starts_with(pre)) msg.erase(0, pre.size());
    throw ConfigError(msg);
  }
}

struct Run {
  std::string command;
  KeyValues kv;

  const std::string& get(const std::string& key) const { return kv.at(key); }
  std::optional<fs::path> path(const std::string& key) const {
    const auto& v = kv.at(key);
    return v.empty() ? std::nullopt : std::optional<fs::path>(v);
  }
  fs::path require(const std::string& key) const {
    auto p = path(key);
    if (!p) throw ConfigError(command + " needs --" + key);
    return *p;
  }
  std::uint64_t seed() const {
    try {
      return static_cast<std::uint64_t>(csv::parse_int(kv.at("seed"), "seed"));
    } catch (const Error&) {
      throw ConfigError("seed must be a non-negative integer");
    }
  }
  unsigned threads() const {
    const auto t = config_value([&] { return csv::parse_int(kv.at("threads"), "threads"); });
    if (t < 1) throw ConfigError("threads must be positive");
    return static_cast<unsigned>(t);
  }
  fs::path out() const { return kv.at("out"); }

  KeyValues seeded(KeyValues kv2) const {
    const std::string s = std::to_string(seed());
    for (const char* k : kDerivedSeeds) kv2[k] = s;
    return kv2;
  }
  SynthConfig synth() const {
    return config_value([&] { return SynthConfig::from_map(seeded(kv), SynthConfig{}); });
  }
  ModelConfig model() const {
    return config_value([&] { return ModelConfig::from_map(seeded(kv), ModelConfig::desk()); });
  }
  TrainingConfig training() const {
    auto t = config_value([&] { return TrainingConfig::from_map(seeded(kv), TrainingConfig{}); });
    t.validate();
    return t;
  }
  MatchSettings match() const {
    return config_value([&] { return MatchSettings::from_map(kv, MatchSettings{}); });
  }

  /// The resolved configuration, replayable with --config.
  void echo(const KeyValues& extra = {}) const {
    fs::create_directories(out());
    std::ofstream os(out() / "config.txt");
    if (!os) throw DataError("cannot write " + (out() / "config.txt").string());
    os << "# stclip " << command << "\n" << format_key_values(overlay(kv, extra));
  }
};

Dataset load_data(const Run& run) {
  return load_dataset(run.require("data"), traffic_scene_aspects(), run.path("stats"));
}

ModelState load_model(const Run& run) { return ModelState::load(run.require("checkpoint"), traffic_scene_aspects()); }

/// Model settings as stored in a checkpoint, minus the derived seed.
KeyValues model_keys(const ModelState& m) {
  auto kv = m.config().to_map();
  kv.erase("model.seed");
  return kv;
}

std::string hex(std::uint64_t h) {
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

std::uint64_t file_hash(const fs::path& path) {
  std::ifstream is(path, std::ios::binary);
  std::ostringstream ss;
  ss << is.rdbuf();
  const std::string bytes = ss.str();
  return fnv1a(bytes.data(), bytes.size());
}

std::vector<const SceneSample*> select_samples(const Run& run, const Dataset& data) {
  if (auto list = run.path("samples")) {
    std::ifstream is(*list);
    if (!is) throw DataError("cannot open sample list " + list->string());
    std::vector<const SceneSample*> out;
    std::string line;
    while (std::getline(is, line)) {
      if (!line.empty() && line.back() == '\r') line.pop_back();
      if (line.empty() || line[0] == '#') continue;
      const SceneSample* hit = nullptr;
      for (const auto& s : data.samples)
        if (s.record.image_path == line) hit = &s;
      if (!hit) throw LookupError("sample '" + line + "' is not in the dataset");
      out.push_back(hit);
    }
    return out;
  }
  auto out = data.split(run.get("split"));
  if (out.empty()) throw DataError("split '" + run.get("split") + "' is empty");
  return out;
}

void print_metrics(const std::vector<AspectMetrics>& metrics) {
  for (const auto& m : metrics)
    std::printf("%-14s ACC %.3f  F1 %.3f  (%zu/%zu)\n", m.aspect.c_str(), m.accuracy, m.macro_f1, m.correct, m.total);
}

// ---- commands ---------------------------------------------------------------------------

int cmd_synth(const Run& run) {
  const auto cfg = run.synth();
  const auto aspects = traffic_scene_aspects();
  const auto world = generate_world(cfg, aspects);
  write_world(run.out(), world, aspects);
  run.echo();
  std::printf("segments %zu, trajectories %zu, samples %zu -> %s\n", world.network.size(), world.trajectories.size(),
              world.records.size(), run.out().string().c_str());
  return 0;
}

int cmd_match(const Run& run) {
  const auto settings = run.match();
  const fs::path data = run.require("data");
  const auto network = load_road_network(data);
  const auto gps = load_gps(run.path("gps").value_or(data / "gps.csv"));
  const auto index = SpatialIndex::build(network, settings.cell);
  const auto matched = match_all(gps, index, settings.params, run.threads());
  const double window = run.synth().stats_window;
  fs::create_directories(run.out());
  write_matched(run.out() / "matched.csv", matched);
  write_dynamic_stats(run.out() / "dynamic_stats.csv", compute_dynamic_stats(matched, network, window));
  run.echo();
  std::printf("matched %zu trajectories -> %s\n", matched.size(), run.out().string().c_str());
  if (!run.path("gps") && fs::exists(data / "matched.csv")) {
    const auto truth = load_matched(data / "matched.csv");
    std::size_t same = 0, compared = 0;
    for (std::size_t i = 0; i < std::min(truth.size(), matched.size()); ++i) {
      std::vector<SegmentId> a, b;
      for (const auto& s : truth[i].samples) a.push_back(s.segment_id);
      for (const auto& s : matched[i].samples) b.push_back(s.segment_id);
      same += a == b;
      ++compared;
    }
    std::printf("routes equal to the generating route: %zu/%zu\n", same, compared);
  }
  return 0;
}

int cmd_featurize(const Run& run) {
  const auto data = load_data(run);
  const auto model = run.path("checkpoint") ? load_model(run) : build_model(run.model(), data);
  fs::create_directories(run.out());
  std::ofstream os(run.out() / "context.csv");
  csv::write_row(os, {"image_path", "split", "context"});
  for (const auto& s : data.samples) {
    Tape tape(false);
    const Var r = st_context(tape, model, context_for(data, s, model.config().window));
    std::vector<std::string> vals;
    for (double v : r.value().data()) vals.push_back(csv::format_double(v));
    csv::write_row(os, {s.record.image_path, s.image.split, csv::join(vals, ';')});
  }
  run.echo(model_keys(model));
  std::printf("context vectors for %zu samples -> %s\n", data.samples.size(), (run.out() / "context.csv").c_str());
  return 0;
}

int cmd_train(const Run& run) {
  const auto data = load_data(run);
  const auto tc = run.training();
  ModelState model = build_model(run.model(), data);
  const auto train_split = prepare_samples(model, data, data.split("train"));
  std::vector<std::vector<std::size_t>> labels;
  for (const auto& s : train_split) labels.push_back(s.labels);
  std::vector<LabeledSample> pool;
  for (std::size_t i : few_shot_sample(labels, data.aspects, tc.shots, tc.seed)) pool.push_back(train_split[i]);

  const auto log = train(model, pool, tc);
  fs::create_directories(run.out());
  const auto ckpt = run.out() / "checkpoint.bin";
  model.save(ckpt);
  write_training_log(run.out() / "training_log.csv", log, data.aspects);
  run.echo(model_keys(model));
  const auto& last = log.epochs.empty() ? EpochRecord{} : log.epochs.back();
  std::printf("trained on %zu samples for %zu epochs, final mean loss %.4f\n", pool.size(), log.epochs.size(),
              last.mean_loss);
  std::printf("frozen backbone %s, checkpoint %s -> %s\n", hex(log.frozen_hash_after).c_str(),
              hex(file_hash(ckpt)).c_str(), ckpt.c_str());
  return 0;
}

/// predictions.csv from an earlier eval, scored against the dataset labels.
std::vector<AspectMetrics> score_predictions(const fs::path& path, const Dataset& data) {
  const auto t = csv::Table::read(path);
  const std::size_t c_id = t.column("sample_id"), c_aspect = t.column("aspect"), c_pred = t.column("predicted_index");
  std::map<std::string, const SceneSample*> by_id;
  for (const auto& s : data.samples) by_id[s.record.image_path] = &s;
  std::map<std::string, std::vector<std::optional<std::size_t>>> pred;
  std::vector<std::string> order;
  for (std::size_t r = 0; r < t.rows(); ++r) {
    const std::string where = t.source() + ":" + std::to_string(t.line_of(r));
    const auto& id = t.cell(r, c_id);
    if (!by_id.count(id)) throw LookupError(where + ": sample '" + id + "' is not in the dataset");
    std::size_t p = 0;
    while (p < data.aspects.size() && data.aspects[p].name != t.cell(r, c_aspect)) ++p;
    if (p == data.aspects.size()) throw IntegrityError(where + ": unknown aspect '" + t.cell(r, c_aspect) + "'");
    auto [it, fresh] = pred.try_emplace(id, data.aspects.size());
    if (fresh) order.push_back(id);
    const auto k = t.get_int(r, c_pred);
    if (k < 0 || static_cast<std::size_t>(k) >= data.aspects[p].words.size())
      throw IntegrityError(where + ": predicted index out of range");
    it->second[p] = static_cast<std::size_t>(k);
  }
  std::vector<std::vector<std::size_t>> predicted, truth;
  for (const auto& id : order) {
    std::vector<std::size_t> row;
    for (std::size_t p = 0; p < data.aspects.size(); ++p) {
      if (!pred[id][p]) throw IntegrityError(path.string() + ": no " + data.aspects[p].name + " prediction for " + id);
      row.push_back(*pred[id][p]);
    }
    predicted.push_back(row);
    std::vector<std::size_t> y;
    for (int k : by_id[id]->record.label_indices) y.push_back(static_cast<std::size_t>(k));
    truth.push_back(y);
  }
  return evaluate(predicted, truth, data.aspects);
}

int cmd_eval(const Run& run) {
  const auto data = load_data(run);
  fs::create_directories(run.out());
  if (auto preds = run.path("predictions")) {
    const auto metrics = score_predictions(*preds, data);
    write_metrics(run.out() / "metrics.csv", metrics);
    run.echo();
    print_metrics(metrics);
    return 0;
  }
  const auto model = load_model(run);
  const auto chosen = select_samples(run, data);
  const auto samples = prepare_samples(model, data, chosen);
  const auto result = evaluate_model(model, samples);
  write_predictions(run.out() / "predictions.csv", samples, result, data.aspects);
  write_metrics(run.out() / "metrics.csv", result.metrics);
  run.echo(model_keys(model));
  print_metrics(result.metrics);
  return 0;
}

int cmd_describe(const Run& run) {
  const auto data = load_data(run);
  const auto model = load_model(run);
  const auto tmpl = run.path("template") ? DescriptionTemplate::load(*run.path("template"), data.aspects)
                                         : DescriptionTemplate(kDefaultTemplate, data.aspects);
  fs::create_directories(run.out());
  std::ofstream os(run.out() / "descriptions.csv");
  csv::write_row(os, {"image_path", "description"});
  for (const SceneSample* s : select_samples(run, data)) {
    const auto in = prepare_sample(model, data, *s);
    const auto text = render_description(predict_aspects(model, in.input), tmpl, data.aspects);
    csv::write_row(os, {s->record.image_path, text});
    std::printf("%s: %s\n", s->record.image_path.c_str(), text.c_str());
  }
  run.echo(model_keys(model));
  return 0;
}

int cmd_gradcheck(const Run& run) {
  const auto ablation = AblationFlags::parse(run.get("model.ablation"));
  const auto report = check_model_gradients(run.seed(), ablation);
  fs::create_directories(run.out());
  std::ofstream os(run.out() / "gradcheck.csv");
  csv::write_row(os, {"parameter", "coords", "max_rel_error", "max_abs_grad"});
  for (const auto& p : report.params) {
    csv::write_row(os, {p.name, std::to_string(p.coords), csv::format_double(p.max_rel_error),
                        csv::format_double(p.max_abs_grad)});
    std::printf("%-34s %5zu  rel %.2e  |g| %.2e%s\n", p.name.c_str(), p.coords, p.max_rel_error, p.max_abs_grad,
                p.max_rel_error < kGradCheckTolerance ? "" : "  FAIL");
  }
  run.echo();
  std::printf("%zu coordinates, max relative error %.3e, frozen gradient entries %zu\n", report.coords_checked,
              report.max_rel_error, report.frozen_grad_entries);
  if (report.frozen_grad_entries != 0) return 5;
  if (!gradients_pass(report)) return 4;
  return 0;
}

int cmd_export_attn(const Run& run) {
  const auto data = load_data(run);
  const auto model = load_model(run);
  const SceneSample* chosen = nullptr;
  if (auto name = run.path("sample")) {
    for (const auto& s : data.samples)
      if (s.record.image_path == name->string()) chosen = &s;
    if (!chosen) throw LookupError("sample '" + name->string() + "' is not in the dataset");
  } else {
    const auto split = data.split(run.get("split"));
    if (split.empty()) throw DataError("split '" + run.get("split") + "' is empty");
    chosen = split.front();
  }
  const auto in = prepare_sample(model, data, *chosen);
  fs::create_directories(run.out());
  export_attention(model, in.input, run.out() / "attention.txt");
  run.echo(overlay(model_keys(model), {{"sample", chosen->record.image_path}}));
  std::printf("attention for %s -> %s\n", chosen->record.image_path.c_str(), (run.out() / "attention.txt").c_str());
  return 0;
}

int exit_code(ErrorKind kind) {
  switch (kind) {
    case ErrorKind::Usage: return 2;
    case ErrorKind::Data: return 3;
    case ErrorKind::Numeric: return 4;
    case ErrorKind::Contract: return 5;
  }
  return 3;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"ST-aware few-shot traffic scene understanding on synthetic data"};
  app.footer(kExitCodes);
  app.require_subcommand(1);

  struct Command {
    const char* name;
    const char* help;
    int (*fn)(const Run&);
  };
  const Command commands[] = {
      {"synth", "generate a synthetic dataset directory", cmd_synth},
      {"match", "map-match GPS trajectories and derive dynamic statistics", cmd_match},
      {"featurize", "write the context vector of every sample", cmd_featurize},
      {"train", "few-shot training; writes checkpoint and log", cmd_train},
      {"eval", "per-aspect ACC and macro-F1 on a split", cmd_eval},
      {"describe", "render text descriptions for samples", cmd_describe},
      {"gradcheck", "finite-difference check of the full model at toy size", cmd_gradcheck},
      {"export-attn", "dump attention weights for one sample", cmd_export_attn},
  };
  Flags flags;
  std::vector<std::pair<CLI::App*, const Command*>> subs;
  for (const auto& c : commands) {
    auto* sub = app.add_subcommand(c.name, c.help);
    add_flags(sub, flags);
    sub->footer(kExitCodes);
    subs.emplace_back(sub, &c);
  }

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 2;
  }

  try {
    Run run;
    for (const auto& [sub, c] : subs)
      if (sub->parsed()) {
        run.command = c->name;
        const KeyValues base = defaults();
        KeyValues file;
        if (!flags.config.empty()) file = read_key_values(flags.config);
        const KeyValues cli = flags.to_map();
        reject_unknown(file, base);
        reject_unknown(cli, base);
        run.kv = overlay(overlay(base, file), cli);
        return c->fn(run);
      }
  } catch (const Error& e) {
    std::cerr << "stclip: " << e.what() << "\n";
    return exit_code(e.kind());
  } catch (const std::exception& e) {
    std::cerr << "stclip: " << e.what() << "\n";
    return 3;
  }
  return 2;
}
