#include "stclip/model.hpp"

#include <cmath>
#include <cstring>
#include <fstream>
#include <sstream>

#include "stclip/csv.hpp"
#include "stclip/error.hpp"

namespace stclip {

namespace {

constexpr char kMagic[8] = {'S', 'T', 'C', 'L', 'I', 'P', 'C', 'K'};
constexpr std::uint32_t kVersion = 1;

const char* kAblationNames[] = {"nst", "nsf", "ndf", "nt", "ncm", "nca"};

bool* flag_ptr(AblationFlags& f, const std::string& name) {
  if (name == "nst") return &f.nst;
  if (name == "nsf") return &f.nsf;
  if (name == "ndf") return &f.ndf;
  if (name == "nt") return &f.nt;
  if (name == "ncm") return &f.ncm;
  if (name == "nca") return &f.nca;
  return nullptr;
}

std::size_t to_size(const std::string& key, const std::string& v) {
  const auto n = csv::parse_int(v, "config key '" + key + "'");
  if (n < 0) throw ConfigError("config key '" + key + "' must be non-negative");
  return static_cast<std::size_t>(n);
}

}  // namespace

// ---- ablation flags -------------------------------------------------------------

std::string AblationFlags::to_string() const {
  std::string out;
  AblationFlags copy = *this;
  for (const char* n : kAblationNames) {
    if (*flag_ptr(copy, n)) {
      if (!out.empty()) out += '+';
      out += n;
    }
  }
  return out.empty() ? "none" : out;
}

void AblationFlags::enable(const std::string& name) {
  bool* f = flag_ptr(*this, name);
  if (!f) throw ConfigError("unknown ablation '" + name + "' (expected nst, nsf, ndf, nt, ncm or nca)");
  *f = true;
}

AblationFlags AblationFlags::parse(const std::string& text) {
  AblationFlags f;
  if (text.empty() || text == "none") return f;
  for (const auto& part : csv::split(text, '+')) f.enable(part);
  return f;
}

// ---- config ------------------------------------------------------------------

ModelConfig ModelConfig::desk() {
  ModelConfig c;
  c.dim = 32;
  c.prop_dim = 8;
  c.prompt_len = 8;
  c.patches = 16;
  c.latent_dim = 32;
  c.window = 1;
  c.tracklet_layers = 1;
  c.tracklet_heads = 2;
  c.attention_heads = 2;
  c.text_layers = 1;
  c.text_heads = 2;
  c.ff_mult = 4;
  return c;
}

void ModelConfig::validate() const {
  if (dim == 0 || prop_dim == 0 || prompt_len == 0 || patches == 0 || latent_dim == 0 || ff_mult == 0)
    throw ConfigError("model widths and lengths must be positive");
  for (auto [name, h] : {std::pair{"tracklet_heads", tracklet_heads}, std::pair{"attention_heads", attention_heads},
                         std::pair{"text_heads", text_heads}})
    if (h == 0 || dim % h != 0)
      throw ConfigError(std::string(name) + "=" + std::to_string(h) + " does not divide dim=" +
                        std::to_string(dim));
  if (!(temperature > 0)) throw ConfigError("temperature must be positive");
}

std::map<std::string, std::string> ModelConfig::to_map() const {
  return {
      {"model.dim", std::to_string(dim)},
      {"model.prop_dim", std::to_string(prop_dim)},
      {"model.prompt_len", std::to_string(prompt_len)},
      {"model.patches", std::to_string(patches)},
      {"model.latent_dim", std::to_string(latent_dim)},
      {"model.window", std::to_string(window)},
      {"model.tracklet_layers", std::to_string(tracklet_layers)},
      {"model.tracklet_heads", std::to_string(tracklet_heads)},
      {"model.attention_heads", std::to_string(attention_heads)},
      {"model.text_layers", std::to_string(text_layers)},
      {"model.text_heads", std::to_string(text_heads)},
      {"model.ff_mult", std::to_string(ff_mult)},
      {"model.temperature", csv::format_double(temperature)},
      {"model.class_position", stclip::to_string(class_position)},
      {"model.ablation", ablation.to_string()},
      {"model.vocab.segments", std::to_string(vocab.segments)},
      {"model.vocab.function_classes", std::to_string(vocab.function_classes)},
      {"model.vocab.lane_numbers", std::to_string(vocab.lane_numbers)},
      {"model.vocab.speed_classes", std::to_string(vocab.speed_classes)},
      {"model.vocab.out_degrees", std::to_string(vocab.out_degrees)},
      {"model.seed", std::to_string(seed)},
      {"model.backbone_seed", std::to_string(backbone_seed)},
  };
}

ModelConfig ModelConfig::from_map(const std::map<std::string, std::string>& kv, ModelConfig c) {
  auto size = [&](const char* key, std::size_t& out) {
    if (auto it = kv.find(key); it != kv.end()) out = to_size(key, it->second);
  };
  size("model.dim", c.dim);
  size("model.prop_dim", c.prop_dim);
  size("model.prompt_len", c.prompt_len);
  size("model.patches", c.patches);
  size("model.latent_dim", c.latent_dim);
  size("model.window", c.window);
  size("model.tracklet_layers", c.tracklet_layers);
  size("model.tracklet_heads", c.tracklet_heads);
  size("model.attention_heads", c.attention_heads);
  size("model.text_layers", c.text_layers);
  size("model.text_heads", c.text_heads);
  size("model.ff_mult", c.ff_mult);
  size("model.vocab.segments", c.vocab.segments);
  size("model.vocab.function_classes", c.vocab.function_classes);
  size("model.vocab.lane_numbers", c.vocab.lane_numbers);
  size("model.vocab.speed_classes", c.vocab.speed_classes);
  size("model.vocab.out_degrees", c.vocab.out_degrees);
  if (auto it = kv.find("model.temperature"); it != kv.end())
    c.temperature = csv::parse_double(it->second, "config key 'model.temperature'");
  if (auto it = kv.find("model.class_position"); it != kv.end())
    c.class_position = parse_class_position(it->second);
  if (auto it = kv.find("model.ablation"); it != kv.end()) c.ablation = AblationFlags::parse(it->second);
  if (auto it = kv.find("model.seed"); it != kv.end()) c.seed = to_size("model.seed", it->second);
  if (auto it = kv.find("model.backbone_seed"); it != kv.end())
    c.backbone_seed = to_size("model.backbone_seed", it->second);
  return c;
}

ModelConfig ModelConfig::from_map(const std::map<std::string, std::string>& kv) {
  return from_map(kv, ModelConfig{});
}

// ---- model state ----------------------------------------------------------------

ModelState ModelState::init(const ModelConfig& config, const AspectSet& aspects) {
  config.validate();
  ModelState m;
  m.config_ = config;
  m.aspects_ = aspects;
  const std::size_t d = config.dim;

  auto frozen_rng = substream(config.backbone_seed, "init.backbone");
  m.image_ = make_image_stub(m.store_, config.latent_dim, config.patches, d, frozen_rng);
  m.text_ = make_text_stub(m.store_, d, config.text_layers, config.text_heads, config.ff_mult * d, frozen_rng);
  m.words_ = make_class_words(m.store_, aspects, d, frozen_rng);

  auto rng = substream(config.seed, "init.trainable");
  m.tables_ = make_property_tables(m.store_, config.vocab, config.prop_dim, rng);
  m.fusion_ = make_fusion(m.store_, 8 * config.prop_dim, d, rng);
  m.tracklet_ = make_encoder(m.store_, "context.tracklet", d, config.tracklet_layers, config.tracklet_heads,
                             config.ff_mult * d, rng, false);
  m.tracklet_.final_gain->value = Tensor(1, d, kContextGainInit);
  m.scamp_ = make_scamp(m.store_, aspects, config.prompt_len, d, config.attention_heads, rng);
  return m;
}

ModelState ModelState::clone() const {
  ModelState m = init(config_, aspects_);
  auto dst = m.store_.all();
  auto src = store_.all();
  for (std::size_t i = 0; i < src.size(); ++i) dst[i]->value = src[i]->value;
  return m;
}

void ModelState::set_temperature(double mu) {
  if (!(mu > 0)) throw ConfigError("temperature must be positive");
  config_.temperature = mu;
}

namespace {

std::uint64_t hash_params(const std::vector<const Parameter*>& params, bool frozen) {
  std::uint64_t h = 1469598103934665603ull;
  for (const Parameter* p : params) {
    if (p->frozen != frozen) continue;
    h = fnv1a(p->name.data(), p->name.size(), h);
    const std::uint64_t shape[2] = {p->value.rows(), p->value.cols()};
    h = fnv1a(shape, sizeof shape, h);
    h = fnv1a(p->value.data().data(), p->value.size() * sizeof(double), h);
  }
  return h;
}

template <typename T>
void put(std::ostream& os, const T& v) {
  os.write(reinterpret_cast<const char*>(&v), sizeof v);
}

void put_string(std::ostream& os, const std::string& s) {
  put<std::uint64_t>(os, s.size());
  os.write(s.data(), static_cast<std::streamsize>(s.size()));
}

template <typename T>
T get(std::istream& is, const std::string& what) {
  T v{};
  is.read(reinterpret_cast<char*>(&v), sizeof v);
  if (!is) throw DataError("truncated checkpoint while reading " + what);
  return v;
}

std::string get_string(std::istream& is, const std::string& what) {
  const auto n = get<std::uint64_t>(is, what);
  if (n > (1u << 20)) throw DataError("corrupt checkpoint: oversized " + what);
  std::string s(n, '\0');
  is.read(s.data(), static_cast<std::streamsize>(n));
  if (!is) throw DataError("truncated checkpoint while reading " + what);
  return s;
}

}  // namespace

std::uint64_t ModelState::frozen_hash() const { return hash_params(store_.all(), true); }
std::uint64_t ModelState::trainable_hash() const { return hash_params(store_.all(), false); }

void ModelState::save(const std::filesystem::path& path) const {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream os(path, std::ios::binary);
  if (!os) throw DataError("cannot write " + path.string());
  os.write(kMagic, sizeof kMagic);
  put(os, kVersion);
  const auto kv = config_.to_map();
  put<std::uint64_t>(os, kv.size());
  for (const auto& [k, v] : kv) {
    put_string(os, k);
    put_string(os, v);
  }
  const auto params = store_.all();
  put<std::uint64_t>(os, params.size());
  for (const Parameter* p : params) {
    put_string(os, p->name);
    put<std::uint8_t>(os, p->frozen ? 1 : 0);
    put<std::uint64_t>(os, p->value.rows());
    put<std::uint64_t>(os, p->value.cols());
    os.write(reinterpret_cast<const char*>(p->value.data().data()),
             static_cast<std::streamsize>(p->value.size() * sizeof(double)));
  }
  if (!os) throw DataError("failed writing " + path.string());
}

ModelState ModelState::load(const std::filesystem::path& path, const AspectSet& aspects) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw DataError("cannot open checkpoint " + path.string());
  char magic[sizeof kMagic];
  is.read(magic, sizeof magic);
  if (!is || std::memcmp(magic, kMagic, sizeof kMagic) != 0)
    throw DataError(path.string() + " is not a checkpoint");
  const auto version = get<std::uint32_t>(is, "version");
  if (version != kVersion) throw DataError("unsupported checkpoint version " + std::to_string(version));
  std::map<std::string, std::string> kv;
  const auto nkv = get<std::uint64_t>(is, "config size");
  for (std::uint64_t i = 0; i < nkv; ++i) {
    auto k = get_string(is, "config key");
    kv[k] = get_string(is, "config value");
  }
  ModelState m = init(ModelConfig::from_map(kv), aspects);
  const auto n = get<std::uint64_t>(is, "parameter count");
  if (n != m.store_.size())
    throw IntegrityError("checkpoint holds " + std::to_string(n) + " parameters, model expects " +
                         std::to_string(m.store_.size()));
  for (std::uint64_t i = 0; i < n; ++i) {
    const auto name = get_string(is, "parameter name");
    const bool frozen = get<std::uint8_t>(is, name) != 0;
    const auto rows = get<std::uint64_t>(is, name), cols = get<std::uint64_t>(is, name);
    if (!m.store_.contains(name)) throw IntegrityError("checkpoint parameter '" + name + "' is unknown");
    Parameter& p = m.store_.get(name);
    if (p.frozen != frozen || p.value.rows() != rows || p.value.cols() != cols)
      throw IntegrityError("checkpoint parameter '" + name + "' has the wrong shape or partition");
    is.read(reinterpret_cast<char*>(p.value.data().data()),
            static_cast<std::streamsize>(rows * cols * sizeof(double)));
    if (!is) throw DataError("truncated checkpoint in parameter '" + name + "'");
  }
  return m;
}

double align_backbone(ModelState& model, const ConceptLatents& concepts, const AlignmentOptions& options) {
  const auto& aspects = model.aspects();
  if (concepts.size() != aspects.size()) throw ShapeError("concept latents do not match the aspect set");
  std::vector<std::vector<Tensor>> targets(aspects.size());
  for (std::size_t p = 0; p < aspects.size(); ++p) {
    if (concepts[p].size() != aspects[p].words.size())
      throw ShapeError("aspect '" + aspects[p].name + "' needs " + std::to_string(aspects[p].words.size()) +
                       " concept latents");
    for (const Tensor& c : concepts[p]) targets[p].push_back(encode_image_stub(model.image_stub(), c).global);
  }
  const auto& cfg = model.config();
  const Tensor empty_prompt(cfg.prompt_len, cfg.dim);
  std::vector<Parameter*> words;
  for (const auto& row : model.class_words().words) words.insert(words.end(), row.begin(), row.end());
  for (Parameter* w : words) w->frozen = false;
  double loss = 0;
  try {
    for (std::size_t step = 0; step < options.steps; ++step) {
      for (Parameter* w : words) w->grad = Tensor();
      Tape tape;
      std::vector<Var> parts;
      for (std::size_t p = 0; p < aspects.size(); ++p) {
        std::vector<Var> cw;
        for (Parameter* w : model.class_words().words[p]) cw.push_back(tape.param(*w));
        const auto text =
            encode_text_classes(tape, model.text_stub(), tape.constant(empty_prompt), cw, cfg.class_position);
        for (std::size_t k = 0; k < text.size(); ++k)
          parts.push_back(
              cross_entropy(class_probabilities(tape.constant(targets[p][k]), text, options.temperature), k));
      }
      Var total = sum(parts);
      loss = total.value()[0] / static_cast<double>(parts.size());
      if (!std::isfinite(loss)) throw NumericError("backbone alignment diverged at step " + std::to_string(step));
      tape.backward(total);
      for (Parameter* w : words) {
        auto& v = w->value.data();
        for (std::size_t i = 0; i < v.size(); ++i) v[i] -= options.learning_rate * w->grad.data()[i];
      }
    }
  } catch (...) {
    for (Parameter* w : words) w->frozen = true;
    throw;
  }
  for (Parameter* w : words) {
    w->frozen = true;
    w->grad = Tensor();
  }
  return loss;
}

// ---- forward -----------------------------------------------------------------------

Var segment_feature(Tape& tape, const ModelState& model, const SegmentCategories& c) {
  const auto& cfg = model.config();
  Var st = cfg.ablation.nsf ? tape.constant(Tensor(1, 6 * cfg.prop_dim)) : embed_static(tape, model.tables(), c);
  Var dy = cfg.ablation.ndf ? tape.constant(Tensor(1, 2 * cfg.prop_dim)) : embed_dynamic(tape, model.tables(), c);
  return fuse_segment_features(tape, model.fusion(), st, dy);
}

Var st_context(Tape& tape, const ModelState& model, const ContextInput& input) {
  const auto& cfg = model.config();
  if (cfg.ablation.nst) return tape.constant(Tensor(1, cfg.dim));
  const std::size_t rows = 2 * cfg.window + 1;
  if (input.rows.size() != rows)
    throw ShapeError("tracklet has " + std::to_string(input.rows.size()) + " rows, window needs " +
                     std::to_string(rows));
  if (!input.rows[cfg.window]) throw DataError("tracklet center row is missing");
  if (cfg.ablation.nt) return segment_feature(tape, model, *input.rows[cfg.window]);
  Tracklet t;
  t.center = cfg.window;
  std::vector<Var> parts;
  for (const auto& row : input.rows) {
    t.valid.push_back(row.has_value());
    parts.push_back(row ? segment_feature(tape, model, *row) : tape.constant(Tensor(1, cfg.dim)));
  }
  t.rows = concat_rows(parts);
  return encode_tracklet(tape, model.tracklet_encoder(), t);
}

std::vector<std::vector<Var>> aspect_text_features(Tape& tape, const ModelState& model, Var context,
                                                   Var patches, ForwardTrace* trace) {
  const auto& cfg = model.config();
  const auto& s = model.scamp();
  const std::size_t n = model.aspects().size();
  std::vector<Var> prompts;
  prompts.reserve(n);
  if (trace) trace->cross_modal.assign(n, {});
  for (std::size_t p = 0; p < n; ++p) {
    Var v = inject_context(tape.param(*s.prompts[p]), context);
    if (!cfg.ablation.ncm)
      v = cross_modal_attention(tape, v, patches, s.cross_modal[p], trace ? &trace->cross_modal[p] : nullptr);
    prompts.push_back(v);
  }
  if (!cfg.ablation.nca)
    prompts = cross_aspect_attention(tape, prompts, s.cross_aspect, trace ? &trace->cross_aspect : nullptr);
  std::vector<std::vector<Var>> out(n);
  for (std::size_t p = 0; p < n; ++p) {
    std::vector<Var> words;
    for (Parameter* w : model.class_words().words[p]) words.push_back(tape.param(*w));
    out[p] = encode_text_classes(tape, model.text_stub(), prompts[p], words, cfg.class_position);
  }
  return out;
}

Var class_probabilities(Var image, const std::vector<Var>& text, double mu) {
  if (!(mu > 0)) throw ConfigError("temperature must be positive");
  std::vector<Var> sims;
  sims.reserve(text.size());
  for (const Var& t : text) sims.push_back(cosine_similarity(image, t));
  return softmax_rows(scale(concat_cols(sims), 1.0 / mu));
}

ForwardResult forward(Tape& tape, const ModelState& model, const SampleInput& sample, ForwardTrace* trace) {
  ForwardResult r;
  r.context = st_context(tape, model, sample.context);
  Var patches = tape.constant(sample.patches);
  Var image = tape.constant(sample.global);
  r.text_features = aspect_text_features(tape, model, r.context, patches, trace);
  for (const auto& t : r.text_features)
    r.probabilities.push_back(class_probabilities(image, t, model.config().temperature));
  return r;
}

}  // namespace stclip
