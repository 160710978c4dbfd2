#pragma once

// Full model state: trainable context/prompt/attention parameters and the
// frozen backbone, with the forward pass from (image, tracklet) to
// per-aspect class probabilities.

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "stclip/aspects.hpp"
#include "stclip/encoders.hpp"
#include "stclip/layers.hpp"
#include "stclip/scamp.hpp"
#include "stclip/seeding.hpp"
#include "stclip/st_context.hpp"

namespace stclip {

/// Ablation switches. nst: r = 0. nsf / ndf: drop the static / dynamic
/// embedding. nt: r is the fused center feature, no tracklet encoder.
/// ncm: skip cross-modal attention. nca: skip cross-aspect attention.
struct AblationFlags {
  bool nst = false;
  bool nsf = false;
  bool ndf = false;
  bool nt = false;
  bool ncm = false;
  bool nca = false;

  /// "none" or names joined by '+', e.g. "nst+ncm".
  std::string to_string() const;
  static AblationFlags parse(const std::string& text);
  void enable(const std::string& name);
  friend bool operator==(const AblationFlags&, const AblationFlags&) = default;
};

struct ModelConfig {
  std::size_t dim = 512;
  std::size_t prop_dim = 64;
  std::size_t prompt_len = 16;
  std::size_t patches = 16;
  std::size_t latent_dim = 64;
  std::size_t window = 1;
  std::size_t tracklet_layers = 2;
  std::size_t tracklet_heads = 8;
  std::size_t attention_heads = 8;
  std::size_t text_layers = 2;
  std::size_t text_heads = 8;
  std::size_t ff_mult = 4;
  double temperature = 0.01;
  ClassPosition class_position = ClassPosition::End;
  AblationFlags ablation;
  PropertyVocab vocab;
  std::uint64_t seed = 0;           // trainable initialization
  std::uint64_t backbone_seed = 0;  // frozen encoders and class words

  /// Reduced widths that keep single-core experiments within minutes.
  static ModelConfig desk();

  void validate() const;
  std::map<std::string, std::string> to_map() const;
  /// Keys absent from `kv` keep the values already in `base`.
  static ModelConfig from_map(const std::map<std::string, std::string>& kv, ModelConfig base);
  static ModelConfig from_map(const std::map<std::string, std::string>& kv);
};

struct ContextInput {
  std::vector<std::optional<SegmentCategories>> rows;  // 2 * window + 1
};

struct SampleInput {
  Tensor patches;  // N_p x D
  Tensor global;   // 1 x D
  ContextInput context;
};

struct ForwardTrace {
  std::vector<AttentionTrace> cross_modal;  // per aspect
  std::vector<Tensor> cross_aspect;         // P*P blocks, row-major over (p, q)
};

/// Initial gain of the tracklet encoder's output norm. At 1 the context vector
/// (norm sqrt(D)) would drown the prompt rows it is added to.
inline constexpr double kContextGainInit = 0.1;

struct ForwardResult {
  Var context;                                 // 1 x D
  std::vector<std::vector<Var>> text_features;  // [aspect][class], 1 x D
  std::vector<Var> probabilities;              // [aspect], 1 x K_p
};

class ModelState {
 public:
  static ModelState init(const ModelConfig& config, const AspectSet& aspects);

  ModelState(ModelState&&) = default;
  ModelState& operator=(ModelState&&) = default;
  ModelState clone() const;

  const ModelConfig& config() const { return config_; }
  /// Changes forward-pass switches that do not alter the parameter layout.
  void set_ablation(const AblationFlags& flags) { config_.ablation = flags; }
  void set_temperature(double mu);
  const AspectSet& aspects() const { return aspects_; }
  ParamStore& params() { return store_; }
  const ParamStore& params() const { return store_; }

  const PropertyTables& tables() const { return tables_; }
  const FusionParams& fusion() const { return fusion_; }
  const EncoderParams& tracklet_encoder() const { return tracklet_; }
  const ImageStub& image_stub() const { return image_; }
  const TextStub& text_stub() const { return text_; }
  const ClassWordTable& class_words() const { return words_; }
  const ScampParams& scamp() const { return scamp_; }

  /// FNV-1a over names, shapes and values of the frozen partition.
  std::uint64_t frozen_hash() const;
  std::uint64_t trainable_hash() const;

  void save(const std::filesystem::path& path) const;
  static ModelState load(const std::filesystem::path& path, const AspectSet& aspects);

 private:
  ModelState() = default;

  ModelConfig config_;
  AspectSet aspects_;
  ParamStore store_;
  PropertyTables tables_;
  FusionParams fusion_;
  EncoderParams tracklet_;
  ImageStub image_;
  TextStub text_;
  ClassWordTable words_;
  ScampParams scamp_;
};

struct AlignmentOptions {
  std::size_t steps = 300;
  double learning_rate = 0.5;
  double temperature = 0.1;
};

/// Stand-in for image-text pretraining. Fits the class words so that, with an
/// all-zero prompt, each word's text feature picks out the image feature of its
/// concept among the aspect's words. Returns the final mean loss. The class
/// words stay frozen for training.
double align_backbone(ModelState& model, const ConceptLatents& concepts, const AlignmentOptions& options = {});

/// Fused feature of one segment (1 x D), honoring nsf / ndf.
Var segment_feature(Tape& tape, const ModelState& model, const SegmentCategories& c);

/// Context vector r (1 x D).
Var st_context(Tape& tape, const ModelState& model, const ContextInput& input);

/// Text features for every (aspect, class word).
std::vector<std::vector<Var>> aspect_text_features(Tape& tape, const ModelState& model, Var context,
                                                   Var patches, ForwardTrace* trace = nullptr);

/// softmax_k(cos(image, text_k) / mu) as a 1 x K row.
Var class_probabilities(Var image, const std::vector<Var>& text, double mu);

ForwardResult forward(Tape& tape, const ModelState& model, const SampleInput& sample,
                      ForwardTrace* trace = nullptr);

}  // namespace stclip
