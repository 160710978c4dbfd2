#pragma once

// Frozen stand-ins for the pretrained image and text towers, plus the frozen
// class-word embeddings.

#include <random>
#include <vector>

#include "stclip/aspects.hpp"
#include "stclip/autodiff.hpp"
#include "stclip/layers.hpp"

namespace stclip {

enum class ClassPosition { Start, Middle, End };

/// One image latent per (aspect, class word): the visual concept the word names.
using ConceptLatents = std::vector<std::vector<Tensor>>;

const char* to_string(ClassPosition p);
ClassPosition parse_class_position(const std::string& s);

/// Latent -> N_p patch rows, one affine map per patch.
struct ImageStub {
  Parameter* weight = nullptr;  // latent_dim x (patches * dim)
  Parameter* bias = nullptr;    // 1 x (patches * dim)
  std::size_t patches = 0;
  std::size_t dim = 0;
};

/// Patch biases outweigh the latent term, so every global feature shares a
/// common direction, as real CLIP image embeddings do.
inline constexpr double kPatchBiasStd = 3.0;

ImageStub make_image_stub(ParamStore& store, std::size_t latent_dim, std::size_t patches,
                          std::size_t dim, std::mt19937_64& rng);

struct ImageFeatures {
  Tensor patches;  // N_p x D
  Tensor global;   // 1 x D, layer-normalized mean of the patch rows
};

ImageFeatures encode_image_stub(const ImageStub& stub, const Tensor& latent);

struct TextStub {
  EncoderParams encoder;
  Parameter* projection = nullptr;  // D x D
};

TextStub make_text_stub(ParamStore& store, std::size_t dim, std::size_t layers, std::size_t heads,
                        std::size_t ff_dim, std::mt19937_64& rng);

/// Frozen Transformer over a token sequence; the last position's final
/// representation, projected, is the text feature (1 x D).
Var encode_text(Tape& tape, const TextStub& stub, Var tokens);

/// Row index of the class word in a sequence of prompt_len + 1 rows.
std::size_t class_row(ClassPosition pos, std::size_t prompt_len);

/// Prompt rows with the class word spliced in at `pos`.
Var build_class_text_input(Var prompts, Var class_word, ClassPosition pos);

/// Text features for one aspect, one per class word: equivalent to
/// encode_text(build_class_text_input(prompts, c_k, pos)) for every k, with
/// the class-independent work done once.
std::vector<Var> encode_text_classes(Tape& tape, const TextStub& stub, Var prompts,
                                     const std::vector<Var>& class_words, ClassPosition pos);

struct ClassWordTable {
  std::vector<std::vector<Parameter*>> words;  // [aspect][class], 1 x D each
};

ClassWordTable make_class_words(ParamStore& store, const AspectSet& aspects, std::size_t dim,
                                std::mt19937_64& rng);

}  // namespace stclip
