// Learnable prompt tokens, the frozen shared text-encoder surrogate and
// prototype construction.
//
// A prompt is a token sequence [prefix_1 .. prefix_N][label]. All prompt
// families (learnable ID, label-fixed OOD, label-adaptive OOD) go through
// the same DeskEncoder: mean-pool the tokens, apply a frozen linear map,
// project onto the unit sphere.
#pragma once

#include <compare>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "amcn/hyperparams.hpp"
#include "amcn/vecmath.hpp"

namespace amcn {

enum class TokenGroup : std::uint8_t {
  IdPrefix = 0,
  ClassLabel = 1,
  LfopPrefix = 2,
  LfopLabel = 3,
  LaopPrefix = 4,
  LaopLabel = 5,
};

const char* to_string(TokenGroup g);

// Identifies one token of the bank.
struct ParamKey {
  TokenGroup group;
  std::uint32_t index;

  auto operator<=>(const ParamKey&) const = default;
  std::string name() const;
};

struct TokenVector {
  Vec values;
  bool trainable = false;

  friend bool operator==(const TokenVector&, const TokenVector&) = default;
};

// Frozen d_tok x d linear map shared by every prompt family.
class DeskEncoder {
 public:
  DeskEncoder() = default;
  // Row-major d_tok x d matrix.
  DeskEncoder(std::uint32_t d_tok, std::uint32_t d, Vec projection, std::uint64_t seed = 0);

  // Seeded matrix with orthonormal columns (d_tok >= d) or rows (d_tok < d).
  static DeskEncoder random(std::uint32_t d_tok, std::uint32_t d, std::uint64_t seed);
  static DeskEncoder identity(std::uint32_t d);

  std::uint32_t d_tok() const { return d_tok_; }
  std::uint32_t dim() const { return d_; }
  std::uint64_t seed() const { return seed_; }
  const Vec& projection() const { return projection_; }

  // projection^T * t
  Vec project(ConstVecView t) const;
  // projection * g (pulls a gradient in embedding space back to token space)
  Vec pullback(ConstVecView g) const;

  friend bool operator==(const DeskEncoder&, const DeskEncoder&) = default;

 private:
  std::uint32_t d_tok_ = 0;
  std::uint32_t d_ = 0;
  std::uint64_t seed_ = 0;
  Vec projection_;
};

// All prompt tokens. Layout of id_prefixes:
//   shared:     [p][k]      -> p * n_ip + k
//   per-class:  [c][p][k]   -> (c * P + p) * n_ip + k
struct PromptBank {
  std::uint32_t C = 0, P = 0, S = 0, Z = 0;
  std::uint32_t n_ip = 0, n_lfop = 0, n_laop = 0;
  std::uint32_t d_tok = 0;
  bool per_class_id_prefix = false;

  std::vector<TokenVector> id_prefixes;
  std::vector<TokenVector> class_label_tokens;  // C, fixed
  std::vector<TokenVector> lfop_prefix;         // n_lfop, trainable
  std::vector<TokenVector> lfop_label_tokens;   // S, fixed
  std::vector<TokenVector> laop_prefix;         // n_laop, trainable
  std::vector<TokenVector> laop_label_tokens;   // Z, trainable

  // Throws InvalidBank when sizes, flags or widths are inconsistent.
  void validate() const;

  const std::vector<TokenVector>& group(TokenGroup g) const;
  std::vector<TokenVector>& group(TokenGroup g);
  const TokenVector& token(ParamKey key) const;
  TokenVector& token(ParamKey key);

  // Every trainable token, in a fixed canonical order.
  std::vector<ParamKey> census() const;
  std::size_t trainable_scalar_count() const;

  std::vector<ParamKey> id_prompt_keys(std::uint32_t cls, std::uint32_t p) const;
  std::vector<ParamKey> lfop_keys(std::uint32_t i) const;
  std::vector<ParamKey> laop_keys(std::uint32_t j) const;

  friend bool operator==(const PromptBank&, const PromptBank&) = default;
};

// Builds a bank from names. Fixed label tokens come from a seeded hash of
// the name; trainable prefixes are N(0, 0.02^2); LAOP labels start as copies
// of the first Z OOD name embeddings. Throws NameCollision when an OOD name
// is also a class name, InvalidBank when too few OOD names are given.
PromptBank init_bank(const HyperParams& hp, std::uint64_t seed,
                     const std::vector<std::string>& class_names,
                     const std::vector<std::string>& ood_names, std::uint32_t d_tok);

// Pseudo-random unit vector derived from (name, seed).
Vec label_token_from_name(const std::string& name, std::uint64_t seed, std::uint32_t d_tok);

// normalize(projection^T * mean(tokens)). Throws EmptyPromptError on an
// empty sequence, ZeroVector when the projected mean vanishes.
UnitEmbedding encode_prompt(const std::vector<const TokenVector*>& tokens, const DeskEncoder& enc);
UnitEmbedding encode_prompt(const std::vector<TokenVector>& tokens, const DeskEncoder& enc);

// One encoded prompt with the intermediates needed for backpropagation.
struct EncodedPrompt {
  std::vector<ParamKey> keys;
  Vec projected;  // pre-normalization encoder output
  UnitEmbedding unit;
};

// A prototype and the unnormalized mean it came from.
struct Prototype {
  Vec mean;
  UnitEmbedding unit;
};

enum class OodFamily : std::uint8_t { LabelFixed, LabelAdaptive };

// All prompt embeddings and prototypes for one parameter state. Losses,
// detection and metrics consume this snapshot instead of re-encoding.
struct EncodedBank {
  std::uint32_t C = 0, P = 0, S = 0, Z = 0;
  std::vector<EncodedPrompt> id_prompts;  // [c * P + p]
  std::vector<Prototype> id_prototypes;   // [c]
  std::vector<EncodedPrompt> ood_prompts;  // S label-fixed, then Z label-adaptive
  Prototype ood_prototype;
  Prototype lfop_prototype;
  Prototype laop_prototype;

  const UnitEmbedding& id_prototype(std::uint32_t cls) const;
  OodFamily family_of(std::size_t ood_index) const {
    return ood_index < S ? OodFamily::LabelFixed : OodFamily::LabelAdaptive;
  }
};

EncodedBank encode_bank(const PromptBank& bank, const DeskEncoder& enc);

UnitEmbedding id_prototype(const PromptBank& bank, const DeskEncoder& enc, std::uint32_t cls);

struct TaggedEmbedding {
  OodFamily family;
  UnitEmbedding embedding;
};
std::vector<TaggedEmbedding> ood_prompt_set(const PromptBank& bank, const DeskEncoder& enc);

UnitEmbedding ood_prototype(const PromptBank& bank, const DeskEncoder& enc);

// (label-fixed, label-adaptive) family prototypes.
std::pair<UnitEmbedding, UnitEmbedding> family_prototypes(const PromptBank& bank,
                                                          const DeskEncoder& enc);

// Normalized mean of unit vectors; throws ZeroVector when the mean vanishes.
Prototype make_prototype(const std::vector<const UnitEmbedding*>& members);

// Checkpoint file "AMCNBNK1": magic, nine u32 dims (C, P, S, Z, N_IP,
// N_lfop, N_laop, d_tok, d), then every token group in declaration order and
// the projection, all as little-endian f64. A per-class ID prefix layout is
// recognised from the payload size. Writes go through a temp file + rename.
void write_bank(const std::filesystem::path& path, const PromptBank& bank, const DeskEncoder& enc);
std::pair<PromptBank, DeskEncoder> read_bank(const std::filesystem::path& path);

}  // namespace amcn
