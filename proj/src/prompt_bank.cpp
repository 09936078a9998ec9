#include "amcn/prompt_bank.hpp"

#include <algorithm>
#include <cmath>
#include <random>
#include <set>
#include <sstream>

#include "amcn/errors.hpp"
#include "amcn/hashing.hpp"
#include "binary_io.hpp"

namespace amcn {

namespace {

constexpr std::string_view kBankMagic = "AMCNBNK1";
constexpr double kPrefixInitScale = 0.02;

std::vector<TokenVector> make_tokens(std::size_t count, std::uint32_t d_tok, bool trainable) {
  return std::vector<TokenVector>(count, TokenVector{Vec(d_tok, 0.0), trainable});
}

Vec gaussian_vec(std::mt19937_64& rng, std::size_t n, double scale) {
  std::normal_distribution<double> dist(0.0, scale);
  Vec v(n);
  for (double& x : v) x = dist(rng);
  return v;
}

// Modified Gram-Schmidt on `count` vectors of length `len` stored
// contiguously with the given strides.
void orthonormalize(Vec& m, std::size_t count, std::size_t len, std::size_t vec_stride,
                    std::size_t elem_stride) {
  auto at = [&](std::size_t v, std::size_t e) -> double& { return m[v * vec_stride + e * elem_stride]; };
  for (std::size_t v = 0; v < count; ++v) {
    for (std::size_t u = 0; u < v; ++u) {
      double proj = 0.0;
      for (std::size_t e = 0; e < len; ++e) proj += at(v, e) * at(u, e);
      for (std::size_t e = 0; e < len; ++e) at(v, e) -= proj * at(u, e);
    }
    double n = 0.0;
    for (std::size_t e = 0; e < len; ++e) n += at(v, e) * at(v, e);
    n = std::sqrt(n);
    if (!(n > kZeroNormTolerance)) throw ZeroVector("degenerate random projection");
    for (std::size_t e = 0; e < len; ++e) at(v, e) /= n;
  }
}

EncodedPrompt encode_keys(const PromptBank& bank, const DeskEncoder& enc, std::vector<ParamKey> keys) {
  std::vector<const TokenVector*> tokens;
  tokens.reserve(keys.size());
  for (const auto& k : keys) tokens.push_back(&bank.token(k));
  Vec pooled(enc.d_tok(), 0.0);
  for (const auto* t : tokens) axpy(1.0, t->values, pooled);
  for (double& x : pooled) x /= static_cast<double>(tokens.size());
  Vec projected = enc.project(pooled);
  UnitEmbedding unit = normalize(projected);
  return {std::move(keys), std::move(projected), std::move(unit)};
}

std::uint64_t checked_mul(std::uint64_t a, std::uint64_t b) {
  if (a != 0 && b > (std::uint64_t{1} << 62) / a) throw DimensionMismatch("checkpoint dimensions overflow");
  return a * b;
}

void require_encoder_matches(const PromptBank& bank, const DeskEncoder& enc) {
  if (bank.d_tok != enc.d_tok()) {
    throw DimensionMismatch("bank token width " + std::to_string(bank.d_tok) +
                            " does not match encoder width " + std::to_string(enc.d_tok()));
  }
}

}  // namespace

const char* to_string(TokenGroup g) {
  switch (g) {
    case TokenGroup::IdPrefix: return "id_prefix";
    case TokenGroup::ClassLabel: return "class_label";
    case TokenGroup::LfopPrefix: return "lfop_prefix";
    case TokenGroup::LfopLabel: return "lfop_label";
    case TokenGroup::LaopPrefix: return "laop_prefix";
    case TokenGroup::LaopLabel: return "laop_label";
  }
  return "unknown";
}

std::string ParamKey::name() const {
  return std::string(to_string(group)) + "[" + std::to_string(index) + "]";
}

// ---------------------------------------------------------------------------
// DeskEncoder

DeskEncoder::DeskEncoder(std::uint32_t d_tok, std::uint32_t d, Vec projection, std::uint64_t seed)
    : d_tok_(d_tok), d_(d), seed_(seed), projection_(std::move(projection)) {
  if (d_tok_ == 0 || d_ < 2) throw DimensionMismatch("encoder needs d_tok >= 1 and d >= 2");
  if (projection_.size() != static_cast<std::size_t>(d_tok_) * d_) {
    throw DimensionMismatch("projection has wrong element count");
  }
  if (!all_finite(projection_)) throw InvalidBank("projection has non-finite entries");
}

DeskEncoder DeskEncoder::random(std::uint32_t d_tok, std::uint32_t d, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  Vec m = gaussian_vec(rng, static_cast<std::size_t>(d_tok) * d, 1.0);
  if (d_tok >= d) {
    orthonormalize(m, d, d_tok, 1, d);  // columns
  } else {
    orthonormalize(m, d_tok, d, d, 1);  // rows
  }
  return DeskEncoder(d_tok, d, std::move(m), seed);
}

DeskEncoder DeskEncoder::identity(std::uint32_t d) {
  Vec m(static_cast<std::size_t>(d) * d, 0.0);
  for (std::uint32_t i = 0; i < d; ++i) m[static_cast<std::size_t>(i) * d + i] = 1.0;
  return DeskEncoder(d, d, std::move(m), 0);
}

Vec DeskEncoder::project(ConstVecView t) const {
  if (t.size() != d_tok_) throw DimensionMismatch("token width does not match encoder");
  Vec out(d_, 0.0);
  for (std::uint32_t a = 0; a < d_tok_; ++a) {
    const double ta = t[a];
    const double* row = projection_.data() + static_cast<std::size_t>(a) * d_;
    for (std::uint32_t j = 0; j < d_; ++j) out[j] += row[j] * ta;
  }
  return out;
}

Vec DeskEncoder::pullback(ConstVecView g) const {
  if (g.size() != d_) throw DimensionMismatch("gradient width does not match encoder");
  Vec out(d_tok_, 0.0);
  for (std::uint32_t a = 0; a < d_tok_; ++a) {
    const double* row = projection_.data() + static_cast<std::size_t>(a) * d_;
    double s = 0.0;
    for (std::uint32_t j = 0; j < d_; ++j) s += row[j] * g[j];
    out[a] = s;
  }
  return out;
}

// ---------------------------------------------------------------------------
// PromptBank

void PromptBank::validate() const {
  auto fail = [](const std::string& what) { throw InvalidBank("invalid prompt bank: " + what); };
  if (C < 2) fail("C >= 2");
  if (P < 1 || S < 1 || Z < 1) fail("P, S, Z >= 1");
  if (n_ip < 1 || n_lfop < 1 || n_laop < 1) fail("prefix lengths >= 1");
  if (d_tok < 1) fail("d_tok >= 1");
  const std::size_t id_count = static_cast<std::size_t>(per_class_id_prefix ? C : 1) * P * n_ip;
  auto check_group = [&](const std::vector<TokenVector>& g, std::size_t n, bool trainable,
                         const char* name) {
    if (g.size() != n) fail(std::string(name) + " count");
    for (const auto& t : g) {
      if (t.values.size() != d_tok) fail(std::string(name) + " width");
      if (t.trainable != trainable) fail(std::string(name) + " trainable flag");
      if (!all_finite(t.values)) fail(std::string(name) + " non-finite");
    }
  };
  check_group(id_prefixes, id_count, true, "id_prefixes");
  check_group(class_label_tokens, C, false, "class_label_tokens");
  check_group(lfop_prefix, n_lfop, true, "lfop_prefix");
  check_group(lfop_label_tokens, S, false, "lfop_label_tokens");
  check_group(laop_prefix, n_laop, true, "laop_prefix");
  check_group(laop_label_tokens, Z, true, "laop_label_tokens");
}

const std::vector<TokenVector>& PromptBank::group(TokenGroup g) const {
  switch (g) {
    case TokenGroup::IdPrefix: return id_prefixes;
    case TokenGroup::ClassLabel: return class_label_tokens;
    case TokenGroup::LfopPrefix: return lfop_prefix;
    case TokenGroup::LfopLabel: return lfop_label_tokens;
    case TokenGroup::LaopPrefix: return laop_prefix;
    case TokenGroup::LaopLabel: return laop_label_tokens;
  }
  throw InvalidBank("unknown token group");
}

std::vector<TokenVector>& PromptBank::group(TokenGroup g) {
  return const_cast<std::vector<TokenVector>&>(std::as_const(*this).group(g));
}

const TokenVector& PromptBank::token(ParamKey key) const {
  const auto& g = group(key.group);
  if (key.index >= g.size()) throw InvalidBank("token index out of range: " + key.name());
  return g[key.index];
}

TokenVector& PromptBank::token(ParamKey key) {
  return const_cast<TokenVector&>(std::as_const(*this).token(key));
}

std::vector<ParamKey> PromptBank::census() const {
  std::vector<ParamKey> keys;
  for (TokenGroup g : {TokenGroup::IdPrefix, TokenGroup::ClassLabel, TokenGroup::LfopPrefix,
                       TokenGroup::LfopLabel, TokenGroup::LaopPrefix, TokenGroup::LaopLabel}) {
    const auto& tokens = group(g);
    for (std::uint32_t i = 0; i < tokens.size(); ++i) {
      if (tokens[i].trainable) keys.push_back({g, i});
    }
  }
  return keys;
}

std::size_t PromptBank::trainable_scalar_count() const { return census().size() * d_tok; }

std::vector<ParamKey> PromptBank::id_prompt_keys(std::uint32_t cls, std::uint32_t p) const {
  if (cls >= C) throw UnknownClass("class index " + std::to_string(cls) + " out of range");
  if (p >= P) throw InvalidBank("prompt index out of range");
  const std::uint32_t base = (per_class_id_prefix ? cls * P + p : p) * n_ip;
  std::vector<ParamKey> keys;
  keys.reserve(n_ip + 1);
  for (std::uint32_t k = 0; k < n_ip; ++k) keys.push_back({TokenGroup::IdPrefix, base + k});
  keys.push_back({TokenGroup::ClassLabel, cls});
  return keys;
}

std::vector<ParamKey> PromptBank::lfop_keys(std::uint32_t i) const {
  std::vector<ParamKey> keys;
  keys.reserve(n_lfop + 1);
  for (std::uint32_t k = 0; k < n_lfop; ++k) keys.push_back({TokenGroup::LfopPrefix, k});
  keys.push_back({TokenGroup::LfopLabel, i});
  return keys;
}

std::vector<ParamKey> PromptBank::laop_keys(std::uint32_t j) const {
  std::vector<ParamKey> keys;
  keys.reserve(n_laop + 1);
  for (std::uint32_t k = 0; k < n_laop; ++k) keys.push_back({TokenGroup::LaopPrefix, k});
  keys.push_back({TokenGroup::LaopLabel, j});
  return keys;
}

Vec label_token_from_name(const std::string& name, std::uint64_t seed, std::uint32_t d_tok) {
  std::mt19937_64 rng(mix_seed(fnv1a64(name), seed));
  for (;;) {
    Vec v = gaussian_vec(rng, d_tok, 1.0);
    if (norm2(v) > 1e-6) return normalize(v).vec();
  }
}

PromptBank init_bank(const HyperParams& hp, std::uint64_t seed,
                     const std::vector<std::string>& class_names,
                     const std::vector<std::string>& ood_names, std::uint32_t d_tok) {
  hp.validate();
  const std::set<std::string> ids(class_names.begin(), class_names.end());
  if (ids.size() != class_names.size()) throw NameCollision("duplicate class name");
  for (const auto& o : ood_names) {
    if (ids.count(o)) throw NameCollision("OOD name \"" + o + "\" is also an ID class name");
  }
  if (ood_names.size() < std::max(hp.S, hp.Z)) {
    throw InvalidBank("need at least max(S, Z) = " + std::to_string(std::max(hp.S, hp.Z)) +
                      " OOD names, got " + std::to_string(ood_names.size()));
  }

  PromptBank bank;
  bank.C = static_cast<std::uint32_t>(class_names.size());
  bank.P = hp.P;
  bank.S = hp.S;
  bank.Z = hp.Z;
  bank.n_ip = hp.n_ip;
  bank.n_lfop = hp.n_lfop;
  bank.n_laop = hp.n_laop;
  bank.d_tok = d_tok;
  bank.per_class_id_prefix = hp.per_class_id_prefix;

  const std::uint64_t label_seed = mix_seed(seed, 1);
  std::mt19937_64 prefix_rng(mix_seed(seed, 2));
  auto prefixes = [&](std::size_t count) {
    auto tokens = make_tokens(count, d_tok, true);
    for (auto& t : tokens) t.values = gaussian_vec(prefix_rng, d_tok, kPrefixInitScale);
    return tokens;
  };

  const std::size_t id_count =
      static_cast<std::size_t>(bank.per_class_id_prefix ? bank.C : 1) * bank.P * bank.n_ip;
  bank.id_prefixes = prefixes(id_count);
  bank.lfop_prefix = prefixes(bank.n_lfop);
  bank.laop_prefix = prefixes(bank.n_laop);

  for (const auto& name : class_names) {
    bank.class_label_tokens.push_back({label_token_from_name(name, label_seed, d_tok), false});
  }
  for (std::uint32_t i = 0; i < bank.S; ++i) {
    bank.lfop_label_tokens.push_back({label_token_from_name(ood_names[i], label_seed, d_tok), false});
  }
  for (std::uint32_t j = 0; j < bank.Z; ++j) {
    bank.laop_label_tokens.push_back({label_token_from_name(ood_names[j], label_seed, d_tok), true});
  }
  bank.validate();
  return bank;
}

// ---------------------------------------------------------------------------
// Encoding

UnitEmbedding encode_prompt(const std::vector<const TokenVector*>& tokens, const DeskEncoder& enc) {
  if (tokens.empty()) throw EmptyPromptError("prompt has no tokens");
  Vec pooled(enc.d_tok(), 0.0);
  for (const auto* t : tokens) {
    if (t->values.size() != enc.d_tok()) throw DimensionMismatch("token width does not match encoder");
    axpy(1.0, t->values, pooled);
  }
  for (double& x : pooled) x /= static_cast<double>(tokens.size());
  return normalize(enc.project(pooled));
}

UnitEmbedding encode_prompt(const std::vector<TokenVector>& tokens, const DeskEncoder& enc) {
  std::vector<const TokenVector*> ptrs;
  ptrs.reserve(tokens.size());
  for (const auto& t : tokens) ptrs.push_back(&t);
  return encode_prompt(ptrs, enc);
}

Prototype make_prototype(const std::vector<const UnitEmbedding*>& members) {
  if (members.empty()) throw ZeroVector("prototype of an empty family");
  Vec mean(members.front()->dim(), 0.0);
  for (const auto* m : members) axpy(1.0, m->values(), mean);
  for (double& x : mean) x /= static_cast<double>(members.size());
  UnitEmbedding unit = normalize(mean);
  return {std::move(mean), std::move(unit)};
}

const UnitEmbedding& EncodedBank::id_prototype(std::uint32_t cls) const {
  if (cls >= C) throw UnknownClass("class index " + std::to_string(cls) + " out of range");
  return id_prototypes[cls].unit;
}

EncodedBank encode_bank(const PromptBank& bank, const DeskEncoder& enc) {
  require_encoder_matches(bank, enc);
  EncodedBank out;
  out.C = bank.C;
  out.P = bank.P;
  out.S = bank.S;
  out.Z = bank.Z;

  out.id_prompts.reserve(static_cast<std::size_t>(bank.C) * bank.P);
  for (std::uint32_t c = 0; c < bank.C; ++c) {
    for (std::uint32_t p = 0; p < bank.P; ++p) {
      out.id_prompts.push_back(encode_keys(bank, enc, bank.id_prompt_keys(c, p)));
    }
  }
  out.id_prototypes.reserve(bank.C);
  for (std::uint32_t c = 0; c < bank.C; ++c) {
    std::vector<const UnitEmbedding*> members;
    for (std::uint32_t p = 0; p < bank.P; ++p) {
      members.push_back(&out.id_prompts[static_cast<std::size_t>(c) * bank.P + p].unit);
    }
    out.id_prototypes.push_back(make_prototype(members));
  }

  out.ood_prompts.reserve(bank.S + bank.Z);
  for (std::uint32_t i = 0; i < bank.S; ++i) out.ood_prompts.push_back(encode_keys(bank, enc, bank.lfop_keys(i)));
  for (std::uint32_t j = 0; j < bank.Z; ++j) out.ood_prompts.push_back(encode_keys(bank, enc, bank.laop_keys(j)));

  std::vector<const UnitEmbedding*> all, fixed, adaptive;
  for (std::size_t k = 0; k < out.ood_prompts.size(); ++k) {
    all.push_back(&out.ood_prompts[k].unit);
    (k < bank.S ? fixed : adaptive).push_back(&out.ood_prompts[k].unit);
  }
  out.ood_prototype = make_prototype(all);
  out.lfop_prototype = make_prototype(fixed);
  out.laop_prototype = make_prototype(adaptive);
  return out;
}

UnitEmbedding id_prototype(const PromptBank& bank, const DeskEncoder& enc, std::uint32_t cls) {
  if (cls >= bank.C) throw UnknownClass("class index " + std::to_string(cls) + " out of range");
  require_encoder_matches(bank, enc);
  std::vector<EncodedPrompt> prompts;
  std::vector<const UnitEmbedding*> members;
  prompts.reserve(bank.P);
  for (std::uint32_t p = 0; p < bank.P; ++p) prompts.push_back(encode_keys(bank, enc, bank.id_prompt_keys(cls, p)));
  for (const auto& e : prompts) members.push_back(&e.unit);
  return make_prototype(members).unit;
}

std::vector<TaggedEmbedding> ood_prompt_set(const PromptBank& bank, const DeskEncoder& enc) {
  require_encoder_matches(bank, enc);
  std::vector<TaggedEmbedding> out;
  out.reserve(bank.S + bank.Z);
  for (std::uint32_t i = 0; i < bank.S; ++i) {
    out.push_back({OodFamily::LabelFixed, encode_keys(bank, enc, bank.lfop_keys(i)).unit});
  }
  for (std::uint32_t j = 0; j < bank.Z; ++j) {
    out.push_back({OodFamily::LabelAdaptive, encode_keys(bank, enc, bank.laop_keys(j)).unit});
  }
  return out;
}

UnitEmbedding ood_prototype(const PromptBank& bank, const DeskEncoder& enc) {
  const auto set = ood_prompt_set(bank, enc);
  std::vector<const UnitEmbedding*> members;
  for (const auto& t : set) members.push_back(&t.embedding);
  return make_prototype(members).unit;
}

std::pair<UnitEmbedding, UnitEmbedding> family_prototypes(const PromptBank& bank,
                                                          const DeskEncoder& enc) {
  const auto set = ood_prompt_set(bank, enc);
  std::vector<const UnitEmbedding*> fixed, adaptive;
  for (const auto& t : set) {
    (t.family == OodFamily::LabelFixed ? fixed : adaptive).push_back(&t.embedding);
  }
  return {make_prototype(fixed).unit, make_prototype(adaptive).unit};
}

// ---------------------------------------------------------------------------
// Checkpoint

void write_bank(const std::filesystem::path& path, const PromptBank& bank, const DeskEncoder& enc) {
  bank.validate();
  require_encoder_matches(bank, enc);
  detail::ByteWriter w;
  w.raw(kBankMagic);
  for (std::uint32_t v : {bank.C, bank.P, bank.S, bank.Z, bank.n_ip, bank.n_lfop, bank.n_laop,
                          bank.d_tok, enc.dim()}) {
    w.u32(v);
  }
  for (TokenGroup g : {TokenGroup::IdPrefix, TokenGroup::ClassLabel, TokenGroup::LfopPrefix,
                       TokenGroup::LfopLabel, TokenGroup::LaopPrefix, TokenGroup::LaopLabel}) {
    for (const auto& t : bank.group(g)) {
      for (double x : t.values) w.f64(x);
    }
  }
  for (double x : enc.projection()) w.f64(x);
  detail::write_file_atomic(path, w.bytes());
}

std::pair<PromptBank, DeskEncoder> read_bank(const std::filesystem::path& path) {
  const std::string bytes = detail::read_file(path);
  detail::ByteReader r(bytes, path.string());
  r.expect_magic(kBankMagic);

  PromptBank bank;
  bank.C = r.u32();
  bank.P = r.u32();
  bank.S = r.u32();
  bank.Z = r.u32();
  bank.n_ip = r.u32();
  bank.n_lfop = r.u32();
  bank.n_laop = r.u32();
  bank.d_tok = r.u32();
  const std::uint32_t d = r.u32();

  // Token counts excluding the ID prefixes, whose layout is inferred from the
  // payload size. Sizes are checked for overflow before being trusted.
  using U64 = std::uint64_t;
  const U64 other_tokens = U64{bank.C} + bank.n_lfop + bank.S + bank.n_laop + bank.Z;
  const U64 shared_ip = checked_mul(bank.P, bank.n_ip);
  const U64 per_class_ip = checked_mul(shared_ip, bank.C);
  const U64 proj = checked_mul(bank.d_tok, d);
  auto payload = [&](U64 ip) { return checked_mul(checked_mul(ip + other_tokens, bank.d_tok) + proj, 8); };
  const U64 have = r.remaining();
  if (have == payload(shared_ip)) {
    bank.per_class_id_prefix = false;
  } else if (have == payload(per_class_ip)) {
    bank.per_class_id_prefix = true;
  } else if (have < payload(shared_ip)) {
    throw TruncatedFile(path.string() + ": checkpoint payload shorter than its header implies");
  } else {
    throw DimensionMismatch(path.string() + ": checkpoint payload size does not match its header");
  }

  auto read_group = [&](std::size_t count, bool trainable) {
    std::vector<TokenVector> g(count);
    for (auto& t : g) {
      t.trainable = trainable;
      t.values.resize(bank.d_tok);
      for (double& x : t.values) x = r.f64();
    }
    return g;
  };
  bank.id_prefixes = read_group(static_cast<std::size_t>(bank.per_class_id_prefix ? per_class_ip : shared_ip), true);
  bank.class_label_tokens = read_group(bank.C, false);
  bank.lfop_prefix = read_group(bank.n_lfop, true);
  bank.lfop_label_tokens = read_group(bank.S, false);
  bank.laop_prefix = read_group(bank.n_laop, true);
  bank.laop_label_tokens = read_group(bank.Z, true);
  Vec projection(static_cast<std::size_t>(proj));
  for (double& x : projection) x = r.f64();
  bank.validate();
  DeskEncoder enc(bank.d_tok, d, std::move(projection));
  return {std::move(bank), std::move(enc)};
}

}  // namespace amcn
