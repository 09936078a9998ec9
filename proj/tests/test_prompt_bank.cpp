#include "doctest.h"

#include <cmath>
#include <fstream>
#include <iterator>

#include "amcn/errors.hpp"
#include "amcn/prompt_bank.hpp"
#include "fixtures.hpp"
#include "oracles.hpp"
#include "test_support.hpp"

using namespace amcn;
using amcn::testing::max_abs_diff;
using amcn::testing::names;

namespace {

TokenVector tok(Vec v, bool trainable = true) { return {std::move(v), trainable}; }

HyperParams small_hp(std::uint32_t S, std::uint32_t Z) {
  HyperParams hp;
  hp.S = S;
  hp.Z = Z;
  hp.n_ip = hp.n_lfop = hp.n_laop = 4;
  return hp;
}

void check_unit(const UnitEmbedding& u) { CHECK(std::abs(norm2(u) - 1.0) <= 1e-9); }

}  // namespace

TEST_CASE("encode_prompt") {
  SUBCASE("identity projection, single token") {
    const auto enc = DeskEncoder::identity(4);
    const auto e = encode_prompt(std::vector<TokenVector>{tok({3, 4, 0, 0})}, enc);
    CHECK(e[0] == doctest::Approx(0.6).epsilon(1e-15));
    CHECK(e[1] == doctest::Approx(0.8).epsilon(1e-15));
    CHECK(e[2] == 0.0);
    CHECK(e[3] == 0.0);
  }
  SUBCASE("empty and degenerate prompts") {
    const auto enc = DeskEncoder::identity(3);
    CHECK_THROWS_AS(encode_prompt(std::vector<TokenVector>{}, enc), EmptyPromptError);
    CHECK_THROWS_AS(encode_prompt(std::vector<TokenVector>{tok({1, 0, 0}), tok({-1, 0, 0})}, enc), ZeroVector);
  }
  SUBCASE("matches scalar oracle, d_tok = 8, d = 4") {
    const auto enc = DeskEncoder::random(8, 4, 99);
    std::mt19937_64 rng(4);
    for (int trial = 0; trial < 10; ++trial) {
      std::vector<TokenVector> tokens;
      oracle::Rows rows;
      for (int t = 0; t < 5; ++t) {
        tokens.push_back(tok(amcn::testing::random_vec(rng, 8)));
        rows.push_back(tokens.back().values);
      }
      const auto got = encode_prompt(tokens, enc);
      const auto want = oracle::encode(rows, enc.projection(), 8, 4);
      CHECK(max_abs_diff(got, want) <= 1e-12);
    }
  }
  SUBCASE("random encoder is deterministic and orthonormal") {
    CHECK(DeskEncoder::random(6, 4, 5) == DeskEncoder::random(6, 4, 5));
    CHECK_FALSE(DeskEncoder::random(6, 4, 5) == DeskEncoder::random(6, 4, 6));
    const auto enc = DeskEncoder::random(6, 4, 5);
    // columns orthonormal: W^T W = I
    for (std::uint32_t a = 0; a < 4; ++a) {
      for (std::uint32_t b = 0; b < 4; ++b) {
        double s = 0.0;
        for (std::uint32_t k = 0; k < 6; ++k) s += enc.projection()[k * 4 + a] * enc.projection()[k * 4 + b];
        CHECK(s == doctest::Approx(a == b ? 1.0 : 0.0).epsilon(1e-12).scale(1.0));
      }
    }
  }
}

TEST_CASE("shared encoder: family does not matter") {
  const auto hp = small_hp(2, 2);
  auto bank = init_bank(hp, 1, names("c", 2), names("o", 2), 5);
  const auto enc = DeskEncoder::random(5, 5, 2);
  // Make an ID prompt and an LFOP prompt with identical tokens.
  for (std::uint32_t k = 0; k < 4; ++k) bank.lfop_prefix[k].values = bank.id_prefixes[k].values;
  bank.lfop_label_tokens[0].values = bank.class_label_tokens[0].values;
  const auto eb = encode_bank(bank, enc);
  CHECK(eb.id_prompts[0].unit == eb.ood_prompts[0].unit);
}

TEST_CASE("id_prototype") {
  const auto enc = DeskEncoder::identity(3);
  SUBCASE("P = 1 equals the single encoded prompt") {
    auto hp = small_hp(1, 1);
    const auto bank = init_bank(hp, 3, names("c", 2), names("o", 1), 3);
    const auto eb = encode_bank(bank, enc);
    CHECK(max_abs_diff(id_prototype(bank, enc, 1), eb.id_prompts[1].unit) <= 1e-15);
    CHECK_THROWS_AS(id_prototype(bank, enc, 2), UnknownClass);
  }
  SUBCASE("P = 2 identical prompts equal either one") {
    auto hp = small_hp(1, 1);
    hp.P = 2;
    auto bank = init_bank(hp, 3, names("c", 2), names("o", 1), 3);
    for (std::uint32_t k = 0; k < 4; ++k) bank.id_prefixes[4 + k].values = bank.id_prefixes[k].values;
    const auto eb = encode_bank(bank, enc);
    CHECK(max_abs_diff(id_prototype(bank, enc, 0), eb.id_prompts[0].unit) <= 1e-15);
  }
  SUBCASE("P = 2 antipodal encodings vanish") {
    auto hp = small_hp(1, 1);
    hp.P = 2;
    hp.n_ip = 1;
    auto bank = init_bank(hp, 3, names("c", 2), names("o", 1), 3);
    bank.class_label_tokens[0].values = {0, 0, 0};
    bank.id_prefixes[0].values = {1, 0, 0};
    bank.id_prefixes[1].values = {-1, 0, 0};
    CHECK_THROWS_AS(id_prototype(bank, enc, 0), ZeroVector);
  }
}

TEST_CASE("ood_prompt_set") {
  const auto enc = DeskEncoder::random(6, 6, 8);
  {
    const auto bank = init_bank(small_hp(1, 1), 4, names("c", 2), names("o", 1), 6);
    CHECK(ood_prompt_set(bank, enc).size() == 2);
  }
  const auto bank = init_bank(small_hp(50, 50), 4, names("c", 2), names("o", 50), 6);
  const auto set = ood_prompt_set(bank, enc);
  REQUIRE(set.size() == 100);
  std::size_t fixed = 0;
  for (const auto& t : set) {
    fixed += t.family == OodFamily::LabelFixed;
    check_unit(t.embedding);
  }
  CHECK(fixed == 50);
  const auto again = ood_prompt_set(bank, enc);
  for (std::size_t i = 0; i < set.size(); ++i) CHECK(set[i].embedding == again[i].embedding);
}

TEST_CASE("ood_prototype and family_prototypes") {
  const auto enc = DeskEncoder::identity(3);
  SUBCASE("all prompts equal gives that prompt") {
    auto hp = small_hp(2, 3);
    auto bank = init_bank(hp, 5, names("c", 2), names("o", 3), 3);
    for (auto& t : bank.laop_prefix) t.values = {0, 0, 0};
    for (auto& t : bank.lfop_prefix) t.values = {0, 0, 0};
    for (auto& t : bank.lfop_label_tokens) t.values = {0, 2, 0};
    for (auto& t : bank.laop_label_tokens) t.values = {0, 5, 0};
    const auto u = ood_prototype(bank, enc);
    CHECK(max_abs_diff(u, Vec{0, 1, 0}) <= 1e-15);
    const auto [f, a] = family_prototypes(bank, enc);
    CHECK(f == a);
  }
  SUBCASE("S = 2, Z = 1 matches mean-then-normalize") {
    auto hp = small_hp(2, 1);
    hp.n_lfop = hp.n_laop = 1;
    auto bank = init_bank(hp, 5, names("c", 2), names("o", 2), 3);
    bank.lfop_prefix[0].values = {0, 0, 0};
    bank.laop_prefix[0].values = {0, 0, 0};
    bank.lfop_label_tokens[0].values = {1, 0, 0};
    bank.lfop_label_tokens[1].values = {0, 1, 0};
    bank.laop_label_tokens[0].values = {0, 0, 1};
    const auto u = ood_prototype(bank, enc);
    const double k = 1.0 / std::sqrt(3.0);
    CHECK(max_abs_diff(u, Vec{k, k, k}) <= 1e-15);
    const auto [fixed, adaptive] = family_prototypes(bank, enc);
    const double h = 1.0 / std::sqrt(2.0);
    CHECK(max_abs_diff(fixed, Vec{h, h, 0}) <= 1e-15);
    CHECK(max_abs_diff(adaptive, Vec{0, 0, 1}) <= 1e-15);
  }
  SUBCASE("S = 1 family prototype equals the single prompt") {
    const auto bank = init_bank(small_hp(1, 3), 5, names("c", 2), names("o", 3), 3);
    const auto set = ood_prompt_set(bank, enc);
    CHECK(max_abs_diff(family_prototypes(bank, enc).first, set[0].embedding) <= 1e-15);
  }
  SUBCASE("random d = 4 matches brute force") {
    auto inst = amcn::testing::make_instance(21, {.d = 4, .C = 3, .S = 3, .Z = 2, .prefix_scale = 0.5});
    const auto want = oracle::prompts(inst.bank, inst.enc);
    const auto [fixed, adaptive] = family_prototypes(inst.bank, inst.enc);
    CHECK(max_abs_diff(fixed, want.lfop_proto) <= 1e-12);
    CHECK(max_abs_diff(adaptive, want.laop_proto) <= 1e-12);
    CHECK(max_abs_diff(ood_prototype(inst.bank, inst.enc), want.ood_proto) <= 1e-12);
    for (std::uint32_t c = 0; c < 3; ++c) {
      CHECK(max_abs_diff(id_prototype(inst.bank, inst.enc, c), want.id_proto[c]) <= 1e-12);
    }
  }
}

TEST_CASE("encode_bank outputs are unit norm") {
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    auto inst = amcn::testing::make_instance(seed, {.d = 8, .C = 4, .S = 5, .Z = 3, .P = 2, .per_class = true,
                                                    .prefix_scale = 0.3});
    const auto eb = encode_bank(inst.bank, inst.enc);
    for (const auto& p : eb.id_prompts) check_unit(p.unit);
    for (const auto& p : eb.ood_prompts) check_unit(p.unit);
    for (const auto& p : eb.id_prototypes) check_unit(p.unit);
    check_unit(eb.ood_prototype.unit);
    check_unit(eb.lfop_prototype.unit);
    check_unit(eb.laop_prototype.unit);
  }
}

TEST_CASE("init_bank") {
  const auto hp = small_hp(3, 3);
  SUBCASE("deterministic") {
    CHECK(init_bank(hp, 9, names("c", 3), names("o", 3), 6) == init_bank(hp, 9, names("c", 3), names("o", 3), 6));
    CHECK_FALSE(init_bank(hp, 9, names("c", 3), names("o", 3), 6) ==
                init_bank(hp, 10, names("c", 3), names("o", 3), 6));
  }
  SUBCASE("name collision") {
    CHECK_THROWS_AS(init_bank(hp, 9, {"cat", "dog"}, {"chair", "dog", "tree"}, 6), NameCollision);
  }
  SUBCASE("too few OOD names") {
    CHECK_THROWS_AS(init_bank(hp, 9, names("c", 2), names("o", 2), 6), InvalidBank);
  }
  SUBCASE("label-adaptive labels start as label-fixed labels") {
    const auto bank = init_bank(hp, 9, names("c", 3), names("o", 3), 6);
    for (std::uint32_t j = 0; j < 3; ++j) {
      CHECK(bank.laop_label_tokens[j].values == bank.lfop_label_tokens[j].values);
      CHECK(bank.laop_label_tokens[j].trainable);
      CHECK_FALSE(bank.lfop_label_tokens[j].trainable);
    }
  }
  SUBCASE("prefixes are small, labels unit norm") {
    const auto bank = init_bank(small_hp(50, 50), 9, names("c", 2), names("o", 50), 64);
    double sq = 0.0;
    std::size_t n = 0;
    for (const auto& t : bank.lfop_prefix) {
      for (double x : t.values) {
        sq += x * x;
        ++n;
      }
    }
    CHECK(std::sqrt(sq / n) == doctest::Approx(0.02).epsilon(0.1));
    for (const auto& t : bank.class_label_tokens) CHECK(norm2(t.values) == doctest::Approx(1.0).epsilon(1e-12));
  }
  SUBCASE("census lists exactly the trainable groups") {
    auto shared_hp = hp;
    const auto bank = init_bank(shared_hp, 9, names("c", 3), names("o", 3), 6);
    const auto census = bank.census();
    CHECK(census.size() == 4 + 4 + 4 + 3);
    for (const auto& k : census) {
      CHECK(k.group != TokenGroup::ClassLabel);
      CHECK(k.group != TokenGroup::LfopLabel);
    }
    shared_hp.per_class_id_prefix = true;
    CHECK(init_bank(shared_hp, 9, names("c", 3), names("o", 3), 6).census().size() == 12 + 4 + 4 + 3);
  }
}

TEST_CASE("perturbing a trainable token moves its prompt") {
  auto inst = amcn::testing::make_instance(2, {.d = 6, .C = 2, .S = 2, .Z = 2});
  const auto before = encode_bank(inst.bank, inst.enc);
  for (const auto& key : inst.bank.census()) {
    auto probe = inst.bank;
    probe.token(key).values[0] += 0.05;
    probe.token(key).values[1] -= 0.05;
    const auto after = encode_bank(probe, inst.enc);
    double moved = 0.0;
    for (std::size_t i = 0; i < before.id_prompts.size(); ++i) {
      moved += max_abs_diff(before.id_prompts[i].unit, after.id_prompts[i].unit);
    }
    for (std::size_t i = 0; i < before.ood_prompts.size(); ++i) {
      moved += max_abs_diff(before.ood_prompts[i].unit, after.ood_prompts[i].unit);
    }
    CHECK_MESSAGE(moved > 0.0, key.name());
  }
}

TEST_CASE("bank checkpoint round trip") {
  const auto dir = amcn::testing::scratch_dir("bank");
  for (bool per_class : {false, true}) {
    auto inst = amcn::testing::make_instance(3, {.d = 5, .C = 3, .S = 2, .Z = 4, .P = 2, .per_class = per_class});
    const auto path = dir / (per_class ? "per_class.bin" : "shared.bin");
    write_bank(path, inst.bank, inst.enc);
    const auto [bank, enc] = read_bank(path);
    CHECK(bank == inst.bank);
    CHECK(enc.projection() == inst.enc.projection());
    CHECK_FALSE(std::filesystem::exists(path.string() + ".tmp"));
  }
  SUBCASE("header bytes") {
    auto inst = amcn::testing::make_instance(3, {.d = 5, .C = 3, .S = 2, .Z = 4, .prefix_len = 7});
    const auto path = dir / "hdr.bin";
    write_bank(path, inst.bank, inst.enc);
    std::ifstream in(path, std::ios::binary);
    std::string bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    CHECK(bytes.substr(0, 8) == "AMCNBNK1");
    auto u32 = [&](std::size_t off) {
      std::uint32_t v = 0;
      for (int i = 0; i < 4; ++i) v |= std::uint32_t(static_cast<unsigned char>(bytes[off + i])) << (8 * i);
      return v;
    };
    const std::uint32_t want[] = {3, 1, 2, 4, 7, 7, 7, 5, 5};
    for (int i = 0; i < 9; ++i) CHECK(u32(8 + 4 * i) == want[i]);
    const std::size_t tokens = 7 + 3 + 7 + 2 + 7 + 4;
    CHECK(bytes.size() == 8 + 36 + (tokens * 5 + 25) * 8);
  }
  SUBCASE("truncated and corrupted files") {
    auto inst = amcn::testing::make_instance(3, {.d = 5});
    const auto path = dir / "bad.bin";
    write_bank(path, inst.bank, inst.enc);
    const auto size = std::filesystem::file_size(path);
    std::filesystem::resize_file(path, size - 8);
    CHECK_THROWS_AS(read_bank(path), TruncatedFile);
    write_bank(path, inst.bank, inst.enc);
    {
      std::fstream f(path, std::ios::binary | std::ios::in | std::ios::out);
      f.seekp(0);
      f.write("XXXX", 4);
    }
    CHECK_THROWS_AS(read_bank(path), BadMagic);
  }
}
