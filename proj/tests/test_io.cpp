#include "doctest.h"

#include <cmath>
#include <fstream>
#include <iterator>

#include "amcn/config.hpp"
#include "amcn/embedding_io.hpp"
#include "amcn/errors.hpp"
#include "amcn/synth.hpp"
#include "test_support.hpp"

using namespace amcn;
namespace fs = std::filesystem;

namespace {

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), {}};
}

void spit(const fs::path& p, const std::string& bytes) {
  std::ofstream out(p, std::ios::binary);
  out << bytes;
}

EmbeddingFile small_file() {
  EmbeddingFile f;
  f.dim = 4;
  f.has_labels = true;
  f.labels = {0, 2, 1};
  for (int i = 0; i < 12; ++i) f.rows.push_back(0.25f * static_cast<float>(i) - 1.0f);
  return f;
}

}  // namespace

TEST_CASE("embedding file round trip") {
  const auto dir = amcn::testing::scratch_dir("emb");
  const auto f = small_file();
  write_embeddings(f, dir / "a.emb");
  const auto g = read_embeddings(dir / "a.emb");
  CHECK(g == f);
  CHECK(g.count() == 3);
  write_embeddings(g, dir / "b.emb");
  CHECK(slurp(dir / "a.emb") == slurp(dir / "b.emb"));
  // 8 magic + 4 version + 4 dim + 8 count + 1 flag + 3 labels + 12 floats
  CHECK(slurp(dir / "a.emb").size() == 25 + 12 + 48);
  CHECK(slurp(dir / "a.emb").substr(0, 8) == "AMCNEMB1");

  EmbeddingFile unlabeled = f;
  unlabeled.has_labels = false;
  unlabeled.labels.clear();
  write_embeddings(unlabeled, dir / "c.emb");
  CHECK(read_embeddings(dir / "c.emb") == unlabeled);

  EmbeddingFile empty;
  empty.dim = 5;
  write_embeddings(empty, dir / "empty.emb");
  CHECK(read_embeddings(dir / "empty.emb").count() == 0);
}

TEST_CASE("embedding file validation") {
  const auto dir = amcn::testing::scratch_dir("emb_bad");
  write_embeddings(small_file(), dir / "ok.emb");
  const std::string bytes = slurp(dir / "ok.emb");

  SUBCASE("missing row") {
    spit(dir / "short.emb", bytes.substr(0, bytes.size() - 16));
    CHECK_THROWS_AS(read_embeddings(dir / "short.emb"), TruncatedFile);
  }
  SUBCASE("count = 10, 9 rows present") {
    EmbeddingFile f;
    f.dim = 2;
    for (int i = 0; i < 18; ++i) f.rows.push_back(1.0f);
    write_embeddings(f, dir / "nine.emb");
    std::string b = slurp(dir / "nine.emb");
    b[16] = 10;  // low byte of the u64 count
    spit(dir / "nine.emb", b);
    CHECK_THROWS_AS(read_embeddings(dir / "nine.emb"), TruncatedFile);
  }
  SUBCASE("huge count does not allocate") {
    std::string b = bytes;
    for (int i = 16; i < 24; ++i) b[i] = '\xff';
    spit(dir / "huge.emb", b);
    CHECK_THROWS_AS(read_embeddings(dir / "huge.emb"), TruncatedFile);
  }
  SUBCASE("wrong magic") {
    spit(dir / "magic.emb", "AMCNEMB2" + bytes.substr(8));
    CHECK_THROWS_AS(read_embeddings(dir / "magic.emb"), BadMagic);
  }
  SUBCASE("wrong version") {
    std::string b = bytes;
    b[8] = 2;
    spit(dir / "ver.emb", b);
    CHECK_THROWS_AS(read_embeddings(dir / "ver.emb"), BadMagic);
  }
  SUBCASE("trailing bytes") {
    spit(dir / "long.emb", bytes + "xx");
    CHECK_THROWS_AS(read_embeddings(dir / "long.emb"), DimensionMismatch);
  }
  SUBCASE("labels out of range") {
    CHECK_THROWS_AS(read_embeddings(dir / "ok.emb", 2), LabelOutOfRange);
    auto f = small_file();
    f.labels[1] = -3;
    CHECK_THROWS_AS(write_embeddings(f, dir / "neg.emb"), LabelOutOfRange);
  }
  SUBCASE("inconsistent in-memory file") {
    auto f = small_file();
    f.rows.pop_back();
    CHECK_THROWS_AS(write_embeddings(f, dir / "bad.emb"), DimensionMismatch);
  }
}

TEST_CASE("csv ingestion") {
  const auto dir = amcn::testing::scratch_dir("csv");
  spit(dir / "a.csv", "# label, x, y, z\n1, 0.5, -1, 2\n\n0,1e-3,0,4\n");
  const auto f = read_embeddings_csv(dir / "a.csv", true);
  CHECK(f.dim == 3);
  CHECK(f.labels == std::vector<std::int32_t>{1, 0});
  CHECK(f.rows == std::vector<float>{0.5f, -1.0f, 2.0f, 1e-3f, 0.0f, 4.0f});
  CHECK(load_embeddings(dir / "a.csv", true) == f);

  const auto u = read_embeddings_csv(dir / "a.csv", false);
  CHECK(u.dim == 4);
  CHECK_FALSE(u.has_labels);

  spit(dir / "ragged.csv", "1,2,3\n1,2\n");
  CHECK_THROWS_AS(read_embeddings_csv(dir / "ragged.csv", false), DimensionMismatch);
  spit(dir / "junk.csv", "1,abc\n");
  CHECK_THROWS_AS(read_embeddings_csv(dir / "junk.csv", false), IoError);
  spit(dir / "frac.csv", "1.5,1,2\n");
  CHECK_THROWS_AS(read_embeddings_csv(dir / "frac.csv", true), LabelOutOfRange);
}

TEST_CASE("synth_generate") {
  SynthConfig cfg;  // dim 64, 8 ID classes, 3 OOD clusters, 32 per class, seed 7
  const auto d = synth_generate(cfg);
  CHECK(d.train.rows.size() == 64);
  CHECK(d.test_id.rows.size() == 256);
  CHECK(d.test_ood.rows.size() == 96);
  for (const auto* split : {&d.train, &d.test_id, &d.test_ood}) {
    for (const auto& r : split->rows) REQUIRE(std::abs(norm2(r) - 1.0) <= 1e-9);
  }
  for (double s : d.id_noise) {
    CHECK(s >= cfg.noise_low);
    CHECK(s <= cfg.noise_high);
  }

  SUBCASE("class means are spread out at seed 7") {
    std::vector<UnitEmbedding> all = d.id_means;
    all.insert(all.end(), d.ood_means.begin(), d.ood_means.end());
    double worst = -1.0;
    for (std::size_t i = 0; i < all.size(); ++i) {
      for (std::size_t j = i + 1; j < all.size(); ++j) worst = std::max(worst, cosine(all[i], all[j]));
    }
    CHECK(worst < 0.9);
  }

  SUBCASE("zero noise reproduces the means") {
    SynthConfig z = cfg;
    z.noise_low = z.noise_high = 0.0;
    const auto q = synth_generate(z);
    for (std::size_t i = 0; i < q.test_id.rows.size(); ++i) {
      CHECK(amcn::testing::max_abs_diff(q.test_id.rows[i], q.id_means[q.test_id.labels[i]]) <= 1e-15);
    }
    for (std::size_t i = 0; i < q.test_ood.rows.size(); ++i) {
      CHECK(amcn::testing::max_abs_diff(q.test_ood.rows[i], q.ood_means[q.test_ood.labels[i]]) <= 1e-15);
    }
  }

  SUBCASE("empirical mean tracks the true mean") {
    SynthConfig s = cfg;
    s.noise_low = 0.05;
    s.noise_high = 0.3;
    for (std::uint64_t seed = 1; seed <= 5; ++seed) {
      s.seed = seed;
      const auto q = synth_generate(s);
      for (std::uint32_t c = 0; c < s.num_id_classes; ++c) {
        Vec mean(s.dim, 0.0);
        for (std::size_t i = 0; i < q.test_id.rows.size(); ++i) {
          if (q.test_id.labels[i] == c) axpy(1.0, q.test_id.rows[i], mean);
        }
        CHECK(cosine(mean, q.id_means[c]) >= 0.5);
      }
    }
  }

  SUBCASE("same seed, same bytes") {
    const auto dir = amcn::testing::scratch_dir("synth");
    write_embeddings(d.test_ood.to_file(false), dir / "a.emb");
    write_embeddings(synth_generate(cfg).test_ood.to_file(false), dir / "b.emb");
    CHECK(slurp(dir / "a.emb") == slurp(dir / "b.emb"));
    SynthConfig other = cfg;
    other.seed = 8;
    write_embeddings(synth_generate(other).test_ood.to_file(false), dir / "c.emb");
    CHECK(slurp(dir / "a.emb") != slurp(dir / "c.emb"));
  }

  SynthConfig bad = cfg;
  bad.noise_low = 0.5;
  bad.noise_high = 0.1;
  CHECK_THROWS_AS(synth_generate(bad), InvalidConfig);
  bad = cfg;
  bad.dim = 1;
  CHECK_THROWS_AS(synth_generate(bad), InvalidConfig);
}

TEST_CASE("config parsing") {
  const auto cfg = parse_config(R"({"epochs": 3, "polarity": "flipped",
      "hp": {"sigma": 0.5, "eps1": 2.0, "d_tok": 12, "per_class_id_prefix": true},
      "optimizer": {"lr": 0.01}, "synth": {"dim": 16, "seed": 3}})");
  CHECK(cfg.train.epochs == 3);
  CHECK(cfg.train.polarity == Polarity::Flipped);
  CHECK(cfg.train.hp.sigma == 0.5);
  CHECK(cfg.train.hp.eps1 == 2.0);
  CHECK_FALSE(cfg.train.hp.eps2.has_value());
  CHECK(cfg.train.hp.d_tok == 12u);
  CHECK(cfg.train.hp.per_class_id_prefix);
  CHECK(cfg.train.optimizer.lr == 0.01);
  CHECK(cfg.train.batch_size == 64);
  CHECK(cfg.synth.dim == 16);
  CHECK(cfg.synth.seed == 3);

  CHECK(parse_config("{}").train.hp.alpha1 == 0.4);
  CHECK_THROWS_AS(parse_config(R"({"epoch": 3})"), InvalidConfig);
  CHECK_THROWS_AS(parse_config(R"({"hp": {"sigm": 1}})"), InvalidConfig);
  CHECK_THROWS_AS(parse_config(R"({"synth": {"dims": 1}})"), InvalidConfig);
  CHECK_THROWS_AS(parse_config(R"({"epochs": -1})"), InvalidConfig);
  CHECK_THROWS_AS(parse_config(R"({"epochs": "ten"})"), InvalidConfig);
  CHECK_THROWS_AS(parse_config(R"({"hp": {"sigma": 0}})"), InvalidConfig);
  CHECK_THROWS_AS(parse_config(R"({"polarity": "sideways"})"), InvalidConfig);
  CHECK_THROWS_AS(parse_config("{ not json"), InvalidConfig);
  CHECK_THROWS_AS(parse_config("[1, 2]"), InvalidConfig);

  // canonical form is a fixed point and drives the hash
  const auto again = parse_config(canonical_json(cfg));
  CHECK(canonical_json(again) == canonical_json(cfg));
  CHECK(config_hash(again) == config_hash(cfg));
  CHECK(config_hash(cfg).size() == 16);
  auto changed = cfg;
  changed.train.seed += 1;
  CHECK(config_hash(changed) != config_hash(cfg));
}

TEST_CASE("run report round trip") {
  RunReport r;
  r.config_hash = "00000000deadbeef";
  LossReport l;
  l.l_c = 0.5;
  l.l1 = 0.5;
  l.total = 0.75;
  l.l4 = 0.3125;
  r.epochs = {l, l};
  EvalMetrics m;
  m.auroc = 0.875;
  m.id_accuracy = 0.5;
  m.id_count = 4;
  r.metrics = m;
  r.per_class_stats = {{1.0, 0.5, 0.75, 2.0, 3}};
  const std::string text = to_json(r);
  CHECK(text.find("\"fpr95\": null") != std::string::npos);
  const auto back = parse_run_report(text);
  CHECK(back.config_hash == r.config_hash);
  REQUIRE(back.epochs.size() == 2);
  CHECK(back.epochs[1].total == 0.75);
  CHECK(back.epochs[1].l4 == 0.3125);
  REQUIRE(back.metrics.has_value());
  CHECK(back.metrics->auroc == 0.875);
  CHECK_FALSE(back.metrics->fpr95.has_value());
  CHECK(back.per_class_stats == r.per_class_stats);
  CHECK(to_json(back) == text);
}
