#include "amcn/synth.hpp"

#include <random>
#include <string>

#include "amcn/errors.hpp"
#include "amcn/hashing.hpp"

namespace amcn {

void SynthConfig::validate() const {
  if (dim < 2) throw InvalidConfig("synth dim must be >= 2");
  if (num_id_classes < 1) throw InvalidConfig("synth needs at least one ID class");
  if (!(noise_low >= 0.0) || !(noise_high >= noise_low)) {
    throw InvalidConfig("synth noise range must satisfy 0 <= noise_low <= noise_high");
  }
}

EmbeddingFile SynthSplit::to_file(bool with_labels) const {
  EmbeddingFile f;
  f.dim = rows.empty() ? 0 : static_cast<std::uint32_t>(rows.front().dim());
  f.has_labels = with_labels;
  for (std::size_t i = 0; i < rows.size(); ++i) {
    for (double v : rows[i].values()) f.rows.push_back(static_cast<float>(v));
    if (with_labels) f.labels.push_back(static_cast<std::int32_t>(labels[i]));
  }
  return f;
}

namespace {

Vec gaussian(std::mt19937_64& rng, std::uint32_t d) {
  std::normal_distribution<double> n(0.0, 1.0);
  Vec v(d);
  for (double& x : v) x = n(rng);
  return v;
}

std::vector<UnitEmbedding> draw_means(std::uint64_t seed, std::uint32_t count, std::uint32_t d) {
  std::mt19937_64 rng(seed);
  std::vector<UnitEmbedding> out;
  for (std::uint32_t i = 0; i < count; ++i) out.push_back(normalize(gaussian(rng, d)));
  return out;
}

void draw_samples(std::mt19937_64& rng, const std::vector<UnitEmbedding>& means, const std::vector<double>& noise,
                  std::uint32_t per_group, SynthSplit& out) {
  for (std::uint32_t g = 0; g < means.size(); ++g) {
    for (std::uint32_t i = 0; i < per_group; ++i) {
      Vec v = means[g].vec();
      const Vec n = gaussian(rng, static_cast<std::uint32_t>(v.size()));
      for (std::size_t j = 0; j < v.size(); ++j) v[j] += noise[g] * n[j];
      out.rows.push_back(normalize(v));
      out.labels.push_back(g);
    }
  }
}

}  // namespace

SynthData synth_generate(const SynthConfig& cfg) {
  cfg.validate();
  SynthData data;
  data.id_means = draw_means(mix_seed(cfg.seed, 1), cfg.num_id_classes, cfg.dim);
  data.ood_means = draw_means(mix_seed(cfg.seed, 2), cfg.num_ood_clusters, cfg.dim);

  std::mt19937_64 noise_rng(mix_seed(cfg.seed, 3));
  std::uniform_real_distribution<double> spread(cfg.noise_low, cfg.noise_high);
  for (std::uint32_t c = 0; c < cfg.num_id_classes; ++c) {
    data.id_noise.push_back(cfg.noise_low == cfg.noise_high ? cfg.noise_low : spread(noise_rng));
  }
  for (std::uint32_t k = 0; k < cfg.num_ood_clusters; ++k) {
    data.ood_noise.push_back(cfg.noise_low == cfg.noise_high ? cfg.noise_low : spread(noise_rng));
  }

  std::mt19937_64 train_rng(mix_seed(cfg.seed, 10));
  std::mt19937_64 id_rng(mix_seed(cfg.seed, 11));
  std::mt19937_64 ood_rng(mix_seed(cfg.seed, 12));
  draw_samples(train_rng, data.id_means, data.id_noise, cfg.train_per_class, data.train);
  draw_samples(id_rng, data.id_means, data.id_noise, cfg.samples_per_class, data.test_id);
  draw_samples(ood_rng, data.ood_means, data.ood_noise, cfg.samples_per_class, data.test_ood);
  return data;
}

}  // namespace amcn
