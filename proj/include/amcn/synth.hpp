// Seeded synthetic ID/OOD embedding sets with per-class spread.
#pragma once

#include <cstdint>
#include <vector>

#include "amcn/embedding_io.hpp"
#include "amcn/vecmath.hpp"

namespace amcn {

struct SynthConfig {
  std::uint32_t dim = 64;
  std::uint32_t num_id_classes = 8;
  std::uint32_t num_ood_clusters = 3;
  std::uint32_t samples_per_class = 32;  // test samples per ID class and per OOD cluster
  std::uint32_t train_per_class = 8;     // training samples per ID class
  double noise_low = 0.05;
  double noise_high = 0.35;
  std::uint64_t seed = 7;

  // Throws InvalidConfig.
  void validate() const;
};

struct SynthSplit {
  std::vector<UnitEmbedding> rows;
  std::vector<std::uint32_t> labels;  // class or cluster index per row

  // f32 file; labels are written only when with_labels.
  EmbeddingFile to_file(bool with_labels) const;
};

struct SynthData {
  std::vector<UnitEmbedding> id_means, ood_means;
  std::vector<double> id_noise, ood_noise;  // s_c per class / cluster
  SynthSplit train, test_id, test_ood;
};

// Each class and cluster gets a uniform random unit mean and a spread s_c
// drawn uniformly from [noise_low, noise_high]; a sample is
// normalize(mean + s_c * g) with g a standard Gaussian vector.
SynthData synth_generate(const SynthConfig& cfg);

}  // namespace amcn
