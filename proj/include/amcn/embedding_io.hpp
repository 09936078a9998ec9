// Embedding files: binary "AMCNEMB1" and a CSV alternative.
//
// Binary layout (little-endian): magic, u32 version (= 1), u32 dim,
// u64 count, u8 has_labels, count x i32 labels when has_labels, then
// count x dim f32 rows, row-major.
#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <vector>

#include "amcn/vecmath.hpp"

namespace amcn {

struct EmbeddingFile {
  std::uint32_t dim = 0;
  bool has_labels = false;
  std::vector<std::int32_t> labels;  // count entries when has_labels
  std::vector<float> rows;           // count * dim

  std::size_t count() const { return dim == 0 ? 0 : rows.size() / dim; }
  // Row i widened to double (not normalized).
  Vec row(std::size_t i) const;
  // Throws DimensionMismatch on inconsistent sizes and LabelOutOfRange on
  // negative labels or labels >= num_classes when given.
  void validate(std::optional<std::uint32_t> num_classes = std::nullopt) const;

  bool operator==(const EmbeddingFile&) const = default;
};

constexpr std::uint32_t kEmbeddingVersion = 1;

void write_embeddings(const EmbeddingFile& file, const std::filesystem::path& path);
// Validates magic, version and size arithmetic before allocating.
EmbeddingFile read_embeddings(const std::filesystem::path& path,
                              std::optional<std::uint32_t> num_classes = std::nullopt);

// One row per line: optional integer label, then dim comma-separated reals.
// Blank lines and lines starting with '#' are skipped.
EmbeddingFile read_embeddings_csv(const std::filesystem::path& path, bool has_labels);

// Dispatches on extension: ".csv" goes to the CSV reader (labels expected
// when with_labels), anything else to the binary reader.
EmbeddingFile load_embeddings(const std::filesystem::path& path, bool with_labels);

// Rows re-normalized in double precision.
std::vector<UnitEmbedding> unit_rows(const EmbeddingFile& file);

}  // namespace amcn
