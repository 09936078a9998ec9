#include "amcn/embedding_io.hpp"

#include <charconv>
#include <fstream>
#include <limits>
#include <sstream>
#include <string>

#include "amcn/errors.hpp"
#include "binary_io.hpp"

namespace amcn {

namespace {

constexpr std::string_view kMagic = "AMCNEMB1";

std::string trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return std::string(s.substr(b, e - b + 1));
}

}  // namespace

Vec EmbeddingFile::row(std::size_t i) const {
  Vec out(dim);
  for (std::uint32_t j = 0; j < dim; ++j) out[j] = static_cast<double>(rows[i * dim + j]);
  return out;
}

void EmbeddingFile::validate(std::optional<std::uint32_t> num_classes) const {
  if (dim == 0) throw DimensionMismatch("embedding dim must be positive");
  if (rows.size() % dim != 0) throw DimensionMismatch("row data is not a multiple of dim");
  if (has_labels && labels.size() != count()) {
    throw DimensionMismatch("have " + std::to_string(labels.size()) + " labels for " + std::to_string(count()) +
                            " rows");
  }
  if (!has_labels && !labels.empty()) throw DimensionMismatch("labels present but has_labels is false");
  for (std::size_t i = 0; i < labels.size(); ++i) {
    const auto l = labels[i];
    if (l < 0 || (num_classes && static_cast<std::uint32_t>(l) >= *num_classes)) {
      throw LabelOutOfRange("row " + std::to_string(i) + " has label " + std::to_string(l));
    }
  }
}

void write_embeddings(const EmbeddingFile& file, const std::filesystem::path& path) {
  file.validate();
  detail::ByteWriter w;
  w.raw(kMagic);
  w.u32(kEmbeddingVersion);
  w.u32(file.dim);
  w.u64(file.count());
  w.u8(file.has_labels ? 1 : 0);
  for (auto l : file.labels) w.i32(l);
  for (float v : file.rows) w.f32(v);
  detail::write_file_atomic(path, w.bytes());
}

EmbeddingFile read_embeddings(const std::filesystem::path& path, std::optional<std::uint32_t> num_classes) {
  const std::string bytes = detail::read_file(path);
  detail::ByteReader r(bytes, path.string());
  r.expect_magic(kMagic);
  const std::uint32_t version = r.u32();
  if (version != kEmbeddingVersion) {
    throw BadMagic(path.string() + ": unsupported embedding file version " + std::to_string(version));
  }
  EmbeddingFile f;
  f.dim = r.u32();
  const std::uint64_t count = r.u64();
  const std::uint8_t flag = r.u8();
  if (flag > 1) throw BadMagic(path.string() + ": has_labels byte must be 0 or 1");
  f.has_labels = flag == 1;
  if (f.dim == 0) throw DimensionMismatch(path.string() + ": dim is zero");

  // Size check before any allocation; guard the multiplication.
  const std::uint64_t per_row = 4ULL * f.dim + (f.has_labels ? 4ULL : 0ULL);
  if (count > std::numeric_limits<std::uint64_t>::max() / per_row || count * per_row > r.remaining()) {
    throw TruncatedFile(path.string() + ": header declares " + std::to_string(count) + " rows of dim " +
                        std::to_string(f.dim) + " but only " + std::to_string(r.remaining()) +
                        " payload bytes are present");
  }
  if (count * per_row != r.remaining()) {
    throw DimensionMismatch(path.string() + ": trailing bytes after the declared rows");
  }
  if (f.has_labels) {
    f.labels.resize(count);
    for (auto& l : f.labels) l = r.i32();
  }
  f.rows.resize(count * f.dim);
  for (auto& v : f.rows) v = r.f32();
  f.validate(num_classes);
  return f;
}

EmbeddingFile read_embeddings_csv(const std::filesystem::path& path, bool has_labels) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open " + path.string());
  EmbeddingFile f;
  f.has_labels = has_labels;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    const std::string t = trim(line);
    if (t.empty() || t.front() == '#') continue;
    std::vector<double> cells;
    std::stringstream ss(t);
    std::string cell;
    while (std::getline(ss, cell, ',')) {
      const std::string c = trim(cell);
      double v = 0.0;
      const auto res = std::from_chars(c.data(), c.data() + c.size(), v);
      if (res.ec != std::errc() || res.ptr != c.data() + c.size()) {
        throw IoError(path.string() + ":" + std::to_string(lineno) + ": not a number: '" + c + "'");
      }
      cells.push_back(v);
    }
    std::size_t first = 0;
    if (has_labels) {
      if (cells.empty()) throw DimensionMismatch(path.string() + ":" + std::to_string(lineno) + ": missing label");
      const double l = cells[0];
      if (l != static_cast<double>(static_cast<std::int32_t>(l))) {
        throw LabelOutOfRange(path.string() + ":" + std::to_string(lineno) + ": label is not an integer");
      }
      f.labels.push_back(static_cast<std::int32_t>(l));
      first = 1;
    }
    const auto width = static_cast<std::uint32_t>(cells.size() - first);
    if (f.dim == 0) f.dim = width;
    if (width != f.dim || width == 0) {
      throw DimensionMismatch(path.string() + ":" + std::to_string(lineno) + ": expected " +
                              std::to_string(f.dim) + " values, got " + std::to_string(width));
    }
    for (std::size_t i = first; i < cells.size(); ++i) f.rows.push_back(static_cast<float>(cells[i]));
  }
  if (f.dim == 0) throw DimensionMismatch(path.string() + ": no rows");
  f.validate();
  return f;
}

EmbeddingFile load_embeddings(const std::filesystem::path& path, bool with_labels) {
  if (path.extension() == ".csv") return read_embeddings_csv(path, with_labels);
  return read_embeddings(path);
}

std::vector<UnitEmbedding> unit_rows(const EmbeddingFile& file) {
  std::vector<UnitEmbedding> out;
  out.reserve(file.count());
  for (std::size_t i = 0; i < file.count(); ++i) out.push_back(normalize(file.row(i)));
  return out;
}

}  // namespace amcn
