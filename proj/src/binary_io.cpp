#include "binary_io.hpp"

#include <fstream>
#include <iterator>
#include <system_error>

#include "amcn/errors.hpp"

namespace amcn::detail {

std::string_view ByteReader::raw(std::size_t n) {
  require(n);
  auto out = bytes_.substr(pos_, n);
  pos_ += n;
  return out;
}

void ByteReader::require(std::size_t n) const {
  if (remaining() < n) {
    throw TruncatedFile(what_ + ": file ends early (need " + std::to_string(n) +
                        " more bytes, have " + std::to_string(remaining()) + ")");
  }
}

void ByteReader::expect_magic(std::string_view magic) {
  if (remaining() < magic.size() || bytes_.substr(pos_, magic.size()) != magic) {
    throw BadMagic(what_ + ": expected magic \"" + std::string(magic) + "\"");
  }
  pos_ += magic.size();
}

std::uint64_t ByteReader::le(int n) {
  require(static_cast<std::size_t>(n));
  std::uint64_t v = 0;
  for (int i = 0; i < n; ++i) {
    v |= static_cast<std::uint64_t>(static_cast<unsigned char>(bytes_[pos_ + i])) << (8 * i);
  }
  pos_ += static_cast<std::size_t>(n);
  return v;
}

std::string read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

void write_file_atomic(const std::filesystem::path& path, const std::string& bytes) {
  auto tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot write " + tmp.string());
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw IoError("short write to " + tmp.string());
  }
  std::error_code ec;
  std::filesystem::rename(tmp, path, ec);
  if (ec) throw IoError("cannot rename " + tmp.string() + " -> " + path.string() + ": " + ec.message());
}

}  // namespace amcn::detail
