#include "sarssl/byteio.hpp"

#include <fstream>
#include <iterator>

#include <fmt/format.h>

#include "sarssl/errors.hpp"

namespace sarssl::byteio {

void Writer::str16(std::string_view s) {
  if (s.size() > 0xffff) throw DataError(fmt::format("string of {} bytes too long", s.size()));
  u16(static_cast<std::uint16_t>(s.size()));
  bytes(s);
}

std::uint64_t Reader::get(int n) {
  if (pos_ + static_cast<std::size_t>(n) > data_.size()) {
    throw DataError(fmt::format("truncated {} at byte {}", what_, pos_));
  }
  std::uint64_t v = 0;
  for (int i = 0; i < n; ++i) v |= static_cast<std::uint64_t>(data_[pos_ + i]) << (8 * i);
  pos_ += static_cast<std::size_t>(n);
  return v;
}

std::string Reader::bytes(std::size_t n) {
  if (pos_ + n > data_.size()) throw DataError(fmt::format("truncated {} at byte {}", what_, pos_));
  std::string s(reinterpret_cast<const char*>(data_.data() + pos_), n);
  pos_ += n;
  return s;
}

std::vector<std::uint8_t> read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError(fmt::format("cannot open '{}' for reading", path.string()));
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

void write_file(const std::filesystem::path& path, std::span<const std::uint8_t> bytes) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError(fmt::format("cannot open '{}' for writing", path.string()));
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw IoError(fmt::format("write to '{}' failed", path.string()));
}

void write_text(const std::filesystem::path& path, std::string_view text) {
  write_file(path, {reinterpret_cast<const std::uint8_t*>(text.data()), text.size()});
}

}  // namespace sarssl::byteio
