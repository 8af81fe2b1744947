#include "fedrecon/binary_io.hpp"

#include <bit>
#include <charconv>
#include <fstream>
#include <iterator>

#include "fedrecon/error.hpp"

namespace fedrecon::io {

void Writer::f32(float v) { put(std::bit_cast<std::uint32_t>(v)); }
void Writer::f64(double v) { put(std::bit_cast<std::uint64_t>(v)); }

void Writer::string(std::string_view s) {
  u32(static_cast<std::uint32_t>(s.size()));
  raw(s);
}

void Reader::require(std::size_t n) {
  if (bytes_.size() - offset_ < n) {
    throw FormatError(offset_, "truncated input: need " + std::to_string(n) + " more bytes, " +
                                   std::to_string(bytes_.size() - offset_) + " available");
  }
}

std::uint8_t Reader::u8() {
  require(1);
  return bytes_[offset_++];
}

float Reader::f32() { return std::bit_cast<float>(u32()); }
double Reader::f64() { return std::bit_cast<double>(u64()); }

std::string Reader::raw(std::size_t n) {
  require(n);
  std::string out(reinterpret_cast<const char*>(bytes_.data() + offset_), n);
  offset_ += n;
  return out;
}

std::string Reader::string() {
  const std::uint32_t n = u32();
  return raw(n);
}

void Reader::expect_magic(std::string_view magic) {
  const std::size_t at = offset_;
  if (bytes_.size() - offset_ < magic.size() || raw(magic.size()) != magic) {
    throw FormatError(at, "bad magic, expected \"" + std::string(magic) + "\"");
  }
}

void Reader::require_end() {
  if (!at_end()) throw FormatError(offset_, std::to_string(bytes_.size() - offset_) + " trailing bytes");
}

std::vector<std::uint8_t> read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorKind::kIo, "cannot open " + path.string());
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

void write_file(const std::filesystem::path& path, std::span<const std::uint8_t> bytes) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error(ErrorKind::kIo, "cannot write " + path.string());
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw Error(ErrorKind::kIo, "short write to " + path.string());
}

void write_text(const std::filesystem::path& path, std::string_view text) {
  write_file(path, std::span(reinterpret_cast<const std::uint8_t*>(text.data()), text.size()));
}

std::string format_double(double v) {
  char buf[64];
  auto [end, ec] = std::to_chars(buf, buf + sizeof(buf), v);
  if (ec != std::errc()) throw Error(ErrorKind::kInvalidArgument, "cannot format double");
  return std::string(buf, end);
}

}  // namespace fedrecon::io
