#include "reenact/binary_io.hpp"

#include "reenact/common.hpp"

#include <zlib.h>

#include <array>
#include <atomic>
#include <fstream>
#include <unistd.h>

namespace reenact::io {

void Writer::u32(std::uint32_t v) {
  const std::array<std::uint8_t, 4> b{static_cast<std::uint8_t>(v), static_cast<std::uint8_t>(v >> 8),
                                      static_cast<std::uint8_t>(v >> 16), static_cast<std::uint8_t>(v >> 24)};
  bytes(b.data(), b.size());
}

void Writer::u64(std::uint64_t v) {
  u32(static_cast<std::uint32_t>(v));
  u32(static_cast<std::uint32_t>(v >> 32));
}

void Reader::bytes(void* data, std::size_t size) {
  in_.read(static_cast<char*>(data), static_cast<std::streamsize>(size));
  if (static_cast<std::size_t>(in_.gcount()) != size) fail("unexpected end of file");
}

void Reader::expect_magic(std::string_view tag) {
  std::string got(tag.size(), '\0');
  bytes(got.data(), got.size());
  if (got != tag) fail("bad magic (expected '" + std::string(tag) + "')");
}

std::uint8_t Reader::u8() {
  std::uint8_t v = 0;
  bytes(&v, 1);
  return v;
}

std::uint32_t Reader::u32() {
  std::array<std::uint8_t, 4> b{};
  bytes(b.data(), b.size());
  return static_cast<std::uint32_t>(b[0]) | (static_cast<std::uint32_t>(b[1]) << 8) |
         (static_cast<std::uint32_t>(b[2]) << 16) | (static_cast<std::uint32_t>(b[3]) << 24);
}

std::uint64_t Reader::u64() {
  const std::uint64_t lo = u32();
  const std::uint64_t hi = u32();
  return lo | (hi << 32);
}

std::string Reader::string(std::size_t max_size) {
  const std::uint32_t size = u32();
  if (size > max_size) fail("string length " + std::to_string(size) + " exceeds limit");
  std::string s(size, '\0');
  bytes(s.data(), s.size());
  return s;
}

bool Reader::at_end() { return in_.peek() == std::char_traits<char>::eof(); }

void Reader::fail(const std::string& message) const { throw FormatError(context_ + ": " + message); }

std::filesystem::path temp_sibling(const std::filesystem::path& target) {
  static std::atomic<unsigned> counter{0};
  auto name = target.filename().string();
  name = "." + name + ".tmp" + std::to_string(::getpid()) + "_" + std::to_string(counter++);
  return target.parent_path() / name;
}

void commit_file(const std::filesystem::path& temp, const std::filesystem::path& target) {
  std::error_code ec;
  std::filesystem::rename(temp, target, ec);
  if (ec) {
    std::filesystem::remove(temp);
    throw std::runtime_error("cannot move " + temp.string() + " to " + target.string() + ": " + ec.message());
  }
}

std::uint32_t file_crc32(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open " + path.string());
  uLong crc = crc32(0L, Z_NULL, 0);
  std::array<char, 1 << 16> buffer{};
  while (in) {
    in.read(buffer.data(), buffer.size());
    const auto n = in.gcount();
    if (n > 0) crc = crc32(crc, reinterpret_cast<const Bytef*>(buffer.data()), static_cast<uInt>(n));
  }
  return static_cast<std::uint32_t>(crc);
}

}  // namespace reenact::io
