#pragma once

#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <istream>
#include <ostream>
#include <string>
#include <string_view>
#include <vector>

namespace reenact::io {

/// Little-endian primitive writer over an output stream.
class Writer {
 public:
  explicit Writer(std::ostream& out) : out_(out) {}

  void bytes(const void* data, std::size_t size) { out_.write(static_cast<const char*>(data), static_cast<std::streamsize>(size)); }
  void magic(std::string_view tag) { bytes(tag.data(), tag.size()); }
  void u8(std::uint8_t v) { bytes(&v, 1); }
  void u32(std::uint32_t v);
  void u64(std::uint64_t v);
  void f32(float v) { u32(std::bit_cast<std::uint32_t>(v)); }
  void string(std::string_view s) {
    u32(static_cast<std::uint32_t>(s.size()));
    bytes(s.data(), s.size());
  }

 private:
  std::ostream& out_;
};

/// Little-endian primitive reader. Every short read raises FormatError naming `context`.
class Reader {
 public:
  Reader(std::istream& in, std::string context) : in_(in), context_(std::move(context)) {}

  void bytes(void* data, std::size_t size);
  void expect_magic(std::string_view tag);
  std::uint8_t u8();
  std::uint32_t u32();
  std::uint64_t u64();
  float f32() { return std::bit_cast<float>(u32()); }
  std::string string(std::size_t max_size = 1u << 24);
  bool at_end();
  [[noreturn]] void fail(const std::string& message) const;

 private:
  std::istream& in_;
  std::string context_;
};

/// Writes `contents` produced by `fill` to a sibling temp file, then renames onto `path`.
template <typename Fill>
void write_atomically(const std::filesystem::path& path, Fill&& fill);

void commit_file(const std::filesystem::path& temp, const std::filesystem::path& target);
std::filesystem::path temp_sibling(const std::filesystem::path& target);

/// CRC-32 (zlib polynomial) of a file's bytes.
std::uint32_t file_crc32(const std::filesystem::path& path);

}  // namespace reenact::io

#include <fstream>

namespace reenact::io {

template <typename Fill>
void write_atomically(const std::filesystem::path& path, Fill&& fill) {
  const auto temp = temp_sibling(path);
  {
    std::ofstream out(temp, std::ios::binary | std::ios::trunc);
    if (!out) throw std::runtime_error("cannot open " + temp.string() + " for writing");
    fill(out);
    out.flush();
    if (!out) throw std::runtime_error("write failed for " + temp.string());
  }
  commit_file(temp, path);
}

}  // namespace reenact::io
