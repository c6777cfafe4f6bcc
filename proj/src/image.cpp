#include "reenact/image.hpp"

#include "reenact/binary_io.hpp"

#include <cmath>
#include <fstream>
#include <string>
#include <vector>

namespace reenact {

namespace {

std::uint8_t quantize(float v) {
  const float c = std::clamp(v, 0.0f, 1.0f);
  return static_cast<std::uint8_t>(std::lround(c * 255.0f));
}

// Reads a PNM header "Px W H 255\n".
void read_header(std::istream& in, const std::string& expected, int& width, int& height, const std::string& path) {
  std::string magic;
  int maxval = 0;
  in >> magic;
  auto skip_comments = [&] {
    in >> std::ws;
    while (in.peek() == '#') {
      std::string line;
      std::getline(in, line);
      in >> std::ws;
    }
  };
  skip_comments();
  in >> width;
  skip_comments();
  in >> height;
  skip_comments();
  in >> maxval;
  if (!in || magic != expected || width <= 0 || height <= 0 || maxval != 255)
    throw FormatError(path + ": not an 8-bit " + expected + " image");
  in.get();
}

}  // namespace

void write_ppm(const std::filesystem::path& path, const Image<float>& rgb) {
  require(rgb.channels() == 3, "PPM output needs a 3-channel image");
  io::write_atomically(path, [&](std::ostream& out) {
    out << "P6\n" << rgb.width << ' ' << rgb.height << "\n255\n";
    std::vector<std::uint8_t> row(static_cast<std::size_t>(rgb.width) * 3);
    for (int y = 0; y < rgb.height; ++y) {
      for (int x = 0; x < rgb.width; ++x)
        for (int c = 0; c < 3; ++c) row[static_cast<std::size_t>(x) * 3 + c] = quantize(rgb.at(c, y, x));
      out.write(reinterpret_cast<const char*>(row.data()), static_cast<std::streamsize>(row.size()));
    }
  });
}

Image<float> read_ppm(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FormatError("cannot open image " + path.string());
  int width = 0, height = 0;
  read_header(in, "P6", width, height, path.string());
  Image<float> img(3, height, width);
  std::vector<std::uint8_t> row(static_cast<std::size_t>(width) * 3);
  for (int y = 0; y < height; ++y) {
    in.read(reinterpret_cast<char*>(row.data()), static_cast<std::streamsize>(row.size()));
    if (in.gcount() != static_cast<std::streamsize>(row.size())) throw FormatError(path.string() + ": truncated");
    for (int x = 0; x < width; ++x)
      for (int c = 0; c < 3; ++c) img.at(c, y, x) = row[static_cast<std::size_t>(x) * 3 + c] / 255.0f;
  }
  return img;
}

void write_pgm(const std::filesystem::path& path, const Mask& mask, int height, int width) {
  require(mask.size() == Index{height} * width, "mask size does not match resolution");
  io::write_atomically(path, [&](std::ostream& out) {
    out << "P5\n" << width << ' ' << height << "\n255\n";
    for (Index i = 0; i < mask.size(); ++i) out.put(mask(i) ? static_cast<char>(255) : 0);
  });
}

Mask read_pgm_mask(const std::filesystem::path& path, int* height, int* width) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FormatError("cannot open mask " + path.string());
  int w = 0, h = 0;
  read_header(in, "P5", w, h, path.string());
  Mask mask(Index{w} * h);
  std::vector<char> bytes(static_cast<std::size_t>(mask.size()));
  in.read(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (in.gcount() != static_cast<std::streamsize>(bytes.size())) throw FormatError(path.string() + ": truncated");
  for (Index i = 0; i < mask.size(); ++i) mask(i) = bytes[static_cast<std::size_t>(i)] != 0;
  if (height) *height = h;
  if (width) *width = w;
  return mask;
}

}  // namespace reenact
