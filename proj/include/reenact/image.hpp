#pragma once

#include "reenact/common.hpp"

#include <filesystem>

namespace reenact {

/// Multi-channel image stored as a row-major C x (H*W) matrix; pixel (y, x) is column y*W + x.
///
/// Channels-by-pixels keeps every convolution a single GEMM against an
/// im2col block. A batch of 1-D signals is stored as an image with the
/// signal axis as height and the batch as width.
template <typename Scalar>
struct Image {
  int height = 0;
  int width = 0;
  RowMatrixX<Scalar> data;

  Image() = default;
  Image(int channels, int h, int w) : height(h), width(w), data(RowMatrixX<Scalar>::Zero(channels, Index{h} * w)) {}
  Image(int h, int w, RowMatrixX<Scalar> d) : height(h), width(w), data(std::move(d)) {}

  int channels() const { return static_cast<int>(data.rows()); }
  Index pixels() const { return Index{height} * width; }
  Scalar& at(int c, int y, int x) { return data(c, Index{y} * width + x); }
  Scalar at(int c, int y, int x) const { return data(c, Index{y} * width + x); }

  bool same_size(const Image& other) const { return height == other.height && width == other.width; }

  template <typename Other>
  Image<Other> cast() const {
    return Image<Other>(height, width, data.template cast<Other>());
  }
};

/// Stacks channels of `a` above channels of `b`.
template <typename Scalar>
Image<Scalar> concat_channels(const Image<Scalar>& a, const Image<Scalar>& b) {
  require(a.same_size(b), "cannot concatenate images of different resolution");
  Image<Scalar> out(a.channels() + b.channels(), a.height, a.width);
  out.data.topRows(a.channels()) = a.data;
  out.data.bottomRows(b.channels()) = b.data;
  return out;
}

/// Single-channel mask (nonzero = set) as a boolean array per pixel.
using Mask = Eigen::Array<bool, Eigen::Dynamic, 1>;

// 8-bit image files. RGB images use binary PPM (P6), masks binary PGM (P5).
// Values are clamped to [0, 1] and rounded to the nearest 8-bit level.
void write_ppm(const std::filesystem::path& path, const Image<float>& rgb);
Image<float> read_ppm(const std::filesystem::path& path);
void write_pgm(const std::filesystem::path& path, const Mask& mask, int height, int width);
Mask read_pgm_mask(const std::filesystem::path& path, int* height = nullptr, int* width = nullptr);

}  // namespace reenact
