#include "reenact/layers.hpp"

#include <algorithm>
#include <cmath>

namespace reenact {

namespace {

// Upper bound on im2col block elements; keeps 512x512 passes within memory.
constexpr Index kIm2colBudget = Index{1} << 23;

// Valid output-column range [lo, hi) for a tap offset when stride_w == 1.
inline void valid_range(int ow, int w, int offset, int& lo, int& hi) {
  lo = std::clamp(-offset, 0, ow);
  hi = std::clamp(w - offset, lo, ow);
}

}  // namespace

template <typename Scalar>
void im2col(const Image<Scalar>& input, const ConvGeometry& g, int row_begin, int row_end,
                 RowMatrixX<Scalar>& cols) {
  const int channels = input.channels();
  const int h = input.height, w = input.width;
  const int ow = g.out_w(w);
  const Index n = Index{row_end - row_begin} * ow;
  cols.resize(Index{channels} * g.taps(), n);
  for (int c = 0; c < channels; ++c) {
    const Scalar* src = input.data.row(c).data();
    for (int ky = 0; ky < g.kernel_h; ++ky) {
      for (int kx = 0; kx < g.kernel_w; ++kx) {
        Scalar* dst = cols.row((Index{c} * g.kernel_h + ky) * g.kernel_w + kx).data();
        const int x_offset = kx * g.dilation_w - g.pad_w;
        for (int oy = row_begin; oy < row_end; ++oy, dst += ow) {
          const int iy = oy * g.stride_h - g.pad_h + ky * g.dilation_h;
          if (iy < 0 || iy >= h) {
            std::fill(dst, dst + ow, Scalar(0));
            continue;
          }
          const Scalar* srow = src + Index{iy} * w;
          if (g.stride_w == 1) {
            int lo = 0, hi = 0;
            valid_range(ow, w, x_offset, lo, hi);
            std::fill(dst, dst + lo, Scalar(0));
            std::copy(srow + lo + x_offset, srow + hi + x_offset, dst + lo);
            std::fill(dst + hi, dst + ow, Scalar(0));
          } else {
            for (int ox = 0; ox < ow; ++ox) {
              const int ix = ox * g.stride_w + x_offset;
              dst[ox] = (ix >= 0 && ix < w) ? srow[ix] : Scalar(0);
            }
          }
        }
      }
    }
  }
}

template <typename Scalar>
void col2im(const RowMatrixX<Scalar>& cols, const ConvGeometry& g, int row_begin, int row_end,
                 Image<Scalar>& image) {
  const int channels = image.channels();
  const int h = image.height, w = image.width;
  const int ow = g.out_w(w);
  for (int c = 0; c < channels; ++c) {
    Scalar* dst = image.data.row(c).data();
    for (int ky = 0; ky < g.kernel_h; ++ky) {
      for (int kx = 0; kx < g.kernel_w; ++kx) {
        const Scalar* src = cols.row((Index{c} * g.kernel_h + ky) * g.kernel_w + kx).data();
        const int x_offset = kx * g.dilation_w - g.pad_w;
        for (int oy = row_begin; oy < row_end; ++oy, src += ow) {
          const int iy = oy * g.stride_h - g.pad_h + ky * g.dilation_h;
          if (iy < 0 || iy >= h) continue;
          Scalar* drow = dst + Index{iy} * w;
          if (g.stride_w == 1) {
            int lo = 0, hi = 0;
            valid_range(ow, w, x_offset, lo, hi);
            for (int ox = lo; ox < hi; ++ox) drow[ox + x_offset] += src[ox];
          } else {
            for (int ox = 0; ox < ow; ++ox) {
              const int ix = ox * g.stride_w + x_offset;
              if (ix >= 0 && ix < w) drow[ix] += src[ox];
            }
          }
        }
      }
    }
  }
}

template <typename Scalar>
void xavier_uniform(MatrixX<Scalar>& w, Index fan_in, Index fan_out, std::mt19937_64& rng) {
  const double a = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
  std::uniform_real_distribution<double> dist(-a, a);
  for (Index j = 0; j < w.cols(); ++j)
    for (Index i = 0; i < w.rows(); ++i) w(i, j) = static_cast<Scalar>(dist(rng));
}

// ---------------------------------------------------------------- Conv2d

template <typename Scalar>
Conv2d<Scalar>::Conv2d(const std::string& name, int in_channels, int out_channels, ConvGeometry geometry)
    : weight(name + ".weight", out_channels, Index{in_channels} * geometry.taps()),
      bias(name + ".bias", out_channels, 1),
      in_channels_(in_channels),
      out_channels_(out_channels),
      geometry_(geometry) {}

template <typename Scalar>
int Conv2d<Scalar>::rows_per_block(int out_w) const {
  const Index per_row = Index{in_channels_} * geometry_.taps() * std::max(out_w, 1);
  return static_cast<int>(std::max<Index>(1, kIm2colBudget / std::max<Index>(per_row, 1)));
}

template <typename Scalar>
Image<Scalar> Conv2d<Scalar>::forward(const Image<Scalar>& input) const {
  require(input.channels() == in_channels_, weight.name + ": expected " + std::to_string(in_channels_) +
                                                " input channels, got " + std::to_string(input.channels()));
  const int oh = geometry_.out_h(input.height), ow = geometry_.out_w(input.width);
  require(oh > 0 && ow > 0, weight.name + ": input too small for the kernel");
  Image<Scalar> out(out_channels_, oh, ow);
  const int step = rows_per_block(ow);
  RowMatrixX<Scalar> cols;
  for (int r0 = 0; r0 < oh; r0 += step) {
    const int r1 = std::min(oh, r0 + step);
    im2col(input, geometry_, r0, r1, cols);
    out.data.middleCols(Index{r0} * ow, cols.cols()).noalias() = weight.value * cols;
  }
  out.data.colwise() += bias.value.col(0);
  return out;
}

template <typename Scalar>
Image<Scalar> Conv2d<Scalar>::backward(const Image<Scalar>& input, const Image<Scalar>& grad_output,
                                       bool need_input_grad) {
  const int oh = grad_output.height, ow = grad_output.width;
  Image<Scalar> grad_input;
  if (need_input_grad) grad_input = Image<Scalar>(in_channels_, input.height, input.width);
  const int step = rows_per_block(ow);
  RowMatrixX<Scalar> cols;
  RowMatrixX<Scalar> grad_cols;
  for (int r0 = 0; r0 < oh; r0 += step) {
    const int r1 = std::min(oh, r0 + step);
    im2col(input, geometry_, r0, r1, cols);
    const auto g = grad_output.data.middleCols(Index{r0} * ow, cols.cols());
    weight.grad.noalias() += g * cols.transpose();
    if (need_input_grad) {
      grad_cols.noalias() = weight.value.transpose() * g;
      col2im(grad_cols, geometry_, r0, r1, grad_input);
    }
  }
  bias.grad.col(0) += grad_output.data.rowwise().sum();
  return grad_input;
}

template <typename Scalar>
void Conv2d<Scalar>::init_xavier(std::mt19937_64& rng) {
  xavier_uniform(weight.value, Index{in_channels_} * geometry_.taps(), Index{out_channels_} * geometry_.taps(), rng);
  bias.value.setZero();
}

// ------------------------------------------------------- TransposedConv2d

template <typename Scalar>
TransposedConv2d<Scalar>::TransposedConv2d(const std::string& name, int in_channels, int out_channels,
                                           ConvGeometry geometry)
    : weight(name + ".weight", Index{out_channels} * geometry.taps(), in_channels),
      bias(name + ".bias", out_channels, 1),
      in_channels_(in_channels),
      out_channels_(out_channels),
      geometry_(geometry) {}

template <typename Scalar>
int TransposedConv2d<Scalar>::out_h(int h) const {
  const auto& g = geometry_;
  return (h - 1) * g.stride_h - 2 * g.pad_h + g.dilation_h * (g.kernel_h - 1) + 1;
}

template <typename Scalar>
int TransposedConv2d<Scalar>::out_w(int w) const {
  const auto& g = geometry_;
  return (w - 1) * g.stride_w - 2 * g.pad_w + g.dilation_w * (g.kernel_w - 1) + 1;
}

template <typename Scalar>
Image<Scalar> TransposedConv2d<Scalar>::forward(const Image<Scalar>& input) const {
  require(input.channels() == in_channels_, weight.name + ": channel mismatch");
  Image<Scalar> out(out_channels_, out_h(input.height), out_w(input.width));
  const RowMatrixX<Scalar> cols = weight.value * input.data;
  col2im(cols, geometry_, 0, input.height, out);
  out.data.colwise() += bias.value.col(0);
  return out;
}

template <typename Scalar>
Image<Scalar> TransposedConv2d<Scalar>::backward(const Image<Scalar>& input, const Image<Scalar>& grad_output,
                                                 bool need_input_grad) {
  RowMatrixX<Scalar> cols;
  im2col(grad_output, geometry_, 0, input.height, cols);
  weight.grad.noalias() += cols * input.data.transpose();
  bias.grad.col(0) += grad_output.data.rowwise().sum();
  Image<Scalar> grad_input;
  if (need_input_grad) {
    grad_input = Image<Scalar>(in_channels_, input.height, input.width);
    grad_input.data.noalias() = weight.value.transpose() * cols;
  }
  return grad_input;
}

template <typename Scalar>
void TransposedConv2d<Scalar>::init_xavier(std::mt19937_64& rng) {
  xavier_uniform(weight.value, Index{out_channels_} * geometry_.taps(), Index{in_channels_} * geometry_.taps(), rng);
  bias.value.setZero();
}

// ---------------------------------------------------------------- Linear

template <typename Scalar>
Linear<Scalar>::Linear(const std::string& name, int in_features, int out_features)
    : weight(name + ".weight", out_features, in_features), bias(name + ".bias", out_features, 1) {}

template <typename Scalar>
MatrixX<Scalar> Linear<Scalar>::forward(const MatrixX<Scalar>& input) const {
  require(input.rows() == weight.value.cols(), weight.name + ": expected " + std::to_string(weight.value.cols()) +
                                                   " features, got " + std::to_string(input.rows()));
  MatrixX<Scalar> out = weight.value * input;
  out.colwise() += bias.value.col(0);
  return out;
}

template <typename Scalar>
MatrixX<Scalar> Linear<Scalar>::backward(const MatrixX<Scalar>& input, const MatrixX<Scalar>& grad_output) {
  weight.grad.noalias() += grad_output * input.transpose();
  bias.grad.col(0) += grad_output.rowwise().sum();
  return weight.value.transpose() * grad_output;
}

template <typename Scalar>
void Linear<Scalar>::init_xavier(std::mt19937_64& rng) {
  xavier_uniform(weight.value, weight.value.cols(), weight.value.rows(), rng);
  bias.value.setZero();
}

#define REENACT_INSTANTIATE_LAYERS(S)                                                                    \
  template void im2col(const Image<S>&, const ConvGeometry&, int, int, RowMatrixX<S>&);                     \
  template void col2im(const RowMatrixX<S>&, const ConvGeometry&, int, int, Image<S>&);                     \
  template void xavier_uniform(MatrixX<S>&, Index, Index, std::mt19937_64&);                             \
  template class Conv2d<S>;                                                                              \
  template class TransposedConv2d<S>;                                                                    \
  template class Linear<S>;

REENACT_INSTANTIATE_LAYERS(float)
REENACT_INSTANTIATE_LAYERS(double)

}  // namespace reenact
