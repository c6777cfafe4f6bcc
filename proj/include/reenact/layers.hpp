#pragma once

#include "reenact/common.hpp"
#include "reenact/image.hpp"

#include <random>
#include <string>
#include <vector>

namespace reenact {

/// Kernel, stride, dilation and zero padding of a 2-D convolution.
struct ConvGeometry {
  int kernel_h = 3;
  int kernel_w = 3;
  int stride_h = 1;
  int stride_w = 1;
  int dilation_h = 1;
  int dilation_w = 1;
  int pad_h = 0;
  int pad_w = 0;

  int out_h(int h) const { return (h + 2 * pad_h - dilation_h * (kernel_h - 1) - 1) / stride_h + 1; }
  int out_w(int w) const { return (w + 2 * pad_w - dilation_w * (kernel_w - 1) - 1) / stride_w + 1; }
  int taps() const { return kernel_h * kernel_w; }

  static ConvGeometry square(int kernel, int stride, int dilation, int pad) {
    return {kernel, kernel, stride, stride, dilation, dilation, pad, pad};
  }
};

/// Gathers the receptive fields of output rows [row_begin, row_end) into a
/// (C * kh * kw) x (rows * out_w) matrix. Out-of-bounds taps read zero.
template <typename Scalar>
void im2col(const Image<Scalar>& input, const ConvGeometry& g, int row_begin, int row_end, RowMatrixX<Scalar>& cols);

/// Adjoint of im2col: scatters `cols` back into `image` (accumulating).
template <typename Scalar>
void col2im(const RowMatrixX<Scalar>& cols, const ConvGeometry& g, int row_begin, int row_end, Image<Scalar>& image);

template <typename Matrix>
void leaky_relu_inplace(Matrix& x, typename Matrix::Scalar slope) {
  using Scalar = typename Matrix::Scalar;
  x = x.unaryExpr([slope](Scalar v) { return v > Scalar(0) ? v : slope * v; });
}

/// Multiplies `grad` by the leaky-ReLU derivative evaluated from the layer's output.
template <typename Matrix, typename Output>
void leaky_relu_backward_inplace(Matrix& grad, const Output& output, typename Matrix::Scalar slope) {
  using Scalar = typename Matrix::Scalar;
  grad = grad.binaryExpr(output, [slope](Scalar g, Scalar y) { return y > Scalar(0) ? g : slope * g; });
}

/// Xavier (Glorot) uniform initialization in [-a, a], a = sqrt(6 / (fan_in + fan_out)).
template <typename Scalar>
void xavier_uniform(MatrixX<Scalar>& w, Index fan_in, Index fan_out, std::mt19937_64& rng);

/// 2-D convolution with bias. Weight is out x (in * kh * kw).
template <typename Scalar>
class Conv2d {
 public:
  Conv2d() = default;
  Conv2d(const std::string& name, int in_channels, int out_channels, ConvGeometry geometry);

  int in_channels() const { return in_channels_; }
  int out_channels() const { return out_channels_; }
  const ConvGeometry& geometry() const { return geometry_; }

  Image<Scalar> forward(const Image<Scalar>& input) const;
  /// Accumulates parameter gradients; returns the input gradient when `need_input_grad`.
  Image<Scalar> backward(const Image<Scalar>& input, const Image<Scalar>& grad_output, bool need_input_grad = true);

  void init_xavier(std::mt19937_64& rng);
  void collect(std::vector<Param<Scalar>*>& out) {
    out.push_back(&weight);
    out.push_back(&bias);
  }

  Param<Scalar> weight;
  Param<Scalar> bias;

 private:
  int rows_per_block(int out_w) const;

  int in_channels_ = 0;
  int out_channels_ = 0;
  ConvGeometry geometry_;
};

/// Transposed convolution (the adjoint of Conv2d's data path) with bias.
/// Weight is (out * kh * kw) x in; output size is (in - 1) * stride - 2 * pad + dilation * (k - 1) + 1.
template <typename Scalar>
class TransposedConv2d {
 public:
  TransposedConv2d() = default;
  TransposedConv2d(const std::string& name, int in_channels, int out_channels, ConvGeometry geometry);

  int out_channels() const { return out_channels_; }
  int out_h(int h) const;
  int out_w(int w) const;

  Image<Scalar> forward(const Image<Scalar>& input) const;
  Image<Scalar> backward(const Image<Scalar>& input, const Image<Scalar>& grad_output, bool need_input_grad = true);

  void init_xavier(std::mt19937_64& rng);
  void collect(std::vector<Param<Scalar>*>& out) {
    out.push_back(&weight);
    out.push_back(&bias);
  }

  Param<Scalar> weight;
  Param<Scalar> bias;

 private:
  int in_channels_ = 0;
  int out_channels_ = 0;
  ConvGeometry geometry_;
};

/// Affine layer on column vectors: y = W x + b.
template <typename Scalar>
class Linear {
 public:
  Linear() = default;
  Linear(const std::string& name, int in_features, int out_features);

  MatrixX<Scalar> forward(const MatrixX<Scalar>& input) const;
  MatrixX<Scalar> backward(const MatrixX<Scalar>& input, const MatrixX<Scalar>& grad_output);

  void init_xavier(std::mt19937_64& rng);
  void collect(std::vector<Param<Scalar>*>& out) {
    out.push_back(&weight);
    out.push_back(&bias);
  }

  Param<Scalar> weight;
  Param<Scalar> bias;
};

}  // namespace reenact
