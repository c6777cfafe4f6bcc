#include "reenact/layers.hpp"

#include "test_support.hpp"

using namespace reenact;
using reenact::testing::check_gradients;
using reenact::testing::fill_normal;

namespace {

Image<double> random_image(int c, int h, int w, std::mt19937_64& rng) {
  Image<double> x(c, h, w);
  fill_normal(x.data, rng);
  return x;
}

Image<double> naive_conv(const Image<double>& x, const Conv2d<double>& conv) {
  const auto& g = conv.geometry();
  Image<double> y(conv.out_channels(), g.out_h(x.height), g.out_w(x.width));
  for (int o = 0; o < y.channels(); ++o)
    for (int oy = 0; oy < y.height; ++oy)
      for (int ox = 0; ox < y.width; ++ox) {
        double sum = conv.bias.value(o, 0);
        for (int c = 0; c < x.channels(); ++c)
          for (int ky = 0; ky < g.kernel_h; ++ky)
            for (int kx = 0; kx < g.kernel_w; ++kx) {
              const int iy = oy * g.stride_h - g.pad_h + ky * g.dilation_h;
              const int ix = ox * g.stride_w - g.pad_w + kx * g.dilation_w;
              if (iy < 0 || iy >= x.height || ix < 0 || ix >= x.width) continue;
              sum += conv.weight.value(o, (c * g.kernel_h + ky) * g.kernel_w + kx) * x.at(c, iy, ix);
            }
        y.at(o, oy, ox) = sum;
      }
  return y;
}

}  // namespace

TEST(Conv2d, MatchesNaiveLoopsAcrossGeometries) {
  std::mt19937_64 rng(1);
  const ConvGeometry geometries[] = {ConvGeometry::square(3, 1, 1, 1), ConvGeometry::square(3, 1, 4, 4),
                                     ConvGeometry::square(4, 2, 1, 1), ConvGeometry{3, 1, 2, 1, 1, 1, 1, 0},
                                     ConvGeometry{2, 3, 1, 2, 2, 1, 0, 1}};
  for (const auto& g : geometries) {
    Conv2d<double> conv("c", 3, 4, g);
    conv.init_xavier(rng);
    fill_normal(conv.bias.value, rng);
    const auto x = random_image(3, 9, 11, rng);
    const auto y = conv.forward(x);
    const auto ref = naive_conv(x, conv);
    ASSERT_EQ(y.height, ref.height);
    ASSERT_EQ(y.width, ref.width);
    EXPECT_LE((y.data - ref.data).cwiseAbs().maxCoeff(), 1e-12);
  }
}

TEST(Conv2d, DilatedSamePaddingKeepsSize) {
  for (int d : {1, 2, 4, 8, 16}) {
    const auto g = ConvGeometry::square(3, 1, d, d);
    EXPECT_EQ(g.out_h(64), 64);
    EXPECT_EQ(g.out_w(37), 37);
  }
}

TEST(Conv2d, GradientsMatchFiniteDifferences) {
  std::mt19937_64 rng(2);
  Conv2d<double> conv("c", 2, 3, ConvGeometry::square(3, 2, 2, 2));
  conv.init_xavier(rng);
  const auto x = random_image(2, 8, 7, rng);
  Image<double> probe = conv.forward(x);
  fill_normal(probe.data, rng);
  auto loss = [&] { return conv.forward(x).data.cwiseProduct(probe.data).sum(); };
  conv.weight.zero_grad();
  conv.bias.zero_grad();
  const auto gx = conv.backward(x, probe, true);
  std::vector<Param<double>*> params;
  conv.collect(params);
  EXPECT_LE(check_gradients(params, loss, 20, 3).worst_relative_error, 1e-6);

  // Input gradient: the loss is linear in x, so <gx, dx> equals the change.
  Image<double> dx = random_image(2, 8, 7, rng);
  Image<double> shifted = x;
  shifted.data += dx.data;
  const double change = conv.forward(shifted).data.cwiseProduct(probe.data).sum() - loss();
  EXPECT_NEAR(gx.data.cwiseProduct(dx.data).sum(), change, 1e-9);
}

TEST(TransposedConv2d, IsTheAdjointOfConvolution) {
  std::mt19937_64 rng(4);
  const auto g = ConvGeometry::square(4, 2, 1, 1);
  Conv2d<double> conv("c", 3, 5, g);
  TransposedConv2d<double> up("t", 5, 3, g);
  conv.init_xavier(rng);
  up.weight.value = conv.weight.value.transpose();
  const auto x = random_image(3, 8, 8, rng);
  const auto y = random_image(5, 4, 4, rng);
  ASSERT_EQ(up.out_h(4), 8);
  const double lhs = conv.forward(x).data.cwiseProduct(y.data).sum();
  const double rhs = x.data.cwiseProduct(up.forward(y).data).sum();
  EXPECT_NEAR(lhs, rhs, 1e-10);
}

TEST(TransposedConv2d, GradientsMatchFiniteDifferences) {
  std::mt19937_64 rng(5);
  TransposedConv2d<double> up("t", 2, 3, ConvGeometry::square(4, 2, 1, 1));
  up.init_xavier(rng);
  const auto x = random_image(2, 4, 5, rng);
  Image<double> probe = up.forward(x);
  fill_normal(probe.data, rng);
  auto loss = [&] { return up.forward(x).data.cwiseProduct(probe.data).sum(); };
  up.weight.zero_grad();
  up.bias.zero_grad();
  up.backward(x, probe, false);
  std::vector<Param<double>*> params;
  up.collect(params);
  EXPECT_LE(check_gradients(params, loss, 20, 6).worst_relative_error, 1e-6);
}

TEST(Linear, ComputesAnAffineMap) {
  Linear<double> fc("fc", 2, 2);
  fc.weight.value << 1, 2, 3, 4;
  fc.bias.value << 0.5, -1;
  MatrixX<double> x(2, 1);
  x << 1, -1;
  const auto y = fc.forward(x);
  EXPECT_DOUBLE_EQ(y(0, 0), 1 - 2 + 0.5);
  EXPECT_DOUBLE_EQ(y(1, 0), 3 - 4 - 1);
}

TEST(Xavier, StaysWithinTheGlorotBound) {
  std::mt19937_64 rng(7);
  MatrixX<double> w(64, 96);
  xavier_uniform(w, 96, 64, rng);
  const double bound = std::sqrt(6.0 / (96 + 64));
  EXPECT_LE(w.cwiseAbs().maxCoeff(), bound);
  EXPECT_GT(w.cwiseAbs().maxCoeff(), 0.9 * bound);
}

TEST(LeakyRelu, ScalesOnlyNegativeValues) {
  Eigen::ArrayXd x(4);
  x << -2, -0.5, 0, 3;
  leaky_relu_inplace(x, 0.02);
  EXPECT_DOUBLE_EQ(x(0), -0.04);
  EXPECT_DOUBLE_EQ(x(1), -0.01);
  EXPECT_DOUBLE_EQ(x(2), 0);
  EXPECT_DOUBLE_EQ(x(3), 3);
}
