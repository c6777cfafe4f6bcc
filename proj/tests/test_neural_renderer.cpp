#include "reenact/neural_renderer.hpp"

#include "reenact/losses.hpp"
#include "test_support.hpp"

#include <set>

using namespace reenact;
using reenact::testing::check_gradients;
using reenact::testing::fill_normal;
using reenact::testing::TempDir;

namespace {

CameraPose frontal(double distance, double focal) {
  CameraPose pose;
  pose.translation = Eigen::Vector3d(0, 0, distance);
  pose.focal_x = pose.focal_y = focal;
  return pose;
}

UVMap single_uv(float u, float v) {
  UVMap map;
  map.data = Image<float>(3, 1, 1);
  map.data.at(0, 0, 0) = u;
  map.data.at(1, 0, 0) = v;
  map.data.at(2, 0, 0) = 1.0f;
  return map;
}

// Layers of a U-Net counted from the layer formulas: k*k*in*out + out.
Index unet_parameter_oracle(const UNetConfig& c) {
  const int k = c.variant == UNetVariant::kDilated ? 3 : 4;
  auto width = [&](int level) { return std::min(c.base_width << (level - 1), c.max_width); };
  Index total = 0;
  for (int l = 1; l <= c.depth; ++l) {
    const Index in = l == 1 ? c.in_channels : width(l - 1);
    total += k * k * in * width(l) + width(l);
    const Index dec_in = l == c.depth ? width(l) : 2 * width(l);
    const Index dec_out = l == 1 ? c.out_channels : width(l - 1);
    total += k * k * dec_in * dec_out + dec_out;
  }
  return total;
}

}  // namespace

TEST(Camera, ValidationRejectsBadPoses) {
  CameraPose pose = frontal(10, 1);
  validate(pose);
  pose.rotation(0, 1) = 0.1;
  EXPECT_THROW(validate(pose), InvalidInput);
  pose = frontal(10, 1);
  pose.rotation = -Eigen::Matrix3d::Identity();
  EXPECT_THROW(validate(pose), InvalidInput);
  pose = frontal(10, 0);
  EXPECT_THROW(validate(pose), InvalidInput);
}

TEST(Camera, JsonRoundTrip) {
  CameraPose pose;
  pose.rotation = Eigen::AngleAxisd(0.3, Eigen::Vector3d(1, 2, 3).normalized()).toRotationMatrix();
  pose.translation = Eigen::Vector3d(1.5, -2, 480);
  pose.focal_x = 2.1;
  pose.center_y = 0.45;
  const auto back = camera_pose_from_json(to_json(pose));
  EXPECT_LE((back.rotation - pose.rotation).cwiseAbs().maxCoeff(), 1e-15);
  EXPECT_EQ(back.translation, pose.translation);
  EXPECT_EQ(back.focal_x, 2.1);
  EXPECT_EQ(back.center_y, 0.45);
}

TEST(Rasterizer, EmptyMeshCoversNothing) {
  const auto map = rasterize(Vertices<double>(0, 3), Triangles(0, 3), TexCoords(0, 2), frontal(10, 1), 8, 8);
  EXPECT_EQ(map.coverage().count(), 0);
}

TEST(Rasterizer, SingleTriangleCoversTheHandEnumeratedPixels) {
  // Projects to pixel-space corners (2,2), (6,2), (2,6) on an 8x8 image.
  Vertices<double> v(3, 3);
  v << -2.5, -2.5, 10, 2.5, -2.5, 10, -2.5, 2.5, 10;
  Triangles tri(1, 3);
  tri << 0, 1, 2;
  TexCoords uv(3, 2);
  uv << 0, 0, 1, 0, 0, 1;
  const auto map = rasterize(v, tri, uv, frontal(0, 1), 8, 8);
  const std::set<std::pair<int, int>> expected{{2, 2}, {2, 3}, {2, 4}, {2, 5}, {3, 2},
                                               {3, 3}, {3, 4}, {4, 2}, {4, 3}, {5, 2}};  // (x, y)
  std::set<std::pair<int, int>> covered;
  const Mask mask = map.coverage();
  for (int y = 0; y < 8; ++y)
    for (int x = 0; x < 8; ++x)
      if (mask(y * 8 + x)) covered.insert({x, y});
  EXPECT_EQ(covered, expected);
  // Pixel center (2.5, 2.5) sits 0.5 px along both legs of length 4.
  EXPECT_NEAR(map.data.at(0, 2, 2), 0.125, 1e-6);
  EXPECT_NEAR(map.data.at(1, 2, 2), 0.125, 1e-6);
  // Pixel center (3.5, 4.5) lies on the hypotenuse.
  EXPECT_NEAR(map.data.at(0, 4, 3), 0.375, 1e-6);
  EXPECT_NEAR(map.data.at(1, 4, 3), 0.625, 1e-6);
  EXPECT_EQ(map.data.at(2, 0, 0), 0.0f);
}

TEST(Rasterizer, BackFacingTrianglesAreSkipped) {
  Vertices<double> v(3, 3);
  v << -2.5, -2.5, 10, 2.5, -2.5, 10, -2.5, 2.5, 10;
  Triangles tri(1, 3);
  tri << 0, 2, 1;
  const auto map = rasterize(v, tri, TexCoords::Zero(3, 2), frontal(0, 1), 8, 8);
  EXPECT_EQ(map.coverage().count(), 0);
}

TEST(Rasterizer, NearerTriangleWins) {
  // Two coincident footprints; the far one is scaled so both project identically.
  Vertices<double> v(6, 3);
  v << -2.5, -2.5, 10, 2.5, -2.5, 10, -2.5, 2.5, 10,  //
      -5, -5, 20, 5, -5, 20, -5, 5, 20;
  TexCoords uv(6, 2);
  uv << 0.1, 0.1, 0.1, 0.1, 0.1, 0.1, 0.9, 0.9, 0.9, 0.9, 0.9, 0.9;
  for (const bool near_first : {true, false}) {
    Triangles tri(2, 3);
    if (near_first)
      tri << 0, 1, 2, 3, 4, 5;
    else
      tri << 3, 4, 5, 0, 1, 2;
    const auto frags = rasterize_fragments(v, tri, frontal(0, 1), 8, 8);
    const auto map = rasterize(v, tri, uv, frontal(0, 1), 8, 8);
    const int near_id = near_first ? 0 : 1;
    int covered = 0;
    for (Index p = 0; p < 64; ++p) {
      if (frags.triangle[p] < 0) continue;
      ++covered;
      EXPECT_EQ(frags.triangle[p], near_id);
      EXPECT_NEAR(frags.depth(p), 10.0, 1e-9);
      EXPECT_NEAR(map.data.data(0, p), 0.1, 1e-6);
    }
    EXPECT_EQ(covered, 10);
  }
}

TEST(Rasterizer, BarycentricsArePerspectiveCorrect) {
  // A triangle slanted in depth; each covered pixel's ray is intersected with
  // its plane and the hit point's barycentrics are solved in 3-D.
  Vertices<double> v(3, 3);
  v << -30, -20, 80, 40, -25, 160, -20, 35, 110;
  Triangles tri(1, 3);
  tri << 0, 1, 2;
  const int size = 32;
  const CameraPose pose = frontal(0, 1.2);
  const auto frags = rasterize_fragments(v, tri, pose, size, size);
  int checked = 0;
  for (int y = 0; y < size; ++y)
    for (int x = 0; x < size; ++x) {
      const Index p = Index{y} * size + x;
      if (frags.triangle[p] < 0) continue;
      const Eigen::Vector3d ray((x + 0.5 - 0.5 * size) / (1.2 * size), (y + 0.5 - 0.5 * size) / (1.2 * size), 1.0);
      const Eigen::Vector3d a = v.row(0), b = v.row(1), c = v.row(2);
      Eigen::Matrix3d m;
      m << b - a, c - a, -ray;
      const Eigen::Vector3d s = m.colPivHouseholderQr().solve(-a);
      EXPECT_NEAR(frags.barycentric(p, 1), s(0), 1e-9);
      EXPECT_NEAR(frags.barycentric(p, 2), s(1), 1e-9);
      EXPECT_NEAR(frags.depth(p), s(2), 1e-7);
      ++checked;
    }
  EXPECT_GT(checked, 50);
}

TEST(Rasterizer, DemoFaceIsFrontFacing) {
  const auto basis = demo_basis();
  const auto verts = reconstruct_vertices(basis, VectorX<double>::Zero(basis.shape_dim()).eval(),
                                          VectorX<double>::Zero(basis.expression_dim()).eval());
  CameraPose pose;
  pose.translation = Eigen::Vector3d(0, 0, 500);
  const auto map = rasterize(verts, basis.triangles, basis.uv, pose, 64, 64);
  const auto covered = map.coverage().count();
  EXPECT_GT(covered, 64 * 64 / 8);
  EXPECT_LT(covered, 64 * 64);
}

TEST(UVMapFile, RoundTrip) {
  TempDir dir;
  const auto basis = demo_basis();
  const auto verts = reconstruct_vertices(basis, VectorX<double>::Zero(basis.shape_dim()).eval(),
                                          VectorX<double>::Zero(basis.expression_dim()).eval());
  CameraPose pose;
  pose.translation = Eigen::Vector3d(0, 0, 500);
  const auto map = rasterize(verts, basis.triangles, basis.uv, pose, 24, 20);
  save_uv_map(dir / "a.uv", map);
  const auto back = load_uv_map(dir / "a.uv");
  EXPECT_EQ(back.height(), 24);
  EXPECT_EQ(back.width(), 20);
  EXPECT_EQ(back.data.data, map.data.data);
}

TEST(TextureSampling, TexelCenterReturnsTheTexel) {
  std::mt19937_64 rng(1);
  NeuralTexture<double> tex(4, 16);
  fill_normal(tex.grid.value, rng);
  const int i = 2, j = 1;
  const auto f = sample_texture(tex, single_uv((j + 0.5f) / 4, (i + 0.5f) / 4));
  EXPECT_LE((f.data.col(0) - tex.grid.value.col(i * 4 + j)).cwiseAbs().maxCoeff(), 1e-7);
}

TEST(TextureSampling, MidpointAveragesNeighbours) {
  std::mt19937_64 rng(2);
  NeuralTexture<double> tex(4, 16);
  fill_normal(tex.grid.value, rng);
  const auto f = sample_texture(tex, single_uv(2.0f / 4, 1.5f / 4));  // between texels (1,1) and (1,2)
  const VectorX<double> expected = 0.5 * (tex.grid.value.col(5) + tex.grid.value.col(6));
  EXPECT_LE((f.data.col(0) - expected).cwiseAbs().maxCoeff(), 1e-7);
}

TEST(TextureSampling, MatchesAFourNeighbourOracle) {
  std::mt19937_64 rng(3);
  const int s = 8;
  NeuralTexture<double> tex(s, 5);
  fill_normal(tex.grid.value, rng);
  std::uniform_real_distribution<float> unit(0.0f, 1.0f);
  for (int trial = 0; trial < 200; ++trial) {
    const float u = unit(rng), v = unit(rng);
    const double x = std::clamp(double(u) * s - 0.5, 0.0, s - 1.0);
    const double y = std::clamp(double(v) * s - 0.5, 0.0, s - 1.0);
    const int x0 = std::min(static_cast<int>(x), s - 2), y0 = std::min(static_cast<int>(y), s - 2);
    const double fx = x - x0, fy = y - y0;
    auto texel = [&](int yy, int xx) { return VectorX<double>(tex.grid.value.col(yy * s + xx)); };
    const VectorX<double> expected = (1 - fy) * ((1 - fx) * texel(y0, x0) + fx * texel(y0, x0 + 1)) +
                                     fy * ((1 - fx) * texel(y0 + 1, x0) + fx * texel(y0 + 1, x0 + 1));
    const auto f = sample_texture(tex, single_uv(u, v));
    EXPECT_LE((f.data.col(0) - expected).cwiseAbs().maxCoeff(), 1e-6) << "u=" << u << " v=" << v;
  }
}

TEST(TextureSampling, UncoveredPixelsGetZeroFeatures) {
  NeuralTexture<double> tex(4, 3);
  tex.grid.value.setOnes();
  UVMap map = single_uv(0.5f, 0.5f);
  map.data.at(2, 0, 0) = 0.0f;
  EXPECT_TRUE(sample_texture(tex, map).data.isZero(0));
}

TEST(TextureSampling, BackwardIsTheAdjoint) {
  std::mt19937_64 rng(4);
  NeuralTexture<double> tex(8, 4);
  fill_normal(tex.grid.value, rng);
  UVMap map;
  map.data = Image<float>(3, 5, 6);
  std::uniform_real_distribution<float> unit(0.0f, 1.0f);
  for (Index p = 0; p < 30; ++p) {
    map.data.data(0, p) = unit(rng);
    map.data.data(1, p) = unit(rng);
    map.data.data(2, p) = p % 4 ? 1.0f : 0.0f;
  }
  Image<double> g(4, 5, 6);
  fill_normal(g.data, rng);
  tex.grid.zero_grad();
  sample_texture_backward(tex, map, g);
  const double lhs = sample_texture(tex, map).data.cwiseProduct(g.data).sum();
  const double rhs = tex.grid.value.cwiseProduct(tex.grid.grad).sum();
  EXPECT_NEAR(lhs, rhs, 1e-10);
}

TEST(UNet, ReferenceConfigurationHasAboutTwoPointThreeFiveMillionParameters) {
  UNetConfig config;
  UNet<float> net("net", config);
  EXPECT_EQ(net.parameter_count(), unet_parameter_oracle(config));
  EXPECT_EQ(net.parameter_count(), 2348419);
  EXPECT_LE(std::abs(net.parameter_count() - kReferenceParameterCount), 0.15 * kReferenceParameterCount);
}

TEST(UNet, ParameterCountMatchesTheLayerFormula) {
  for (const auto variant : {UNetVariant::kDilated, UNetVariant::kStrided})
    for (const int base : {4, 8, 16}) {
      UNetConfig c;
      c.base_width = base;
      c.variant = variant;
      c.in_channels = 6;
      EXPECT_EQ(UNet<float>("n", c).parameter_count(), unet_parameter_oracle(c));
    }
}

TEST(UNet, ReferenceNetworkPreservesDimsAt64) {
  UNet<float> net("net", UNetConfig{});
  std::mt19937_64 rng(5);
  net.init_xavier(rng);
  Image<float> x(16, 64, 64);
  fill_normal(x.data, rng);
  typename UNet<float>::Cache cache;
  const auto y = net.forward(x, &cache);
  EXPECT_EQ(y.channels(), 3);
  EXPECT_EQ(y.height, 64);
  EXPECT_EQ(y.width, 64);
  for (const auto& e : cache.encoder) {
    EXPECT_EQ(e.height, 64);
    EXPECT_EQ(e.width, 64);
  }
  for (const auto& d : cache.decoder_out) EXPECT_EQ(d.height, 64);
}

TEST(UNet, NarrowDilatedNetworkPreservesDimsAt512) {
  UNetConfig c;
  c.base_width = 2;
  c.max_width = 4;
  UNet<float> net("net", c);
  std::mt19937_64 rng(6);
  net.init_xavier(rng);
  Image<float> x(16, 512, 512);
  fill_normal(x.data, rng);
  const auto y = net.forward(x);
  EXPECT_EQ(y.height, 512);
  EXPECT_EQ(y.width, 512);
}

TEST(UNet, StridedVariantRestoresTheInputSize) {
  UNetConfig c;
  c.base_width = 4;
  c.variant = UNetVariant::kStrided;
  UNet<float> net("net", c);
  std::mt19937_64 rng(7);
  net.init_xavier(rng);
  Image<float> x(16, 64, 64);
  fill_normal(x.data, rng);
  typename UNet<float>::Cache cache;
  const auto y = net.forward(x, &cache);
  EXPECT_EQ(y.height, 64);
  EXPECT_EQ(cache.encoder.back().height, 2);
}

TEST(UNet, ZeroParametersGiveAZeroImage) {
  UNetConfig c;
  c.base_width = 4;
  for (const auto variant : {UNetVariant::kDilated, UNetVariant::kStrided}) {
    c.variant = variant;
    UNet<double> net("net", c);
    std::mt19937_64 rng(8);
    Image<double> x(16, 32, 32);
    fill_normal(x.data, rng);
    EXPECT_TRUE(net.forward(x).data.isZero(0));
  }
}

TEST(UNet, GradientsMatchFiniteDifferences) {
  for (const auto variant : {UNetVariant::kDilated, UNetVariant::kStrided}) {
    UNetConfig c;
    c.in_channels = 3;
    c.base_width = 2;
    c.max_width = 4;
    c.depth = 3;
    c.variant = variant;
    UNet<double> net("net", c);
    std::mt19937_64 rng(9);
    net.init_xavier(rng);
    Image<double> x(3, 16, 16);
    fill_normal(x.data, rng);
    Image<double> probe(3, 16, 16);
    fill_normal(probe.data, rng);
    auto loss = [&] { return net.forward(x).data.cwiseProduct(probe.data).sum(); };
    for (auto* p : net.parameters()) p->zero_grad();
    typename UNet<double>::Cache cache;
    net.forward(x, &cache);
    const auto gx = net.backward(cache, probe, true);
    EXPECT_LE(check_gradients(net.parameters(), loss, 6, 10).worst_relative_error, 1e-4);

    Param<double> input("x", 3, 256);
    input.value = x.data;
    input.grad = gx.data;
    auto input_loss = [&] { return Image<double>(16, 16, input.value).data.size() ? [&] {
      Image<double> xi(16, 16, input.value);
      return net.forward(xi).data.cwiseProduct(probe.data).sum();
    }() : 0.0; };
    EXPECT_LE(check_gradients({&input}, input_loss, 30, 11).worst_relative_error, 1e-4);
  }
}

TEST(Erosion, RadiusZeroBlanksExactlyTheCoveredPixels) {
  std::mt19937_64 rng(12);
  Image<double> frame(3, 6, 7);
  fill_normal(frame.data, rng);
  Mask m = Mask::Constant(42, false);
  m(3) = m(17) = m(40) = true;
  const auto out = erode_background(frame, m, 0);
  for (Index p = 0; p < 42; ++p)
    for (int c = 0; c < 3; ++c) EXPECT_EQ(out.data(c, p), m(p) ? 0.0 : frame.data(c, p));
}

TEST(Erosion, EmptyCoverageLeavesTheFrame) {
  std::mt19937_64 rng(13);
  Image<double> frame(3, 6, 7);
  fill_normal(frame.data, rng);
  EXPECT_EQ(erode_background(frame, Mask::Constant(42, false), 5).data, frame.data);
}

TEST(Erosion, SinglePixelGrowsIntoASquare) {
  Image<double> frame(3, 9, 9);
  frame.data.setOnes();
  Mask m = Mask::Constant(81, false);
  m(4 * 9 + 4) = true;
  const auto out = erode_background(frame, m, 2);
  for (int y = 0; y < 9; ++y)
    for (int x = 0; x < 9; ++x) {
      const bool blank = std::abs(y - 4) <= 2 && std::abs(x - 4) <= 2;
      EXPECT_EQ(out.at(1, y, x), blank ? 0.0 : 1.0) << x << "," << y;
    }
}

TEST(Erosion, DefaultRadiusScalesWithResolution) {
  EXPECT_EQ(default_erosion_radius(512), 8);
  EXPECT_EQ(default_erosion_radius(256), 4);
  EXPECT_EQ(default_erosion_radius(64), 1);
  EXPECT_EQ(default_erosion_radius(16), 1);
}

TEST(RendererConfig, JsonRoundTripAndValidation) {
  RendererConfig c;
  c.base_width = 8;
  c.variant = UNetVariant::kStrided;
  c.erosion_radius = 3;
  const auto back = RendererConfig::from_json(c.to_json());
  EXPECT_EQ(back.to_json(), c.to_json());
  auto j = c.to_json();
  j["colour"] = 1;
  EXPECT_THROW(RendererConfig::from_json(j), IncompatibleCheckpoint);
}

TEST(NeuralRenderer, ForwardProducesImagesAtTheUvResolution) {
  RendererConfig c;
  c.texture_size = 16;
  c.texture_channels = 4;
  c.base_width = 2;
  c.depth = 3;
  c.erosion_radius = 1;
  NeuralRenderer<float> r(c);
  r.init(3);
  const auto basis = demo_basis();
  const auto verts = reconstruct_vertices(basis, VectorX<double>::Zero(basis.shape_dim()).eval(),
                                          VectorX<double>::Zero(basis.expression_dim()).eval());
  CameraPose pose;
  pose.translation = Eigen::Vector3d(0, 0, 500);
  const auto uv = rasterize(verts, basis.triangles, basis.uv, pose, 24, 24);
  Image<float> bg(3, 24, 24);
  bg.data.setConstant(0.5f);
  const auto out = r.forward(uv, bg);
  EXPECT_EQ(out.features.channels(), 4);
  EXPECT_EQ(out.interior.channels(), 3);
  EXPECT_EQ(out.final_image.height, 24);
  EXPECT_TRUE(out.final_image.data.allFinite());
  // The eroded background is blank over the face.
  const Mask cov = uv.coverage();
  for (Index p = 0; p < cov.size(); ++p)
    if (cov(p)) {
      EXPECT_EQ(out.eroded.data(0, p), 0.0f);
    }
}

TEST(NeuralRenderer, EndToEndGradientsMatchFiniteDifferences) {
  RendererConfig c;
  c.texture_size = 8;
  c.texture_channels = 3;
  c.base_width = 2;
  c.max_width = 4;
  c.depth = 2;
  c.erosion_radius = 1;
  NeuralRenderer<double> r(c);
  r.init(4);
  // Zero biases put every uncovered pixel on the leaky-ReLU kink.
  std::mt19937_64 bias_rng(40);
  for (auto* p : r.parameters())
    if (p->name.ends_with(".bias")) fill_normal(p->value, bias_rng, 0.1);
  const auto basis = demo_basis();
  const auto verts = reconstruct_vertices(basis, VectorX<double>::Zero(basis.shape_dim()).eval(),
                                          VectorX<double>::Zero(basis.expression_dim()).eval());
  CameraPose pose;
  pose.translation = Eigen::Vector3d(0, 0, 500);
  const auto uv = rasterize(verts, basis.triangles, basis.uv, pose, 12, 12);
  std::mt19937_64 rng(5);
  std::uniform_real_distribution<double> unit(0, 1);
  Image<double> ref(3, 12, 12);
  for (Index i = 0; i < ref.data.size(); ++i) ref.data.data()[i] = unit(rng);
  const Mask interior = uv.coverage();
  const GradientPerceptual<double> perceptual;
  auto loss = [&] {
    const auto out = r.forward(uv, ref);
    return rendering_loss(out.final_image, out.interior, ref, interior, perceptual).total;
  };
  r.zero_grad();
  typename NeuralRenderer<double>::Cache cache;
  const auto out = r.forward(uv, ref, &cache);
  const auto l = rendering_loss(out.final_image, out.interior, ref, interior, perceptual, true);
  r.backward(cache, l.grad_final, l.grad_intermediate);
  EXPECT_LE(check_gradients(r.parameters(), loss, 6, 6, 1e-6).worst_relative_error, 1e-3);
}
