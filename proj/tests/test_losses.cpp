#include "reenact/losses.hpp"

#include "test_support.hpp"

#include <cmath>

using namespace reenact;
using reenact::testing::check_gradients;
using reenact::testing::fill_normal;

namespace {

Vertices<double> random_vertices(Index n, std::mt19937_64& rng, double scale = 1.0) {
  Vertices<double> v(n, 3);
  fill_normal(v, rng, scale);
  return v;
}

Vertices<double> row(double x, double y, double z) {
  Vertices<double> v(1, 3);
  v << x, y, z;
  return v;
}

FrameTriplet<double> zero_reference(const std::array<Vertices<double>, 3>& predicted) {
  FrameTriplet<double> t;
  t.predicted = predicted;
  for (auto& r : t.reference) r = Vertices<double>::Zero(predicted[0].rows(), 3);
  return t;
}

Image<double> random_unit_image(int h, int w, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> u(0.0, 1.0);
  Image<double> img(3, h, w);
  for (Index i = 0; i < img.data.size(); ++i) img.data.data()[i] = u(rng);
  return img;
}

}  // namespace

TEST(VertexWeights, MouthWeighsTenTimesMoreAndSumsToOne) {
  const std::vector<std::uint8_t> mouth{0, 1, 0, 0, 1};
  const auto w = make_vertex_weights<double>(mouth);
  EXPECT_NEAR(w.sum(), 1.0, 1e-15);
  EXPECT_NEAR(w(1) / w(0), 10.0, 1e-12);
  EXPECT_NEAR(w(0), 1.0 / 23.0, 1e-15);
  const auto uniform = make_vertex_weights<double>(std::vector<std::uint8_t>(4, 0));
  EXPECT_TRUE(uniform.isApproxToConstant(0.25));
}

TEST(WeightedRms, IdentityGivesZero) {
  std::mt19937_64 rng(1);
  const auto v = random_vertices(7, rng);
  EXPECT_EQ(weighted_rms<double>(v, v, VectorX<double>::Constant(7, 1.0 / 7)), 0.0);
}

TEST(WeightedRms, SingleOffsetVertexAmongNine) {
  Vertices<double> ref = Vertices<double>::Zero(9, 3), v = ref;
  v(4, 0) = 3.0;
  // sqrt((1/9) * 9 / 1) = 1 mm
  EXPECT_NEAR(weighted_rms<double>(v, ref, VectorX<double>::Constant(9, 1.0 / 9)), 1.0, 1e-15);
}

TEST(WeightedRms, IsPositivelyHomogeneous) {
  std::mt19937_64 rng(2);
  const auto ref = random_vertices(6, rng);
  const auto off = random_vertices(6, rng);
  VectorX<double> w(6);
  w << 1, 2, 3, 1, 1, 10;
  w /= w.sum();
  const Vertices<double> v1 = ref + off, v2 = ref + 2 * off;
  EXPECT_NEAR(weighted_rms<double>(v2, ref, w), 2 * weighted_rms<double>(v1, ref, w), 1e-12);
}

TEST(TemporalLoss, PerfectPredictionIsZero) {
  std::mt19937_64 rng(3);
  FrameTriplet<double> t;
  for (int k = 0; k < 3; ++k) t.predicted[k] = t.reference[k] = random_vertices(4, rng);
  EXPECT_EQ(temporal_loss<double>(t, VectorX<double>::Constant(4, 0.25)), 0.0);
}

TEST(TemporalLoss, ConstantOffsetCancels) {
  std::mt19937_64 rng(4);
  const auto c = random_vertices(4, rng);
  FrameTriplet<double> t;
  for (int k = 0; k < 3; ++k) {
    t.reference[k] = random_vertices(4, rng);
    t.predicted[k] = t.reference[k] + c;
  }
  EXPECT_NEAR(temporal_loss<double>(t, VectorX<double>::Constant(4, 0.25)), 0.0, 1e-14);
}

TEST(TemporalLoss, SingleVertexHandEvaluation) {
  const auto t = zero_reference({row(1, 0, 0), row(2, 2, 0), row(0, 0, 1)});
  const VectorX<double> w = VectorX<double>::Ones(1);
  // |(1,2,0)| + |(-2,-2,1)| + |(-1,0,1)| = sqrt(5) + 3 + sqrt(2)
  EXPECT_NEAR(temporal_loss<double>(t, w), 6.650281539872885, 1e-12);
}

TEST(ExpressionLoss, PerfectPredictionIsZero) {
  std::mt19937_64 rng(5);
  FrameTriplet<double> t;
  for (int k = 0; k < 3; ++k) t.predicted[k] = t.reference[k] = random_vertices(4, rng);
  EXPECT_EQ(expression_loss<double>(t, VectorX<double>::Constant(4, 0.25)), 0.0);
}

TEST(ExpressionLoss, ZeroLambdaIsTheCenterFrameRms) {
  std::mt19937_64 rng(6);
  FrameTriplet<double> t;
  for (int k = 0; k < 3; ++k) {
    t.predicted[k] = random_vertices(5, rng);
    t.reference[k] = random_vertices(5, rng);
  }
  const VectorX<double> w = VectorX<double>::Constant(5, 0.2);
  EXPECT_DOUBLE_EQ(expression_loss<double>(t, w, 0.0), weighted_rms<double>(t.predicted[1], t.reference[1], w));
}

TEST(ExpressionLoss, SingleVertexWithDefaultLambda) {
  const auto t = zero_reference({row(1, 0, 0), row(2, 2, 0), row(0, 0, 1)});
  // sqrt(8) + 20 * (sqrt(5) + 3 + sqrt(2))
  EXPECT_NEAR(expression_loss<double>(t, VectorX<double>::Ones(1)), 135.83405792221054, 1e-10);
}

TEST(ExpressionLoss, ResidualGradientsMatchFiniteDifferences) {
  std::mt19937_64 rng(7);
  std::vector<Param<double>> r;
  for (int k = 0; k < 3; ++k) {
    r.emplace_back("r" + std::to_string(k), 6, 3);
    fill_normal(r.back().value, rng);
  }
  VectorX<double> w(6);
  w << 1, 1, 10, 10, 1, 1;
  w /= w.sum();
  auto residuals = [&] {
    std::array<Vertices<double>, 3> out;
    for (int k = 0; k < 3; ++k) out[k] = r[k].value;
    return out;
  };
  std::array<Vertices<double>, 3> grads;
  expression_loss_residuals<double>(residuals(), w, 20.0, &grads);
  for (int k = 0; k < 3; ++k) r[k].grad = grads[k];
  const auto result = check_gradients({&r[0], &r[1], &r[2]},
                                      [&] { return expression_loss_residuals<double>(residuals(), w, 20.0); }, 18, 8);
  EXPECT_LE(result.worst_relative_error, 1e-6);
}

TEST(RenderingLoss, EqualImagesGiveZero) {
  std::mt19937_64 rng(9);
  const auto ref = random_unit_image(8, 8, rng);
  const Mask mask = Mask::Constant(64, true);
  for (const char* name : {"none", "gradient"}) {
    const auto loss = rendering_loss(ref, ref, ref, mask, *make_perceptual<double>(name));
    EXPECT_EQ(loss.total, 0.0) << name;
  }
}

TEST(RenderingLoss, ConstantOffsetOfTheFinalImage) {
  std::mt19937_64 rng(10);
  auto ref = random_unit_image(6, 10, rng);
  Image<double> final_image = ref;
  final_image.data.array() += 0.1;
  const auto loss = rendering_loss(final_image, ref, ref, Mask::Constant(60, true), NullPerceptual<double>());
  EXPECT_NEAR(loss.total, 0.1, 1e-12);
  // The gradient distance ignores a constant shift.
  const auto with_gradient = rendering_loss(final_image, ref, ref, Mask::Constant(60, true), GradientPerceptual<double>());
  EXPECT_NEAR(with_gradient.total, 0.1, 1e-12);
}

TEST(RenderingLoss, ErrorsOutsideTheMaskDoNotCountForTheInterior) {
  std::mt19937_64 rng(11);
  const auto ref = random_unit_image(4, 4, rng);
  Mask mask = Mask::Constant(16, false);
  mask.head(8).setConstant(true);
  Image<double> intermediate = ref;
  intermediate.data.rightCols(8).array() += 0.5;
  const auto loss = rendering_loss(ref, intermediate, ref, mask, NullPerceptual<double>());
  EXPECT_EQ(loss.interior_l1, 0.0);
  EXPECT_FALSE(loss.mask_empty);
}

TEST(RenderingLoss, EmptyMaskIsFlagged) {
  std::mt19937_64 rng(12);
  const auto ref = random_unit_image(4, 4, rng);
  auto other = random_unit_image(4, 4, rng);
  const auto loss = rendering_loss(ref, other, ref, Mask::Constant(16, false), NullPerceptual<double>());
  EXPECT_TRUE(loss.mask_empty);
  EXPECT_EQ(loss.interior_l1, 0.0);
}

TEST(RenderingLoss, RejectsReferencesOutsideTheUnitRange) {
  std::mt19937_64 rng(13);
  auto ref = random_unit_image(4, 4, rng);
  ref.data(0, 3) = 1.5;
  EXPECT_THROW(rendering_loss(ref, ref, ref, Mask::Constant(16, true), NullPerceptual<double>()), InvalidInput);
}

TEST(RenderingLoss, GradientsMatchFiniteDifferences) {
  std::mt19937_64 rng(14);
  const auto ref = random_unit_image(8, 8, rng);
  Mask mask = Mask::Constant(64, false);
  for (Index p = 0; p < 64; p += 3) mask(p) = true;
  Param<double> final_p("final", 3, 64), inter_p("intermediate", 3, 64);
  fill_normal(final_p.value, rng, 0.5);
  fill_normal(inter_p.value, rng, 0.5);
  const GradientPerceptual<double> perceptual;
  auto loss = [&](bool grads) {
    return rendering_loss(Image<double>(8, 8, final_p.value), Image<double>(8, 8, inter_p.value), ref, mask, perceptual,
                          grads);
  };
  const auto with = loss(true);
  final_p.grad = with.grad_final.data;
  inter_p.grad = with.grad_intermediate.data;
  const auto result = check_gradients({&final_p, &inter_p}, [&] { return loss(false).total; }, 40, 15, 1e-7);
  EXPECT_LE(result.worst_relative_error, 1e-4);
}

TEST(Perceptual, FactoryKnowsTwoExtractors) {
  EXPECT_EQ(make_perceptual<float>("none")->name(), "none");
  EXPECT_EQ(make_perceptual<float>("gradient")->name(), "gradient");
  EXPECT_THROW(make_perceptual<float>("vgg"), InvalidInput);
}
