#include "reenact/face_model.hpp"

#include "test_support.hpp"

using namespace reenact;
using reenact::testing::fill_normal;
using reenact::testing::TempDir;

namespace {

FaceBasis<double> random_basis(Index v, Index s, Index e, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  FaceBasis<double> b;
  b.mean.resize(3 * v);
  b.shape_basis.resize(3 * v, s);
  b.expression_basis.resize(3 * v, e);
  fill_normal(b.mean, rng, 50.0);
  fill_normal(b.shape_basis, rng);
  fill_normal(b.expression_basis, rng);
  return b;
}

}  // namespace

TEST(Reconstruct, ZeroCoefficientsGiveTheMean) {
  const auto b = random_basis(5, 2, 3, 1);
  const auto v = reconstruct_vertices(b, VectorX<double>::Zero(2).eval(), VectorX<double>::Zero(3).eval());
  for (Index i = 0; i < 5; ++i)
    for (int k = 0; k < 3; ++k) EXPECT_EQ(v(i, k), b.mean(3 * i + k));
}

TEST(Reconstruct, UnitExpressionAddsItsColumn) {
  const auto b = random_basis(5, 2, 3, 2);
  for (Index k = 0; k < 3; ++k) {
    const auto v = reconstruct_vertices(b, VectorX<double>::Zero(2).eval(), VectorX<double>::Unit(3, k).eval());
    for (Index i = 0; i < 5; ++i)
      for (int c = 0; c < 3; ++c) EXPECT_DOUBLE_EQ(v(i, c), b.mean(3 * i + c) + b.expression_basis(3 * i + c, k));
  }
}

TEST(Reconstruct, MatchesExplicitSummation) {
  const auto b = random_basis(5, 2, 3, 3);
  const VectorX<double> alpha = (VectorX<double>(2) << 0.7, -1.2).finished();
  const VectorX<double> delta = (VectorX<double>(3) << -0.3, 0.5, 2.0).finished();
  const auto v = reconstruct_vertices(b, alpha, delta);
  for (Index i = 0; i < 5; ++i)
    for (int c = 0; c < 3; ++c) {
      double expected = b.mean(3 * i + c);
      for (Index s = 0; s < 2; ++s) expected += b.shape_basis(3 * i + c, s) * alpha(s);
      for (Index e = 0; e < 3; ++e) expected += b.expression_basis(3 * i + c, e) * delta(e);
      EXPECT_NEAR(v(i, c), expected, 1e-12);
    }
}

TEST(Reconstruct, RejectsWrongCoefficientCounts) {
  const auto b = random_basis(5, 2, 3, 4);
  EXPECT_THROW(reconstruct_vertices(b, VectorX<double>::Zero(3).eval(), VectorX<double>::Zero(3).eval()), InvalidInput);
  EXPECT_THROW(reconstruct_vertices(b, VectorX<double>::Zero(2).eval(), VectorX<double>::Zero(4).eval()), InvalidInput);
}

TEST(AudioExpressionMap, ZeroCodeGivesZeroDelta) {
  std::mt19937_64 rng(1);
  MatrixX<double> m(kExpressionDim, kCodeDim);
  fill_normal(m, rng);
  EXPECT_TRUE(map_audio_expression(VectorX<double>::Zero(kCodeDim).eval(), m).isZero(0));
}

TEST(AudioExpressionMap, IdentityBlockSelectsTheCode) {
  MatrixX<double> m = MatrixX<double>::Zero(kExpressionDim, kCodeDim);
  m.topRows(kCodeDim).setIdentity();
  const auto d = map_audio_expression(VectorX<double>::Unit(kCodeDim, 3).eval(), m);
  EXPECT_EQ(d, VectorX<double>::Unit(kExpressionDim, 3));
}

TEST(AudioExpressionMap, MatchesDotProducts) {
  std::mt19937_64 rng(2);
  MatrixX<double> m(kExpressionDim, kCodeDim);
  VectorX<double> z(kCodeDim);
  fill_normal(m, rng);
  fill_normal(z, rng);
  const auto d = map_audio_expression(z, m);
  for (Index r = 0; r < kExpressionDim; ++r) {
    double dot = 0;
    for (Index c = 0; c < kCodeDim; ++c) dot += m(r, c) * z(c);
    EXPECT_NEAR(d(r), dot, 1e-12);
  }
}

TEST(MappingFit, RecoversAGeneratorFromConsistentPairs) {
  std::mt19937_64 rng(3);
  MatrixX<double> m(kExpressionDim, kCodeDim), codes(64, kCodeDim);
  fill_normal(m, rng);
  fill_normal(codes, rng);
  const MatrixX<double> deltas = codes * m.transpose();
  const auto fit = fit_person_mapping(codes, deltas);
  EXPECT_LE((fit.matrix - m).cwiseAbs().maxCoeff(), 1e-8);
  EXPECT_EQ(fit.rank, kCodeDim);
  EXPECT_FALSE(fit.rank_deficient);
}

TEST(MappingFit, SingleEquationHasMinimumNormSolution) {
  std::mt19937_64 rng(4);
  VectorX<double> d(kExpressionDim);
  fill_normal(d, rng);
  const MatrixX<double> codes = VectorX<double>::Unit(kCodeDim, 0).transpose();
  const auto fit = fit_person_mapping(codes, d.transpose());
  EXPECT_LE((fit.matrix.col(0) - d).cwiseAbs().maxCoeff(), 1e-12);
  EXPECT_TRUE(fit.matrix.rightCols(kCodeDim - 1).isZero(1e-12));
  EXPECT_TRUE(fit.rank_deficient);
}

TEST(MappingFit, NoisyFitIsNoWorseThanTheTruth) {
  std::mt19937_64 rng(5);
  MatrixX<double> m(kExpressionDim, kCodeDim), codes(100, kCodeDim), noise(100, kExpressionDim);
  fill_normal(m, rng);
  fill_normal(codes, rng);
  fill_normal(noise, rng, 0.1);
  const MatrixX<double> deltas = codes * m.transpose() + noise;
  const auto fit = fit_person_mapping(codes, deltas);
  const double truth = (codes * m.transpose() - deltas).squaredNorm();
  EXPECT_LE(fit.residual, truth);
  EXPECT_NEAR(fit.residual, (codes * fit.matrix.transpose() - deltas).squaredNorm(), 1e-9 * truth);
}

TEST(MappingFit, ZeroDeltasGiveZeroMapping) {
  std::mt19937_64 rng(6);
  MatrixX<double> codes(40, kCodeDim);
  fill_normal(codes, rng);
  const MatrixX<double> zeros = MatrixX<double>::Zero(40, kExpressionDim);
  EXPECT_TRUE(fit_person_mapping(codes, zeros, 0.5).matrix.isZero(0));
  EXPECT_TRUE(fit_person_mapping(codes.topRows(10), zeros.topRows(10)).matrix.isZero(0));
}

TEST(MappingFit, FewerSamplesThanCodeDimsSetTheWarning) {
  std::mt19937_64 rng(7);
  MatrixX<double> codes(20, kCodeDim), deltas(20, kExpressionDim);
  fill_normal(codes, rng);
  fill_normal(deltas, rng);
  const auto fit = fit_person_mapping(codes, deltas);
  EXPECT_TRUE(fit.rank_deficient);
  EXPECT_EQ(fit.rank, 20);
  // The minimum-norm solution interpolates the samples exactly.
  EXPECT_LE(fit.residual, 1e-18 * deltas.squaredNorm() + 1e-20);
  // and lies in the row space of the codes.
  const MatrixX<double> projector = codes.transpose() * (codes * codes.transpose()).inverse() * codes;
  EXPECT_LE((fit.matrix - fit.matrix * projector).cwiseAbs().maxCoeff(), 1e-9);
}

TEST(MappingFit, RidgeMatchesTheNormalEquations) {
  std::mt19937_64 rng(8);
  MatrixX<double> codes(50, kCodeDim), deltas(50, kExpressionDim);
  fill_normal(codes, rng);
  fill_normal(deltas, rng);
  const double ridge = 0.3;
  const MatrixX<double> gram = codes.transpose() * codes + ridge * MatrixX<double>::Identity(kCodeDim, kCodeDim);
  const MatrixX<double> expected = (gram.ldlt().solve(codes.transpose() * deltas)).transpose();
  EXPECT_LE((fit_person_mapping(codes, deltas, ridge).matrix - expected).cwiseAbs().maxCoeff(), 1e-10);
}

TEST(MappingFit, RejectsBadShapes) {
  EXPECT_THROW(fit_person_mapping(MatrixX<double>::Zero(4, 31), MatrixX<double>::Zero(4, kExpressionDim)), InvalidInput);
  EXPECT_THROW(fit_person_mapping(MatrixX<double>::Zero(4, kCodeDim), MatrixX<double>::Zero(3, kExpressionDim)),
               InvalidInput);
  EXPECT_THROW(fit_person_mapping(MatrixX<double>::Zero(4, kCodeDim), MatrixX<double>::Zero(4, kExpressionDim), -1.0),
               InvalidInput);
}

TEST(DemoBasis, HasTheDeclaredLayout) {
  const auto b = demo_basis();
  validate(b);
  EXPECT_EQ(b.vertex_count(), 500);
  EXPECT_EQ(b.shape_dim(), kShapeDim);
  EXPECT_EQ(b.expression_dim(), kExpressionDim);
  const auto mouth = std::count(b.mouth_mask.begin(), b.mouth_mask.end(), 1);
  EXPECT_GT(mouth, 0);
  EXPECT_LT(mouth, b.vertex_count());
  EXPECT_GT(b.triangles.rows(), 0);
  EXPECT_GE(b.uv.minCoeff(), 0.0f);
  EXPECT_LE(b.uv.maxCoeff(), 1.0f);
}

TEST(BasisFile, RoundTripsThroughFloat32) {
  TempDir dir;
  const auto b = demo_basis(11, 10, 12);
  save_face_basis(dir / "basis.bin", b);
  const auto back = load_face_basis(dir / "basis.bin");
  EXPECT_EQ(back.mean, b.mean.cast<float>().cast<double>());
  EXPECT_EQ(back.shape_basis, b.shape_basis.cast<float>().cast<double>());
  EXPECT_EQ(back.expression_basis, b.expression_basis.cast<float>().cast<double>());
  EXPECT_EQ(back.mouth_mask, b.mouth_mask);
  EXPECT_EQ(back.triangles, b.triangles);
  EXPECT_EQ(back.uv, b.uv);
}

TEST(BasisFile, TruncatedFileIsAFormatError) {
  TempDir dir;
  save_face_basis(dir / "basis.bin", demo_basis(11, 4, 4));
  std::filesystem::resize_file(dir / "basis.bin", 100);
  EXPECT_THROW(load_face_basis(dir / "basis.bin"), FormatError);
}
