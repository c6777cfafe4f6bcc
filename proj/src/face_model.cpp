#include "reenact/face_model.hpp"

#include "reenact/binary_io.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numbers>
#include <random>

namespace reenact {

template <typename Scalar>
void validate(const FaceBasis<Scalar>& basis) {
  const Index rows = basis.mean.size();
  require(rows >= 3 && rows % 3 == 0, "face basis mean must hold V >= 1 vertices");
  require(basis.shape_basis.rows() == rows, "shape basis rows do not match the mean");
  require(basis.expression_basis.rows() == rows, "expression basis rows do not match the mean");
  require(basis.mean.allFinite() && basis.shape_basis.allFinite() && basis.expression_basis.allFinite(),
          "face basis contains non-finite values");
  require(basis.mouth_mask.empty() || static_cast<Index>(basis.mouth_mask.size()) == basis.vertex_count(),
          "mouth mask length does not match vertex count");
  if (basis.triangles.rows() > 0) {
    require(basis.uv.rows() == basis.vertex_count(), "texture coordinates must cover every vertex");
    require(basis.triangles.minCoeff() >= 0 && basis.triangles.maxCoeff() < basis.vertex_count(),
            "triangle index out of range");
  }
}

template <typename Scalar>
Vertices<Scalar> reconstruct_vertices(const FaceBasis<Scalar>& basis, const VectorX<Scalar>& alpha,
                                      const VectorX<Scalar>& delta) {
  require(alpha.size() == basis.shape_dim(), "shape coefficient count " + std::to_string(alpha.size()) +
                                                 " does not match basis (" + std::to_string(basis.shape_dim()) + ")");
  require(delta.size() == basis.expression_dim(), "expression coefficient count " + std::to_string(delta.size()) +
                                                      " does not match basis (" +
                                                      std::to_string(basis.expression_dim()) + ")");
  VectorX<Scalar> flat = basis.mean;
  if (alpha.size() > 0) flat.noalias() += basis.shape_basis * alpha;
  if (delta.size() > 0) flat.noalias() += basis.expression_basis * delta;
  return Eigen::Map<const Vertices<Scalar>>(flat.data(), basis.vertex_count(), 3);
}

template <typename Scalar>
VectorX<Scalar> map_audio_expression(const VectorX<Scalar>& code, const MatrixX<Scalar>& mapping) {
  require(mapping.rows() == kExpressionDim && mapping.cols() == kCodeDim, "person mapping must be 76x32");
  require(code.size() == kCodeDim, "audio expression code must have 32 entries");
  return mapping * code;
}

MappingFit fit_person_mapping(const MatrixX<double>& codes, const MatrixX<double>& deltas, double ridge) {
  require(codes.rows() >= 1, "mapping fit needs at least one sample");
  require(codes.rows() == deltas.rows(), "codes and deltas must have the same sample count");
  require(codes.cols() == kCodeDim, "codes must be N x 32");
  require(deltas.cols() == kExpressionDim, "deltas must be N x 76");
  require(ridge >= 0 && std::isfinite(ridge), "ridge must be a nonnegative finite number");
  require(codes.allFinite() && deltas.allFinite(), "mapping fit inputs must be finite");

  MappingFit fit;
  const Eigen::CompleteOrthogonalDecomposition<MatrixX<double>> cod(codes);
  fit.rank = cod.rank();
  if (ridge == 0.0) {
    fit.matrix = cod.solve(deltas).transpose();
    fit.rank_deficient = fit.rank < kCodeDim;
  } else {
    MatrixX<double> normal = codes.transpose() * codes;
    normal.diagonal().array() += ridge;
    fit.matrix = normal.ldlt().solve(codes.transpose() * deltas).transpose();
  }
  fit.residual = (codes * fit.matrix.transpose() - deltas).squaredNorm();
  return fit;
}

FaceBasis<double> demo_basis(std::uint64_t seed, Index shape_dim, Index expression_dim) {
  constexpr int kCols = 25;
  constexpr int kRows = 20;
  constexpr Index kVertices = kCols * kRows;
  constexpr double kWidthMm = 140.0;
  constexpr double kHeightMm = 180.0;
  constexpr double kDepthMm = 45.0;
  constexpr double kMouthU = 0.5, kMouthV = 0.74, kMouthRu = 0.22, kMouthRv = 0.11;

  std::mt19937_64 rng(seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  std::uniform_real_distribution<double> uniform(0.0, 1.0);

  FaceBasis<double> basis;
  basis.mean.resize(3 * kVertices);
  basis.uv.resize(kVertices, 2);
  basis.mouth_mask.assign(kVertices, 0);
  for (int i = 0; i < kRows; ++i) {
    for (int j = 0; j < kCols; ++j) {
      const Index v = i * kCols + j;
      const double u = static_cast<double>(j) / (kCols - 1);
      const double w = static_cast<double>(i) / (kRows - 1);
      const double cu = 2 * u - 1, cw = 2 * w - 1;
      basis.mean.segment<3>(3 * v) << (u - 0.5) * kWidthMm, (w - 0.5) * kHeightMm,
          -kDepthMm * (1.0 - 0.6 * cu * cu - 0.4 * cw * cw);
      basis.uv.row(v) << static_cast<float>(u), static_cast<float>(w);
      const double mu = (u - kMouthU) / kMouthRu, mv = (w - kMouthV) / kMouthRv;
      basis.mouth_mask[static_cast<std::size_t>(v)] = (mu * mu + mv * mv <= 1.0) ? 1 : 0;
    }
  }

  basis.triangles.resize(2 * (kRows - 1) * (kCols - 1), 3);
  Index t = 0;
  for (int i = 0; i + 1 < kRows; ++i) {
    for (int j = 0; j + 1 < kCols; ++j) {
      const int a = i * kCols + j, b = a + 1, c = a + kCols, d = c + 1;
      basis.triangles.row(t++) << a, b, c;
      basis.triangles.row(t++) << b, d, c;
    }
  }

  auto random_direction = [&](double wx, double wy, double wz) {
    Eigen::Vector3d dir(wx * normal(rng), wy * normal(rng), wz * normal(rng));
    return Eigen::Vector3d(dir.normalized());
  };

  // Smooth, head-wide identity modes.
  basis.shape_basis.resize(3 * kVertices, shape_dim);
  for (Index s = 0; s < shape_dim; ++s) {
    const double kx = std::floor(uniform(rng) * 4), ky = std::floor(uniform(rng) * 4);
    const double px = uniform(rng) * 2 * std::numbers::pi, py = uniform(rng) * 2 * std::numbers::pi;
    const Eigen::Vector3d dir = random_direction(1.0, 1.0, 1.0);
    const double amplitude = 3.0 / (1.0 + 0.1 * static_cast<double>(s));
    for (Index v = 0; v < kVertices; ++v) {
      const double u = basis.uv(v, 0), w = basis.uv(v, 1);
      const double g = std::cos(std::numbers::pi * kx * u + px) * std::cos(std::numbers::pi * ky * w + py);
      basis.shape_basis.block<3, 1>(3 * v, s) = amplitude * g * dir;
    }
  }

  // Expression modes: Gaussian bumps concentrated around the mouth.
  basis.expression_basis.resize(3 * kVertices, expression_dim);
  for (Index e = 0; e < expression_dim; ++e) {
    const double cu = std::clamp(kMouthU + 0.12 * normal(rng), 0.15, 0.85);
    const double cv = std::clamp(kMouthV + 0.08 * normal(rng), 0.45, 0.95);
    const double radius = 0.06 + 0.08 * uniform(rng);
    const Eigen::Vector3d dir = random_direction(0.5, 1.0, 0.7);
    for (Index v = 0; v < kVertices; ++v) {
      const double du = basis.uv(v, 0) - cu, dv = basis.uv(v, 1) - cv;
      const double g = std::exp(-(du * du + dv * dv) / (2 * radius * radius));
      basis.expression_basis.block<3, 1>(3 * v, e) = g * dir;
    }
  }
  return basis;
}

FaceBasis<double> load_face_basis(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FormatError("cannot open face basis " + path.string());
  io::Reader r(in, path.string());
  r.expect_magic("PFBS");
  if (const auto version = r.u32(); version != 1) r.fail("unsupported version " + std::to_string(version));
  const auto vertices = r.u32(), shape_dim = r.u32(), expression_dim = r.u32();
  if (vertices == 0) r.fail("vertex count must be positive");
  if (static_cast<std::uint64_t>(vertices) * 3 * (1 + shape_dim + expression_dim) > (1ull << 30))
    r.fail("basis too large");
  FaceBasis<double> basis;
  const Index rows = 3 * static_cast<Index>(vertices);
  basis.mean.resize(rows);
  basis.shape_basis.resize(rows, shape_dim);
  basis.expression_basis.resize(rows, expression_dim);
  for (Index i = 0; i < rows; ++i) basis.mean(i) = r.f32();
  for (Index i = 0; i < rows; ++i)
    for (Index k = 0; k < basis.shape_basis.cols(); ++k) basis.shape_basis(i, k) = r.f32();
  for (Index i = 0; i < rows; ++i)
    for (Index k = 0; k < basis.expression_basis.cols(); ++k) basis.expression_basis(i, k) = r.f32();
  basis.mouth_mask.resize(vertices);
  for (auto& flag : basis.mouth_mask) flag = r.u8();
  const auto triangle_count = r.u32();
  basis.triangles.resize(triangle_count, 3);
  for (Index t = 0; t < basis.triangles.rows(); ++t)
    for (int k = 0; k < 3; ++k) basis.triangles(t, k) = static_cast<int>(r.u32());
  if (triangle_count > 0) {
    basis.uv.resize(vertices, 2);
    for (Index v = 0; v < basis.uv.rows(); ++v) basis.uv.row(v) << r.f32(), r.f32();
  }
  if (!r.at_end()) r.fail("trailing bytes");
  try {
    validate(basis);
  } catch (const InvalidInput& e) {
    r.fail(e.what());
  }
  return basis;
}

void save_face_basis(const std::filesystem::path& path, const FaceBasis<double>& basis) {
  validate(basis);
  io::write_atomically(path, [&](std::ostream& out) {
    io::Writer w(out);
    w.magic("PFBS");
    w.u32(1);
    w.u32(static_cast<std::uint32_t>(basis.vertex_count()));
    w.u32(static_cast<std::uint32_t>(basis.shape_dim()));
    w.u32(static_cast<std::uint32_t>(basis.expression_dim()));
    for (Index i = 0; i < basis.mean.size(); ++i) w.f32(static_cast<float>(basis.mean(i)));
    for (Index i = 0; i < basis.shape_basis.rows(); ++i)
      for (Index k = 0; k < basis.shape_basis.cols(); ++k) w.f32(static_cast<float>(basis.shape_basis(i, k)));
    for (Index i = 0; i < basis.expression_basis.rows(); ++i)
      for (Index k = 0; k < basis.expression_basis.cols(); ++k)
        w.f32(static_cast<float>(basis.expression_basis(i, k)));
    for (Index v = 0; v < basis.vertex_count(); ++v)
      w.u8(basis.mouth_mask.empty() ? 0 : basis.mouth_mask[static_cast<std::size_t>(v)]);
    w.u32(static_cast<std::uint32_t>(basis.triangles.rows()));
    for (Index t = 0; t < basis.triangles.rows(); ++t)
      for (int k = 0; k < 3; ++k) w.u32(static_cast<std::uint32_t>(basis.triangles(t, k)));
    if (basis.triangles.rows() > 0)
      for (Index v = 0; v < basis.uv.rows(); ++v) {
        w.f32(basis.uv(v, 0));
        w.f32(basis.uv(v, 1));
      }
  });
}

template void validate(const FaceBasis<float>&);
template void validate(const FaceBasis<double>&);
template Vertices<float> reconstruct_vertices(const FaceBasis<float>&, const VectorX<float>&, const VectorX<float>&);
template Vertices<double> reconstruct_vertices(const FaceBasis<double>&, const VectorX<double>&,
                                               const VectorX<double>&);
template VectorX<float> map_audio_expression(const VectorX<float>&, const MatrixX<float>&);
template VectorX<double> map_audio_expression(const VectorX<double>&, const MatrixX<double>&);

}  // namespace reenact
