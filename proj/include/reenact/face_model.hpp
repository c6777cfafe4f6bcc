#pragma once

#include "reenact/common.hpp"

#include <cstdint>
#include <filesystem>
#include <vector>

namespace reenact {

/// V x 3 vertex positions in millimeters. Row-major, so the storage is the
/// interleaved 3V vector (x0 y0 z0 x1 ...).
template <typename Scalar>
using Vertices = Eigen::Matrix<Scalar, Eigen::Dynamic, 3, Eigen::RowMajor>;

using Triangles = Eigen::Matrix<int, Eigen::Dynamic, 3, Eigen::RowMajor>;
using TexCoords = Eigen::Matrix<float, Eigen::Dynamic, 2, Eigen::RowMajor>;

/// Linear blendshape model: mean + shape_basis * alpha + expression_basis * delta.
///
/// Both bases are 3V x K matrices whose rows follow the interleaved vertex
/// layout. The optional topology (triangles and per-vertex texture
/// coordinates) is what the rasterizer consumes.
template <typename Scalar>
struct FaceBasis {
  VectorX<Scalar> mean;
  MatrixX<Scalar> shape_basis;
  MatrixX<Scalar> expression_basis;
  std::vector<std::uint8_t> mouth_mask;
  Triangles triangles;
  TexCoords uv;

  Index vertex_count() const { return mean.size() / 3; }
  Index shape_dim() const { return shape_basis.cols(); }
  Index expression_dim() const { return expression_basis.cols(); }

  template <typename Other>
  FaceBasis<Other> cast() const {
    return {mean.template cast<Other>(), shape_basis.template cast<Other>(), expression_basis.template cast<Other>(),
            mouth_mask, triangles, uv};
  }
};

/// Throws InvalidInput on inconsistent dimensions or non-finite values.
template <typename Scalar>
void validate(const FaceBasis<Scalar>& basis);

template <typename Scalar>
Vertices<Scalar> reconstruct_vertices(const FaceBasis<Scalar>& basis, const VectorX<Scalar>& alpha,
                                      const VectorX<Scalar>& delta);

/// delta = mapping * code, with mapping 76 x 32 and code 32.
template <typename Scalar>
VectorX<Scalar> map_audio_expression(const VectorX<Scalar>& code, const MatrixX<Scalar>& mapping);

struct MappingFit {
  MatrixX<double> matrix;  // 76 x 32
  Index rank = 0;
  bool rank_deficient = false;
  double residual = 0;  // sum of squared residuals
};

/// Least-squares fit of M minimizing sum_i |M z_i - d_i|^2 + ridge |M|_F^2.
/// codes is N x 32 and deltas N x 76 (one sample per row). With ridge = 0 a
/// rank-deficient system yields the minimum-Frobenius-norm solution and sets
/// rank_deficient.
MappingFit fit_person_mapping(const MatrixX<double>& codes, const MatrixX<double>& deltas, double ridge = 0.0);

/// Deterministic demo face: a 25 x 20 vertex grid bent into a face-sized cap
/// (~140 x 180 mm) with a labeled mouth region, smooth shape modes and
/// mouth-localized expression modes.
FaceBasis<double> demo_basis(std::uint64_t seed = 7, Index shape_dim = kShapeDim,
                             Index expression_dim = kExpressionDim);

/// Basis file (little-endian): "PFBS", u32 version=1, u32 V, S, E; float32
/// mean[3V], shape[3V*S], expression[3V*E] (row-major); u8 mouth[V];
/// u32 T, u32 triangles[3T], float32 uv[2V] (uv present only when T > 0).
FaceBasis<double> load_face_basis(const std::filesystem::path& path);
void save_face_basis(const std::filesystem::path& path, const FaceBasis<double>& basis);

}  // namespace reenact
