#pragma once

#include "reenact/common.hpp"
#include "reenact/face_model.hpp"
#include "reenact/image.hpp"

#include <array>
#include <memory>
#include <string>

namespace reenact {

/// Per-vertex loss weights: mouth vertices weigh `mouth_factor`, others 1, normalized to sum 1.
template <typename Scalar>
VectorX<Scalar> make_vertex_weights(const std::vector<std::uint8_t>& mouth_mask, Scalar mouth_factor = Scalar(10));

/// Predicted and reference vertices at frames t-1, t, t+1.
template <typename Scalar>
struct FrameTriplet {
  std::array<Vertices<Scalar>, 3> predicted;
  std::array<Vertices<Scalar>, 3> reference;
};

/// sqrt(sum_i w_i |v_i - ref_i|^2 / sum_i w_i), in the vertices' unit (mm).
template <typename Scalar>
Scalar weighted_rms(const Vertices<Scalar>& v, const Vertices<Scalar>& reference, const VectorX<Scalar>& weights);

/// Weighted RMS of a residual array. When `grad` is set it receives dRMS/dresidual
/// (zero at a zero residual).
template <typename Scalar>
Scalar weighted_rms_residual(const Vertices<Scalar>& residual, const VectorX<Scalar>& weights,
                             Vertices<Scalar>* grad = nullptr);

/// Sum of weighted RMS errors of the backward, forward and central frame differences.
template <typename Scalar>
Scalar temporal_loss(const FrameTriplet<Scalar>& triplet, const VectorX<Scalar>& weights);

/// RMS(v_t - v_t*) + lambda * temporal_loss.
template <typename Scalar>
Scalar expression_loss(const FrameTriplet<Scalar>& triplet, const VectorX<Scalar>& weights, Scalar lambda = Scalar(20));

/// Expression loss from residuals r_k = predicted_k - reference_k (k = t-1, t, t+1),
/// optionally returning dL/dr_k.
template <typename Scalar>
Scalar expression_loss_residuals(const std::array<Vertices<Scalar>, 3>& residuals, const VectorX<Scalar>& weights,
                                 Scalar lambda, std::array<Vertices<Scalar>, 3>* grads = nullptr);

/// Perceptual feature distance between two RGB images.
template <typename Scalar>
class PerceptualLoss {
 public:
  virtual ~PerceptualLoss() = default;
  virtual std::string name() const = 0;
  /// Distance of `a` to `b`; adds dDistance/da into *grad_a when non-null.
  virtual Scalar evaluate(const Image<Scalar>& a, const Image<Scalar>& b, Image<Scalar>* grad_a) const = 0;
};

/// Contributes nothing.
template <typename Scalar>
class NullPerceptual final : public PerceptualLoss<Scalar> {
 public:
  std::string name() const override { return "none"; }
  Scalar evaluate(const Image<Scalar>&, const Image<Scalar>&, Image<Scalar>*) const override { return Scalar(0); }
};

/// Multi-scale image-gradient distance: at each of `levels` 2x average-pooled
/// scales, the mean absolute difference of horizontal and vertical forward
/// differences.
template <typename Scalar>
class GradientPerceptual final : public PerceptualLoss<Scalar> {
 public:
  explicit GradientPerceptual(int levels = 3) : levels_(levels) {}
  std::string name() const override { return "gradient"; }
  Scalar evaluate(const Image<Scalar>& a, const Image<Scalar>& b, Image<Scalar>* grad_a) const override;

 private:
  int levels_;
};

/// "none" or "gradient"; throws InvalidInput otherwise.
template <typename Scalar>
std::unique_ptr<PerceptualLoss<Scalar>> make_perceptual(const std::string& name);

template <typename Scalar>
struct RenderingLoss {
  Scalar total = 0;
  Scalar final_l1 = 0;     // mean |I - I*| over all pixels and channels
  Scalar interior_l1 = 0;  // mean |I_hat - I*| over interior pixels and channels
  Scalar perceptual = 0;
  bool mask_empty = false;
  Image<Scalar> grad_final;         // filled when gradients are requested
  Image<Scalar> grad_intermediate;
};

/// l1(final, ref) + l1 over `interior` of (intermediate, ref) + perceptual(final, ref).
/// The reference must lie in [0, 1]; predictions are unconstrained. An empty
/// interior mask contributes 0 and sets mask_empty.
template <typename Scalar>
RenderingLoss<Scalar> rendering_loss(const Image<Scalar>& final_image, const Image<Scalar>& intermediate,
                                     const Image<Scalar>& reference, const Mask& interior,
                                     const PerceptualLoss<Scalar>& perceptual, bool with_gradients = false);

}  // namespace reenact
