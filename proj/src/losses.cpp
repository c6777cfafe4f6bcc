#include "reenact/losses.hpp"

#include <algorithm>
#include <cmath>

namespace reenact {

template <typename Scalar>
VectorX<Scalar> make_vertex_weights(const std::vector<std::uint8_t>& mouth_mask, Scalar mouth_factor) {
  require(!mouth_mask.empty(), "vertex weights need at least one vertex");
  require(mouth_factor >= Scalar(0), "mouth weight factor must be nonnegative");
  VectorX<Scalar> w(static_cast<Index>(mouth_mask.size()));
  for (std::size_t i = 0; i < mouth_mask.size(); ++i) w(static_cast<Index>(i)) = mouth_mask[i] ? mouth_factor : Scalar(1);
  const Scalar total = w.sum();
  require(total > Scalar(0), "vertex weights must have a positive sum");
  return w / total;
}

template <typename Scalar>
Scalar weighted_rms_residual(const Vertices<Scalar>& residual, const VectorX<Scalar>& weights, Vertices<Scalar>* grad) {
  require(residual.rows() == weights.size(), "vertex weights do not match vertex count");
  const Scalar total = weights.sum();
  require(total > Scalar(0), "vertex weights must have a positive sum");
  const Scalar mean_sq = weights.dot(residual.rowwise().squaredNorm()) / total;
  const Scalar rms = std::sqrt(mean_sq);
  if (grad) {
    if (rms > Scalar(0))
      *grad = residual.array().colwise() * (weights.array() / (total * rms));
    else
      grad->setZero(residual.rows(), 3);
  }
  return rms;
}

template <typename Scalar>
Scalar weighted_rms(const Vertices<Scalar>& v, const Vertices<Scalar>& reference, const VectorX<Scalar>& weights) {
  require(v.rows() == reference.rows(), "vertex arrays differ in size");
  return weighted_rms_residual<Scalar>(v - reference, weights);
}

namespace {

template <typename Scalar>
std::array<Vertices<Scalar>, 3> triplet_residuals(const FrameTriplet<Scalar>& t) {
  const Index n = t.predicted[0].rows();
  for (int k = 0; k < 3; ++k) {
    require(t.predicted[static_cast<std::size_t>(k)].rows() == n && t.reference[static_cast<std::size_t>(k)].rows() == n,
            "frame triplet arrays must share the vertex count");
  }
  return {t.predicted[0] - t.reference[0], t.predicted[1] - t.reference[1], t.predicted[2] - t.reference[2]};
}

template <typename Scalar>
Scalar temporal_from_residuals(const std::array<Vertices<Scalar>, 3>& r, const VectorX<Scalar>& w,
                               std::array<Vertices<Scalar>, 3>* grads, Scalar scale) {
  // (t, t-1), (t+1, t), (t+1, t-1)
  constexpr std::array<std::pair<int, int>, 3> kPairs{{{1, 0}, {2, 1}, {2, 0}}};
  Scalar total = 0;
  Vertices<Scalar> g;
  for (const auto& [hi, lo] : kPairs) {
    const Vertices<Scalar> diff = r[static_cast<std::size_t>(hi)] - r[static_cast<std::size_t>(lo)];
    total += weighted_rms_residual<Scalar>(diff, w, grads ? &g : nullptr);
    if (grads) {
      (*grads)[static_cast<std::size_t>(hi)] += scale * g;
      (*grads)[static_cast<std::size_t>(lo)] -= scale * g;
    }
  }
  return total;
}

}  // namespace

template <typename Scalar>
Scalar temporal_loss(const FrameTriplet<Scalar>& triplet, const VectorX<Scalar>& weights) {
  return temporal_from_residuals<Scalar>(triplet_residuals(triplet), weights, nullptr, Scalar(1));
}

template <typename Scalar>
Scalar expression_loss_residuals(const std::array<Vertices<Scalar>, 3>& r, const VectorX<Scalar>& weights,
                                 Scalar lambda, std::array<Vertices<Scalar>, 3>* grads) {
  if (grads)
    for (std::size_t k = 0; k < 3; ++k) (*grads)[k].setZero(r[k].rows(), 3);
  Vertices<Scalar> g;
  Scalar loss = weighted_rms_residual<Scalar>(r[1], weights, grads ? &g : nullptr);
  if (grads) (*grads)[1] += g;
  if (lambda != Scalar(0)) loss += lambda * temporal_from_residuals<Scalar>(r, weights, grads, lambda);
  return loss;
}

template <typename Scalar>
Scalar expression_loss(const FrameTriplet<Scalar>& triplet, const VectorX<Scalar>& weights, Scalar lambda) {
  return expression_loss_residuals<Scalar>(triplet_residuals(triplet), weights, lambda);
}

// ------------------------------------------------------------ perceptual

namespace {

template <typename Scalar>
Image<Scalar> average_pool2(const Image<Scalar>& in) {
  const int h = in.height / 2, w = in.width / 2;
  Image<Scalar> out(in.channels(), h, w);
  for (int c = 0; c < in.channels(); ++c)
    for (int y = 0; y < h; ++y)
      for (int x = 0; x < w; ++x)
        out.at(c, y, x) = Scalar(0.25) * (in.at(c, 2 * y, 2 * x) + in.at(c, 2 * y, 2 * x + 1) +
                                          in.at(c, 2 * y + 1, 2 * x) + in.at(c, 2 * y + 1, 2 * x + 1));
  return out;
}

template <typename Scalar>
void average_pool2_backward(const Image<Scalar>& grad_out, Image<Scalar>& grad_in) {
  for (int c = 0; c < grad_out.channels(); ++c)
    for (int y = 0; y < grad_out.height; ++y)
      for (int x = 0; x < grad_out.width; ++x) {
        const Scalar g = Scalar(0.25) * grad_out.at(c, y, x);
        grad_in.at(c, 2 * y, 2 * x) += g;
        grad_in.at(c, 2 * y, 2 * x + 1) += g;
        grad_in.at(c, 2 * y + 1, 2 * x) += g;
        grad_in.at(c, 2 * y + 1, 2 * x + 1) += g;
      }
}

template <typename Scalar>
Scalar sign(Scalar v) {
  return static_cast<Scalar>((v > Scalar(0)) - (v < Scalar(0)));
}

// Mean |grad(a) - grad(b)| for horizontal and vertical differences; accumulates into grad_a.
template <typename Scalar>
Scalar gradient_distance(const Image<Scalar>& a, const Image<Scalar>& b, Image<Scalar>* grad_a) {
  Scalar total = 0;
  const int channels = a.channels();
  if (a.width > 1) {
    const Scalar count = static_cast<Scalar>(channels) * a.height * (a.width - 1);
    Scalar sum = 0;
    for (int c = 0; c < channels; ++c)
      for (int y = 0; y < a.height; ++y)
        for (int x = 0; x + 1 < a.width; ++x) {
          const Scalar d = (a.at(c, y, x + 1) - a.at(c, y, x)) - (b.at(c, y, x + 1) - b.at(c, y, x));
          sum += std::abs(d);
          if (grad_a) {
            const Scalar g = sign(d) / count;
            grad_a->at(c, y, x + 1) += g;
            grad_a->at(c, y, x) -= g;
          }
        }
    total += sum / count;
  }
  if (a.height > 1) {
    const Scalar count = static_cast<Scalar>(channels) * (a.height - 1) * a.width;
    Scalar sum = 0;
    for (int c = 0; c < channels; ++c)
      for (int y = 0; y + 1 < a.height; ++y)
        for (int x = 0; x < a.width; ++x) {
          const Scalar d = (a.at(c, y + 1, x) - a.at(c, y, x)) - (b.at(c, y + 1, x) - b.at(c, y, x));
          sum += std::abs(d);
          if (grad_a) {
            const Scalar g = sign(d) / count;
            grad_a->at(c, y + 1, x) += g;
            grad_a->at(c, y, x) -= g;
          }
        }
    total += sum / count;
  }
  return total;
}

}  // namespace

template <typename Scalar>
Scalar GradientPerceptual<Scalar>::evaluate(const Image<Scalar>& a, const Image<Scalar>& b, Image<Scalar>* grad_a) const {
  require(a.same_size(b) && a.channels() == b.channels(), "perceptual loss inputs differ in shape");
  std::vector<Image<Scalar>> pa{a}, pb{b};
  for (int level = 1; level < levels_; ++level) {
    if (pa.back().height < 2 || pa.back().width < 2) break;
    pa.push_back(average_pool2(pa.back()));
    pb.push_back(average_pool2(pb.back()));
  }
  std::vector<Image<Scalar>> grads;
  if (grad_a)
    for (const auto& p : pa) grads.emplace_back(p.channels(), p.height, p.width);
  Scalar total = 0;
  for (std::size_t level = 0; level < pa.size(); ++level)
    total += gradient_distance(pa[level], pb[level], grad_a ? &grads[level] : nullptr);
  if (grad_a) {
    for (std::size_t level = pa.size() - 1; level > 0; --level) average_pool2_backward(grads[level], grads[level - 1]);
    grad_a->data += grads[0].data;
  }
  return total;
}

template <typename Scalar>
std::unique_ptr<PerceptualLoss<Scalar>> make_perceptual(const std::string& name) {
  if (name == "none") return std::make_unique<NullPerceptual<Scalar>>();
  if (name == "gradient") return std::make_unique<GradientPerceptual<Scalar>>();
  throw InvalidInput("unknown perceptual loss '" + name + "' (expected 'none' or 'gradient')");
}

// --------------------------------------------------------- rendering loss

template <typename Scalar>
RenderingLoss<Scalar> rendering_loss(const Image<Scalar>& final_image, const Image<Scalar>& intermediate,
                                     const Image<Scalar>& reference, const Mask& interior,
                                     const PerceptualLoss<Scalar>& perceptual, bool with_gradients) {
  require(final_image.channels() == 3 && intermediate.channels() == 3 && reference.channels() == 3,
          "rendering loss expects 3-channel images");
  require(final_image.same_size(reference) && intermediate.same_size(reference),
          "rendering loss images differ in resolution");
  require(interior.size() == reference.pixels(), "interior mask resolution does not match");
  require(reference.data.allFinite() && reference.data.minCoeff() >= Scalar(0) && reference.data.maxCoeff() <= Scalar(1),
          "reference image values must lie in [0, 1]");

  RenderingLoss<Scalar> loss;
  const Scalar count = static_cast<Scalar>(reference.data.size());
  const RowMatrixX<Scalar> diff_final = final_image.data - reference.data;
  loss.final_l1 = diff_final.cwiseAbs().sum() / count;

  const Index interior_pixels = interior.count();
  loss.mask_empty = interior_pixels == 0;
  if (with_gradients) {
    loss.grad_final = Image<Scalar>(3, reference.height, reference.width);
    loss.grad_intermediate = Image<Scalar>(3, reference.height, reference.width);
    loss.grad_final.data = diff_final.unaryExpr([&](Scalar d) { return sign(d) / count; });
  }
  if (!loss.mask_empty) {
    const Scalar masked_count = static_cast<Scalar>(3 * interior_pixels);
    Scalar sum = 0;
    for (Index p = 0; p < reference.pixels(); ++p) {
      if (!interior(p)) continue;
      for (int c = 0; c < 3; ++c) {
        const Scalar d = intermediate.data(c, p) - reference.data(c, p);
        sum += std::abs(d);
        if (with_gradients) loss.grad_intermediate.data(c, p) = sign(d) / masked_count;
      }
    }
    loss.interior_l1 = sum / masked_count;
  }
  loss.perceptual = perceptual.evaluate(final_image, reference, with_gradients ? &loss.grad_final : nullptr);
  loss.total = loss.final_l1 + loss.interior_l1 + loss.perceptual;
  return loss;
}

#define REENACT_INSTANTIATE_LOSSES(S)                                                                              \
  template VectorX<S> make_vertex_weights(const std::vector<std::uint8_t>&, S);                                    \
  template S weighted_rms(const Vertices<S>&, const Vertices<S>&, const VectorX<S>&);                              \
  template S weighted_rms_residual(const Vertices<S>&, const VectorX<S>&, Vertices<S>*);                           \
  template S temporal_loss(const FrameTriplet<S>&, const VectorX<S>&);                                             \
  template S expression_loss(const FrameTriplet<S>&, const VectorX<S>&, S);                                        \
  template S expression_loss_residuals(const std::array<Vertices<S>, 3>&, const VectorX<S>&, S,                    \
                                       std::array<Vertices<S>, 3>*);                                               \
  template class GradientPerceptual<S>;                                                                            \
  template std::unique_ptr<PerceptualLoss<S>> make_perceptual(const std::string&);                                 \
  template RenderingLoss<S> rendering_loss(const Image<S>&, const Image<S>&, const Image<S>&, const Mask&,          \
                                           const PerceptualLoss<S>&, bool);

REENACT_INSTANTIATE_LOSSES(float)
REENACT_INSTANTIATE_LOSSES(double)

}  // namespace reenact
