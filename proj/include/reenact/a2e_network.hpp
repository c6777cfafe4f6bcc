#pragma once

#include "reenact/audio_features.hpp"
#include "reenact/common.hpp"
#include "reenact/layers.hpp"

#include <nlohmann/json.hpp>

#include <algorithm>
#include <array>
#include <span>
#include <utility>
#include <vector>

namespace reenact {

/// Per-frame regression from a 16x29 logit window to a 32-d audio-expression code.
///
/// Four (3,1) convolutions with stride (2,1) and time padding 1 filter along
/// the time axis, taking (16x29) -> (8x32) -> (4x32) -> (2x64) -> (1x64)
/// (time x channels). Three affine layers follow (64 -> 128 -> 64 -> 32).
/// Every layer but the last uses leaky ReLU (slope 0.02); the last uses TanH.
/// A batch of B windows is evaluated as a 29-channel image of height 16 and width B.
template <typename Scalar>
class PerFrameNet {
 public:
  static constexpr int kConvLayers = 4;
  static constexpr int kFcLayers = 3;
  static constexpr std::array<int, kConvLayers + 1> kConvChannels{kLogitWidth, 32, 32, 64, 64};
  static constexpr std::array<int, kFcLayers + 1> kFcFeatures{64, 128, 64, kCodeDim};

  struct Cache {
    std::vector<Image<Scalar>> conv_in;   // input of each conv layer
    std::vector<Image<Scalar>> conv_out;  // post-activation output of each conv layer
    std::vector<MatrixX<Scalar>> fc_in;
    std::vector<MatrixX<Scalar>> fc_out;  // post-activation; last entry holds the codes
  };

  PerFrameNet();

  /// Codes for every window, one column each (32 x B).
  MatrixX<Scalar> forward(std::span<const AudioFeatureWindow> windows, Cache* cache = nullptr) const;
  MatrixX<Scalar> forward(const std::vector<const AudioFeatureWindow*>& windows, Cache* cache = nullptr) const;
  /// Accumulates parameter gradients for dLoss/dcodes.
  void backward(const Cache& cache, const MatrixX<Scalar>& grad_codes);

  /// (time, channels) of the input and every conv activation for one forward pass.
  static std::vector<std::pair<int, int>> shape_chain(const Cache& cache);

  std::vector<Param<Scalar>*> parameters();
  void init_xavier(std::mt19937_64& rng);

  std::array<Conv2d<Scalar>, kConvLayers> conv;
  std::array<Linear<Scalar>, kFcLayers> fc;
  Scalar slope = Scalar(0.02);

 private:
  MatrixX<Scalar> run(Image<Scalar> input, Cache* cache) const;
};

/// Predicts 8 convex filter weights from 8 time-ordered codes.
///
/// Five kernel-3 1-D convolutions (padding 1) reduce channels 32 -> 16 -> 8
/// -> 4 -> 2 -> 1 over the length-8 time axis, each followed by leaky ReLU
/// (0.02); an affine 8 -> 8 layer and a softmax produce the weights.
template <typename Scalar>
class FilterNet {
 public:
  static constexpr int kConvLayers = 5;
  static constexpr std::array<int, kConvLayers + 1> kChannels{kCodeDim, 16, 8, 4, 2, 1};

  struct Cache {
    std::vector<Image<Scalar>> conv_in;
    std::vector<Image<Scalar>> conv_out;
    MatrixX<Scalar> fc_in;    // 8 x B
    MatrixX<Scalar> weights;  // 8 x B softmax output
  };

  FilterNet();

  /// `codes` holds B windows as a 32-channel image of height 8 and width B.
  /// Returns 8 x B weights (each column sums to one).
  MatrixX<Scalar> forward(const Image<Scalar>& codes, Cache* cache = nullptr) const;
  /// Accumulates parameter gradients and returns dLoss/dcodes in the input layout.
  Image<Scalar> backward(const Cache& cache, const MatrixX<Scalar>& grad_weights);

  std::vector<Param<Scalar>*> parameters();
  void init_xavier(std::mt19937_64& rng);

  std::array<Conv2d<Scalar>, kConvLayers> conv;
  Linear<Scalar> head;
  Scalar slope = Scalar(0.02);
};

/// The complete audio-to-expression network: per-frame regressor plus temporal filter.
template <typename Scalar>
struct A2ENetwork {
  PerFrameNet<Scalar> per_frame;
  FilterNet<Scalar> filter;

  std::vector<Param<Scalar>*> parameters();
  void zero_grad();
  void init_xavier(std::uint64_t seed);

  template <typename Other>
  A2ENetwork<Other> cast() const;
};

/// Architecture descriptor stored with checkpoints and compared on load.
nlohmann::json a2e_architecture();

/// Index of the frame feeding filter tap `tap` (0..7) for frame t: t - 4 + tap, clamped to [0, n).
inline Index filter_tap_frame(Index t, int tap, Index n) { return std::clamp<Index>(t - kFilterTaps / 2 + tap, 0, n - 1); }

/// Packs B code windows (each 32 x 8, time-ordered columns) into the filter's image layout.
template <typename Scalar>
Image<Scalar> pack_code_windows(const std::vector<MatrixX<Scalar>>& windows);

template <typename Scalar>
VectorX<Scalar> per_frame_forward(const AudioFeatureWindow& window, const PerFrameNet<Scalar>& net);

/// Filter weights for one window of 8 codes (32 x 8, columns in time order).
template <typename Scalar>
VectorX<Scalar> filter_weights(const MatrixX<Scalar>& codes, const FilterNet<Scalar>& net);

/// Weighted combination of the per-frame codes of 8 consecutive windows.
template <typename Scalar>
VectorX<Scalar> filtered_prediction(std::span<const AudioFeatureWindow> windows, const A2ENetwork<Scalar>& net);

/// Filters a whole sequence of per-frame codes (32 x N), replicating edge codes.
template <typename Scalar>
MatrixX<Scalar> filter_sequence(const MatrixX<Scalar>& codes, const FilterNet<Scalar>& net);

/// Filtered codes (32 x N) for every window of a sequence.
template <typename Scalar>
MatrixX<Scalar> predict_sequence(std::span<const AudioFeatureWindow> windows, const A2ENetwork<Scalar>& net);

}  // namespace reenact
