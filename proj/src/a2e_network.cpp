#include "reenact/a2e_network.hpp"

#include <algorithm>
#include <cmath>

namespace reenact {

namespace {

constexpr ConvGeometry kTimeConvStride2{3, 1, 2, 1, 1, 1, 1, 0};
constexpr ConvGeometry kTimeConvSame{3, 1, 1, 1, 1, 1, 1, 0};

}  // namespace

// ------------------------------------------------------------ PerFrameNet

template <typename Scalar>
PerFrameNet<Scalar>::PerFrameNet() {
  for (int i = 0; i < kConvLayers; ++i)
    conv[static_cast<std::size_t>(i)] = Conv2d<Scalar>("per_frame.conv" + std::to_string(i), kConvChannels[i],
                                                       kConvChannels[i + 1], kTimeConvStride2);
  for (int i = 0; i < kFcLayers; ++i)
    fc[static_cast<std::size_t>(i)] =
        Linear<Scalar>("per_frame.fc" + std::to_string(i), kFcFeatures[i], kFcFeatures[i + 1]);
}

template <typename Scalar>
MatrixX<Scalar> PerFrameNet<Scalar>::forward(std::span<const AudioFeatureWindow> windows, Cache* cache) const {
  std::vector<const AudioFeatureWindow*> pointers;
  pointers.reserve(windows.size());
  for (const auto& w : windows) pointers.push_back(&w);
  return forward(pointers, cache);
}

template <typename Scalar>
MatrixX<Scalar> PerFrameNet<Scalar>::forward(const std::vector<const AudioFeatureWindow*>& windows,
                                             Cache* cache) const {
  require(!windows.empty(), "per-frame network needs at least one window");
  const int batch = static_cast<int>(windows.size());
  Image<Scalar> input(kLogitWidth, kWindowLength, batch);
  for (int b = 0; b < batch; ++b) {
    const auto& w = *windows[static_cast<std::size_t>(b)];
    for (int t = 0; t < kWindowLength; ++t)
      for (int c = 0; c < kLogitWidth; ++c) input.at(c, t, b) = static_cast<Scalar>(w(t, c));
  }
  return run(std::move(input), cache);
}

template <typename Scalar>
MatrixX<Scalar> PerFrameNet<Scalar>::run(Image<Scalar> x, Cache* cache) const {
  if (cache) {
    cache->conv_in.clear();
    cache->conv_out.clear();
    cache->fc_in.clear();
    cache->fc_out.clear();
  }
  for (const auto& layer : conv) {
    Image<Scalar> y = layer.forward(x);
    leaky_relu_inplace(y.data, slope);
    if (cache) {
      cache->conv_in.push_back(std::move(x));
      cache->conv_out.push_back(y);
    }
    x = std::move(y);
  }
  // (1 x 64) per window: height 1, so the conv image is already 64 x B.
  MatrixX<Scalar> h = x.data;
  for (int i = 0; i < kFcLayers; ++i) {
    MatrixX<Scalar> y = fc[static_cast<std::size_t>(i)].forward(h);
    if (i + 1 < kFcLayers)
      leaky_relu_inplace(y, slope);
    else
      y = y.array().tanh().matrix();
    if (cache) {
      cache->fc_in.push_back(std::move(h));
      cache->fc_out.push_back(y);
    }
    h = std::move(y);
  }
  return h;
}

template <typename Scalar>
void PerFrameNet<Scalar>::backward(const Cache& cache, const MatrixX<Scalar>& grad_codes) {
  require(cache.fc_out.size() == static_cast<std::size_t>(kFcLayers), "per-frame backward needs a forward cache");
  const auto& codes = cache.fc_out.back();
  MatrixX<Scalar> g = grad_codes.cwiseProduct((Scalar(1) - codes.array().square()).matrix());
  for (int i = kFcLayers - 1; i >= 0; --i) {
    const auto k = static_cast<std::size_t>(i);
    if (i + 1 < kFcLayers) leaky_relu_backward_inplace(g, cache.fc_out[k], slope);
    g = fc[k].backward(cache.fc_in[k], g);
  }
  const int batch = cache.conv_out.back().width;
  Image<Scalar> gi(1, batch, RowMatrixX<Scalar>(g));
  for (int i = kConvLayers - 1; i >= 0; --i) {
    const auto k = static_cast<std::size_t>(i);
    leaky_relu_backward_inplace(gi.data, cache.conv_out[k].data, slope);
    gi = conv[k].backward(cache.conv_in[k], gi, i > 0);
  }
}

template <typename Scalar>
std::vector<std::pair<int, int>> PerFrameNet<Scalar>::shape_chain(const Cache& cache) {
  std::vector<std::pair<int, int>> chain;
  if (cache.conv_in.empty()) return chain;
  chain.emplace_back(cache.conv_in.front().height, cache.conv_in.front().channels());
  for (const auto& out : cache.conv_out) chain.emplace_back(out.height, out.channels());
  return chain;
}

template <typename Scalar>
std::vector<Param<Scalar>*> PerFrameNet<Scalar>::parameters() {
  std::vector<Param<Scalar>*> out;
  for (auto& layer : conv) layer.collect(out);
  for (auto& layer : fc) layer.collect(out);
  return out;
}

template <typename Scalar>
void PerFrameNet<Scalar>::init_xavier(std::mt19937_64& rng) {
  for (auto& layer : conv) layer.init_xavier(rng);
  for (auto& layer : fc) layer.init_xavier(rng);
}

// -------------------------------------------------------------- FilterNet

template <typename Scalar>
FilterNet<Scalar>::FilterNet() : head("filter.head", kFilterTaps, kFilterTaps) {
  for (int i = 0; i < kConvLayers; ++i)
    conv[static_cast<std::size_t>(i)] =
        Conv2d<Scalar>("filter.conv" + std::to_string(i), kChannels[i], kChannels[i + 1], kTimeConvSame);
}

template <typename Scalar>
MatrixX<Scalar> FilterNet<Scalar>::forward(const Image<Scalar>& codes, Cache* cache) const {
  require(codes.channels() == kCodeDim && codes.height == kFilterTaps,
          "filter network expects 8 codes of dimension 32 per window");
  if (cache) {
    cache->conv_in.clear();
    cache->conv_out.clear();
  }
  Image<Scalar> x = codes;
  for (const auto& layer : conv) {
    Image<Scalar> y = layer.forward(x);
    leaky_relu_inplace(y.data, slope);
    if (cache) {
      cache->conv_in.push_back(std::move(x));
      cache->conv_out.push_back(y);
    }
    x = std::move(y);
  }
  const int batch = codes.width;
  MatrixX<Scalar> features = Eigen::Map<const RowMatrixX<Scalar>>(x.data.data(), kFilterTaps, batch);
  MatrixX<Scalar> logits = head.forward(features);
  const Eigen::Matrix<Scalar, 1, Eigen::Dynamic> max = logits.colwise().maxCoeff();
  MatrixX<Scalar> weights = (logits.rowwise() - max).array().exp().matrix();
  const Eigen::Matrix<Scalar, 1, Eigen::Dynamic> sums = weights.colwise().sum();
  weights.array().rowwise() /= sums.array();
  if (cache) {
    cache->fc_in = std::move(features);
    cache->weights = weights;
  }
  return weights;
}

template <typename Scalar>
Image<Scalar> FilterNet<Scalar>::backward(const Cache& cache, const MatrixX<Scalar>& grad_weights) {
  const auto& w = cache.weights;
  const Eigen::Matrix<Scalar, 1, Eigen::Dynamic> inner = w.cwiseProduct(grad_weights).colwise().sum();
  const MatrixX<Scalar> grad_logits = w.cwiseProduct(grad_weights - inner.replicate(w.rows(), 1));
  const MatrixX<Scalar> grad_features = head.backward(cache.fc_in, grad_logits);
  const int batch = static_cast<int>(w.cols());
  Image<Scalar> g(1, kFilterTaps, batch);
  Eigen::Map<RowMatrixX<Scalar>>(g.data.data(), kFilterTaps, batch) = grad_features;
  for (int i = kConvLayers - 1; i >= 0; --i) {
    const auto k = static_cast<std::size_t>(i);
    leaky_relu_backward_inplace(g.data, cache.conv_out[k].data, slope);
    g = conv[k].backward(cache.conv_in[k], g, true);
  }
  return g;
}

template <typename Scalar>
std::vector<Param<Scalar>*> FilterNet<Scalar>::parameters() {
  std::vector<Param<Scalar>*> out;
  for (auto& layer : conv) layer.collect(out);
  head.collect(out);
  return out;
}

template <typename Scalar>
void FilterNet<Scalar>::init_xavier(std::mt19937_64& rng) {
  for (auto& layer : conv) layer.init_xavier(rng);
  head.init_xavier(rng);
}

// ------------------------------------------------------------- A2ENetwork

template <typename Scalar>
std::vector<Param<Scalar>*> A2ENetwork<Scalar>::parameters() {
  auto out = per_frame.parameters();
  for (auto* p : filter.parameters()) out.push_back(p);
  return out;
}

template <typename Scalar>
void A2ENetwork<Scalar>::zero_grad() {
  for (auto* p : parameters()) p->zero_grad();
}

template <typename Scalar>
void A2ENetwork<Scalar>::init_xavier(std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  per_frame.init_xavier(rng);
  filter.init_xavier(rng);
}

template <typename Scalar>
template <typename Other>
A2ENetwork<Other> A2ENetwork<Scalar>::cast() const {
  A2ENetwork<Other> out;
  auto dst = out.parameters();
  auto src = const_cast<A2ENetwork*>(this)->parameters();
  for (std::size_t i = 0; i < src.size(); ++i) dst[i]->value = src[i]->value.template cast<Other>();
  out.per_frame.slope = static_cast<Other>(per_frame.slope);
  out.filter.slope = static_cast<Other>(filter.slope);
  return out;
}

nlohmann::json a2e_architecture() {
  return {{"window", {kWindowLength, kLogitWidth}},
          {"per_frame",
           {{"conv_channels", PerFrameNet<float>::kConvChannels},
            {"conv_kernel", {3, 1}},
            {"conv_stride", {2, 1}},
            {"fc_features", PerFrameNet<float>::kFcFeatures},
            {"leaky_slope", 0.02},
            {"output", "tanh"}}},
          {"filter",
           {{"taps", kFilterTaps},
            {"conv_channels", FilterNet<float>::kChannels},
            {"conv_kernel", 3},
            {"leaky_slope", 0.02},
            {"head", {kFilterTaps, kFilterTaps}},
            {"output", "softmax"}}},
          {"code_dim", kCodeDim},
          {"expression_dim", kExpressionDim}};
}

// ------------------------------------------------------------- operations

template <typename Scalar>
Image<Scalar> pack_code_windows(const std::vector<MatrixX<Scalar>>& windows) {
  const int batch = static_cast<int>(windows.size());
  Image<Scalar> image(kCodeDim, kFilterTaps, batch);
  for (int b = 0; b < batch; ++b) {
    const auto& w = windows[static_cast<std::size_t>(b)];
    require(w.rows() == kCodeDim && w.cols() == kFilterTaps, "code window must be 32 x 8");
    for (int tap = 0; tap < kFilterTaps; ++tap)
      for (int c = 0; c < kCodeDim; ++c) image.at(c, tap, b) = w(c, tap);
  }
  return image;
}

template <typename Scalar>
VectorX<Scalar> per_frame_forward(const AudioFeatureWindow& window, const PerFrameNet<Scalar>& net) {
  require(window.allFinite(), "audio feature window must be finite");
  return net.forward(std::span<const AudioFeatureWindow>(&window, 1)).col(0);
}

template <typename Scalar>
VectorX<Scalar> filter_weights(const MatrixX<Scalar>& codes, const FilterNet<Scalar>& net) {
  require(codes.rows() == kCodeDim && codes.cols() == kFilterTaps, "filter input must be 8 codes of dimension 32");
  return net.forward(pack_code_windows<Scalar>({codes})).col(0);
}

template <typename Scalar>
VectorX<Scalar> filtered_prediction(std::span<const AudioFeatureWindow> windows, const A2ENetwork<Scalar>& net) {
  require(windows.size() == static_cast<std::size_t>(kFilterTaps), "filtered prediction needs exactly 8 windows");
  const MatrixX<Scalar> codes = net.per_frame.forward(windows);
  const VectorX<Scalar> w = filter_weights(codes, net.filter);
  return codes * w;
}

template <typename Scalar>
MatrixX<Scalar> filter_sequence(const MatrixX<Scalar>& codes, const FilterNet<Scalar>& net) {
  require(codes.rows() == kCodeDim && codes.cols() > 0, "code sequence must be 32 x N with N >= 1");
  const Index n = codes.cols();
  std::vector<MatrixX<Scalar>> windows(static_cast<std::size_t>(n), MatrixX<Scalar>(kCodeDim, kFilterTaps));
  for (Index t = 0; t < n; ++t)
    for (int tap = 0; tap < kFilterTaps; ++tap)
      windows[static_cast<std::size_t>(t)].col(tap) = codes.col(filter_tap_frame(t, tap, n));
  const MatrixX<Scalar> weights = net.forward(pack_code_windows(windows));
  MatrixX<Scalar> out(kCodeDim, n);
  for (Index t = 0; t < n; ++t) out.col(t) = windows[static_cast<std::size_t>(t)] * weights.col(t);
  return out;
}

template <typename Scalar>
MatrixX<Scalar> predict_sequence(std::span<const AudioFeatureWindow> windows, const A2ENetwork<Scalar>& net) {
  return filter_sequence(net.per_frame.forward(windows), net.filter);
}

#define REENACT_INSTANTIATE_A2E(S)                                                                    \
  template class PerFrameNet<S>;                                                                      \
  template class FilterNet<S>;                                                                        \
  template struct A2ENetwork<S>;                                                                      \
  template Image<S> pack_code_windows(const std::vector<MatrixX<S>>&);                                \
  template VectorX<S> per_frame_forward(const AudioFeatureWindow&, const PerFrameNet<S>&);            \
  template VectorX<S> filter_weights(const MatrixX<S>&, const FilterNet<S>&);                         \
  template VectorX<S> filtered_prediction(std::span<const AudioFeatureWindow>, const A2ENetwork<S>&); \
  template MatrixX<S> filter_sequence(const MatrixX<S>&, const FilterNet<S>&);                        \
  template MatrixX<S> predict_sequence(std::span<const AudioFeatureWindow>, const A2ENetwork<S>&);

REENACT_INSTANTIATE_A2E(float)
REENACT_INSTANTIATE_A2E(double)

template A2ENetwork<double> A2ENetwork<float>::cast<double>() const;
template A2ENetwork<float> A2ENetwork<double>::cast<float>() const;
template A2ENetwork<float> A2ENetwork<float>::cast<float>() const;
template A2ENetwork<double> A2ENetwork<double>::cast<double>() const;

}  // namespace reenact
