#pragma once

#include "reenact/common.hpp"
#include "reenact/face_model.hpp"
#include "reenact/image.hpp"
#include "reenact/layers.hpp"

#include <nlohmann/json.hpp>

#include <filesystem>
#include <variant>
#include <random>
#include <vector>

namespace reenact {

// ------------------------------------------------------------------ camera

/// Rigid pose plus pinhole intrinsics. Camera axes: x right, y down, z forward.
/// Focal lengths and principal point are fractions of the image width/height,
/// so one pose serves every output resolution.
struct CameraPose {
  Eigen::Matrix3d rotation = Eigen::Matrix3d::Identity();
  Eigen::Vector3d translation = Eigen::Vector3d::Zero();
  double focal_x = 2.0;
  double focal_y = 2.0;
  double center_x = 0.5;
  double center_y = 0.5;
};

/// Throws InvalidInput unless the rotation is orthonormal with det +1 and intrinsics are positive.
void validate(const CameraPose& pose);

nlohmann::json to_json(const CameraPose& pose);
CameraPose camera_pose_from_json(const nlohmann::json& j);

// -------------------------------------------------------------- rasterizer

/// Per-pixel rasterization result: triangle id (-1 = uncovered), perspective-correct
/// barycentrics and camera-space depth.
struct RasterFragments {
  int height = 0;
  int width = 0;
  std::vector<int> triangle;
  Eigen::Matrix<double, Eigen::Dynamic, 3, Eigen::RowMajor> barycentric;
  Eigen::VectorXd depth;
};

/// Z-buffered rasterization of front-facing triangles, sampled at pixel centers.
/// A triangle is front-facing when its projected signed area is positive in
/// pixel coordinates (x right, y down). Degenerate triangles and triangles
/// touching the z <= 0 half-space are skipped.
RasterFragments rasterize_fragments(const Vertices<double>& vertices, const Triangles& triangles,
                                    const CameraPose& pose, int height, int width);

/// Per-pixel (u, v, coverage) at output resolution; uncovered pixels hold (0, 0, 0).
struct UVMap {
  Image<float> data;  // 3 channels: u, v, coverage

  int height() const { return data.height; }
  int width() const { return data.width; }
  Mask coverage() const { return data.data.row(2).transpose().array() > 0.5f; }
};

UVMap rasterize(const Vertices<double>& vertices, const Triangles& triangles, const TexCoords& uv,
                const CameraPose& pose, int height, int width);

/// UV map file (little-endian): "PUVM", u32 version=1, u32 H, u32 W, then
/// H*W*3 float32 as per-pixel (u, v, coverage), row-major.
void save_uv_map(const std::filesystem::path& path, const UVMap& map);
UVMap load_uv_map(const std::filesystem::path& path);

// ---------------------------------------------------------- neural texture

/// Learnable C-channel texture on an S x S grid. Texel (i, j) is centered at
/// uv ((j + 0.5) / S, (i + 0.5) / S); the grid value is C x (S*S), column i*S + j.
template <typename Scalar>
struct NeuralTexture {
  int size = 256;
  int channels = 16;
  Param<Scalar> grid;

  NeuralTexture() : NeuralTexture(256, 16) {}
  NeuralTexture(int s, int c) : size(s), channels(c), grid("texture", c, Index{s} * s) {}
};

/// Bilinear lookup with edge clamping at covered pixels; zero feature elsewhere.
template <typename Scalar>
Image<Scalar> sample_texture(const NeuralTexture<Scalar>& texture, const UVMap& uvmap);

/// Accumulates dLoss/dtexture for dLoss/dfeatures.
template <typename Scalar>
void sample_texture_backward(NeuralTexture<Scalar>& texture, const UVMap& uvmap, const Image<Scalar>& grad_features);

// ------------------------------------------------------------------ U-Net

enum class UNetVariant { kDilated, kStrided };

struct UNetConfig {
  int in_channels = 16;
  int out_channels = 3;
  int base_width = 32;
  int max_width = 256;
  int depth = 5;
  UNetVariant variant = UNetVariant::kDilated;
  double slope = 0.2;

  int width(int level) const;  // encoder output channels at level 1..depth
  bool is_reference() const { return base_width == 32 && max_width == 256 && depth == 5 && variant == UNetVariant::kDilated; }
};

inline constexpr double kReferenceParameterCount = 2.35e6;

/// U-Net with skip connections. Dilated variant: every convolution is 3x3 with
/// stride 1; encoder level l uses dilation 2^(l-1); decoder convolutions are
/// undilated. Strided variant: 4x4 stride-2 encoder convolutions and 4x4
/// stride-2 transposed decoder convolutions. Leaky ReLU after every layer but
/// the last, which is linear.
template <typename Scalar>
class UNet {
 public:
  struct Cache {
    Image<Scalar> input;
    std::vector<Image<Scalar>> encoder;       // post-activation e_1..e_depth
    std::vector<Image<Scalar>> decoder_in;    // input of decoder layer, index l-1
    std::vector<Image<Scalar>> decoder_out;   // post-activation output, index l-1
  };

  UNet() = default;
  /// Throws InvalidInput if a reference configuration misses the ~2.35M parameter budget by more than 15%.
  UNet(const std::string& name, const UNetConfig& config);

  Image<Scalar> forward(const Image<Scalar>& input, Cache* cache = nullptr) const;
  Image<Scalar> backward(const Cache& cache, const Image<Scalar>& grad_output, bool need_input_grad = true);

  std::vector<Param<Scalar>*> parameters();
  Index parameter_count() const;
  void init_xavier(std::mt19937_64& rng);
  const UNetConfig& config() const { return config_; }

 private:
  struct DecoderLayer {
    std::variant<Conv2d<Scalar>, TransposedConv2d<Scalar>> layer;
    Image<Scalar> forward(const Image<Scalar>& x) const;
    Image<Scalar> backward(const Image<Scalar>& x, const Image<Scalar>& g, bool need_input_grad);
  };

  UNetConfig config_;
  std::vector<Conv2d<Scalar>> encoder_;
  std::vector<DecoderLayer> decoder_;  // index l-1 for decoder level l
};

// ---------------------------------------------------------------- renderer

/// Zeroes every pixel within Chebyshev distance `radius` of a covered pixel.
template <typename Scalar>
Image<Scalar> erode_background(const Image<Scalar>& frame, const Mask& coverage, int radius);

struct RendererConfig {
  int texture_size = 256;
  int texture_channels = 16;
  int base_width = 32;
  int max_width = 256;
  int depth = 5;
  UNetVariant variant = UNetVariant::kDilated;
  int erosion_radius = 8;

  UNetConfig interior_config() const;
  UNetConfig composite_config() const;
  nlohmann::json to_json() const;
  static RendererConfig from_json(const nlohmann::json& j);
};

/// Erosion radius scaled from 8 px at 512x512 to the given resolution (at least 1).
int default_erosion_radius(int resolution);

/// Neural texture + interior network + compositing network.
template <typename Scalar>
class NeuralRenderer {
 public:
  struct Output {
    Image<Scalar> features;
    Image<Scalar> interior;  // intermediate image from the interior network
    Image<Scalar> eroded;
    Image<Scalar> final_image;
  };
  struct Cache {
    UVMap uvmap;
    typename UNet<Scalar>::Cache interior;
    typename UNet<Scalar>::Cache composite;
  };

  NeuralRenderer() = default;
  explicit NeuralRenderer(const RendererConfig& config);

  Output forward(const UVMap& uvmap, const Image<Scalar>& background, Cache* cache = nullptr) const;
  /// Accumulates gradients of the texture and both networks.
  void backward(const Cache& cache, const Image<Scalar>& grad_final, const Image<Scalar>& grad_interior);

  std::vector<Param<Scalar>*> parameters();
  void zero_grad();
  void init(std::uint64_t seed);
  const RendererConfig& config() const { return config_; }

  NeuralTexture<Scalar> texture;
  UNet<Scalar> interior_net;
  UNet<Scalar> composite_net;

 private:
  RendererConfig config_;
};

template <typename Scalar>
Image<Scalar> interior_forward(const Image<Scalar>& features, const UNet<Scalar>& net) {
  return net.forward(features);
}

template <typename Scalar>
Image<Scalar> composite_forward(const Image<Scalar>& interior, const Image<Scalar>& eroded_background,
                                const UNet<Scalar>& net) {
  require(interior.channels() == 3 && eroded_background.channels() == 3, "compositing expects two RGB images");
  return net.forward(concat_channels(interior, eroded_background));
}

}  // namespace reenact
