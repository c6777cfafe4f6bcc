#include "reenact/neural_renderer.hpp"

#include "reenact/binary_io.hpp"

#include <algorithm>
#include <cmath>
#include <set>
#include <array>
#include <fstream>
#include <limits>

namespace reenact {

// ------------------------------------------------------------------ camera

void validate(const CameraPose& pose) {
  require(pose.rotation.allFinite() && pose.translation.allFinite(), "camera pose must be finite");
  require((pose.rotation * pose.rotation.transpose() - Eigen::Matrix3d::Identity()).cwiseAbs().maxCoeff() < 1e-6,
          "camera rotation must be orthonormal");
  require(std::abs(pose.rotation.determinant() - 1.0) < 1e-6, "camera rotation must have determinant +1");
  require(pose.focal_x > 0 && pose.focal_y > 0, "camera focal lengths must be positive");
}

nlohmann::json to_json(const CameraPose& pose) {
  nlohmann::json r = nlohmann::json::array();
  for (int i = 0; i < 3; ++i) r.push_back({pose.rotation(i, 0), pose.rotation(i, 1), pose.rotation(i, 2)});
  return {{"rotation", r},
          {"translation", {pose.translation.x(), pose.translation.y(), pose.translation.z()}},
          {"focal", {pose.focal_x, pose.focal_y}},
          {"center", {pose.center_x, pose.center_y}}};
}

CameraPose camera_pose_from_json(const nlohmann::json& j) {
  CameraPose pose;
  try {
    for (int i = 0; i < 3; ++i)
      for (int k = 0; k < 3; ++k) pose.rotation(i, k) = j.at("rotation").at(i).at(k).get<double>();
    for (int i = 0; i < 3; ++i) pose.translation(i) = j.at("translation").at(i).get<double>();
    pose.focal_x = j.at("focal").at(0).get<double>();
    pose.focal_y = j.at("focal").at(1).get<double>();
    pose.center_x = j.at("center").at(0).get<double>();
    pose.center_y = j.at("center").at(1).get<double>();
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("malformed camera pose: ") + e.what());
  }
  validate(pose);
  return pose;
}

// -------------------------------------------------------------- rasterizer

RasterFragments rasterize_fragments(const Vertices<double>& vertices, const Triangles& triangles,
                                    const CameraPose& pose, int height, int width) {
  require(height > 0 && width > 0, "raster resolution must be positive");
  validate(pose);
  RasterFragments frags;
  frags.height = height;
  frags.width = width;
  const Index pixels = Index{height} * width;
  frags.triangle.assign(static_cast<std::size_t>(pixels), -1);
  frags.barycentric.setZero(pixels, 3);
  frags.depth.setConstant(pixels, std::numeric_limits<double>::infinity());
  if (triangles.rows() == 0 || vertices.rows() == 0) return frags;
  require(triangles.maxCoeff() < vertices.rows() && triangles.minCoeff() >= 0, "triangle index out of range");

  const double fx = pose.focal_x * width, fy = pose.focal_y * height;
  const double cx = pose.center_x * width, cy = pose.center_y * height;
  const Eigen::Matrix<double, Eigen::Dynamic, 3, Eigen::RowMajor> cam =
      (vertices * pose.rotation.transpose()).rowwise() + pose.translation.transpose();

  for (Index t = 0; t < triangles.rows(); ++t) {
    std::array<Eigen::Vector2d, 3> p;
    std::array<double, 3> z{};
    bool visible = true;
    for (int k = 0; k < 3; ++k) {
      const auto v = cam.row(triangles(t, k));
      z[static_cast<std::size_t>(k)] = v.z();
      if (!(v.z() > 1e-9)) {
        visible = false;
        break;
      }
      p[static_cast<std::size_t>(k)] = {fx * v.x() / v.z() + cx, fy * v.y() / v.z() + cy};
    }
    if (!visible) continue;
    auto edge = [](const Eigen::Vector2d& a, const Eigen::Vector2d& b, const Eigen::Vector2d& q) {
      return (b.x() - a.x()) * (q.y() - a.y()) - (b.y() - a.y()) * (q.x() - a.x());
    };
    const double area = edge(p[0], p[1], p[2]);
    if (!(area > 1e-12)) continue;  // back-facing or degenerate

    const double min_x = std::min({p[0].x(), p[1].x(), p[2].x()});
    const double max_x = std::max({p[0].x(), p[1].x(), p[2].x()});
    const double min_y = std::min({p[0].y(), p[1].y(), p[2].y()});
    const double max_y = std::max({p[0].y(), p[1].y(), p[2].y()});
    const int x0 = std::max(0, static_cast<int>(std::ceil(min_x - 0.5)));
    const int x1 = std::min(width - 1, static_cast<int>(std::floor(max_x - 0.5)));
    const int y0 = std::max(0, static_cast<int>(std::ceil(min_y - 0.5)));
    const int y1 = std::min(height - 1, static_cast<int>(std::floor(max_y - 0.5)));
    for (int y = y0; y <= y1; ++y) {
      for (int x = x0; x <= x1; ++x) {
        const Eigen::Vector2d q(x + 0.5, y + 0.5);
        const double w0 = edge(p[1], p[2], q), w1 = edge(p[2], p[0], q), w2 = edge(p[0], p[1], q);
        if (w0 < 0 || w1 < 0 || w2 < 0) continue;
        const double q0 = w0 / area / z[0], q1 = w1 / area / z[1], q2 = w2 / area / z[2];
        const double inv_depth = q0 + q1 + q2;
        const double depth = 1.0 / inv_depth;
        const Index pixel = Index{y} * width + x;
        if (!(depth < frags.depth(pixel))) continue;
        frags.depth(pixel) = depth;
        frags.triangle[static_cast<std::size_t>(pixel)] = static_cast<int>(t);
        frags.barycentric.row(pixel) << q0 * depth, q1 * depth, q2 * depth;
      }
    }
  }
  return frags;
}

UVMap rasterize(const Vertices<double>& vertices, const Triangles& triangles, const TexCoords& uv,
                const CameraPose& pose, int height, int width) {
  require(triangles.rows() == 0 || uv.rows() == vertices.rows(), "texture coordinates must cover every vertex");
  const RasterFragments frags = rasterize_fragments(vertices, triangles, pose, height, width);
  UVMap map{Image<float>(3, height, width)};
  for (Index p = 0; p < Index{height} * width; ++p) {
    const int t = frags.triangle[static_cast<std::size_t>(p)];
    if (t < 0) continue;
    Eigen::Vector2d value = Eigen::Vector2d::Zero();
    for (int k = 0; k < 3; ++k) value += frags.barycentric(p, k) * uv.row(triangles(t, k)).transpose().cast<double>();
    map.data.data(0, p) = static_cast<float>(std::clamp(value.x(), 0.0, 1.0));
    map.data.data(1, p) = static_cast<float>(std::clamp(value.y(), 0.0, 1.0));
    map.data.data(2, p) = 1.0f;
  }
  return map;
}

void save_uv_map(const std::filesystem::path& path, const UVMap& map) {
  require(map.data.channels() == 3, "UV map must have 3 channels");
  io::write_atomically(path, [&](std::ostream& out) {
    io::Writer w(out);
    w.magic("PUVM");
    w.u32(1);
    w.u32(static_cast<std::uint32_t>(map.height()));
    w.u32(static_cast<std::uint32_t>(map.width()));
    for (Index p = 0; p < map.data.pixels(); ++p)
      for (int c = 0; c < 3; ++c) w.f32(map.data.data(c, p));
  });
}

UVMap load_uv_map(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FormatError("cannot open UV map " + path.string());
  io::Reader r(in, path.string());
  r.expect_magic("PUVM");
  if (const auto version = r.u32(); version != 1) r.fail("unsupported version " + std::to_string(version));
  const auto h = r.u32(), w = r.u32();
  if (h == 0 || w == 0 || static_cast<std::uint64_t>(h) * w > (1u << 26)) r.fail("bad resolution");
  UVMap map{Image<float>(3, static_cast<int>(h), static_cast<int>(w))};
  for (Index p = 0; p < map.data.pixels(); ++p)
    for (int c = 0; c < 3; ++c) map.data.data(c, p) = r.f32();
  if (!r.at_end()) r.fail("trailing bytes");
  return map;
}

// ---------------------------------------------------------- neural texture

namespace {

struct BilinearTap {
  std::array<Index, 4> texel;
  std::array<double, 4> weight;
};

BilinearTap bilinear_tap(double u, double v, int size) {
  const double x = u * size - 0.5, y = v * size - 0.5;
  const double fx = std::floor(x), fy = std::floor(y);
  const double ax = x - fx, ay = y - fy;
  auto clampi = [size](double i) { return static_cast<Index>(std::clamp(static_cast<int>(i), 0, size - 1)); };
  const Index x0 = clampi(fx), x1 = clampi(fx + 1), y0 = clampi(fy), y1 = clampi(fy + 1);
  return {{y0 * size + x0, y0 * size + x1, y1 * size + x0, y1 * size + x1},
          {(1 - ax) * (1 - ay), ax * (1 - ay), (1 - ax) * ay, ax * ay}};
}

}  // namespace

template <typename Scalar>
Image<Scalar> sample_texture(const NeuralTexture<Scalar>& texture, const UVMap& uvmap) {
  Image<Scalar> features(texture.channels, uvmap.height(), uvmap.width());
  const auto& grid = texture.grid.value;
  for (Index p = 0; p < uvmap.data.pixels(); ++p) {
    if (!(uvmap.data.data(2, p) > 0.5f)) continue;
    const auto tap = bilinear_tap(uvmap.data.data(0, p), uvmap.data.data(1, p), texture.size);
    for (int k = 0; k < 4; ++k) {
      const auto w = static_cast<Scalar>(tap.weight[static_cast<std::size_t>(k)]);
      if (w == Scalar(0)) continue;
      features.data.col(p) += w * grid.col(tap.texel[static_cast<std::size_t>(k)]);
    }
  }
  return features;
}

template <typename Scalar>
void sample_texture_backward(NeuralTexture<Scalar>& texture, const UVMap& uvmap, const Image<Scalar>& grad_features) {
  auto& grad = texture.grid.grad;
  for (Index p = 0; p < uvmap.data.pixels(); ++p) {
    if (!(uvmap.data.data(2, p) > 0.5f)) continue;
    const auto tap = bilinear_tap(uvmap.data.data(0, p), uvmap.data.data(1, p), texture.size);
    for (int k = 0; k < 4; ++k) {
      const auto w = static_cast<Scalar>(tap.weight[static_cast<std::size_t>(k)]);
      if (w == Scalar(0)) continue;
      grad.col(tap.texel[static_cast<std::size_t>(k)]) += w * grad_features.data.col(p);
    }
  }
}

// ------------------------------------------------------------------ U-Net

int UNetConfig::width(int level) const { return std::min(base_width << (level - 1), max_width); }

template <typename Scalar>
Image<Scalar> UNet<Scalar>::DecoderLayer::forward(const Image<Scalar>& x) const {
  return std::visit([&](const auto& l) { return l.forward(x); }, layer);
}

template <typename Scalar>
Image<Scalar> UNet<Scalar>::DecoderLayer::backward(const Image<Scalar>& x, const Image<Scalar>& g, bool need_input_grad) {
  return std::visit([&](auto& l) { return l.backward(x, g, need_input_grad); }, layer);
}

template <typename Scalar>
UNet<Scalar>::UNet(const std::string& name, const UNetConfig& config) : config_(config) {
  require(config.depth >= 2, "U-Net depth must be at least 2");
  require(config.in_channels > 0 && config.out_channels > 0 && config.base_width > 0 && config.max_width > 0,
          "U-Net channel counts must be positive");
  const bool dilated = config.variant == UNetVariant::kDilated;
  for (int level = 1; level <= config.depth; ++level) {
    const int in = level == 1 ? config.in_channels : config.width(level - 1);
    const int dilation = 1 << (level - 1);
    const auto geometry = dilated ? ConvGeometry::square(3, 1, dilation, dilation) : ConvGeometry::square(4, 2, 1, 1);
    encoder_.emplace_back(name + ".enc" + std::to_string(level), in, config.width(level), geometry);
  }
  for (int level = 1; level <= config.depth; ++level) {
    const int in = level == config.depth ? config.width(level) : 2 * config.width(level);
    const int out = level == 1 ? config.out_channels : config.width(level - 1);
    const auto layer_name = name + ".dec" + std::to_string(level);
    if (dilated)
      decoder_.push_back({Conv2d<Scalar>(layer_name, in, out, ConvGeometry::square(3, 1, 1, 1))});
    else
      decoder_.push_back({TransposedConv2d<Scalar>(layer_name, in, out, ConvGeometry::square(4, 2, 1, 1))});
  }
  if (config.is_reference()) {
    const double count = static_cast<double>(parameter_count());
    require(std::abs(count - kReferenceParameterCount) <= 0.15 * kReferenceParameterCount,
            name + ": parameter count " + std::to_string(parameter_count()) + " outside 2.35M +- 15%");
  }
}

template <typename Scalar>
Image<Scalar> UNet<Scalar>::forward(const Image<Scalar>& input, Cache* cache) const {
  require(input.channels() == config_.in_channels, "U-Net expects " + std::to_string(config_.in_channels) +
                                                       " input channels, got " + std::to_string(input.channels()));
  if (config_.variant == UNetVariant::kStrided) {
    const int factor = 1 << config_.depth;
    require(input.height % factor == 0 && input.width % factor == 0,
            "strided U-Net needs resolution divisible by " + std::to_string(factor));
  }
  const auto slope = static_cast<Scalar>(config_.slope);
  const auto depth = static_cast<std::size_t>(config_.depth);
  std::vector<Image<Scalar>> enc;
  enc.reserve(depth);
  for (std::size_t l = 0; l < depth; ++l) {
    Image<Scalar> y = encoder_[l].forward(l == 0 ? input : enc.back());
    leaky_relu_inplace(y.data, slope);
    enc.push_back(std::move(y));
  }
  std::vector<Image<Scalar>> dec_in(depth), dec_out(depth);
  for (std::size_t l = depth; l-- > 0;) {
    dec_in[l] = l + 1 == depth ? enc[l] : concat_channels(dec_out[l + 1], enc[l]);
    Image<Scalar> y = decoder_[l].forward(dec_in[l]);
    if (l > 0) leaky_relu_inplace(y.data, slope);
    dec_out[l] = std::move(y);
  }
  Image<Scalar> out = dec_out[0];
  if (cache) {
    cache->input = input;
    cache->encoder = std::move(enc);
    cache->decoder_in = std::move(dec_in);
    cache->decoder_out = std::move(dec_out);
  }
  return out;
}

template <typename Scalar>
Image<Scalar> UNet<Scalar>::backward(const Cache& cache, const Image<Scalar>& grad_output, bool need_input_grad) {
  const auto slope = static_cast<Scalar>(config_.slope);
  const auto depth = static_cast<std::size_t>(config_.depth);
  std::vector<Image<Scalar>> grad_enc(depth);
  for (std::size_t l = 0; l < depth; ++l) {
    const auto& e = cache.encoder[l];
    grad_enc[l] = Image<Scalar>(e.channels(), e.height, e.width);
  }
  Image<Scalar> g = grad_output;
  for (std::size_t l = 0; l < depth; ++l) {
    if (l > 0) leaky_relu_backward_inplace(g.data, cache.decoder_out[l].data, slope);
    Image<Scalar> gin = decoder_[l].backward(cache.decoder_in[l], g, true);
    if (l + 1 == depth) {
      grad_enc[l].data += gin.data;
    } else {
      const int skip = cache.encoder[l].channels();
      const int up = gin.channels() - skip;
      grad_enc[l].data += gin.data.bottomRows(skip);
      g = Image<Scalar>(gin.height, gin.width, gin.data.topRows(up));  // gradient of decoder_out[l + 1]
    }
  }
  for (std::size_t l = depth; l-- > 0;) {
    leaky_relu_backward_inplace(grad_enc[l].data, cache.encoder[l].data, slope);
    const auto& x = l == 0 ? cache.input : cache.encoder[l - 1];
    Image<Scalar> gin = encoder_[l].backward(x, grad_enc[l], l > 0 || need_input_grad);
    if (l > 0)
      grad_enc[l - 1].data += gin.data;
    else
      return gin;
  }
  return {};
}

template <typename Scalar>
std::vector<Param<Scalar>*> UNet<Scalar>::parameters() {
  std::vector<Param<Scalar>*> out;
  for (auto& e : encoder_) e.collect(out);
  for (auto& d : decoder_) std::visit([&](auto& l) { l.collect(out); }, d.layer);
  return out;
}

template <typename Scalar>
Index UNet<Scalar>::parameter_count() const {
  Index count = 0;
  for (auto* p : const_cast<UNet*>(this)->parameters()) count += p->value.size();
  return count;
}

template <typename Scalar>
void UNet<Scalar>::init_xavier(std::mt19937_64& rng) {
  for (auto& e : encoder_) e.init_xavier(rng);
  for (auto& d : decoder_) std::visit([&](auto& l) { l.init_xavier(rng); }, d.layer);
}

// ---------------------------------------------------------------- renderer

template <typename Scalar>
Image<Scalar> erode_background(const Image<Scalar>& frame, const Mask& coverage, int radius) {
  require(coverage.size() == frame.pixels(), "coverage mask resolution does not match the frame");
  require(radius >= 0, "erosion radius must be nonnegative");
  const int h = frame.height, w = frame.width;
  // Separable Chebyshev dilation: rows, then columns.
  Mask rows(coverage.size());
  rows.setConstant(false);
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) {
      if (!coverage(Index{y} * w + x)) continue;
      for (int dx = std::max(0, x - radius); dx <= std::min(w - 1, x + radius); ++dx) rows(Index{y} * w + dx) = true;
    }
  Image<Scalar> out = frame;
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) {
      if (!rows(Index{y} * w + x)) continue;
      for (int dy = std::max(0, y - radius); dy <= std::min(h - 1, y + radius); ++dy)
        out.data.col(Index{dy} * w + x).setZero();
    }
  return out;
}

UNetConfig RendererConfig::interior_config() const {
  return {texture_channels, 3, base_width, max_width, depth, variant, 0.2};
}

UNetConfig RendererConfig::composite_config() const { return {6, 3, base_width, max_width, depth, variant, 0.2}; }

nlohmann::json RendererConfig::to_json() const {
  return {{"texture_size", texture_size},
          {"texture_channels", texture_channels},
          {"base_width", base_width},
          {"max_width", max_width},
          {"depth", depth},
          {"variant", variant == UNetVariant::kDilated ? "dilated" : "strided"},
          {"erosion_radius", erosion_radius}};
}

RendererConfig RendererConfig::from_json(const nlohmann::json& j) {
  RendererConfig c;
  static const std::set<std::string> kKeys{"texture_size", "texture_channels", "base_width", "max_width",
                                           "depth",        "variant",          "erosion_radius"};
  if (!j.is_object()) throw IncompatibleCheckpoint("renderer descriptor must be an object");
  for (const auto& [key, value] : j.items())
    if (!kKeys.count(key)) throw IncompatibleCheckpoint("unknown renderer descriptor key '" + key + "'");
  try {
    c.texture_size = j.at("texture_size").get<int>();
    c.texture_channels = j.at("texture_channels").get<int>();
    c.base_width = j.at("base_width").get<int>();
    c.max_width = j.at("max_width").get<int>();
    c.depth = j.at("depth").get<int>();
    const auto variant = j.at("variant").get<std::string>();
    if (variant != "dilated" && variant != "strided") throw InvalidInput("unknown U-Net variant '" + variant + "'");
    c.variant = variant == "dilated" ? UNetVariant::kDilated : UNetVariant::kStrided;
    c.erosion_radius = j.at("erosion_radius").get<int>();
  } catch (const nlohmann::json::exception& e) {
    throw IncompatibleCheckpoint(std::string("malformed renderer descriptor: ") + e.what());
  }
  return c;
}

int default_erosion_radius(int resolution) {
  return std::max(1, static_cast<int>(std::lround(8.0 * resolution / 512.0)));
}

template <typename Scalar>
NeuralRenderer<Scalar>::NeuralRenderer(const RendererConfig& config)
    : texture(config.texture_size, config.texture_channels),
      interior_net("interior", config.interior_config()),
      composite_net("composite", config.composite_config()),
      config_(config) {
  require(config.texture_size > 0 && config.texture_channels > 0, "texture dimensions must be positive");
  require(config.erosion_radius >= 0, "erosion radius must be nonnegative");
}

template <typename Scalar>
typename NeuralRenderer<Scalar>::Output NeuralRenderer<Scalar>::forward(const UVMap& uvmap,
                                                                        const Image<Scalar>& background,
                                                                        Cache* cache) const {
  require(background.channels() == 3, "background must be an RGB image");
  require(background.height == uvmap.height() && background.width == uvmap.width(),
          "background and UV map differ in resolution");
  Output out;
  out.features = sample_texture(texture, uvmap);
  out.interior = interior_net.forward(out.features, cache ? &cache->interior : nullptr);
  out.eroded = erode_background(background, uvmap.coverage(), config_.erosion_radius);
  out.final_image = composite_net.forward(concat_channels(out.interior, out.eroded), cache ? &cache->composite : nullptr);
  if (cache) cache->uvmap = uvmap;
  return out;
}

template <typename Scalar>
void NeuralRenderer<Scalar>::backward(const Cache& cache, const Image<Scalar>& grad_final,
                                      const Image<Scalar>& grad_interior) {
  const Image<Scalar> grad_composite_in = composite_net.backward(cache.composite, grad_final, true);
  Image<Scalar> g = grad_interior;
  g.data += grad_composite_in.data.topRows(3);
  const Image<Scalar> grad_features = interior_net.backward(cache.interior, g, true);
  sample_texture_backward(texture, cache.uvmap, grad_features);
}

template <typename Scalar>
std::vector<Param<Scalar>*> NeuralRenderer<Scalar>::parameters() {
  std::vector<Param<Scalar>*> out{&texture.grid};
  for (auto* p : interior_net.parameters()) out.push_back(p);
  for (auto* p : composite_net.parameters()) out.push_back(p);
  return out;
}

template <typename Scalar>
void NeuralRenderer<Scalar>::zero_grad() {
  for (auto* p : parameters()) p->zero_grad();
}

template <typename Scalar>
void NeuralRenderer<Scalar>::init(std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> dist(-0.1, 0.1);
  auto& grid = texture.grid.value;
  for (Index j = 0; j < grid.cols(); ++j)
    for (Index i = 0; i < grid.rows(); ++i) grid(i, j) = static_cast<Scalar>(dist(rng));
  interior_net.init_xavier(rng);
  composite_net.init_xavier(rng);
  zero_grad();
}

#define REENACT_INSTANTIATE_RENDERER(S)                                                           \
  template Image<S> sample_texture(const NeuralTexture<S>&, const UVMap&);                        \
  template void sample_texture_backward(NeuralTexture<S>&, const UVMap&, const Image<S>&);        \
  template class UNet<S>;                                                                         \
  template Image<S> erode_background(const Image<S>&, const Mask&, int);                          \
  template class NeuralRenderer<S>;

REENACT_INSTANTIATE_RENDERER(float)
REENACT_INSTANTIATE_RENDERER(double)

}  // namespace reenact
