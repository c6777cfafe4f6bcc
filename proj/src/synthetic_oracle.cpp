#include "reenact/synthetic_oracle.hpp"

#include "reenact/layers.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <random>

namespace reenact {

namespace {

constexpr int kFlatWindow = kWindowLength * kLogitWidth;

std::mt19937_64 make_rng(std::uint64_t a, std::uint64_t b) {
  std::seed_seq seq{static_cast<std::uint32_t>(a), static_cast<std::uint32_t>(a >> 32), static_cast<std::uint32_t>(b),
                    static_cast<std::uint32_t>(b >> 32)};
  return std::mt19937_64(seq);
}

Eigen::Matrix3d rotation_from_angles(double yaw, double pitch, double roll) {
  return (Eigen::AngleAxisd(yaw, Eigen::Vector3d::UnitY()) * Eigen::AngleAxisd(pitch, Eigen::Vector3d::UnitX()) *
          Eigen::AngleAxisd(roll, Eigen::Vector3d::UnitZ()))
      .toRotationMatrix();
}

// Separable code map: a random character embedding (32 x 29) weighted over
// the window rows by the impulse response of four stride-2 [1/2, 1, 1/2]
// convolutions, i.e. the regressor's conv stack with a smooth shared kernel.
MatrixX<double> teacher_matrix(std::mt19937_64& rng) {
  constexpr ConvGeometry kStride2{3, 1, 2, 1, 1, 1, 1, 0};
  Image<double> x(1, kWindowLength, kWindowLength);
  for (int t = 0; t < kWindowLength; ++t) x.at(0, t, t) = 1.0;
  for (int layer = 0; layer < 4; ++layer) {
    Conv2d<double> conv("teacher", 1, 1, kStride2);
    conv.weight.value << 0.5, 1.0, 0.5;
    x = conv.forward(x);
  }
  const Eigen::RowVectorXd kernel = x.data.row(0);  // weight of each window row

  std::normal_distribution<double> normal(0.0, 1.0);
  MatrixX<double> embedding(kCodeDim, kLogitWidth);
  for (Index i = 0; i < embedding.size(); ++i) embedding.data()[i] = normal(rng);
  MatrixX<double> a(kCodeDim, kFlatWindow);
  for (int t = 0; t < kWindowLength; ++t) a.middleCols(t * kLogitWidth, kLogitWidth) = kernel(t) * embedding;
  return a;
}

Eigen::Map<const Eigen::Matrix<float, kFlatWindow, 1>> flatten(const AudioFeatureWindow& window) {
  return Eigen::Map<const Eigen::Matrix<float, kFlatWindow, 1>>(window.data());
}

}  // namespace

nlohmann::json OracleSpec::to_json() const {
  return {{"seed", seed},
          {"persons", persons},
          {"code_preactivation_std", code_preactivation_std},
          {"mapping_std", mapping_std},
          {"logit_noise", logit_noise},
          {"min_segment", min_segment},
          {"max_segment", max_segment},
          {"pose_jitter_deg", pose_jitter_deg},
          {"expression_noise_std", expression_noise_std},
          {"resolution", resolution},
          {"texture_pattern", texture_pattern}};
}

OracleSpec OracleSpec::from_json(const nlohmann::json& j) {
  require(j.is_object(), "oracle settings must be a JSON object");
  OracleSpec s;
  for (const auto& [key, value] : j.items()) {
    if (key == "seed") s.seed = value.get<std::uint64_t>();
    else if (key == "persons") s.persons = value.get<int>();
    else if (key == "code_preactivation_std") s.code_preactivation_std = value.get<double>();
    else if (key == "mapping_std") s.mapping_std = value.get<double>();
    else if (key == "logit_noise") s.logit_noise = value.get<double>();
    else if (key == "min_segment") s.min_segment = value.get<int>();
    else if (key == "max_segment") s.max_segment = value.get<int>();
    else if (key == "pose_jitter_deg") s.pose_jitter_deg = value.get<double>();
    else if (key == "expression_noise_std") s.expression_noise_std = value.get<double>();
    else if (key == "resolution") s.resolution = value.get<int>();
    else if (key == "texture_pattern") s.texture_pattern = value.get<int>();
    else throw InvalidInput("unknown oracle key '" + key + "'");
  }
  require(s.persons >= 1, "oracle needs at least one person");
  require(s.resolution >= 8, "oracle resolution must be at least 8");
  require(s.code_preactivation_std > 0 && s.mapping_std >= 0 && s.logit_noise >= 0 && s.expression_noise_std >= 0,
          "oracle scales must be nonnegative");
  require(s.min_segment >= 1 && s.max_segment >= s.min_segment, "invalid oracle segment lengths");
  require(s.texture_pattern == 0 || s.texture_pattern == 1, "oracle texture pattern must be 0 or 1");
  return s;
}

VectorX<double> OracleWorld::code(const AudioFeatureWindow& window) const {
  return (code_matrix * flatten(window).cast<double>() + code_bias).array().tanh().matrix();
}

LogitStream synthesize_logits(Index logit_rows, double noise, std::uint64_t seed, int min_segment, int max_segment) {
  require(logit_rows >= 1, "logit stream needs at least one row");
  require(min_segment >= 1 && max_segment >= min_segment, "invalid segment length range");
  auto rng = make_rng(seed, 0x10917);
  std::uniform_int_distribution<int> character(0, kLogitWidth - 1);
  std::uniform_int_distribution<int> length(min_segment, max_segment);
  std::normal_distribution<double> normal(0.0, 1.0);

  LogitStream stream;
  stream.frames.setConstant(logit_rows, kLogitWidth, -5.0f);
  int previous = character(rng);
  Index row = 0;
  while (row < logit_rows) {
    const int current = character(rng);
    const int span = length(rng);
    // Linear crossfade from the previous character across the whole segment.
    for (int k = 0; k < span && row < logit_rows; ++k, ++row) {
      const double a = static_cast<double>(k + 1) / span;
      stream.frames(row, previous) += static_cast<float>(10.0 * (1.0 - a));
      stream.frames(row, current) += static_cast<float>(10.0 * a);
    }
    previous = current;
  }
  if (noise > 0)
    for (Index i = 0; i < stream.frames.size(); ++i) stream.frames.data()[i] += static_cast<float>(noise * normal(rng));
  return stream;
}

OracleWorld make_oracle_world(const OracleSpec& spec) {
  OracleWorld world;
  world.spec = spec;
  world.basis = demo_basis(spec.seed);
  auto rng = make_rng(spec.seed, 0xC0DE);

  world.code_matrix = teacher_matrix(rng);
  // Center and scale the pre-activations over a reference stream.
  const auto reference = windows_for_stream(synthesize_logits(2000, spec.logit_noise, spec.seed ^ 0x5EED, spec.min_segment, spec.max_segment));
  MatrixX<double> x(kFlatWindow, static_cast<Index>(reference.size()));
  for (std::size_t i = 0; i < reference.size(); ++i) x.col(static_cast<Index>(i)) = flatten(reference[i]).cast<double>();
  const VectorX<double> mean = x.rowwise().mean();
  const MatrixX<double> centered = world.code_matrix * (x.colwise() - mean);
  const double std_dev = std::sqrt(centered.squaredNorm() / static_cast<double>(centered.size()));
  world.code_matrix *= spec.code_preactivation_std / std_dev;
  world.code_bias = -world.code_matrix * mean;

  std::normal_distribution<double> normal(0.0, 1.0);
  for (int p = 0; p < spec.persons; ++p) {
    MatrixX<double> m(kExpressionDim, kCodeDim);
    for (Index i = 0; i < m.size(); ++i) m.data()[i] = spec.mapping_std * normal(rng);
    world.mappings.push_back(std::move(m));
    VectorX<double> alpha(world.basis.shape_dim());
    for (Index i = 0; i < alpha.size(); ++i) alpha(i) = normal(rng);
    world.shapes.push_back(std::move(alpha));
  }
  return world;
}

Eigen::Vector3d oracle_albedo(int pattern, double u, double v) {
  if (pattern == 1) {
    const bool odd = (static_cast<int>(std::floor(u * 8)) + static_cast<int>(std::floor(v * 8))) % 2 != 0;
    return odd ? Eigen::Vector3d(0.85, 0.7, 0.55) : Eigen::Vector3d(0.45, 0.3, 0.25);
  }
  Eigen::Vector3d color(0.86, 0.64, 0.52);
  color *= 1.0 + 0.08 * std::sin(2 * std::numbers::pi * 6 * u) * std::cos(2 * std::numbers::pi * 4 * v);
  const double mu = (u - 0.5) / 0.16, mv = (v - 0.74) / 0.05;
  const double lips = std::exp(-0.5 * (mu * mu + mv * mv) * (mu * mu + mv * mv));
  color = (1 - lips) * color + lips * Eigen::Vector3d(0.7, 0.25, 0.28);
  for (const double eye_u : {0.32, 0.68}) {
    const double du = (u - eye_u) / 0.07, dv = (v - 0.38) / 0.035;
    const double eye = std::exp(-0.5 * (du * du + dv * dv));
    color = (1 - eye) * color + eye * Eigen::Vector3d(0.15, 0.12, 0.1);
  }
  return color;
}

Image<float> oracle_background(int height, int width) {
  Image<float> bg(3, height, width);
  for (int y = 0; y < height; ++y)
    for (int x = 0; x < width; ++x) {
      const double fx = (x + 0.5) / width, fy = (y + 0.5) / height;
      bg.at(0, y, x) = static_cast<float>(0.2 + 0.3 * fx);
      bg.at(1, y, x) = static_cast<float>(0.3 + 0.2 * fy);
      bg.at(2, y, x) = static_cast<float>(0.55 - 0.2 * fx * fy);
    }
  return bg;
}

Image<float> render_reference(const OracleWorld& world, const Vertices<double>& vertices, const CameraPose& pose,
                              int height, int width) {
  const auto& tri = world.basis.triangles;
  const auto frags = rasterize_fragments(vertices, tri, pose, height, width);
  const Eigen::Vector3d light = Eigen::Vector3d(0.3, -0.4, -1.0).normalized();
  Image<float> image = oracle_background(height, width);
  for (Index p = 0; p < image.pixels(); ++p) {
    const int t = frags.triangle[static_cast<std::size_t>(p)];
    if (t < 0) continue;
    Eigen::Vector2d uv = Eigen::Vector2d::Zero();
    for (int k = 0; k < 3; ++k) uv += frags.barycentric(p, k) * world.basis.uv.row(tri(t, k)).transpose().cast<double>();
    const Eigen::Vector3d a = pose.rotation * vertices.row(tri(t, 0)).transpose();
    const Eigen::Vector3d b = pose.rotation * vertices.row(tri(t, 1)).transpose();
    const Eigen::Vector3d c = pose.rotation * vertices.row(tri(t, 2)).transpose();
    const Eigen::Vector3d n = (b - a).cross(c - a).normalized();
    const double shade = 0.35 + 0.65 * std::abs(n.dot(light));
    const Eigen::Vector3d color = (shade * oracle_albedo(world.spec.texture_pattern, uv.x(), uv.y())).cwiseMin(1.0);
    for (int ch = 0; ch < 3; ++ch) image.data(ch, p) = static_cast<float>(color(ch));
  }
  return image;
}

OracleSequence generate_sequence(const OracleWorld& world, int person, Index frame_count, std::uint64_t sequence_seed,
                                 bool render) {
  require(frame_count >= 3, "oracle sequences need at least 3 frames");
  require(person >= 0 && person < static_cast<int>(world.mappings.size()), "oracle person out of range");
  const auto& spec = world.spec;
  auto rng = make_rng(spec.seed ^ 0xF00D, sequence_seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  std::uniform_real_distribution<double> phase(0.0, 2 * std::numbers::pi);

  OracleSequence seq;
  seq.person = person;
  const Index logit_rows = frame_count * kLogitRateHz / static_cast<Index>(kVideoFps);
  seq.logits = synthesize_logits(logit_rows, spec.logit_noise, sequence_seed * 7919 + spec.seed, spec.min_segment,
                                 spec.max_segment);
  require(video_frame_count(seq.logits) == frame_count, "oracle logit length does not match the frame count");

  seq.codes.resize(frame_count, kCodeDim);
  seq.deltas.resize(frame_count, kExpressionDim);
  const auto& mapping = world.mappings[static_cast<std::size_t>(person)];
  for (Index t = 0; t < frame_count; ++t) {
    seq.codes.row(t) = world.code(window_for_frame(seq.logits, t)).transpose();
    seq.deltas.row(t) = (mapping * seq.codes.row(t).transpose()).transpose();
  }
  if (spec.expression_noise_std > 0)
    for (Index i = 0; i < seq.deltas.size(); ++i) seq.deltas.data()[i] += spec.expression_noise_std * normal(rng);

  const auto& alpha = world.shapes[static_cast<std::size_t>(person)];
  for (Index t = 0; t < frame_count; ++t)
    seq.vertices.push_back(reconstruct_vertices(world.basis, alpha, VectorX<double>(seq.deltas.row(t).transpose())));
  if (!render) return seq;

  const double jitter = spec.pose_jitter_deg * std::numbers::pi / 180.0;
  const std::array<double, 3> phases{phase(rng), phase(rng), phase(rng)};
  const int res = spec.resolution;
  for (Index t = 0; t < frame_count; ++t) {
    const double s = 2 * std::numbers::pi * static_cast<double>(t) / 40.0;
    CameraPose pose;
    pose.rotation = rotation_from_angles(jitter * std::sin(s + phases[0]), jitter * std::sin(0.7 * s + phases[1]),
                                         jitter * std::sin(1.3 * s + phases[2]));
    pose.translation = Eigen::Vector3d(3.0 * std::sin(0.5 * s), 2.0 * std::cos(0.5 * s), 500.0);
    UVMap uv = rasterize(seq.vertices[static_cast<std::size_t>(t)], world.basis.triangles, world.basis.uv, pose, res, res);
    seq.images.push_back(render_reference(world, seq.vertices[static_cast<std::size_t>(t)], pose, res, res));
    seq.masks.push_back(uv.coverage());
    seq.uvmaps.push_back(std::move(uv));
    seq.poses.push_back(pose);
  }
  return seq;
}

}  // namespace reenact
