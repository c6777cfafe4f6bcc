#pragma once

#include "reenact/audio_features.hpp"
#include "reenact/face_model.hpp"
#include "reenact/image.hpp"
#include "reenact/neural_renderer.hpp"

#include <cstdint>
#include <vector>

namespace reenact {

/// Parameters of the synthetic ground-truth world.
struct OracleSpec {
  std::uint64_t seed = 1;
  int persons = 3;
  double code_preactivation_std = 0.6;  // std of the code function's pre-TanH values over generated windows
  double mapping_std = 0.1;             // entries of each person's true 76 x 32 mapping
  double logit_noise = 0.1;
  int min_segment = 3;  // logit rows per phoneme-like segment
  int max_segment = 8;
  double pose_jitter_deg = 3.0;
  double expression_noise_std = 0.0;  // Gaussian noise added to emitted deltas only
  int resolution = 64;
  int texture_pattern = 0;  // 0: skin with stripes, 1: checker

  nlohmann::json to_json() const;
  static OracleSpec from_json(const nlohmann::json& j);
};

/// The fixed generative world shared by every sequence of one spec.
///
/// The code function is tanh(A * vec(window) + b), where A applies a random
/// character embedding to every window row and sums the rows under a smooth
/// temporal kernel. The per-frame regressor's conv stack can represent it.
struct OracleWorld {
  OracleSpec spec;
  FaceBasis<double> basis;
  MatrixX<double> code_matrix;  // 32 x 464, acting on the row-major flattened window
  VectorX<double> code_bias;    // 32
  std::vector<MatrixX<double>> mappings;  // true 76 x 32 map per person
  std::vector<VectorX<double>> shapes;    // identity coefficients per person

  VectorX<double> code(const AudioFeatureWindow& window) const;
};

OracleWorld make_oracle_world(const OracleSpec& spec);

struct OracleSequence {
  int person = 0;
  LogitStream logits;
  MatrixX<double> codes;   // N x 32
  MatrixX<double> deltas;  // N x 76, deltas.row(t) = M* codes.row(t) (+ optional noise)
  std::vector<Vertices<double>> vertices;
  std::vector<CameraPose> poses;
  std::vector<UVMap> uvmaps;
  std::vector<Image<float>> images;
  std::vector<Mask> masks;

  Index frame_count() const { return codes.rows(); }
};

/// Synthesizes `logit_rows` rows of a 50 Hz logit stream: segments of
/// min_segment..max_segment rows, each crossfading linearly from the previous
/// character's peak to its own, plus Gaussian noise.
LogitStream synthesize_logits(Index logit_rows, double noise, std::uint64_t seed, int min_segment = 3,
                              int max_segment = 8);

/// A sequence of `frame_count` video frames for `person`. Images, UV maps,
/// poses and masks are produced only when `render` is set.
OracleSequence generate_sequence(const OracleWorld& world, int person, Index frame_count, std::uint64_t sequence_seed,
                                 bool render = true);

/// Flat-shaded reference rendering of posed vertices over the oracle background.
Image<float> render_reference(const OracleWorld& world, const Vertices<double>& vertices, const CameraPose& pose,
                              int height, int width);

/// Smooth gradient backdrop behind the face.
Image<float> oracle_background(int height, int width);

/// Ground-truth surface color at texture coordinate (u, v).
Eigen::Vector3d oracle_albedo(int pattern, double u, double v);

}  // namespace reenact
