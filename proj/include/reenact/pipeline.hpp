#pragma once

#include "reenact/a2e_network.hpp"
#include "reenact/dataset.hpp"
#include "reenact/neural_renderer.hpp"
#include "reenact/synthetic_oracle.hpp"
#include "reenact/training.hpp"

#include <nlohmann/json.hpp>

#include <filesystem>
#include <optional>
#include <ostream>
#include <string>
#include <vector>

namespace reenact {

/// Project configuration (JSON). Unknown keys are rejected at every level;
/// relative paths resolve against the configuration file's directory.
struct ProjectConfig {
  std::filesystem::path data_root = "corpus";
  std::optional<std::uint64_t> seed;
  std::vector<std::string> sequences;  // stage-1 sequences; empty = every sequence except the target
  std::string target = "target";
  int resolution = 64;
  OracleSpec oracle;
  Index corpus_frames = 300;
  Index target_frames = 20;
  Index renderer_frames = -1;  // leading target frames the renderer trains on; -1 = all
  TrainingConfig a2e;
  TrainingConfig renderer_training;
  RendererConfig renderer;
  bool erosion_radius_set = false;
  std::string perceptual = "gradient";
  double ridge = 0.0;
  Index evaluation_first_frame = 0;
  Index evaluation_frame_count = -1;  // -1 = through the renderer's last training frame

  static ProjectConfig load(const std::filesystem::path& path);
  /// Applies a seed to every stage.
  void set_seed(std::uint64_t value);
  void set_resolution(int value);
};

/// Mean over pixels of the RGB Euclidean distance divided by sqrt(3), so the value lies in [0, 1].
double mean_color_distance(const Image<float>& a, const Image<float>& b);

struct InferenceTiming {
  double mapping_ms = 0;
  double rasterization_ms = 0;
  double rendering_ms = 0;
  Index frames = 0;

  nlohmann::json to_json() const;
};

/// Per-frame expression coefficients (N x 76) predicted from a logit stream.
MatrixX<double> audio_expressions(const A2ENetwork<float>& net, const MatrixX<double>& mapping,
                                  const LogitStream& logits);

/// Renders one frame of the target from expression coefficients.
Image<float> render_expression(const NeuralRenderer<float>& renderer, const FaceBasis<double>& basis,
                               const VectorX<double>& shape, const VectorX<double>& delta, const CameraPose& pose,
                               const Image<float>& background, InferenceTiming* timing = nullptr);

/// A directory built under a temporary sibling and moved onto its final path by commit().
class StagedDirectory {
 public:
  explicit StagedDirectory(std::filesystem::path target);
  ~StagedDirectory();
  StagedDirectory(const StagedDirectory&) = delete;
  StagedDirectory& operator=(const StagedDirectory&) = delete;

  const std::filesystem::path& path() const { return temp_; }
  void commit();

 private:
  std::filesystem::path target_;
  std::filesystem::path temp_;
  bool committed_ = false;
};

/// Command-line entry point. Exit codes: 0 success, 2 validation error, 3 runtime failure.
int run_cli(int argc, const char* const* argv, std::ostream& out, std::ostream& err);

}  // namespace reenact
