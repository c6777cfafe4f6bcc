#pragma once

#include "reenact/a2e_network.hpp"
#include "reenact/face_model.hpp"
#include "reenact/losses.hpp"
#include "reenact/neural_renderer.hpp"
#include "reenact/tensor_file.hpp"

#include <nlohmann/json.hpp>

#include <functional>
#include <memory>
#include <optional>
#include <string>
#include <vector>

namespace reenact {

struct AdamSettings {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
};

struct TrainingConfig {
  double learning_rate = 1e-4;
  int epochs = 50;
  int decay_epochs = 30;  // linear decay to zero over the final epochs
  int batch_size = 16;
  std::uint64_t seed = 0;
  double lambda = 20.0;
  double mouth_weight = 10.0;
  double validation_fraction = 0.1;
  AdamSettings adam;

  nlohmann::json to_json() const;
  /// Overrides the fields present in `j`; unknown keys raise InvalidInput.
  void update_from_json(const nlohmann::json& j);
  void validate() const;
};

/// Learning rate for 1-based `epoch`: constant for the first epochs - decay_epochs
/// epochs, then base * (epochs - epoch) / span with span = min(decay_epochs, epochs).
double learning_rate_at(const TrainingConfig& config, int epoch);

/// Adam with bias correction over a fixed parameter list.
template <typename Scalar>
class Adam {
 public:
  Adam() = default;
  Adam(std::vector<Param<Scalar>*> params, AdamSettings settings);

  void step(double learning_rate);
  std::int64_t steps() const { return steps_; }

  void save(TensorFile& file, const std::string& prefix = "adam.") const;
  void load(const TensorFile& file, const std::string& prefix = "adam.");

 private:
  std::vector<Param<Scalar>*> params_;
  std::vector<MatrixX<Scalar>> m_;
  std::vector<MatrixX<Scalar>> v_;
  AdamSettings settings_;
  std::int64_t steps_ = 0;
};

struct EpochRecord {
  int epoch = 0;
  double learning_rate = 0;
  std::int64_t step = 0;
  double train_loss = 0;       // mean over the epoch's batches
  double validation_loss = 0;  // after the epoch; NaN when there is no validation split
};

using LogSink = std::function<void(const nlohmann::json&)>;

// ------------------------------------------------------------------ stage 1

/// One tracked sequence: a window and visually tracked expression per video frame.
struct ExpressionSequence {
  std::string name;
  std::vector<AudioFeatureWindow> windows;
  MatrixX<double> deltas;  // N x 76

  Index frame_count() const { return static_cast<Index>(windows.size()); }
};

/// Network plus one person mapping per training sequence.
template <typename Scalar>
struct A2EState {
  A2ENetwork<Scalar> net;
  std::vector<Param<Scalar>> mappings;  // 76 x 32 each

  std::vector<Param<Scalar>*> parameters();
  void zero_grad();
};

/// A frame triplet (center - 1, center, center + 1) of one sequence.
struct TripletRef {
  int sequence = 0;
  Index center = 0;
};

/// Mean expression loss over `batch`. Residual vertices depend only on the
/// expression basis since mean and identity terms cancel. With
/// `with_gradients`, parameter gradients of the mean are accumulated.
template <typename Scalar>
Scalar a2e_batch_loss(A2EState<Scalar>& state, const std::vector<ExpressionSequence>& data,
                      const std::vector<TripletRef>& batch, const MatrixX<Scalar>& expression_basis,
                      const VectorX<Scalar>& vertex_weights, Scalar lambda, bool with_gradients);

/// Training and validation triplets: the last `validation_fraction` of every
/// sequence is held out; triplets never straddle the split.
struct TripletSplit {
  std::vector<TripletRef> train;
  std::vector<TripletRef> validation;
};
TripletSplit split_triplets(const std::vector<ExpressionSequence>& data, double validation_fraction);

class A2ETrainer {
 public:
  A2ETrainer(std::vector<ExpressionSequence> data, const FaceBasis<double>& basis, TrainingConfig config);

  /// Xavier network weights and zero mappings from config.seed.
  void initialize();
  /// Runs the next epoch; throws TrainingDiverged on a non-finite loss.
  EpochRecord run_epoch();
  /// Runs the remaining epochs, tracking the best validation state.
  void run(const LogSink& log = {});

  double evaluate(const std::vector<TripletRef>& triplets);
  double train_loss() { return evaluate(split_.train); }
  double validation_loss() { return evaluate(split_.validation); }

  void save_checkpoint(const std::filesystem::path& path) const;
  void load_checkpoint(const std::filesystem::path& path);

  const A2EState<float>& state() const { return state_; }
  A2EState<float>& state() { return state_; }
  const std::optional<A2EState<float>>& best_state() const { return best_; }
  int best_epoch() const { return best_epoch_; }
  const std::vector<EpochRecord>& history() const { return history_; }
  int epoch() const { return epoch_; }
  const TrainingConfig& config() const { return config_; }
  const std::vector<ExpressionSequence>& data() const { return data_; }
  const TripletSplit& split() const { return split_; }

 private:
  std::vector<ExpressionSequence> data_;
  TrainingConfig config_;
  MatrixX<float> expression_basis_;
  VectorX<float> weights_;
  TripletSplit split_;
  A2EState<float> state_;
  Adam<float> adam_;
  std::optional<A2EState<float>> best_;
  double best_loss_ = 0;
  int best_epoch_ = 0;
  int epoch_ = 0;
  std::vector<EpochRecord> history_;
};

/// Checkpoint of a trained network (and mappings) with descriptor kind "a2e".
void save_a2e_checkpoint(const std::filesystem::path& path, const A2EState<float>& state,
                         const std::vector<std::string>& sequence_names, const nlohmann::json& extra = {});
A2EState<float> load_a2e_checkpoint(const std::filesystem::path& path, std::vector<std::string>* sequence_names = nullptr,
                                    TensorFile* raw = nullptr);

/// Fits a person mapping for a new target from its filtered codes and tracked deltas.
MappingFit adapt_new_target(const A2ENetwork<float>& net, const std::vector<AudioFeatureWindow>& windows,
                            const MatrixX<double>& deltas, double ridge = 0.0);

void save_person_mapping(const std::filesystem::path& path, const MappingFit& fit, const std::string& sequence);
MatrixX<double> load_person_mapping(const std::filesystem::path& path);

// ------------------------------------------------------------------ stage 2

struct TargetFrame {
  Image<float> reference;  // also the background that is eroded around the face
  UVMap uvmap;
  Mask interior;
};

class RendererTrainer {
 public:
  RendererTrainer(std::vector<TargetFrame> frames, RendererConfig renderer_config, TrainingConfig config,
                  const std::string& perceptual = "gradient");

  void initialize();
  EpochRecord run_epoch();
  void run(const LogSink& log = {});

  /// Mean per-pixel l1 of the final image over every frame.
  double mean_l1() const;
  /// Mean rendering loss over every frame.
  double mean_loss() const;

  void save_checkpoint(const std::filesystem::path& path) const;
  void load_checkpoint(const std::filesystem::path& path);

  const NeuralRenderer<float>& renderer() const { return renderer_; }
  NeuralRenderer<float>& renderer() { return renderer_; }
  const std::vector<EpochRecord>& history() const { return history_; }
  int epoch() const { return epoch_; }

 private:
  std::vector<TargetFrame> frames_;
  TrainingConfig config_;
  NeuralRenderer<float> renderer_;
  std::unique_ptr<PerceptualLoss<float>> perceptual_;
  Adam<float> adam_;
  int epoch_ = 0;
  std::vector<EpochRecord> history_;
};

void save_renderer_checkpoint(const std::filesystem::path& path, NeuralRenderer<float>& renderer,
                              const nlohmann::json& extra = {});
NeuralRenderer<float> load_renderer_checkpoint(const std::filesystem::path& path, TensorFile* raw = nullptr);

}  // namespace reenact
