#include "reenact/training.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <map>
#include <random>

namespace reenact {

namespace {

std::mt19937_64 epoch_rng(std::uint64_t seed, int epoch) {
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                    static_cast<std::uint32_t>(epoch), 0x5u};
  return std::mt19937_64(seq);
}

nlohmann::json history_to_json(const std::vector<EpochRecord>& history) {
  nlohmann::json out = nlohmann::json::array();
  for (const auto& r : history) {
    out.push_back({{"epoch", r.epoch},
                   {"lr", r.learning_rate},
                   {"step", r.step},
                   {"train_loss", r.train_loss},
                   {"validation_loss", std::isfinite(r.validation_loss) ? nlohmann::json(r.validation_loss)
                                                                       : nlohmann::json(nullptr)}});
  }
  return out;
}

std::vector<EpochRecord> history_from_json(const nlohmann::json& j) {
  std::vector<EpochRecord> out;
  for (const auto& r : j) {
    EpochRecord rec;
    rec.epoch = r.at("epoch").get<int>();
    rec.learning_rate = r.at("lr").get<double>();
    rec.step = r.at("step").get<std::int64_t>();
    rec.train_loss = r.at("train_loss").get<double>();
    rec.validation_loss = r.at("validation_loss").is_null() ? std::numeric_limits<double>::quiet_NaN()
                                                            : r.at("validation_loss").get<double>();
    out.push_back(rec);
  }
  return out;
}

nlohmann::json record_to_json(const std::string& stage, const EpochRecord& r) {
  nlohmann::json j = history_to_json({r})[0];
  j["stage"] = stage;
  return j;
}

std::string mapping_name(std::size_t i) { return "mapping." + std::to_string(i); }

}  // namespace

// ---------------------------------------------------------------- config

nlohmann::json TrainingConfig::to_json() const {
  return {{"learning_rate", learning_rate},
          {"epochs", epochs},
          {"decay_epochs", decay_epochs},
          {"batch_size", batch_size},
          {"seed", seed},
          {"lambda", lambda},
          {"mouth_weight", mouth_weight},
          {"validation_fraction", validation_fraction},
          {"beta1", adam.beta1},
          {"beta2", adam.beta2},
          {"epsilon", adam.epsilon}};
}

void TrainingConfig::update_from_json(const nlohmann::json& j) {
  require(j.is_object(), "training settings must be a JSON object");
  // Applied to a copy so a rejected update leaves *this untouched.
  TrainingConfig next = *this;
  try {
    for (const auto& [key, value] : j.items()) {
      if (key == "learning_rate") next.learning_rate = value.get<double>();
      else if (key == "epochs") next.epochs = value.get<int>();
      else if (key == "decay_epochs") next.decay_epochs = value.get<int>();
      else if (key == "batch_size") next.batch_size = value.get<int>();
      else if (key == "seed") next.seed = value.get<std::uint64_t>();
      else if (key == "lambda") next.lambda = value.get<double>();
      else if (key == "mouth_weight") next.mouth_weight = value.get<double>();
      else if (key == "validation_fraction") next.validation_fraction = value.get<double>();
      else if (key == "beta1") next.adam.beta1 = value.get<double>();
      else if (key == "beta2") next.adam.beta2 = value.get<double>();
      else if (key == "epsilon") next.adam.epsilon = value.get<double>();
      else throw InvalidInput("unknown training key '" + key + "'");
    }
  } catch (const nlohmann::json::type_error& e) {
    throw InvalidInput(std::string("training settings: ") + e.what());
  }
  next.validate();
  *this = next;
}

void TrainingConfig::validate() const {
  require(learning_rate > 0 && std::isfinite(learning_rate), "learning rate must be positive");
  require(epochs >= 0, "epoch count must be nonnegative");
  require(decay_epochs >= 0, "decay epoch count must be nonnegative");
  require(batch_size >= 1, "batch size must be positive");
  require(lambda >= 0, "temporal weight must be nonnegative");
  require(mouth_weight >= 0, "mouth weight must be nonnegative");
  require(validation_fraction >= 0 && validation_fraction < 1, "validation fraction must lie in [0, 1)");
  require(adam.beta1 >= 0 && adam.beta1 < 1 && adam.beta2 >= 0 && adam.beta2 < 1 && adam.epsilon > 0,
          "invalid Adam settings");
}

double learning_rate_at(const TrainingConfig& config, int epoch) {
  require(epoch >= 1 && epoch <= config.epochs, "epoch out of range for the schedule");
  const int span = std::min(config.decay_epochs, config.epochs);
  const int constant = config.epochs - span;
  if (epoch <= constant) return config.learning_rate;
  return config.learning_rate * static_cast<double>(config.epochs - epoch) / static_cast<double>(span);
}

// ------------------------------------------------------------------ Adam

template <typename Scalar>
Adam<Scalar>::Adam(std::vector<Param<Scalar>*> params, AdamSettings settings)
    : params_(std::move(params)), settings_(settings) {
  for (const auto* p : params_) {
    m_.push_back(MatrixX<Scalar>::Zero(p->value.rows(), p->value.cols()));
    v_.push_back(MatrixX<Scalar>::Zero(p->value.rows(), p->value.cols()));
  }
}

template <typename Scalar>
void Adam<Scalar>::step(double learning_rate) {
  ++steps_;
  const auto b1 = static_cast<Scalar>(settings_.beta1), b2 = static_cast<Scalar>(settings_.beta2);
  const auto eps = static_cast<Scalar>(settings_.epsilon);
  const auto t = static_cast<double>(steps_);
  const auto c1 = static_cast<Scalar>(1.0 - std::pow(settings_.beta1, t));
  const auto c2 = static_cast<Scalar>(1.0 - std::pow(settings_.beta2, t));
  const auto lr = static_cast<Scalar>(learning_rate);
  for (std::size_t i = 0; i < params_.size(); ++i) {
    auto& p = *params_[i];
    m_[i] = b1 * m_[i] + (Scalar(1) - b1) * p.grad;
    v_[i] = b2 * v_[i] + (Scalar(1) - b2) * p.grad.cwiseAbs2();
    p.value.array() -= lr * (m_[i].array() / c1) / ((v_[i].array() / c2).sqrt() + eps);
  }
}

template <typename Scalar>
void Adam<Scalar>::save(TensorFile& file, const std::string& prefix) const {
  file.descriptor[prefix + "steps"] = steps_;
  for (std::size_t i = 0; i < params_.size(); ++i) {
    file.put_cast(prefix + "m." + params_[i]->name, m_[i]);
    file.put_cast(prefix + "v." + params_[i]->name, v_[i]);
  }
}

template <typename Scalar>
void Adam<Scalar>::load(const TensorFile& file, const std::string& prefix) {
  if (!file.descriptor.contains(prefix + "steps")) throw IncompatibleCheckpoint("checkpoint lacks optimizer state");
  steps_ = file.descriptor.at(prefix + "steps").get<std::int64_t>();
  for (std::size_t i = 0; i < params_.size(); ++i) {
    const auto& p = *params_[i];
    m_[i] = file.get(prefix + "m." + p.name, p.value.rows(), p.value.cols()).template cast<Scalar>();
    v_[i] = file.get(prefix + "v." + p.name, p.value.rows(), p.value.cols()).template cast<Scalar>();
  }
}

template class Adam<float>;
template class Adam<double>;

// ---------------------------------------------------------------- stage 1

template <typename Scalar>
std::vector<Param<Scalar>*> A2EState<Scalar>::parameters() {
  auto out = net.parameters();
  for (auto& m : mappings) out.push_back(&m);
  return out;
}

template <typename Scalar>
void A2EState<Scalar>::zero_grad() {
  for (auto* p : parameters()) p->zero_grad();
}

template <typename Scalar>
Scalar a2e_batch_loss(A2EState<Scalar>& state, const std::vector<ExpressionSequence>& data,
                      const std::vector<TripletRef>& batch, const MatrixX<Scalar>& expression_basis,
                      const VectorX<Scalar>& vertex_weights, Scalar lambda, bool with_gradients) {
  require(!batch.empty(), "batch must not be empty");
  require(expression_basis.cols() == kExpressionDim, "expression basis must have 76 columns");
  const Index vertex_count = expression_basis.rows() / 3;
  require(vertex_weights.size() == vertex_count, "vertex weights do not match the expression basis");
  const int frames = static_cast<int>(3 * batch.size());

  // Unique windows feeding every filter tap of every frame in the batch.
  std::map<std::pair<int, Index>, Index> column_of;
  std::vector<const AudioFeatureWindow*> windows;
  std::vector<std::array<Index, kFilterTaps>> taps(static_cast<std::size_t>(frames));
  for (std::size_t b = 0; b < batch.size(); ++b) {
    const auto& ref = batch[b];
    require(ref.sequence >= 0 && ref.sequence < static_cast<int>(data.size()) &&
                ref.sequence < static_cast<int>(state.mappings.size()),
            "triplet refers to an unknown sequence");
    const auto& seq = data[static_cast<std::size_t>(ref.sequence)];
    const Index n = seq.frame_count();
    require(ref.center >= 1 && ref.center + 1 < n, "triplet center must have both neighbors");
    for (int k = 0; k < 3; ++k) {
      const Index f = ref.center - 1 + k;
      for (int h = 0; h < kFilterTaps; ++h) {
        const auto key = std::make_pair(ref.sequence, filter_tap_frame(f, h, n));
        auto [it, inserted] = column_of.try_emplace(key, static_cast<Index>(windows.size()));
        if (inserted) windows.push_back(&seq.windows[static_cast<std::size_t>(key.second)]);
        taps[3 * b + static_cast<std::size_t>(k)][static_cast<std::size_t>(h)] = it->second;
      }
    }
  }

  typename PerFrameNet<Scalar>::Cache pf_cache;
  typename FilterNet<Scalar>::Cache f_cache;
  const MatrixX<Scalar> z = state.net.per_frame.forward(windows, with_gradients ? &pf_cache : nullptr);
  Image<Scalar> packed(kCodeDim, kFilterTaps, frames);
  for (int j = 0; j < frames; ++j)
    for (int h = 0; h < kFilterTaps; ++h)
      packed.data.col(Index{h} * frames + j) = z.col(taps[static_cast<std::size_t>(j)][static_cast<std::size_t>(h)]);
  const MatrixX<Scalar> w = state.net.filter.forward(packed, with_gradients ? &f_cache : nullptr);
  MatrixX<Scalar> codes = MatrixX<Scalar>::Zero(kCodeDim, frames);
  for (int j = 0; j < frames; ++j)
    for (int h = 0; h < kFilterTaps; ++h)
      codes.col(j) += w(h, j) * z.col(taps[static_cast<std::size_t>(j)][static_cast<std::size_t>(h)]);

  const auto inv_batch = Scalar(1) / static_cast<Scalar>(batch.size());
  MatrixX<Scalar> grad_codes;
  if (with_gradients) grad_codes = MatrixX<Scalar>::Zero(kCodeDim, frames);
  Scalar total = 0;
  for (std::size_t b = 0; b < batch.size(); ++b) {
    const auto& ref = batch[b];
    const auto& seq = data[static_cast<std::size_t>(ref.sequence)];
    auto& mapping = state.mappings[static_cast<std::size_t>(ref.sequence)];
    std::array<Vertices<Scalar>, 3> residuals;
    for (int k = 0; k < 3; ++k) {
      const auto j = static_cast<Index>(3 * b) + k;
      const VectorX<Scalar> delta_error =
          mapping.value * codes.col(j) - seq.deltas.row(ref.center - 1 + k).transpose().template cast<Scalar>();
      const VectorX<Scalar> flat = expression_basis * delta_error;
      residuals[static_cast<std::size_t>(k)] = Eigen::Map<const Vertices<Scalar>>(flat.data(), vertex_count, 3);
    }
    std::array<Vertices<Scalar>, 3> grads;
    total += expression_loss_residuals(residuals, vertex_weights, lambda, with_gradients ? &grads : nullptr);
    if (!with_gradients) continue;
    for (int k = 0; k < 3; ++k) {
      const auto j = static_cast<Index>(3 * b) + k;
      const auto& g = grads[static_cast<std::size_t>(k)];
      const VectorX<Scalar> grad_delta =
          inv_batch * (expression_basis.transpose() * Eigen::Map<const VectorX<Scalar>>(g.data(), 3 * vertex_count));
      mapping.grad += grad_delta * codes.col(j).transpose();
      grad_codes.col(j) = mapping.value.transpose() * grad_delta;
    }
  }
  if (!with_gradients) return total * inv_batch;

  MatrixX<Scalar> grad_w(kFilterTaps, frames);
  MatrixX<Scalar> grad_z = MatrixX<Scalar>::Zero(kCodeDim, z.cols());
  for (int j = 0; j < frames; ++j)
    for (int h = 0; h < kFilterTaps; ++h) {
      const Index col = taps[static_cast<std::size_t>(j)][static_cast<std::size_t>(h)];
      grad_w(h, j) = z.col(col).dot(grad_codes.col(j));
      grad_z.col(col) += w(h, j) * grad_codes.col(j);
    }
  const Image<Scalar> grad_packed = state.net.filter.backward(f_cache, grad_w);
  for (int j = 0; j < frames; ++j)
    for (int h = 0; h < kFilterTaps; ++h)
      grad_z.col(taps[static_cast<std::size_t>(j)][static_cast<std::size_t>(h)]) +=
          grad_packed.data.col(Index{h} * frames + j);
  state.net.per_frame.backward(pf_cache, grad_z);
  return total * inv_batch;
}

TripletSplit split_triplets(const std::vector<ExpressionSequence>& data, double validation_fraction) {
  TripletSplit split;
  for (std::size_t s = 0; s < data.size(); ++s) {
    const Index n = data[s].frame_count();
    const auto held_out = static_cast<Index>(std::llround(validation_fraction * static_cast<double>(n)));
    const Index train_end = n - held_out;  // frames [0, train_end) train, [train_end, n) validate
    for (Index c = 1; c + 1 < train_end; ++c) split.train.push_back({static_cast<int>(s), c});
    for (Index c = train_end + 1; c + 1 < n; ++c) split.validation.push_back({static_cast<int>(s), c});
  }
  return split;
}

A2ETrainer::A2ETrainer(std::vector<ExpressionSequence> data, const FaceBasis<double>& basis, TrainingConfig config)
    : data_(std::move(data)), config_(config) {
  config_.validate();
  require(!data_.empty(), "stage-1 training needs at least one sequence");
  validate(basis);
  require(basis.expression_dim() == kExpressionDim, "face basis must have 76 expression modes");
  for (const auto& seq : data_) {
    require(seq.frame_count() >= 3, "sequence '" + seq.name + "' needs at least 3 frames");
    require(seq.deltas.rows() == seq.frame_count() && seq.deltas.cols() == kExpressionDim,
            "sequence '" + seq.name + "' has inconsistent expression data");
  }
  expression_basis_ = basis.expression_basis.cast<float>();
  weights_ = make_vertex_weights<float>(basis.mouth_mask, static_cast<float>(config_.mouth_weight));
  split_ = split_triplets(data_, config_.validation_fraction);
  require(!split_.train.empty(), "no complete training triplets after the validation split");
  initialize();
}

void A2ETrainer::initialize() {
  state_ = A2EState<float>{};
  state_.net.init_xavier(config_.seed);
  state_.mappings.clear();
  for (std::size_t i = 0; i < data_.size(); ++i) state_.mappings.emplace_back(mapping_name(i), kExpressionDim, kCodeDim);
  adam_ = Adam<float>(state_.parameters(), config_.adam);
  best_.reset();
  best_loss_ = 0;
  best_epoch_ = 0;
  epoch_ = 0;
  history_.clear();
}

double A2ETrainer::evaluate(const std::vector<TripletRef>& triplets) {
  if (triplets.empty()) return std::numeric_limits<double>::quiet_NaN();
  constexpr std::size_t kChunk = 64;
  double total = 0;
  for (std::size_t i = 0; i < triplets.size(); i += kChunk) {
    const std::vector<TripletRef> chunk(triplets.begin() + static_cast<std::ptrdiff_t>(i),
                                        triplets.begin() + static_cast<std::ptrdiff_t>(std::min(triplets.size(), i + kChunk)));
    total += static_cast<double>(a2e_batch_loss(state_, data_, chunk, expression_basis_, weights_,
                                                static_cast<float>(config_.lambda), false)) *
             static_cast<double>(chunk.size());
  }
  return total / static_cast<double>(triplets.size());
}

EpochRecord A2ETrainer::run_epoch() {
  const int epoch = epoch_ + 1;
  require(epoch <= config_.epochs, "training already completed every configured epoch");
  EpochRecord rec;
  rec.epoch = epoch;
  rec.learning_rate = learning_rate_at(config_, epoch);
  auto order = split_.train;
  auto rng = epoch_rng(config_.seed, epoch);
  std::shuffle(order.begin(), order.end(), rng);
  const auto batch_size = static_cast<std::size_t>(config_.batch_size);
  double total = 0;
  int batches = 0;
  for (std::size_t i = 0; i < order.size(); i += batch_size, ++batches) {
    const std::vector<TripletRef> batch(order.begin() + static_cast<std::ptrdiff_t>(i),
                                        order.begin() + static_cast<std::ptrdiff_t>(std::min(order.size(), i + batch_size)));
    state_.zero_grad();
    const float loss = a2e_batch_loss(state_, data_, batch, expression_basis_, weights_,
                                      static_cast<float>(config_.lambda), true);
    if (!std::isfinite(loss))
      throw TrainingDiverged("non-finite expression loss at epoch " + std::to_string(epoch) + ", batch " +
                                 std::to_string(batches),
                             epoch, batches);
    adam_.step(rec.learning_rate);
    total += loss;
  }
  rec.train_loss = total / batches;
  rec.step = adam_.steps();
  rec.validation_loss = validation_loss();
  epoch_ = epoch;
  history_.push_back(rec);
  return rec;
}

void A2ETrainer::run(const LogSink& log) {
  while (epoch_ < config_.epochs) {
    const auto rec = run_epoch();
    const double score = std::isfinite(rec.validation_loss) ? rec.validation_loss : rec.train_loss;
    if (!best_ || score < best_loss_) {
      best_ = state_;
      best_loss_ = score;
      best_epoch_ = rec.epoch;
    }
    if (log) log(record_to_json("a2e", rec));
  }
}

void A2ETrainer::save_checkpoint(const std::filesystem::path& path) const {
  TensorFile file;
  std::vector<std::string> names;
  for (const auto& seq : data_) names.push_back(seq.name);
  file.descriptor = {{"kind", "a2e"},
                     {"architecture", a2e_architecture()},
                     {"sequences", names},
                     {"epoch", epoch_},
                     {"config", config_.to_json()},
                     {"history", history_to_json(history_)},
                     {"best_epoch", best_epoch_},
                     {"best_loss", best_loss_}};
  auto& mutable_state = const_cast<A2EState<float>&>(state_);
  put_params(file, mutable_state.parameters());
  adam_.save(file);
  if (best_) put_params(file, const_cast<A2EState<float>&>(*best_).parameters(), "best.");
  file.save(path);
}

void A2ETrainer::load_checkpoint(const std::filesystem::path& path) {
  std::vector<std::string> names;
  TensorFile file;
  state_ = load_a2e_checkpoint(path, &names, &file);
  std::vector<std::string> expected;
  for (const auto& seq : data_) expected.push_back(seq.name);
  if (names != expected) throw IncompatibleCheckpoint("checkpoint was trained on different sequences");
  adam_ = Adam<float>(state_.parameters(), config_.adam);
  adam_.load(file);
  try {
    epoch_ = file.descriptor.at("epoch").get<int>();
    history_ = history_from_json(file.descriptor.at("history"));
    best_epoch_ = file.descriptor.at("best_epoch").get<int>();
    best_loss_ = file.descriptor.at("best_loss").get<double>();
  } catch (const nlohmann::json::exception& e) {
    throw IncompatibleCheckpoint(std::string("checkpoint lacks training state: ") + e.what());
  }
  best_.reset();
  if (best_epoch_ > 0) {
    best_ = state_;
    get_params(file, best_->parameters(), "best.");
  }
}

void save_a2e_checkpoint(const std::filesystem::path& path, const A2EState<float>& state,
                         const std::vector<std::string>& sequence_names, const nlohmann::json& extra) {
  require(sequence_names.size() == state.mappings.size(), "one sequence name per mapping is required");
  TensorFile file;
  file.descriptor = {{"kind", "a2e"}, {"architecture", a2e_architecture()}, {"sequences", sequence_names}};
  if (extra.is_object())
    for (const auto& [key, value] : extra.items()) file.descriptor[key] = value;
  put_params(file, const_cast<A2EState<float>&>(state).parameters());
  file.save(path);
}

A2EState<float> load_a2e_checkpoint(const std::filesystem::path& path, std::vector<std::string>* sequence_names,
                                    TensorFile* raw) {
  TensorFile file = TensorFile::load(path);
  const auto& d = file.descriptor;
  if (d.value("kind", "") != "a2e")
    throw IncompatibleCheckpoint(path.string() + " is not an audio-to-expression checkpoint");
  if (!d.contains("architecture") || d.at("architecture") != a2e_architecture())
    throw IncompatibleCheckpoint(path.string() + ": network architecture does not match this build");
  std::vector<std::string> names;
  try {
    names = d.at("sequences").get<std::vector<std::string>>();
  } catch (const nlohmann::json::exception& e) {
    throw IncompatibleCheckpoint(path.string() + ": missing sequence list");
  }
  A2EState<float> state;
  for (std::size_t i = 0; i < names.size(); ++i) state.mappings.emplace_back(mapping_name(i), kExpressionDim, kCodeDim);
  get_params(file, state.parameters());
  if (sequence_names) *sequence_names = std::move(names);
  if (raw) *raw = std::move(file);
  return state;
}

MappingFit adapt_new_target(const A2ENetwork<float>& net, const std::vector<AudioFeatureWindow>& windows,
                            const MatrixX<double>& deltas, double ridge) {
  require(!windows.empty(), "target adaptation needs at least one frame");
  require(deltas.rows() == static_cast<Index>(windows.size()) && deltas.cols() == kExpressionDim,
          "target expressions must be one 76-vector per window");
  const MatrixX<double> codes = predict_sequence<float>(windows, net).transpose().cast<double>();
  return fit_person_mapping(codes, deltas, ridge);
}

void save_person_mapping(const std::filesystem::path& path, const MappingFit& fit, const std::string& sequence) {
  TensorFile file;
  file.descriptor = {{"kind", "person_mapping"},
                     {"sequence", sequence},
                     {"rank", fit.rank},
                     {"rank_deficient", fit.rank_deficient},
                     {"residual", fit.residual}};
  file.put_cast("mapping", fit.matrix);
  file.save(path);
}

MatrixX<double> load_person_mapping(const std::filesystem::path& path) {
  const TensorFile file = TensorFile::load(path);
  if (file.descriptor.value("kind", "") != "person_mapping")
    throw IncompatibleCheckpoint(path.string() + " is not a person mapping");
  return file.get("mapping", kExpressionDim, kCodeDim).cast<double>();
}

template struct A2EState<float>;
template struct A2EState<double>;
template float a2e_batch_loss(A2EState<float>&, const std::vector<ExpressionSequence>&, const std::vector<TripletRef>&,
                              const MatrixX<float>&, const VectorX<float>&, float, bool);
template double a2e_batch_loss(A2EState<double>&, const std::vector<ExpressionSequence>&,
                               const std::vector<TripletRef>&, const MatrixX<double>&, const VectorX<double>&, double,
                               bool);

// ---------------------------------------------------------------- stage 2

RendererTrainer::RendererTrainer(std::vector<TargetFrame> frames, RendererConfig renderer_config, TrainingConfig config,
                                 const std::string& perceptual)
    : frames_(std::move(frames)), config_(config), perceptual_(make_perceptual<float>(perceptual)) {
  config_.validate();
  require(!frames_.empty(), "renderer training needs at least one frame");
  const int h = frames_.front().reference.height, w = frames_.front().reference.width;
  for (const auto& f : frames_) {
    require(f.reference.channels() == 3, "reference frames must be RGB");
    require(f.reference.height == h && f.reference.width == w && f.uvmap.height() == h && f.uvmap.width() == w &&
                f.interior.size() == f.reference.pixels(),
            "target frames must share one resolution");
  }
  renderer_ = NeuralRenderer<float>(renderer_config);
  initialize();
}

void RendererTrainer::initialize() {
  renderer_.init(config_.seed);
  adam_ = Adam<float>(renderer_.parameters(), config_.adam);
  epoch_ = 0;
  history_.clear();
}

EpochRecord RendererTrainer::run_epoch() {
  const int epoch = epoch_ + 1;
  require(epoch <= config_.epochs, "training already completed every configured epoch");
  EpochRecord rec;
  rec.epoch = epoch;
  rec.learning_rate = learning_rate_at(config_, epoch);
  std::vector<std::size_t> order(frames_.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  auto rng = epoch_rng(config_.seed, epoch);
  std::shuffle(order.begin(), order.end(), rng);
  const auto batch_size = static_cast<std::size_t>(config_.batch_size);
  double total = 0;
  int batches = 0;
  NeuralRenderer<float>::Cache cache;
  for (std::size_t i = 0; i < order.size(); i += batch_size, ++batches) {
    const std::size_t end = std::min(order.size(), i + batch_size);
    const auto scale = 1.0f / static_cast<float>(end - i);
    renderer_.zero_grad();
    double batch_loss = 0;
    for (std::size_t k = i; k < end; ++k) {
      const auto& frame = frames_[order[k]];
      const auto out = renderer_.forward(frame.uvmap, frame.reference, &cache);
      auto loss = rendering_loss(out.final_image, out.interior, frame.reference, frame.interior, *perceptual_, true);
      loss.grad_final.data *= scale;
      loss.grad_intermediate.data *= scale;
      renderer_.backward(cache, loss.grad_final, loss.grad_intermediate);
      batch_loss += loss.total * scale;
    }
    if (!std::isfinite(batch_loss))
      throw TrainingDiverged("non-finite rendering loss at epoch " + std::to_string(epoch) + ", batch " +
                                 std::to_string(batches),
                             epoch, batches);
    adam_.step(rec.learning_rate);
    total += batch_loss;
  }
  rec.train_loss = total / batches;
  rec.step = adam_.steps();
  rec.validation_loss = std::numeric_limits<double>::quiet_NaN();
  epoch_ = epoch;
  history_.push_back(rec);
  return rec;
}

void RendererTrainer::run(const LogSink& log) {
  while (epoch_ < config_.epochs) {
    const auto rec = run_epoch();
    if (log) log(record_to_json("renderer", rec));
  }
}

double RendererTrainer::mean_l1() const {
  double total = 0;
  for (const auto& f : frames_) {
    const auto out = renderer_.forward(f.uvmap, f.reference);
    total += static_cast<double>((out.final_image.data - f.reference.data).cwiseAbs().mean());
  }
  return total / static_cast<double>(frames_.size());
}

double RendererTrainer::mean_loss() const {
  double total = 0;
  for (const auto& f : frames_) {
    const auto out = renderer_.forward(f.uvmap, f.reference);
    total += rendering_loss(out.final_image, out.interior, f.reference, f.interior, *perceptual_).total;
  }
  return total / static_cast<double>(frames_.size());
}

void RendererTrainer::save_checkpoint(const std::filesystem::path& path) const {
  TensorFile file;
  file.descriptor = {{"kind", "renderer"},
                     {"renderer", renderer_.config().to_json()},
                     {"epoch", epoch_},
                     {"config", config_.to_json()},
                     {"perceptual", perceptual_->name()},
                     {"history", history_to_json(history_)}};
  put_params(file, const_cast<NeuralRenderer<float>&>(renderer_).parameters());
  adam_.save(file);
  file.save(path);
}

void RendererTrainer::load_checkpoint(const std::filesystem::path& path) {
  TensorFile file;
  NeuralRenderer<float> loaded = load_renderer_checkpoint(path, &file);
  if (loaded.config().to_json() != renderer_.config().to_json())
    throw IncompatibleCheckpoint(path.string() + ": renderer configuration differs");
  renderer_ = std::move(loaded);
  adam_ = Adam<float>(renderer_.parameters(), config_.adam);
  adam_.load(file);
  try {
    epoch_ = file.descriptor.at("epoch").get<int>();
    history_ = history_from_json(file.descriptor.at("history"));
  } catch (const nlohmann::json::exception& e) {
    throw IncompatibleCheckpoint(std::string("checkpoint lacks training state: ") + e.what());
  }
}

void save_renderer_checkpoint(const std::filesystem::path& path, NeuralRenderer<float>& renderer,
                              const nlohmann::json& extra) {
  TensorFile file;
  file.descriptor = {{"kind", "renderer"}, {"renderer", renderer.config().to_json()}};
  if (extra.is_object())
    for (const auto& [key, value] : extra.items()) file.descriptor[key] = value;
  put_params(file, renderer.parameters());
  file.save(path);
}

NeuralRenderer<float> load_renderer_checkpoint(const std::filesystem::path& path, TensorFile* raw) {
  TensorFile file = TensorFile::load(path);
  if (file.descriptor.value("kind", "") != "renderer")
    throw IncompatibleCheckpoint(path.string() + " is not a renderer checkpoint");
  if (!file.descriptor.contains("renderer")) throw IncompatibleCheckpoint(path.string() + ": missing renderer descriptor");
  NeuralRenderer<float> renderer(RendererConfig::from_json(file.descriptor.at("renderer")));
  get_params(file, renderer.parameters());
  if (raw) *raw = std::move(file);
  return renderer;
}

}  // namespace reenact
