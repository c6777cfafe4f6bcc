#include "reenact/pipeline.hpp"

#include "reenact/binary_io.hpp"

#include <CLI11.hpp>

#include <chrono>
#include <cmath>
#include <cstdlib>
#include <fstream>
#include <unistd.h>

namespace reenact {

namespace fs = std::filesystem;

namespace {

using Clock = std::chrono::steady_clock;

double elapsed_ms(Clock::time_point since) {
  return std::chrono::duration<double, std::milli>(Clock::now() - since).count();
}

template <typename T>
T get_value(const nlohmann::json& value, const std::string& key) {
  try {
    return value.get<T>();
  } catch (const nlohmann::json::exception&) {
    throw InvalidInput("config key '" + key + "' has the wrong type");
  }
}

void apply_renderer_settings(ProjectConfig& c, const nlohmann::json& j) {
  require(j.is_object(), "config key 'renderer' must be an object");
  for (const auto& [key, value] : j.items()) {
    if (key == "texture_size") c.renderer.texture_size = get_value<int>(value, key);
    else if (key == "texture_channels") c.renderer.texture_channels = get_value<int>(value, key);
    else if (key == "base_width") c.renderer.base_width = get_value<int>(value, key);
    else if (key == "max_width") c.renderer.max_width = get_value<int>(value, key);
    else if (key == "depth") c.renderer.depth = get_value<int>(value, key);
    else if (key == "variant") {
      const auto v = get_value<std::string>(value, key);
      require(v == "dilated" || v == "strided", "renderer variant must be 'dilated' or 'strided'");
      c.renderer.variant = v == "dilated" ? UNetVariant::kDilated : UNetVariant::kStrided;
    } else if (key == "erosion_radius") {
      c.renderer.erosion_radius = get_value<int>(value, key);
      c.erosion_radius_set = true;
    } else if (key == "perceptual") {
      c.perceptual = get_value<std::string>(value, key);
      make_perceptual<float>(c.perceptual);
    } else {
      throw InvalidInput("unknown renderer key '" + key + "'");
    }
  }
}

void append_log(const fs::path& path, const nlohmann::json& record) {
  std::ofstream out(path, std::ios::app);
  out << record.dump() << '\n';
}

struct Options {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::optional<int> epochs;
  std::optional<int> resolution;
  std::string output;
  std::vector<std::string> checkpoints;
  std::string logits;
  bool video = false;
};

ProjectConfig resolve_config(const Options& o) {
  ProjectConfig c = ProjectConfig::load(o.config);
  if (const char* root = std::getenv("REENACT_DATA_ROOT"); root && *root) c.data_root = root;
  if (o.seed) c.set_seed(*o.seed);
  if (o.resolution) c.set_resolution(*o.resolution);
  return c;
}

fs::path require_output(const Options& o) {
  if (o.output.empty()) throw InvalidInput("--output is required for this command");
  return o.output;
}

void require_data_root(const ProjectConfig& c) {
  if (!fs::is_directory(c.data_root)) throw InvalidInput("data root " + c.data_root.string() + " does not exist");
}

struct Checkpoints {
  std::optional<fs::path> a2e;
  std::optional<fs::path> mapping;
  std::optional<fs::path> renderer;
};

Checkpoints classify_checkpoints(const std::vector<std::string>& paths) {
  Checkpoints out;
  for (const auto& p : paths) {
    if (!fs::exists(p)) throw InvalidInput("checkpoint " + p + " does not exist");
    const auto kind = TensorFile::load(p).descriptor.value("kind", "");
    auto& slot = kind == "a2e" ? out.a2e : kind == "person_mapping" ? out.mapping : kind == "renderer" ? out.renderer
                                                                                                     : out.a2e;
    if (kind != "a2e" && kind != "person_mapping" && kind != "renderer")
      throw IncompatibleCheckpoint(p + ": unknown checkpoint kind '" + kind + "'");
    if (slot) throw InvalidInput("more than one " + kind + " checkpoint given");
    slot = p;
  }
  return out;
}

SequenceData load_target(const ProjectConfig& c) {
  require_data_root(c);
  return load_sequence(c.data_root / c.target);
}

std::vector<ExpressionSequence> load_stage1_data(const ProjectConfig& c) {
  require_data_root(c);
  auto names = c.sequences;
  if (names.empty()) {
    for (const auto& n : list_sequences(c.data_root))
      if (n != c.target) names.push_back(n);
  }
  require(!names.empty(), "no stage-1 sequences under " + c.data_root.string());
  std::vector<ExpressionSequence> data;
  for (const auto& n : names) {
    const auto seq = load_sequence(c.data_root / n);
    data.push_back({n, windows_for_stream(seq.logits), seq.expressions});
  }
  return data;
}

FaceBasis<double> load_basis_of(const SequenceData& seq) { return load_face_basis(seq.basis_path); }

// ---------------------------------------------------------------- commands

nlohmann::json cmd_make_oracle_corpus(const ProjectConfig& c, const Options& o) {
  const fs::path root = o.output.empty() ? c.data_root : fs::path(o.output);
  StagedDirectory staged(root);
  const auto world = make_oracle_world(c.oracle);
  save_face_basis(staged.path() / "basis.bin", world.basis);
  nlohmann::json sequences = nlohmann::json::array();
  for (int p = 0; p < c.oracle.persons; ++p) {
    const auto name = "person" + std::to_string(p);
    const auto seq = generate_sequence(world, p, c.corpus_frames, static_cast<std::uint64_t>(100 + p));
    write_sequence(staged.path() / name, name, seq, world.shapes[static_cast<std::size_t>(p)], "../basis.bin");
    sequences.push_back(name);
  }
  // The target is a fresh recording of person 0.
  const auto target = generate_sequence(world, 0, c.target_frames, 900);
  write_sequence(staged.path() / c.target, c.target, target, world.shapes[0], "../basis.bin");
  const nlohmann::json summary = {{"command", "make-oracle-corpus"},
                                  {"oracle", c.oracle.to_json()},
                                  {"sequences", sequences},
                                  {"target", c.target}};
  io::write_atomically(staged.path() / "corpus.json", [&](std::ostream& out) { out << summary.dump(2) << '\n'; });
  staged.commit();
  return summary;
}

nlohmann::json cmd_train_a2e(ProjectConfig c, const Options& o) {
  if (o.epochs) c.a2e.epochs = *o.epochs;
  const auto output = require_output(o);
  auto data = load_stage1_data(c);
  const auto basis = load_face_basis(load_sequence(c.data_root / data.front().name, false).basis_path);
  StagedDirectory staged(output);
  A2ETrainer trainer(std::move(data), basis, c.a2e);
  if (!o.checkpoints.empty()) {
    require(o.checkpoints.size() == 1, "train-a2e resumes from at most one checkpoint");
    trainer.load_checkpoint(o.checkpoints.front());
  }
  const auto log_path = staged.path() / "train_log.jsonl";
  const double initial = trainer.train_loss();
  append_log(log_path, {{"stage", "a2e"}, {"epoch", trainer.epoch()}, {"train_loss", initial}});
  trainer.run([&](const nlohmann::json& r) { append_log(log_path, r); });
  trainer.save_checkpoint(staged.path() / "a2e.ckpt");
  std::vector<std::string> names;
  for (const auto& s : trainer.data()) names.push_back(s.name);
  const auto& best = trainer.best_state() ? *trainer.best_state() : trainer.state();
  save_a2e_checkpoint(staged.path() / "a2e_best.ckpt", best, names, {{"epoch", trainer.best_epoch()}});
  const double final_loss = trainer.train_loss();
  const nlohmann::json summary = {{"command", "train-a2e"},
                                  {"epochs", trainer.epoch()},
                                  {"initial_train_loss", initial},
                                  {"final_train_loss", final_loss},
                                  {"final_validation_loss", trainer.validation_loss()},
                                  {"best_epoch", trainer.best_epoch()}};
  io::write_atomically(staged.path() / "summary.json", [&](std::ostream& out) { out << summary.dump(2) << '\n'; });
  staged.commit();
  return summary;
}

nlohmann::json cmd_fit_target(const ProjectConfig& c, const Options& o) {
  const auto output = require_output(o);
  const auto ckpt = classify_checkpoints(o.checkpoints);
  if (!ckpt.a2e) throw InvalidInput("fit-target needs an a2e checkpoint");
  const auto state = load_a2e_checkpoint(*ckpt.a2e);
  const auto target = load_target(c);
  const auto fit = adapt_new_target(state.net, windows_for_stream(target.logits), target.expressions, c.ridge);
  StagedDirectory staged(output);
  save_person_mapping(staged.path() / "person_mapping.ckpt", fit, target.name);
  const nlohmann::json summary = {{"command", "fit-target"},
                                  {"target", target.name},
                                  {"rank", fit.rank},
                                  {"rank_deficient", fit.rank_deficient},
                                  {"residual", fit.residual}};
  io::write_atomically(staged.path() / "summary.json", [&](std::ostream& out) { out << summary.dump(2) << '\n'; });
  staged.commit();
  return summary;
}

Index renderer_frame_count(const ProjectConfig& c, const SequenceData& target) {
  if (c.renderer_frames < 0) return target.frame_count;
  require(c.renderer_frames <= target.frame_count, "renderer_frames exceeds the target's " +
                                                       std::to_string(target.frame_count) + " frames");
  return c.renderer_frames;
}

std::vector<TargetFrame> load_target_frames(const SequenceData& target, Index count) {
  std::vector<TargetFrame> frames;
  for (Index i = 0; i < count; ++i) frames.push_back({target.frame(i), target.uvmap(i), target.mask(i)});
  return frames;
}

nlohmann::json cmd_train_renderer(ProjectConfig c, const Options& o) {
  if (o.epochs) c.renderer_training.epochs = *o.epochs;
  const auto output = require_output(o);
  const auto target = load_target(c);
  if (target.height != c.resolution || target.width != c.resolution)
    throw InvalidInput("target resolution " + std::to_string(target.height) + "x" + std::to_string(target.width) +
                       " differs from the configured resolution " + std::to_string(c.resolution));
  StagedDirectory staged(output);
  const Index frame_count = renderer_frame_count(c, target);
  RendererTrainer trainer(load_target_frames(target, frame_count), c.renderer, c.renderer_training, c.perceptual);
  if (!o.checkpoints.empty()) {
    require(o.checkpoints.size() == 1, "train-renderer resumes from at most one checkpoint");
    trainer.load_checkpoint(o.checkpoints.front());
  }
  const auto log_path = staged.path() / "train_log.jsonl";
  const double initial = trainer.mean_loss();
  append_log(log_path, {{"stage", "renderer"}, {"epoch", trainer.epoch()}, {"train_loss", initial}});
  trainer.run([&](const nlohmann::json& r) { append_log(log_path, r); });
  trainer.save_checkpoint(staged.path() / "renderer.ckpt");
  const nlohmann::json summary = {{"command", "train-renderer"},
                                  {"frames", frame_count},
                                  {"epochs", trainer.epoch()},
                                  {"initial_loss", initial},
                                  {"final_loss", trainer.mean_loss()},
                                  {"final_l1", trainer.mean_l1()}};
  io::write_atomically(staged.path() / "summary.json", [&](std::ostream& out) { out << summary.dump(2) << '\n'; });
  staged.commit();
  return summary;
}

struct LoadedModels {
  A2EState<float> a2e;
  MatrixX<double> mapping;
  NeuralRenderer<float> renderer;
};

LoadedModels load_models(const Options& o) {
  const auto ckpt = classify_checkpoints(o.checkpoints);
  if (!ckpt.a2e || !ckpt.mapping || !ckpt.renderer)
    throw InvalidInput("expected a2e, person_mapping and renderer checkpoints");
  return {load_a2e_checkpoint(*ckpt.a2e), load_person_mapping(*ckpt.mapping), load_renderer_checkpoint(*ckpt.renderer)};
}

nlohmann::json cmd_infer(const ProjectConfig& c, const Options& o) {
  const auto output = require_output(o);
  if (o.logits.empty()) throw InvalidInput("infer needs --logits");
  if (!fs::exists(o.logits)) throw InvalidInput("logits file " + o.logits + " does not exist");
  const auto models = load_models(o);
  const auto target = load_target(c);
  const auto basis = load_basis_of(target);
  const auto logits = load_logit_stream(o.logits);

  InferenceTiming timing;
  auto start = Clock::now();
  const MatrixX<double> deltas = audio_expressions(models.a2e.net, models.mapping, logits);
  timing.mapping_ms = elapsed_ms(start);

  StagedDirectory staged(output);
  fs::create_directories(staged.path() / "frames");
  for (Index i = 0; i < deltas.rows(); ++i) {
    const Index k = i % target.frame_count;
    const auto frame = render_expression(models.renderer, basis, target.shape, deltas.row(i).transpose(),
                                         target.poses[static_cast<std::size_t>(k)], target.frame(k), &timing);
    write_ppm(staged.path() / "frames" / frame_file_name(i, ".ppm"), frame);
  }
  const auto frames = timing.frames;
  if (frames > 0) {
    timing.mapping_ms /= static_cast<double>(frames);
    timing.rasterization_ms /= static_cast<double>(frames);
    timing.rendering_ms /= static_cast<double>(frames);
  }
  bool video = false;
  if (o.video && std::system("command -v ffmpeg >/dev/null 2>&1") == 0) {
    const auto cmd = "ffmpeg -y -loglevel error -framerate 25 -i '" + (staged.path() / "frames" / "%06d.ppm").string() +
                     "' -pix_fmt yuv420p '" + (staged.path() / "video.mp4").string() + "'";
    video = std::system(cmd.c_str()) == 0;
  }
  const nlohmann::json summary = {
      {"command", "infer"}, {"frames", frames}, {"video", video}, {"timing_ms_per_frame", timing.to_json()}};
  io::write_atomically(staged.path() / "timing.json", [&](std::ostream& out) { out << summary.dump(2) << '\n'; });
  staged.commit();
  return summary;
}

nlohmann::json cmd_eval_self_reenactment(const ProjectConfig& c, const Options& o) {
  const auto models = load_models(o);
  const auto target = load_target(c);
  const auto basis = load_basis_of(target);
  const Index first = c.evaluation_first_frame;
  const Index count = c.evaluation_frame_count < 0 ? renderer_frame_count(c, target) - first : c.evaluation_frame_count;
  require(first >= 0 && count >= 1 && first + count <= target.frame_count, "evaluation segment is out of range");
  const MatrixX<double> audio = audio_expressions(models.a2e.net, models.mapping, target.logits);
  double visual_total = 0, audio_total = 0;
  for (Index i = first; i < first + count; ++i) {
    const auto reference = target.frame(i);
    const auto& pose = target.poses[static_cast<std::size_t>(i)];
    visual_total += mean_color_distance(
        render_expression(models.renderer, basis, target.shape, target.expressions.row(i).transpose(), pose, reference),
        reference);
    audio_total += mean_color_distance(
        render_expression(models.renderer, basis, target.shape, audio.row(i).transpose(), pose, reference), reference);
  }
  const nlohmann::json summary = {{"command", "eval-self-reenactment"},
                                  {"first_frame", first},
                                  {"frame_count", count},
                                  {"visual_distance", visual_total / static_cast<double>(count)},
                                  {"audio_distance", audio_total / static_cast<double>(count)}};
  if (!o.output.empty()) {
    StagedDirectory staged(o.output);
    io::write_atomically(staged.path() / "report.json", [&](std::ostream& out) { out << summary.dump(2) << '\n'; });
    staged.commit();
  }
  return summary;
}

}  // namespace

// ---------------------------------------------------------------- config

ProjectConfig ProjectConfig::load(const fs::path& path) {
  if (!fs::exists(path)) throw InvalidInput("config file " + path.string() + " does not exist");
  nlohmann::json j;
  {
    std::ifstream in(path);
    try {
      j = nlohmann::json::parse(in);
    } catch (const nlohmann::json::parse_error& e) {
      throw InvalidInput("config " + path.string() + ": " + e.what());
    }
  }
  require(j.is_object(), "config must be a JSON object");
  ProjectConfig c;
  c.renderer_training.batch_size = 1;
  const fs::path base = path.parent_path();
  std::optional<std::uint64_t> seed;
  std::optional<int> resolution;
  nlohmann::json oracle = nlohmann::json::object();
  for (const auto& [key, value] : j.items()) {
    if (key == "data_root") c.data_root = base / get_value<std::string>(value, key);
    else if (key == "seed") seed = get_value<std::uint64_t>(value, key);
    else if (key == "sequences") c.sequences = get_value<std::vector<std::string>>(value, key);
    else if (key == "target") c.target = get_value<std::string>(value, key);
    else if (key == "resolution") resolution = get_value<int>(value, key);
    else if (key == "oracle") oracle = value;
    else if (key == "corpus_frames") c.corpus_frames = get_value<Index>(value, key);
    else if (key == "target_frames") c.target_frames = get_value<Index>(value, key);
    else if (key == "renderer_frames") c.renderer_frames = get_value<Index>(value, key);
    else if (key == "a2e") c.a2e.update_from_json(value);
    else if (key == "renderer_training") c.renderer_training.update_from_json(value);
    else if (key == "renderer") apply_renderer_settings(c, value);
    else if (key == "ridge") c.ridge = get_value<double>(value, key);
    else if (key == "evaluation") {
      require(value.is_object(), "config key 'evaluation' must be an object");
      for (const auto& [k, v] : value.items()) {
        if (k == "first_frame") c.evaluation_first_frame = get_value<Index>(v, k);
        else if (k == "frame_count") c.evaluation_frame_count = get_value<Index>(v, k);
        else throw InvalidInput("unknown evaluation key '" + k + "'");
      }
    } else {
      throw InvalidInput("unknown config key '" + key + "'");
    }
  }
  c.oracle = OracleSpec::from_json(oracle);
  require(!c.target.empty() && c.target.find('/') == std::string::npos, "target must be a plain directory name");
  require(c.corpus_frames >= 3 && c.target_frames >= 3, "sequences need at least 3 frames");
  require(c.ridge >= 0, "ridge must be nonnegative");
  require(c.renderer_frames == -1 || c.renderer_frames >= 1, "renderer_frames must be positive or -1");
  if (seed) c.set_seed(*seed);
  c.set_resolution(resolution.value_or(c.oracle.resolution));
  return c;
}

void ProjectConfig::set_seed(std::uint64_t value) {
  seed = value;
  oracle.seed = value;
  a2e.seed = value;
  renderer_training.seed = value;
}

void ProjectConfig::set_resolution(int value) {
  require(value >= 8, "resolution must be at least 8");
  resolution = value;
  oracle.resolution = value;
  if (!erosion_radius_set) renderer.erosion_radius = default_erosion_radius(value);
}

// ------------------------------------------------------------ inference

double mean_color_distance(const Image<float>& a, const Image<float>& b) {
  require(a.channels() == 3 && b.channels() == 3 && a.same_size(b), "color distance needs two RGB images of equal size");
  const Eigen::ArrayXd per_pixel = (a.data - b.data).cast<double>().colwise().norm().array();
  return per_pixel.mean() / std::sqrt(3.0);
}

nlohmann::json InferenceTiming::to_json() const {
  return {{"mapping", mapping_ms}, {"rasterization", rasterization_ms}, {"rendering", rendering_ms}};
}

MatrixX<double> audio_expressions(const A2ENetwork<float>& net, const MatrixX<double>& mapping,
                                  const LogitStream& logits) {
  require(mapping.rows() == kExpressionDim && mapping.cols() == kCodeDim, "person mapping must be 76 x 32");
  const auto windows = windows_for_stream(logits);
  const MatrixX<double> codes = predict_sequence<float>(windows, net).cast<double>();
  return (mapping * codes).transpose();
}

Image<float> render_expression(const NeuralRenderer<float>& renderer, const FaceBasis<double>& basis,
                               const VectorX<double>& shape, const VectorX<double>& delta, const CameraPose& pose,
                               const Image<float>& background, InferenceTiming* timing) {
  auto start = Clock::now();
  const auto vertices = reconstruct_vertices(basis, shape, delta);
  const auto uv = rasterize(vertices, basis.triangles, basis.uv, pose, background.height, background.width);
  if (timing) timing->rasterization_ms += elapsed_ms(start);
  start = Clock::now();
  auto out = renderer.forward(uv, background);
  if (timing) {
    timing->rendering_ms += elapsed_ms(start);
    ++timing->frames;
  }
  return std::move(out.final_image);
}

// ------------------------------------------------------------ staging

StagedDirectory::StagedDirectory(fs::path target) : target_(std::move(target)) {
  if (target_.filename().empty()) target_ = target_.parent_path();
  if (!target_.parent_path().empty()) fs::create_directories(target_.parent_path());
  temp_ = io::temp_sibling(target_);
  fs::create_directories(temp_);
}

StagedDirectory::~StagedDirectory() {
  if (!committed_) {
    std::error_code ec;
    fs::remove_all(temp_, ec);
  }
}

void StagedDirectory::commit() {
  fs::path previous;
  if (fs::exists(target_)) {
    previous = io::temp_sibling(target_);
    fs::rename(target_, previous);
  }
  fs::rename(temp_, target_);
  committed_ = true;
  if (!previous.empty()) fs::remove_all(previous);
}

// ------------------------------------------------------------------ CLI

int run_cli(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
  CLI::App app{"Audio-driven facial reenactment pipeline"};
  app.require_subcommand(1);
  Options o;
  std::uint64_t seed = 0;
  int epochs = 0, resolution = 0;

  struct Command {
    const char* name;
    const char* help;
  };
  const Command commands[] = {
      {"make-oracle-corpus", "Write a synthetic ground-truth corpus"},
      {"train-a2e", "Train the audio-to-expression network on every stage-1 sequence"},
      {"fit-target", "Fit the target's person mapping from a trained network"},
      {"train-renderer", "Train the neural texture and both rendering networks on the target"},
      {"infer", "Render target frames driven by a logit stream"},
      {"eval-self-reenactment", "Compare visually and audio driven re-renderings of the target"},
  };
  std::vector<CLI::App*> subs;
  std::vector<CLI::Option*> seed_opts, epoch_opts, res_opts;
  for (const auto& cmd : commands) {
    auto* sub = app.add_subcommand(cmd.name, cmd.help);
    sub->add_option("--config", o.config, "Project configuration (JSON)")->required();
    seed_opts.push_back(sub->add_option("--seed", seed, "Seed for every stage"));
    epoch_opts.push_back(sub->add_option("--epochs", epochs, "Override the epoch count")->check(CLI::NonNegativeNumber));
    res_opts.push_back(sub->add_option("--resolution", resolution, "Output resolution (square)"));
    sub->add_option("--output", o.output, "Output directory");
    sub->add_option("--checkpoint", o.checkpoints, "Checkpoint file (repeatable)");
    sub->add_option("--logits", o.logits, "Logit stream to drive inference");
    sub->add_flag("--video", o.video, "Also assemble an mp4 when ffmpeg is available");
    subs.push_back(sub);
  }

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, out, err);
    return code == 0 ? 0 : 2;
  }

  std::size_t chosen = 0;
  while (!subs[chosen]->parsed()) ++chosen;
  if (seed_opts[chosen]->count() > 0) o.seed = seed;
  if (epoch_opts[chosen]->count() > 0) o.epochs = epochs;
  if (res_opts[chosen]->count() > 0) o.resolution = resolution;

  try {
    const ProjectConfig config = resolve_config(o);
    nlohmann::json summary;
    switch (chosen) {
      case 0: summary = cmd_make_oracle_corpus(config, o); break;
      case 1: summary = cmd_train_a2e(config, o); break;
      case 2: summary = cmd_fit_target(config, o); break;
      case 3: summary = cmd_train_renderer(config, o); break;
      case 4: summary = cmd_infer(config, o); break;
      default: summary = cmd_eval_self_reenactment(config, o); break;
    }
    out << summary.dump() << '\n';
    return 0;
  } catch (const InvalidInput& e) {
    err << "error: " << e.what() << '\n';
    return 2;
  } catch (const FormatError& e) {
    err << "error: " << e.what() << '\n';
    return 2;
  } catch (const IncompatibleCheckpoint& e) {
    err << "error: " << e.what() << '\n';
    return 2;
  } catch (const TrainingDiverged& e) {
    err << "error: " << e.what() << '\n';
    return 3;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << '\n';
    return 3;
  }
}

}  // namespace reenact
