#include "reenact/dataset.hpp"

#include "reenact/binary_io.hpp"
#include "reenact/tensor_file.hpp"

#include <algorithm>
#include <cstdio>
#include <fstream>

namespace reenact {

namespace fs = std::filesystem;

namespace {

constexpr const char* kManifest = "manifest.json";
constexpr int kLayoutVersion = 1;

nlohmann::json read_json(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw FormatError("cannot open " + path.string());
  try {
    return nlohmann::json::parse(in);
  } catch (const nlohmann::json::parse_error& e) {
    throw FormatError(path.string() + ": " + e.what());
  }
}

void write_json(const fs::path& path, const nlohmann::json& j) {
  io::write_atomically(path, [&](std::ostream& out) { out << j.dump(2) << '\n'; });
}

std::string crc_hex(std::uint32_t crc) {
  char buf[9];
  std::snprintf(buf, sizeof buf, "%08x", crc);
  return buf;
}

}  // namespace

std::string frame_file_name(Index i, const std::string& extension) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%06lld", static_cast<long long>(i));
  return std::string(buf) + extension;
}

Image<float> SequenceData::frame(Index i) const {
  require(i >= 0 && i < frame_count, "frame index out of range");
  auto image = read_ppm(directory / "frames" / frame_file_name(i, ".ppm"));
  if (image.height != height || image.width != width)
    throw FormatError("frame " + std::to_string(i) + " of '" + name + "' has the wrong resolution");
  return image;
}

UVMap SequenceData::uvmap(Index i) const {
  require(i >= 0 && i < frame_count, "frame index out of range");
  auto map = load_uv_map(directory / "uvmaps" / frame_file_name(i, ".uv"));
  if (map.height() != height || map.width() != width)
    throw FormatError("UV map " + std::to_string(i) + " of '" + name + "' has the wrong resolution");
  return map;
}

Mask SequenceData::mask(Index i) const {
  require(i >= 0 && i < frame_count, "frame index out of range");
  int h = 0, w = 0;
  auto m = read_pgm_mask(directory / "masks" / frame_file_name(i, ".pgm"), &h, &w);
  if (h != height || w != width)
    throw FormatError("mask " + std::to_string(i) + " of '" + name + "' has the wrong resolution");
  return m;
}

void write_sequence(const fs::path& directory, const std::string& name, const OracleSequence& sequence,
                    const VectorX<double>& shape, const fs::path& basis_reference) {
  const Index n = sequence.frame_count();
  require(static_cast<Index>(sequence.images.size()) == n && static_cast<Index>(sequence.uvmaps.size()) == n,
          "sequence must be rendered before it is written");
  require(!fs::exists(directory), directory.string() + " already exists");
  fs::create_directories(directory / "frames");
  fs::create_directories(directory / "uvmaps");
  fs::create_directories(directory / "masks");

  save_logit_stream(directory / "logits.bin", sequence.logits);
  TensorFile expressions;
  expressions.descriptor = {{"kind", "expressions"}};
  expressions.put_cast("expressions", sequence.deltas);
  expressions.put_cast("shape", MatrixX<double>(shape));
  expressions.save(directory / "expressions.bin");

  nlohmann::json poses = nlohmann::json::array();
  for (const auto& pose : sequence.poses) poses.push_back(to_json(pose));
  write_json(directory / "poses.json", poses);

  const int h = sequence.images.front().height, w = sequence.images.front().width;
  for (Index i = 0; i < n; ++i) {
    const auto k = static_cast<std::size_t>(i);
    write_ppm(directory / "frames" / frame_file_name(i, ".ppm"), sequence.images[k]);
    save_uv_map(directory / "uvmaps" / frame_file_name(i, ".uv"), sequence.uvmaps[k]);
    write_pgm(directory / "masks" / frame_file_name(i, ".pgm"), sequence.masks[k], h, w);
  }

  nlohmann::json files = nlohmann::json::object();
  for (const auto& entry : fs::recursive_directory_iterator(directory)) {
    if (!entry.is_regular_file()) continue;
    files[fs::relative(entry.path(), directory).generic_string()] = crc_hex(io::file_crc32(entry.path()));
  }
  write_json(directory / kManifest, {{"version", kLayoutVersion},
                                     {"name", name},
                                     {"person", sequence.person},
                                     {"frame_count", n},
                                     {"fps", kVideoFps},
                                     {"height", h},
                                     {"width", w},
                                     {"basis", basis_reference.generic_string()},
                                     {"files", files}});
}

SequenceData load_sequence(const fs::path& directory, bool verify_checksums) {
  if (!fs::is_directory(directory)) throw InvalidInput("sequence directory " + directory.string() + " does not exist");
  const auto manifest_path = directory / kManifest;
  const auto manifest = read_json(manifest_path);
  SequenceData seq;
  seq.directory = directory;
  nlohmann::json files;
  try {
    if (manifest.at("version").get<int>() != kLayoutVersion) throw FormatError(manifest_path.string() + ": unsupported version");
    seq.name = manifest.at("name").get<std::string>();
    seq.person = manifest.at("person").get<int>();
    seq.frame_count = manifest.at("frame_count").get<Index>();
    seq.height = manifest.at("height").get<int>();
    seq.width = manifest.at("width").get<int>();
    seq.basis_path = directory / manifest.at("basis").get<std::string>();
    files = manifest.at("files");
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(manifest_path.string() + ": " + e.what());
  }
  if (seq.frame_count < 1 || seq.height < 1 || seq.width < 1) throw FormatError(manifest_path.string() + ": bad sizes");

  if (verify_checksums) {
    for (const auto& [file, crc] : files.items()) {
      const auto path = directory / file;
      if (!fs::exists(path)) throw FormatError(manifest_path.string() + ": listed file " + path.string() + " is missing");
      if (crc_hex(io::file_crc32(path)) != crc.get<std::string>())
        throw FormatError("checksum mismatch for " + path.string());
    }
  }
  if (!fs::exists(seq.basis_path)) throw FormatError(manifest_path.string() + ": basis " + seq.basis_path.string() + " is missing");

  seq.logits = load_logit_stream(directory / "logits.bin");
  if (video_frame_count(seq.logits) != seq.frame_count)
    throw FormatError((directory / "logits.bin").string() + ": stream covers " +
                      std::to_string(video_frame_count(seq.logits)) + " frames, manifest says " +
                      std::to_string(seq.frame_count));
  const auto expressions = TensorFile::load(directory / "expressions.bin");
  try {
    seq.expressions = expressions.get("expressions", seq.frame_count, kExpressionDim).cast<double>();
    seq.shape = expressions.get("shape", -1, 1).cast<double>();
  } catch (const IncompatibleCheckpoint& e) {
    throw FormatError((directory / "expressions.bin").string() + ": " + e.what());
  }
  const auto poses = read_json(directory / "poses.json");
  if (!poses.is_array() || static_cast<Index>(poses.size()) != seq.frame_count)
    throw FormatError((directory / "poses.json").string() + ": expected one pose per frame");
  for (const auto& p : poses) seq.poses.push_back(camera_pose_from_json(p));
  return seq;
}

std::vector<std::string> list_sequences(const fs::path& root) {
  if (!fs::is_directory(root)) throw InvalidInput("data root " + root.string() + " does not exist");
  std::vector<std::string> names;
  for (const auto& entry : fs::directory_iterator(root))
    if (entry.is_directory() && fs::exists(entry.path() / kManifest)) names.push_back(entry.path().filename().string());
  std::sort(names.begin(), names.end());
  return names;
}

}  // namespace reenact
