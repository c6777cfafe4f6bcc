#pragma once

#include "reenact/audio_features.hpp"
#include "reenact/face_model.hpp"
#include "reenact/image.hpp"
#include "reenact/neural_renderer.hpp"
#include "reenact/synthetic_oracle.hpp"

#include <filesystem>
#include <string>
#include <vector>

namespace reenact {

// Sequence directory layout:
//   manifest.json     name, person, frame count, resolution, basis reference, CRC-32 of every file
//   logits.bin        logit stream
//   expressions.bin   tensor file: "expressions" (N x 76), "shape" (S x 1)
//   poses.json        one camera pose per frame
//   frames/NNNNNN.ppm reference frames
//   uvmaps/NNNNNN.uv  rasterized texture coordinates
//   masks/NNNNNN.pgm  face interior masks
// The basis reference is a path relative to the sequence directory.

struct SequenceData {
  std::filesystem::path directory;
  std::string name;
  int person = 0;
  Index frame_count = 0;
  int height = 0;
  int width = 0;
  std::filesystem::path basis_path;
  LogitStream logits;
  MatrixX<double> expressions;  // N x 76
  VectorX<double> shape;
  std::vector<CameraPose> poses;

  Image<float> frame(Index i) const;
  UVMap uvmap(Index i) const;
  Mask mask(Index i) const;
};

std::string frame_file_name(Index i, const std::string& extension);

/// Writes one oracle sequence (rendered) into `directory`, which must not exist yet.
void write_sequence(const std::filesystem::path& directory, const std::string& name, const OracleSequence& sequence,
                    const VectorX<double>& shape, const std::filesystem::path& basis_reference);

/// Reads and validates a sequence directory; throws FormatError naming the
/// offending file when the manifest, a checksum or a stream length disagrees.
SequenceData load_sequence(const std::filesystem::path& directory, bool verify_checksums = true);

/// Sequence directories (those holding a manifest) directly under `root`, sorted by name.
std::vector<std::string> list_sequences(const std::filesystem::path& root);

}  // namespace reenact
