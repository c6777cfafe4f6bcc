#pragma once

#include "reenact/common.hpp"

#include <filesystem>
#include <vector>

namespace reenact {

/// One 20ms vector of character logits.
using LogitFrame = Eigen::Matrix<float, 1, kLogitWidth>;

/// 16 logit frames around a video frame, oldest first.
using AudioFeatureWindow = Eigen::Matrix<float, kWindowLength, kLogitWidth, Eigen::RowMajor>;

/// A 50 Hz stream of logit frames; row i covers [20i, 20i + 20) ms.
struct LogitStream {
  Eigen::Matrix<float, Eigen::Dynamic, kLogitWidth, Eigen::RowMajor> frames;

  Index size() const { return frames.rows(); }
  LogitFrame frame(Index i) const { return frames.row(i); }
};

/// Throws InvalidInput if the stream is empty or holds non-finite values.
void validate(const LogitStream& stream);

/// Number of video frames covered by the stream at `video_fps` (rounded up).
Index video_frame_count(const LogitStream& stream, double video_fps = kVideoFps);

/// Center logit row for a video frame: round-half-up of frame_index * 50 / fps.
Index center_logit_index(Index frame_index, double video_fps = kVideoFps);

/// The 16x29 window for a video frame: rows center-8 .. center+7, edge-replicated
/// at both ends of the stream.
AudioFeatureWindow window_for_frame(const LogitStream& stream, Index frame_index, double video_fps = kVideoFps);

/// Windows for every video frame of the stream.
std::vector<AudioFeatureWindow> windows_for_stream(const LogitStream& stream, double video_fps = kVideoFps);

// Logit stream files. Binary layout (little-endian): "PLGT", u32 version=1,
// u32 row_count, u32 row_width=29, u32 hop_ms=20, row-major float32 values.
// Files not starting with the magic are read as text, one row per line.
LogitStream load_logit_stream(const std::filesystem::path& path);
void save_logit_stream(const std::filesystem::path& path, const LogitStream& stream);
void save_logit_stream_text(const std::filesystem::path& path, const LogitStream& stream);

}  // namespace reenact
