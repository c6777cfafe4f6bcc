#include "reenact/audio_features.hpp"

#include "reenact/binary_io.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <sstream>

namespace reenact {

namespace {

constexpr std::uint32_t kLogitFileVersion = 1;

LogitStream parse_text(std::istream& in, const std::string& context) {
  std::vector<LogitFrame> rows;
  std::string line;
  Index line_number = 0;
  while (std::getline(in, line)) {
    ++line_number;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    std::istringstream fields(line);
    std::vector<float> values;
    std::string token;
    while (fields >> token) {
      try {
        std::size_t used = 0;
        values.push_back(std::stof(token, &used));
        if (used != token.size()) throw std::invalid_argument(token);
      } catch (const std::exception&) {
        throw FormatError(context + ": row " + std::to_string(rows.size()) + " (line " + std::to_string(line_number) +
                          "): unparsable value '" + token + "'");
      }
    }
    if (values.size() != static_cast<std::size_t>(kLogitWidth)) {
      throw FormatError(context + ": row " + std::to_string(rows.size()) + " (line " + std::to_string(line_number) +
                        ") has " + std::to_string(values.size()) + " values, expected " + std::to_string(kLogitWidth));
    }
    rows.push_back(Eigen::Map<const LogitFrame>(values.data()));
  }
  LogitStream stream;
  stream.frames.resize(static_cast<Index>(rows.size()), kLogitWidth);
  for (std::size_t i = 0; i < rows.size(); ++i) stream.frames.row(static_cast<Index>(i)) = rows[i];
  return stream;
}

}  // namespace

void validate(const LogitStream& stream) {
  require(stream.size() > 0, "logit stream is empty");
  require(stream.frames.allFinite(), "logit stream contains non-finite values");
}

Index video_frame_count(const LogitStream& stream, double video_fps) {
  require(video_fps > 0, "video fps must be positive");
  return static_cast<Index>(std::ceil(static_cast<double>(stream.size()) * video_fps / kLogitRateHz - 1e-9));
}

Index center_logit_index(Index frame_index, double video_fps) {
  return static_cast<Index>(std::floor(static_cast<double>(frame_index) * kLogitRateHz / video_fps + 0.5));
}

AudioFeatureWindow window_for_frame(const LogitStream& stream, Index frame_index, double video_fps) {
  require(stream.size() > 0, "logit stream is empty");
  require(video_fps > 0, "video fps must be positive");
  require(frame_index >= 0 && frame_index < video_frame_count(stream, video_fps),
          "frame index " + std::to_string(frame_index) + " outside the video implied by the logit stream");
  const Index center = center_logit_index(frame_index, video_fps);
  AudioFeatureWindow window;
  for (Index r = 0; r < kWindowLength; ++r) {
    const Index source = std::clamp<Index>(center - kWindowLength / 2 + r, 0, stream.size() - 1);
    window.row(r) = stream.frames.row(source);
  }
  return window;
}

std::vector<AudioFeatureWindow> windows_for_stream(const LogitStream& stream, double video_fps) {
  validate(stream);
  std::vector<AudioFeatureWindow> windows;
  const Index count = video_frame_count(stream, video_fps);
  windows.reserve(static_cast<std::size_t>(count));
  for (Index t = 0; t < count; ++t) windows.push_back(window_for_frame(stream, t, video_fps));
  return windows;
}

LogitStream load_logit_stream(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FormatError("cannot open logit stream " + path.string());
  char magic[4] = {};
  in.read(magic, 4);
  if (in.gcount() != 4 || std::string_view(magic, 4) != "PLGT") {
    in.clear();
    in.seekg(0);
    auto stream = parse_text(in, path.string());
    if (stream.size() == 0) throw FormatError(path.string() + ": no rows");
    if (!stream.frames.allFinite()) throw FormatError(path.string() + ": non-finite logits");
    return stream;
  }
  io::Reader r(in, path.string());
  if (const auto version = r.u32(); version != kLogitFileVersion) r.fail("unsupported version " + std::to_string(version));
  const auto rows = r.u32();
  const auto width = r.u32();
  const auto hop = r.u32();
  if (width != static_cast<std::uint32_t>(kLogitWidth))
    r.fail("header row width " + std::to_string(width) + ", expected " + std::to_string(kLogitWidth));
  if (hop != static_cast<std::uint32_t>(kLogitHopMs)) r.fail("hop " + std::to_string(hop) + "ms unsupported (need 20ms)");
  if (rows == 0) r.fail("no rows");
  LogitStream stream;
  stream.frames.resize(rows, kLogitWidth);
  for (Index i = 0; i < stream.size(); ++i) {
    for (Index j = 0; j < kLogitWidth; ++j) {
      try {
        stream.frames(i, j) = r.f32();
      } catch (const FormatError&) {
        r.fail("truncated at row " + std::to_string(i));
      }
    }
    if (!stream.frames.row(i).allFinite()) r.fail("row " + std::to_string(i) + " has non-finite values");
  }
  if (!r.at_end()) r.fail("trailing bytes after row " + std::to_string(rows - 1));
  return stream;
}

void save_logit_stream(const std::filesystem::path& path, const LogitStream& stream) {
  validate(stream);
  io::write_atomically(path, [&](std::ostream& out) {
    io::Writer w(out);
    w.magic("PLGT");
    w.u32(kLogitFileVersion);
    w.u32(static_cast<std::uint32_t>(stream.size()));
    w.u32(kLogitWidth);
    w.u32(kLogitHopMs);
    for (Index i = 0; i < stream.size(); ++i)
      for (Index j = 0; j < kLogitWidth; ++j) w.f32(stream.frames(i, j));
  });
}

void save_logit_stream_text(const std::filesystem::path& path, const LogitStream& stream) {
  validate(stream);
  io::write_atomically(path, [&](std::ostream& out) {
    out << std::setprecision(9);
    for (Index i = 0; i < stream.size(); ++i) {
      for (Index j = 0; j < kLogitWidth; ++j) out << (j ? " " : "") << stream.frames(i, j);
      out << '\n';
    }
  });
}

}  // namespace reenact
