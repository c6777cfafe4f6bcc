#include "reenact/audio_features.hpp"

#include "test_support.hpp"

#include <algorithm>
#include <fstream>

using namespace reenact;
using reenact::testing::TempDir;

namespace {

// Row i holds value i + 1 in column i % 29, so every row is distinct.
LogitStream distinct_rows(Index n) {
  LogitStream s;
  s.frames.setZero(n, kLogitWidth);
  for (Index i = 0; i < n; ++i) s.frames(i, i % kLogitWidth) = static_cast<float>(i + 1);
  return s;
}

}  // namespace

TEST(AudioWindow, ConstantStreamGivesConstantWindow) {
  LogitStream s;
  s.frames.setConstant(40, kLogitWidth, 0.25f);
  s.frames.col(3).setConstant(-1.5f);
  const LogitFrame c = s.frame(0);
  for (Index t : {0, 7, 19}) {
    const auto w = window_for_frame(s, t);
    for (int r = 0; r < kWindowLength; ++r) EXPECT_EQ(w.row(r), c);
  }
}

TEST(AudioWindow, InteriorFrameTakesCenteredRows) {
  const auto s = distinct_rows(100);
  for (Index t : {4, 10, 21, 45}) {
    const auto w = window_for_frame(s, t);
    for (int r = 0; r < kWindowLength; ++r) EXPECT_EQ(w.row(r), s.frame(2 * t - 8 + r)) << "t=" << t << " r=" << r;
  }
}

TEST(AudioWindow, FirstFrameReplicatesTheLeadingRow) {
  const auto s = distinct_rows(30);
  const auto w = window_for_frame(s, 0);
  for (int r = 0; r < 8; ++r) EXPECT_EQ(w.row(r), s.frame(0));
  for (int r = 8; r < kWindowLength; ++r) EXPECT_EQ(w.row(r), s.frame(r - 8));
}

TEST(AudioWindow, LastFrameReplicatesTheTrailingRow) {
  const auto s = distinct_rows(21);
  const Index last = video_frame_count(s) - 1;
  const auto w = window_for_frame(s, last);
  for (int r = 0; r < kWindowLength; ++r)
    EXPECT_EQ(w.row(r), s.frame(std::clamp<Index>(2 * last - 8 + r, 0, 20)));
}

TEST(AudioWindow, CenterIndexRoundsHalfUp) {
  EXPECT_EQ(center_logit_index(7), 14);
  EXPECT_EQ(center_logit_index(1, 40.0), 1);  // 1.25
  EXPECT_EQ(center_logit_index(2, 40.0), 3);  // 2.5
  EXPECT_EQ(center_logit_index(3, 40.0), 4);  // 3.75
  EXPECT_EQ(center_logit_index(1, 30.0), 2);  // 1.67
}

TEST(AudioWindow, FrameCountCoversTheStream) {
  EXPECT_EQ(video_frame_count(distinct_rows(10)), 5);
  EXPECT_EQ(video_frame_count(distinct_rows(11)), 6);
  EXPECT_EQ(video_frame_count(distinct_rows(1)), 1);
  EXPECT_EQ(windows_for_stream(distinct_rows(11)).size(), 6u);
}

TEST(AudioWindow, RejectsEmptyAndNonFiniteStreams) {
  LogitStream empty;
  EXPECT_THROW(validate(empty), InvalidInput);
  auto s = distinct_rows(4);
  s.frames(2, 5) = std::numeric_limits<float>::quiet_NaN();
  EXPECT_THROW(validate(s), InvalidInput);
}

TEST(LogitFile, TextRowsOfZeros) {
  TempDir dir;
  {
    std::ofstream out(dir / "zeros.txt");
    for (int r = 0; r < 10; ++r) {
      for (int c = 0; c < kLogitWidth; ++c) out << (c ? " " : "") << 0;
      out << '\n';
    }
  }
  const auto s = load_logit_stream(dir / "zeros.txt");
  EXPECT_EQ(s.size(), 10);
  EXPECT_TRUE(s.frames.isZero(0));
}

TEST(LogitFile, NarrowRowIsAFormatErrorNamingTheRow) {
  TempDir dir;
  {
    std::ofstream out(dir / "bad.txt");
    for (int r = 0; r < 4; ++r) {
      const int width = r == 2 ? 28 : kLogitWidth;
      for (int c = 0; c < width; ++c) out << (c ? " " : "") << 0.5;
      out << '\n';
    }
  }
  try {
    load_logit_stream(dir / "bad.txt");
    FAIL() << "expected a format error";
  } catch (const FormatError& e) {
    EXPECT_NE(std::string(e.what()).find("row 2"), std::string::npos) << e.what();
  }
}

TEST(LogitFile, BinaryRoundTripIsBitwise) {
  TempDir dir;
  std::mt19937_64 rng(5);
  LogitStream s;
  s.frames.resize(37, kLogitWidth);
  reenact::testing::fill_normal(s.frames, rng, 3.0);
  save_logit_stream(dir / "a.bin", s);
  const auto back = load_logit_stream(dir / "a.bin");
  ASSERT_EQ(back.size(), s.size());
  EXPECT_EQ(std::memcmp(back.frames.data(), s.frames.data(), sizeof(float) * s.frames.size()), 0);
  save_logit_stream(dir / "b.bin", back);
  EXPECT_EQ(reenact::testing::read_bytes(dir / "a.bin"), reenact::testing::read_bytes(dir / "b.bin"));
}

TEST(LogitFile, TextRoundTripPreservesValues) {
  TempDir dir;
  std::mt19937_64 rng(6);
  LogitStream s;
  s.frames.resize(9, kLogitWidth);
  reenact::testing::fill_normal(s.frames, rng);
  save_logit_stream_text(dir / "a.txt", s);
  EXPECT_EQ(load_logit_stream(dir / "a.txt").frames, s.frames);
}
