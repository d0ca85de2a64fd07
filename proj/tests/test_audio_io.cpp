#include <gtest/gtest.h>

#include <cmath>
#include <limits>
#include <random>

#include "biosep/audio_io.hpp"
#include "support/oracles.hpp"

using biosep::Error;
using biosep::ErrorCode;
using biosep::Signal;

namespace {

ErrorCode code_of(auto&& fn) {
  try {
    fn();
  } catch (const Error& e) {
    return e.code();
  }
  ADD_FAILURE() << "no biosep::Error thrown";
  return ErrorCode::IoError;
}

}  // namespace

TEST(Signal, RejectsNonPositiveRate) {
  EXPECT_EQ(code_of([] { Signal({0.0}, 0); }), ErrorCode::InvalidInput);
}

TEST(Signal, RejectsNonFiniteSamples) {
  EXPECT_EQ(code_of([] { Signal({0.0, std::numeric_limits<double>::quiet_NaN()}, 8000); }),
            ErrorCode::InvalidInput);
  EXPECT_EQ(code_of([] { Signal({std::numeric_limits<double>::infinity()}, 8000); }), ErrorCode::InvalidInput);
}

TEST(Signal, EmptyIsAllowed) {
  Signal s({}, 4000);
  EXPECT_TRUE(s.empty());
  EXPECT_DOUBLE_EQ(s.duration_s(), 0.0);
}

TEST(ReadWav, Pcm16IsScaledBy32768) {
  oracle::TempDir dir("wav");
  oracle::WavBuilder b;
  b.pcm16({0, 16384, -32768});
  oracle::write_bytes(dir / "a.wav", b.bytes());
  const Signal s = biosep::read_wav(dir / "a.wav");
  EXPECT_EQ(s.sample_rate_hz(), 8000);
  ASSERT_EQ(s.size(), 3u);
  EXPECT_EQ(s.samples()[0], 0.0);
  EXPECT_EQ(s.samples()[1], 0.5);
  EXPECT_EQ(s.samples()[2], -1.0);
}

TEST(ReadWav, ZeroLengthDataChunkGivesEmptySignal) {
  oracle::TempDir dir("wav");
  oracle::WavBuilder b;
  b.rate = 22050;
  oracle::write_bytes(dir / "e.wav", b.bytes());
  const Signal s = biosep::read_wav(dir / "e.wav");
  EXPECT_TRUE(s.empty());
  EXPECT_EQ(s.sample_rate_hz(), 22050);
}

TEST(ReadWav, StereoIsUnsupported) {
  oracle::TempDir dir("wav");
  oracle::WavBuilder b;
  b.channels = 2;
  b.pcm16({1, 2, 3, 4});
  oracle::write_bytes(dir / "s.wav", b.bytes());
  EXPECT_EQ(code_of([&] { biosep::read_wav(dir / "s.wav"); }), ErrorCode::UnsupportedFormat);
}

TEST(ReadWav, UnknownCodecIsUnsupported) {
  oracle::TempDir dir("wav");
  oracle::WavBuilder b;
  b.format = 6;  // A-law
  b.bits = 8;
  b.data = {1, 2, 3};
  oracle::write_bytes(dir / "alaw.wav", b.bytes());
  EXPECT_EQ(code_of([&] { biosep::read_wav(dir / "alaw.wav"); }), ErrorCode::UnsupportedFormat);

  oracle::WavBuilder pcm24;
  pcm24.bits = 24;
  pcm24.data = {1, 2, 3};
  oracle::write_bytes(dir / "p24.wav", pcm24.bytes());
  EXPECT_EQ(code_of([&] { biosep::read_wav(dir / "p24.wav"); }), ErrorCode::UnsupportedFormat);
}

TEST(ReadWav, NotRiffIsUnsupported) {
  oracle::TempDir dir("wav");
  oracle::write_bytes(dir / "junk.wav", {'h', 'e', 'l', 'l', 'o', ' ', 'w', 'o', 'r', 'l', 'd', '!'});
  EXPECT_EQ(code_of([&] { biosep::read_wav(dir / "junk.wav"); }), ErrorCode::UnsupportedFormat);
}

TEST(ReadWav, MissingFile) {
  EXPECT_EQ(code_of([] { biosep::read_wav("/nonexistent/dir/x.wav"); }), ErrorCode::FileNotFound);
}

TEST(ReadWav, InconsistentChunkSizesAreCorrupt) {
  oracle::TempDir dir("wav");
  oracle::WavBuilder overlong;
  overlong.pcm16({1, 2});
  overlong.data_size_override = 400;
  oracle::write_bytes(dir / "a.wav", overlong.bytes());
  EXPECT_EQ(code_of([&] { biosep::read_wav(dir / "a.wav"); }), ErrorCode::CorruptHeader);

  oracle::WavBuilder odd;
  odd.data = {1, 2, 3};
  oracle::write_bytes(dir / "b.wav", odd.bytes());
  EXPECT_EQ(code_of([&] { biosep::read_wav(dir / "b.wav"); }), ErrorCode::CorruptHeader);

  oracle::WavBuilder align;
  align.pcm16({1, 2});
  align.block_align_override = 4;
  oracle::write_bytes(dir / "c.wav", align.bytes());
  EXPECT_EQ(code_of([&] { biosep::read_wav(dir / "c.wav"); }), ErrorCode::CorruptHeader);
}

TEST(ReadWav, MissingDataChunkIsCorrupt) {
  oracle::TempDir dir("wav");
  oracle::WavBuilder b;
  auto bytes = b.bytes();
  bytes.resize(bytes.size() - 8);  // drop the empty data chunk header
  oracle::write_bytes(dir / "nodata.wav", bytes);
  EXPECT_EQ(code_of([&] { biosep::read_wav(dir / "nodata.wav"); }), ErrorCode::CorruptHeader);
}

TEST(WriteWav, FloatRoundTripIsExactForRepresentableValues) {
  oracle::TempDir dir("wav");
  biosep::write_wav(dir / "r.wav", Signal({0.25, -0.5}, 4000));
  const Signal s = biosep::read_wav(dir / "r.wav");
  EXPECT_EQ(s, Signal({0.25, -0.5}, 4000));
}

TEST(WriteWav, EmptySignalWritesZeroFrames) {
  oracle::TempDir dir("wav");
  biosep::write_wav(dir / "e.wav", Signal({}, 4000));
  EXPECT_EQ(std::filesystem::file_size(dir / "e.wav"), 44u);
  const Signal s = biosep::read_wav(dir / "e.wav");
  EXPECT_TRUE(s.empty());
  EXPECT_EQ(s.sample_rate_hz(), 4000);
}

TEST(WriteWav, UnwritablePathIsIoError) {
  EXPECT_EQ(code_of([] { biosep::write_wav("/nonexistent/dir/x.wav", Signal({0.0}, 4000)); }),
            ErrorCode::IoError);
}

TEST(WriteWav, DoesNotClip) {
  oracle::TempDir dir("wav");
  biosep::write_wav(dir / "loud.wav", Signal({2.5, -3.0}, 4000));
  const Signal s = biosep::read_wav(dir / "loud.wav");
  EXPECT_EQ(s.samples()[0], 2.5);
  EXPECT_EQ(s.samples()[1], -3.0);
}

TEST(WriteWavProperty, RoundTripWithinFloatPrecision) {
  oracle::TempDir dir("wav");
  std::mt19937_64 gen(42);
  for (int trial = 0; trial < 25; ++trial) {
    std::uniform_int_distribution<int> len(0, 3000);
    std::uniform_int_distribution<int> rate(1, 192000);
    std::uniform_real_distribution<double> amp(-1.5, 1.5);
    std::vector<double> x(static_cast<std::size_t>(len(gen)));
    for (auto& v : x) v = amp(gen);
    const Signal in(x, rate(gen));
    biosep::write_wav(dir / "p.wav", in);
    const Signal out = biosep::read_wav(dir / "p.wav");
    ASSERT_EQ(out.sample_rate_hz(), in.sample_rate_hz());
    ASSERT_EQ(out.size(), in.size());
    for (std::size_t i = 0; i < x.size(); ++i) ASSERT_NEAR(out.samples()[i], x[i], 1e-7) << "trial " << trial;
  }
}
