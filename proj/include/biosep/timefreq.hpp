#pragma once

#include <cmath>
#include <complex>
#include <cstddef>
#include <numbers>
#include <string>
#include <vector>

#include <Eigen/Dense>
#include <unsupported/Eigen/FFT>

#include "biosep/audio_io.hpp"
#include "biosep/error.hpp"

namespace biosep {

enum class WindowKind { hann };

struct StftConfig {
  int window_len = 1024;
  int hop = 512;
  int fft_len = 1024;
  WindowKind window = WindowKind::hann;

  void validate() const {
    if (window_len < 2) throw Error(ErrorCode::InvalidConfig, "window_len must be >= 2");
    if (hop < 1) throw Error(ErrorCode::InvalidConfig, "hop must be >= 1");
    if (hop > window_len) throw Error(ErrorCode::InvalidConfig, "hop exceeds window_len");
    if (fft_len < window_len) throw Error(ErrorCode::InvalidConfig, "fft_len below window_len");
  }

  int num_bins() const noexcept { return fft_len / 2 + 1; }

  friend bool operator==(const StftConfig&, const StftConfig&) = default;
};

/// Periodic Hann window of the configured length.
inline std::vector<double> analysis_window(const StftConfig& config) {
  std::vector<double> w(static_cast<std::size_t>(config.window_len));
  const double n = config.window_len;
  for (std::size_t i = 0; i < w.size(); ++i) {
    w[i] = 0.5 - 0.5 * std::cos(2.0 * std::numbers::pi * static_cast<double>(i) / n);
  }
  return w;
}

/// Largest relative deviation of the overlap-added analysis window from its
/// mean value over one hop period. Zero for a constant-overlap-add pair.
inline double cola_deviation(const StftConfig& config) {
  const auto w = analysis_window(config);
  std::vector<double> sums(static_cast<std::size_t>(config.hop), 0.0);
  for (std::size_t i = 0; i < w.size(); ++i) sums[i % sums.size()] += w[i];
  double mean = 0.0;
  for (double s : sums) mean += s;
  mean /= static_cast<double>(sums.size());
  double worst = 0.0;
  for (double s : sums) worst = std::max(worst, std::abs(s - mean) / mean);
  return worst;
}

struct ComplexSpectrogram {
  Eigen::MatrixXcd bins;  // num_bins x num_frames
  StftConfig config;
  int sample_rate_hz = 1;
  std::size_t num_samples = 0;  // length of the analysed signal, before tail padding

  Eigen::Index num_bins() const noexcept { return bins.rows(); }
  Eigen::Index num_frames() const noexcept { return bins.cols(); }
};

/// Non-negative magnitude matrix V (frequency bins x time frames).
struct Spectrogram {
  Eigen::MatrixXd values;
  StftConfig config;
  int sample_rate_hz = 1;
  std::size_t num_samples = 0;

  double bin_frequency_hz(Eigen::Index bin) const noexcept {
    return static_cast<double>(bin) * sample_rate_hz / config.fft_len;
  }
  double frame_time_s(Eigen::Index frame) const noexcept {
    return static_cast<double>(frame) * config.hop / sample_rate_hz;
  }
  double frame_rate_hz() const noexcept { return static_cast<double>(sample_rate_hz) / config.hop; }
};

inline std::size_t num_stft_frames(std::size_t num_samples, const StftConfig& config) {
  const auto window = static_cast<std::size_t>(config.window_len);
  const auto hop = static_cast<std::size_t>(config.hop);
  if (num_samples <= window) return 1;
  return (num_samples - window + hop - 1) / hop + 1;
}

/// Frame t covers samples [t*hop, t*hop + window_len); the tail is zero padded
/// so that every input sample lands in at least one frame.
inline ComplexSpectrogram stft(const Signal& signal, const StftConfig& config) {
  config.validate();
  if (signal.empty()) throw Error(ErrorCode::EmptySignal, "stft of an empty signal");

  const auto x = signal.samples();
  const auto window = analysis_window(config);
  const std::size_t frames = num_stft_frames(x.size(), config);
  const auto fft_len = static_cast<std::size_t>(config.fft_len);

  ComplexSpectrogram out;
  out.config = config;
  out.sample_rate_hz = signal.sample_rate_hz();
  out.num_samples = x.size();
  out.bins.resize(config.num_bins(), static_cast<Eigen::Index>(frames));

  Eigen::FFT<double> fft;
  fft.SetFlag(Eigen::FFT<double>::HalfSpectrum);
  std::vector<double> frame(fft_len);
  std::vector<std::complex<double>> spectrum(static_cast<std::size_t>(config.num_bins()));
  for (std::size_t t = 0; t < frames; ++t) {
    std::fill(frame.begin(), frame.end(), 0.0);
    const std::size_t start = t * static_cast<std::size_t>(config.hop);
    for (std::size_t i = 0; i < window.size() && start + i < x.size(); ++i) {
      frame[i] = x[start + i] * window[i];
    }
    fft.fwd(spectrum.data(), frame.data(), static_cast<Eigen::Index>(fft_len));
    for (std::size_t k = 0; k < spectrum.size(); ++k) {
      out.bins(static_cast<Eigen::Index>(k), static_cast<Eigen::Index>(t)) = spectrum[k];
    }
  }
  return out;
}

inline Spectrogram magnitude(const ComplexSpectrogram& cs) {
  Spectrogram out;
  out.values = cs.bins.cwiseAbs();
  out.config = cs.config;
  out.sample_rate_hz = cs.sample_rate_hz;
  out.num_samples = cs.num_samples;
  return out;
}

/// Weighted overlap-add inverse: each frame is windowed again and the sum is
/// divided by the fully-overlapped squared-window sum (periodic in hop).
/// Output has cs.num_samples samples and is exact on the fully covered
/// region. The first and last window_len - hop samples fade in and out
/// instead of being divided by a vanishing partial sum, which would blow up
/// masked spectrograms at the edges.
inline Signal istft(const ComplexSpectrogram& cs) {
  cs.config.validate();
  if (cs.bins.rows() != cs.config.num_bins()) {
    throw Error(ErrorCode::ShapeMismatch, "bin count does not match fft_len");
  }
  if (cola_deviation(cs.config) > 1e-8) {
    throw Error(ErrorCode::InvalidConfig, "window/hop pair violates constant overlap-add");
  }

  const auto window = analysis_window(cs.config);
  const auto hop = static_cast<std::size_t>(cs.config.hop);
  const auto fft_len = static_cast<std::size_t>(cs.config.fft_len);
  const auto frames = static_cast<std::size_t>(cs.bins.cols());
  const std::size_t padded = (frames == 0 ? 0 : (frames - 1) * hop + window.size());

  std::vector<double> acc(padded, 0.0);
  std::vector<double> norm(hop, 0.0);
  for (std::size_t i = 0; i < window.size(); ++i) norm[i % hop] += window[i] * window[i];
  Eigen::FFT<double> fft;
  fft.SetFlag(Eigen::FFT<double>::HalfSpectrum);
  std::vector<std::complex<double>> spectrum(static_cast<std::size_t>(cs.bins.rows()));
  std::vector<double> frame(fft_len);
  for (std::size_t t = 0; t < frames; ++t) {
    for (std::size_t k = 0; k < spectrum.size(); ++k) {
      spectrum[k] = cs.bins(static_cast<Eigen::Index>(k), static_cast<Eigen::Index>(t));
    }
    fft.inv(frame.data(), spectrum.data(), static_cast<Eigen::Index>(fft_len));
    const std::size_t start = t * hop;
    for (std::size_t i = 0; i < window.size(); ++i) {
      acc[start + i] += frame[i] * window[i];
    }
  }

  std::vector<double> out(cs.num_samples, 0.0);
  for (std::size_t i = 0; i < out.size() && i < padded; ++i) {
    if (norm[i % hop] > 1e-14) out[i] = acc[i] / norm[i % hop];
  }
  return Signal(std::move(out), cs.sample_rate_hz);
}

}  // namespace biosep
