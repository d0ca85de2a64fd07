#pragma once

#include <algorithm>
#include <cmath>
#include <complex>
#include <cstdint>
#include <numbers>
#include <vector>

#include <unsupported/Eigen/FFT>

#include "biosep/audio_io.hpp"
#include "biosep/error.hpp"
#include "biosep/rng.hpp"

namespace biosep {

struct HeartParams {
  double rr_mean_s = 0.8;
  double rr_jitter_cv = 0.0;  // coefficient of variation of the RR intervals
  double s1_freq_hz = 60.0;
  double s2_freq_hz = 120.0;
  double pulse_decay_s = 0.04;
  std::uint64_t seed = 0;
};

struct LungParams {
  double center_freq_hz = 400.0;
  double bandwidth_hz = 100.0;
  double burst_rate_per_s = 1.2;
  double burst_duty = 0.5;
  std::uint64_t seed = 1;
};

// Fraction of beats whose interval departs from rr_mean_s when jitter is on.
inline constexpr double kIrregularBeatFraction = 0.25;
// S2 follows S1 after this fraction of the current RR interval.
inline constexpr double kSystoleFraction = 0.3;
inline constexpr double kS2RelativeAmplitude = 0.6;
inline constexpr double kPeakAmplitude = 0.9;
inline constexpr double kBurstRampS = 0.01;

namespace detail {

inline void normalize_peak(std::vector<double>& x, double peak) {
  double max_abs = 0.0;
  for (double v : x) max_abs = std::max(max_abs, std::abs(v));
  if (max_abs > 0.0)
    for (double& v : x) v *= peak / max_abs;
}

inline std::size_t sample_count(double duration_s, int sample_rate_hz) {
  if (!(duration_s >= 0.0) || !std::isfinite(duration_s)) {
    throw Error(ErrorCode::InvalidParams, "duration must be finite and >= 0");
  }
  if (sample_rate_hz <= 0) throw Error(ErrorCode::InvalidParams, "sample rate must be positive");
  return static_cast<std::size_t>(std::llround(duration_s * sample_rate_hz));
}

}  // namespace detail

inline void validate(const HeartParams& p, int sample_rate_hz) {
  if (!(p.rr_mean_s >= 0.29 && p.rr_mean_s <= 2.0))
    throw Error(ErrorCode::InvalidParams, "rr_mean_s must lie in [0.29, 2.0]");
  if (!(p.rr_jitter_cv >= 0.0) || !std::isfinite(p.rr_jitter_cv))
    throw Error(ErrorCode::InvalidParams, "rr_jitter_cv must be >= 0");
  if (!(p.pulse_decay_s > 0.0)) throw Error(ErrorCode::InvalidParams, "pulse_decay_s must be > 0");
  const double nyquist = sample_rate_hz / 2.0;
  if (!(p.s1_freq_hz > 0.0 && p.s1_freq_hz < nyquist && p.s2_freq_hz > 0.0 && p.s2_freq_hz < nyquist))
    throw Error(ErrorCode::InvalidParams, "S1/S2 frequencies must lie in (0, fs/2)");
}

inline void validate(const LungParams& p, int sample_rate_hz) {
  const double lo = p.center_freq_hz - p.bandwidth_hz / 2.0;
  const double hi = p.center_freq_hz + p.bandwidth_hz / 2.0;
  if (!(p.center_freq_hz > 0.0 && p.bandwidth_hz > 0.0))
    throw Error(ErrorCode::InvalidParams, "center frequency and bandwidth must be > 0");
  if (!(lo > 0.0 && hi < sample_rate_hz / 2.0))
    throw Error(ErrorCode::InvalidParams, "lung band must lie inside (0, fs/2)");
  if (!(p.burst_rate_per_s >= 0.0) || !std::isfinite(p.burst_rate_per_s))
    throw Error(ErrorCode::InvalidParams, "burst_rate_per_s must be >= 0");
  if (!(p.burst_duty > 0.0 && p.burst_duty <= 1.0))
    throw Error(ErrorCode::InvalidParams, "burst_duty must lie in (0, 1]");
}

/// RR intervals follow a regular rhythm disrupted by irregular beats: each
/// interval is rr_mean * (1 + cv * z) where z is 0 with probability
/// 1 - kIrregularBeatFraction and +-1/sqrt(kIrregularBeatFraction) otherwise,
/// so the intervals have coefficient of variation rr_jitter_cv. Draws that
/// would give an interval <= 0 are repeated.
inline std::vector<double> heart_beat_times(const HeartParams& p, double duration_s) {
  Rng rng(p.seed);
  const double spread = 1.0 / std::sqrt(kIrregularBeatFraction);
  std::vector<double> onsets;
  for (double t = 0.0; t < duration_s;) {
    onsets.push_back(t);
    double interval = 0.0;
    do {
      double z = 0.0;
      if (p.rr_jitter_cv > 0.0 && rng.uniform() < kIrregularBeatFraction) {
        z = rng.uniform() < 0.5 ? -spread : spread;
      }
      interval = p.rr_mean_s * (1.0 + p.rr_jitter_cv * z);
    } while (!(interval > 0.0));
    t += interval;
  }
  return onsets;
}

/// Decaying-sinusoid S1/S2 pulse pairs at each beat; peak amplitude 0.9.
inline Signal synth_heart(const HeartParams& p, double duration_s, int sample_rate_hz) {
  const std::size_t n = detail::sample_count(duration_s, sample_rate_hz);
  validate(p, sample_rate_hz);
  std::vector<double> x(n, 0.0);
  if (n == 0) return Signal(std::move(x), sample_rate_hz);

  const auto onsets = heart_beat_times(p, duration_s + 2.0 * p.rr_mean_s);
  const double fs = sample_rate_hz;
  const std::size_t tail = static_cast<std::size_t>(std::ceil(12.0 * p.pulse_decay_s * fs));
  auto add_pulse = [&](double onset_s, double freq_hz, double amplitude) {
    const auto start = static_cast<std::size_t>(std::llround(onset_s * fs));
    for (std::size_t i = start; i < n && i < start + tail; ++i) {
      const double t = static_cast<double>(i - start) / fs;
      x[i] += amplitude * std::exp(-t / p.pulse_decay_s) *
              std::sin(2.0 * std::numbers::pi * freq_hz * t);
    }
  };
  for (std::size_t b = 0; b + 1 < onsets.size() && onsets[b] < duration_s; ++b) {
    const double rr = onsets[b + 1] - onsets[b];
    add_pulse(onsets[b], p.s1_freq_hz, 1.0);
    add_pulse(onsets[b] + kSystoleFraction * rr, p.s2_freq_hz, kS2RelativeAmplitude);
  }
  detail::normalize_peak(x, kPeakAmplitude);
  return Signal(std::move(x), sample_rate_hz);
}

/// Burst schedule as [start, end) pairs in seconds. Bursts last duty/rate
/// seconds; silent gaps are exponential with mean (1 - duty)/rate, so onsets
/// average burst_rate per second without a fixed period.
inline std::vector<std::pair<double, double>> lung_bursts(const LungParams& p, double duration_s) {
  std::vector<std::pair<double, double>> bursts;
  if (p.burst_rate_per_s <= 0.0 || p.burst_duty >= 1.0) {
    bursts.emplace_back(0.0, duration_s);
    return bursts;
  }
  Rng rng(p.seed ^ 0x9E3779B97F4A7C15ULL);
  const double length = p.burst_duty / p.burst_rate_per_s;
  const double mean_gap = (1.0 - p.burst_duty) / p.burst_rate_per_s;
  for (double t = rng.exponential(mean_gap); t < duration_s; t += length + rng.exponential(mean_gap)) {
    bursts.emplace_back(t, std::min(duration_s, t + length));
  }
  return bursts;
}

/// White noise brick-wall filtered to center +- bandwidth/2, gated into
/// bursts with 10 ms raised-cosine edges; peak amplitude 0.9.
inline Signal synth_lung(const LungParams& p, double duration_s, int sample_rate_hz) {
  const std::size_t n = detail::sample_count(duration_s, sample_rate_hz);
  validate(p, sample_rate_hz);
  if (n == 0) return Signal({}, sample_rate_hz);

  std::size_t nfft = 1;
  while (nfft < n) nfft <<= 1;
  Rng rng(p.seed);
  std::vector<double> noise(nfft);
  for (double& v : noise) v = rng.normal();

  Eigen::FFT<double> fft;
  fft.SetFlag(Eigen::FFT<double>::HalfSpectrum);
  std::vector<std::complex<double>> spectrum(nfft / 2 + 1);
  fft.fwd(spectrum.data(), noise.data(), static_cast<Eigen::Index>(nfft));
  const double lo = p.center_freq_hz - p.bandwidth_hz / 2.0;
  const double hi = p.center_freq_hz + p.bandwidth_hz / 2.0;
  for (std::size_t k = 0; k < spectrum.size(); ++k) {
    const double f = static_cast<double>(k) * sample_rate_hz / static_cast<double>(nfft);
    if (f < lo || f > hi) spectrum[k] = 0.0;
  }
  std::vector<double> band(nfft);
  fft.inv(band.data(), spectrum.data(), static_cast<Eigen::Index>(nfft));
  band.resize(n);

  if (p.burst_rate_per_s > 0.0 && p.burst_duty < 1.0) {
    std::vector<double> gate(n, 0.0);
    const double fs = sample_rate_hz;
    for (auto [start, end] : lung_bursts(p, duration_s)) {
      const auto a = static_cast<std::size_t>(std::llround(start * fs));
      const auto b = std::min(n, static_cast<std::size_t>(std::llround(end * fs)));
      const double ramp = std::min(kBurstRampS * fs, (static_cast<double>(b) - a) / 2.0);
      for (std::size_t i = a; i < b; ++i) {
        const double edge = std::min(static_cast<double>(i - a), static_cast<double>(b - 1 - i));
        gate[i] = edge >= ramp ? 1.0 : 0.5 - 0.5 * std::cos(std::numbers::pi * edge / ramp);
      }
    }
    for (std::size_t i = 0; i < n; ++i) band[i] *= gate[i];
  }
  detail::normalize_peak(band, kPeakAmplitude);
  return Signal(std::move(band), sample_rate_hz);
}

/// Sample-wise sum of gain_i * signal_i; shorter signals are zero padded.
inline Signal mix(const std::vector<Signal>& signals, const std::vector<double>& gains) {
  if (signals.empty()) throw Error(ErrorCode::InvalidParams, "nothing to mix");
  if (signals.size() != gains.size()) throw Error(ErrorCode::InvalidParams, "one gain per signal");
  const int rate = signals.front().sample_rate_hz();
  std::size_t length = 0;
  for (const auto& s : signals) {
    if (s.sample_rate_hz() != rate) throw Error(ErrorCode::SampleRateMismatch, "mix inputs differ in rate");
    length = std::max(length, s.size());
  }
  std::vector<double> out(length, 0.0);
  for (std::size_t k = 0; k < signals.size(); ++k) {
    const auto x = signals[k].samples();
    for (std::size_t i = 0; i < x.size(); ++i) out[i] += gains[k] * x[i];
  }
  return Signal(std::move(out), rate);
}

inline double energy(const Signal& s) {
  double e = 0.0;
  for (double v : s.samples()) e += v * v;
  return e;
}

/// Gain for `interferer` so that energy(target) / energy(gain * interferer)
/// equals 10^(snr_db / 10).
inline double snr_gain(const Signal& target, const Signal& interferer, double snr_db) {
  const double et = energy(target);
  const double ei = energy(interferer);
  if (!(et > 0.0 && ei > 0.0)) throw Error(ErrorCode::ZeroEnergy, "snr_gain needs non-silent inputs");
  return std::sqrt(et / (ei * std::pow(10.0, snr_db / 10.0)));
}

}  // namespace biosep
