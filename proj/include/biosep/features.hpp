#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdio>
#include <numeric>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "biosep/audio_io.hpp"
#include "biosep/error.hpp"
#include "biosep/timefreq.hpp"
#include "json.hpp"

namespace biosep {

enum class SourceLabel { heart, lung, residual };

constexpr std::string_view to_string(SourceLabel label) {
  switch (label) {
    case SourceLabel::heart: return "heart";
    case SourceLabel::lung: return "lung";
    case SourceLabel::residual: return "residual";
  }
  return "residual";
}

inline SourceLabel parse_source_label(std::string_view text) {
  if (text == "heart") return SourceLabel::heart;
  if (text == "lung") return SourceLabel::lung;
  if (text == "residual") return SourceLabel::residual;
  throw Error(ErrorCode::InvalidInput, "unknown source label '" + std::string(text) + "'");
}

/// Frame-rate amplitude envelope. The rate is generally not an integer
/// (e.g. STFT frame rates), hence not a Signal.
struct Envelope {
  std::vector<double> values;
  double rate_hz = 0.0;
};

/// RMS over consecutive non-overlapping frames of frame_ms. A trailing
/// partial frame is dropped unless it is the only frame.
inline Envelope envelope(const Signal& signal, double frame_ms) {
  if (!(frame_ms > 0.0)) throw Error(ErrorCode::InvalidConfig, "frame_ms must be > 0");
  if (signal.empty()) throw Error(ErrorCode::EmptySignal, "envelope of an empty signal");
  const auto x = signal.samples();
  const auto frame = std::max<std::size_t>(
      1, static_cast<std::size_t>(std::lround(signal.sample_rate_hz() * frame_ms / 1000.0)));
  const std::size_t count = std::max<std::size_t>(1, x.size() / frame);

  Envelope env;
  env.rate_hz = 1000.0 / frame_ms;
  env.values.reserve(count);
  for (std::size_t f = 0; f < count; ++f) {
    const std::size_t begin = f * frame;
    const std::size_t end = std::min(x.size(), begin + frame);
    double energy = 0.0;
    for (std::size_t i = begin; i < end; ++i) energy += x[i] * x[i];
    env.values.push_back(std::sqrt(energy / static_cast<double>(end - begin)));
  }
  return env;
}

struct PeriodicityConfig {
  double min_period_s = 0.29;
  double max_period_s = 2.0;
  double threshold = 0.3;  // minimum normalized autocorrelation peak
};

struct Periodicity {
  double period_s = 0.0;  // 0 = aperiodic
  double strength = 0.0;  // in [0, 1]
};

/// Normalized (biased) autocorrelation of the mean-removed envelope; reports the
/// highest local maximum whose lag lies in [min_period_s, max_period_s].
/// Returns {0, 0} when that peak does not exceed the threshold.
inline Periodicity periodicity(std::span<const double> env, double rate_hz,
                               const PeriodicityConfig& config = {}) {
  if (env.empty()) throw Error(ErrorCode::EmptySignal, "periodicity of an empty envelope");
  const std::size_t n = env.size();
  if (n < 4 || !(rate_hz > 0.0)) return {};

  const double mean = std::accumulate(env.begin(), env.end(), 0.0) / static_cast<double>(n);
  std::vector<double> x(n);
  double energy = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    x[i] = env[i] - mean;
    energy += x[i] * x[i];
  }
  // Rounding residue of a constant envelope must not read as a rhythm.
  if (energy <= 1e-18 * mean * mean * static_cast<double>(n) || energy == 0.0) return {};

  const auto lo = std::max<std::size_t>(
      1, static_cast<std::size_t>(std::ceil(config.min_period_s * rate_hz - 1e-9)));
  const auto hi = std::min<std::size_t>(
      n - 2, static_cast<std::size_t>(std::floor(config.max_period_s * rate_hz + 1e-9)));
  if (lo > hi) return {};

  auto autocorr = [&](std::size_t lag) {
    double s = 0.0;
    for (std::size_t i = 0; i + lag < n; ++i) s += x[i] * x[i + lag];
    return s / energy;
  };

  std::vector<double> ac(hi + 2);
  for (std::size_t lag = lo - 1; lag <= hi + 1 && lag < n; ++lag) ac[lag] = autocorr(lag);

  Periodicity best;
  double best_value = -1.0;
  std::size_t best_lag = 0;
  for (std::size_t lag = lo; lag <= hi; ++lag) {
    const bool rising = ac[lag] >= ac[lag - 1];
    const bool falling = lag + 1 >= n || ac[lag] >= ac[lag + 1];
    if (rising && falling && ac[lag] > best_value) {
      best_value = ac[lag];
      best_lag = lag;
    }
  }
  if (best_lag == 0 || !(best_value > config.threshold)) return {};
  best.period_s = static_cast<double>(best_lag) / rate_hz;
  best.strength = std::clamp(best_value, 0.0, 1.0);
  return best;
}

inline Periodicity periodicity(const Envelope& env, const PeriodicityConfig& config = {}) {
  return periodicity(env.values, env.rate_hz, config);
}

struct PeakConfig {
  double threshold_std = 1.0;   // peaks must exceed mean + threshold_std * std
  double min_distance_s = 0.25;
};

/// Local maxima above the threshold, selected largest-first with a refractory
/// distance. Returns strictly increasing times in seconds.
inline std::vector<double> detect_peaks(std::span<const double> env, double rate_hz,
                                        const PeakConfig& config = {}) {
  const std::size_t n = env.size();
  if (n == 0) return {};
  const double mean = std::accumulate(env.begin(), env.end(), 0.0) / static_cast<double>(n);
  double var = 0.0;
  for (double v : env) var += (v - mean) * (v - mean);
  const double threshold = mean + config.threshold_std * std::sqrt(var / static_cast<double>(n));

  std::vector<std::size_t> candidates;
  for (std::size_t i = 0; i < n; ++i) {
    const bool left_ok = i == 0 || env[i] >= env[i - 1];
    const bool right_ok = i + 1 == n || env[i] > env[i + 1];
    if (env[i] > threshold && left_ok && right_ok) candidates.push_back(i);
  }
  std::stable_sort(candidates.begin(), candidates.end(),
                   [&](std::size_t a, std::size_t b) { return env[a] > env[b]; });

  const double min_lag = config.min_distance_s * rate_hz;
  std::vector<std::size_t> kept;
  for (std::size_t c : candidates) {
    const bool clear = std::all_of(kept.begin(), kept.end(), [&](std::size_t k) {
      const double d = c > k ? static_cast<double>(c - k) : static_cast<double>(k - c);
      return d >= min_lag - 1e-9;
    });
    if (clear) kept.push_back(c);
  }
  std::sort(kept.begin(), kept.end());

  std::vector<double> times;
  times.reserve(kept.size());
  for (std::size_t k : kept) times.push_back(static_cast<double>(k) / rate_hz);
  return times;
}

inline std::vector<double> detect_peaks(const Envelope& env, const PeakConfig& config = {}) {
  return detect_peaks(env.values, env.rate_hz, config);
}

/// Coefficient of variation with the population standard deviation; 0 for
/// fewer than two intervals.
inline double coefficient_of_variation(std::span<const double> values) {
  if (values.size() < 2) return 0.0;
  const double n = static_cast<double>(values.size());
  const double mean = std::accumulate(values.begin(), values.end(), 0.0) / n;
  if (!(mean > 0.0)) return 0.0;
  double var = 0.0;
  for (double v : values) var += (v - mean) * (v - mean);
  return std::sqrt(var / n) / mean;
}

/// Per-bin mean magnitude over all frames.
inline std::vector<double> mean_spectrum(const Spectrogram& spec) {
  std::vector<double> out(static_cast<std::size_t>(spec.values.rows()), 0.0);
  if (spec.values.cols() == 0) return out;
  const Eigen::VectorXd mean = spec.values.rowwise().mean();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = mean(static_cast<Eigen::Index>(i));
  return out;
}

/// Energy-weighted mean frequency of a spectrum sampled every bin_hz.
inline double spectral_centroid(std::span<const double> spectrum, double bin_hz) {
  double weighted = 0.0;
  double total = 0.0;
  for (std::size_t i = 0; i < spectrum.size(); ++i) {
    weighted += static_cast<double>(i) * bin_hz * spectrum[i];
    total += spectrum[i];
  }
  if (!(total > 0.0)) throw Error(ErrorCode::ZeroEnergy, "spectral centroid of a silent spectrum");
  return weighted / total;
}

inline double spectral_centroid(const Spectrogram& spec) {
  return spectral_centroid(mean_spectrum(spec),
                           static_cast<double>(spec.sample_rate_hz) / spec.config.fft_len);
}

struct FeatureConfig {
  double envelope_frame_ms = 10.0;
  PeriodicityConfig periodicity;
  PeakConfig peaks;
};

inline constexpr int kFeatureSchemaVersion = 1;

/// Structured description of one separated source.
struct FeatureVector {
  SourceLabel source_label = SourceLabel::residual;
  double dominant_freq_hz = 0.0;
  double spectral_centroid_hz = 0.0;
  double envelope_period_s = 0.0;
  double periodicity_strength = 0.0;
  std::vector<double> rr_intervals_s;
  double rr_mean_s = 0.0;
  double rr_cv = 0.0;
  double burst_rate_per_s = 0.0;
  double rms_level = 0.0;

  static constexpr std::size_t kDimension = 8;

  static constexpr std::array<std::string_view, kDimension> numeric_names() {
    return {"dominant_freq_hz", "spectral_centroid_hz", "envelope_period_s",
            "periodicity_strength", "rr_mean_s", "rr_cv",
            "burst_rate_per_s", "rms_level"};
  }

  std::array<double, kDimension> numeric() const {
    return {dominant_freq_hz, spectral_centroid_hz, envelope_period_s, periodicity_strength,
            rr_mean_s, rr_cv, burst_rate_per_s, rms_level};
  }

  friend bool operator==(const FeatureVector&, const FeatureVector&) = default;
};

inline FeatureVector extract_features(const Signal& source, const Spectrogram& spec,
                                      SourceLabel label, const FeatureConfig& config = {}) {
  if (source.empty()) throw Error(ErrorCode::EmptySignal, "features of an empty signal");

  FeatureVector f;
  f.source_label = label;

  const auto spectrum = mean_spectrum(spec);
  const double bin_hz = static_cast<double>(spec.sample_rate_hz) / spec.config.fft_len;
  if (!spectrum.empty()) {
    const auto peak = std::max_element(spectrum.begin(), spectrum.end());
    if (*peak > 0.0) {
      f.dominant_freq_hz = static_cast<double>(peak - spectrum.begin()) * bin_hz;
      f.spectral_centroid_hz = spectral_centroid(spectrum, bin_hz);
    }
  }

  const Envelope env = envelope(source, config.envelope_frame_ms);
  const Periodicity p = periodicity(env, config.periodicity);
  f.envelope_period_s = p.period_s;
  f.periodicity_strength = p.strength;

  const auto peaks = detect_peaks(env, config.peaks);
  for (std::size_t i = 1; i < peaks.size(); ++i) f.rr_intervals_s.push_back(peaks[i] - peaks[i - 1]);
  if (!f.rr_intervals_s.empty()) {
    f.rr_mean_s = std::accumulate(f.rr_intervals_s.begin(), f.rr_intervals_s.end(), 0.0) /
                  static_cast<double>(f.rr_intervals_s.size());
  }
  f.rr_cv = coefficient_of_variation(f.rr_intervals_s);
  f.burst_rate_per_s = static_cast<double>(peaks.size()) / source.duration_s();

  double energy = 0.0;
  for (double v : source.samples()) energy += v * v;
  f.rms_level = std::sqrt(energy / static_cast<double>(source.size()));
  return f;
}

// Serialization for `analyze`: a flat JSON object and a CSV row.

inline nlohmann::json to_json(const FeatureVector& f) {
  nlohmann::json doc{{"schema_version", kFeatureSchemaVersion},
                     {"source_label", std::string(to_string(f.source_label))}};
  const auto names = FeatureVector::numeric_names();
  const auto values = f.numeric();
  for (std::size_t i = 0; i < names.size(); ++i) doc[std::string(names[i])] = values[i];
  doc["rr_intervals_s"] = f.rr_intervals_s;
  return doc;
}

inline FeatureVector feature_vector_from_json(const nlohmann::json& doc) {
  try {
    if (doc.at("schema_version").get<int>() != kFeatureSchemaVersion) {
      throw Error(ErrorCode::InvalidInput, "unsupported feature schema_version");
    }
    FeatureVector f;
    f.source_label = parse_source_label(doc.at("source_label").get<std::string>());
    f.dominant_freq_hz = doc.at("dominant_freq_hz").get<double>();
    f.spectral_centroid_hz = doc.at("spectral_centroid_hz").get<double>();
    f.envelope_period_s = doc.at("envelope_period_s").get<double>();
    f.periodicity_strength = doc.at("periodicity_strength").get<double>();
    f.rr_mean_s = doc.at("rr_mean_s").get<double>();
    f.rr_cv = doc.at("rr_cv").get<double>();
    f.burst_rate_per_s = doc.at("burst_rate_per_s").get<double>();
    f.rms_level = doc.at("rms_level").get<double>();
    f.rr_intervals_s = doc.at("rr_intervals_s").get<std::vector<double>>();
    return f;
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::InvalidInput, std::string("feature JSON: ") + e.what());
  }
}

inline std::string csv_header() {
  std::string header = "schema_version,source_label";
  for (auto name : FeatureVector::numeric_names()) {
    header += ',';
    header += name;
  }
  header += ",rr_intervals_s";
  return header;
}

/// rr_intervals_s is written as a ';'-separated list inside one column.
inline std::string to_csv_row(const FeatureVector& f) {
  char buf[64];
  std::string row = std::to_string(kFeatureSchemaVersion) + "," + std::string(to_string(f.source_label));
  for (double v : f.numeric()) {
    std::snprintf(buf, sizeof buf, ",%.10g", v);
    row += buf;
  }
  row += ',';
  for (std::size_t i = 0; i < f.rr_intervals_s.size(); ++i) {
    std::snprintf(buf, sizeof buf, i == 0 ? "%.10g" : ";%.10g", f.rr_intervals_s[i]);
    row += buf;
  }
  return row;
}

}  // namespace biosep
