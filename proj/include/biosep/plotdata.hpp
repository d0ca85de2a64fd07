#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <numeric>
#include <string>
#include <vector>

#include "biosep/audio_io.hpp"
#include "biosep/error.hpp"
#include "biosep/timefreq.hpp"

namespace biosep {

inline constexpr double kDbFloor = -80.0;

/// Magnitude in dB relative to a full-scale sinusoid (a unit-amplitude tone
/// centred on a bin reads about 0 dB), floored at -80 dB.
inline Eigen::MatrixXd spectrogram_db(const Signal& signal, const StftConfig& config) {
  const Spectrogram spec = magnitude(stft(signal, config));
  const auto w = analysis_window(config);
  const double reference = std::accumulate(w.begin(), w.end(), 0.0) / 2.0;
  return spec.values.unaryExpr([&](double m) {
    const double db = m > 0.0 ? 20.0 * std::log10(m / reference) : kDbFloor;
    return std::max(db, kDbFloor);
  });
}

namespace detail {

inline void write_text(const std::filesystem::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error(ErrorCode::IoError, "cannot open for writing: " + path.string());
  out << text;
  if (!out) throw Error(ErrorCode::IoError, "write failed: " + path.string());
}

inline void append_format(std::string& out, const char* fmt, auto... args) {
  char buf[160];
  const int n = std::snprintf(buf, sizeof buf, fmt, args...);
  out.append(buf, static_cast<std::size_t>(std::clamp(n, 0, static_cast<int>(sizeof buf) - 1)));
}

inline std::string xml_escape(const std::string& text) {
  std::string out;
  for (char c : text) {
    switch (c) {
      case '&': out += "&amp;"; break;
      case '<': out += "&lt;"; break;
      case '>': out += "&gt;"; break;
      case '"': out += "&quot;"; break;
      default: out += c;
    }
  }
  return out;
}

}  // namespace detail

inline std::string waveform_csv(const Signal& signal) {
  std::string out = "time_s,amplitude\n";
  const auto x = signal.samples();
  for (std::size_t i = 0; i < x.size(); ++i) {
    detail::append_format(out, "%.6f,%.9g\n", static_cast<double>(i) / signal.sample_rate_hz(), x[i]);
  }
  return out;
}

/// One row per (frame, bin); time_s is the frame centre.
inline std::string spectrogram_csv(const Signal& signal, const StftConfig& config) {
  std::string out = "time_s,freq_hz,magnitude_db\n";
  if (signal.empty()) return out;
  const Eigen::MatrixXd db = spectrogram_db(signal, config);
  const double fs = signal.sample_rate_hz();
  for (Eigen::Index t = 0; t < db.cols(); ++t) {
    const double time = (static_cast<double>(t) * config.hop + config.window_len / 2.0) / fs;
    for (Eigen::Index k = 0; k < db.rows(); ++k) {
      detail::append_format(out, "%.6f,%.4f,%.3f\n", time, static_cast<double>(k) * fs / config.fft_len,
                            db(k, t));
    }
  }
  return out;
}

namespace detail {

// Five-stop dark-to-bright colormap over [floor, 0] dB.
inline std::string heat_color(double db) {
  static constexpr std::array<std::array<double, 3>, 5> stops{{
      {13, 8, 135}, {126, 3, 168}, {204, 71, 120}, {248, 149, 64}, {240, 249, 33}}};
  const double u = std::clamp((db - kDbFloor) / -kDbFloor, 0.0, 1.0) * (stops.size() - 1);
  const auto i = std::min<std::size_t>(static_cast<std::size_t>(u), stops.size() - 2);
  const double f = u - static_cast<double>(i);
  char buf[16];
  std::snprintf(buf, sizeof buf, "#%02x%02x%02x",
                static_cast<int>(std::lround(stops[i][0] + f * (stops[i + 1][0] - stops[i][0]))),
                static_cast<int>(std::lround(stops[i][1] + f * (stops[i + 1][1] - stops[i][1]))),
                static_cast<int>(std::lround(stops[i][2] + f * (stops[i + 1][2] - stops[i][2]))));
  return buf;
}

// Waveform and spectrogram panels for one signal, drawn inside a <g> at (x, y).
inline std::string signal_panels(const Signal& signal, const StftConfig& config, const std::string& title,
                                 double x, double y, double width, double height) {
  std::string out;
  append_format(out, "<g transform=\"translate(%.1f,%.1f)\">\n", x, y);
  out += "<text x=\"0\" y=\"14\" font-family=\"sans-serif\" font-size=\"13\">" + xml_escape(title) + "</text>\n";
  const double wave_top = 22.0;
  const double wave_h = height * 0.35;
  const double spec_top = wave_top + wave_h + 8.0;
  const double spec_h = height - spec_top;
  append_format(out, "<rect x=\"0\" y=\"%.1f\" width=\"%.1f\" height=\"%.1f\" fill=\"#ffffff\" stroke=\"#888\"/>\n",
                wave_top, width, wave_h);

  const auto samples = signal.samples();
  if (!samples.empty()) {
    // min/max decimation to at most one column per pixel
    const auto columns = static_cast<std::size_t>(std::max(1.0, width));
    double peak = 0.0;
    for (double v : samples) peak = std::max(peak, std::abs(v));
    if (peak == 0.0) peak = 1.0;
    out += "<polyline fill=\"none\" stroke=\"#1f4e9c\" stroke-width=\"0.6\" points=\"";
    for (std::size_t c = 0; c < columns; ++c) {
      const std::size_t a = c * samples.size() / columns;
      const std::size_t b = std::max(a + 1, (c + 1) * samples.size() / columns);
      if (a >= samples.size()) break;
      const auto [lo, hi] = std::minmax_element(samples.begin() + static_cast<std::ptrdiff_t>(a),
                                                samples.begin() + static_cast<std::ptrdiff_t>(std::min(b, samples.size())));
      const double px = width * (static_cast<double>(c) + 0.5) / static_cast<double>(columns);
      for (double v : {*hi, *lo}) {
        append_format(out, "%.1f,%.1f ", px, wave_top + wave_h / 2.0 - (v / peak) * wave_h / 2.0 * 0.95);
      }
    }
    out += "\"/>\n";

    const Eigen::MatrixXd db = spectrogram_db(signal, config);
    const Eigen::Index frames = db.cols();
    const Eigen::Index bins = db.rows();
    const Eigen::Index cols = std::min<Eigen::Index>(frames, 200);
    const Eigen::Index rows = std::min<Eigen::Index>(bins, 128);
    const double cw = width / static_cast<double>(cols);
    const double rh = spec_h / static_cast<double>(rows);
    for (Eigen::Index c = 0; c < cols; ++c) {
      const Eigen::Index f0 = c * frames / cols;
      const Eigen::Index f1 = std::max(f0 + 1, (c + 1) * frames / cols);
      for (Eigen::Index r = 0; r < rows; ++r) {
        const Eigen::Index b0 = r * bins / rows;
        const Eigen::Index b1 = std::max(b0 + 1, (r + 1) * bins / rows);
        const double value = db.block(b0, f0, b1 - b0, f1 - f0).maxCoeff();
        append_format(out, "<rect x=\"%.2f\" y=\"%.2f\" width=\"%.2f\" height=\"%.2f\" fill=\"%s\"/>\n",
                      static_cast<double>(c) * cw, spec_top + spec_h - static_cast<double>(r + 1) * rh,
                      cw + 0.05, rh + 0.05, heat_color(value).c_str());
      }
    }
  }
  out += "</g>\n";
  return out;
}

inline std::string svg_document(double width, double height, const std::string& body) {
  std::string out;
  append_format(out,
                "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"%.0f\" height=\"%.0f\" "
                "viewBox=\"0 0 %.0f %.0f\">\n",
                width, height, width, height);
  out += "<rect width=\"100%\" height=\"100%\" fill=\"#fafafa\"/>\n";
  out += body;
  out += "</svg>\n";
  return out;
}

}  // namespace detail

/// Waveform on top, spectrogram heatmap below.
inline std::string signal_svg(const Signal& signal, const StftConfig& config, const std::string& title) {
  return detail::svg_document(820, 420, detail::signal_panels(signal, config, title, 10, 10, 800, 400));
}

/// Figure layout: mixture across the top, heart bottom-left, lung bottom-right.
inline std::string figure_svg(const Signal& mixture, const Signal& heart, const Signal& lung,
                              const StftConfig& config) {
  std::string body;
  body += detail::signal_panels(mixture, config, "Mixture", 10, 10, 1000, 340);
  body += detail::signal_panels(heart, config, "Separated heart", 10, 370, 490, 340);
  body += detail::signal_panels(lung, config, "Separated lung", 520, 370, 490, 340);
  return detail::svg_document(1020, 720, body);
}

inline void write_text_file(const std::filesystem::path& path, const std::string& text) {
  detail::write_text(path, text);
}

}  // namespace biosep
