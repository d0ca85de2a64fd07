#pragma once

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <set>
#include <string>
#include <vector>

#include "biosep/error.hpp"
#include "biosep/features.hpp"
#include "biosep/interpret.hpp"
#include "biosep/nmf.hpp"
#include "biosep/separation.hpp"
#include "biosep/timefreq.hpp"
#include "json.hpp"

namespace biosep {

/// Effective settings of one CLI run. Precedence: flags > --config file > defaults.
struct RunConfig {
  StftConfig stft;
  NmfConfig nmf;
  GroupingConfig grouping;
  FeatureConfig features;
  MockThresholds mock;
  LabelSet labels = LabelSet::defaults();
  BackendKind backend = BackendKind::mock;
  std::string llm_url;
  double llm_timeout_s = 30.0;
  int max_tokens = 256;
  int max_inflight = 2;
  std::string out_dir = ".";
  std::uint64_t seed = 0;

  void validate() const {
    stft.validate();
    NmfConfig effective = nmf;
    effective.seed = seed;
    effective.validate();
    if (!(grouping.min_rate_hz > 0.0 && grouping.max_rate_hz > grouping.min_rate_hz))
      throw Error(ErrorCode::InvalidConfig, "grouping rate band must satisfy 0 < min < max");
    if (!(features.envelope_frame_ms > 0.0))
      throw Error(ErrorCode::InvalidConfig, "envelope_frame_ms must be > 0");
    if (!(features.periodicity.min_period_s > 0.0 &&
          features.periodicity.max_period_s > features.periodicity.min_period_s))
      throw Error(ErrorCode::InvalidConfig, "feature period band must satisfy 0 < min < max");
    if (!(llm_timeout_s > 0.0)) throw Error(ErrorCode::InvalidConfig, "llm_timeout_s must be > 0");
    if (max_tokens < 1) throw Error(ErrorCode::InvalidConfig, "max_tokens must be >= 1");
    if (max_inflight < 1) throw Error(ErrorCode::InvalidConfig, "max_inflight must be >= 1");
    if (backend == BackendKind::remote && llm_url.empty())
      throw Error(ErrorCode::InvalidConfig, "remote backend needs llm_url");
  }

  NmfConfig nmf_config() const {
    NmfConfig c = nmf;
    c.seed = seed;
    return c;
  }
};

namespace detail {

// Visits a JSON object, rejecting keys the handler does not consume.
template <typename Handler>
void read_object(const nlohmann::json& obj, const std::string& where, Handler&& handle) {
  if (!obj.is_object()) throw Error(ErrorCode::InvalidConfig, where + " must be a JSON object");
  for (const auto& [key, value] : obj.items()) {
    if (!handle(key, value)) throw Error(ErrorCode::InvalidConfig, "unknown key '" + where + "." + key + "'");
  }
}

template <typename T>
T get_as(const nlohmann::json& value, const std::string& key) {
  try {
    return value.get<T>();
  } catch (const nlohmann::json::exception&) {
    throw Error(ErrorCode::InvalidConfig, "wrong type for '" + key + "'");
  }
}

}  // namespace detail

/// Overlays the settings present in `doc` onto `config`.
inline void apply_json(RunConfig& config, const nlohmann::json& doc) {
  using detail::get_as;
  using detail::read_object;

  read_object(doc, "config", [&](const std::string& key, const nlohmann::json& v) {
    if (key == "stft") {
      read_object(v, "stft", [&](const std::string& k, const nlohmann::json& x) {
        if (k == "window_len") config.stft.window_len = get_as<int>(x, k);
        else if (k == "hop") config.stft.hop = get_as<int>(x, k);
        else if (k == "fft_len") config.stft.fft_len = get_as<int>(x, k);
        else if (k == "window") {
          if (get_as<std::string>(x, k) != "hann") throw Error(ErrorCode::InvalidConfig, "only the hann window is supported");
        } else return false;
        return true;
      });
    } else if (key == "nmf") {
      read_object(v, "nmf", [&](const std::string& k, const nlohmann::json& x) {
        if (k == "rank") config.nmf.rank = get_as<int>(x, k);
        else if (k == "max_iters") config.nmf.max_iters = get_as<int>(x, k);
        else if (k == "rel_tol") config.nmf.rel_tol = get_as<double>(x, k);
        else if (k == "epsilon") config.nmf.epsilon = get_as<double>(x, k);
        else return false;
        return true;
      });
    } else if (key == "grouping") {
      read_object(v, "grouping", [&](const std::string& k, const nlohmann::json& x) {
        auto& g = config.grouping;
        if (k == "min_rate_hz") g.min_rate_hz = get_as<double>(x, k);
        else if (k == "max_rate_hz") g.max_rate_hz = get_as<double>(x, k);
        else if (k == "periodicity_threshold") g.periodicity_threshold = get_as<double>(x, k);
        else if (k == "heart_max_centroid_hz") g.heart_max_centroid_hz = get_as<double>(x, k);
        else if (k == "residual_max_energy_share") g.residual_max_energy_share = get_as<double>(x, k);
        else return false;
        return true;
      });
    } else if (key == "features") {
      read_object(v, "features", [&](const std::string& k, const nlohmann::json& x) {
        auto& f = config.features;
        if (k == "envelope_frame_ms") f.envelope_frame_ms = get_as<double>(x, k);
        else if (k == "min_period_s") f.periodicity.min_period_s = get_as<double>(x, k);
        else if (k == "max_period_s") f.periodicity.max_period_s = get_as<double>(x, k);
        else if (k == "periodicity_threshold") f.periodicity.threshold = get_as<double>(x, k);
        else if (k == "peak_threshold_std") f.peaks.threshold_std = get_as<double>(x, k);
        else if (k == "peak_min_distance_s") f.peaks.min_distance_s = get_as<double>(x, k);
        else return false;
        return true;
      });
    } else if (key == "mock") {
      read_object(v, "mock", [&](const std::string& k, const nlohmann::json& x) {
        auto& m = config.mock;
        if (k == "periodic_strength") m.periodic_strength = get_as<double>(x, k);
        else if (k == "af_rr_cv") m.af_rr_cv = get_as<double>(x, k);
        else if (k == "regular_rr_cv") m.regular_rr_cv = get_as<double>(x, k);
        else if (k == "wheeze_burst_rate_per_s") m.wheeze_burst_rate_per_s = get_as<double>(x, k);
        else if (k == "wheeze_max_freq_hz") m.wheeze_max_freq_hz = get_as<double>(x, k);
        else if (k == "obstruction_max_centroid_hz") m.obstruction_max_centroid_hz = get_as<double>(x, k);
        else if (k == "obstruction_min_rms") m.obstruction_min_rms = get_as<double>(x, k);
        else return false;
        return true;
      });
    } else if (key == "labels") {
      config.labels = LabelSet(get_as<std::vector<std::string>>(v, key));
    } else if (key == "backend") {
      const auto name = get_as<std::string>(v, key);
      if (name == "mock") config.backend = BackendKind::mock;
      else if (name == "remote") config.backend = BackendKind::remote;
      else throw Error(ErrorCode::InvalidConfig, "backend must be 'mock' or 'remote'");
    } else if (key == "llm_url") {
      config.llm_url = get_as<std::string>(v, key);
    } else if (key == "llm_timeout_s") {
      config.llm_timeout_s = get_as<double>(v, key);
    } else if (key == "max_tokens") {
      config.max_tokens = get_as<int>(v, key);
    } else if (key == "max_inflight") {
      config.max_inflight = get_as<int>(v, key);
    } else if (key == "out_dir") {
      config.out_dir = get_as<std::string>(v, key);
    } else if (key == "seed") {
      config.seed = get_as<std::uint64_t>(v, key);
    } else {
      return false;
    }
    return true;
  });
}

inline RunConfig load_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorCode::FileNotFound, path.string());
  nlohmann::json doc;
  try {
    doc = nlohmann::json::parse(in);
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::InvalidConfig, path.string() + ": " + e.what());
  }
  RunConfig config;
  apply_json(config, doc);
  return config;
}

/// Full effective configuration, in the same shape apply_json accepts.
inline nlohmann::json to_json(const RunConfig& c) {
  return nlohmann::json{
      {"stft", {{"window_len", c.stft.window_len}, {"hop", c.stft.hop}, {"fft_len", c.stft.fft_len}, {"window", "hann"}}},
      {"nmf", {{"rank", c.nmf.rank}, {"max_iters", c.nmf.max_iters}, {"rel_tol", c.nmf.rel_tol}, {"epsilon", c.nmf.epsilon}}},
      {"grouping",
       {{"min_rate_hz", c.grouping.min_rate_hz},
        {"max_rate_hz", c.grouping.max_rate_hz},
        {"periodicity_threshold", c.grouping.periodicity_threshold},
        {"heart_max_centroid_hz", c.grouping.heart_max_centroid_hz},
        {"residual_max_energy_share", c.grouping.residual_max_energy_share}}},
      {"features",
       {{"envelope_frame_ms", c.features.envelope_frame_ms},
        {"min_period_s", c.features.periodicity.min_period_s},
        {"max_period_s", c.features.periodicity.max_period_s},
        {"periodicity_threshold", c.features.periodicity.threshold},
        {"peak_threshold_std", c.features.peaks.threshold_std},
        {"peak_min_distance_s", c.features.peaks.min_distance_s}}},
      {"mock",
       {{"periodic_strength", c.mock.periodic_strength},
        {"af_rr_cv", c.mock.af_rr_cv},
        {"regular_rr_cv", c.mock.regular_rr_cv},
        {"wheeze_burst_rate_per_s", c.mock.wheeze_burst_rate_per_s},
        {"wheeze_max_freq_hz", c.mock.wheeze_max_freq_hz},
        {"obstruction_max_centroid_hz", c.mock.obstruction_max_centroid_hz},
        {"obstruction_min_rms", c.mock.obstruction_min_rms}}},
      {"labels", c.labels.terms()},
      {"backend", std::string(to_string(c.backend))},
      {"llm_url", c.llm_url},
      {"llm_timeout_s", c.llm_timeout_s},
      {"max_tokens", c.max_tokens},
      {"max_inflight", c.max_inflight},
      {"out_dir", c.out_dir},
      {"seed", c.seed}};
}

}  // namespace biosep
