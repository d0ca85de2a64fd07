#pragma once

#include <algorithm>
#include <cctype>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <cstring>
#include <memory>
#include <optional>
#include <set>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "biosep/error.hpp"
#include "biosep/features.hpp"
#include "json.hpp"

namespace biosep {

/// Ordered set of lowercase diagnostic terms.
class LabelSet {
 public:
  explicit LabelSet(std::vector<std::string> terms) : terms_(std::move(terms)) {
    if (terms_.empty()) throw Error(ErrorCode::InvalidConfig, "label set is empty");
    std::set<std::string> seen;
    for (const auto& t : terms_) {
      if (t.empty()) throw Error(ErrorCode::InvalidConfig, "empty label term");
      if (std::any_of(t.begin(), t.end(), [](unsigned char c) { return std::isupper(c); })) {
        throw Error(ErrorCode::InvalidConfig, "label terms must be lowercase: " + t);
      }
      if (!seen.insert(t).second) throw Error(ErrorCode::InvalidConfig, "duplicate label term: " + t);
    }
  }

  static LabelSet defaults() {
    return LabelSet({"wheezing", "airway obstruction", "atrial fibrillation", "rhythm disorder", "normal"});
  }

  const std::vector<std::string>& terms() const noexcept { return terms_; }
  std::size_t size() const noexcept { return terms_.size(); }
  bool contains(std::string_view term) const {
    return std::find(terms_.begin(), terms_.end(), term) != terms_.end();
  }

  friend bool operator==(const LabelSet&, const LabelSet&) = default;

 private:
  std::vector<std::string> terms_;
};

inline constexpr std::string_view kPromptTemplateVersion = "phi-1";
inline constexpr std::string_view kUnrecognized = "unrecognized";

/// Four significant digits in fixed notation, trailing zeros kept
/// (0.374 -> "0.3740", 200 -> "200.0", 0 -> "0.000").
inline std::string format_sig4(double value) {
  if (value == 0.0 || !std::isfinite(value)) return value == 0.0 ? "0.000" : "nan";
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.3e", value);
  const int exponent = std::atoi(std::strchr(buf, 'e') + 1);
  const int decimals = std::max(0, 3 - exponent);
  std::snprintf(buf, sizeof buf, "%.*f", decimals, value);
  return buf;
}

struct Prompt {
  std::string text;
  FeatureVector feature_snapshot;
  std::string template_version;
};

/// Renders the feature vector as `name=value` lines followed by the closed list
/// of admissible answers. Pure: identical inputs give byte-identical text.
inline Prompt format_prompt(const FeatureVector& f, const LabelSet& labels) {
  std::string text;
  text += "You are assisting with the interpretation of a cardiopulmonary sound source that was "
          "separated from a stethoscope recording by non-negative matrix factorization.\n";
  text += "source=" + std::string(to_string(f.source_label)) + "\n";
  text += "features (schema_version=" + std::to_string(kFeatureSchemaVersion) + "):\n";
  const auto names = FeatureVector::numeric_names();
  const auto values = f.numeric();
  for (std::size_t i = 0; i < names.size(); ++i) {
    text += std::string(names[i]) + "=" + format_sig4(values[i]) + "\n";
  }
  text += "rr_intervals_s=[";
  for (std::size_t i = 0; i < f.rr_intervals_s.size(); ++i) {
    if (i > 0) text += ", ";
    text += format_sig4(f.rr_intervals_s[i]);
  }
  text += "]\n";
  text += "notes: rr_cv is the population standard deviation of rr_intervals_s divided by their "
          "mean; envelope_period_s=0.000 means no rhythmic period was found; burst_rate_per_s "
          "counts envelope peaks per second.\n";
  text += "Answer with exactly one term from this list:";
  for (std::size_t i = 0; i < labels.size(); ++i) {
    text += (i == 0 ? " " : " | ");
    text += labels.terms()[i];
  }
  text += "\n";
  return Prompt{std::move(text), f, std::string(kPromptTemplateVersion)};
}

enum class BackendKind { mock, remote };

constexpr std::string_view to_string(BackendKind kind) {
  return kind == BackendKind::mock ? "mock" : "remote";
}

using ScoreList = std::vector<std::pair<std::string, double>>;

/// y_k for one source. prediction is a term of the label set or "unrecognized".
struct DiagnosticReport {
  SourceLabel source = SourceLabel::residual;
  std::string prediction{kUnrecognized};
  std::optional<ScoreList> scores;
  std::string raw_response;
  BackendKind backend = BackendKind::mock;
  std::string prompt_template_version{kPromptTemplateVersion};
};

inline nlohmann::json to_json(const DiagnosticReport& r) {
  nlohmann::json scores = nullptr;
  if (r.scores) {
    scores = nlohmann::json::object();
    for (const auto& [term, score] : *r.scores) scores[term] = score;
  }
  return nlohmann::json{{"source", std::string(to_string(r.source))},
                        {"prediction", r.prediction},
                        {"scores", scores},
                        {"backend", std::string(to_string(r.backend))},
                        {"prompt_template_version", r.prompt_template_version},
                        {"raw_response", r.raw_response}};
}

/// What a backend returned. `well_formed` is false when the transport
/// envelope could not be decoded; `content` then holds the undecoded body.
struct BackendReply {
  std::string content;
  bool well_formed = true;
};

class Backend {
 public:
  virtual ~Backend() = default;
  virtual BackendKind kind() const = 0;
  virtual BackendReply complete(const Prompt& prompt) = 0;
};

namespace detail {

inline std::string lowercase(std::string_view s) {
  std::string out(s);
  for (char& c : out) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
  return out;
}

inline std::string_view trim(std::string_view s) {
  while (!s.empty() && std::isspace(static_cast<unsigned char>(s.front()))) s.remove_prefix(1);
  while (!s.empty() && std::isspace(static_cast<unsigned char>(s.back()))) s.remove_suffix(1);
  return s;
}

inline bool is_word_char(char c) {
  return std::isalnum(static_cast<unsigned char>(c)) != 0 || c == '_';
}

}  // namespace detail

/// Leftmost-longest, case-insensitive, whole-word match of any label term.
inline std::optional<std::string> match_term(std::string_view reply, const LabelSet& labels) {
  const std::string text = detail::lowercase(reply);
  for (std::size_t pos = 0; pos < text.size(); ++pos) {
    if (pos > 0 && detail::is_word_char(text[pos - 1])) continue;
    const std::string* best = nullptr;
    for (const auto& term : labels.terms()) {
      if (text.compare(pos, term.size(), term) != 0) continue;
      const std::size_t end = pos + term.size();
      if (end < text.size() && detail::is_word_char(text[end])) continue;
      if (best == nullptr || term.size() > best->size()) best = &term;
    }
    if (best != nullptr) return *best;
  }
  return std::nullopt;
}

/// Accepts replies whose every non-blank line is `term: score` with a known
/// term, each score in [0, 1], no repeats, and a total of at most 1.
inline std::optional<ScoreList> parse_score_list(std::string_view reply, const LabelSet& labels) {
  ScoreList scores;
  double total = 0.0;
  std::size_t start = 0;
  while (start <= reply.size()) {
    std::size_t end = reply.find('\n', start);
    if (end == std::string_view::npos) end = reply.size();
    const std::string_view line = detail::trim(reply.substr(start, end - start));
    start = end + 1;
    if (line.empty()) continue;

    const std::size_t colon = line.rfind(':');
    if (colon == std::string_view::npos) return std::nullopt;
    const std::string term = detail::lowercase(detail::trim(line.substr(0, colon)));
    const std::string number(detail::trim(line.substr(colon + 1)));
    if (!labels.contains(term) || number.empty()) return std::nullopt;
    char* parse_end = nullptr;
    const double value = std::strtod(number.c_str(), &parse_end);
    if (parse_end != number.c_str() + number.size() || !(value >= 0.0 && value <= 1.0)) {
      return std::nullopt;
    }
    for (const auto& [seen, _] : scores)
      if (seen == term) return std::nullopt;
    scores.emplace_back(term, value);
    total += value;
  }
  if (scores.empty() || total > 1.0 + 1e-9) return std::nullopt;
  return scores;
}

/// Calibration constants of the rule-based backend; not clinical thresholds.
struct MockThresholds {
  double periodic_strength = 0.3;
  double af_rr_cv = 0.15;
  double regular_rr_cv = 0.05;
  double wheeze_burst_rate_per_s = 0.5;
  double wheeze_max_freq_hz = 300.0;
  double obstruction_max_centroid_hz = 200.0;
  double obstruction_min_rms = 0.1;
};

struct MockDecision {
  std::string term;
  ScoreList scores;  // over the label set, in label order
};

/// Ordered rules, first match wins:
///  1. periodic, rr_cv > af_rr_cv                          -> atrial fibrillation
///  2. periodic, regular_rr_cv < rr_cv <= af_rr_cv         -> rhythm disorder
///  3. aperiodic, bursts above rate, dominant below limit  -> wheezing
///  4. aperiodic, low centroid, loud                       -> airway obstruction
///  5. otherwise                                           -> normal
/// The winner scores 0.8; the remaining 0.2 is split evenly over the other terms.
inline MockDecision mock_rules(const FeatureVector& f, const MockThresholds& t = {},
                               const LabelSet& labels = LabelSet::defaults()) {
  const bool periodic = f.envelope_period_s > 0.0 && f.periodicity_strength > t.periodic_strength;
  std::string term = "normal";
  if (periodic && f.rr_cv > t.af_rr_cv) {
    term = "atrial fibrillation";
  } else if (periodic && f.rr_cv > t.regular_rr_cv) {
    term = "rhythm disorder";
  } else if (!periodic && f.burst_rate_per_s > t.wheeze_burst_rate_per_s &&
             f.dominant_freq_hz < t.wheeze_max_freq_hz) {
    term = "wheezing";
  } else if (!periodic && f.spectral_centroid_hz < t.obstruction_max_centroid_hz &&
             f.rms_level > t.obstruction_min_rms) {
    term = "airway obstruction";
  }

  MockDecision decision{term, {}};
  if (labels.contains(term)) {
    const double others = labels.size() > 1 ? 0.2 / static_cast<double>(labels.size() - 1) : 0.0;
    for (const auto& candidate : labels.terms()) {
      decision.scores.emplace_back(candidate, candidate == term ? 0.8 : others);
    }
  }
  return decision;
}

/// Deterministic backend: applies mock_rules to the prompt's feature snapshot
/// and replies with a `term: score` list (or the bare term if it is not in
/// the label set).
class MockBackend final : public Backend {
 public:
  explicit MockBackend(LabelSet labels = LabelSet::defaults(), MockThresholds thresholds = {})
      : labels_(std::move(labels)), thresholds_(thresholds) {}

  BackendKind kind() const override { return BackendKind::mock; }

  BackendReply complete(const Prompt& prompt) override {
    const auto decision = mock_rules(prompt.feature_snapshot, thresholds_, labels_);
    if (decision.scores.empty()) return {decision.term};
    std::string reply;
    char buf[96];
    for (const auto& [term, score] : decision.scores) {
      std::snprintf(buf, sizeof buf, "%s: %.4f\n", term.c_str(), score);
      reply += buf;
    }
    return {reply};
  }

 private:
  LabelSet labels_;
  MockThresholds thresholds_;
};

/// Sends the prompt to the backend and maps the reply onto the label set.
/// Never fails on reply content: unmatched replies give "unrecognized".
inline DiagnosticReport interpret(const Prompt& prompt, Backend& backend, const LabelSet& labels) {
  DiagnosticReport report;
  report.source = prompt.feature_snapshot.source_label;
  report.backend = backend.kind();
  report.prompt_template_version = prompt.template_version;
  const BackendReply reply = backend.complete(prompt);
  report.raw_response = reply.content;

  if (!reply.well_formed) {
    report.prediction = std::string(kUnrecognized);
  } else if (auto scores = parse_score_list(report.raw_response, labels)) {
    const auto best = std::max_element(scores->begin(), scores->end(),
                                       [](const auto& a, const auto& b) { return a.second < b.second; });
    report.prediction = best->first;
    report.scores = std::move(scores);
  } else if (auto term = match_term(report.raw_response, labels)) {
    report.prediction = *term;
  } else {
    report.prediction = std::string(kUnrecognized);
  }
  return report;
}

}  // namespace biosep
