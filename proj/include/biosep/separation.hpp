#pragma once

#include <algorithm>
#include <optional>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "biosep/audio_io.hpp"
#include "biosep/error.hpp"
#include "biosep/features.hpp"
#include "biosep/nmf.hpp"
#include "biosep/timefreq.hpp"

namespace biosep {

struct ComponentGroup {
  SourceLabel label = SourceLabel::residual;
  std::vector<int> component_indices;

  friend bool operator==(const ComponentGroup&, const ComponentGroup&) = default;
};

/// Thresholds for assigning NMF components to physiological sources.
struct GroupingConfig {
  double min_rate_hz = 0.5;              // activation periodicity band, 30-210 BPM
  double max_rate_hz = 3.5;
  double periodicity_threshold = 0.3;
  double heart_max_centroid_hz = 250.0;  // periodic components above this are lung-like
  double residual_max_energy_share = 0.01;
};

/// Per-component measurements that drive the grouping decision.
struct ComponentEvidence {
  int index = 0;
  double centroid_hz = 0.0;
  Periodicity periodicity;
  double energy_share = 0.0;
  SourceLabel label = SourceLabel::residual;
};

/// Decision rules, in order:
///  1. energy share of the component below residual_max_energy_share -> residual
///  2. H row periodic in the heart-rate band and W centroid below
///     heart_max_centroid_hz -> heart
///  3. everything else -> lung
inline std::vector<ComponentEvidence> assess_components(const NmfModel& model, int sample_rate_hz,
                                                        const StftConfig& stft_config,
                                                        const GroupingConfig& config = {}) {
  const Eigen::Index r = model.W.cols();
  if (r < 1 || model.H.rows() != r) throw Error(ErrorCode::ShapeMismatch, "invalid model");

  const double bin_hz = static_cast<double>(sample_rate_hz) / stft_config.fft_len;
  const double frame_rate = static_cast<double>(sample_rate_hz) / stft_config.hop;
  const PeriodicityConfig band{1.0 / config.max_rate_hz, 1.0 / config.min_rate_hz,
                               config.periodicity_threshold};

  Eigen::VectorXd mass(r);
  for (Eigen::Index k = 0; k < r; ++k) mass(k) = model.W.col(k).sum() * model.H.row(k).sum();
  const double total_mass = mass.sum();

  std::vector<ComponentEvidence> out;
  out.reserve(static_cast<std::size_t>(r));
  for (Eigen::Index k = 0; k < r; ++k) {
    ComponentEvidence e;
    e.index = static_cast<int>(k);
    const Eigen::VectorXd column = model.W.col(k);
    if (column.sum() > 0.0) {
      e.centroid_hz = spectral_centroid(std::span<const double>(column.data(), column.size()), bin_hz);
    }
    const Eigen::VectorXd row = model.H.row(k).transpose();
    e.periodicity = periodicity(std::span<const double>(row.data(), row.size()), frame_rate, band);
    e.energy_share = total_mass > 0.0 ? mass(k) / total_mass : 0.0;

    const bool periodic = e.periodicity.period_s > 0.0;
    if (e.energy_share < config.residual_max_energy_share) {
      e.label = SourceLabel::residual;
    } else if (periodic && e.centroid_hz < config.heart_max_centroid_hz) {
      e.label = SourceLabel::heart;
    } else {
      e.label = SourceLabel::lung;
    }
    out.push_back(e);
  }
  return out;
}

/// Partitions {0..r-1} into at most one group per label, ordered heart, lung,
/// residual; empty groups are omitted.
inline std::vector<ComponentGroup> groups_from_evidence(const std::vector<ComponentEvidence>& evidence) {
  std::vector<ComponentGroup> groups;
  for (SourceLabel label : {SourceLabel::heart, SourceLabel::lung, SourceLabel::residual}) {
    ComponentGroup g{label, {}};
    for (const auto& e : evidence)
      if (e.label == label) g.component_indices.push_back(e.index);
    if (!g.component_indices.empty()) groups.push_back(std::move(g));
  }
  return groups;
}

inline std::vector<ComponentGroup> group_components(const NmfModel& model, int sample_rate_hz,
                                                    const StftConfig& stft_config,
                                                    const GroupingConfig& config = {}) {
  return groups_from_evidence(assess_components(model, sample_rate_hz, stft_config, config));
}

/// Wiener-style ratio masks: M_g = (W_g H_g) / max(WH, epsilon).
inline std::vector<Eigen::MatrixXd> group_masks(const NmfModel& model,
                                                const std::vector<ComponentGroup>& groups,
                                                double epsilon = 1e-12) {
  const Eigen::MatrixXd total = (model.W * model.H).cwiseMax(epsilon);
  std::vector<Eigen::MatrixXd> masks;
  masks.reserve(groups.size());
  for (const auto& g : groups) {
    Eigen::MatrixXd part = Eigen::MatrixXd::Zero(total.rows(), total.cols());
    for (int k : g.component_indices) {
      if (k < 0 || k >= model.W.cols()) throw Error(ErrorCode::ShapeMismatch, "component index out of range");
      part.noalias() += model.W.col(k) * model.H.row(k);
    }
    masks.push_back(part.cwiseQuotient(total));
  }
  return masks;
}

/// Applies each group's mask to the complex mixture, keeping the mixture phase.
inline std::vector<ComplexSpectrogram> soft_mask(const ComplexSpectrogram& mixture,
                                                 const NmfModel& model,
                                                 const std::vector<ComponentGroup>& groups,
                                                 double epsilon = 1e-12) {
  if (model.W.rows() != mixture.num_bins() || model.H.cols() != mixture.num_frames() ||
      model.W.cols() != model.H.rows()) {
    throw Error(ErrorCode::ShapeMismatch, "model shape does not match the mixture spectrogram");
  }
  const auto masks = group_masks(model, groups, epsilon);
  std::vector<ComplexSpectrogram> out;
  out.reserve(masks.size());
  for (const auto& mask : masks) {
    ComplexSpectrogram cs = mixture;
    cs.bins = mixture.bins.cwiseProduct(mask.cast<std::complex<double>>());
    out.push_back(std::move(cs));
  }
  return out;
}

struct SeparatedSource {
  SourceLabel label = SourceLabel::residual;
  std::vector<int> component_indices;
  Signal signal;
  Spectrogram magnitude;
};

struct SeparatedSources {
  Signal mixture;
  Spectrogram mixture_spectrogram;
  NmfModel model;
  std::vector<ComponentEvidence> evidence;
  std::vector<SeparatedSource> sources;

  const SeparatedSource* find(SourceLabel label) const {
    for (const auto& s : sources)
      if (s.label == label) return &s;
    return nullptr;
  }
};

/// stft -> magnitude -> factorize -> group -> mask -> istft per group.
inline SeparatedSources separate(const Signal& mixture, const StftConfig& stft_config,
                                 const NmfConfig& nmf_config,
                                 const GroupingConfig& grouping = {}) {
  const ComplexSpectrogram cs = stft(mixture, stft_config);
  SeparatedSources out;
  out.mixture = mixture;
  out.mixture_spectrogram = magnitude(cs);
  out.model = factorize(out.mixture_spectrogram.values, nmf_config);
  out.evidence = assess_components(out.model, mixture.sample_rate_hz(), stft_config, grouping);
  const auto groups = groups_from_evidence(out.evidence);
  auto masked = soft_mask(cs, out.model, groups, nmf_config.epsilon);
  for (std::size_t g = 0; g < groups.size(); ++g) {
    SeparatedSource s;
    s.label = groups[g].label;
    s.component_indices = groups[g].component_indices;
    s.signal = istft(masked[g]);
    s.magnitude = magnitude(masked[g]);
    out.sources.push_back(std::move(s));
  }
  return out;
}

}  // namespace biosep
