#include <atomic>
#include <cstdio>
#include <cstdlib>
#include <ctime>
#include <exception>
#include <filesystem>
#include <iostream>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <thread>
#include <vector>

#include "CLI11.hpp"
#include "biosep/biosep.hpp"
#include "biosep/remote_backend.hpp"
#include "json.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitRuntime = 1;
constexpr int kExitUsage = 2;

// Raised for argument combinations CLI11 cannot check on its own.
struct UsageError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

std::string generated_at() {
  std::time_t now = std::time(nullptr);
  if (const char* epoch = std::getenv("SOURCE_DATE_EPOCH"); epoch != nullptr && *epoch != '\0') {
    now = static_cast<std::time_t>(std::strtoll(epoch, nullptr, 10));
  }
  std::tm utc{};
  gmtime_r(&now, &utc);
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &utc);
  return buf;
}

void write_json(const fs::path& path, const json& doc) {
  biosep::write_text_file(path, doc.dump(2) + "\n");
}

fs::path ensure_dir(const std::string& dir) {
  fs::path p(dir.empty() ? "." : dir);
  std::error_code ec;
  fs::create_directories(p, ec);
  if (ec) throw biosep::Error(biosep::ErrorCode::IoError, "cannot create " + p.string() + ": " + ec.message());
  return p;
}

// "rec.wav" -> "rec"
std::string stem_of(const fs::path& path) { return path.stem().string(); }

bool is_silent(const biosep::Signal& s) {
  for (double v : s.samples())
    if (v != 0.0) return false;
  return true;
}

// Flags shared by separate / analyze / plot-data, layered over --config.
struct PipelineFlags {
  std::string config_path;
  std::optional<int> rank;
  std::optional<std::uint64_t> seed;
  std::optional<std::string> out;

  void attach(CLI::App* cmd) {
    cmd->add_option("--config", config_path, "JSON config file")->check(CLI::ExistingFile);
    cmd->add_option("--rank", rank, "NMF rank")->check(CLI::PositiveNumber);
    cmd->add_option("--seed", seed, "NMF initialization seed");
    cmd->add_option("--out", out, "output directory");
  }

  biosep::RunConfig resolve() const {
    biosep::RunConfig config = config_path.empty() ? biosep::RunConfig{} : biosep::load_config(config_path);
    if (rank) config.nmf.rank = *rank;
    if (seed) config.seed = *seed;
    if (out) config.out_dir = *out;
    return config;
  }
};

// ---- synth -----------------------------------------------------------------

struct SynthArgs {
  biosep::HeartParams heart;
  biosep::LungParams lung{.seed = 1};
  double duration_s = 10.0;
  int sample_rate_hz = 4000;
  double snr_db = 0.0;
  std::uint64_t seed = 0;
  bool no_heart = false;
  bool no_lung = false;
  std::string out;
};

int run_synth(const SynthArgs& a) {
  biosep::HeartParams heart = a.heart;
  biosep::LungParams lung = a.lung;
  heart.seed = a.seed;
  lung.seed = a.seed + 1;
  try {
    biosep::validate(heart, a.sample_rate_hz);
    biosep::validate(lung, a.sample_rate_hz);
  } catch (const biosep::Error& e) {
    throw UsageError(e.what());
  }
  if (a.no_heart && a.no_lung) throw UsageError("--no-heart and --no-lung leave nothing to mix");

  const fs::path dir = ensure_dir(a.out);
  const biosep::Signal h = biosep::synth_heart(heart, a.duration_s, a.sample_rate_hz);
  const biosep::Signal l = biosep::synth_lung(lung, a.duration_s, a.sample_rate_hz);

  double heart_gain = a.no_heart ? 0.0 : 1.0;
  double lung_gain = a.no_lung ? 0.0 : 1.0;
  if (!a.no_heart && !a.no_lung && !h.empty()) lung_gain = biosep::snr_gain(h, l, a.snr_db);

  const biosep::Signal heart_ref = biosep::mix({h}, {heart_gain});
  const biosep::Signal lung_ref = biosep::mix({l}, {lung_gain});
  const biosep::Signal mixture = biosep::mix({heart_ref, lung_ref}, {1.0, 1.0});

  biosep::write_wav(dir / "mixture.wav", mixture);
  biosep::write_wav(dir / "heart.wav", heart_ref);
  biosep::write_wav(dir / "lung.wav", lung_ref);

  const json params{
      {"duration_s", a.duration_s},
      {"sample_rate_hz", a.sample_rate_hz},
      {"snr_db", a.snr_db},
      {"seed", a.seed},
      {"heart",
       {{"enabled", !a.no_heart},
        {"rr_mean_s", heart.rr_mean_s},
        {"rr_jitter_cv", heart.rr_jitter_cv},
        {"s1_freq_hz", heart.s1_freq_hz},
        {"s2_freq_hz", heart.s2_freq_hz},
        {"pulse_decay_s", heart.pulse_decay_s},
        {"seed", heart.seed},
        {"gain", heart_gain}}},
      {"lung",
       {{"enabled", !a.no_lung},
        {"center_freq_hz", lung.center_freq_hz},
        {"bandwidth_hz", lung.bandwidth_hz},
        {"burst_rate_per_s", lung.burst_rate_per_s},
        {"burst_duty", lung.burst_duty},
        {"seed", lung.seed},
        {"gain", lung_gain}}},
      {"files", {"mixture.wav", "heart.wav", "lung.wav"}}};
  write_json(dir / "params.json", params);
  std::cout << "wrote " << (dir / "mixture.wav").string() << ", heart.wav, lung.wav, params.json\n";
  return kExitOk;
}

// ---- separate --------------------------------------------------------------

struct SeparateArgs {
  std::string input;
  PipelineFlags flags;
  bool save_model = false;
};

json group_json(const biosep::SeparatedSources& sep) {
  json groups = json::object();
  for (auto label : {biosep::SourceLabel::heart, biosep::SourceLabel::lung, biosep::SourceLabel::residual}) {
    const auto* s = sep.find(label);
    groups[std::string(biosep::to_string(label))] = s ? s->component_indices : std::vector<int>{};
  }
  return groups;
}

biosep::Signal source_or_silence(const biosep::SeparatedSources& sep, biosep::SourceLabel label) {
  if (const auto* s = sep.find(label)) return s->signal;
  return biosep::Signal(std::vector<double>(sep.mixture.size(), 0.0), sep.mixture.sample_rate_hz());
}

int run_separate(const SeparateArgs& a) {
  biosep::RunConfig config;
  try {
    config = a.flags.resolve();
    config.validate();
  } catch (const biosep::Error& e) {
    if (e.code() == biosep::ErrorCode::FileNotFound) throw;
    throw UsageError(e.what());
  }

  const biosep::Signal mixture = biosep::read_wav(a.input);
  const auto sep = biosep::separate(mixture, config.stft, config.nmf_config(), config.grouping);

  const fs::path dir = ensure_dir(config.out_dir);
  const std::string stem = stem_of(a.input);
  std::vector<std::string> outputs;
  for (auto label : {biosep::SourceLabel::heart, biosep::SourceLabel::lung, biosep::SourceLabel::residual}) {
    const std::string name = stem + "." + std::string(biosep::to_string(label)) + ".wav";
    biosep::write_wav(dir / name, source_or_silence(sep, label));
    outputs.push_back(name);
  }
  if (a.save_model) {
    const std::string name = stem + ".model.json";
    write_json(dir / name, biosep::to_json(sep.model));
    outputs.push_back(name);
  }

  json components = json::array();
  for (const auto& e : sep.evidence) {
    components.push_back({{"index", e.index},
                          {"label", std::string(biosep::to_string(e.label))},
                          {"centroid_hz", e.centroid_hz},
                          {"period_s", e.periodicity.period_s},
                          {"periodicity_strength", e.periodicity.strength},
                          {"energy_share", e.energy_share}});
  }
  const auto& trace = sep.model.divergence_trace;
  const json manifest{
      {"command", "separate"},
      {"input", fs::path(a.input).filename().string()},
      {"sample_rate_hz", mixture.sample_rate_hz()},
      {"num_samples", mixture.size()},
      {"config", biosep::to_json(config)},
      {"nmf",
       {{"iterations", sep.model.iterations()},
        {"initial_divergence", trace.front()},
        {"final_divergence", trace.back()},
        {"divergence_trace", trace}}},
      {"components", components},
      {"groups", group_json(sep)},
      {"outputs", outputs},
      {"generated_at", generated_at()}};
  write_json(dir / (stem + ".manifest.json"), manifest);

  std::cout << "separated " << a.input << ": " << sep.model.iterations() << " iterations, groups "
            << group_json(sep).dump() << "\n";
  return kExitOk;
}

// ---- analyze ---------------------------------------------------------------

struct AnalyzeArgs {
  std::vector<std::string> inputs;
  PipelineFlags flags;
  bool separated = false;
  std::optional<std::string> backend;
  std::optional<std::string> llm_url;
  std::optional<double> timeout_s;
  std::optional<int> max_tokens;
  std::optional<int> max_inflight;
};

struct SourceInput {
  biosep::SourceLabel label;
  biosep::Signal signal;
  std::string stem;
};

// "rec.heart.wav" -> (heart, "rec")
std::pair<biosep::SourceLabel, std::string> label_from_name(const fs::path& path) {
  const fs::path inner = path.stem();
  const std::string suffix = inner.extension().string();
  if (suffix.size() < 2) throw UsageError("cannot infer source label from " + path.string());
  try {
    return {biosep::parse_source_label(suffix.substr(1)), inner.stem().string()};
  } catch (const biosep::Error&) {
    throw UsageError("cannot infer source label from " + path.string());
  }
}

std::unique_ptr<biosep::Backend> make_backend(const biosep::RunConfig& config) {
  if (config.backend == biosep::BackendKind::remote) {
    return std::make_unique<biosep::RemoteBackend>(
        biosep::RemoteConfig{config.llm_url, config.llm_timeout_s, config.max_tokens, std::nullopt});
  }
  return std::make_unique<biosep::MockBackend>(config.labels, config.mock);
}

// Interprets all prompts with at most `inflight` requests at a time; results keep prompt order.
std::vector<biosep::DiagnosticReport> interpret_all(const std::vector<biosep::Prompt>& prompts,
                                                    biosep::Backend& backend, const biosep::LabelSet& labels,
                                                    int inflight) {
  std::vector<std::optional<biosep::DiagnosticReport>> results(prompts.size());
  std::exception_ptr failure;
  std::mutex failure_mutex;
  std::atomic<std::size_t> next{0};
  auto worker = [&] {
    for (std::size_t i = next++; i < prompts.size(); i = next++) {
      try {
        results[i] = biosep::interpret(prompts[i], backend, labels);
      } catch (...) {
        std::lock_guard lock(failure_mutex);
        if (!failure) failure = std::current_exception();
      }
    }
  };
  const auto threads = std::min<std::size_t>(static_cast<std::size_t>(inflight), prompts.size());
  if (backend.kind() == biosep::BackendKind::mock || threads <= 1) {
    worker();
  } else {
    std::vector<std::jthread> pool;
    for (std::size_t t = 0; t < threads; ++t) pool.emplace_back(worker);
  }
  if (failure) std::rethrow_exception(failure);
  std::vector<biosep::DiagnosticReport> out;
  for (auto& r : results) out.push_back(std::move(*r));
  return out;
}

int run_analyze(const AnalyzeArgs& a) {
  biosep::RunConfig config;
  try {
    config = a.flags.resolve();
    if (a.backend) {
      if (*a.backend == "mock") config.backend = biosep::BackendKind::mock;
      else if (*a.backend == "remote") config.backend = biosep::BackendKind::remote;
    }
    if (a.llm_url) config.llm_url = *a.llm_url;
    if (a.timeout_s) config.llm_timeout_s = *a.timeout_s;
    if (a.max_tokens) config.max_tokens = *a.max_tokens;
    if (a.max_inflight) config.max_inflight = *a.max_inflight;
    config.validate();
    if (config.backend == biosep::BackendKind::remote) biosep::parse_url(config.llm_url);
  } catch (const biosep::Error& e) {
    if (e.code() == biosep::ErrorCode::FileNotFound) throw;
    throw UsageError(e.what());
  }
  if (!a.separated && a.inputs.size() != 1) throw UsageError("analyze takes one mixture unless --separated is given");

  std::vector<SourceInput> sources;
  if (a.separated) {
    for (const auto& in : a.inputs) {
      auto [label, stem] = label_from_name(in);
      sources.push_back({label, biosep::read_wav(in), stem});
    }
  } else {
    const biosep::Signal mixture = biosep::read_wav(a.inputs.front());
    const auto sep = biosep::separate(mixture, config.stft, config.nmf_config(), config.grouping);
    for (const auto& s : sep.sources) sources.push_back({s.label, s.signal, stem_of(a.inputs.front())});
  }

  std::vector<biosep::FeatureVector> features;
  std::vector<biosep::Prompt> prompts;
  std::vector<const SourceInput*> kept;
  for (const auto& src : sources) {
    if (src.signal.empty() || is_silent(src.signal)) continue;
    const auto spec = biosep::magnitude(biosep::stft(src.signal, config.stft));
    features.push_back(biosep::extract_features(src.signal, spec, src.label, config.features));
    prompts.push_back(biosep::format_prompt(features.back(), config.labels));
    kept.push_back(&src);
  }

  auto backend = make_backend(config);
  const auto reports = interpret_all(prompts, *backend, config.labels, config.max_inflight);

  const fs::path dir = ensure_dir(config.out_dir);
  for (std::size_t i = 0; i < reports.size(); ++i) {
    const std::string base = kept[i]->stem + "." + std::string(biosep::to_string(kept[i]->label));
    biosep::write_text_file(dir / (base + ".features.csv"),
                            biosep::csv_header() + "\n" + biosep::to_csv_row(features[i]) + "\n");
    write_json(dir / (base + ".features.json"), biosep::to_json(features[i]));
    json report = biosep::to_json(reports[i]);
    report["prompt"] = prompts[i].text;
    write_json(dir / (base + ".report.json"), report);

    const auto& f = features[i];
    std::printf("%s: %s (period %s s, strength %s, rr_cv %s, dominant %s Hz)\n",
                std::string(biosep::to_string(f.source_label)).c_str(), reports[i].prediction.c_str(),
                biosep::format_sig4(f.envelope_period_s).c_str(),
                biosep::format_sig4(f.periodicity_strength).c_str(), biosep::format_sig4(f.rr_cv).c_str(),
                biosep::format_sig4(f.dominant_freq_hz).c_str());
  }
  if (reports.empty()) std::printf("no non-silent sources to analyze\n");
  return kExitOk;
}

// ---- plot-data -------------------------------------------------------------

struct PlotArgs {
  std::string input;
  std::string separated_dir;
  PipelineFlags flags;
};

void emit_plot_files(const fs::path& dir, const std::string& base, const biosep::Signal& s,
                     const biosep::StftConfig& stft, const std::string& title) {
  biosep::write_text_file(dir / (base + ".waveform.csv"), biosep::waveform_csv(s));
  biosep::write_text_file(dir / (base + ".spectrogram.csv"), biosep::spectrogram_csv(s, stft));
  biosep::write_text_file(dir / (base + ".svg"), biosep::signal_svg(s, stft, title));
}

int run_plot(const PlotArgs& a) {
  biosep::RunConfig config;
  try {
    config = a.flags.resolve();
    config.validate();
  } catch (const biosep::Error& e) {
    if (e.code() == biosep::ErrorCode::FileNotFound) throw;
    throw UsageError(e.what());
  }

  const biosep::Signal mixture = biosep::read_wav(a.input);
  const fs::path dir = ensure_dir(config.out_dir);
  const std::string stem = stem_of(a.input);
  emit_plot_files(dir, stem, mixture, config.stft, stem);

  if (!a.separated_dir.empty()) {
    std::map<std::string, biosep::Signal> parts;
    for (const char* label : {"heart", "lung", "residual"}) {
      const fs::path path = fs::path(a.separated_dir) / (stem + "." + label + ".wav");
      if (std::string(label) == "residual" && !fs::exists(path)) continue;
      parts[label] = biosep::read_wav(path);
      emit_plot_files(dir, stem + "." + label, parts[label], config.stft, stem + " " + label);
    }
    biosep::write_text_file(dir / (stem + ".figure.svg"),
                            biosep::figure_svg(mixture, parts["heart"], parts["lung"], config.stft));
  }
  std::cout << "plot data written to " << dir.string() << "\n";
  return kExitOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Heart/lung sound separation and feature interpretation"};
  app.name("biosep");
  app.require_subcommand(1);

  SynthArgs synth;
  auto* synth_cmd = app.add_subcommand("synth", "generate a synthetic heart + lung mixture");
  synth_cmd->add_option("--rr-mean", synth.heart.rr_mean_s, "mean beat interval, s")->capture_default_str();
  synth_cmd->add_option("--jitter-cv", synth.heart.rr_jitter_cv, "RR coefficient of variation")
      ->check(CLI::NonNegativeNumber)
      ->capture_default_str();
  synth_cmd->add_option("--s1-freq", synth.heart.s1_freq_hz, "S1 frequency, Hz")->capture_default_str();
  synth_cmd->add_option("--s2-freq", synth.heart.s2_freq_hz, "S2 frequency, Hz")->capture_default_str();
  synth_cmd->add_option("--pulse-decay", synth.heart.pulse_decay_s, "pulse decay, s")->capture_default_str();
  synth_cmd->add_option("--lung-center", synth.lung.center_freq_hz, "lung band centre, Hz")->capture_default_str();
  synth_cmd->add_option("--lung-bandwidth", synth.lung.bandwidth_hz, "lung bandwidth, Hz")->capture_default_str();
  synth_cmd->add_option("--burst-rate", synth.lung.burst_rate_per_s, "lung bursts per second")
      ->check(CLI::NonNegativeNumber)
      ->capture_default_str();
  synth_cmd->add_option("--burst-duty", synth.lung.burst_duty, "lung burst duty cycle")->capture_default_str();
  synth_cmd->add_option("--duration", synth.duration_s, "seconds")->check(CLI::NonNegativeNumber)->capture_default_str();
  synth_cmd->add_option("--sample-rate", synth.sample_rate_hz, "Hz")->check(CLI::PositiveNumber)->capture_default_str();
  synth_cmd->add_option("--snr-db", synth.snr_db, "heart-to-lung energy ratio, dB")->capture_default_str();
  synth_cmd->add_option("--seed", synth.seed, "heart seed; the lung uses seed + 1")->capture_default_str();
  synth_cmd->add_flag("--no-heart", synth.no_heart, "leave the heart out of the mixture");
  synth_cmd->add_flag("--no-lung", synth.no_lung, "leave the lung out of the mixture");
  synth_cmd->add_option("--out", synth.out, "output directory")->required();

  SeparateArgs sep;
  auto* sep_cmd = app.add_subcommand("separate", "split a mixture into heart, lung and residual WAVs");
  sep_cmd->add_option("input", sep.input, "mixture WAV")->required();
  sep.flags.attach(sep_cmd);
  sep_cmd->add_flag("--save-model", sep.save_model, "also write the NMF model as JSON");

  AnalyzeArgs an;
  auto* an_cmd = app.add_subcommand("analyze", "extract features and interpret each source");
  an_cmd->add_option("inputs", an.inputs, "mixture WAV, or <stem>.<label>.wav files with --separated")
      ->required();
  an.flags.attach(an_cmd);
  an_cmd->add_flag("--separated", an.separated, "inputs are already-separated sources");
  an_cmd->add_option("--backend", an.backend, "mock | remote")->check(CLI::IsMember({"mock", "remote"}));
  an_cmd->add_option("--llm-url", an.llm_url, "remote backend endpoint");
  an_cmd->add_option("--timeout", an.timeout_s, "remote request timeout, s")->check(CLI::PositiveNumber);
  an_cmd->add_option("--max-tokens", an.max_tokens, "remote completion budget")->check(CLI::PositiveNumber);
  an_cmd->add_option("--max-inflight", an.max_inflight, "concurrent remote requests (default 2)")
      ->check(CLI::PositiveNumber);

  PlotArgs plot;
  auto* plot_cmd = app.add_subcommand("plot-data", "write waveform/spectrogram CSVs and SVG renderings");
  plot_cmd->add_option("input", plot.input, "WAV file")->required();
  plot_cmd->add_option("--separated-dir", plot.separated_dir, "directory holding <stem>.heart/.lung.wav");
  plot.flags.attach(plot_cmd);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kExitOk : kExitUsage;
  }

  try {
    if (*synth_cmd) return run_synth(synth);
    if (*sep_cmd) return run_separate(sep);
    if (*an_cmd) return run_analyze(an);
    if (*plot_cmd) return run_plot(plot);
  } catch (const UsageError& e) {
    std::cerr << "biosep: usage error: " << e.what() << "\nRun with --help for usage.\n";
    return kExitUsage;
  } catch (const biosep::Error& e) {
    std::cerr << "biosep: " << e.what() << "\n";
    return kExitRuntime;
  } catch (const std::exception& e) {
    std::cerr << "biosep: IoError: " << e.what() << "\n";
    return kExitRuntime;
  }
  return kExitUsage;
}
