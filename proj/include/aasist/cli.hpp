#pragma once

#include <algorithm>
#include <cstdint>
#include <exception>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <optional>
#include <ostream>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "aasist/aasist.hpp"
#include "aasist/diagnostics.hpp"

namespace aasist::cli {

namespace fs = std::filesystem;

inline RunConfig load_run_config(const std::string& path) {
  if (path.empty()) return RunConfig{};
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open config " + path);
  std::ostringstream ss;
  ss << in.rdbuf();
  return parse_config(ss.str());
}

inline std::vector<std::uint64_t> parse_seed_list(const std::string& text) {
  std::vector<std::uint64_t> seeds;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ',')) seeds.push_back(detail::parse_uint("seed", detail::trim(item)));
  if (seeds.empty()) throw ConfigError("seed", "empty seed list");
  return seeds;
}

inline void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << text;
}

/// Trains once per seed. A single seed writes into out_dir, several seeds into
/// out_dir/seed_<n>.
inline int cmd_train(const std::string& config_path, const std::string& seed_list, const std::string& out_dir,
                     bool export_f32, std::ostream& out, std::ostream& err) {
  try {
    RunConfig base = load_run_config(config_path);
    std::vector<std::uint64_t> seeds;
    if (!seed_list.empty()) seeds = parse_seed_list(seed_list);
    else if (base.train.seed) seeds = {*base.train.seed};
    else throw ConfigError("seed", "no seed given (use --seed or 'seed =' in the config)");
    for (std::uint64_t seed : seeds) {
      RunConfig rc = base;
      rc.train.seed = seed;
      const fs::path dir = seeds.size() > 1 ? fs::path(out_dir) / ("seed_" + std::to_string(seed)) : fs::path(out_dir);
      fs::create_directories(dir);
      FitResult r = fit(rc);
      save_checkpoint(r.model, rc, dir / "model.aasf");
      if (export_f32) save_checkpoint(r.model, rc, dir / "model.f32.aasf", DType::kF32);
      write_text(dir / "history.tsv", format_history(r.record));
      write_text(dir / "config.txt", format_config(rc));
      out << "seed=" << seed << " steps=" << r.record.steps.size() << " final_accuracy=" << std::fixed
          << std::setprecision(4) << r.record.final_accuracy << " final_loss=" << r.record.final_loss
          << std::defaultfloat << std::setprecision(6) << " dir=" << dir.string() << "\n";
    }
    return 0;
  } catch (const std::exception& e) {
    err << "train: " << e.what() << "\n";
    return 1;
  }
}

struct ListEntry {
  std::string id;
  std::string path;
};

/// One entry per non-empty line: `path` (id = file stem) or `id<TAB>path`.
inline std::vector<ListEntry> read_wav_list(const std::string& path) {
  const std::string text = read_text_file(path);
  std::vector<ListEntry> out;
  std::istringstream in(text);
  std::string line;
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (detail::trim(line).empty()) continue;
    const auto tab = line.find('\t');
    if (tab == std::string::npos) out.push_back({fs::path(line).stem().string(), line});
    else out.push_back({line.substr(0, tab), line.substr(tab + 1)});
  }
  return out;
}

/// Scores each listed WAV in inference mode. Unreadable files are skipped with
/// a warning and make the exit code nonzero.
inline int cmd_score(const std::string& checkpoint_path, const std::string& list_path, const std::string& out_path,
                     std::ostream& out, std::ostream& err) {
  try {
    const Checkpoint ckpt = load_checkpoint(checkpoint_path);
    const Model model = model_from_checkpoint(ckpt);
    const std::vector<ListEntry> list = read_wav_list(list_path);
    ScoreFile scores;
    bool failed = false;
    NoGradGuard no_grad;
    for (const ListEntry& e : list) {
      std::vector<double> samples;
      try {
        Waveform w = read_wav(e.path);
        if (w.sample_rate != static_cast<std::uint32_t>(model.config.sample_rate)) {
          throw WavError(WavErrc::kBadFmt, "sample rate " + std::to_string(w.sample_rate) + " Hz, model expects " +
                                               detail::format_double(model.config.sample_rate));
        }
        if (w.samples.empty()) throw WavError(WavErrc::kMissingData, "empty data chunk");
        samples = crop_or_tile(w.samples, model.config.input_length);
      } catch (const WavError& we) {
        err << "warning: skipping " << e.path << ": " << we.what() << "\n";
        failed = true;
        continue;
      }
      const std::size_t len = samples.size();
      Tensor x({1, len}, std::move(samples));
      scores.rows.push_back({e.id, model.forward(x, ForwardContext::eval()).scores[0]});
    }
    write_scores(out_path, scores);
    out << "scored " << scores.rows.size() << " of " << list.size() << " files\n";
    return failed ? 1 : 0;
  } catch (const std::exception& e) {
    err << "score: " << e.what() << "\n";
    return 1;
  }
}

inline int cmd_eval(const std::string& scores_path, const std::string& labels_path, std::ostream& out,
                    std::ostream& err) {
  try {
    const ScoreFile scores = read_scores(scores_path);
    const auto labels = read_labels(labels_path);
    std::vector<double> bona, spoof;
    for (const ScoreRow& r : scores.rows) {
      auto it = labels.find(r.id);
      if (it == labels.end()) throw std::runtime_error("no label for scored id '" + r.id + "'");
      (it->second ? bona : spoof).push_back(r.score);
    }
    const EerResult e = compute_eer(bona, spoof);
    out << std::fixed << std::setprecision(4) << "EER=" << 100.0 * e.eer << " threshold=" << e.threshold << "\n";
    return 0;
  } catch (const std::exception& e) {
    err << "eval: " << e.what() << "\n";
    return 1;
  }
}

inline int cmd_gradcheck(const std::string& config_path, std::uint64_t seed, std::size_t per_tensor,
                         std::ostream& out, std::ostream& err) {
  try {
    const ModelConfig cfg = config_path.empty() ? ModelConfig::debug() : load_run_config(config_path).model;
    constexpr double kTolerance = 1e-4;
    const auto checks = gradcheck_suite(cfg, seed, per_tensor);
    print_gradcheck(checks, kTolerance, out);
    const bool ok = std::all_of(checks.begin(), checks.end(),
                                [&](const ModuleCheck& m) { return m.report.max_rel_error < kTolerance; });
    out << (ok ? "gradcheck passed" : "gradcheck FAILED") << "\n";
    return ok ? 0 : 1;
  } catch (const std::exception& e) {
    err << "gradcheck: " << e.what() << "\n";
    return 1;
  }
}

inline int cmd_info(const std::string& config_path, const std::string& preset, std::ostream& out, std::ostream& err) {
  try {
    ModelConfig cfg = config_path.empty() ? ModelConfig{} : load_run_config(config_path).model;
    if (!preset.empty()) {
      if (!config_path.empty()) throw ConfigError("preset", "give either --config or --preset, not both");
      cfg = ModelConfig::from_preset(preset);
    }
    describe_model(cfg, out);
    return 0;
  } catch (const std::exception& e) {
    err << "info: " << e.what() << "\n";
    return 1;
  }
}

/// Writes a synthetic corpus as PCM16 WAVs plus `list.tsv` and `labels.tsv`.
inline int cmd_synth(const std::string& config_path, std::uint64_t seed, std::size_t per_class,
                     const std::string& out_dir, std::ostream& out, std::ostream& err) {
  try {
    const ModelConfig cfg = config_path.empty() ? ModelConfig{} : load_run_config(config_path).model;
    const SynthDataset d = synth_dataset(seed, per_class, cfg.input_length, cfg.sample_rate);
    fs::create_directories(out_dir);
    std::string list, labels;
    for (std::size_t i = 0; i < d.size(); ++i) {
      const bool bona = d.samples[i].label == kBonafide;
      const std::string id = std::string(bona ? "bona_" : "spoof_") + std::to_string(i);
      const fs::path wav = fs::path(out_dir) / (id + ".wav");
      write_wav(wav, Waveform{d.samples[i].waveform, static_cast<std::uint32_t>(cfg.sample_rate)});
      list += id + "\t" + wav.string() + "\n";
      labels += id + "\t" + (bona ? "bonafide" : "spoof") + "\n";
    }
    write_text(fs::path(out_dir) / "list.tsv", list);
    write_text(fs::path(out_dir) / "labels.tsv", labels);
    out << "wrote " << d.size() << " files to " << out_dir << "\n";
    return 0;
  } catch (const std::exception& e) {
    err << "synth: " << e.what() << "\n";
    return 1;
  }
}

/// Parses argv and dispatches to a subcommand.
inline int run(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
  CLI::App app{"Spoofing countermeasure on raw waveforms: train, score, evaluate and inspect models."};
  app.require_subcommand(1);

  std::string config, seeds, out_dir;
  bool f32 = false;
  auto* train = app.add_subcommand("train", "Train on the synthetic corpus and write model.aasf + history.tsv");
  train->add_option("--config", config, "Config file (key = value)")->check(CLI::ExistingFile);
  train->add_option("--seed", seeds, "Seed or comma-separated seeds; overrides the config's seed");
  train->add_option("--out", out_dir, "Output directory")->required();
  train->add_flag("--export-f32", f32, "Also write a 32-bit model.f32.aasf");

  std::string ckpt, list, scores_out;
  auto* score = app.add_subcommand("score", "Score WAV files with a trained checkpoint");
  score->add_option("--checkpoint", ckpt, "Checkpoint (.aasf)")->required();
  score->add_option("--list", list, "File list: one 'path' or 'id<TAB>path' per line")->required();
  score->add_option("--out", scores_out, "Output score file")->required();

  std::string scores_in, labels;
  auto* eval = app.add_subcommand("eval", "Compute EER from a score file and labels");
  eval->add_option("--scores", scores_in, "Score file (id<TAB>score)")->required();
  eval->add_option("--labels", labels, "Label file (id<TAB>bonafide|spoof)")->required();

  std::string gc_config;
  std::uint64_t gc_seed = 0;
  std::size_t per_tensor = 3;
  auto* gradcheck = app.add_subcommand("gradcheck", "Finite-difference gradient checks per module");
  gradcheck->add_option("--config", gc_config, "Config file; defaults to the debug preset")->check(CLI::ExistingFile);
  gradcheck->add_option("--seed", gc_seed, "Seed for inputs and probe selection");
  gradcheck->add_option("--per-tensor", per_tensor, "Probes per parameter tensor in the model checks");

  std::string info_config, preset;
  auto* info = app.add_subcommand("info", "Print architecture, shapes and parameter count");
  info->add_option("--config", info_config, "Config file; defaults to the default preset")->check(CLI::ExistingFile);
  info->add_option("--preset", preset, "Preset name: default, small or debug");

  std::string synth_config, synth_out;
  std::uint64_t synth_seed = 0;
  std::size_t per_class = 4;
  auto* synth = app.add_subcommand("synth", "Write a synthetic labelled corpus as WAV files");
  synth->add_option("--config", synth_config, "Config file (input_length, sample_rate)")->check(CLI::ExistingFile);
  synth->add_option("--seed", synth_seed, "Generator seed")->required();
  synth->add_option("--per-class", per_class, "Samples per class");
  synth->add_option("--out", synth_out, "Output directory")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e, out, err);
  }
  if (*train) return cmd_train(config, seeds, out_dir, f32, out, err);
  if (*score) return cmd_score(ckpt, list, scores_out, out, err);
  if (*eval) return cmd_eval(scores_in, labels, out, err);
  if (*gradcheck) return cmd_gradcheck(gc_config, gc_seed, per_tensor, out, err);
  if (*info) return cmd_info(info_config, preset, out, err);
  if (*synth) return cmd_synth(synth_config, synth_seed, per_class, synth_out, out, err);
  return 1;
}

}  // namespace aasist::cli
