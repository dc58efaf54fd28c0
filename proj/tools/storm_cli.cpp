// Command-line front end for the restoration pipeline:
//   synth-data    generate the synthetic corpus + manifest
//   train         train predictor / score models per strategy and mode
//   enhance       run inference over a manifest split or a single file
//   evaluate      score enhanced outputs (SI-SDR/SI-SIR/SI-SAR/LSD)
//   simulate-sde  self-contained forward/reverse diagnostic
// Exit codes: 0 success, 1 runtime failure, 2 usage/config error.
#include <atomic>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>
#include <stdexcept>
#include <string>
#include <thread>
#include <vector>

#include "CLI11.hpp"
#include "storm/checkpoint.hpp"
#include "storm/data.hpp"
#include "storm/kvconfig.hpp"
#include "storm/manifest.hpp"
#include "storm/metrics.hpp"
#include "storm/predictor.hpp"
#include "storm/rng.hpp"
#include "storm/sampler.hpp"
#include "storm/score_model.hpp"
#include "storm/sde.hpp"
#include "storm/spectral.hpp"
#include "storm/storm.hpp"
#include "storm/wav.hpp"
#include "storm_oracles/oracles.hpp"

namespace fs = std::filesystem;
using namespace storm;

namespace {

// Thrown for bad flag values / config combinations discovered after CLI11
// parsing; mapped to exit code 2.
struct UsageError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

void write_run_config(const std::string& out_dir, const KvConfig& kv) {
  fs::create_directories(out_dir);
  kv.save(out_dir + "/run_config.txt");
}

// ----- Shared flag bundles -----

struct SdeFlags {
  double gamma = 1.5;
  double sigma_min = 0.05;
  double sigma_max = 0.5;
  double t_eps = 0.03;

  void add_to(CLI::App* cmd) {
    cmd->add_option("--gamma", gamma, "mean-reversion stiffness");
    cmd->add_option("--sigma-min", sigma_min, "noise schedule floor");
    cmd->add_option("--sigma-max", sigma_max, "noise schedule ceiling");
    cmd->add_option("--t-eps", t_eps, "smallest training diffusion time");
  }

  SdeConfig to_config() const {
    SdeConfig c;
    c.gamma = gamma;
    c.sigma_min = sigma_min;
    c.sigma_max = sigma_max;
    c.t_eps = t_eps;
    try {
      c.validate();
    } catch (const std::exception& e) {
      throw UsageError(e.what());
    }
    return c;
  }
};

struct SamplerFlags {
  int steps = 50;
  std::string corrector = "on";
  int corrector_steps = 1;
  double r = 0.5;

  void add_to(CLI::App* cmd) {
    cmd->add_option("--steps", steps, "reverse steps N");
    cmd->add_option("--corrector", corrector, "corrector on|off")
        ->check(CLI::IsMember({"on", "off"}));
    cmd->add_option("--corrector-steps", corrector_steps,
                    "corrections per step");
    cmd->add_option("--r", r, "corrector step-size ratio");
  }

  SamplerConfig to_config() const {
    SamplerConfig c;
    c.n_steps = steps;
    c.use_corrector = corrector == "on";
    c.corrector_steps = corrector_steps;
    c.r = r;
    try {
      c.validate();
    } catch (const std::exception& e) {
      throw UsageError(e.what());
    }
    return c;
  }

  void record(KvConfig& kv) const {
    kv.set_int("sampler.steps", steps);
    kv.set("sampler.corrector", corrector);
    kv.set_int("sampler.corrector_steps", corrector_steps);
    kv.set_double("sampler.r", r);
  }
};

// ----- synth-data -----

struct SynthArgs {
  std::string task = "denoise";
  std::string out;
  std::uint64_t seed = 1;
  int n_train = 500, n_valid = 50, n_test = 50;
  double min_dur = 2.0, max_dur = 4.0;
};

int cmd_synth_data(const SynthArgs& a) {
  DatasetConfig cfg;
  try {
    cfg.task = dataset_task_from_string(a.task);
    cfg.out_dir = a.out;
    cfg.seed = a.seed;
    cfg.n_train = a.n_train;
    cfg.n_valid = a.n_valid;
    cfg.n_test = a.n_test;
    cfg.min_duration_s = a.min_dur;
    cfg.max_duration_s = a.max_dur;
    cfg.validate();
  } catch (const std::exception& e) {
    throw UsageError(e.what());
  }

  const DatasetManifest m = make_dataset(cfg);
  KvConfig kv;
  kv.set("command", "synth-data");
  kv.set("task", a.task);
  kv.set_int("seed", static_cast<long long>(a.seed));
  kv.set_int("n_train", a.n_train);
  kv.set_int("n_valid", a.n_valid);
  kv.set_int("n_test", a.n_test);
  kv.set_double("min_duration_s", a.min_dur);
  kv.set_double("max_duration_s", a.max_dur);
  write_run_config(a.out, kv);
  std::cout << "wrote " << m.rows.size() << " utterances under " << a.out
            << "\n";
  return 0;
}

// ----- train -----

struct TrainArgs {
  std::string manifest;
  std::string out;
  std::string mode = "regen";
  std::string strategy = "pretrain-joint";
  std::string conditioning = "both";
  double alpha = 1.0;
  double lr = 1e-4;
  int steps = 600;
  int pretrain_steps = 300;
  int batch = 16;
  int val_interval = 25;
  int patience = 10;
  int crop_frames = 64;
  int base_channels = 8;
  int max_val_items = 16;
  std::uint64_t seed = 1234;
  std::string predictor_init;
  bool resume = false;
  SdeFlags sde;
};

int cmd_train(const TrainArgs& a) {
  TrainConfig cfg;
  SdeConfig sde;
  try {
    cfg.storm.refinement_mode = refinement_mode_from_string(a.mode);
    cfg.storm.strategy = train_strategy_from_string(a.strategy);
    cfg.storm.conditioning = conditioning_mode_from_string(a.conditioning);
    cfg.storm.alpha = a.alpha;
    cfg.lr = a.lr;
    cfg.max_steps = a.steps;
    cfg.pretrain_steps = a.pretrain_steps;
    cfg.effective_batch = a.batch;
    cfg.val_interval = a.val_interval;
    cfg.patience = a.patience;
    cfg.crop_frames = a.crop_frames;
    cfg.base_channels = a.base_channels;
    cfg.max_val_items = a.max_val_items;
    cfg.seed = a.seed;
    cfg.out_dir = a.out;
    cfg.predictor_init = a.predictor_init;
    cfg.resume = a.resume;
    cfg.validate();
    sde = a.sde.to_config();
  } catch (const UsageError&) {
    throw;
  } catch (const std::exception& e) {
    throw UsageError(e.what());
  }

  const DatasetManifest m = load_manifest(a.manifest);
  auto to_pairs = [](const std::vector<ManifestRow>& rows) {
    std::vector<TrainPair> out;
    for (const ManifestRow& r : rows)
      out.push_back(TrainPair{r.clean_path, r.corrupt_path});
    return out;
  };
  const std::vector<TrainPair> train_items = to_pairs(m.split_rows("train"));
  const std::vector<TrainPair> val_items = to_pairs(m.split_rows("valid"));

  KvConfig kv;
  kv.set("command", "train");
  kv.set("manifest", a.manifest);
  kv.set("mode", a.mode);
  kv.set("strategy", a.strategy);
  kv.set("conditioning", a.conditioning);
  kv.set_double("alpha", a.alpha);
  kv.set_double("lr", a.lr);
  kv.set_int("steps", a.steps);
  kv.set_int("pretrain_steps", a.pretrain_steps);
  kv.set_int("effective_batch", a.batch);
  kv.set_int("val_interval", a.val_interval);
  kv.set_int("patience", a.patience);
  kv.set_int("crop_frames", a.crop_frames);
  kv.set_int("base_channels", a.base_channels);
  kv.set_int("max_val_items", a.max_val_items);
  kv.set_int("seed", static_cast<long long>(a.seed));
  if (!a.predictor_init.empty()) kv.set("predictor_init", a.predictor_init);
  const KvConfig sde_kv = sde.to_kv();
  for (const auto& [k, v] : sde_kv.entries()) kv.set("sde." + k, v);
  if (a.resume) {
    // A resumed run must be the same experiment: everything except the step
    // budget has to match the recorded configuration.
    KvConfig prev;
    try {
      prev = KvConfig::load(a.out + "/run_config.txt");
    } catch (const std::exception& e) {
      throw UsageError(std::string("--resume: ") + e.what());
    }
    for (const auto& [k, v] : kv.entries()) {
      if (k == "steps") continue;
      if (prev.get_or(k, "") != v)
        throw UsageError("--resume: setting '" + k +
                         "' differs from the recorded run (was '" +
                         prev.get_or(k, "<unset>") + "', now '" + v + "')");
    }
  }
  write_run_config(a.out, kv);

  const TrainResult res = train_storm(train_items, val_items, cfg, sde,
                                      StftConfig{});
  std::cout << "training done: best_val=" << format_double(res.best_val)
            << " best_step=" << res.best_step
            << " total_steps=" << res.total_steps
            << (res.early_stopped ? " (early stop)" : "") << "\n";
  if (!res.score_best_path.empty())
    std::cout << "score checkpoint: " << res.score_best_path << "\n";
  if (!res.predictor_best_path.empty())
    std::cout << "predictor checkpoint: " << res.predictor_best_path << "\n";
  return 0;
}

// ----- model loading shared by enhance/evaluate -----

struct LoadedModels {
  std::unique_ptr<ScoreModel> score;
  std::unique_ptr<PredictorNet> predictor;
  CheckpointRole score_role = CheckpointRole::kScoreRegen;
  SdeConfig sde;  // from the score checkpoint (defaults for predictive)
  StormConfig storm;
};

LoadedModels load_models(const std::string& score_path,
                         const std::string& predictor_path,
                         const std::string& mode_str) {
  LoadedModels lm;
  lm.storm.refinement_mode = refinement_mode_from_string(mode_str);
  const bool needs_score =
      lm.storm.refinement_mode != RefinementMode::kPurePredictive;
  const bool needs_predictor =
      lm.storm.refinement_mode == RefinementMode::kRegeneration ||
      lm.storm.refinement_mode == RefinementMode::kRefinement ||
      lm.storm.refinement_mode == RefinementMode::kPurePredictive;
  if (needs_score && score_path.empty())
    throw UsageError("mode '" + mode_str + "' needs --score");
  if (needs_predictor && predictor_path.empty())
    throw UsageError("mode '" + mode_str + "' needs --predictor");

  if (!score_path.empty()) {
    const Checkpoint ckpt = load_checkpoint(score_path);
    lm.score = std::make_unique<ScoreModel>(
        score_model_from_checkpoint(ckpt, /*use_ema=*/true));
    lm.score_role = ckpt.role;
    lm.sde = ckpt.sde;
    lm.storm.conditioning = ckpt.conditioning;
  }
  if (!predictor_path.empty()) {
    const Checkpoint ckpt = load_checkpoint(predictor_path);
    lm.predictor = std::make_unique<PredictorNet>(
        predictor_from_checkpoint(ckpt, /*use_ema=*/true));
  }
  return lm;
}

// P5 graymap of the magnitude spectrogram in dB, -60..+20 dB range, low
// frequencies at the bottom row.
void write_spectrogram_pgm(const std::string& path,
                           const ComplexSpectrogram& s) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw std::runtime_error("cannot write " + path);
  os << "P5\n" << s.frames << " " << s.freq_bins << "\n255\n";
  for (int row = 0; row < s.freq_bins; ++row) {
    const int k = s.freq_bins - 1 - row;
    for (int t = 0; t < s.frames; ++t) {
      const double mag = std::abs(s.at(k, t));
      const double db = 20.0 * std::log10(std::max(mag, 1e-9));
      const double unit = (db + 60.0) / 80.0;
      const int g = std::clamp(static_cast<int>(std::lround(unit * 255.0)), 0,
                               255);
      os.put(static_cast<char>(g));
    }
  }
}

void write_call_sidecar(const std::string& path, const CallCounter& calls) {
  std::ofstream os(path);
  if (!os) throw std::runtime_error("cannot write " + path);
  os << "score_calls=" << calls.score_calls
     << " predictor_calls=" << calls.predictor_calls << "\n";
}

CallCounter read_call_sidecar(const std::string& path) {
  CallCounter c;
  std::ifstream is(path);
  if (!is) return c;
  std::string tok;
  while (is >> tok) {
    const size_t eq = tok.find('=');
    if (eq == std::string::npos) continue;
    const std::string key = tok.substr(0, eq);
    const long long val = std::stoll(tok.substr(eq + 1));
    if (key == "score_calls") c.score_calls = val;
    if (key == "predictor_calls") c.predictor_calls = val;
  }
  return c;
}

// Runs fn(i) for i in [0, n) on `jobs` threads. Each item must derive its
// own seed, so the result is independent of the schedule.
void parallel_for(int n, int jobs, const std::function<void(int)>& fn) {
  jobs = std::max(1, std::min(jobs, n));
  if (jobs == 1) {
    for (int i = 0; i < n; ++i) fn(i);
    return;
  }
  std::atomic<int> next{0};
  std::vector<std::thread> pool;
  std::vector<std::exception_ptr> errors(jobs);
  for (int t = 0; t < jobs; ++t) {
    pool.emplace_back([&, t] {
      try {
        for (int i = next.fetch_add(1); i < n; i = next.fetch_add(1)) fn(i);
      } catch (...) {
        errors[t] = std::current_exception();
      }
    });
  }
  for (std::thread& th : pool) th.join();
  for (const std::exception_ptr& e : errors)
    if (e) std::rethrow_exception(e);
}

// ----- enhance -----

struct EnhanceArgs {
  std::string score_path;
  std::string predictor_path;
  std::string mode = "regen";
  std::string manifest;
  std::string split = "test";
  std::string input;   // single-file mode
  std::string output;  // single-file mode
  std::string out;     // directory mode
  SamplerFlags sampler;
  std::uint64_t seed = 1;
  int jobs = 1;
  bool dump_spectrograms = false;
};

int cmd_enhance(const EnhanceArgs& a) {
  LoadedModels lm = load_models(a.score_path, a.predictor_path, a.mode);
  const SamplerConfig sampler = a.sampler.to_config();
  const StftConfig stft_cfg;

  if (!a.input.empty()) {
    if (a.output.empty()) throw UsageError("--input needs --output");
    const Waveform noisy = read_wav(a.input);
    Rng rng(derive_seed(a.seed, 0));
    const InferenceOutput out = storm_infer(
        lm.score.get(), lm.predictor.get(), lm.score_role, noisy, lm.storm,
        lm.sde, sampler, stft_cfg, rng);
    write_wav(a.output, out.audio);
    write_call_sidecar(a.output + ".calls.txt", out.calls);
    std::cout << "wrote " << a.output
              << " score_calls=" << out.calls.score_calls
              << " predictor_calls=" << out.calls.predictor_calls << "\n";
    return 0;
  }

  if (a.manifest.empty() || a.out.empty())
    throw UsageError("enhance needs either --input/--output or "
                     "--manifest/--out");
  const DatasetManifest m = load_manifest(a.manifest);
  const std::vector<ManifestRow> rows = m.split_rows(a.split);
  if (rows.empty())
    throw UsageError("manifest has no rows in split '" + a.split + "'");
  fs::create_directories(a.out);

  KvConfig kv;
  kv.set("command", "enhance");
  kv.set("mode", a.mode);
  if (!a.score_path.empty()) kv.set("score", a.score_path);
  if (!a.predictor_path.empty()) kv.set("predictor", a.predictor_path);
  kv.set("manifest", a.manifest);
  kv.set("split", a.split);
  a.sampler.record(kv);
  kv.set_int("seed", static_cast<long long>(a.seed));
  const KvConfig sde_kv = lm.sde.to_kv();
  for (const auto& [k, v] : sde_kv.entries()) kv.set("sde." + k, v);
  write_run_config(a.out, kv);

  parallel_for(
      static_cast<int>(rows.size()), a.jobs, [&](int i) {
        // Per-thread model clones: forward passes share workspaces.
        LoadedModels local = load_models(a.score_path, a.predictor_path,
                                         a.mode);
        const ManifestRow& row = rows[i];
        const Waveform noisy = read_wav(row.corrupt_path);
        Rng rng(derive_seed(a.seed, static_cast<std::uint64_t>(i)));
        const InferenceOutput out = storm_infer(
            local.score.get(), local.predictor.get(), local.score_role, noisy,
            local.storm, local.sde, sampler, stft_cfg, rng);
        const std::string wav_path = a.out + "/" + row.id + ".wav";
        write_wav(wav_path, out.audio);
        write_call_sidecar(a.out + "/" + row.id + ".calls.txt", out.calls);
        if (a.dump_spectrograms) {
          PreparedInput pi = prepare_input(noisy, stft_cfg);
          write_spectrogram_pgm(a.out + "/" + row.id + "_noisy.pgm",
                                denormalize(remove_warping(pi.y)));
          write_spectrogram_pgm(a.out + "/" + row.id + "_output.pgm",
                                out.spec);
          const Waveform clean = read_wav(row.clean_path);
          write_spectrogram_pgm(a.out + "/" + row.id + "_clean.pgm",
                                stft(clean, stft_cfg));
          if (local.predictor) {
            PreparedInput pj = prepare_input(noisy, stft_cfg);
            ComplexSpectrogram anchor = local.predictor->predict(pj.y);
            write_spectrogram_pgm(a.out + "/" + row.id + "_anchor.pgm",
                                  denormalize(remove_warping(anchor)));
          }
        }
      });
  std::cout << "enhanced " << rows.size() << " files into " << a.out << "\n";
  return 0;
}

// ----- evaluate -----

struct EvaluateArgs {
  std::string manifest;
  std::string split = "test";
  std::string enhanced_dir;
  bool use_corrupt = false;  // score the unprocessed input instead
  std::string report_path;
  std::string compare_path;
  std::string steps_sweep;  // e.g. "5,10,20,50" -> inference sweep
  // sweep-only model/sampler flags
  std::string score_path;
  std::string predictor_path;
  std::string mode = "regen";
  SamplerFlags sampler;
  std::uint64_t seed = 1;
  int jobs = 1;
};

EvalRow evaluate_row(const ManifestRow& row, const Waveform& estimate,
                     const CallCounter& calls) {
  const Waveform clean = read_wav(row.clean_path);
  const Waveform corrupt = read_wav(row.corrupt_path);
  if (estimate.samples.size() != clean.samples.size())
    throw std::runtime_error("estimate length " +
                             std::to_string(estimate.samples.size()) +
                             " != reference length " +
                             std::to_string(clean.samples.size()));
  Waveform noise_ref;
  if (!row.noise_path.empty()) {
    noise_ref = read_wav(row.noise_path);
  } else {
    // No stored noise (dereverb): the corruption residual is the reference.
    noise_ref.samples.resize(clean.samples.size());
    for (size_t k = 0; k < clean.samples.size(); ++k)
      noise_ref.samples[k] = corrupt.samples[k] - clean.samples[k];
  }
  EvalRow out;
  out.id = row.id;
  out.si_sdr = si_sdr(estimate, clean);
  const SirSar ss = si_sir_sar(estimate, clean, noise_ref);
  out.si_sir = ss.si_sir;
  out.si_sar = ss.si_sar;
  out.sir_defined = ss.sir_defined;
  out.lsd = log_spectral_distance(estimate, clean);
  out.score_calls = calls.score_calls;
  out.predictor_calls = calls.predictor_calls;
  return out;
}

int cmd_evaluate(const EvaluateArgs& a) {
  if (a.manifest.empty()) throw UsageError("evaluate needs --manifest");
  const DatasetManifest m = load_manifest(a.manifest);
  const std::vector<ManifestRow> rows = m.split_rows(a.split);
  if (rows.empty())
    throw UsageError("manifest has no rows in split '" + a.split + "'");

  // Steps sweep: run inference at each N and emit one summary row per N.
  if (!a.steps_sweep.empty()) {
    std::vector<int> sweep;
    std::stringstream ss(a.steps_sweep);
    std::string tok;
    while (std::getline(ss, tok, ',')) sweep.push_back(std::stoi(tok));
    if (sweep.empty()) throw UsageError("empty --steps-sweep");
    load_models(a.score_path, a.predictor_path, a.mode);  // arg check
    const StftConfig stft_cfg;
    std::ostringstream report;
    for (int n_steps : sweep) {
      SamplerFlags sf = a.sampler;
      sf.steps = n_steps;
      const SamplerConfig sampler = sf.to_config();
      std::vector<EvalRow> eval_rows(rows.size());
      parallel_for(
          static_cast<int>(rows.size()), a.jobs, [&](int i) {
            LoadedModels local = load_models(a.score_path, a.predictor_path,
                                             a.mode);
            const Waveform noisy = read_wav(rows[i].corrupt_path);
            Rng rng(derive_seed(a.seed, static_cast<std::uint64_t>(i)));
            const InferenceOutput out = storm_infer(
                local.score.get(), local.predictor.get(), local.score_role,
                noisy, local.storm, local.sde, sampler, stft_cfg, rng);
            eval_rows[i] = evaluate_row(rows[i], out.audio, out.calls);
          });
      EvalReport rep;
      rep.rows = eval_rows;
      const Aggregate sdr = rep.aggregate_of("si_sdr");
      const Aggregate lsd = rep.aggregate_of("lsd");
      std::ostringstream line;
      line << "steps=" << n_steps
           << " median_si_sdr=" << format_double(sdr.median)
           << " mean_si_sdr=" << format_double(sdr.mean)
           << " median_lsd=" << format_double(lsd.median)
           << " score_calls=" << eval_rows.front().score_calls << "\n";
      std::cout << line.str();
      report << line.str();
    }
    if (!a.report_path.empty()) {
      std::ofstream os(a.report_path);
      os << report.str();
    }
    return 0;
  }

  if (a.enhanced_dir.empty() && !a.use_corrupt)
    throw UsageError("evaluate needs --enhanced-dir (or --noisy)");

  std::vector<EvalRow> eval_rows(rows.size());
  std::vector<std::string> row_errors(rows.size());
  parallel_for(static_cast<int>(rows.size()), a.jobs, [&](int i) {
    const ManifestRow& row = rows[i];
    try {
      Waveform estimate;
      CallCounter calls;
      if (a.use_corrupt) {
        estimate = read_wav(row.corrupt_path);
      } else {
        const std::string wav_path = a.enhanced_dir + "/" + row.id + ".wav";
        estimate = read_wav(wav_path);
        calls = read_call_sidecar(a.enhanced_dir + "/" + row.id +
                                  ".calls.txt");
      }
      eval_rows[i] = evaluate_row(row, estimate, calls);
    } catch (const std::exception& e) {
      row_errors[i] = e.what();
    }
  });

  EvalReport rep;
  int n_errors = 0;
  for (size_t i = 0; i < rows.size(); ++i) {
    if (!row_errors[i].empty()) {
      ++n_errors;
      std::cerr << "row " << rows[i].id << ": " << row_errors[i] << "\n";
      continue;
    }
    rep.rows.push_back(eval_rows[i]);
  }
  std::cout << rep.to_table();
  if (!a.report_path.empty()) {
    std::ofstream os(a.report_path);
    if (!os) throw std::runtime_error("cannot write " + a.report_path);
    os << rep.to_records();
  }
  if (!a.compare_path.empty()) {
    std::ifstream is(a.compare_path);
    if (!is) throw std::runtime_error("cannot open " + a.compare_path);
    std::stringstream buf;
    buf << is.rdbuf();
    const EvalReport other = EvalReport::from_records(buf.str());
    std::cout << "# deltas vs " << a.compare_path << " (this - other)\n";
    for (const char* col : {"si_sdr", "si_sir", "si_sar", "lsd"}) {
      const Aggregate mine = rep.aggregate_of(col);
      const Aggregate theirs = other.aggregate_of(col);
      std::cout << "# " << col
                << " d_mean=" << format_double(mine.mean - theirs.mean)
                << " d_median=" << format_double(mine.median - theirs.median)
                << "\n";
    }
  }
  return n_errors > 0 ? 1 : 0;
}

// ----- simulate-sde -----

struct SimArgs {
  SdeFlags sde;
  int paths = 20000;
  int chains = 10000;
  SamplerFlags sampler;
  std::uint64_t seed = 7;
  bool trace = false;
  bool emit_oracle_report = false;
};

int cmd_simulate_sde(const SimArgs& a) {
  const SdeConfig sde = a.sde.to_config();
  const SamplerConfig sampler = a.sampler.to_config();
  bool ok = true;
  auto report = [&](const std::string& name, double value, double ref,
                    double tol, bool pass) {
    if (a.emit_oracle_report || !pass)
      std::cout << "oracle=" << name << " value=" << format_double(value)
                << " ref=" << format_double(ref)
                << " tol=" << format_double(tol) << " pass=" << (pass ? 1 : 0)
                << "\n";
    ok = ok && pass;
  };

  // Closed-form variance vs independent RK4 moments on a uniform grid.
  std::vector<double> grid;
  for (int i = 1; i <= 100; ++i) grid.push_back(sde.t_max * i / 100.0);
  const storm_oracles::OdeMoments om = storm_oracles::ode_moments(
      sde.gamma, sde.sigma_min, sde.sigma_max, grid, 1e-4);
  double max_rel = 0.0;
  for (size_t i = 0; i < grid.size(); ++i) {
    const double cf = kernel_var(grid[i], sde);
    max_rel = std::max(max_rel, std::abs(cf - om.variance[i]) /
                                    std::max(om.variance[i], 1e-30));
  }
  report("variance_closed_form_vs_rk4", max_rel, 0.0, 1e-6, max_rel <= 1e-6);

  // Monte-Carlo forward ensemble vs the kernel at three times.
  const double x0 = 1.0, y = -0.5;
  for (double tau : {0.25, 0.5, 1.0}) {
    const storm_oracles::McStats mc = storm_oracles::mc_kernel(
        sde.gamma, sde.sigma_min, sde.sigma_max, x0, y, tau, a.paths, 1e-3,
        derive_seed(a.seed, 11, static_cast<std::uint64_t>(tau * 1000)));
    const double kmean = kernel_mean_weight(tau, sde) * x0 +
                         (1.0 - kernel_mean_weight(tau, sde)) * y;
    const double kstd = kernel_std(tau, sde);
    const double mean_err = std::abs(mc.mean - kmean) / std::abs(x0 - y);
    const double std_err = std::abs(mc.stddev - kstd) / kstd;
    report("mc_mean_tau_" + format_double(tau), mean_err, 0.0, 0.01,
           mean_err <= 0.01);
    report("mc_std_tau_" + format_double(tau), std_err, 0.0, 0.02,
           std_err <= 0.02);
    if (a.trace)
      std::cout << "tau=" << format_double(tau)
                << " kernel_mean=" << format_double(kmean)
                << " mc_mean=" << format_double(mc.mean)
                << " kernel_std=" << format_double(kstd)
                << " mc_std=" << format_double(mc.stddev)
                << " se_mean=" << format_double(mc.se_mean) << "\n";
  }

  // Reverse recovery of a Gaussian prior through the analytic score.
  const double m0 = 1.0, s0 = 0.1, anchor = -0.5;
  ScalarScoreFn score = [&](double x, double tau, double /*sigma*/) {
    return storm_oracles::gaussian_score(x, tau, sde.gamma, sde.sigma_min,
                                         sde.sigma_max, m0, s0, anchor);
  };
  storm_oracles::RunningStats stats;
  Rng rng(derive_seed(a.seed, 22));
  for (int c = 0; c < a.chains; ++c)
    stats.add(pc_sample_scalar(score, anchor, sde, sampler, rng));
  const double mean_err = std::abs(stats.mean() - m0) / std::abs(m0 - anchor);
  const double std_err = std::abs(stats.stddev() - s0) / s0;
  report("reverse_recovery_mean", mean_err, 0.0, 0.02, mean_err <= 0.02);
  report("reverse_recovery_std", std_err, 0.0, 0.05, std_err <= 0.05);
  if (a.trace)
    std::cout << "reverse mean=" << format_double(stats.mean())
              << " std=" << format_double(stats.stddev())
              << " prior_mean=" << format_double(m0)
              << " prior_std=" << format_double(s0) << "\n";

  std::cout << (ok ? "simulate-sde: all tolerances met\n"
                   : "simulate-sde: TOLERANCE EXCEEDED\n");
  return ok ? 0 : 1;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"speech restoration pipeline"};
  app.require_subcommand(1);

  SynthArgs synth;
  CLI::App* csynth =
      app.add_subcommand("synth-data", "generate the synthetic corpus");
  csynth->add_option("--task", synth.task, "denoise|dereverb")
      ->check(CLI::IsMember({"denoise", "dereverb"}));
  csynth->add_option("--out", synth.out, "output directory")->required();
  csynth->add_option("--seed", synth.seed, "master seed");
  csynth->add_option("--n-train", synth.n_train, "train utterances");
  csynth->add_option("--n-valid", synth.n_valid, "valid utterances");
  csynth->add_option("--n-test", synth.n_test, "test utterances");
  csynth->add_option("--min-dur", synth.min_dur, "min duration s");
  csynth->add_option("--max-dur", synth.max_dur, "max duration s");

  TrainArgs train;
  CLI::App* ctrain = app.add_subcommand("train", "train models");
  ctrain->add_option("--manifest", train.manifest, "dataset manifest")
      ->required();
  ctrain->add_option("--out", train.out, "output directory")->required();
  ctrain->add_option("--mode", train.mode,
                     "regen|refine|generative|predictive")
      ->check(CLI::IsMember({"regen", "refine", "generative", "predictive"}));
  ctrain->add_option("--strategy", train.strategy,
                     "joint|pretrain-freeze|pretrain-joint")
      ->check(CLI::IsMember({"joint", "pretrain-freeze", "pretrain-joint"}));
  ctrain->add_option("--conditioning", train.conditioning,
                     "noisy|postdenoiser|both")
      ->check(CLI::IsMember({"noisy", "postdenoiser", "both"}));
  ctrain->add_option("--alpha", train.alpha, "supervised loss weight");
  ctrain->add_option("--lr", train.lr, "learning rate");
  ctrain->add_option("--steps", train.steps, "main-phase optimizer steps");
  ctrain->add_option("--pretrain-steps", train.pretrain_steps,
                     "predictor pretraining steps");
  ctrain->add_option("--batch", train.batch, "effective batch size");
  ctrain->add_option("--val-interval", train.val_interval,
                     "steps between validations");
  ctrain->add_option("--patience", train.patience,
                     "validations without improvement before stopping");
  ctrain->add_option("--crop-frames", train.crop_frames,
                     "training crop length in frames");
  ctrain->add_option("--base-channels", train.base_channels,
                     "network width");
  ctrain->add_option("--max-val-items", train.max_val_items,
                     "validation subset size");
  ctrain->add_option("--seed", train.seed, "training seed");
  ctrain->add_option("--predictor-init", train.predictor_init,
                     "predictor checkpoint to start from");
  ctrain->add_flag("--resume", train.resume,
                   "continue a previous run from the checkpoints in --out; "
                   "only --steps may differ from the recorded configuration");
  train.sde.add_to(ctrain);

  EnhanceArgs enh;
  CLI::App* cenh = app.add_subcommand("enhance", "run inference");
  cenh->add_option("--score", enh.score_path, "score checkpoint");
  cenh->add_option("--predictor", enh.predictor_path, "predictor checkpoint");
  cenh->add_option("--mode", enh.mode, "regen|refine|generative|predictive")
      ->check(CLI::IsMember({"regen", "refine", "generative", "predictive"}));
  cenh->add_option("--manifest", enh.manifest, "dataset manifest");
  cenh->add_option("--split", enh.split, "manifest split");
  cenh->add_option("--input", enh.input, "single input WAV");
  cenh->add_option("--output", enh.output, "single output WAV");
  cenh->add_option("--out", enh.out, "output directory (manifest mode)");
  enh.sampler.add_to(cenh);
  cenh->add_option("--seed", enh.seed, "inference seed");
  cenh->add_option("--jobs", enh.jobs, "worker threads");
  cenh->add_flag("--dump-spectrograms", enh.dump_spectrograms,
                 "write magnitude spectrogram images");

  EvaluateArgs ev;
  CLI::App* cev = app.add_subcommand("evaluate", "score enhanced outputs");
  cev->add_option("--manifest", ev.manifest, "dataset manifest")->required();
  cev->add_option("--split", ev.split, "manifest split");
  cev->add_option("--enhanced-dir", ev.enhanced_dir,
                  "directory from `enhance`");
  cev->add_flag("--noisy", ev.use_corrupt,
                "score the unprocessed corrupt input");
  cev->add_option("--report-path", ev.report_path,
                  "machine-readable report output");
  cev->add_option("--compare", ev.compare_path,
                  "other report to diff against");
  cev->add_option("--steps-sweep", ev.steps_sweep,
                  "comma list of step counts; runs inference per count");
  cev->add_option("--score", ev.score_path, "score checkpoint (sweep)");
  cev->add_option("--predictor", ev.predictor_path,
                  "predictor checkpoint (sweep)");
  cev->add_option("--mode", ev.mode, "inference mode (sweep)")
      ->check(CLI::IsMember({"regen", "refine", "generative", "predictive"}));
  ev.sampler.add_to(cev);
  cev->add_option("--seed", ev.seed, "inference seed (sweep)");
  cev->add_option("--jobs", ev.jobs, "worker threads");

  SimArgs sim;
  CLI::App* csim =
      app.add_subcommand("simulate-sde", "forward/reverse diagnostics");
  sim.sde.add_to(csim);
  csim->add_option("--paths", sim.paths, "Monte-Carlo forward paths");
  csim->add_option("--chains", sim.chains, "reverse recovery chains");
  sim.sampler.add_to(csim);
  csim->add_option("--seed", sim.seed, "simulation seed");
  csim->add_flag("--trace", sim.trace, "per-tau diagnostic rows");
  csim->add_flag("--emit-oracle-report", sim.emit_oracle_report,
                 "print every oracle check, not only failures");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    if (e.get_name() == "CallForHelp" || e.get_name() == "CallForAllHelp")
      return app.exit(e);
    app.exit(e);
    return 2;
  }

  try {
    if (csynth->parsed()) return cmd_synth_data(synth);
    if (ctrain->parsed()) return cmd_train(train);
    if (cenh->parsed()) return cmd_enhance(enh);
    if (cev->parsed()) return cmd_evaluate(ev);
    if (csim->parsed()) return cmd_simulate_sde(sim);
  } catch (const UsageError& e) {
    std::cerr << "usage error: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 2;
}
