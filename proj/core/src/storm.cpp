#include "storm/storm.hpp"

#include <chrono>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <functional>
#include <limits>
#include <memory>
#include <sstream>
#include <stdexcept>

#include "storm/kvconfig.hpp"

namespace storm {

namespace fs = std::filesystem;

std::string to_string(TrainStrategy s) {
  switch (s) {
    case TrainStrategy::kJointFromScratch:
      return "joint";
    case TrainStrategy::kPretrainThenFreeze:
      return "pretrain-freeze";
    case TrainStrategy::kPretrainThenJoint:
      return "pretrain-joint";
  }
  throw std::runtime_error("unknown train strategy");
}

TrainStrategy train_strategy_from_string(const std::string& s) {
  if (s == "joint") return TrainStrategy::kJointFromScratch;
  if (s == "pretrain-freeze") return TrainStrategy::kPretrainThenFreeze;
  if (s == "pretrain-joint") return TrainStrategy::kPretrainThenJoint;
  throw std::runtime_error("unknown strategy: '" + s +
                           "' (expected joint|pretrain-freeze|pretrain-joint)");
}

std::string to_string(RefinementMode m) {
  switch (m) {
    case RefinementMode::kRegeneration:
      return "regen";
    case RefinementMode::kRefinement:
      return "refine";
    case RefinementMode::kPureGenerative:
      return "generative";
    case RefinementMode::kPurePredictive:
      return "predictive";
  }
  throw std::runtime_error("unknown refinement mode");
}

RefinementMode refinement_mode_from_string(const std::string& s) {
  if (s == "regen") return RefinementMode::kRegeneration;
  if (s == "refine") return RefinementMode::kRefinement;
  if (s == "generative") return RefinementMode::kPureGenerative;
  if (s == "predictive") return RefinementMode::kPurePredictive;
  throw std::runtime_error("unknown mode: '" + s +
                           "' (expected regen|refine|generative|predictive)");
}

void StormConfig::validate() const {
  if (alpha < 0.0) throw std::runtime_error("storm config: alpha must be >= 0");
  if (refinement_mode == RefinementMode::kRefinement &&
      strategy == TrainStrategy::kJointFromScratch)
    throw std::runtime_error(
        "storm config: refinement needs a pretrained predictor "
        "(joint-from-scratch is not defined for this mode)");
}

ResidualPair make_residual_pair(const ComplexSpectrogram& x0,
                                const ComplexSpectrogram& y,
                                const ComplexSpectrogram& d_out) {
  if (!x0.same_shape(y) || !x0.same_shape(d_out))
    throw std::runtime_error("residual pair: shape mismatch");
  ResidualPair rp;
  rp.r_x = x0;
  rp.r_y = y;
  for (size_t i = 0; i < d_out.bins.size(); ++i) {
    rp.r_x.bins[i] -= d_out.bins[i];
    rp.r_y.bins[i] -= d_out.bins[i];
  }
  return rp;
}

// ----- Inference -----

PreparedInput prepare_input(const Waveform& noisy, const StftConfig& stft_cfg) {
  PreparedInput out;
  out.num_samples = static_cast<int>(noisy.samples.size());
  ComplexSpectrogram spec = stft(noisy, stft_cfg);
  spec = normalize_single(spec, peak_abs(noisy));
  out.y = apply_warping(spec);
  return out;
}

Waveform finish_output(const ComplexSpectrogram& xhat_warped_normalized,
                       const StftConfig& stft_cfg, int out_len) {
  ComplexSpectrogram s = remove_warping(xhat_warped_normalized);
  s = denormalize(s);
  return istft(s, stft_cfg, out_len);
}

namespace {

void check_score_role(CheckpointRole role, RefinementMode mode) {
  const CheckpointRole expected = mode == RefinementMode::kRefinement
                                      ? CheckpointRole::kScoreRefine
                                      : CheckpointRole::kScoreRegen;
  if (role != expected)
    throw std::runtime_error("checkpoint role '" + to_string(role) +
                             "' cannot run in mode '" + to_string(mode) +
                             "' (needs '" + to_string(expected) + "')");
}

// Reverse diffusion with conditioning planes built from (y, dout) per the
// model's own conditioning mode.
ComplexSpectrogram run_reverse(ScoreModel& sm, const ComplexSpectrogram& y,
                               const ComplexSpectrogram& dout,
                               const SdeConfig& sde,
                               const SamplerConfig& sampler, Rng& rng,
                               CallCounter* counter) {
  std::vector<const ComplexSpectrogram*> cond;
  switch (sm.config().conditioning) {
    case ConditioningMode::kNoisy:
      cond = {&y};
      break;
    case ConditioningMode::kPostDenoiser:
      cond = {&dout};
      break;
    case ConditioningMode::kBoth:
      cond = {&y, &dout};
      break;
  }
  ScoreFn fn = [&sm, &cond](const ComplexSpectrogram& x, double /*tau*/,
                            double sigma) { return sm.score(x, cond, sigma); };
  return pc_sample(fn, dout, sde, sampler, rng, counter);
}

}  // namespace

InferenceOutput storm_infer(ScoreModel* score, Predictor* predictor,
                            CheckpointRole score_role, const Waveform& noisy,
                            const StormConfig& cfg, const SdeConfig& sde,
                            const SamplerConfig& sampler,
                            const StftConfig& stft_cfg, Rng& rng) {
  cfg.validate();
  sde.validate();
  sampler.validate();
  if (cfg.refinement_mode == RefinementMode::kRefinement) {
    if (!score || !predictor)
      throw std::runtime_error("refinement inference needs both models");
    return refine_infer(*score, *predictor, score_role, noisy, cfg, sde,
                        sampler, stft_cfg, rng);
  }
  if (score && cfg.refinement_mode != RefinementMode::kPurePredictive &&
      score->config().conditioning != cfg.conditioning)
    throw std::runtime_error(
        "conditioning mode mismatch between config and score model");

  PreparedInput pi = prepare_input(noisy, stft_cfg);
  InferenceOutput out;
  ComplexSpectrogram xhat;

  switch (cfg.refinement_mode) {
    case RefinementMode::kPurePredictive: {
      if (!predictor)
        throw std::runtime_error("predictive inference needs a predictor");
      xhat = predictor->predict(pi.y);
      out.calls.predictor_calls = 1;
      break;
    }
    case RefinementMode::kRegeneration: {
      if (!predictor || !score)
        throw std::runtime_error("regeneration inference needs both models");
      check_score_role(score_role, cfg.refinement_mode);
      const ComplexSpectrogram anchor = predictor->predict(pi.y);
      out.calls.predictor_calls = 1;
      xhat = run_reverse(*score, pi.y, anchor, sde, sampler, rng, &out.calls);
      break;
    }
    case RefinementMode::kPureGenerative: {
      if (!score)
        throw std::runtime_error("generative inference needs a score model");
      check_score_role(score_role, cfg.refinement_mode);
      // Identical to regeneration with an identity predictor: anchor = y.
      xhat = run_reverse(*score, pi.y, pi.y, sde, sampler, rng, &out.calls);
      break;
    }
    case RefinementMode::kRefinement:
      break;  // handled above
  }

  out.spec = denormalize(remove_warping(xhat));
  out.audio = istft(out.spec, stft_cfg, pi.num_samples);
  return out;
}

InferenceOutput refine_infer(ScoreModel& score, Predictor& predictor,
                             CheckpointRole score_role, const Waveform& noisy,
                             const StormConfig& cfg, const SdeConfig& sde,
                             const SamplerConfig& sampler,
                             const StftConfig& stft_cfg, Rng& rng) {
  check_score_role(score_role, RefinementMode::kRefinement);
  if (score.config().conditioning != cfg.conditioning)
    throw std::runtime_error(
        "conditioning mode mismatch between config and score model");
  PreparedInput pi = prepare_input(noisy, stft_cfg);
  InferenceOutput out;
  const ComplexSpectrogram dout = predictor.predict(pi.y);
  out.calls.predictor_calls = 1;
  ComplexSpectrogram r_y = pi.y;
  for (size_t i = 0; i < r_y.bins.size(); ++i) r_y.bins[i] -= dout.bins[i];
  // The residue chain treats r_y as both the anchor and the "noisy"
  // conditioning plane (no second-level predictor on residues).
  ComplexSpectrogram ghat =
      run_reverse(score, r_y, r_y, sde, sampler, rng, &out.calls);
  ComplexSpectrogram xhat = dout;
  for (size_t i = 0; i < xhat.bins.size(); ++i) xhat.bins[i] += ghat.bins[i];
  out.spec = denormalize(remove_warping(xhat));
  out.audio = istft(out.spec, stft_cfg, pi.num_samples);
  return out;
}

// ----- Checkpoint bridging -----

ScoreModel score_model_from_checkpoint(const Checkpoint& ckpt, bool use_ema) {
  if (ckpt.role == CheckpointRole::kPredictor)
    throw std::runtime_error("checkpoint holds a predictor, not a score model");
  ScoreNetConfig sc;
  sc.base_channels = ckpt.base_channels;
  sc.emb_dim = ckpt.emb_dim;
  sc.conditioning = ckpt.conditioning;
  ScoreModel model(sc, /*init_seed=*/0);
  const std::vector<float>& src = use_ema ? ckpt.ema : ckpt.params;
  if (src.size() != model.parameters().size())
    throw std::runtime_error(
        "checkpoint parameter count " + std::to_string(src.size()) +
        " does not match architecture (" +
        std::to_string(model.parameters().size()) + ")");
  model.parameters() = src;
  return model;
}

PredictorNet predictor_from_checkpoint(const Checkpoint& ckpt, bool use_ema) {
  if (ckpt.role != CheckpointRole::kPredictor)
    throw std::runtime_error("checkpoint holds a score model, not a predictor");
  PredictorNetConfig pc;
  pc.base_channels = ckpt.base_channels;
  PredictorNet net(pc, /*init_seed=*/0);
  const std::vector<float>& src = use_ema ? ckpt.ema : ckpt.params;
  if (src.size() != net.parameters().size())
    throw std::runtime_error(
        "checkpoint parameter count " + std::to_string(src.size()) +
        " does not match architecture (" +
        std::to_string(net.parameters().size()) + ")");
  net.parameters() = src;
  return net;
}

// ----- Training loop -----

void TrainConfig::validate() const {
  storm.validate();
  if (lr <= 0.0) throw std::runtime_error("train config: lr must be positive");
  if (effective_batch < 1)
    throw std::runtime_error("train config: effective_batch must be >= 1");
  if (ema_decay < 0.0 || ema_decay > 1.0)
    throw std::runtime_error("train config: ema_decay outside [0, 1]");
  if (max_steps < 1)
    throw std::runtime_error("train config: max_steps must be >= 1");
  if (pretrain_steps < 1)
    throw std::runtime_error("train config: pretrain_steps must be >= 1");
  if (val_interval < 1)
    throw std::runtime_error("train config: val_interval must be >= 1");
  if (patience < 1)
    throw std::runtime_error("train config: patience must be >= 1");
  if (crop_frames < 4 || crop_frames % 4 != 0)
    throw std::runtime_error(
        "train config: crop_frames must be a positive multiple of 4");
  if (max_val_items < 1)
    throw std::runtime_error("train config: max_val_items must be >= 1");
  if (base_channels < 1 || emb_dim < 1)
    throw std::runtime_error("train config: bad architecture fields");
  if (out_dir.empty())
    throw std::runtime_error("train config: out_dir must be set");
}

namespace {

using Clock = std::chrono::steady_clock;
using nn::FeatureMap;

struct LoadedPair {
  FeatureMap<float> x0;
  FeatureMap<float> y;
};

// wav pair -> stft -> normalize by noisy time-domain peak -> warp -> aligned
// random crop -> packed 2-channel maps.
LoadedPair load_pair_cropped(const TrainPair& item, const StftConfig& stft_cfg,
                             int crop_frames, Rng& rng) {
  const Waveform clean = read_wav(item.clean_path);
  const Waveform corrupt = read_wav(item.corrupt_path);
  ComplexSpectrogram cs = stft(clean, stft_cfg);
  ComplexSpectrogram ys = stft(corrupt, stft_cfg);
  NormalizedPair np = normalize(cs, ys, peak_abs(corrupt));
  ComplexSpectrogram cw = apply_warping(np.clean);
  ComplexSpectrogram yw = apply_warping(np.noisy);
  auto crops = random_crop_pair(cw, yw, crop_frames, rng);
  LoadedPair out;
  pack_planes<float>({&crops.first}, out.x0);
  pack_planes<float>({&crops.second}, out.y);
  return out;
}

void sub_maps(const FeatureMap<float>& a, const FeatureMap<float>& b,
              FeatureMap<float>& out) {
  if (!a.same_shape(b)) throw std::runtime_error("sub_maps: shape mismatch");
  out.resize(a.h, a.w, a.c);
  for (int y = 0; y < a.h; ++y) {
    const float* pa = a.at(y, 0);
    const float* pb = b.at(y, 0);
    float* po = out.at(y, 0);
    for (int i = 0; i < a.w * a.c; ++i) po[i] = pa[i] - pb[i];
  }
}

struct TrainCtx {
  const TrainConfig& cfg;
  const SdeConfig& sde;
  const StftConfig& stft_cfg;
  const std::vector<TrainPair>& train_items;
  const std::vector<TrainPair>& val_items;
  std::ofstream log;
  Clock::time_point t0;
  Rng shuffle_rng;
  std::vector<int> order;
  size_t pos = 0;
  std::uint64_t global_step = 0;

  TrainCtx(const TrainConfig& c, const SdeConfig& s, const StftConfig& f,
           const std::vector<TrainPair>& tr, const std::vector<TrainPair>& va)
      : cfg(c),
        sde(s),
        stft_cfg(f),
        train_items(tr),
        val_items(va),
        shuffle_rng(derive_seed(c.seed, 0x73687566)) {
    if (train_items.empty()) throw std::runtime_error("no training items");
    if (val_items.empty()) throw std::runtime_error("no validation items");
    order.resize(train_items.size());
    for (size_t i = 0; i < order.size(); ++i) order[i] = static_cast<int>(i);
    reshuffle();
    fs::create_directories(cfg.out_dir);
    const std::string log_path = cfg.out_dir + "/train_log.txt";
    log.open(log_path, cfg.resume ? std::ios::app : std::ios::out);
    if (!log) throw std::runtime_error("cannot open training log: " + log_path);
    t0 = Clock::now();
  }

  // Replays the item-selection stream up to the resume point. Everything else
  // consumed per step lives in streams keyed by (seed, global_step, slot), so
  // the shuffle order is the only cross-step random state to restore.
  void fast_forward_items(std::uint64_t global_steps_done) {
    const std::uint64_t n =
        global_steps_done * static_cast<std::uint64_t>(cfg.effective_batch);
    for (std::uint64_t i = 0; i < n; ++i) (void)next_item();
    global_step = global_steps_done;
  }

  void log_phase(const std::string& name, int n_steps) {
    log << "# phase " << name << " start=" << global_step
        << " steps=" << n_steps << "\n";
    log.flush();
  }

  void reshuffle() {
    for (size_t i = order.size(); i > 1; --i) {
      const size_t j = shuffle_rng.uniform_index(i);
      std::swap(order[i - 1], order[j]);
    }
    pos = 0;
  }

  const TrainPair& next_item() {
    if (pos >= order.size()) reshuffle();
    return train_items[order[pos++]];
  }

  double wall_seconds() const {
    return std::chrono::duration<double>(Clock::now() - t0).count();
  }

  void log_step(double j_dsm, double j_sup, double j_storm, double lr) {
    log << "step=" << global_step << " j_dsm=" << format_double(j_dsm)
        << " j_sup=" << format_double(j_sup)
        << " j_storm=" << format_double(j_storm) << " lr=" << format_double(lr)
        << " wall_time=" << format_double(wall_seconds()) << "\n";
    log.flush();
  }

  void log_val(double val, double best, int patience_left) {
    log << "# val step=" << global_step << " val_loss=" << format_double(val)
        << " best=" << format_double(best)
        << " patience_left=" << patience_left << "\n";
    log.flush();
  }

  int val_count() const {
    return std::min<int>(cfg.max_val_items,
                         static_cast<int>(val_items.size()));
  }
};

Checkpoint assemble_checkpoint(CheckpointRole role, const TrainCtx& ctx,
                               ConditioningMode conditioning, int emb_dim,
                               const std::vector<float>& params,
                               const std::vector<float>& ema,
                               nn::Adam<float>& adam) {
  Checkpoint ckpt;
  ckpt.role = role;
  ckpt.conditioning = conditioning;
  ckpt.sde = ctx.sde;
  ckpt.base_channels = ctx.cfg.base_channels;
  ckpt.emb_dim = emb_dim;
  ckpt.step = ctx.global_step;
  ckpt.params = params;
  ckpt.ema = ema;
  ckpt.adam_m = adam.m();
  ckpt.adam_v = adam.v();
  ckpt.adam_t = adam.step_count();
  return ckpt;
}

struct PhaseOutcome {
  double best_val = std::numeric_limits<double>::infinity();
  std::uint64_t best_step = 0;
  bool early_stopped = false;
};

// Restored mid-phase state for --resume. `main` is the rotating -last
// checkpoint of the phase's primary network; `secondary` carries the
// predictor in joint phases; `best` the -best checkpoint (for the in-memory
// best-state handoff). Early-stopping bookkeeping comes from the val lines of
// the existing training log.
struct PhaseResume {
  const Checkpoint* main = nullptr;
  const Checkpoint* secondary = nullptr;
  const Checkpoint* best = nullptr;
  double best_val = std::numeric_limits<double>::infinity();
  std::uint64_t best_step = 0;
  int patience_left = 0;
  int start_s = 0;  // phase-local steps already completed
};

struct ValLine {
  std::uint64_t step = 0;
  double val_loss = 0.0;
  double best = 0.0;
  int patience_left = 0;
};

struct PhaseMarker {
  std::string name;
  std::uint64_t start = 0;
  int steps = 0;
};

struct ParsedLog {
  std::vector<PhaseMarker> phases;
  std::vector<ValLine> vals;
  std::uint64_t last_step = 0;
};

ParsedLog parse_train_log(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("resume: cannot read training log " + path);
  ParsedLog out;
  std::string line;
  while (std::getline(in, line)) {
    std::istringstream ss(line);
    std::string tok;
    ss >> tok;
    if (tok == "#") {
      ss >> tok;
      if (tok == "phase") {
        PhaseMarker m;
        ss >> m.name;
        std::string kv;
        while (ss >> kv) {
          const auto eq = kv.find('=');
          if (eq == std::string::npos) continue;
          const std::string k = kv.substr(0, eq);
          const std::string v = kv.substr(eq + 1);
          if (k == "start") m.start = std::stoull(v);
          if (k == "steps") m.steps = std::stoi(v);
        }
        out.phases.push_back(m);
      } else if (tok == "val") {
        ValLine v;
        std::string kv;
        while (ss >> kv) {
          const auto eq = kv.find('=');
          if (eq == std::string::npos) continue;
          const std::string k = kv.substr(0, eq);
          const std::string val = kv.substr(eq + 1);
          if (k == "step") v.step = std::stoull(val);
          if (k == "val_loss") v.val_loss = std::stod(val);
          if (k == "best") v.best = std::stod(val);
          if (k == "patience_left") v.patience_left = std::stoi(val);
        }
        out.vals.push_back(v);
      }
    } else if (tok.rfind("step=", 0) == 0) {
      out.last_step = std::stoull(tok.substr(5));
    }
  }
  return out;
}

// Early-stopping bookkeeping of one phase at its resume point, recovered
// from the val lines falling inside that phase.
void recover_phase_progress(const ParsedLog& log, std::uint64_t phase_start,
                            std::uint64_t resume_step, int patience,
                            PhaseResume* r) {
  r->best_val = std::numeric_limits<double>::infinity();
  r->patience_left = patience;
  for (const ValLine& v : log.vals) {
    if (v.step <= phase_start || v.step > resume_step) continue;
    if (v.val_loss < r->best_val) {
      r->best_val = v.val_loss;
      r->best_step = v.step;
    }
    r->patience_left = v.patience_left;
  }
  r->start_s = static_cast<int>(resume_step - phase_start);
}

// Temporarily swaps the EMA shadow into a parameter store.
class EmaSwap {
 public:
  EmaSwap(std::vector<float>& params, const std::vector<float>& ema)
      : params_(params), saved_(params) {
    params_ = ema;
  }
  ~EmaSwap() { params_ = saved_; }

 private:
  std::vector<float>& params_;
  std::vector<float> saved_;
};

double validate_predictor(TrainCtx& ctx, PredictorNet& pred,
                          const std::vector<float>& ema) {
  EmaSwap swap(pred.parameters(), ema);
  double acc = 0.0;
  const int n = ctx.val_count();
  for (int i = 0; i < n; ++i) {
    Rng rng(derive_seed(ctx.cfg.seed, 0x76616c, static_cast<std::uint64_t>(i)));
    LoadedPair lp = load_pair_cropped(ctx.val_items[i], ctx.stft_cfg,
                                      ctx.cfg.crop_frames, rng);
    const FeatureMap<float>& dout = pred.net().forward(lp.y, 0.0f);
    acc += sup_item_loss<float>(dout, lp.x0);
  }
  return acc / n;
}

double validate_score(TrainCtx& ctx, ScoreModel& sm, PredictorNet* pred,
                      const std::vector<float>& score_ema,
                      const std::vector<float>* pred_ema) {
  EmaSwap swap_s(sm.parameters(), score_ema);
  std::unique_ptr<EmaSwap> swap_p;
  if (pred && pred_ema)
    swap_p = std::make_unique<EmaSwap>(pred->parameters(), *pred_ema);
  const bool refine =
      ctx.cfg.storm.refinement_mode == RefinementMode::kRefinement;
  double acc = 0.0;
  const int n = ctx.val_count();
  FeatureMap<float> z, r_x, r_y;
  for (int i = 0; i < n; ++i) {
    Rng rng(derive_seed(ctx.cfg.seed, 0x76616c, static_cast<std::uint64_t>(i)));
    LoadedPair lp = load_pair_cropped(ctx.val_items[i], ctx.stft_cfg,
                                      ctx.cfg.crop_frames, rng);
    const double tau = sample_tau(ctx.sde, rng);
    draw_complex_noise_map(lp.x0.h, lp.x0.w, rng, z);
    StormItemLosses<float> losses;
    if (refine) {
      const FeatureMap<float>& dout = pred->net().forward(lp.y, 0.0f);
      sub_maps(lp.x0, dout, r_x);
      sub_maps(lp.y, dout, r_y);
      losses = storm_item_step<float>(sm.net(), nullptr, r_x, r_y, z, tau,
                                      ctx.sde, ctx.cfg.storm, false, false);
    } else {
      nn::UNet<float>* pnet = pred ? &pred->net() : nullptr;
      losses = storm_item_step<float>(sm.net(), pnet, lp.x0, lp.y, z, tau,
                                      ctx.sde, ctx.cfg.storm, false, false);
    }
    acc += losses.j_storm;
  }
  return acc / n;
}

void ensure_finite(double loss, const std::string& role_name, TrainCtx& ctx,
                   const std::function<void(const std::string&)>& dump) {
  if (std::isfinite(loss)) return;
  const std::string path = ctx.cfg.out_dir + "/" + role_name + "-diverged.ckpt";
  dump(path);
  throw std::runtime_error("non-finite loss at step " +
                           std::to_string(ctx.global_step) +
                           "; state dumped to " + path);
}

// Predictor-only phase: supervised objective, its own validation/early-stop.
PhaseOutcome run_predictor_phase(TrainCtx& ctx, PredictorNet& pred,
                                 int n_steps, std::vector<float>& ema_out,
                                 const PhaseResume* resume = nullptr) {
  auto& store = pred.net().store();
  nn::Adam<float> adam(store.size(), ctx.cfg.lr);
  std::vector<float> ema = store.values;
  std::vector<float> best_params = store.values;
  std::vector<float> best_ema = ema;
  PhaseOutcome out;
  int patience_left = ctx.cfg.patience;
  const int batch = ctx.cfg.effective_batch;
  const std::string best_path = ctx.cfg.out_dir + "/predictor-best.ckpt";
  const std::string last_path = ctx.cfg.out_dir + "/predictor-last.ckpt";
  FeatureMap<float> d_dout;

  int start_s = 0;
  if (resume) {
    store.values = resume->main->params;
    ema = resume->main->ema;
    adam.m() = resume->main->adam_m;
    adam.v() = resume->main->adam_v;
    adam.set_step_count(resume->main->adam_t);
    if (resume->best) {
      best_params = resume->best->params;
      best_ema = resume->best->ema;
    }
    out.best_val = resume->best_val;
    out.best_step = resume->best_step;
    patience_left = resume->patience_left;
    start_s = resume->start_s;
  } else {
    ctx.log_phase("predictor", n_steps);
  }

  auto dump = [&](const std::string& path) {
    save_checkpoint(path,
                    assemble_checkpoint(CheckpointRole::kPredictor, ctx,
                                        ctx.cfg.storm.conditioning, 0,
                                        store.values, ema, adam));
  };

  for (int s = start_s + 1; s <= n_steps; ++s) {
    ++ctx.global_step;
    store.zero_grads();
    double j_acc = 0.0;
    for (int i = 0; i < batch; ++i) {
      Rng rng(derive_seed(ctx.cfg.seed, ctx.global_step,
                          static_cast<std::uint64_t>(i)));
      LoadedPair lp = load_pair_cropped(ctx.next_item(), ctx.stft_cfg,
                                        ctx.cfg.crop_frames, rng);
      const FeatureMap<float>& dout = pred.net().forward(lp.y, 0.0f);
      d_dout.resize(dout.h, dout.w, 2);
      const double j =
          sup_item_loss<float>(dout, lp.x0, 1.0 / batch, &d_dout);
      pred.net().backward(d_dout);
      j_acc += j / batch;
    }
    ensure_finite(j_acc, "predictor", ctx, dump);
    adam.step(store.values, store.grads);
    nn::ema_update(ema, store.values, ctx.cfg.ema_decay);
    ctx.log_step(0.0, j_acc, j_acc, adam.lr());

    if (s % ctx.cfg.val_interval == 0 || s == n_steps) {
      const double val = validate_predictor(ctx, pred, ema);
      if (val < out.best_val) {
        out.best_val = val;
        out.best_step = ctx.global_step;
        best_params = store.values;
        best_ema = ema;
        patience_left = ctx.cfg.patience;
        save_checkpoint(best_path,
                        assemble_checkpoint(CheckpointRole::kPredictor, ctx,
                                            ctx.cfg.storm.conditioning, 0,
                                            store.values, ema, adam));
      } else {
        --patience_left;
      }
      // Log before rotating -last: a crash between the two leaves the
      // checkpoint one boundary behind the log (still resumable), never
      // ahead of it (which would be unresumable).
      ctx.log_val(val, out.best_val, patience_left);
      dump(last_path);
      if (patience_left <= 0 && s != n_steps) {
        out.early_stopped = true;
        break;
      }
    }
  }
  dump(last_path);
  // Hand the best state to the next phase.
  store.values = best_params;
  ema_out = best_ema;
  return out;
}

// Main phase: score (or joint) training. `pred` may be null (pure
// generation); train_pred enables predictor updates (joint fine-tuning).
PhaseOutcome run_score_phase(TrainCtx& ctx, ScoreModel& sm, PredictorNet* pred,
                             bool train_pred, int n_steps,
                             CheckpointRole score_role,
                             std::vector<float> pred_ema,
                             const PhaseResume* resume = nullptr) {
  auto& sstore = sm.net().store();
  nn::Adam<float> adam_s(sstore.size(), ctx.cfg.lr);
  std::vector<float> ema_s = sstore.values;
  std::unique_ptr<nn::Adam<float>> adam_p;
  if (pred && train_pred) {
    adam_p = std::make_unique<nn::Adam<float>>(pred->net().store().size(),
                                               ctx.cfg.lr);
    pred_ema = pred->parameters();
  }
  const bool refine =
      ctx.cfg.storm.refinement_mode == RefinementMode::kRefinement;
  const std::string role_name = to_string(score_role);
  const std::string best_path = ctx.cfg.out_dir + "/" + role_name + "-best.ckpt";
  const std::string last_path = ctx.cfg.out_dir + "/" + role_name + "-last.ckpt";
  const std::string pred_best_path = ctx.cfg.out_dir + "/predictor-best.ckpt";
  const std::string pred_last_path = ctx.cfg.out_dir + "/predictor-last.ckpt";

  PhaseOutcome out;
  int patience_left = ctx.cfg.patience;
  const int batch = ctx.cfg.effective_batch;
  FeatureMap<float> z, r_x, r_y;

  int start_s = 0;
  if (resume) {
    sstore.values = resume->main->params;
    ema_s = resume->main->ema;
    adam_s.m() = resume->main->adam_m;
    adam_s.v() = resume->main->adam_v;
    adam_s.set_step_count(resume->main->adam_t);
    if (pred && train_pred) {
      if (!resume->secondary)
        throw std::runtime_error(
            "resume: joint phase needs the predictor checkpoint");
      pred->parameters() = resume->secondary->params;
      pred_ema = resume->secondary->ema;
      adam_p->m() = resume->secondary->adam_m;
      adam_p->v() = resume->secondary->adam_v;
      adam_p->set_step_count(resume->secondary->adam_t);
    }
    out.best_val = resume->best_val;
    out.best_step = resume->best_step;
    patience_left = resume->patience_left;
    start_s = resume->start_s;
  } else {
    ctx.log_phase(role_name, n_steps);
  }

  auto dump = [&](const std::string& path) {
    save_checkpoint(path,
                    assemble_checkpoint(score_role, ctx,
                                        sm.config().conditioning,
                                        ctx.cfg.emb_dim, sstore.values, ema_s,
                                        adam_s));
  };
  auto save_pair = [&](const std::string& spath, const std::string& ppath) {
    save_checkpoint(spath,
                    assemble_checkpoint(score_role, ctx,
                                        sm.config().conditioning,
                                        ctx.cfg.emb_dim, sstore.values, ema_s,
                                        adam_s));
    if (pred && train_pred)
      save_checkpoint(ppath, assemble_checkpoint(
                                 CheckpointRole::kPredictor, ctx,
                                 ctx.cfg.storm.conditioning, 0,
                                 pred->net().store().values, pred_ema, *adam_p));
  };

  for (int s = start_s + 1; s <= n_steps; ++s) {
    ++ctx.global_step;
    sstore.zero_grads();
    if (pred && train_pred) pred->net().store().zero_grads();
    double dsm_acc = 0.0, sup_acc = 0.0, storm_acc = 0.0;
    for (int i = 0; i < batch; ++i) {
      Rng rng(derive_seed(ctx.cfg.seed, ctx.global_step,
                          static_cast<std::uint64_t>(i)));
      LoadedPair lp = load_pair_cropped(ctx.next_item(), ctx.stft_cfg,
                                        ctx.cfg.crop_frames, rng);
      const double tau = sample_tau(ctx.sde, rng);
      draw_complex_noise_map(lp.x0.h, lp.x0.w, rng, z);
      StormItemLosses<float> losses;
      if (refine) {
        const FeatureMap<float>& dout = pred->net().forward(lp.y, 0.0f);
        sub_maps(lp.x0, dout, r_x);
        sub_maps(lp.y, dout, r_y);
        losses =
            storm_item_step<float>(sm.net(), nullptr, r_x, r_y, z, tau,
                                   ctx.sde, ctx.cfg.storm, false, true,
                                   1.0 / batch);
      } else {
        nn::UNet<float>* pnet = pred ? &pred->net() : nullptr;
        losses = storm_item_step<float>(sm.net(), pnet, lp.x0, lp.y, z, tau,
                                        ctx.sde, ctx.cfg.storm, train_pred,
                                        true, 1.0 / batch);
      }
      dsm_acc += losses.j_dsm / batch;
      sup_acc += losses.j_sup / batch;
      storm_acc += losses.j_storm / batch;
    }
    ensure_finite(storm_acc, role_name, ctx, dump);
    adam_s.step(sstore.values, sstore.grads);
    nn::ema_update(ema_s, sstore.values, ctx.cfg.ema_decay);
    if (pred && train_pred) {
      auto& pstore = pred->net().store();
      adam_p->step(pstore.values, pstore.grads);
      nn::ema_update(pred_ema, pstore.values, ctx.cfg.ema_decay);
    }
    ctx.log_step(dsm_acc, sup_acc, storm_acc, adam_s.lr());

    if (s % ctx.cfg.val_interval == 0 || s == n_steps) {
      const std::vector<float>* pe =
          (pred && (train_pred || refine)) ? &pred_ema : nullptr;
      // Frozen predictors run with their stored (already final) parameters.
      if (pred && !train_pred) pe = nullptr;
      const double val = validate_score(ctx, sm, pred, ema_s, pe);
      if (val < out.best_val) {
        out.best_val = val;
        out.best_step = ctx.global_step;
        patience_left = ctx.cfg.patience;
        save_pair(best_path, pred_best_path);
      } else {
        --patience_left;
      }
      // Log first so the rotating -last checkpoint can trail but never lead
      // the log (a lead would make the run unresumable after a crash here).
      ctx.log_val(val, out.best_val, patience_left);
      save_pair(last_path, pred_last_path);
      if (patience_left <= 0 && s != n_steps) {
        out.early_stopped = true;
        break;
      }
    }
  }
  save_pair(last_path, pred_last_path);
  return out;
}

}  // namespace

TrainResult train_storm(const std::vector<TrainPair>& train_items,
                        const std::vector<TrainPair>& val_items,
                        const TrainConfig& cfg, const SdeConfig& sde,
                        const StftConfig& stft_cfg) {
  cfg.validate();
  sde.validate();

  const RefinementMode mode = cfg.storm.refinement_mode;
  const bool needs_predictor = mode != RefinementMode::kPureGenerative;
  const bool pretrain =
      needs_predictor && mode != RefinementMode::kPurePredictive &&
      cfg.predictor_init.empty() &&
      (cfg.storm.strategy != TrainStrategy::kJointFromScratch ||
       mode == RefinementMode::kRefinement);
  const bool train_pred =
      needs_predictor && mode == RefinementMode::kRegeneration &&
      cfg.storm.strategy != TrainStrategy::kPretrainThenFreeze;
  const CheckpointRole role = mode == RefinementMode::kRefinement
                                  ? CheckpointRole::kScoreRefine
                                  : CheckpointRole::kScoreRegen;
  const std::string role_name = to_string(role);

  // ----- Resolve the resume point before any phase runs -----
  bool resume_pred_phase = false;   // continue inside a predictor phase
  bool skip_pred_phase = false;     // predictor phase already complete
  bool resume_score_phase = false;  // continue inside the score phase
  bool run_done = false;            // nothing left to run
  PhaseResume pred_resume, score_resume;
  Checkpoint ck_pred_last, ck_pred_best, ck_score_last;
  bool have_pred_best = false;
  std::uint64_t resume_step = 0;

  if (cfg.resume) {
    const ParsedLog parsed =
        parse_train_log(cfg.out_dir + "/train_log.txt");
    if (parsed.phases.empty())
      throw std::runtime_error("resume: no phase records in training log");
    const PhaseMarker& current = parsed.phases.back();
    const std::string pred_best_path = cfg.out_dir + "/predictor-best.ckpt";
    if (fs::exists(pred_best_path)) {
      ck_pred_best = load_checkpoint(pred_best_path);
      have_pred_best = true;
    }

    auto require_val_at = [&](std::uint64_t step) {
      for (const ValLine& v : parsed.vals)
        if (v.step == step) return;
      throw std::runtime_error(
          "resume: checkpoint step " + std::to_string(step) +
          " has no matching validation record in the training log");
    };
    // A phase that crashed before its first validation has no -last
    // checkpoint of its own yet; it is replayed from its start instead.
    bool phase_has_vals = false;
    for (const ValLine& v : parsed.vals)
      if (v.step > current.start) phase_has_vals = true;

    if (current.name == "predictor") {
      const bool is_pretrain = mode != RefinementMode::kPurePredictive;
      if (!needs_predictor || (is_pretrain && !pretrain))
        throw std::runtime_error(
            "resume: log shows a predictor phase the current configuration "
            "would not run");
      const int budget = is_pretrain ? cfg.pretrain_steps : cfg.max_steps;
      const std::string last_path = cfg.out_dir + "/predictor-last.ckpt";
      if (!fs::exists(last_path)) {
        if (phase_has_vals)
          throw std::runtime_error(
              "resume: the training log records validations but " + last_path +
              " is missing");
        resume_step = current.start;  // replay the phase from scratch
      } else {
        ck_pred_last = load_checkpoint(last_path);
        resume_step = ck_pred_last.step;
        require_val_at(resume_step);
        recover_phase_progress(parsed, current.start, resume_step,
                               cfg.patience, &pred_resume);
        pred_resume.main = &ck_pred_last;
        if (have_pred_best) pred_resume.best = &ck_pred_best;
        const bool complete = pred_resume.patience_left <= 0 ||
                              pred_resume.start_s >= budget;
        if (complete) {
          if (is_pretrain)
            skip_pred_phase = true;  // move straight into a fresh score phase
          else
            run_done = true;
        } else {
          resume_pred_phase = true;
        }
      }
    } else if (current.name == role_name) {
      const std::string last_path =
          cfg.out_dir + "/" + role_name + "-last.ckpt";
      if (!fs::exists(last_path)) {
        if (phase_has_vals)
          throw std::runtime_error(
              "resume: the training log records validations but " + last_path +
              " is missing");
        resume_step = current.start;  // replay the phase from scratch
        if (pretrain) skip_pred_phase = true;
      } else {
        ck_score_last = load_checkpoint(last_path);
        resume_step = ck_score_last.step;
        require_val_at(resume_step);
        recover_phase_progress(parsed, current.start, resume_step,
                               cfg.patience, &score_resume);
        score_resume.main = &ck_score_last;
        if (train_pred) {
          ck_pred_last = load_checkpoint(cfg.out_dir + "/predictor-last.ckpt");
          if (ck_pred_last.step != ck_score_last.step)
            throw std::runtime_error(
                "resume: predictor-last.ckpt (step " +
                std::to_string(ck_pred_last.step) + ") and " + role_name +
                "-last.ckpt (step " + std::to_string(ck_score_last.step) +
                ") are from different validation boundaries");
          score_resume.secondary = &ck_pred_last;
        }
        const bool complete = score_resume.patience_left <= 0 ||
                              score_resume.start_s >= cfg.max_steps;
        if (complete)
          run_done = true;
        else
          resume_score_phase = true;
      }
    } else {
      throw std::runtime_error(
          "resume: training log phase '" + current.name +
          "' does not match the configured run (expected 'predictor' or '" +
          role_name + "')");
    }
  }

  TrainCtx ctx(cfg, sde, stft_cfg, train_items, val_items);
  TrainResult result;
  result.log_path = cfg.out_dir + "/train_log.txt";
  if (cfg.resume) ctx.fast_forward_items(resume_step);

  std::unique_ptr<PredictorNet> pred;
  std::vector<float> pred_ema;
  if (needs_predictor) {
    if (!cfg.predictor_init.empty()) {
      const Checkpoint ckpt = load_checkpoint(cfg.predictor_init);
      pred = std::make_unique<PredictorNet>(
          predictor_from_checkpoint(ckpt, /*use_ema=*/false));
      pred_ema = ckpt.ema;
    } else {
      PredictorNetConfig pc;
      pc.base_channels = cfg.base_channels;
      pred = std::make_unique<PredictorNet>(pc,
                                            derive_seed(cfg.seed, 0x70726564));
      pred_ema = pred->parameters();
    }
  }

  if (mode == RefinementMode::kPurePredictive) {
    PhaseOutcome po;
    if (run_done) {
      po.best_val = pred_resume.best_val;
      po.best_step = pred_resume.best_step;
      po.early_stopped = pred_resume.patience_left <= 0;
      ctx.global_step = resume_step;
    } else {
      po = run_predictor_phase(ctx, *pred, cfg.max_steps, pred_ema,
                               resume_pred_phase ? &pred_resume : nullptr);
    }
    result.best_val = po.best_val;
    result.best_step = po.best_step;
    result.early_stopped = po.early_stopped;
    result.total_steps = ctx.global_step;
    result.predictor_best_path = cfg.out_dir + "/predictor-best.ckpt";
    result.predictor_last_path = cfg.out_dir + "/predictor-last.ckpt";
    return result;
  }

  // Optional predictor pretraining ahead of the score phase.
  if (pretrain) {
    if (skip_pred_phase || resume_score_phase || run_done) {
      // Pretraining already finished in the resumed run: restore its
      // best-state handoff instead of re-running the phase.
      if (!have_pred_best)
        throw std::runtime_error(
            "resume: pretraining finished but predictor-best.ckpt is missing");
      pred->parameters() = ck_pred_best.params;
      pred_ema = ck_pred_best.ema;
    } else {
      run_predictor_phase(ctx, *pred, cfg.pretrain_steps, pred_ema,
                          resume_pred_phase ? &pred_resume : nullptr);
    }
    result.predictor_best_path = cfg.out_dir + "/predictor-best.ckpt";
    result.predictor_last_path = cfg.out_dir + "/predictor-last.ckpt";
  }

  ScoreNetConfig sc;
  sc.base_channels = cfg.base_channels;
  sc.emb_dim = cfg.emb_dim;
  sc.conditioning = cfg.storm.conditioning;
  ScoreModel sm(sc, derive_seed(cfg.seed, 0x73636f72));

  // Frozen predictors deploy with their averaged parameters, so the anchors
  // seen during score training must come from the same parameters.
  if (pred && !train_pred) pred->parameters() = pred_ema;

  PhaseOutcome po;
  if (run_done) {
    po.best_val = score_resume.best_val;
    po.best_step = score_resume.best_step;
    po.early_stopped = score_resume.patience_left <= 0;
    ctx.global_step = resume_step;
  } else {
    po = run_score_phase(ctx, sm, pred.get(), train_pred, cfg.max_steps, role,
                         pred_ema,
                         resume_score_phase ? &score_resume : nullptr);
  }
  result.best_val = po.best_val;
  result.best_step = po.best_step;
  result.early_stopped = po.early_stopped;
  result.total_steps = ctx.global_step;
  result.score_best_path = cfg.out_dir + "/" + role_name + "-best.ckpt";
  result.score_last_path = cfg.out_dir + "/" + role_name + "-last.ckpt";
  if (train_pred) {
    result.predictor_best_path = cfg.out_dir + "/predictor-best.ckpt";
    result.predictor_last_path = cfg.out_dir + "/predictor-last.ckpt";
  }
  return result;
}

}  // namespace storm
