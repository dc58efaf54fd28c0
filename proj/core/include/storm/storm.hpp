#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "storm/checkpoint.hpp"
#include "storm/nn.hpp"
#include "storm/predictor.hpp"
#include "storm/rng.hpp"
#include "storm/sampler.hpp"
#include "storm/score_model.hpp"
#include "storm/sde.hpp"
#include "storm/spectral.hpp"
#include "storm/wav.hpp"

namespace storm {

// How the predictor and score networks are trained relative to each other.
enum class TrainStrategy {
  kJointFromScratch,    // both networks random-init, trained together
  kPretrainThenFreeze,  // predictor pretrained, frozen during score training
  kPretrainThenJoint,   // predictor pretrained, then joint fine-tuning (default)
};

// What the inference pipeline produces.
enum class RefinementMode {
  kRegeneration,   // full pipeline: diffusion re-generates from D(y)
  kRefinement,     // D(y) + generated residue
  kPureGenerative, // diffusion anchored at y itself, no predictor
  kPurePredictive, // D(y) alone, no diffusion
};

std::string to_string(TrainStrategy s);
TrainStrategy train_strategy_from_string(const std::string& s);
std::string to_string(RefinementMode m);
RefinementMode refinement_mode_from_string(const std::string& s);

struct StormConfig {
  double alpha = 1.0;  // supervised-term balance in the composite objective
  ConditioningMode conditioning = ConditioningMode::kBoth;
  TrainStrategy strategy = TrainStrategy::kPretrainThenJoint;
  RefinementMode refinement_mode = RefinementMode::kRegeneration;
  // When false, the predictor output is treated as a constant inside the
  // score-matching term (no gradient to the predictor through the kernel
  // anchor or the conditioning channels); the supervised term still trains
  // it. Default: end-to-end flow.
  bool end_to_end_dsm_grad = true;
  // When true (and end-to-end flow is on), only the kernel-anchor path is
  // detached; the conditioning-channel path still carries gradient.
  bool detach_anchor = false;

  void validate() const;
};

// Residue pair for refinement-mode training/inference: the diffusion runs on
// r_x = x0 - D(y) anchored at r_y = y - D(y); r_y - r_x equals y - x0 up to
// floating-point round-off.
struct ResidualPair {
  ComplexSpectrogram r_x;
  ComplexSpectrogram r_y;
};

ResidualPair make_residual_pair(const ComplexSpectrogram& x0,
                                const ComplexSpectrogram& y,
                                const ComplexSpectrogram& d_out);

// ----- Training-step primitives (templated so gradient-integrity tests run
// ----- in double precision) -----

// Copies the listed planes into one map with concatenated channels.
template <class S>
void concat_channel_planes(const std::vector<const nn::FeatureMap<S>*>& parts,
                           nn::FeatureMap<S>& out) {
  if (parts.empty()) throw std::runtime_error("concat: no parts");
  int ctotal = 0;
  for (const auto* p : parts) {
    if (p->h != parts[0]->h || p->w != parts[0]->w)
      throw std::runtime_error("concat: spatial shape mismatch");
    ctotal += p->c;
  }
  out.resize(parts[0]->h, parts[0]->w, ctotal);
  for (int y = 0; y < out.h; ++y)
    for (int x = 0; x < out.w; ++x) {
      S* dst = out.at(y, x);
      int c0 = 0;
      for (const auto* p : parts) {
        const S* src = p->at(y, x);
        for (int ch = 0; ch < p->c; ++ch) dst[c0 + ch] = src[ch];
        c0 += p->c;
      }
    }
}

// dst (2 channels) += scale * src[src_c0 + {0,1}].
template <class S>
void add_channel_slice(nn::FeatureMap<S>& dst, const nn::FeatureMap<S>& src,
                       int src_c0, double scale) {
  if (dst.h != src.h || dst.w != src.w || dst.c != 2 || src_c0 + 2 > src.c)
    throw std::runtime_error("add_channel_slice: shape mismatch");
  for (int y = 0; y < dst.h; ++y)
    for (int x = 0; x < dst.w; ++x) {
      S* d = dst.at(y, x);
      const S* s = src.at(y, x);
      d[0] += static_cast<S>(scale * s[src_c0]);
      d[1] += static_cast<S>(scale * s[src_c0 + 1]);
    }
}

// Fills a 2-channel map with one circularly-symmetric complex standard draw
// per valid pixel (channel 0 real, channel 1 imaginary; unit total variance).
template <class S>
void draw_complex_noise_map(int h, int w, Rng& rng, nn::FeatureMap<S>& out) {
  out.resize(h, w, 2);
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) {
      const std::complex<double> z = rng.complex_normal();
      S* dst = out.at(y, x);
      dst[0] = static_cast<S>(z.real());
      dst[1] = static_cast<S>(z.imag());
    }
}

// Diffusion time drawn uniformly from [t_eps, t_max].
inline double sample_tau(const SdeConfig& cfg, Rng& rng) {
  return cfg.t_eps + (cfg.t_max - cfg.t_eps) * rng.uniform();
}

template <class S>
struct StormItemLosses {
  double j_dsm = 0.0;
  double j_sup = 0.0;
  double j_storm = 0.0;
};

// One training item of the joint objective. All maps are packed warped+
// normalized spectrogram planes of identical spatial shape (2 channels each).
//
//   D = predictor(y)            (or D = y when predictor_net is null)
//   x_tau = e^{-gamma tau} x0 + (1 - e^{-gamma tau}) D + sigma(tau) z
//   input = [x_tau | conditioning planes per cfg.conditioning from (y, D)]
//   j_dsm = dsm_item_loss(score_net, input, z, sigma)
//   j_sup = sup_item_loss(D, x0)     (0 when predictor_net is null)
//   j_storm = j_dsm + alpha * j_sup
//
// With with_grad: score-net gradients always accumulate; predictor gradients
// accumulate only when train_predictor is set, combining the supervised term
// with whatever score-matching gradient paths the flags enable (kernel
// anchor, conditioning channels). grad_scale scales every accumulated
// gradient (1/batch for mean reduction over a batch). The kernel anchor,
// reverse-init anchor and EM drift target are the same D by construction.
template <class S>
StormItemLosses<S> storm_item_step(
    nn::UNet<S>& score_net, nn::UNet<S>* predictor_net,
    const nn::FeatureMap<S>& x0_map, const nn::FeatureMap<S>& y_map,
    const nn::FeatureMap<S>& z_map, double tau, const SdeConfig& sde,
    const StormConfig& cfg, bool train_predictor, bool with_grad,
    double grad_scale = 1.0) {
  if (!x0_map.same_shape(y_map) || !z_map.same_shape(y_map) || y_map.c != 2)
    throw std::runtime_error("storm_item_step: plane shape mismatch");
  if (tau < sde.t_eps - 1e-12 || tau > sde.t_max + 1e-12)
    throw std::runtime_error("storm_item_step: tau outside [t_eps, t_max]");

  nn::FeatureMap<S> dout;
  if (predictor_net) {
    dout = predictor_net->forward(y_map, S(0));  // copy out of net workspace
  } else {
    dout = y_map;
  }

  const double w = kernel_mean_weight(tau, sde);
  const double sigma = kernel_std(tau, sde);
  nn::FeatureMap<S> x_tau(x0_map.h, x0_map.w, 2);
  for (int yy = 0; yy < x_tau.h; ++yy) {
    const S* a = x0_map.at(yy, 0);
    const S* b = dout.at(yy, 0);
    const S* z = z_map.at(yy, 0);
    S* dst = x_tau.at(yy, 0);
    for (int i = 0; i < x_tau.w * 2; ++i)
      dst[i] = static_cast<S>(w * a[i] + (1.0 - w) * b[i] + sigma * z[i]);
  }

  std::vector<const nn::FeatureMap<S>*> parts{&x_tau};
  switch (cfg.conditioning) {
    case ConditioningMode::kNoisy:
      parts.push_back(&y_map);
      break;
    case ConditioningMode::kPostDenoiser:
      parts.push_back(&dout);
      break;
    case ConditioningMode::kBoth:
      parts.push_back(&y_map);
      parts.push_back(&dout);
      break;
  }
  nn::FeatureMap<S> input;
  concat_channel_planes(parts, input);

  const DsmItemResult<S> dsm =
      dsm_item_loss(score_net, input, z_map, sigma, with_grad, grad_scale);

  StormItemLosses<S> losses;
  losses.j_dsm = dsm.loss;

  const bool want_theta = with_grad && predictor_net && train_predictor;
  nn::FeatureMap<S> d_dout;
  if (want_theta) d_dout.resize(dout.h, dout.w, 2);
  if (predictor_net) {
    losses.j_sup = sup_item_loss(dout, x0_map, grad_scale * cfg.alpha,
                                 (want_theta && cfg.alpha > 0.0) ? &d_dout
                                                                 : nullptr);
  }
  losses.j_storm = losses.j_dsm + cfg.alpha * losses.j_sup;

  if (want_theta) {
    if (cfg.end_to_end_dsm_grad && dsm.d_input) {
      if (!cfg.detach_anchor)
        add_channel_slice(d_dout, *dsm.d_input, 0, 1.0 - w);
      int cond_c0 = -1;  // channel offset of D within the packed input
      if (cfg.conditioning == ConditioningMode::kPostDenoiser) cond_c0 = 2;
      if (cfg.conditioning == ConditioningMode::kBoth) cond_c0 = 4;
      if (cond_c0 >= 0) add_channel_slice(d_dout, *dsm.d_input, cond_c0, 1.0);
    }
    predictor_net->backward(d_dout);
  }
  return losses;
}

// ----- Inference -----

// stft -> peak-normalize (time-domain noisy peak) -> magnitude-warp. The
// inverse chain (finish_output) un-warps, de-normalizes, then inverts the
// transform; the warp is nonlinear so it must be removed before the
// normalization factor is multiplied back in.
struct PreparedInput {
  ComplexSpectrogram y;  // warped + normalized
  int num_samples = 0;
};

PreparedInput prepare_input(const Waveform& noisy, const StftConfig& stft);
Waveform finish_output(const ComplexSpectrogram& xhat_warped_normalized,
                       const StftConfig& stft, int out_len);

struct InferenceOutput {
  Waveform audio;
  ComplexSpectrogram spec;  // final un-warped, de-normalized spectrogram
  CallCounter calls;
};

// Full inference per cfg.refinement_mode:
//   Regeneration:    anchor = D(y); reverse diffusion conditioned on (y, D(y))
//   PureGenerative:  anchor = y (predictor unused and may be null); identical
//                    to Regeneration with an identity predictor
//   PurePredictive:  D(y) alone (score model unused and may be null)
//   Refinement:      r_y = y - D(y); generated residue added back onto D(y)
// score_role is the role tag of the loaded score checkpoint; a mismatch with
// the requested mode is an error (regeneration-trained models cannot run in
// refinement mode and vice versa).
InferenceOutput storm_infer(ScoreModel* score, Predictor* predictor,
                            CheckpointRole score_role, const Waveform& noisy,
                            const StormConfig& cfg, const SdeConfig& sde,
                            const SamplerConfig& sampler,
                            const StftConfig& stft, Rng& rng);

// Refinement pipeline, exposed directly (storm_infer dispatches here for
// RefinementMode::kRefinement).
InferenceOutput refine_infer(ScoreModel& score, Predictor& predictor,
                             CheckpointRole score_role, const Waveform& noisy,
                             const StormConfig& cfg, const SdeConfig& sde,
                             const SamplerConfig& sampler,
                             const StftConfig& stft, Rng& rng);

// ----- Training loop -----

struct TrainPair {
  std::string clean_path;
  std::string corrupt_path;
};

struct TrainConfig {
  StormConfig storm;
  double lr = 1e-4;
  int effective_batch = 16;  // reached by per-item gradient accumulation
  double ema_decay = 0.999;
  int max_steps = 600;       // optimizer steps of the main phase
  int pretrain_steps = 300;  // predictor-only steps (pretrain strategies)
  int val_interval = 25;     // steps between validations
  int patience = 10;         // validations without improvement before stopping
  int crop_frames = 64;      // training crop length (must be divisible by 4)
  int max_val_items = 16;
  int base_channels = 8;
  int emb_dim = 16;
  std::uint64_t seed = 1234;
  std::string out_dir;
  std::string predictor_init;  // optional predictor checkpoint to start from
  // Continue a previous run from the checkpoints in out_dir. Resume points
  // are validation boundaries (where the rotating -last checkpoints are
  // written); the restored run replays the data-shuffle stream and restores
  // parameters, EMA shadows, optimizer state, and early-stopping bookkeeping,
  // so every subsequent logged loss is bitwise identical to an uninterrupted
  // run. Only max_steps may differ from the original run's configuration.
  bool resume = false;

  void validate() const;
};

struct TrainResult {
  double best_val = 0.0;
  std::uint64_t best_step = 0;
  std::uint64_t total_steps = 0;
  bool early_stopped = false;
  // Empty when the run does not produce that artifact.
  std::string score_best_path;
  std::string score_last_path;
  std::string predictor_best_path;
  std::string predictor_last_path;
  std::string log_path;
};

// Runs the configured phases (predictor pretraining and/or the main
// score/joint phase per cfg.storm.strategy and refinement_mode), with seeded
// shuffling, EMA tracking, periodic validation on the held-out items, early
// stopping, and best+last checkpoint rotation. The training log is
// newline-delimited "step= j_dsm= j_sup= j_storm= lr= wall_time=" records
// (wall_time is the only nondeterministic field). Throws on non-finite loss
// after dumping the diverged state next to the checkpoints.
TrainResult train_storm(const std::vector<TrainPair>& train_items,
                        const std::vector<TrainPair>& val_items,
                        const TrainConfig& cfg, const SdeConfig& sde,
                        const StftConfig& stft);

// ----- Checkpoint <-> model bridging -----

ScoreModel score_model_from_checkpoint(const Checkpoint& ckpt, bool use_ema);
PredictorNet predictor_from_checkpoint(const Checkpoint& ckpt, bool use_ema);

}  // namespace storm
