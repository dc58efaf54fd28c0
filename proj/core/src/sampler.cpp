#include "storm/sampler.hpp"

#include <cmath>
#include <stdexcept>
#include <string>

namespace storm {

void SamplerConfig::validate() const {
  if (n_steps < 1) throw std::runtime_error("sampler: n_steps must be >= 1");
  if (corrector_steps < 0)
    throw std::runtime_error("sampler: corrector_steps must be >= 0");
  if (r <= 0.0) throw std::runtime_error("sampler: r must be positive");
}

namespace {

bool all_finite(const ComplexSpectrogram& s) {
  for (const auto& b : s.bins)
    if (!std::isfinite(b.real()) || !std::isfinite(b.imag())) return false;
  return true;
}

}  // namespace

DiffusionState init_reverse_state(const ComplexSpectrogram& anchor,
                                  const SdeConfig& cfg, Rng& rng) {
  DiffusionState st;
  st.tau = cfg.t_max;
  st.x = anchor;
  const double sigma = kernel_std(cfg.t_max, cfg);
  if (sigma > 0.0)
    for (auto& b : st.x.bins) b += sigma * rng.complex_normal();
  return st;
}

DiffusionState em_step(const DiffusionState& state,
                       const ComplexSpectrogram& score,
                       const ComplexSpectrogram& anchor, double dtau,
                       const SdeConfig& cfg, Rng& rng, EmVariant variant,
                       bool add_noise) {
  if (state.tau < dtau - 1e-12)
    throw std::runtime_error("em_step: step would cross tau = 0");
  if (!state.x.same_shape(score) || !state.x.same_shape(anchor))
    throw std::runtime_error("em_step: shape mismatch");
  const double g = diffusion_coeff(state.tau, cfg);
  const double noise_scale = add_noise ? g * std::sqrt(dtau) : 0.0;
  DiffusionState out;
  out.tau = state.tau - dtau;
  out.x = state.x;
  for (size_t i = 0; i < out.x.bins.size(); ++i) {
    std::complex<double> incr;
    if (variant == EmVariant::kReverseSde) {
      incr = (cfg.gamma * (state.x.bins[i] - anchor.bins[i]) +
              g * g * score.bins[i]) *
             dtau;
    } else {
      incr = (cfg.gamma * (anchor.bins[i] - state.x.bins[i]) - score.bins[i]) *
             dtau;
    }
    out.x.bins[i] += incr;
    if (noise_scale > 0.0) out.x.bins[i] += noise_scale * rng.complex_normal();
  }
  return out;
}

DiffusionState ald_correct(const DiffusionState& state,
                           const ComplexSpectrogram& score, double sigma_tau,
                           double r, Rng& rng, bool add_noise) {
  if (!state.x.same_shape(score))
    throw std::runtime_error("ald_correct: shape mismatch");
  DiffusionState out = state;
  const double eps2 = 2.0 * r * r * sigma_tau * sigma_tau;
  const double noise_scale = add_noise ? 2.0 * r * sigma_tau : 0.0;
  for (size_t i = 0; i < out.x.bins.size(); ++i) {
    out.x.bins[i] += eps2 * score.bins[i];
    if (noise_scale > 0.0) out.x.bins[i] += noise_scale * rng.complex_normal();
  }
  return out;
}

ComplexSpectrogram pc_sample(const ScoreFn& score,
                             const ComplexSpectrogram& anchor,
                             const SdeConfig& sde, const SamplerConfig& cfg,
                             Rng& rng, CallCounter* counter) {
  cfg.validate();
  sde.validate();
  const int n_steps = cfg.n_steps;
  const double dtau = sde.t_max / n_steps;
  DiffusionState st = init_reverse_state(anchor, sde, rng);
  for (int n = n_steps; n >= 1; --n) {
    const double tau = sde.t_max * n / n_steps;
    st.tau = tau;  // pin the grid exactly (no accumulated subtraction error)
    const double sigma = kernel_std(tau, sde);
    if (cfg.corrector_active()) {
      for (int k = 0; k < cfg.corrector_steps; ++k) {
        const ComplexSpectrogram s = score(st.x, tau, sigma);
        if (counter) ++counter->score_calls;
        st = ald_correct(st, s, sigma, cfg.r, rng);
      }
    }
    const ComplexSpectrogram s = score(st.x, tau, sigma);
    if (counter) ++counter->score_calls;
    const bool add_noise = cfg.noise_on_final_step || n > 1;
    st = em_step(st, s, anchor, dtau, sde, rng, cfg.em_variant, add_noise);
    if (!all_finite(st.x))
      throw std::runtime_error("pc_sample: non-finite state after step n=" +
                               std::to_string(n) + " (tau=" +
                               std::to_string(tau) + ")");
  }
  st.tau = 0.0;
  return st.x;
}

// ----- Scalar toy chain -----
// Mirrors the spectrogram chain with real standard noise (plain unit
// variance) instead of complex noise; used by the distribution-recovery
// oracle tests.

double init_reverse_state_scalar(double anchor, const SdeConfig& cfg,
                                 Rng& rng) {
  return anchor + kernel_std(cfg.t_max, cfg) * rng.normal();
}

double em_step_scalar(double x, double tau, double score, double anchor,
                      double dtau, const SdeConfig& cfg, Rng& rng,
                      EmVariant variant, bool add_noise) {
  if (tau < dtau - 1e-12)
    throw std::runtime_error("em_step_scalar: step would cross tau = 0");
  const double g = diffusion_coeff(tau, cfg);
  double incr;
  if (variant == EmVariant::kReverseSde)
    incr = (cfg.gamma * (x - anchor) + g * g * score) * dtau;
  else
    incr = (cfg.gamma * (anchor - x) - score) * dtau;
  double out = x + incr;
  if (add_noise) out += g * std::sqrt(dtau) * rng.normal();
  return out;
}

double ald_correct_scalar(double x, double score, double sigma_tau, double r,
                          Rng& rng, bool add_noise) {
  double out = x + 2.0 * r * r * sigma_tau * sigma_tau * score;
  if (add_noise) out += 2.0 * r * sigma_tau * rng.normal();
  return out;
}

double pc_sample_scalar(const ScalarScoreFn& score, double anchor,
                        const SdeConfig& sde, const SamplerConfig& cfg,
                        Rng& rng, CallCounter* counter) {
  cfg.validate();
  const int n_steps = cfg.n_steps;
  const double dtau = sde.t_max / n_steps;
  double x = init_reverse_state_scalar(anchor, sde, rng);
  for (int n = n_steps; n >= 1; --n) {
    const double tau = sde.t_max * n / n_steps;
    const double sigma = kernel_std(tau, sde);
    if (cfg.corrector_active()) {
      for (int k = 0; k < cfg.corrector_steps; ++k) {
        const double s = score(x, tau, sigma);
        if (counter) ++counter->score_calls;
        x = ald_correct_scalar(x, s, sigma, cfg.r, rng);
      }
    }
    const double s = score(x, tau, sigma);
    if (counter) ++counter->score_calls;
    const bool add_noise = cfg.noise_on_final_step || n > 1;
    x = em_step_scalar(x, tau, s, anchor, dtau, sde, rng, cfg.em_variant,
                       add_noise);
    if (!std::isfinite(x))
      throw std::runtime_error(
          "pc_sample_scalar: non-finite state after step n=" +
          std::to_string(n));
  }
  return x;
}

}  // namespace storm
