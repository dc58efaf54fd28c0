#pragma once

#include <string>
#include <vector>

#include "storm/kvconfig.hpp"
#include "storm/rng.hpp"
#include "storm/spectral.hpp"

namespace storm {

// Ornstein-Uhlenbeck variance-exploding forward process
//
//   dx = gamma*(y - x) dtau + g(tau) dw,
//   g(tau) = sigma_min * (sigma_max/sigma_min)^tau * sqrt(2*log(sigma_max/sigma_min)),
//
// whose perturbation kernel has the closed-form moments
//
//   mean(x0, y, tau) = exp(-gamma*tau)*x0 + (1 - exp(-gamma*tau))*y
//   var(tau) = sigma_min^2 * ((sigma_max/sigma_min)^(2*tau) - exp(-2*gamma*tau))
//              * log(sigma_max/sigma_min) / (gamma + log(sigma_max/sigma_min)).
//
// The variance is the per-bin TOTAL variance of circularly-symmetric complex
// noise (real and imaginary parts carry half each); in the real scalar toy
// mode it is the plain variance. That convention must stay consistent across
// the kernel, the score-matching loss, and the samplers — everything here and
// in score_model/sampler assumes it.
struct SdeConfig {
  double gamma = 1.5;
  double sigma_min = 0.05;
  double sigma_max = 0.5;
  double t_max = 1.0;
  double t_eps = 0.03;

  // Throws std::runtime_error on violated invariants (includes the gamma > 0
  // guard for the variance denominator).
  void validate() const;

  KvConfig to_kv() const;
  static SdeConfig from_kv(const KvConfig& kv);
};

double diffusion_coeff(double tau, const SdeConfig& cfg);
// Weight of x0 in the kernel mean: exp(-gamma*tau).
double kernel_mean_weight(double tau, const SdeConfig& cfg);
double kernel_var(double tau, const SdeConfig& cfg);
double kernel_std(double tau, const SdeConfig& cfg);
// Residual x0-weight at final time T, exp(-gamma*T): the terminal mean cannot
// reach the corrupted signal in finite time; exposed as a diagnostic only.
double terminal_mean_residual(const SdeConfig& cfg);

// ----- Complex-spectrogram operations -----

struct DiffusionState {
  ComplexSpectrogram x;
  double tau = 0.0;
};

ComplexSpectrogram drift(const ComplexSpectrogram& x,
                         const ComplexSpectrogram& y_cond,
                         const SdeConfig& cfg);
ComplexSpectrogram kernel_mean(const ComplexSpectrogram& x0,
                               const ComplexSpectrogram& y, double tau,
                               const SdeConfig& cfg);
// x_tau = kernel_mean + kernel_std * z, z per-bin circularly-symmetric
// complex standard normal (unit total variance).
DiffusionState sample_perturbed(const ComplexSpectrogram& x0,
                                const ComplexSpectrogram& y, double tau,
                                const SdeConfig& cfg, Rng& rng);

// ----- Real scalar toy mode (oracle tests) -----

double drift_scalar(double x, double y, const SdeConfig& cfg);
double sample_perturbed_scalar(double x0, double y, double tau,
                               const SdeConfig& cfg, Rng& rng);

struct ScalarPathPoint {
  double tau = 0.0;
  double x = 0.0;
};

// Euler-Maruyama forward simulation of the scalar toy process. Test oracle
// only: production always uses the closed-form kernel. force_zero_noise
// reduces it to the mean ODE.
std::vector<ScalarPathPoint> forward_simulate(double x0, double y, int n_steps,
                                              const SdeConfig& cfg, Rng& rng,
                                              bool force_zero_noise = false);

}  // namespace storm
