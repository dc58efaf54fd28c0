#include "storm/sde.hpp"

#include <cmath>
#include <stdexcept>

namespace storm {

void SdeConfig::validate() const {
  if (!(gamma > 0.0))
    throw std::runtime_error(
        "sde: gamma must be > 0 (degenerate stiffness breaks the variance "
        "closed form's derivation and the drift)");
  if (!(sigma_min > 0.0))
    throw std::runtime_error("sde: sigma_min must be > 0");
  if (!(sigma_max > sigma_min))
    throw std::runtime_error("sde: sigma_max must exceed sigma_min");
  if (!(t_max > 0.0)) throw std::runtime_error("sde: t_max must be > 0");
  if (!(t_eps > 0.0 && t_eps < t_max))
    throw std::runtime_error("sde: t_eps must lie in (0, t_max)");
}

KvConfig SdeConfig::to_kv() const {
  KvConfig kv;
  kv.set_double("sde.gamma", gamma);
  kv.set_double("sde.sigma_min", sigma_min);
  kv.set_double("sde.sigma_max", sigma_max);
  kv.set_double("sde.t_max", t_max);
  kv.set_double("sde.t_eps", t_eps);
  return kv;
}

SdeConfig SdeConfig::from_kv(const KvConfig& kv) {
  SdeConfig cfg;
  cfg.gamma = kv.get_double("sde.gamma");
  cfg.sigma_min = kv.get_double("sde.sigma_min");
  cfg.sigma_max = kv.get_double("sde.sigma_max");
  cfg.t_max = kv.get_double("sde.t_max");
  cfg.t_eps = kv.get_double("sde.t_eps");
  cfg.validate();
  return cfg;
}

double diffusion_coeff(double tau, const SdeConfig& cfg) {
  const double k = std::log(cfg.sigma_max / cfg.sigma_min);
  return cfg.sigma_min * std::pow(cfg.sigma_max / cfg.sigma_min, tau) *
         std::sqrt(2.0 * k);
}

double kernel_mean_weight(double tau, const SdeConfig& cfg) {
  return std::exp(-cfg.gamma * tau);
}

double kernel_var(double tau, const SdeConfig& cfg) {
  const double ratio = cfg.sigma_max / cfg.sigma_min;
  const double k = std::log(ratio);
  return cfg.sigma_min * cfg.sigma_min *
         (std::pow(ratio, 2.0 * tau) - std::exp(-2.0 * cfg.gamma * tau)) * k /
         (cfg.gamma + k);
}

double kernel_std(double tau, const SdeConfig& cfg) {
  const double v = kernel_var(tau, cfg);
  return v > 0.0 ? std::sqrt(v) : 0.0;
}

double terminal_mean_residual(const SdeConfig& cfg) {
  return std::exp(-cfg.gamma * cfg.t_max);
}

namespace {

void check_same_shape(const ComplexSpectrogram& a, const ComplexSpectrogram& b,
                      const char* who) {
  if (!a.same_shape(b))
    throw std::runtime_error(std::string(who) + ": shape mismatch");
}

}  // namespace

ComplexSpectrogram drift(const ComplexSpectrogram& x,
                         const ComplexSpectrogram& y_cond,
                         const SdeConfig& cfg) {
  check_same_shape(x, y_cond, "drift");
  ComplexSpectrogram out = x;
  for (size_t i = 0; i < out.bins.size(); ++i)
    out.bins[i] = cfg.gamma * (y_cond.bins[i] - x.bins[i]);
  return out;
}

ComplexSpectrogram kernel_mean(const ComplexSpectrogram& x0,
                               const ComplexSpectrogram& y, double tau,
                               const SdeConfig& cfg) {
  check_same_shape(x0, y, "kernel_mean");
  const double w = kernel_mean_weight(tau, cfg);
  ComplexSpectrogram out = x0;
  for (size_t i = 0; i < out.bins.size(); ++i)
    out.bins[i] = w * x0.bins[i] + (1.0 - w) * y.bins[i];
  return out;
}

DiffusionState sample_perturbed(const ComplexSpectrogram& x0,
                                const ComplexSpectrogram& y, double tau,
                                const SdeConfig& cfg, Rng& rng) {
  check_same_shape(x0, y, "sample_perturbed");
  DiffusionState st;
  st.x = kernel_mean(x0, y, tau, cfg);
  st.tau = tau;
  const double sigma = kernel_std(tau, cfg);
  if (sigma > 0.0)
    for (auto& c : st.x.bins) c += sigma * rng.complex_normal();
  return st;
}

double drift_scalar(double x, double y, const SdeConfig& cfg) {
  return cfg.gamma * (y - x);
}

double sample_perturbed_scalar(double x0, double y, double tau,
                               const SdeConfig& cfg, Rng& rng) {
  const double w = kernel_mean_weight(tau, cfg);
  return w * x0 + (1.0 - w) * y + kernel_std(tau, cfg) * rng.normal();
}

std::vector<ScalarPathPoint> forward_simulate(double x0, double y, int n_steps,
                                              const SdeConfig& cfg, Rng& rng,
                                              bool force_zero_noise) {
  if (n_steps < 100)
    throw std::runtime_error(
        "forward_simulate: need >= 100 steps for a meaningful oracle path");
  const double dt = cfg.t_max / n_steps;
  std::vector<ScalarPathPoint> path;
  path.reserve(n_steps + 1);
  double x = x0;
  path.push_back({0.0, x});
  for (int n = 0; n < n_steps; ++n) {
    const double tau = n * dt;
    const double g = force_zero_noise ? 0.0 : diffusion_coeff(tau, cfg);
    x += drift_scalar(x, y, cfg) * dt + g * std::sqrt(dt) * rng.normal();
    path.push_back({(n + 1) * dt, x});
  }
  return path;
}

}  // namespace storm
