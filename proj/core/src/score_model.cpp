#include "storm/score_model.hpp"

#include <stdexcept>

namespace storm {

int conditioning_plane_count(ConditioningMode mode) {
  switch (mode) {
    case ConditioningMode::kNoisy:
    case ConditioningMode::kPostDenoiser:
      return 1;
    case ConditioningMode::kBoth:
      return 2;
  }
  throw std::runtime_error("unknown conditioning mode");
}

std::string to_string(ConditioningMode mode) {
  switch (mode) {
    case ConditioningMode::kNoisy:
      return "noisy";
    case ConditioningMode::kPostDenoiser:
      return "postdenoiser";
    case ConditioningMode::kBoth:
      return "both";
  }
  throw std::runtime_error("unknown conditioning mode");
}

ConditioningMode conditioning_mode_from_string(const std::string& s) {
  if (s == "noisy") return ConditioningMode::kNoisy;
  if (s == "postdenoiser") return ConditioningMode::kPostDenoiser;
  if (s == "both") return ConditioningMode::kBoth;
  throw std::runtime_error("unknown conditioning mode: '" + s +
                           "' (expected noisy|postdenoiser|both)");
}

ScoreModel::ScoreModel(const ScoreNetConfig& cfg, uint64_t init_seed)
    : cfg_(cfg), net_(cfg.unet_config()) {
  Rng rng(init_seed);
  net_.init_params(rng);
}

ComplexSpectrogram ScoreModel::score(
    const ComplexSpectrogram& x_tau,
    const std::vector<const ComplexSpectrogram*>& conditioning,
    double sigma_tau) {
  const int expected = conditioning_plane_count(cfg_.conditioning);
  if (static_cast<int>(conditioning.size()) != expected)
    throw std::runtime_error(
        "score: expected " + std::to_string(expected) +
        " conditioning planes for mode " + to_string(cfg_.conditioning) +
        ", got " + std::to_string(conditioning.size()));
  if (sigma_tau <= 0.0) throw std::runtime_error("score: sigma <= 0");

  std::vector<const ComplexSpectrogram*> planes;
  planes.reserve(1 + conditioning.size());
  planes.push_back(&x_tau);
  for (const auto* c : conditioning) planes.push_back(c);
  pack_planes(planes, packed_);

  const nn::FeatureMap<float>& raw =
      net_.forward(packed_, static_cast<float>(std::log(sigma_tau)));

  ComplexSpectrogram out(x_tau.freq_bins, x_tau.frames);
  out.warped = x_tau.warped;
  out.norm_factor = x_tau.norm_factor;
  unpack_plane(raw, 0, out);
  const double inv_sigma = 1.0 / sigma_tau;
  for (auto& b : out.bins) b *= inv_sigma;
  return out;
}

double gaussian_marginal_variance(double tau, double prior_std,
                                  const SdeConfig& cfg) {
  const double w = kernel_mean_weight(tau, cfg);
  return w * w * prior_std * prior_std + kernel_var(tau, cfg);
}

ComplexSpectrogram analytic_gaussian_score(
    const ComplexSpectrogram& x_tau, double tau, std::complex<double> prior_mean,
    double prior_std, const ComplexSpectrogram& y, const SdeConfig& cfg) {
  if (!x_tau.same_shape(y))
    throw std::runtime_error("analytic_gaussian_score: shape mismatch");
  const double w = kernel_mean_weight(tau, cfg);
  const double var = gaussian_marginal_variance(tau, prior_std, cfg);
  if (var <= 0.0)
    throw std::runtime_error("analytic_gaussian_score: zero marginal variance");
  ComplexSpectrogram out(x_tau.freq_bins, x_tau.frames);
  out.warped = x_tau.warped;
  out.norm_factor = x_tau.norm_factor;
  for (size_t i = 0; i < x_tau.bins.size(); ++i) {
    const std::complex<double> mean = w * prior_mean + (1.0 - w) * y.bins[i];
    out.bins[i] = -(x_tau.bins[i] - mean) / var;
  }
  return out;
}

}  // namespace storm
