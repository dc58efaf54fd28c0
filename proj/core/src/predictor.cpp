#include "storm/predictor.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace storm {

ComplexSpectrogram IdentityPredictor::predict(const ComplexSpectrogram& y) {
  return y;
}

PredictorNet::PredictorNet(const PredictorNetConfig& cfg, uint64_t init_seed)
    : cfg_(cfg), net_(cfg.unet_config()) {
  Rng rng(init_seed);
  net_.init_params(rng);
}

ComplexSpectrogram PredictorNet::predict(const ComplexSpectrogram& y) {
  std::vector<const ComplexSpectrogram*> planes{&y};
  pack_planes(planes, packed_);
  const nn::FeatureMap<float>& out = net_.forward(packed_, 0.0f);
  ComplexSpectrogram result(y.freq_bins, y.frames);
  result.warped = y.warped;
  result.norm_factor = y.norm_factor;
  unpack_plane(out, 0, result);
  for (size_t i = 0; i < result.bins.size(); ++i) {
    if (!std::isfinite(result.bins[i].real()) ||
        !std::isfinite(result.bins[i].imag()))
      throw std::runtime_error(
          "predictor produced a non-finite value at flat bin index " +
          std::to_string(i) + " (input finite, parameters likely diverged)");
  }
  return result;
}

SpectralGatePredictor::SpectralGatePredictor(const SpectralGateConfig& cfg)
    : cfg_(cfg) {
  if (cfg_.gain_floor < 0.0 || cfg_.gain_floor > 1.0)
    throw std::runtime_error("spectral gate: gain_floor outside [0, 1]");
  if (cfg_.quantile <= 0.0 || cfg_.quantile >= 1.0)
    throw std::runtime_error("spectral gate: quantile outside (0, 1)");
}

ComplexSpectrogram SpectralGatePredictor::predict(const ComplexSpectrogram& y) {
  if (y.frames < 1) throw std::runtime_error("spectral gate: empty input");
  ComplexSpectrogram out = y;
  // Calibration: for complex-Gaussian noise the per-bin power is exponential
  // with mean N, whose q-quantile is -ln(1-q) * N.
  const double calib = -std::log(1.0 - cfg_.quantile);
  std::vector<double> powers(y.frames);
  for (int k = 0; k < y.freq_bins; ++k) {
    for (int t = 0; t < y.frames; ++t) powers[t] = std::norm(y.at(k, t));
    std::vector<double> sorted = powers;
    std::sort(sorted.begin(), sorted.end());
    const int qi = static_cast<int>(cfg_.quantile * (y.frames - 1));
    const double noise_floor = sorted[qi] / calib;
    for (int t = 0; t < y.frames; ++t) {
      const double p = powers[t];
      double gain = cfg_.gain_floor;
      if (p > 0.0)
        gain = std::clamp(1.0 - cfg_.oversubtract * noise_floor / p,
                          cfg_.gain_floor, 1.0);
      out.at(k, t) *= gain;
    }
  }
  return out;
}

double supervised_loss_value(const ComplexSpectrogram& d_out,
                             const ComplexSpectrogram& x0) {
  if (!d_out.same_shape(x0))
    throw std::runtime_error("supervised loss: shape mismatch");
  double acc = 0.0;
  for (size_t i = 0; i < d_out.bins.size(); ++i)
    acc += std::norm(d_out.bins[i] - x0.bins[i]);
  return acc / static_cast<double>(d_out.bins.size());
}

}  // namespace storm
