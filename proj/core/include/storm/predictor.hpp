#pragma once

#include <memory>
#include <string>
#include <vector>

#include "storm/nn.hpp"
#include "storm/score_model.hpp"
#include "storm/spectral.hpp"

namespace storm {

// Initial-predictor contract: one-shot predictive estimate D(y) of the clean
// spectrogram, operating in the warped+normalized domain. Implementations
// must preserve shape and produce finite output.
class Predictor {
 public:
  virtual ~Predictor() = default;
  virtual ComplexSpectrogram predict(const ComplexSpectrogram& y) = 0;
  virtual std::string name() const = 0;
};

// D(y) == y. Used by the pure-generative mode equivalence (regeneration with
// an identity predictor must match pure generation bitwise) and in tests.
class IdentityPredictor : public Predictor {
 public:
  ComplexSpectrogram predict(const ComplexSpectrogram& y) override;
  std::string name() const override { return "identity"; }
};

// Trainable predictive network: same backbone as the score net with the
// noise-conditioning pathway removed and a residual head, D(y) = y + f(y).
struct PredictorNetConfig {
  int base_channels = 8;

  nn::UNetConfig unet_config() const {
    nn::UNetConfig u;
    u.in_channels = 2;
    u.out_channels = 2;
    u.base_channels = base_channels;
    u.use_film = false;
    u.residual_head = true;
    return u;
  }
};

class PredictorNet : public Predictor {
 public:
  PredictorNet(const PredictorNetConfig& cfg, uint64_t init_seed);

  ComplexSpectrogram predict(const ComplexSpectrogram& y) override;
  std::string name() const override { return "predictor-net"; }

  const PredictorNetConfig& config() const { return cfg_; }
  nn::UNet<float>& net() { return net_; }
  const nn::UNet<float>& net() const { return net_; }
  int parameter_count() const { return net_.parameter_count(); }
  std::vector<float>& parameters() { return net_.store().values; }
  const std::vector<float>& parameters() const { return net_.store().values; }

 private:
  PredictorNetConfig cfg_;
  nn::UNet<float> net_;
  nn::FeatureMap<float> packed_;
};

// Non-learned magnitude-gating baseline: estimates a per-frequency noise
// floor from a low quantile of |Y|^2 across frames, then applies a
// Wiener-style per-bin gain clamped to [gain_floor, 1]. Phase is preserved
// (the gain is real and nonnegative). Stands in for a mismatched predictor
// so the generative stage can run before (or without) any training.
struct SpectralGateConfig {
  double gain_floor = 0.1;
  double oversubtract = 1.5;  // noise-floor multiplier before subtraction
  double quantile = 0.2;      // power quantile used as the floor estimate
};

class SpectralGatePredictor : public Predictor {
 public:
  explicit SpectralGatePredictor(const SpectralGateConfig& cfg = {});

  ComplexSpectrogram predict(const ComplexSpectrogram& y) override;
  std::string name() const override { return "spectral-gate"; }
  const SpectralGateConfig& config() const { return cfg_; }

 private:
  SpectralGateConfig cfg_;
};

// ----- Supervised objective -----
//
// Mean squared complex error between the predictor output and the clean
// target, mean-reduced over the d complex bins (same reduction as the score
// matching objective so the two compose additively):
//   item loss = (1/d) * sum_bins |D - x0|^2.
// When d_output is given, grad_scale * d(item loss)/d(D) is ACCUMULATED into
// it (the caller combines this with gradients arriving through the kernel
// anchor and conditioning channels before backpropagating the predictor).
template <class S>
double sup_item_loss(const nn::FeatureMap<S>& d_out,
                     const nn::FeatureMap<S>& x0, double grad_scale = 1.0,
                     nn::FeatureMap<S>* d_output = nullptr) {
  if (!d_out.same_shape(x0))
    throw std::runtime_error("sup_item_loss: shape mismatch");
  if (d_out.c != 2)
    throw std::runtime_error("sup_item_loss: expected a single complex plane");
  const double d = static_cast<double>(d_out.h) * d_out.w;
  double acc = 0.0;
  for (int y = 0; y < d_out.h; ++y) {
    const S* a = d_out.at(y, 0);
    const S* b = x0.at(y, 0);
    for (int i = 0; i < d_out.w * 2; ++i) {
      const double diff = static_cast<double>(a[i]) - static_cast<double>(b[i]);
      acc += diff * diff;
    }
  }
  if (d_output) {
    if (!d_output->same_shape(d_out))
      throw std::runtime_error("sup_item_loss: gradient buffer shape mismatch");
    const double scale = grad_scale * 2.0 / d;
    for (int y = 0; y < d_out.h; ++y) {
      const S* a = d_out.at(y, 0);
      const S* b = x0.at(y, 0);
      S* g = d_output->at(y, 0);
      for (int i = 0; i < d_out.w * 2; ++i)
        g[i] += static_cast<S>(scale * (static_cast<double>(a[i]) -
                                        static_cast<double>(b[i])));
    }
  }
  return acc / d;
}

// Spectrogram-level convenience (no gradients): (1/d) sum |D(y) - x0|^2.
double supervised_loss_value(const ComplexSpectrogram& d_out,
                             const ComplexSpectrogram& x0);

}  // namespace storm
