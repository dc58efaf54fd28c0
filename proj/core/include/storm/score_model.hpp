#pragma once

#include <complex>
#include <memory>
#include <string>
#include <vector>

#include "storm/nn.hpp"
#include "storm/rng.hpp"
#include "storm/sde.hpp"
#include "storm/spectral.hpp"

namespace storm {

// Which spectrograms are stacked as conditioning channels for the score
// network, alongside the diffusion state itself.
enum class ConditioningMode {
  kNoisy,         // [y]
  kPostDenoiser,  // [D(y)]
  kBoth,          // [y, D(y)]
};

int conditioning_plane_count(ConditioningMode mode);
std::string to_string(ConditioningMode mode);
ConditioningMode conditioning_mode_from_string(const std::string& s);

// ----- Spectrogram <-> network-tensor packing -----
//
// Spectrograms are packed frequency-major into the spatial grid (rows =
// frequency bins, columns = frames) with interleaved channels: channel 2p is
// the real part and 2p+1 the imaginary part of plane p. Spatial dims are
// zero-padded up to multiples of 4 (the network pools twice); unpacking
// reads only the valid region.

inline int pad_to4(int n) { return (n + 3) / 4 * 4; }

template <class S>
void pack_planes(const std::vector<const ComplexSpectrogram*>& planes,
                 nn::FeatureMap<S>& out) {
  if (planes.empty()) throw std::runtime_error("pack_planes: no planes");
  const int kf = planes[0]->freq_bins;
  const int tf = planes[0]->frames;
  for (const auto* p : planes)
    if (!p->same_shape(*planes[0]))
      throw std::runtime_error("pack_planes: plane shape mismatch");
  const int np = static_cast<int>(planes.size());
  out.resize(pad_to4(kf), pad_to4(tf), 2 * np);
  for (int k = 0; k < kf; ++k)
    for (int t = 0; t < tf; ++t) {
      S* dst = out.at(k, t);
      for (int p = 0; p < np; ++p) {
        const std::complex<double>& c = planes[p]->at(k, t);
        dst[2 * p] = static_cast<S>(c.real());
        dst[2 * p + 1] = static_cast<S>(c.imag());
      }
    }
}

// Reads plane `plane` of `m` into `out`, which must already carry the target
// shape (freq_bins x frames within m's padded extent) and metadata.
template <class S>
void unpack_plane(const nn::FeatureMap<S>& m, int plane,
                  ComplexSpectrogram& out) {
  if (2 * (plane + 1) > m.c)
    throw std::runtime_error("unpack_plane: plane out of range");
  if (out.freq_bins > m.h || out.frames > m.w)
    throw std::runtime_error("unpack_plane: target larger than tensor");
  for (int k = 0; k < out.freq_bins; ++k)
    for (int t = 0; t < out.frames; ++t) {
      const S* src = m.at(k, t);
      out.at(k, t) = std::complex<double>(
          static_cast<double>(src[2 * plane]),
          static_cast<double>(src[2 * plane + 1]));
    }
}

// ----- Trainable score estimator -----

struct ScoreNetConfig {
  int base_channels = 8;
  int emb_dim = 16;
  ConditioningMode conditioning = ConditioningMode::kBoth;

  int input_channels() const {
    return 2 * (1 + conditioning_plane_count(conditioning));
  }
  nn::UNetConfig unet_config() const {
    nn::UNetConfig u;
    u.in_channels = input_channels();
    u.out_channels = 2;
    u.base_channels = base_channels;
    u.emb_dim = emb_dim;
    u.use_film = true;
    u.residual_head = false;
    return u;
  }
};

// Wraps the network as a score estimator on complex spectrograms. The
// network regresses the sigma-scaled score (its raw output learns to match
// -z), and score() divides by sigma so callers always receive the actual
// score of the perturbed marginal. The noise level enters the network as
// log(sigma) through the feature-modulation pathway.
class ScoreModel {
 public:
  ScoreModel(const ScoreNetConfig& cfg, uint64_t init_seed);

  // conditioning order must match the mode: Noisy -> {y},
  // PostDenoiser -> {D(y)}, Both -> {y, D(y)}.
  ComplexSpectrogram score(const ComplexSpectrogram& x_tau,
                           const std::vector<const ComplexSpectrogram*>& conditioning,
                           double sigma_tau);

  const ScoreNetConfig& config() const { return cfg_; }
  nn::UNet<float>& net() { return net_; }
  const nn::UNet<float>& net() const { return net_; }
  int parameter_count() const { return net_.parameter_count(); }

  // Parameter vector view (used by the trainer, EMA tracking, checkpoints).
  std::vector<float>& parameters() { return net_.store().values; }
  const std::vector<float>& parameters() const { return net_.store().values; }

 private:
  ScoreNetConfig cfg_;
  nn::UNet<float> net_;
  nn::FeatureMap<float> packed_;  // reused input buffer
};

// ----- Denoising score matching objective -----
//
// Per-item objective on packed tensors. The network's raw output r estimates
// the sigma-scaled score, so s = r/sigma and
//   item loss = (1/d) * sum_bins |r + z|^2 / sigma^2,
// d = number of complex bins, z the sampled perturbation noise (unit total
// per-bin variance). This equals the mean-over-bins of |s + z/sigma|^2.
// Expected value for r == 0 is 1/sigma^2; the unreduced norm has mean d.

template <class S>
struct DsmItemResult {
  double loss = 0.0;
  // dL/d(packed input), scaled by grad_scale; null unless with_grad.
  // Valid until the next forward/backward on the same net.
  const nn::FeatureMap<S>* d_input = nullptr;
};

// Loss value given an arbitrary raw (sigma-scaled score) output; lets tests
// evaluate the objective without a network (e.g. the cheating model r = -z).
template <class S>
double dsm_loss_from_raw(const nn::FeatureMap<S>& raw,
                         const nn::FeatureMap<S>& noise, double sigma) {
  if (raw.h != noise.h || raw.w != noise.w || raw.c != 2 || noise.c != 2)
    throw std::runtime_error("dsm_loss_from_raw: shape mismatch");
  const double d = static_cast<double>(raw.h) * raw.w;
  double acc = 0.0;
  for (int y = 0; y < raw.h; ++y) {
    const S* r = raw.at(y, 0);
    const S* z = noise.at(y, 0);
    for (int i = 0; i < raw.w * 2; ++i) {
      const double diff = static_cast<double>(r[i]) + static_cast<double>(z[i]);
      acc += diff * diff;
    }
  }
  return acc / (d * sigma * sigma);
}

// Runs the network on the packed input (state + conditioning channels) and
// evaluates the objective against the given noise. When with_grad is set,
// parameter gradients (scaled by grad_scale, for gradient accumulation
// across a batch) are accumulated into the net's store and d_input is
// returned so the caller can route gradients into the kernel anchor and the
// conditioning planes.
template <class S>
DsmItemResult<S> dsm_item_loss(nn::UNet<S>& net,
                               const nn::FeatureMap<S>& input,
                               const nn::FeatureMap<S>& noise, double sigma,
                               bool with_grad, double grad_scale = 1.0) {
  if (sigma <= 0.0) throw std::runtime_error("dsm_item_loss: sigma <= 0");
  const nn::FeatureMap<S>& raw =
      net.forward(input, static_cast<S>(std::log(sigma)));
  DsmItemResult<S> res;
  res.loss = dsm_loss_from_raw(raw, noise, sigma);
  if (with_grad) {
    const double d = static_cast<double>(raw.h) * raw.w;
    const double scale = grad_scale * 2.0 / (d * sigma * sigma);
    nn::FeatureMap<S> dout(raw.h, raw.w, 2);
    for (int y = 0; y < raw.h; ++y) {
      const S* r = raw.at(y, 0);
      const S* z = noise.at(y, 0);
      S* g = dout.at(y, 0);
      for (int i = 0; i < raw.w * 2; ++i)
        g[i] = static_cast<S>(scale * (static_cast<double>(r[i]) +
                                       static_cast<double>(z[i])));
    }
    res.d_input = &net.backward(dout);
  }
  return res;
}

// ----- Analytic score oracle (tests only) -----
//
// Exact score of the perturbed marginal when x0 is drawn from an isotropic
// Gaussian prior N(prior_mean, prior_std^2 per complex bin):
//   p_tau(x | y) = N(e^{-gt} m0 + (1 - e^{-gt}) y,  e^{-2gt} s0^2 + sigma^2(t))
//   score = -(x - marginal_mean) / marginal_var.
// prior_std = 0 degenerates to the kernel score around mu(x0 = m0).

double gaussian_marginal_variance(double tau, double prior_std,
                                  const SdeConfig& cfg);

ComplexSpectrogram analytic_gaussian_score(
    const ComplexSpectrogram& x_tau, double tau, std::complex<double> prior_mean,
    double prior_std, const ComplexSpectrogram& y, const SdeConfig& cfg);

}  // namespace storm
