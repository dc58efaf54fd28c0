#include "storm/spectral.hpp"

#include <fftw3.h>

#include <cmath>
#include <map>
#include <memory>
#include <mutex>
#include <stdexcept>
#include <string>

namespace storm {

namespace {

// Square-root of the periodic Hann window is the sine window. Returned
// already scaled to unit energy (sum of squares == 1) so that analysis is
// energy-normalized and synthesis can use the identical taper.
std::vector<double> unit_energy_sine_window(int len) {
  std::vector<double> w(len);
  double energy = 0.0;
  for (int n = 0; n < len; ++n) {
    w[n] = std::sin(M_PI * n / len);
    energy += w[n] * w[n];
  }
  const double scale = 1.0 / std::sqrt(energy);  // energy == len/2 exactly
  for (auto& v : w) v *= scale;
  return w;
}

// Reflect (bounce, no edge repeat) index into [0, len).
int reflect_index(long long i, int len) {
  if (len == 1) return 0;
  const long long period = 2LL * (len - 1);
  long long m = i % period;
  if (m < 0) m += period;
  if (m >= len) m = period - m;
  return static_cast<int>(m);
}

// FFTW plans are not thread-safe to create but are safe to execute on
// distinct buffers via the new-array interface, so plans are cached behind a
// mutex and executions use per-call fftw_malloc'd buffers (which guarantees
// the alignment the cached plan was created with). FFTW_ESTIMATE keeps plan
// selection deterministic across runs; FFTW_MEASURE picks plans by wall-clock
// timing and could make outputs differ between reruns at the last ulp.
class FftPlans {
 public:
  static FftPlans& instance() {
    static FftPlans p;
    return p;
  }

  void forward(int n, const double* in, std::complex<double>* out) {
    fftw_plan plan = plan_r2c(n);
    double* buf_in = fftw_alloc_real(n);
    fftw_complex* buf_out = fftw_alloc_complex(n / 2 + 1);
    for (int i = 0; i < n; ++i) buf_in[i] = in[i];
    fftw_execute_dft_r2c(plan, buf_in, buf_out);
    for (int i = 0; i < n / 2 + 1; ++i)
      out[i] = {buf_out[i][0], buf_out[i][1]};
    fftw_free(buf_in);
    fftw_free(buf_out);
  }

  void backward(int n, const std::complex<double>* in, double* out) {
    fftw_plan plan = plan_c2r(n);
    fftw_complex* buf_in = fftw_alloc_complex(n / 2 + 1);
    double* buf_out = fftw_alloc_real(n);
    for (int i = 0; i < n / 2 + 1; ++i) {
      buf_in[i][0] = in[i].real();
      buf_in[i][1] = in[i].imag();
    }
    fftw_execute_dft_c2r(plan, buf_in, buf_out);
    for (int i = 0; i < n; ++i) out[i] = buf_out[i];
    fftw_free(buf_in);
    fftw_free(buf_out);
  }

 private:
  fftw_plan plan_r2c(int n) {
    std::lock_guard<std::mutex> lock(mu_);
    auto it = r2c_.find(n);
    if (it != r2c_.end()) return it->second;
    double* in = fftw_alloc_real(n);
    fftw_complex* out = fftw_alloc_complex(n / 2 + 1);
    fftw_plan p = fftw_plan_dft_r2c_1d(n, in, out, FFTW_ESTIMATE);
    fftw_free(in);
    fftw_free(out);
    r2c_[n] = p;
    return p;
  }

  fftw_plan plan_c2r(int n) {
    std::lock_guard<std::mutex> lock(mu_);
    auto it = c2r_.find(n);
    if (it != c2r_.end()) return it->second;
    fftw_complex* in = fftw_alloc_complex(n / 2 + 1);
    double* out = fftw_alloc_real(n);
    fftw_plan p = fftw_plan_dft_c2r_1d(n, in, out, FFTW_ESTIMATE);
    fftw_free(in);
    fftw_free(out);
    c2r_[n] = p;
    return p;
  }

  std::mutex mu_;
  std::map<int, fftw_plan> r2c_;
  std::map<int, fftw_plan> c2r_;
};

}  // namespace

ComplexSpectrogram stft(const Waveform& w, const StftConfig& cfg) {
  const int len = static_cast<int>(w.samples.size());
  if (len < 2) throw std::runtime_error("stft: need at least 2 samples");
  const int L = cfg.window_len;
  const int half = L / 2;
  const int frames = cfg.num_frames(len);
  const std::vector<double> win = unit_energy_sine_window(L);

  ComplexSpectrogram s(cfg.freq_bins(), frames);
  std::vector<double> frame(L);
  for (int m = 0; m < frames; ++m) {
    const long long center = static_cast<long long>(m) * cfg.hop;
    for (int n = 0; n < L; ++n) {
      const int src = reflect_index(center - half + n, len);
      frame[n] = w.samples[src] * win[n];
    }
    FftPlans::instance().forward(L, frame.data(), &s.at(0, m));
  }
  return s;
}

Waveform istft(const ComplexSpectrogram& s, const StftConfig& cfg,
               int out_len) {
  if (s.warped)
    throw std::runtime_error("istft: input is warped; remove warping first");
  if (s.freq_bins != cfg.freq_bins())
    throw std::runtime_error("istft: frequency bin count does not match config");
  const int L = cfg.window_len;
  const int half = L / 2;
  const int frames = s.frames;
  const int max_len = (frames - 1) * cfg.hop + half + 1;
  if (out_len < 0 || out_len > max_len)
    throw std::runtime_error(
        "istft: requested " + std::to_string(out_len) +
        " samples but this spectrogram can reconstruct at most " +
        std::to_string(max_len));
  const std::vector<double> win = unit_energy_sine_window(L);

  // Overlap-add in padded coordinates (padded index = original + half), with
  // per-sample window-sum normalization. The 510/128 window/hop pair is only
  // approximately constant-overlap-add (~0.13% ripple), so normalizing by the
  // actual accumulated window energy is what makes the round trip exact.
  const int padded = (frames - 1) * cfg.hop + L;
  std::vector<double> acc(padded, 0.0);
  std::vector<double> wsum(padded, 0.0);
  std::vector<double> time(L);
  const double inv_fft = 1.0 / L;  // FFTW's c2r transform is unnormalized
  for (int m = 0; m < frames; ++m) {
    FftPlans::instance().backward(L, &s.at(0, m), time.data());
    const int base = m * cfg.hop;
    for (int n = 0; n < L; ++n) {
      acc[base + n] += time[n] * inv_fft * win[n];
      wsum[base + n] += win[n] * win[n];
    }
  }

  Waveform w;
  w.sample_rate = kPipelineSampleRate;
  w.samples.resize(out_len);
  for (int j = 0; j < out_len; ++j) {
    const int i = j + half;
    if (wsum[i] < 1e-12)
      throw std::runtime_error("istft: window sum vanishes at sample " +
                               std::to_string(j));
    w.samples[j] = acc[i] / wsum[i];
  }
  return w;
}

ComplexSpectrogram apply_warping(const ComplexSpectrogram& s) {
  if (s.warped) throw std::runtime_error("apply_warping: already warped");
  ComplexSpectrogram out = s;
  for (auto& c : out.bins) {
    const double mag = std::abs(c);
    c = mag > 0.0 ? c / std::sqrt(mag) : std::complex<double>(0.0, 0.0);
  }
  out.warped = true;
  return out;
}

ComplexSpectrogram remove_warping(const ComplexSpectrogram& s) {
  if (!s.warped) throw std::runtime_error("remove_warping: input is not warped");
  ComplexSpectrogram out = s;
  for (auto& c : out.bins) c *= std::abs(c);
  out.warped = false;
  return out;
}

NormalizedPair normalize(const ComplexSpectrogram& clean,
                         const ComplexSpectrogram& noisy,
                         double noisy_waveform_peak) {
  if (!clean.same_shape(noisy))
    throw std::runtime_error("normalize: clean/noisy shape mismatch");
  if (!(noisy_waveform_peak > 0.0))
    throw std::runtime_error(
        "normalize: noisy utterance peak must be positive (all-zero input?)");
  NormalizedPair p{clean, noisy, noisy_waveform_peak};
  const double inv = 1.0 / noisy_waveform_peak;
  for (auto& c : p.clean.bins) c *= inv;
  for (auto& c : p.noisy.bins) c *= inv;
  p.clean.norm_factor = clean.norm_factor * noisy_waveform_peak;
  p.noisy.norm_factor = noisy.norm_factor * noisy_waveform_peak;
  return p;
}

ComplexSpectrogram normalize_single(const ComplexSpectrogram& noisy,
                                    double noisy_waveform_peak) {
  if (!(noisy_waveform_peak > 0.0))
    throw std::runtime_error(
        "normalize: noisy utterance peak must be positive (all-zero input?)");
  ComplexSpectrogram out = noisy;
  const double inv = 1.0 / noisy_waveform_peak;
  for (auto& c : out.bins) c *= inv;
  out.norm_factor = noisy.norm_factor * noisy_waveform_peak;
  return out;
}

ComplexSpectrogram denormalize(const ComplexSpectrogram& s) {
  ComplexSpectrogram out = s;
  for (auto& c : out.bins) c *= s.norm_factor;
  out.norm_factor = 1.0;
  return out;
}

double peak_abs(const Waveform& w) {
  double peak = 0.0;
  for (const double v : w.samples) peak = std::max(peak, std::abs(v));
  return peak;
}

ComplexSpectrogram random_crop(const ComplexSpectrogram& s, int frames,
                               Rng& rng) {
  if (frames <= 0) throw std::runtime_error("random_crop: frames must be > 0");
  ComplexSpectrogram out(s.freq_bins, frames);
  out.warped = s.warped;
  out.norm_factor = s.norm_factor;
  const int copy = std::min(frames, s.frames);
  const int max_off = s.frames - copy;
  const int off =
      max_off > 0 ? static_cast<int>(rng.uniform_index(max_off + 1)) : 0;
  for (int t = 0; t < copy; ++t)
    for (int k = 0; k < s.freq_bins; ++k) out.at(k, t) = s.at(k, t + off);
  return out;  // frames beyond `copy` stay zero (zero-pad contract)
}

std::pair<ComplexSpectrogram, ComplexSpectrogram> random_crop_pair(
    const ComplexSpectrogram& a, const ComplexSpectrogram& b, int frames,
    Rng& rng) {
  if (!a.same_shape(b))
    throw std::runtime_error("random_crop_pair: shape mismatch");
  if (frames <= 0)
    throw std::runtime_error("random_crop_pair: frames must be > 0");
  const int copy = std::min(frames, a.frames);
  const int max_off = a.frames - copy;
  const int off =
      max_off > 0 ? static_cast<int>(rng.uniform_index(max_off + 1)) : 0;
  auto crop_at = [&](const ComplexSpectrogram& s) {
    ComplexSpectrogram out(s.freq_bins, frames);
    out.warped = s.warped;
    out.norm_factor = s.norm_factor;
    for (int t = 0; t < copy; ++t)
      for (int k = 0; k < s.freq_bins; ++k) out.at(k, t) = s.at(k, t + off);
    return out;
  };
  return {crop_at(a), crop_at(b)};
}

}  // namespace storm
