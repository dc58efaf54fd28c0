#pragma once

#include <complex>
#include <vector>

#include "storm/rng.hpp"
#include "storm/wav.hpp"

namespace storm {

// Complex short-time spectrum. Storage is frame-major: bin k of frame t lives
// at index t*freq_bins + k, so one frame is contiguous.
//
// `warped` tracks whether the square-root magnitude compression has been
// applied; the istft refuses warped input and the warping ops refuse to be
// applied twice, which turns representation-state bugs into loud errors.
//
// `norm_factor` is the max-abs of the noisy time-domain utterance that this
// spectrogram (and its paired ones) were divided by; 1.0 means unnormalized.
struct ComplexSpectrogram {
  int freq_bins = 0;
  int frames = 0;
  std::vector<std::complex<double>> bins;
  bool warped = false;
  double norm_factor = 1.0;

  ComplexSpectrogram() = default;
  ComplexSpectrogram(int freq_bins_, int frames_)
      : freq_bins(freq_bins_),
        frames(frames_),
        bins(static_cast<size_t>(freq_bins_) * frames_) {}

  std::complex<double>& at(int k, int t) {
    return bins[static_cast<size_t>(t) * freq_bins + k];
  }
  const std::complex<double>& at(int k, int t) const {
    return bins[static_cast<size_t>(t) * freq_bins + k];
  }
  size_t size() const { return bins.size(); }
  bool same_shape(const ComplexSpectrogram& o) const {
    return freq_bins == o.freq_bins && frames == o.frames;
  }
};

// Analysis/synthesis configuration. The window is fixed by construction to
// the square-root of a periodic Hann window (i.e. the sine window
// w[n] = sin(pi*n/window_len)), applied in both analysis and synthesis, so
// the effective analysis*synthesis taper is Hann. Frames are centered via
// reflect padding of window_len/2 on each side, and the frame count of a
// length-L signal is floor(L/hop) + 1, independent of content.
struct StftConfig {
  int window_len = 510;
  int hop = 128;

  int freq_bins() const { return window_len / 2 + 1; }
  int num_frames(int samples) const { return samples / hop + 1; }
};

ComplexSpectrogram stft(const Waveform& w, const StftConfig& cfg);

// Inverse transform via window-sum-normalized overlap-add; exact to machine
// precision wherever the synthesis window sum is nonzero. Requires unwarped
// input and returns exactly out_len samples.
Waveform istft(const ComplexSpectrogram& s, const StftConfig& cfg,
               int out_len);

// Square-root magnitude compression c -> |c|^0.5 * exp(i*angle(c)) and its
// exact inverse. No extra gain constant (any such constant would be absorbed
// by normalization). Both throw if the warped flag does not match.
ComplexSpectrogram apply_warping(const ComplexSpectrogram& s);
ComplexSpectrogram remove_warping(const ComplexSpectrogram& s);

struct NormalizedPair {
  ComplexSpectrogram clean;
  ComplexSpectrogram noisy;
  double norm_factor = 1.0;
};

// Divides both spectrograms by the max absolute sample of the noisy
// time-domain utterance (passed as noisy_waveform_peak; measured in the time
// domain, not on spectrogram magnitudes). Throws if the peak is not positive
// (all-zero noisy input).
NormalizedPair normalize(const ComplexSpectrogram& clean,
                         const ComplexSpectrogram& noisy,
                         double noisy_waveform_peak);
ComplexSpectrogram normalize_single(const ComplexSpectrogram& noisy,
                                    double noisy_waveform_peak);
// Multiplies norm_factor back in and resets it to 1.
ComplexSpectrogram denormalize(const ComplexSpectrogram& s);

double peak_abs(const Waveform& w);

// Random fixed-length time crop. Shorter inputs are zero-padded at the end to
// `frames`. The two-spectrogram overload uses one offset for both (paired
// crops must stay aligned).
ComplexSpectrogram random_crop(const ComplexSpectrogram& s, int frames,
                               Rng& rng);
std::pair<ComplexSpectrogram, ComplexSpectrogram> random_crop_pair(
    const ComplexSpectrogram& a, const ComplexSpectrogram& b, int frames,
    Rng& rng);

}  // namespace storm
