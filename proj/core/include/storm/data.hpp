#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "storm/manifest.hpp"
#include "storm/rng.hpp"
#include "storm/wav.hpp"

namespace storm {

// Speech-like synthetic utterance: 3-8 harmonics of a randomly walking
// fundamental (80-300 Hz) under syllabic amplitude modulation (2-8 Hz), with
// silent inter-syllable gaps and the peak normalized to 0.9. Duration must
// lie in [1, 6] s.
Waveform synth_clean(Rng& rng, double duration_s);

Waveform white_noise(Rng& rng, int num_samples);

// 1/f-shaped noise via a 3-pole pole-zero approximation, unit-ish variance.
Waveform pink_noise(Rng& rng, int num_samples);

struct NoisyMix {
  Waveform noisy;
  Waveform noise;  // the scaled noise actually added (SI-SIR/SAR reference)
};

// Scales the noise so 10*log10(||clean||^2/||noise||^2) == snr_db exactly,
// then adds it. A noise of different length is looped/cropped from a random
// start offset. Throws on silent clean or silent noise.
NoisyMix mix_at_snr(const Waveform& clean, const Waveform& noise,
                    double snr_db, Rng& rng);

struct SyntheticRir {
  std::vector<double> h;
  double t60 = 0.0;      // seconds
  int direct_index = 0;  // sample index of the direct path (global max of |h|)
};

// Direct-path impulse of amplitude 1 followed by a Gaussian tail whose
// amplitude decays at 3*ln(10)/t60 per second (so energy falls 60 dB over
// t60). t60 must lie in [0.1, 1.5] s.
SyntheticRir synth_rir(Rng& rng, double t60_s);

// Full linear convolution (length x.size() + h.size() - 1) via FFT.
std::vector<double> fft_convolve(const std::vector<double>& x,
                                 const std::vector<double>& h);

enum class DatasetTask { kDenoise, kDereverb };

std::string to_string(DatasetTask task);
DatasetTask dataset_task_from_string(const std::string& s);

struct DatasetConfig {
  DatasetTask task = DatasetTask::kDenoise;
  int n_train = 500;
  int n_valid = 50;
  int n_test = 50;
  double min_duration_s = 2.0;
  double max_duration_s = 4.0;
  double snr_lo_db = -6.0;  // denoise: SNR drawn uniformly from this range
  double snr_hi_db = 14.0;
  double t60_lo_s = 0.4;  // dereverb: T60 drawn uniformly from this range
  double t60_hi_s = 1.0;
  std::uint64_t seed = 1;
  std::string out_dir;

  void validate() const;
};

// Generates the corpus under cfg.out_dir ({train,valid,test}/*.wav plus
// manifest.txt) and returns the manifest with paths resolved to openable
// form. One master seed determines every file byte. Denoise rows carry the
// scaled-noise path and the drawn SNR; dereverb rows carry a rir_id and use
// the direct-path-delayed clean signal as the target so the pair stays
// sample-aligned. Whenever a corrupt waveform would clip, the whole row's
// waveforms are rescaled together (ratios, hence SNR, are preserved).
DatasetManifest make_dataset(const DatasetConfig& cfg);

}  // namespace storm
