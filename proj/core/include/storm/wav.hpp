#pragma once

#include <string>
#include <vector>

namespace storm {

// Time-domain signal. All pipeline audio is mono 16 kHz; samples are
// dimensionless amplitudes, nominally in [-1, 1].
struct Waveform {
  std::vector<double> samples;
  int sample_rate = 16000;
};

inline constexpr int kPipelineSampleRate = 16000;

// Reads a RIFF/WAVE file. Accepts exactly 16-bit PCM, mono, 16 kHz,
// little-endian; anything else (other sample rates, channel counts, bit
// depths, float encodings) is rejected with a descriptive error. There is no
// resampling path by design.
Waveform read_wav(const std::string& path);

// Writes 16-bit PCM mono. Samples are scaled by 32768, rounded to nearest and
// clamped to the int16 range.
void write_wav(const std::string& path, const Waveform& w);

}  // namespace storm
