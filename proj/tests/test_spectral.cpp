// Spectral front end: transform conventions, energy conservation, warping,
// normalization and cropping.

#include <cmath>
#include <complex>
#include <set>
#include <vector>

#include "doctest.h"
#include "storm/rng.hpp"
#include "storm/spectral.hpp"
#include "storm_oracles/oracles.hpp"
#include "test_util.hpp"

using namespace storm;

namespace {

// Independent copy of the analysis taper for oracle cross-checks.
std::vector<double> oracle_window(int len) {
  std::vector<double> w(len);
  double e = 0.0;
  for (int n = 0; n < len; ++n) {
    w[n] = std::sin(M_PI * n / len);
    e += w[n] * w[n];
  }
  for (auto& v : w) v /= std::sqrt(e);
  return w;
}

double db(double ratio) { return 10.0 * std::log10(ratio); }

}  // namespace

TEST_SUITE("spectral") {

TEST_CASE("frame count and shape for one second of audio") {
  const StftConfig cfg;
  CHECK(cfg.freq_bins() == 256);
  CHECK(cfg.num_frames(16000) == 126);
  Waveform w;
  w.samples.assign(16000, 0.0);
  const ComplexSpectrogram s = stft(w, cfg);
  CHECK(s.freq_bins == 256);
  CHECK(s.frames == 126);
  for (const auto& b : s.bins) CHECK(b == std::complex<double>(0.0, 0.0));
}

TEST_CASE("stft rejects degenerate input") {
  Waveform w;
  w.samples = {0.5};
  CHECK_THROWS(stft(w, StftConfig{}));
}

TEST_CASE("1 kHz sinusoid concentrates in the expected bin") {
  const StftConfig cfg;
  Waveform w;
  w.samples.resize(16000);
  for (int n = 0; n < 16000; ++n)
    w.samples[n] = std::sin(2.0 * M_PI * 1000.0 * n / 16000.0);
  const ComplexSpectrogram s = stft(w, cfg);
  // 1000 Hz maps to bin 1000 * 510 / 16000 = 31.875 -> nearest bin 32.
  std::vector<double> energy(s.freq_bins, 0.0);
  for (int k = 0; k < s.freq_bins; ++k)
    for (int t = 0; t < s.frames; ++t) energy[k] += std::norm(s.at(k, t));
  int peak = 0;
  for (int k = 1; k < s.freq_bins; ++k)
    if (energy[k] > energy[peak]) peak = k;
  CHECK(peak == 32);
  for (int k = 0; k < s.freq_bins; ++k) {
    if (std::abs(k - 32) >= 3)
      CHECK(db(energy[32] / (energy[k] + 1e-300)) >= 20.0);
  }
}

TEST_CASE("interior frame matches a naive windowed DFT") {
  const StftConfig cfg;
  const Waveform w = test_util::make_wave(16000, 404, 0.3);
  const ComplexSpectrogram s = stft(w, cfg);
  const auto win = oracle_window(cfg.window_len);
  const int t = 60;                       // interior: no boundary reflection
  const int half = cfg.window_len / 2;    // frames centered at t * hop
  std::vector<std::complex<double>> frame(cfg.window_len);
  for (int n = 0; n < cfg.window_len; ++n)
    frame[n] = w.samples[t * cfg.hop - half + n] * win[n];
  const auto spec = storm_oracles::naive_dft(frame);
  for (int k = 0; k < cfg.freq_bins(); ++k)
    CHECK(std::abs(spec[k] - s.at(k, t)) <= 1e-9);
}

TEST_CASE("per-frame energy identity with one-sided bin weights") {
  const StftConfig cfg;
  const Waveform w = test_util::make_wave(16000, 405, 0.3);
  const ComplexSpectrogram s = stft(w, cfg);
  const auto win = oracle_window(cfg.window_len);
  const int half = cfg.window_len / 2;
  for (int t = 40; t <= 80; t += 20) {
    double time_energy = 0.0;
    for (int n = 0; n < cfg.window_len; ++n) {
      const double v = w.samples[t * cfg.hop - half + n] * win[n];
      time_energy += v * v;
    }
    double freq_energy = 0.0;
    for (int k = 0; k < cfg.freq_bins(); ++k) {
      // Real input: bins 1..254 represent themselves and their conjugates;
      // bin 0 (DC) and bin 255 (Nyquist of the even-length transform) do not.
      const double weight = (k == 0 || k == cfg.freq_bins() - 1) ? 1.0 : 2.0;
      freq_energy += weight * std::norm(s.at(k, t));
    }
    freq_energy /= cfg.window_len;
    CHECK(test_util::rel_err(time_energy, freq_energy) <= 1e-12);
  }
}

TEST_CASE("analysis-synthesis round trip is transparent") {
  const StftConfig cfg;
  for (int len : {16000, 12345, 5000}) {
    const Waveform w = test_util::make_wave(len, 500 + len, 0.3);
    const ComplexSpectrogram s = stft(w, cfg);
    const Waveform back = istft(s, cfg, len);
    REQUIRE(static_cast<int>(back.samples.size()) == len);
    double err = 0.0, ref = 0.0;
    for (int n = 0; n < len; ++n) {
      const double d = back.samples[n] - w.samples[n];
      err += d * d;
      ref += w.samples[n] * w.samples[n];
    }
    CHECK(db(err / ref) <= -50.0);
  }
}

TEST_CASE("istft enforces the length bound") {
  const StftConfig cfg;
  const Waveform w = test_util::make_wave(4000, 77);
  const ComplexSpectrogram s = stft(w, cfg);
  const int max_len = (s.frames - 1) * cfg.hop + cfg.window_len / 2 + 1;
  CHECK_NOTHROW(istft(s, cfg, max_len));
  CHECK_THROWS(istft(s, cfg, max_len + 1));
}

TEST_CASE("windowed overlap-add weight is nearly flat") {
  const StftConfig cfg;
  const auto win = oracle_window(cfg.window_len);
  // Accumulate squared-window sums over a long run of hops.
  const int frames = 200;
  std::vector<double> wsum((frames - 1) * cfg.hop + cfg.window_len, 0.0);
  for (int m = 0; m < frames; ++m)
    for (int n = 0; n < cfg.window_len; ++n)
      wsum[m * cfg.hop + n] += win[n] * win[n];
  double lo = 1e300, hi = 0.0, mean = 0.0;
  const int a = cfg.window_len, b = static_cast<int>(wsum.size()) - cfg.window_len;
  for (int n = a; n < b; ++n) {
    lo = std::min(lo, wsum[n]);
    hi = std::max(hi, wsum[n]);
    mean += wsum[n];
  }
  mean /= (b - a);
  CHECK((hi - lo) / mean <= 0.002);  // 510/128 taper: ~0.13% ripple
}

TEST_CASE("warping compresses magnitude toward its square root") {
  ComplexSpectrogram s(2, 1);
  s.at(0, 0) = {4.0, 0.0};
  s.at(1, 0) = {0.0, 0.0};
  const ComplexSpectrogram wsp = apply_warping(s);
  CHECK(std::abs(wsp.at(0, 0) - std::complex<double>(2.0, 0.0)) <= 1e-12);
  CHECK(wsp.at(1, 0) == std::complex<double>(0.0, 0.0));
  CHECK(wsp.warped);
  const ComplexSpectrogram back = remove_warping(wsp);
  CHECK(!back.warped);
  CHECK(std::abs(back.at(0, 0) - s.at(0, 0)) <= 1e-12);
}

TEST_CASE("warp round trip on random data") {
  const ComplexSpectrogram s = test_util::make_spec(64, 40, 88);
  const ComplexSpectrogram back = remove_warping(apply_warping(s));
  for (std::size_t i = 0; i < s.bins.size(); ++i)
    CHECK(std::abs(back.bins[i] - s.bins[i]) <=
          1e-6 * std::max(1.0, std::abs(s.bins[i])));
}

TEST_CASE("warped flag state machine") {
  const ComplexSpectrogram s = test_util::make_spec(8, 8, 89);
  CHECK_THROWS(remove_warping(s));            // not warped yet
  const ComplexSpectrogram wsp = apply_warping(s);
  CHECK_THROWS(apply_warping(wsp));           // already warped
  CHECK_THROWS(istft(wsp, StftConfig{}, 64)); // synthesis wants raw bins
}

TEST_CASE("normalization scales by the corrupt-utterance peak") {
  const ComplexSpectrogram clean = test_util::make_spec(16, 8, 90);
  const ComplexSpectrogram noisy = test_util::make_spec(16, 8, 91);
  const NormalizedPair p = normalize(clean, noisy, 0.5);
  for (std::size_t i = 0; i < noisy.bins.size(); ++i) {
    CHECK(p.noisy.bins[i] == 2.0 * noisy.bins[i]);
    CHECK(p.clean.bins[i] == 2.0 * clean.bins[i]);
  }
  CHECK(p.noisy.norm_factor == 0.5);
  const ComplexSpectrogram undone = denormalize(p.noisy);
  CHECK(undone.norm_factor == 1.0);
  for (std::size_t i = 0; i < noisy.bins.size(); ++i)
    CHECK(std::abs(undone.bins[i] - noisy.bins[i]) <= 1e-12);
  CHECK_THROWS(normalize(clean, noisy, 0.0));
}

TEST_CASE("peak_abs finds the extreme sample") {
  Waveform w;
  w.samples = {0.1, -0.9, 0.5};
  CHECK(peak_abs(w) == 0.9);
}

TEST_CASE("random crop draws every admissible offset") {
  const ComplexSpectrogram s = test_util::make_spec(4, 300, 92);
  std::set<int> offsets;
  for (int trial = 0; trial < 500; ++trial) {
    Rng rng(derive_seed(1000, trial));
    const ComplexSpectrogram c = random_crop(s, 256, rng);
    REQUIRE(c.frames == 256);
    // Recover the offset from the first frame.
    int off = -1;
    for (int cand = 0; cand + 256 <= 300; ++cand)
      if (s.at(0, cand) == c.at(0, 0) && s.at(1, cand) == c.at(1, 0)) {
        off = cand;
        break;
      }
    REQUIRE(off >= 0);
    REQUIRE(off <= 44);
    for (int t = 0; t < 256; ++t)
      CHECK(c.at(2, t) == s.at(2, t + off));
    offsets.insert(off);
  }
  CHECK(offsets.size() == 45);  // every offset in [0, 44] observed
}

TEST_CASE("short input is zero-padded to the crop length") {
  const ComplexSpectrogram s = test_util::make_spec(4, 100, 93);
  Rng rng(5);
  const ComplexSpectrogram c = random_crop(s, 256, rng);
  REQUIRE(c.frames == 256);
  for (int t = 0; t < 100; ++t)
    for (int k = 0; k < 4; ++k) CHECK(c.at(k, t) == s.at(k, t));
  for (int t = 100; t < 256; ++t)
    for (int k = 0; k < 4; ++k)
      CHECK(c.at(k, t) == std::complex<double>(0.0, 0.0));
}

TEST_CASE("paired crop uses one offset for both spectrograms") {
  const ComplexSpectrogram a = test_util::make_spec(4, 300, 94);
  const ComplexSpectrogram b = test_util::make_spec(4, 300, 95);
  for (int trial = 0; trial < 20; ++trial) {
    Rng rng(derive_seed(2000, trial));
    const auto [ca, cb] = random_crop_pair(a, b, 256, rng);
    int off = -1;
    for (int cand = 0; cand + 256 <= 300; ++cand)
      if (a.at(0, cand) == ca.at(0, 0)) {
        off = cand;
        break;
      }
    REQUIRE(off >= 0);
    for (int t = 0; t < 256; ++t) {
      CHECK(ca.at(3, t) == a.at(3, t + off));
      CHECK(cb.at(3, t) == b.at(3, t + off));
    }
  }
}

}  // TEST_SUITE
