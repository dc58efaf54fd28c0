// Synthetic corpus: utterance generator, noise colors, exact-SNR mixing,
// impulse responses, convolution, and dataset assembly determinism.

#include <algorithm>
#include <cmath>
#include <string>
#include <vector>

#include "doctest.h"
#include "storm/data.hpp"
#include "storm/manifest.hpp"
#include "storm/rng.hpp"
#include "storm/wav.hpp"
#include "storm_oracles/oracles.hpp"
#include "test_util.hpp"

using namespace storm;
namespace fs = std::filesystem;

namespace {

double energy(const std::vector<double>& x) {
  double acc = 0.0;
  for (double v : x) acc += v * v;
  return acc;
}

double measured_snr_db(const Waveform& clean, const Waveform& noise) {
  return 10.0 * std::log10(energy(clean.samples) / energy(noise.samples));
}

}  // namespace

TEST_SUITE("data") {

TEST_CASE("utterances are peak-normalized, band-limited, and gapped") {
  Rng rng(1001);
  const Waveform w = synth_clean(rng, 3.0);
  CHECK(static_cast<int>(w.samples.size()) == 48000);
  double peak = 0.0;
  for (double v : w.samples) peak = std::max(peak, std::abs(v));
  CHECK(peak == doctest::Approx(0.9).epsilon(1e-9));

  // Syllabic gaps: at least 10% of 20 ms frames sit 40 dB under the peak.
  const int frame = 320;
  int quiet = 0, total = 0;
  for (std::size_t off = 0; off + frame <= w.samples.size(); off += frame) {
    double acc = 0.0;
    for (int i = 0; i < frame; ++i)
      acc += w.samples[off + i] * w.samples[off + i];
    if (std::sqrt(acc / frame) < 0.9 * 0.01) ++quiet;
    ++total;
  }
  CHECK(quiet >= total / 10);

  CHECK_THROWS(synth_clean(rng, 0.5));
  CHECK_THROWS(synth_clean(rng, 7.0));
}

TEST_CASE("utterance energy stays in the speech band across seeds") {
  for (int s = 0; s < 100; ++s) {
    Rng rng(derive_seed(1002, s));
    const Waveform w = synth_clean(rng, 2.0);
    CHECK(storm_oracles::spectral_centroid_hz(w.samples, w.sample_rate) <
          4000.0);
  }
}

TEST_CASE("generators are seed-deterministic") {
  Rng a(1003), b(1003);
  const Waveform wa = synth_clean(a, 2.0);
  const Waveform wb = synth_clean(b, 2.0);
  CHECK(wa.samples == wb.samples);
  Rng c(1004), d(1004);
  CHECK(white_noise(c, 4096).samples == white_noise(d, 4096).samples);
  Rng e(1005), f(1005);
  CHECK(pink_noise(e, 4096).samples == pink_noise(f, 4096).samples);
}

TEST_CASE("pink noise slopes below white noise") {
  Rng rng(1006);
  const Waveform white = white_noise(rng, 32768);
  const Waveform pink = pink_noise(rng, 32768);
  CHECK(static_cast<int>(white.samples.size()) == 32768);
  const double cw =
      storm_oracles::spectral_centroid_hz(white.samples, 16000);
  const double cp = storm_oracles::spectral_centroid_hz(pink.samples, 16000);
  CHECK(cp < 0.5 * cw);  // 1/f weighting pulls the centroid far down
  // White noise centroid sits near the band middle (4 kHz for flat spectra).
  CHECK(cw > 3000.0);
  CHECK(cw < 5000.0);
}

TEST_CASE("mixing hits the requested ratio exactly across a sweep") {
  Rng rng(1007);
  const Waveform clean = synth_clean(rng, 2.0);
  const Waveform noise = white_noise(rng, 32000);
  for (int i = 0; i <= 40; ++i) {
    const double snr = -6.0 + 0.5 * i;
    const NoisyMix mix = mix_at_snr(clean, noise, snr, rng);
    REQUIRE(mix.noisy.samples.size() == clean.samples.size());
    REQUIRE(mix.noise.samples.size() == clean.samples.size());
    CHECK(std::abs(measured_snr_db(clean, mix.noise) - snr) <= 1e-6);
    for (std::size_t n = 0; n < clean.samples.size(); ++n)
      CHECK(mix.noisy.samples[n] ==
            clean.samples[n] + mix.noise.samples[n]);
  }
}

TEST_CASE("short noise is looped from a random offset") {
  Rng rng(1008);
  const Waveform clean = synth_clean(rng, 2.0);
  Waveform stub = white_noise(rng, 5000);  // much shorter than 32000
  const NoisyMix mix = mix_at_snr(clean, stub, 3.0, rng);
  CHECK(mix.noise.samples.size() == clean.samples.size());
  CHECK(std::abs(measured_snr_db(clean, mix.noise) - 3.0) <= 1e-6);
}

TEST_CASE("mixing rejects silent inputs") {
  Rng rng(1009);
  Waveform silence;
  silence.samples.assign(16000, 0.0);
  const Waveform noise = white_noise(rng, 16000);
  const Waveform clean = synth_clean(rng, 1.0);
  CHECK_THROWS(mix_at_snr(silence, noise, 0.0, rng));
  CHECK_THROWS(mix_at_snr(clean, silence, 0.0, rng));
}

TEST_CASE("impulse responses decay at the requested rate") {
  Rng rng(1010);
  const SyntheticRir rir = synth_rir(rng, 0.5);
  CHECK(rir.t60 == 0.5);
  // Direct path is the global maximum.
  int argmax = 0;
  for (std::size_t i = 1; i < rir.h.size(); ++i)
    if (std::abs(rir.h[i]) > std::abs(rir.h[argmax]))
      argmax = static_cast<int>(i);
  CHECK(argmax == rir.direct_index);
  const double t60 = storm_oracles::measure_t60(rir.h, 16000);
  CHECK(t60 >= 0.45);
  CHECK(t60 <= 0.55);
  CHECK_THROWS(synth_rir(rng, 0.05));
  CHECK_THROWS(synth_rir(rng, 2.0));
}

TEST_CASE("convolution: identity, shift, and naive cross-check") {
  const std::vector<double> x = {1.0, -2.0, 3.0, 0.5};
  const std::vector<double> unit = {1.0};
  const auto same = fft_convolve(x, unit);
  REQUIRE(same.size() == x.size());
  for (std::size_t i = 0; i < x.size(); ++i)
    CHECK(same[i] == doctest::Approx(x[i]).epsilon(1e-12));

  const std::vector<double> delay = {0.0, 0.0, 1.0};
  const auto shifted = fft_convolve(x, delay);
  REQUIRE(shifted.size() == x.size() + 2);
  for (std::size_t i = 0; i < x.size(); ++i)
    CHECK(shifted[i + 2] == doctest::Approx(x[i]).epsilon(1e-12));

  Rng rng(1011);
  std::vector<double> a(37), b(23);
  for (auto& v : a) v = rng.normal();
  for (auto& v : b) v = rng.normal();
  const auto fast = fft_convolve(a, b);
  REQUIRE(fast.size() == a.size() + b.size() - 1);
  for (std::size_t n = 0; n < fast.size(); ++n) {
    double acc = 0.0;
    for (std::size_t k = 0; k < b.size(); ++k)
      if (n >= k && n - k < a.size()) acc += a[n - k] * b[k];
    CHECK(std::abs(fast[n] - acc) <= 1e-10);
  }
}

TEST_CASE("dataset assembly: splits, files, and uniform ratios") {
  DatasetConfig cfg;
  cfg.n_train = 80;
  cfg.n_valid = 2;
  cfg.n_test = 2;
  cfg.min_duration_s = 2.0;
  cfg.max_duration_s = 2.5;
  cfg.seed = 7;
  cfg.out_dir = test_util::fresh_dir("data_ks").string();
  const DatasetManifest m = make_dataset(cfg);
  CHECK(m.split_rows("train").size() == 80);
  CHECK(m.split_rows("valid").size() == 2);
  CHECK(m.split_rows("test").size() == 2);
  m.validate(true);  // all referenced files exist

  std::vector<double> snrs;
  for (const auto& r : m.split_rows("train")) {
    REQUIRE(r.has_snr);
    snrs.push_back(r.snr_db);
    CHECK(r.snr_db >= cfg.snr_lo_db);
    CHECK(r.snr_db <= cfg.snr_hi_db);
  }
  CHECK(storm_oracles::ks_uniform_pvalue(snrs, cfg.snr_lo_db, cfg.snr_hi_db) >
        0.01);

  // Spot-check one row end to end: mixture consistency and exact SNR.
  const ManifestRow& row = m.split_rows("train").front();
  const Waveform clean = read_wav(row.clean_path);
  const Waveform noisy = read_wav(row.corrupt_path);
  const Waveform noise = read_wav(row.noise_path);
  REQUIRE(clean.samples.size() == noisy.samples.size());
  REQUIRE(clean.samples.size() == noise.samples.size());
  // Quantized storage: per-sample agreement to one 16-bit step each.
  for (std::size_t i = 0; i < clean.samples.size(); ++i)
    CHECK(std::abs(noisy.samples[i] -
                   (clean.samples[i] + noise.samples[i])) <= 2.5 / 32768.0);
  CHECK(std::abs(measured_snr_db(clean, noise) - row.snr_db) <= 0.05);
}

TEST_CASE("dataset assembly is byte-deterministic") {
  DatasetConfig cfg;
  cfg.n_train = 3;
  cfg.n_valid = 2;
  cfg.n_test = 2;
  cfg.min_duration_s = 2.0;
  cfg.max_duration_s = 2.5;
  cfg.seed = 99;
  cfg.out_dir = test_util::fresh_dir("data_det_a").string();
  const DatasetManifest a = make_dataset(cfg);
  cfg.out_dir = test_util::fresh_dir("data_det_b").string();
  const DatasetManifest b = make_dataset(cfg);
  REQUIRE(a.rows.size() == b.rows.size());
  for (std::size_t i = 0; i < a.rows.size(); ++i) {
    CHECK(a.rows[i].id == b.rows[i].id);
    CHECK(a.rows[i].snr_db == b.rows[i].snr_db);
    CHECK(test_util::files_identical(a.rows[i].clean_path,
                                     b.rows[i].clean_path));
    CHECK(test_util::files_identical(a.rows[i].corrupt_path,
                                     b.rows[i].corrupt_path));
    if (!a.rows[i].noise_path.empty())
      CHECK(test_util::files_identical(a.rows[i].noise_path,
                                       b.rows[i].noise_path));
  }
}

TEST_CASE("dereverberation rows reference their impulse response") {
  DatasetConfig cfg;
  cfg.task = DatasetTask::kDereverb;
  cfg.n_train = 2;
  cfg.n_valid = 1;
  cfg.n_test = 1;
  cfg.min_duration_s = 2.0;
  cfg.max_duration_s = 2.5;
  cfg.seed = 13;
  cfg.out_dir = test_util::fresh_dir("data_reverb").string();
  const DatasetManifest m = make_dataset(cfg);
  m.validate(true);
  for (const auto& r : m.rows) {
    CHECK(!r.rir_id.empty());
    CHECK(!r.has_snr);
    const Waveform clean = read_wav(r.clean_path);
    const Waveform corrupt = read_wav(r.corrupt_path);
    CHECK(clean.samples.size() == corrupt.samples.size());
  }
}

TEST_CASE("task names round trip and config validates") {
  CHECK(dataset_task_from_string(to_string(DatasetTask::kDenoise)) ==
        DatasetTask::kDenoise);
  CHECK(dataset_task_from_string(to_string(DatasetTask::kDereverb)) ==
        DatasetTask::kDereverb);
  CHECK_THROWS(dataset_task_from_string("declick"));
  DatasetConfig cfg;
  cfg.out_dir = "/tmp/x";
  CHECK_NOTHROW(cfg.validate());
  DatasetConfig bad = cfg;
  bad.n_train = 0;
  CHECK_THROWS(bad.validate());
  bad = cfg;
  bad.min_duration_s = 5.0;  // above max
  CHECK_THROWS(bad.validate());
  bad = cfg;
  bad.snr_lo_db = 20.0;  // above hi
  CHECK_THROWS(bad.validate());
  bad = cfg;
  bad.out_dir.clear();
  CHECK_THROWS(bad.validate());
}

}  // TEST_SUITE
