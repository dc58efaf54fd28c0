#include "storm/data.hpp"

#include <fftw3.h>

#include <algorithm>
#include <cmath>
#include <complex>
#include <cstdio>
#include <filesystem>
#include <mutex>
#include <stdexcept>

namespace storm {

namespace fs = std::filesystem;

namespace {

constexpr double kPi = 3.14159265358979323846;

double peak(const std::vector<double>& x) {
  double p = 0.0;
  for (double v : x) p = std::max(p, std::abs(v));
  return p;
}

double energy(const std::vector<double>& x) {
  double e = 0.0;
  for (double v : x) e += v * v;
  return e;
}

}  // namespace

Waveform synth_clean(Rng& rng, double duration_s) {
  if (duration_s < 1.0 || duration_s > 6.0)
    throw std::runtime_error("synth_clean: duration outside [1, 6] s");
  const int fs = kPipelineSampleRate;
  const int n = static_cast<int>(std::lround(duration_s * fs));

  // Syllable plan: voiced stretches separated by hard silences. The gap
  // range keeps the silent fraction >= ~12% even in the worst draw.
  std::vector<std::pair<int, int>> voiced;  // [start, end)
  int pos = 0;
  while (pos < n) {
    const int vlen = static_cast<int>(std::lround(rng.uniform(0.20, 0.60) * fs));
    voiced.emplace_back(pos, std::min(n, pos + vlen));
    pos += vlen;
    pos += static_cast<int>(std::lround(rng.uniform(0.12, 0.30) * fs));
  }

  // Fundamental random walk, one control point per 10 ms.
  const int hop = fs / 100;
  const int n_ctrl = n / hop + 2;
  std::vector<double> f0(n_ctrl);
  f0[0] = rng.uniform(100.0, 250.0);
  for (int j = 1; j < n_ctrl; ++j)
    f0[j] = std::clamp(f0[j - 1] + 3.0 * rng.normal(), 80.0, 300.0);

  const int n_harm = 3 + static_cast<int>(rng.uniform_index(6));
  std::vector<double> amp(n_harm), ph(n_harm);
  for (int k = 0; k < n_harm; ++k) {
    amp[k] = 1.0 / (k + 1);
    ph[k] = rng.uniform(0.0, 2.0 * kPi);
  }
  const double fm = rng.uniform(2.0, 8.0);
  const double phm = rng.uniform(0.0, 2.0 * kPi);

  Waveform w;
  w.samples.assign(n, 0.0);
  double phase = 0.0;
  for (int i = 0; i < n; ++i) {
    const int j = i / hop;
    const double frac = static_cast<double>(i % hop) / hop;
    const double f = f0[j] + frac * (f0[j + 1] - f0[j]);
    phase += 2.0 * kPi * f / fs;
    double v = 0.0;
    for (int k = 0; k < n_harm; ++k) v += amp[k] * std::sin((k + 1) * phase + ph[k]);
    const double am = 0.6 + 0.4 * std::sin(2.0 * kPi * fm * i / fs + phm);
    w.samples[i] = v * am;
  }

  // Gate with raised-cosine edges so the gaps do not click.
  std::vector<double> gate(n, 0.0);
  const int ramp = fs / 100;
  for (const auto& [a, b] : voiced) {
    const int r = std::min(ramp, (b - a) / 2);
    for (int i = a; i < b; ++i) {
      double g = 1.0;
      if (i < a + r) g = 0.5 * (1.0 - std::cos(kPi * (i - a + 1) / r));
      else if (i >= b - r) g = 0.5 * (1.0 - std::cos(kPi * (b - i) / r));
      gate[i] = g;
    }
  }
  for (int i = 0; i < n; ++i) w.samples[i] *= gate[i];

  const double p = peak(w.samples);
  if (p <= 0.0) throw std::runtime_error("synth_clean: produced silence");
  const double scale = 0.9 / p;
  for (double& v : w.samples) v *= scale;
  return w;
}

Waveform white_noise(Rng& rng, int num_samples) {
  Waveform w;
  w.samples.resize(num_samples);
  for (double& v : w.samples) v = rng.normal();
  return w;
}

Waveform pink_noise(Rng& rng, int num_samples) {
  Waveform w;
  w.samples.resize(num_samples);
  double b0 = 0.0, b1 = 0.0, b2 = 0.0;
  for (double& v : w.samples) {
    const double white = rng.normal();
    b0 = 0.99765 * b0 + white * 0.0990460;
    b1 = 0.96300 * b1 + white * 0.2965164;
    b2 = 0.57000 * b2 + white * 1.0526913;
    v = b0 + b1 + b2 + white * 0.1848;
  }
  const double rms = std::sqrt(energy(w.samples) / std::max(1, num_samples));
  if (rms > 0.0)
    for (double& v : w.samples) v /= rms;
  return w;
}

NoisyMix mix_at_snr(const Waveform& clean, const Waveform& noise,
                    double snr_db, Rng& rng) {
  if (clean.samples.empty()) throw std::runtime_error("mix_at_snr: empty clean");
  if (noise.samples.empty()) throw std::runtime_error("mix_at_snr: empty noise");
  const double ce = energy(clean.samples);
  if (ce <= 0.0) throw std::runtime_error("mix_at_snr: silent clean");

  const size_t n = clean.samples.size();
  NoisyMix out;
  out.noise.samples.resize(n);
  if (noise.samples.size() == n) {
    out.noise.samples = noise.samples;
  } else {
    const size_t off = rng.uniform_index(noise.samples.size());
    for (size_t i = 0; i < n; ++i)
      out.noise.samples[i] = noise.samples[(off + i) % noise.samples.size()];
  }
  const double ne = energy(out.noise.samples);
  if (ne <= 0.0) throw std::runtime_error("mix_at_snr: silent noise");

  const double scale = std::sqrt(ce / ne * std::pow(10.0, -snr_db / 10.0));
  for (double& v : out.noise.samples) v *= scale;
  out.noisy.samples.resize(n);
  for (size_t i = 0; i < n; ++i)
    out.noisy.samples[i] = clean.samples[i] + out.noise.samples[i];
  return out;
}

SyntheticRir synth_rir(Rng& rng, double t60_s) {
  if (t60_s < 0.1 || t60_s > 1.5)
    throw std::runtime_error("synth_rir: t60 outside [0.1, 1.5] s");
  const int fs = kPipelineSampleRate;
  SyntheticRir r;
  r.t60 = t60_s;
  r.direct_index = static_cast<int>(std::lround(rng.uniform(0.002, 0.010) * fs));
  const double decay = 3.0 * std::log(10.0) / t60_s;  // amplitude, per second
  const int tail_len = static_cast<int>(std::lround(1.2 * t60_s * fs));
  r.h.assign(r.direct_index + 1 + tail_len, 0.0);
  r.h[r.direct_index] = 1.0;
  // Tail-to-direct energy ratio in [1, 4]; the per-sample scale keeps every
  // tail sample far below the direct impulse so the direct path stays the
  // global max of |h|.
  const double drr = rng.uniform(1.0, 4.0);
  const double a0 = std::sqrt(drr * 2.0 * decay / fs);
  for (int i = 1; i <= tail_len; ++i) {
    const double t = static_cast<double>(i) / fs;
    r.h[r.direct_index + i] = rng.normal() * a0 * std::exp(-decay * t);
  }
  return r;
}

namespace {

// FFTW planning (and destruction) is not thread-safe; convolution is rare
// enough that the whole call holds one lock.
std::mutex g_fftw_mu;

}  // namespace

std::vector<double> fft_convolve(const std::vector<double>& x,
                                 const std::vector<double>& h) {
  if (x.empty() || h.empty()) throw std::runtime_error("fft_convolve: empty input");
  const size_t out_len = x.size() + h.size() - 1;
  size_t n = 1;
  while (n < out_len) n <<= 1;

  std::lock_guard<std::mutex> lock(g_fftw_mu);
  double* a = fftw_alloc_real(n);
  double* b = fftw_alloc_real(n);
  fftw_complex* fa = fftw_alloc_complex(n / 2 + 1);
  fftw_complex* fb = fftw_alloc_complex(n / 2 + 1);
  fftw_plan pa = fftw_plan_dft_r2c_1d(static_cast<int>(n), a, fa, FFTW_ESTIMATE);
  fftw_plan pb = fftw_plan_dft_r2c_1d(static_cast<int>(n), b, fb, FFTW_ESTIMATE);
  fftw_plan pinv =
      fftw_plan_dft_c2r_1d(static_cast<int>(n), fa, a, FFTW_ESTIMATE);

  std::fill(a, a + n, 0.0);
  std::fill(b, b + n, 0.0);
  std::copy(x.begin(), x.end(), a);
  std::copy(h.begin(), h.end(), b);
  fftw_execute(pa);
  fftw_execute(pb);
  for (size_t i = 0; i < n / 2 + 1; ++i) {
    const std::complex<double> va(fa[i][0], fa[i][1]);
    const std::complex<double> vb(fb[i][0], fb[i][1]);
    const std::complex<double> prod = va * vb;
    fa[i][0] = prod.real();
    fa[i][1] = prod.imag();
  }
  fftw_execute(pinv);
  std::vector<double> out(out_len);
  for (size_t i = 0; i < out_len; ++i) out[i] = a[i] / static_cast<double>(n);

  fftw_destroy_plan(pa);
  fftw_destroy_plan(pb);
  fftw_destroy_plan(pinv);
  fftw_free(a);
  fftw_free(b);
  fftw_free(fa);
  fftw_free(fb);
  return out;
}

std::string to_string(DatasetTask task) {
  switch (task) {
    case DatasetTask::kDenoise:
      return "denoise";
    case DatasetTask::kDereverb:
      return "dereverb";
  }
  throw std::runtime_error("unknown dataset task");
}

DatasetTask dataset_task_from_string(const std::string& s) {
  if (s == "denoise") return DatasetTask::kDenoise;
  if (s == "dereverb") return DatasetTask::kDereverb;
  throw std::runtime_error("unknown task: '" + s +
                           "' (expected denoise|dereverb)");
}

void DatasetConfig::validate() const {
  if (n_train < 0 || n_valid < 0 || n_test < 0)
    throw std::runtime_error("dataset config: negative split size");
  if (n_train + n_valid + n_test < 1)
    throw std::runtime_error("dataset config: no utterances requested");
  if (min_duration_s < 1.0 || max_duration_s > 6.0 ||
      min_duration_s > max_duration_s)
    throw std::runtime_error("dataset config: durations outside [1, 6] s");
  if (snr_lo_db > snr_hi_db)
    throw std::runtime_error("dataset config: bad SNR range");
  if (t60_lo_s < 0.1 || t60_hi_s > 1.5 || t60_lo_s > t60_hi_s)
    throw std::runtime_error("dataset config: bad T60 range");
  if (out_dir.empty())
    throw std::runtime_error("dataset config: out_dir must be set");
}

DatasetManifest make_dataset(const DatasetConfig& cfg) {
  cfg.validate();
  fs::create_directories(cfg.out_dir);
  const char* split_names[3] = {"train", "valid", "test"};
  const int counts[3] = {cfg.n_train, cfg.n_valid, cfg.n_test};

  DatasetManifest rel;  // relative paths, as written into the manifest file
  for (int s = 0; s < 3; ++s) {
    if (counts[s] == 0) continue;
    fs::create_directories(cfg.out_dir + "/" + split_names[s]);
    for (int i = 0; i < counts[s]; ++i) {
      Rng rng(derive_seed(cfg.seed, static_cast<std::uint64_t>(s),
                          static_cast<std::uint64_t>(i)));
      char idbuf[32];
      std::snprintf(idbuf, sizeof(idbuf), "%s-%04d", split_names[s], i);
      ManifestRow row;
      row.id = idbuf;
      row.split = split_names[s];
      const std::string stem = std::string(split_names[s]) + "/" + idbuf;

      const double dur = rng.uniform(cfg.min_duration_s, cfg.max_duration_s);
      Waveform clean = synth_clean(rng, dur);
      const int n = static_cast<int>(clean.samples.size());

      if (cfg.task == DatasetTask::kDenoise) {
        const bool use_pink = rng.uniform() < 0.5;
        Waveform noise =
            use_pink ? pink_noise(rng, n) : white_noise(rng, n);
        const double snr = rng.uniform(cfg.snr_lo_db, cfg.snr_hi_db);
        NoisyMix mix = mix_at_snr(clean, noise, snr, rng);
        const double p = std::max(
            {peak(mix.noisy.samples), peak(mix.noise.samples), 0.9});
        if (p > 0.99) {
          const double scale = 0.99 / p;
          for (double& v : clean.samples) v *= scale;
          for (double& v : mix.noisy.samples) v *= scale;
          for (double& v : mix.noise.samples) v *= scale;
        }
        row.clean_path = stem + "_clean.wav";
        row.corrupt_path = stem + "_noisy.wav";
        row.noise_path = stem + "_noise.wav";
        row.snr_db = snr;
        row.has_snr = true;
        write_wav(cfg.out_dir + "/" + row.clean_path, clean);
        write_wav(cfg.out_dir + "/" + row.corrupt_path, mix.noisy);
        write_wav(cfg.out_dir + "/" + row.noise_path, mix.noise);
      } else {
        const double t60 = rng.uniform(cfg.t60_lo_s, cfg.t60_hi_s);
        const SyntheticRir rir = synth_rir(rng, t60);
        const std::vector<double> wet_full =
            fft_convolve(clean.samples, rir.h);
        Waveform wet;
        wet.samples.assign(wet_full.begin(), wet_full.begin() + n);
        Waveform target;  // clean delayed to the direct-path index
        target.samples.assign(n, 0.0);
        for (int k = rir.direct_index; k < n; ++k)
          target.samples[k] = clean.samples[k - rir.direct_index];
        const double p =
            std::max(peak(wet.samples), peak(target.samples));
        if (p > 0.99) {
          const double scale = 0.99 / p;
          for (double& v : wet.samples) v *= scale;
          for (double& v : target.samples) v *= scale;
        }
        row.clean_path = stem + "_target.wav";
        row.corrupt_path = stem + "_reverb.wav";
        row.rir_id = std::string("rir-") + idbuf;
        write_wav(cfg.out_dir + "/" + row.clean_path, target);
        write_wav(cfg.out_dir + "/" + row.corrupt_path, wet);
      }
      rel.rows.push_back(std::move(row));
    }
  }
  save_manifest(cfg.out_dir + "/manifest.txt", rel);

  DatasetManifest resolved = rel;
  for (ManifestRow& r : resolved.rows) {
    r.clean_path = cfg.out_dir + "/" + r.clean_path;
    r.corrupt_path = cfg.out_dir + "/" + r.corrupt_path;
    if (!r.noise_path.empty()) r.noise_path = cfg.out_dir + "/" + r.noise_path;
  }
  return resolved;
}

}  // namespace storm
