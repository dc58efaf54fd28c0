// Evaluation metrics: scale-invariant SDR/SIR/SAR projections, log-spectral
// distance, aggregates and report serialization.

#include <cmath>
#include <string>
#include <vector>

#include "doctest.h"
#include "storm/metrics.hpp"
#include "storm/rng.hpp"
#include "test_util.hpp"

using namespace storm;

namespace {

double dot(const std::vector<double>& a, const std::vector<double>& b) {
  double acc = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) acc += a[i] * b[i];
  return acc;
}

// Removes the component of v along u.
Waveform orthogonalize(Waveform v, const Waveform& u) {
  const double c = dot(v.samples, u.samples) / dot(u.samples, u.samples);
  for (std::size_t i = 0; i < v.samples.size(); ++i)
    v.samples[i] -= c * u.samples[i];
  return v;
}

}  // namespace

TEST_SUITE("metrics") {

TEST_CASE("perfect and scaled estimates hit the positive cap") {
  const Waveform x = test_util::make_wave(6000, 901);
  for (double scale : {0.5, 1.0, 3.0, -2.0}) {
    Waveform est = x;
    for (auto& s : est.samples) s *= scale;
    CHECK(si_sdr(est, x) == kMetricCapDb);
  }
}

TEST_CASE("orthogonal estimate hits the negative cap") {
  const Waveform x = test_util::make_wave(6000, 902);
  Waveform est = orthogonalize(test_util::make_wave(6000, 903), x);
  CHECK(si_sdr(est, x) == -kMetricCapDb);
}

TEST_CASE("unit-energy orthogonal perturbation scores zero dB") {
  const Waveform x = test_util::make_wave(6000, 904);
  Waveform n = orthogonalize(test_util::make_wave(6000, 905), x);
  const double gain =
      std::sqrt(dot(x.samples, x.samples) / dot(n.samples, n.samples));
  Waveform est = x;
  for (std::size_t i = 0; i < est.samples.size(); ++i)
    est.samples[i] += gain * n.samples[i];
  CHECK(std::abs(si_sdr(est, x)) <= 1e-9);
}

TEST_CASE("metric input validation") {
  const Waveform x = test_util::make_wave(100, 906);
  Waveform shorter = x;
  shorter.samples.pop_back();
  CHECK_THROWS_WITH_AS(si_sdr(shorter, x), doctest::Contains("length"),
                       std::exception);
  Waveform zero;
  zero.samples.assign(100, 0.0);
  CHECK_THROWS_WITH_AS(si_sdr(x, zero), doctest::Contains("zero"),
                       std::exception);
}

TEST_CASE("interference decomposition has a closed form") {
  const Waveform c = test_util::make_wave(6000, 907);
  Waveform n = orthogonalize(test_util::make_wave(6000, 908), c);
  const double gain =
      std::sqrt(dot(c.samples, c.samples) / dot(n.samples, n.samples));
  for (auto& s : n.samples) s *= gain;  // now ||n|| == ||c||
  Waveform est = c;
  for (std::size_t i = 0; i < est.samples.size(); ++i)
    est.samples[i] += 0.1 * n.samples[i];
  const SirSar r = si_sir_sar(est, c, n);
  CHECK(r.sir_defined);
  // Residual is exactly 0.1 n, which projects fully onto the noise:
  // SIR = 10 log10(1 / 0.01) = 20 dB, artifacts empty -> SAR capped.
  CHECK(r.si_sir == doctest::Approx(20.0).epsilon(1e-9));
  CHECK(r.si_sar == kMetricCapDb);
}

TEST_CASE("error energy splits between interference and artifacts") {
  const Waveform c = test_util::make_wave(6000, 909);
  const Waveform n = test_util::make_wave(6000, 910);
  Waveform est = test_util::make_wave(6000, 911, 0.05);
  for (std::size_t i = 0; i < est.samples.size(); ++i)
    est.samples[i] += c.samples[i] + 0.2 * n.samples[i];
  const double sdr = si_sdr(est, c);
  const SirSar r = si_sir_sar(est, c, n);
  REQUIRE(r.sir_defined);
  const double lhs = std::pow(10.0, -sdr / 10.0);
  const double rhs =
      std::pow(10.0, -r.si_sir / 10.0) + std::pow(10.0, -r.si_sar / 10.0);
  CHECK(test_util::rel_err(lhs, rhs) <= 1e-9);
}

TEST_CASE("silent noise reference flags the ratio as undefined") {
  const Waveform c = test_util::make_wave(3000, 912);
  Waveform zero;
  zero.samples.assign(3000, 0.0);
  const SirSar r = si_sir_sar(c, c, zero);
  CHECK(!r.sir_defined);
  CHECK(r.si_sir == kMetricCapDb);
  CHECK(r.si_sar == kMetricCapDb);  // zero artifacts too
}

TEST_CASE("log-spectral distance closed forms") {
  const Waveform x = test_util::make_wave(8000, 913, 0.3);
  CHECK(log_spectral_distance(x, x) == 0.0);

  // A uniform factor of two adds exactly 20*log10(2) dB per bin as long as
  // every reference magnitude stays above the -80 dB floor.
  const StftConfig cfg;
  const ComplexSpectrogram s = stft(x, cfg);
  double min_mag = 1e300;
  for (const auto& b : s.bins) min_mag = std::min(min_mag, std::abs(b));
  REQUIRE(min_mag > 1e-4);  // seed chosen clear of the floor
  Waveform twice = x;
  for (auto& v : twice.samples) v *= 2.0;
  const double expect = 16.0 * 20.0 * std::log10(2.0);  // sqrt(256) * step
  CHECK(log_spectral_distance(twice, x) ==
        doctest::Approx(expect).epsilon(1e-9));

  // Silence on both sides sits entirely on the floor.
  Waveform silence;
  silence.samples.assign(8000, 0.0);
  CHECK(log_spectral_distance(silence, silence) == 0.0);
}

TEST_CASE("aggregate statistics") {
  const Aggregate a = aggregate({1.0, 2.0, 3.0, 4.0});
  CHECK(a.mean == 2.5);
  CHECK(a.median == 2.5);
  CHECK(a.stddev == doctest::Approx(std::sqrt(1.25)).epsilon(1e-12));
  const Aggregate b = aggregate({3.0, 1.0, 2.0});
  CHECK(b.median == 2.0);
  const Aggregate c = aggregate({5.0});
  CHECK(c.median == 5.0);
  CHECK(c.stddev == 0.0);
  CHECK_THROWS(aggregate({}));
}

TEST_CASE("report records round trip byte-exactly") {
  EvalReport rep;
  EvalRow r1;
  r1.id = "utt0001";
  r1.si_sdr = 5.123456789012345;
  r1.si_sir = kMetricCapDb;
  r1.si_sar = -3.0000000001;
  r1.lsd = 96.32959861247398;
  r1.score_calls = 100;
  r1.predictor_calls = 1;
  r1.sir_defined = true;
  EvalRow r2;
  r2.id = "utt0002";
  r2.si_sdr = -kMetricCapDb;
  r2.si_sir = 0.1;
  r2.si_sar = 1.0 / 3.0;
  r2.lsd = 0.0;
  r2.score_calls = 10;
  r2.predictor_calls = 0;
  r2.sir_defined = false;
  rep.rows = {r1, r2};
  const std::string text = rep.to_records();
  const EvalReport back = EvalReport::from_records(text);
  CHECK(back.to_records() == text);
  REQUIRE(back.rows.size() == 2);
  CHECK(back.rows[0].si_sdr == r1.si_sdr);
  CHECK(back.rows[1].sir_defined == false);
  CHECK(back.column("lsd")[0] == r1.lsd);
  CHECK(back.aggregate_of("si_sdr").mean ==
        doctest::Approx(0.5 * (r1.si_sdr - kMetricCapDb)).epsilon(1e-12));
  CHECK_THROWS(back.column("snr"));
  // Comment lines are skipped, bad tokens rejected.
  CHECK(EvalReport::from_records("# header\n" + text).rows.size() == 2);
  CHECK_THROWS(EvalReport::from_records("id=x bogus\n"));
}

}  // TEST_SUITE
