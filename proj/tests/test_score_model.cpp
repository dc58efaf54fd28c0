// Score network wrapper, channel packing, the denoising objective and its
// gradients, parameter averaging, and the analytic Gaussian reference score.

#include <cmath>
#include <complex>
#include <vector>

#include "doctest.h"
#include "storm/rng.hpp"
#include "storm/score_model.hpp"
#include "storm_oracles/oracles.hpp"
#include "test_util.hpp"

using namespace storm;

TEST_SUITE("score_model") {

TEST_CASE("conditioning modes enumerate their planes") {
  CHECK(conditioning_plane_count(ConditioningMode::kNoisy) == 1);
  CHECK(conditioning_plane_count(ConditioningMode::kPostDenoiser) == 1);
  CHECK(conditioning_plane_count(ConditioningMode::kBoth) == 2);
  for (auto m : {ConditioningMode::kNoisy, ConditioningMode::kPostDenoiser,
                 ConditioningMode::kBoth})
    CHECK(conditioning_mode_from_string(to_string(m)) == m);
  CHECK_THROWS(conditioning_mode_from_string("sideband"));
  ScoreNetConfig cfg;
  cfg.conditioning = ConditioningMode::kBoth;
  CHECK(cfg.input_channels() == 6);
  cfg.conditioning = ConditioningMode::kNoisy;
  CHECK(cfg.input_channels() == 4);
}

TEST_CASE("plane packing pads to multiples of four and round trips") {
  CHECK(pad_to4(1) == 4);
  CHECK(pad_to4(4) == 4);
  CHECK(pad_to4(5) == 8);
  const ComplexSpectrogram a = test_util::make_spec(5, 7, 601);
  const ComplexSpectrogram b = test_util::make_spec(5, 7, 602);
  nn::FeatureMap<float> m;
  pack_planes<float>({&a, &b}, m);
  CHECK(m.h == 8);
  CHECK(m.w == 8);
  CHECK(m.c == 4);
  // Padding region is zero.
  for (int y = 0; y < m.h; ++y)
    for (int x = 0; x < m.w; ++x)
      if (y >= 5 || x >= 7)
        for (int c = 0; c < m.c; ++c) CHECK(m.at(y, x)[c] == 0.0f);
  ComplexSpectrogram back(5, 7);
  unpack_plane<float>(m, 1, back);
  for (int k = 0; k < 5; ++k)
    for (int t = 0; t < 7; ++t)
      CHECK(std::abs(back.at(k, t) -
                     std::complex<double>(static_cast<float>(b.at(k, t).real()),
                                          static_cast<float>(b.at(k, t).imag())))
            <= 1e-12);
}

TEST_CASE("score wrapper validates its inputs") {
  ScoreNetConfig cfg;
  cfg.base_channels = 4;
  cfg.emb_dim = 8;
  cfg.conditioning = ConditioningMode::kBoth;
  ScoreModel model(cfg, 42);
  CHECK(model.parameter_count() > 0);
  const ComplexSpectrogram x = test_util::make_spec(8, 8, 603);
  const ComplexSpectrogram y = test_util::make_spec(8, 8, 604);
  const ComplexSpectrogram d = test_util::make_spec(8, 8, 605);
  CHECK_THROWS(model.score(x, {&y}, 0.3));          // kBoth wants two planes
  CHECK_THROWS(model.score(x, {&y, &d}, 0.0));      // sigma must be positive
  const ComplexSpectrogram s1 = model.score(x, {&y, &d}, 0.3);
  CHECK(s1.freq_bins == x.freq_bins);
  CHECK(s1.frames == x.frames);
  const ComplexSpectrogram s2 = model.score(x, {&y, &d}, 0.3);
  for (std::size_t i = 0; i < s1.bins.size(); ++i)
    CHECK(s1.bins[i] == s2.bins[i]);  // repeat evaluation is bitwise stable
}

TEST_CASE("identical seeds build identical models") {
  ScoreNetConfig cfg;
  cfg.base_channels = 4;
  cfg.emb_dim = 8;
  ScoreModel a(cfg, 7), b(cfg, 7), c(cfg, 8);
  CHECK(a.parameters() == b.parameters());
  CHECK(a.parameters() != c.parameters());
}

TEST_CASE("objective vanishes when the network guesses the noise") {
  const auto z = test_util::make_map<double>(8, 8, 2, 606);
  nn::FeatureMap<double> raw;
  raw.resize(8, 8, 2);
  for (int y = 0; y < 8; ++y)
    for (int x = 0; x < 8; ++x) {
      raw.at(y, x)[0] = -z.at(y, x)[0];
      raw.at(y, x)[1] = -z.at(y, x)[1];
    }
  CHECK(dsm_loss_from_raw(raw, z, 0.21) == 0.0);
}

TEST_CASE("objective for the zero model averages to one over variance") {
  // raw == 0 -> per-item loss (1/d) sum |z|^2 / sigma^2, expectation 1/sigma^2.
  const double sigma = 0.37;
  nn::FeatureMap<double> raw;
  raw.resize(8, 8, 2);
  storm_oracles::RunningStats stats;
  for (int i = 0; i < 10000; ++i) {
    Rng rng(derive_seed(607, i));
    nn::FeatureMap<double> z;
    draw_complex_noise_map<double>(8, 8, rng, z);
    stats.add(dsm_loss_from_raw(raw, z, sigma));
  }
  CHECK(test_util::rel_err(stats.mean(), 1.0 / (sigma * sigma)) <= 0.03);
}

TEST_CASE("objective rejects shape mismatches") {
  const auto z = test_util::make_map<double>(8, 8, 2, 608);
  const auto raw = test_util::make_map<double>(8, 4, 2, 609);
  CHECK_THROWS(dsm_loss_from_raw(raw, z, 0.3));
}

TEST_CASE("denoising gradient matches finite differences") {
  const auto rep = test_util::fd_check_dsm(100);
  CHECK(rep.checked >= 100);
  CHECK(rep.max_rel_err <= 1e-4);
}

TEST_CASE("parameter averaging follows the exponential recurrence") {
  std::vector<float> params = {1.0f, -2.0f, 3.0f};
  std::vector<float> shadow = {0.0f, 0.0f, 0.0f};
  auto s0 = shadow;
  nn::ema_update<float>(s0, params, 0.0);
  CHECK(s0 == params);  // decay 0 copies
  auto s1 = shadow;
  nn::ema_update<float>(s1, params, 1.0);
  CHECK(s1 == shadow);  // decay 1 freezes
  // Constant target: gap shrinks geometrically.
  std::vector<float> s = {0.0f};
  std::vector<float> p = {1.0f};
  const double decay = 0.9;
  for (int k = 1; k <= 5; ++k) {
    nn::ema_update<float>(s, p, decay);
    CHECK(std::abs(s[0] - (1.0 - std::pow(decay, k))) <= 1e-6);
  }
  std::vector<float> wrong = {0.0f, 0.0f};
  CHECK_THROWS(nn::ema_update<float>(wrong, p, 0.9));
}

TEST_CASE("prior-smeared variance matches the independent oracle") {
  const SdeConfig cfg;
  for (double s0 : {0.0, 0.1, 0.5})
    for (int i = 1; i <= 10; ++i) {
      const double tau = i / 10.0;
      const double oracle = storm_oracles::gaussian_marginal_var(
          cfg.gamma, cfg.sigma_min, cfg.sigma_max, s0, tau);
      CHECK(test_util::rel_err(gaussian_marginal_variance(tau, s0, cfg),
                               oracle) <= 1e-12);
    }
}

TEST_CASE("prior-smeared variance matches Monte Carlo") {
  const SdeConfig cfg;
  const double tau = 0.6, m0 = 0.4, s0 = 0.25, y = 1.0;
  const double w = kernel_mean_weight(tau, cfg);
  const double sigma = kernel_std(tau, cfg);
  Rng rng(610);
  storm_oracles::RunningStats stats;
  for (int i = 0; i < 200000; ++i) {
    const double x0 = m0 + s0 * rng.normal();
    stats.add(w * x0 + (1.0 - w) * y + sigma * rng.normal());
  }
  CHECK(test_util::rel_err(stats.variance(),
                           gaussian_marginal_variance(tau, s0, cfg)) <= 0.02);
  const double expect_mean = w * m0 + (1.0 - w) * y;
  CHECK(std::abs(stats.mean() - expect_mean) <=
        4.0 * stats.stddev() / std::sqrt(200000.0));
}

TEST_CASE("analytic Gaussian score vanishes at the marginal mean") {
  const SdeConfig cfg;
  const double tau = 0.5, s0 = 0.2;
  const std::complex<double> m0{0.3, -0.4};
  ComplexSpectrogram y(4, 4);
  for (auto& b : y.bins) b = {1.0, 0.5};
  const double w = kernel_mean_weight(tau, cfg);
  ComplexSpectrogram x(4, 4);
  for (std::size_t i = 0; i < x.bins.size(); ++i)
    x.bins[i] = w * m0 + (1.0 - w) * y.bins[i];
  const ComplexSpectrogram s = analytic_gaussian_score(x, tau, m0, s0, y, cfg);
  for (const auto& b : s.bins) CHECK(std::abs(b) <= 1e-12);
}

TEST_CASE("analytic Gaussian score degenerates to the kernel score") {
  // Point prior (s0 = 0): score = -(x - kernel mean) / kernel var.
  const SdeConfig cfg;
  const double tau = 0.7;
  const std::complex<double> m0{0.2, 0.1};
  const ComplexSpectrogram y = test_util::make_spec(4, 4, 611);
  const ComplexSpectrogram x = test_util::make_spec(4, 4, 612);
  const ComplexSpectrogram s = analytic_gaussian_score(x, tau, m0, 0.0, y, cfg);
  const double w = kernel_mean_weight(tau, cfg);
  const double var = kernel_var(tau, cfg);
  for (std::size_t i = 0; i < x.bins.size(); ++i) {
    const auto mean = w * m0 + (1.0 - w) * y.bins[i];
    const auto expect = -(x.bins[i] - mean) / var;
    CHECK(std::abs(s.bins[i] - expect) <= 1e-12 * std::max(1.0, std::abs(expect)));
  }
}

TEST_CASE("analytic score agrees with the oracle implementation") {
  const SdeConfig cfg;
  const double tau = 0.45, s0 = 0.3;
  const std::complex<double> m0{0.25, 0.0};
  const ComplexSpectrogram y = test_util::make_spec(4, 4, 613);
  const ComplexSpectrogram x = test_util::make_spec(4, 4, 614);
  const ComplexSpectrogram s = analytic_gaussian_score(x, tau, m0, s0, y, cfg);
  for (std::size_t i = 0; i < x.bins.size(); ++i) {
    // Both implementations divide the residual by the same total variance,
    // so the complex score decomposes componentwise onto the scalar formula.
    const double sr = storm_oracles::gaussian_score(
        x.bins[i].real(), tau, cfg.gamma, cfg.sigma_min, cfg.sigma_max,
        m0.real(), s0, y.bins[i].real());
    const double si = storm_oracles::gaussian_score(
        x.bins[i].imag(), tau, cfg.gamma, cfg.sigma_min, cfg.sigma_max,
        m0.imag(), s0, y.bins[i].imag());
    CHECK(test_util::rel_err(s.bins[i].real(), sr) <= 1e-9);
    CHECK(test_util::rel_err(s.bins[i].imag(), si) <= 1e-9);
  }
}

}  // TEST_SUITE
