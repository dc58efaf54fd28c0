// Forward diffusion process: drift/diffusion coefficients, transition-kernel
// moments, perturbation sampling and the Euler forward simulator.

#include <cmath>
#include <complex>
#include <vector>

#include "doctest.h"
#include "storm/rng.hpp"
#include "storm/sde.hpp"
#include "storm_oracles/oracles.hpp"
#include "test_util.hpp"

using namespace storm;

TEST_SUITE("sde") {

TEST_CASE("config validation") {
  SdeConfig cfg;
  CHECK_NOTHROW(cfg.validate());
  SdeConfig bad = cfg;
  bad.gamma = 0.0;
  CHECK_THROWS(bad.validate());
  bad = cfg;
  bad.sigma_min = 0.6;  // >= sigma_max
  CHECK_THROWS(bad.validate());
  bad = cfg;
  bad.t_eps = 0.0;
  CHECK_THROWS(bad.validate());
  bad = cfg;
  bad.t_eps = 1.5;  // >= t_max
  CHECK_THROWS(bad.validate());
}

TEST_CASE("config round trips through key-value form") {
  SdeConfig cfg;
  cfg.gamma = 2.0;
  cfg.sigma_min = 0.03;
  cfg.sigma_max = 0.7;
  cfg.t_eps = 0.05;
  const KvConfig kv = cfg.to_kv();
  const SdeConfig back = SdeConfig::from_kv(kv);
  CHECK(back.gamma == cfg.gamma);
  CHECK(back.sigma_min == cfg.sigma_min);
  CHECK(back.sigma_max == cfg.sigma_max);
  CHECK(back.t_max == cfg.t_max);
  CHECK(back.t_eps == cfg.t_eps);
}

TEST_CASE("drift pulls the state toward the corrupt anchor") {
  const SdeConfig cfg;
  CHECK(drift_scalar(0.0, 1.0, cfg) == 1.5);
  CHECK(drift_scalar(1.0, 1.0, cfg) == 0.0);
  CHECK(drift_scalar(2.0, 1.0, cfg) == -1.5);

  const ComplexSpectrogram x = test_util::make_spec(8, 6, 301);
  const ComplexSpectrogram y = test_util::make_spec(8, 6, 302);
  const ComplexSpectrogram d = drift(x, y, cfg);
  for (std::size_t i = 0; i < x.bins.size(); ++i)
    CHECK(std::abs(d.bins[i] - cfg.gamma * (y.bins[i] - x.bins[i])) <= 1e-15);
}

TEST_CASE("noise amplitude follows the geometric schedule") {
  const SdeConfig cfg;
  const double root = std::sqrt(2.0 * std::log(10.0));
  CHECK(diffusion_coeff(0.0, cfg) == doctest::Approx(0.05 * root).epsilon(1e-12));
  CHECK(diffusion_coeff(1.0, cfg) == doctest::Approx(0.5 * root).epsilon(1e-12));
  CHECK(diffusion_coeff(0.5, cfg) ==
        doctest::Approx(0.05 * std::sqrt(10.0) * root).epsilon(1e-12));
}

TEST_CASE("mean weight decays exponentially") {
  const SdeConfig cfg;
  CHECK(kernel_mean_weight(0.0, cfg) == 1.0);
  CHECK(kernel_mean_weight(0.5, cfg) ==
        doctest::Approx(std::exp(-0.75)).epsilon(1e-12));
  CHECK(kernel_mean_weight(10.0, cfg) < 1e-6);
  CHECK(terminal_mean_residual(cfg) ==
        doctest::Approx(std::exp(-1.5)).epsilon(1e-12));
}

TEST_CASE("kernel variance: boundary, growth, terminal value") {
  const SdeConfig cfg;
  CHECK(kernel_var(0.0, cfg) == 0.0);
  CHECK(kernel_std(1.0, cfg) == doctest::Approx(0.389).epsilon(2e-3));
  double prev = 0.0;
  for (int i = 1; i <= 1000; ++i) {
    const double v = kernel_var(i / 1000.0, cfg);
    CHECK(v > prev);
    prev = v;
  }
}

TEST_CASE("kernel variance matches the independent closed form") {
  const SdeConfig cfg;
  for (int i = 0; i <= 20; ++i) {
    const double tau = i / 20.0;
    const double oracle = storm_oracles::ouve_variance_closed_form(
        cfg.gamma, cfg.sigma_min, cfg.sigma_max, tau);
    CHECK(test_util::rel_err(kernel_var(tau, cfg), oracle) <= 1e-12);
  }
  // Off-default parameters too.
  SdeConfig alt;
  alt.gamma = 0.8;
  alt.sigma_min = 0.02;
  alt.sigma_max = 0.9;
  for (int i = 1; i <= 10; ++i) {
    const double tau = i / 10.0;
    const double oracle = storm_oracles::ouve_variance_closed_form(
        alt.gamma, alt.sigma_min, alt.sigma_max, tau);
    CHECK(test_util::rel_err(kernel_var(tau, alt), oracle) <= 1e-12);
  }
}

TEST_CASE("moment ODE integration agrees with the closed form") {
  const SdeConfig cfg;
  const std::vector<double> grid = {0.25, 0.5, 1.0};
  const auto moments = storm_oracles::ode_moments(
      cfg.gamma, cfg.sigma_min, cfg.sigma_max, grid, 1e-4);
  REQUIRE(moments.size() == grid.size());
  for (std::size_t i = 0; i < grid.size(); ++i) {
    CHECK(test_util::rel_err(moments[i].mean_weight,
                             kernel_mean_weight(grid[i], cfg)) <= 1e-6);
    CHECK(test_util::rel_err(moments[i].variance, kernel_var(grid[i], cfg)) <=
          1e-6);
  }
}

TEST_CASE("kernel mean interpolates between clean and corrupt") {
  const SdeConfig cfg;
  const ComplexSpectrogram x0 = test_util::make_spec(8, 6, 310);
  const ComplexSpectrogram y = test_util::make_spec(8, 6, 311);
  const double tau = 0.4;
  const double w = kernel_mean_weight(tau, cfg);
  const ComplexSpectrogram m = kernel_mean(x0, y, tau, cfg);
  for (std::size_t i = 0; i < m.bins.size(); ++i)
    CHECK(std::abs(m.bins[i] - (w * x0.bins[i] + (1.0 - w) * y.bins[i])) <=
          1e-15);
}

TEST_CASE("perturbation sampling hits the kernel moments") {
  const SdeConfig cfg;
  const double tau = 0.5;
  const ComplexSpectrogram x0 = test_util::make_spec(64, 40, 312, 0.5);
  const ComplexSpectrogram y = test_util::make_spec(64, 40, 313, 0.5);
  const ComplexSpectrogram mean = kernel_mean(x0, y, tau, cfg);
  Rng rng(314);
  const int draws = 40;
  double acc_sq = 0.0;
  std::vector<std::complex<double>> acc_mean(x0.bins.size(), {0.0, 0.0});
  for (int d = 0; d < draws; ++d) {
    const DiffusionState st = sample_perturbed(x0, y, tau, cfg, rng);
    CHECK(st.tau == tau);
    for (std::size_t i = 0; i < x0.bins.size(); ++i) {
      const auto diff = st.x.bins[i] - mean.bins[i];
      acc_mean[i] += diff;
      acc_sq += std::norm(diff);
    }
  }
  const double n = static_cast<double>(draws) * x0.bins.size();
  CHECK(test_util::rel_err(acc_sq / n, kernel_var(tau, cfg)) <= 0.03);
  double mean_dev = 0.0;
  for (const auto& m : acc_mean) mean_dev += std::norm(m / double(draws));
  // Residual mean shrinks like var/draws.
  CHECK(mean_dev / x0.bins.size() <= 4.0 * kernel_var(tau, cfg) / draws);
}

TEST_CASE("scalar perturbation is seed-deterministic") {
  const SdeConfig cfg;
  Rng a(99), b(99), c(100);
  const double xa = sample_perturbed_scalar(0.3, 1.1, 0.7, cfg, a);
  const double xb = sample_perturbed_scalar(0.3, 1.1, 0.7, cfg, b);
  const double xc = sample_perturbed_scalar(0.3, 1.1, 0.7, cfg, c);
  CHECK(xa == xb);
  CHECK(xa != xc);
}

TEST_CASE("noise-free forward simulation follows the kernel mean") {
  const SdeConfig cfg;
  Rng rng(315);
  const double x0 = 0.2, y = 1.0;
  const auto path = forward_simulate(x0, y, 2000, cfg, rng, true);
  REQUIRE(!path.empty());
  CHECK(path.front().tau == 0.0);
  CHECK(path.back().tau == doctest::Approx(cfg.t_max).epsilon(1e-12));
  const double w = kernel_mean_weight(cfg.t_max, cfg);
  const double expect = w * x0 + (1.0 - w) * y;
  CHECK(test_util::rel_err(path.back().x, expect) <= 1e-3);
}

TEST_CASE("stochastic forward simulation matches kernel std") {
  const SdeConfig cfg;
  const double x0 = 0.2, y = 1.0;
  const int paths = 4000, steps = 200;
  storm_oracles::RunningStats stats;
  for (int p = 0; p < paths; ++p) {
    Rng rng(derive_seed(316, p));
    stats.add(forward_simulate(x0, y, steps, cfg, rng).back().x);
  }
  const double w = kernel_mean_weight(cfg.t_max, cfg);
  const double expect_mean = w * x0 + (1.0 - w) * y;
  const double expect_std = kernel_std(cfg.t_max, cfg);
  // Dominant errors: MC noise (se ~ sigma/sqrt(n)) plus Euler bias.
  CHECK(std::abs(stats.mean() - expect_mean) <=
        4.0 * expect_std / std::sqrt(double(paths)) + 0.002);
  CHECK(test_util::rel_err(stats.stddev(), expect_std) <= 0.04);
}

TEST_CASE("independent Monte Carlo simulator agrees with the kernel") {
  const SdeConfig cfg;
  const auto mc = storm_oracles::mc_kernel(cfg.gamma, cfg.sigma_min,
                                           cfg.sigma_max, 0.2, 1.0, 0.5,
                                           10000, 1e-3, 424242);
  const double w = kernel_mean_weight(0.5, cfg);
  const double expect_mean = w * 0.2 + (1.0 - w) * 1.0;
  const double expect_std = kernel_std(0.5, cfg);
  CHECK(std::abs(mc.mean - expect_mean) <= 3.0 * mc.se_mean + 1e-3);
  CHECK(test_util::rel_err(mc.stddev, expect_std) <= 0.02);
}

}  // TEST_SUITE
