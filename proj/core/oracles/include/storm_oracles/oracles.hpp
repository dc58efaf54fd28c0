#pragma once

#include <complex>
#include <cstdint>
#include <functional>
#include <vector>

// Independent reference implementations used by the test suite to arbitrate
// derived numbers. Everything here is deliberately written against plain
// double / std::vector interfaces, uses the standard library's RNG rather
// than the production generator, and shares no code with the production
// library — agreement between the two is the evidence the tests rely on.
// Clarity over speed throughout.
namespace storm_oracles {

// ----- Forward-process moments -----

struct OdeMoments {
  std::vector<double> tau;
  std::vector<double> mean_weight;  // weight of x0 in the kernel mean
  std::vector<double> variance;     // per-bin total variance
};

// Classic RK4 integration of the moment ODEs of
//   dx = gamma*(y - x) dtau + g(tau) dw:
//     d(mean_weight)/dtau = -gamma * mean_weight,   mean_weight(0) = 1
//     d(variance)/dtau    = -2*gamma*variance + g(tau)^2,  variance(0) = 0
// evaluated on the given grid with internal step dt (<= 1e-4 for the
// advertised <= 1e-8 absolute accuracy).
OdeMoments ode_moments(double gamma, double sigma_min, double sigma_max,
                       const std::vector<double>& tau_grid, double dt = 1e-4);

struct McStats {
  double mean = 0.0;
  double stddev = 0.0;
  double se_mean = 0.0;    // standard error of the mean
  double se_stddev = 0.0;  // standard error of the std estimate (normal approx)
  int n_paths = 0;
};

// Euler-Maruyama ensemble of the real scalar forward process from x0 to time
// tau with step dt; reports empirical moments with standard errors.
McStats mc_kernel(double gamma, double sigma_min, double sigma_max, double x0,
                  double y, double tau, int n_paths, double dt,
                  std::uint64_t seed);

// ----- Gaussian toy marginal (prior x0 ~ N(m0, s0^2)) -----

double ouve_variance_closed_form(double gamma, double sigma_min,
                                 double sigma_max, double tau);
double gaussian_marginal_mean(double gamma, double m0, double y, double tau);
double gaussian_marginal_var(double gamma, double sigma_min, double sigma_max,
                             double s0, double tau);
// Exact score of the Gaussian marginal: -(x - mean)/var.
double gaussian_score(double x, double tau, double gamma, double sigma_min,
                      double sigma_max, double m0, double s0, double y);

// ----- Gradient reference -----

// Central finite differences f(p+h) - f(p-h) / 2h at the given parameter
// indices, h = h_base * max(1, |p|). The loss function must be deterministic.
std::vector<double> fd_gradient(
    const std::function<double(const std::vector<double>&)>& loss,
    const std::vector<double>& params, const std::vector<int>& indices,
    double h_base = 1e-5);

// ----- Statistics -----

struct RunningStats {
  void add(double x);
  double mean() const;
  double variance() const;  // unbiased
  double stddev() const;
  long long count() const { return n_; }

 private:
  long long n_ = 0;
  double mean_ = 0.0;
  double m2_ = 0.0;
};

// Two-sided Kolmogorov-Smirnov p-value for the hypothesis that xs is drawn
// from U(lo, hi). Asymptotic Kolmogorov distribution with the standard
// finite-sample correction.
double ks_uniform_pvalue(std::vector<double> xs, double lo, double hi);

// ----- Spectral measurement -----

// Naive O(N^2) DFT (N <= 4096 guard) — the arbitration reference for FFT
// outputs.
std::vector<std::complex<double>> naive_dft(const std::vector<double>& x);

// Iterative radix-2 FFT (zero-padded to the next power of two) for cheap
// magnitude-spectrum measurements on long signals.
std::vector<std::complex<double>> fft_pow2(const std::vector<double>& x);

// Energy-weighted mean frequency in Hz.
double spectral_centroid_hz(const std::vector<double>& x, int sample_rate);

// ----- Room-acoustics measurement -----

// Reverberation time via Schroeder backward integration with a least-squares
// line fit on the decay between -5 dB and -35 dB, extrapolated to -60 dB.
double measure_t60(const std::vector<double>& h, int sample_rate);

}  // namespace storm_oracles
