#include "storm_oracles/oracles.hpp"

#include <algorithm>
#include <cmath>
#include <random>
#include <stdexcept>

namespace storm_oracles {

namespace {

double g_of_tau(double gamma, double sigma_min, double sigma_max, double tau) {
  (void)gamma;
  const double k = std::log(sigma_max / sigma_min);
  return sigma_min * std::pow(sigma_max / sigma_min, tau) * std::sqrt(2.0 * k);
}

}  // namespace

OdeMoments ode_moments(double gamma, double sigma_min, double sigma_max,
                       const std::vector<double>& tau_grid, double dt) {
  if (dt > 1e-4) throw std::runtime_error("ode_moments: dt must be <= 1e-4");
  std::vector<double> grid = tau_grid;
  std::sort(grid.begin(), grid.end());
  OdeMoments out;
  out.tau = grid;
  out.mean_weight.reserve(grid.size());
  out.variance.reserve(grid.size());

  double tau = 0.0, w = 1.0, v = 0.0;
  const auto fw = [&](double wv) { return -gamma * wv; };
  const auto fv = [&](double t, double vv) {
    const double g = g_of_tau(gamma, sigma_min, sigma_max, t);
    return -2.0 * gamma * vv + g * g;
  };
  for (const double target : grid) {
    if (target < tau)
      throw std::runtime_error("ode_moments: grid must be nonnegative");
    while (tau < target) {
      const double h = std::min(dt, target - tau);
      // RK4 for both scalar ODEs in lockstep.
      const double kw1 = fw(w);
      const double kw2 = fw(w + 0.5 * h * kw1);
      const double kw3 = fw(w + 0.5 * h * kw2);
      const double kw4 = fw(w + h * kw3);
      const double kv1 = fv(tau, v);
      const double kv2 = fv(tau + 0.5 * h, v + 0.5 * h * kv1);
      const double kv3 = fv(tau + 0.5 * h, v + 0.5 * h * kv2);
      const double kv4 = fv(tau + h, v + h * kv3);
      w += h / 6.0 * (kw1 + 2.0 * kw2 + 2.0 * kw3 + kw4);
      v += h / 6.0 * (kv1 + 2.0 * kv2 + 2.0 * kv3 + kv4);
      tau += h;
    }
    out.mean_weight.push_back(w);
    out.variance.push_back(v);
  }
  return out;
}

McStats mc_kernel(double gamma, double sigma_min, double sigma_max, double x0,
                  double y, double tau, int n_paths, double dt,
                  std::uint64_t seed) {
  if (n_paths < 10000)
    throw std::runtime_error("mc_kernel: need >= 1e4 paths");
  std::mt19937_64 gen(seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  RunningStats stats;
  for (int p = 0; p < n_paths; ++p) {
    double x = x0;
    double t = 0.0;
    while (t < tau) {
      const double h = std::min(dt, tau - t);
      const double g = g_of_tau(gamma, sigma_min, sigma_max, t);
      x += gamma * (y - x) * h + g * std::sqrt(h) * normal(gen);
      t += h;
    }
    stats.add(x);
  }
  McStats s;
  s.n_paths = n_paths;
  s.mean = stats.mean();
  s.stddev = stats.stddev();
  s.se_mean = s.stddev / std::sqrt(static_cast<double>(n_paths));
  s.se_stddev = s.stddev / std::sqrt(2.0 * (n_paths - 1));
  return s;
}

double ouve_variance_closed_form(double gamma, double sigma_min,
                                 double sigma_max, double tau) {
  const double ratio = sigma_max / sigma_min;
  const double k = std::log(ratio);
  return sigma_min * sigma_min *
         (std::pow(ratio, 2.0 * tau) - std::exp(-2.0 * gamma * tau)) * k /
         (gamma + k);
}

double gaussian_marginal_mean(double gamma, double m0, double y, double tau) {
  const double w = std::exp(-gamma * tau);
  return w * m0 + (1.0 - w) * y;
}

double gaussian_marginal_var(double gamma, double sigma_min, double sigma_max,
                             double s0, double tau) {
  const double w = std::exp(-gamma * tau);
  return w * w * s0 * s0 +
         ouve_variance_closed_form(gamma, sigma_min, sigma_max, tau);
}

double gaussian_score(double x, double tau, double gamma, double sigma_min,
                      double sigma_max, double m0, double s0, double y) {
  const double mean = gaussian_marginal_mean(gamma, m0, y, tau);
  const double var = gaussian_marginal_var(gamma, sigma_min, sigma_max, s0, tau);
  return -(x - mean) / var;
}

std::vector<double> fd_gradient(
    const std::function<double(const std::vector<double>&)>& loss,
    const std::vector<double>& params, const std::vector<int>& indices,
    double h_base) {
  std::vector<double> grad;
  grad.reserve(indices.size());
  std::vector<double> p = params;
  for (const int i : indices) {
    if (i < 0 || static_cast<size_t>(i) >= p.size())
      throw std::runtime_error("fd_gradient: index out of range");
    const double orig = p[i];
    const double h = h_base * std::max(1.0, std::abs(orig));
    p[i] = orig + h;
    const double up = loss(p);
    p[i] = orig - h;
    const double down = loss(p);
    p[i] = orig;
    grad.push_back((up - down) / (2.0 * h));
  }
  return grad;
}

void RunningStats::add(double x) {
  ++n_;
  const double delta = x - mean_;
  mean_ += delta / n_;
  m2_ += delta * (x - mean_);
}

double RunningStats::mean() const { return mean_; }

double RunningStats::variance() const {
  return n_ > 1 ? m2_ / (n_ - 1) : 0.0;
}

double RunningStats::stddev() const { return std::sqrt(variance()); }

double ks_uniform_pvalue(std::vector<double> xs, double lo, double hi) {
  if (xs.size() < 5) throw std::runtime_error("ks test: too few samples");
  if (!(hi > lo)) throw std::runtime_error("ks test: invalid interval");
  std::sort(xs.begin(), xs.end());
  const double n = static_cast<double>(xs.size());
  double d = 0.0;
  for (size_t i = 0; i < xs.size(); ++i) {
    const double cdf = std::clamp((xs[i] - lo) / (hi - lo), 0.0, 1.0);
    d = std::max(d, std::abs(cdf - (i + 1) / n));
    d = std::max(d, std::abs(cdf - i / n));
  }
  // Asymptotic Kolmogorov distribution with finite-sample correction.
  const double t = (std::sqrt(n) + 0.12 + 0.11 / std::sqrt(n)) * d;
  double sum = 0.0;
  for (int j = 1; j <= 100; ++j) {
    const double term = 2.0 * (j % 2 == 1 ? 1.0 : -1.0) *
                        std::exp(-2.0 * j * j * t * t);
    sum += term;
    if (std::abs(term) < 1e-12) break;
  }
  return std::clamp(sum, 0.0, 1.0);
}

std::vector<std::complex<double>> naive_dft(const std::vector<double>& x) {
  const size_t n = x.size();
  if (n > 4096)
    throw std::runtime_error("naive_dft: refusing O(N^2) transform above 4096");
  std::vector<std::complex<double>> out(n);
  const double w0 = -2.0 * M_PI / static_cast<double>(n);
  for (size_t k = 0; k < n; ++k) {
    std::complex<double> acc(0.0, 0.0);
    for (size_t i = 0; i < n; ++i)
      acc += x[i] * std::complex<double>(std::cos(w0 * k * i),
                                         std::sin(w0 * k * i));
    out[k] = acc;
  }
  return out;
}

std::vector<std::complex<double>> fft_pow2(const std::vector<double>& x) {
  size_t n = 1;
  while (n < x.size()) n <<= 1;
  std::vector<std::complex<double>> a(n, {0.0, 0.0});
  for (size_t i = 0; i < x.size(); ++i) a[i] = x[i];
  // Bit-reversal permutation.
  for (size_t i = 1, j = 0; i < n; ++i) {
    size_t bit = n >> 1;
    for (; j & bit; bit >>= 1) j ^= bit;
    j ^= bit;
    if (i < j) std::swap(a[i], a[j]);
  }
  for (size_t len = 2; len <= n; len <<= 1) {
    const double ang = -2.0 * M_PI / static_cast<double>(len);
    const std::complex<double> wlen(std::cos(ang), std::sin(ang));
    for (size_t i = 0; i < n; i += len) {
      std::complex<double> w(1.0, 0.0);
      for (size_t k = 0; k < len / 2; ++k) {
        const std::complex<double> u = a[i + k];
        const std::complex<double> v = a[i + k + len / 2] * w;
        a[i + k] = u + v;
        a[i + k + len / 2] = u - v;
        w *= wlen;
      }
    }
  }
  return a;
}

double spectral_centroid_hz(const std::vector<double>& x, int sample_rate) {
  const auto spec = fft_pow2(x);
  const size_t n = spec.size();
  double num = 0.0, den = 0.0;
  for (size_t k = 0; k <= n / 2; ++k) {
    const double p = std::norm(spec[k]);
    const double f = static_cast<double>(k) * sample_rate / static_cast<double>(n);
    num += f * p;
    den += p;
  }
  if (den <= 0.0) return 0.0;
  return num / den;
}

double measure_t60(const std::vector<double>& h, int sample_rate) {
  if (h.empty()) throw std::runtime_error("measure_t60: empty response");
  // Schroeder backward energy integration.
  std::vector<double> edc(h.size());
  double acc = 0.0;
  for (size_t i = h.size(); i-- > 0;) {
    acc += h[i] * h[i];
    edc[i] = acc;
  }
  const double total = edc[0];
  if (total <= 0.0) throw std::runtime_error("measure_t60: zero-energy response");
  // Least-squares line through the decay between -5 dB and -35 dB.
  double sx = 0.0, sy = 0.0, sxx = 0.0, sxy = 0.0;
  long long count = 0;
  for (size_t i = 0; i < edc.size(); ++i) {
    const double db = 10.0 * std::log10(edc[i] / total + 1e-300);
    if (db <= -5.0 && db >= -35.0) {
      const double t = static_cast<double>(i) / sample_rate;
      sx += t;
      sy += db;
      sxx += t * t;
      sxy += t * db;
      ++count;
    }
  }
  if (count < 10)
    throw std::runtime_error("measure_t60: decay range too short to fit");
  const double denom = count * sxx - sx * sx;
  if (std::abs(denom) < 1e-30)
    throw std::runtime_error("measure_t60: degenerate fit");
  const double slope = (count * sxy - sx * sy) / denom;  // dB per second
  if (slope >= 0.0)
    throw std::runtime_error("measure_t60: response does not decay");
  return -60.0 / slope;
}

}  // namespace storm_oracles
