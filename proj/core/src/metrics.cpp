#include "storm/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>
#include <stdexcept>

#include "storm/kvconfig.hpp"

namespace storm {

namespace {

void check_lengths(const Waveform& a, const Waveform& b) {
  if (a.samples.size() != b.samples.size())
    throw std::runtime_error("metric inputs have different lengths (" +
                             std::to_string(a.samples.size()) + " vs " +
                             std::to_string(b.samples.size()) + ")");
}

double dot(const std::vector<double>& a, const std::vector<double>& b) {
  double acc = 0.0;
  for (size_t i = 0; i < a.size(); ++i) acc += a[i] * b[i];
  return acc;
}

double cap_db(double num, double den) {
  if (num <= 0.0) return -kMetricCapDb;
  if (den <= 0.0) return kMetricCapDb;
  const double db = 10.0 * std::log10(num / den);
  return std::min(kMetricCapDb, std::max(-kMetricCapDb, db));
}

}  // namespace

double si_sdr(const Waveform& estimate, const Waveform& reference) {
  check_lengths(estimate, reference);
  const double rr = dot(reference.samples, reference.samples);
  if (rr <= 0.0) throw std::runtime_error("si_sdr: zero reference");
  const double alpha = dot(estimate.samples, reference.samples) / rr;
  const double target_energy = alpha * alpha * rr;
  double err_energy = 0.0;
  for (size_t i = 0; i < estimate.samples.size(); ++i) {
    const double e = estimate.samples[i] - alpha * reference.samples[i];
    err_energy += e * e;
  }
  return cap_db(target_energy, err_energy);
}

SirSar si_sir_sar(const Waveform& estimate, const Waveform& reference_clean,
                  const Waveform& reference_noise) {
  check_lengths(estimate, reference_clean);
  check_lengths(estimate, reference_noise);
  const double rr = dot(reference_clean.samples, reference_clean.samples);
  if (rr <= 0.0) throw std::runtime_error("si_sir_sar: zero clean reference");
  const double alpha = dot(estimate.samples, reference_clean.samples) / rr;
  const double target_energy = alpha * alpha * rr;

  std::vector<double> e(estimate.samples.size());
  for (size_t i = 0; i < e.size(); ++i)
    e[i] = estimate.samples[i] - alpha * reference_clean.samples[i];

  SirSar out;
  const double nn = dot(reference_noise.samples, reference_noise.samples);
  if (nn <= 0.0) {
    out.sir_defined = false;
    out.si_sir = kMetricCapDb;
    double artif_energy = 0.0;
    for (double v : e) artif_energy += v * v;
    out.si_sar = cap_db(target_energy, artif_energy);
    return out;
  }
  const double beta = dot(e, reference_noise.samples) / nn;
  const double inter_energy = beta * beta * nn;
  double artif_energy = 0.0;
  for (size_t i = 0; i < e.size(); ++i) {
    const double a = e[i] - beta * reference_noise.samples[i];
    artif_energy += a * a;
  }
  out.si_sir = cap_db(target_energy, inter_energy);
  out.si_sar = cap_db(target_energy, artif_energy);
  return out;
}

double log_spectral_distance(const Waveform& estimate,
                             const Waveform& reference,
                             const StftConfig& cfg) {
  check_lengths(estimate, reference);
  const ComplexSpectrogram se = stft(estimate, cfg);
  const ComplexSpectrogram sr = stft(reference, cfg);
  const double floor_mag = std::pow(10.0, -80.0 / 20.0);
  double frame_acc = 0.0;
  for (int t = 0; t < se.frames; ++t) {
    double d2 = 0.0;
    for (int k = 0; k < se.freq_bins; ++k) {
      const double la =
          20.0 * std::log10(std::max(std::abs(se.at(k, t)), floor_mag));
      const double lb =
          20.0 * std::log10(std::max(std::abs(sr.at(k, t)), floor_mag));
      const double d = la - lb;
      d2 += d * d;
    }
    frame_acc += d2;  // squared per-frame L2; RMS over frames below
  }
  return std::sqrt(frame_acc / se.frames);
}

Aggregate aggregate(const std::vector<double>& values) {
  if (values.empty()) throw std::runtime_error("aggregate of empty column");
  Aggregate a;
  double acc = 0.0;
  for (double v : values) acc += v;
  a.mean = acc / values.size();
  double var = 0.0;
  for (double v : values) var += (v - a.mean) * (v - a.mean);
  a.stddev = std::sqrt(var / values.size());
  std::vector<double> sorted = values;
  std::sort(sorted.begin(), sorted.end());
  const size_t n = sorted.size();
  a.median = n % 2 == 1 ? sorted[n / 2]
                        : 0.5 * (sorted[n / 2 - 1] + sorted[n / 2]);
  return a;
}

std::vector<double> EvalReport::column(const std::string& name) const {
  std::vector<double> out;
  out.reserve(rows.size());
  for (const EvalRow& r : rows) {
    if (name == "si_sdr")
      out.push_back(r.si_sdr);
    else if (name == "si_sir")
      out.push_back(r.si_sir);
    else if (name == "si_sar")
      out.push_back(r.si_sar);
    else if (name == "lsd")
      out.push_back(r.lsd);
    else
      throw std::runtime_error("unknown report column: " + name);
  }
  return out;
}

Aggregate EvalReport::aggregate_of(const std::string& name) const {
  return aggregate(column(name));
}

std::string EvalReport::to_records() const {
  std::ostringstream os;
  for (const EvalRow& r : rows) {
    os << "id=" << r.id << " si_sdr=" << format_double(r.si_sdr)
       << " si_sir=" << format_double(r.si_sir)
       << " si_sar=" << format_double(r.si_sar)
       << " lsd=" << format_double(r.lsd) << " score_calls=" << r.score_calls
       << " predictor_calls=" << r.predictor_calls
       << " sir_defined=" << (r.sir_defined ? 1 : 0) << "\n";
  }
  return os.str();
}

EvalReport EvalReport::from_records(const std::string& text) {
  EvalReport report;
  std::istringstream is(text);
  std::string line;
  while (std::getline(is, line)) {
    if (line.empty() || line[0] == '#') continue;
    EvalRow row;
    std::istringstream ls(line);
    std::string tok;
    while (ls >> tok) {
      const size_t eq = tok.find('=');
      if (eq == std::string::npos)
        throw std::runtime_error("bad report record token: " + tok);
      const std::string key = tok.substr(0, eq);
      const std::string val = tok.substr(eq + 1);
      if (key == "id")
        row.id = val;
      else if (key == "si_sdr")
        row.si_sdr = std::stod(val);
      else if (key == "si_sir")
        row.si_sir = std::stod(val);
      else if (key == "si_sar")
        row.si_sar = std::stod(val);
      else if (key == "lsd")
        row.lsd = std::stod(val);
      else if (key == "score_calls")
        row.score_calls = std::stoll(val);
      else if (key == "predictor_calls")
        row.predictor_calls = std::stoll(val);
      else if (key == "sir_defined")
        row.sir_defined = val != "0";
      else
        throw std::runtime_error("unknown report record key: " + key);
    }
    report.rows.push_back(std::move(row));
  }
  return report;
}

std::string EvalReport::to_table() const {
  std::ostringstream os;
  os << "id                          si_sdr    si_sir    si_sar       lsd  "
        "score  pred\n";
  auto num = [](double v) {
    std::string s = format_double(v);
    if (s.size() < 9) s.insert(0, 9 - s.size(), ' ');
    return s;
  };
  for (const EvalRow& r : rows) {
    std::string id = r.id;
    if (id.size() < 24) id.append(24 - id.size(), ' ');
    os << id << "  " << num(r.si_sdr) << " " << num(r.si_sir) << " "
       << num(r.si_sar) << " " << num(r.lsd) << "  " << r.score_calls << "  "
       << r.predictor_calls << (r.sir_defined ? "" : "  (sir capped)") << "\n";
  }
  if (!rows.empty()) {
    for (const char* col : {"si_sdr", "si_sir", "si_sar", "lsd"}) {
      const Aggregate a = aggregate_of(col);
      std::string name(col);
      if (name.size() < 24) name.append(24 - name.size(), ' ');
      os << "# " << name << " mean=" << format_double(a.mean)
         << " median=" << format_double(a.median)
         << " std=" << format_double(a.stddev) << "\n";
    }
  }
  return os.str();
}

}  // namespace storm
