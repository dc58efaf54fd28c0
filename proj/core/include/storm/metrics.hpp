#pragma once

#include <string>
#include <vector>

#include "storm/spectral.hpp"
#include "storm/wav.hpp"

namespace storm {

// All ratios are reported in dB and capped at +/-100 dB so degenerate cases
// (zero error, zero target projection) stay finite.
inline constexpr double kMetricCapDb = 100.0;

// Scale-invariant signal-to-distortion ratio. The reference-aligned target is
// the projection s_target = <e,r>r/||r||^2; the value is
// 10*log10(||s_target||^2 / ||e - s_target||^2). Invariant to positive
// scaling of the estimate. Throws on length mismatch or an all-zero
// reference.
double si_sdr(const Waveform& estimate, const Waveform& reference);

struct SirSar {
  double si_sir = 0.0;
  double si_sar = 0.0;
  // False when the noise reference is all zeros: the interference projection
  // is undefined and si_sir is reported at the cap.
  bool sir_defined = true;
};

// Error decomposition against a single noise reference: with
// e = estimate - s_target, the interference part is the projection of e onto
// the noise reference and the artifact part is the remainder. The pieces are
// orthogonal, so ||e||^2 == ||e_inter||^2 + ||e_artif||^2 holds exactly.
SirSar si_sir_sar(const Waveform& estimate, const Waveform& reference_clean,
                  const Waveform& reference_noise);

// Root-mean-square over frames of the per-frame L2 distance between
// log-magnitude spectra, with magnitudes floored at -80 dB before the log.
// Identical signals (including silence vs silence) score 0.
double log_spectral_distance(const Waveform& estimate,
                             const Waveform& reference,
                             const StftConfig& cfg = StftConfig{});

// ----- Evaluation report -----

struct EvalRow {
  std::string id;
  double si_sdr = 0.0;
  double si_sir = 0.0;
  double si_sar = 0.0;
  double lsd = 0.0;
  long long score_calls = 0;
  long long predictor_calls = 0;
  bool sir_defined = true;
};

struct Aggregate {
  double mean = 0.0;
  double median = 0.0;
  double stddev = 0.0;  // population standard deviation
};

Aggregate aggregate(const std::vector<double>& values);

struct EvalReport {
  std::vector<EvalRow> rows;

  // name in {si_sdr, si_sir, si_sar, lsd}
  std::vector<double> column(const std::string& name) const;
  Aggregate aggregate_of(const std::string& name) const;

  // Line-delimited key=value records, one row per line; deterministic bytes.
  std::string to_records() const;
  static EvalReport from_records(const std::string& text);

  // Human-readable table with a mean/median/std footer (recomputed from the
  // rows, never stored).
  std::string to_table() const;
};

}  // namespace storm
