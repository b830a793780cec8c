#pragma once

#include <complex>
#include <cstddef>
#include <vector>

#include "b2t/linalg.hpp"
#include "b2t/recording.hpp"

namespace b2t {

// One second-order IIR section with coefficients normalized so a0 == 1:
//   y[n] = b0 x[n] + b1 x[n-1] + b2 x[n-2] - a1 y[n-1] - a2 y[n-2]
struct BiquadSection {
  double b0 = 0.0, b1 = 0.0, b2 = 0.0;
  double a1 = 0.0, a2 = 0.0;
};

enum class FilterKind { lowpass, bandpass, notch };

// Cascade of biquad sections plus the design it came from. `order` is the
// number of digital poles (2 per section).
struct BiquadCascade {
  std::vector<BiquadSection> sections;
  FilterKind kind = FilterKind::lowpass;
  double fs_hz = 0.0;
  double f_low_hz = 0.0;   // lowpass cutoff / bandpass lower edge / notch f0
  double f_high_hz = 0.0;  // bandpass upper edge; unused otherwise
  double q = 0.0;          // notch quality factor; unused otherwise
  int order = 0;

  // complex frequency response at f_hz for a single pass
  std::complex<double> response(double f_hz) const;
  double gain_db(double f_hz) const;

  // every pole strictly inside the unit circle
  bool stable() const;
};

// Butterworth designs via the analog prototype, frequency prewarping and the
// bilinear transform. Cutoffs are the exact -3 dB points of a single pass.
// `order` is the analog prototype order; a bandpass of prototype order n has
// 2n digital poles. Throws std::invalid_argument for cutoffs outside
// (0, fs/2), inverted edges, or an odd/nonpositive order.
BiquadCascade design_lowpass(double cutoff_hz, double fs_hz, int order);
BiquadCascade design_bandpass(double low_hz, double high_hz, double fs_hz, int order);

// Single-section notch with unity DC gain and a true zero at f0.
BiquadCascade design_notch(double f0_hz, double q, double fs_hz);

// one causal pass, zero initial state
std::vector<double> filter(const BiquadCascade& cascade, const std::vector<double>& x);

// Zero-phase forward-backward pass using odd-symmetric reflection padding of
// 3 * order samples at each end, with each section's state started at its
// steady-state response to the leading sample; magnitude response is |H|^2
// and constants pass through unchanged. Throws if the signal is not longer
// than the padding.
std::vector<double> filtfilt(const BiquadCascade& cascade, const std::vector<double>& x);

// filtfilt applied to every row (channel) of a matrix, in place
void filtfilt_rows(const BiquadCascade& cascade, Matrix& x);

// Integer-factor downsampling with a Butterworth anti-alias low-pass
// (cutoff 0.4 * output rate, order 8) applied zero-phase first. Event sample
// indices are divided by the factor. Output length is floor(n / factor).
Recording decimate(const Recording& rec, int factor);

// Re-reference every sample to the instantaneous mean across channels.
// Requires at least two channels. Idempotent up to roundoff.
Matrix common_average_reference(const Matrix& x);

struct ArtifactResult {
  Matrix data;                     // cleaned EEG, same shape as the input
  std::vector<bool> flagged;       // per-sample muscle-activity mask
  double flagged_fraction = 0.0;
};

// Ocular artifact removal by least-squares regression of every channel on the
// reference channels (plus an intercept), followed by muscle-burst flagging:
// samples whose cross-channel high-frequency envelope exceeds
// mean + emg_threshold * std are marked in `flagged` (never deleted).
// Throws if a reference channel is degenerate (zero variance) or an index is
// out of range.
ArtifactResult remove_artifacts(const Matrix& x, double fs_hz,
                                const std::vector<std::size_t>& eog_refs,
                                double emg_threshold);

// One baseline-corrected trial. `data` covers [onset, onset + window) and
// `baseline` the pre-onset interval used for the correction; both have the
// per-channel baseline mean subtracted.
struct Epoch {
  int subject = 0;
  int label = 0;
  std::size_t onset = 0;
  double fs_hz = 0.0;
  Matrix data;
  Matrix baseline;
  double flagged_fraction = 0.0;  // share of window samples EMG-flagged
};

struct EpochResult {
  std::vector<Epoch> epochs;
  std::vector<std::size_t> skipped;  // indices into rec.events that did not fit
};

// Cut window_s seconds from each event onset, subtract the per-channel mean
// of the baseline_s seconds before the onset. Events whose window or baseline
// falls outside the recording are skipped, not an error.
EpochResult epoch_and_baseline(const Recording& rec, double window_s, double baseline_s,
                               const std::vector<bool>* flagged = nullptr);

}  // namespace b2t
