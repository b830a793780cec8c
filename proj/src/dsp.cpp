#include "b2t/dsp.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace b2t {

namespace {

using cplx = std::complex<double>;

// left-half-plane poles of the unit-cutoff analog Butterworth prototype
std::vector<cplx> prototype_poles(int order) {
  std::vector<cplx> poles;
  poles.reserve(order);
  for (int k = 0; k < order; ++k) {
    const double theta = M_PI * (2.0 * k + 1.0) / (2.0 * order) + M_PI / 2.0;
    poles.emplace_back(std::cos(theta), std::sin(theta));
  }
  return poles;
}

double prewarp(double f_hz, double fs_hz) {
  return 2.0 * fs_hz * std::tan(M_PI * f_hz / fs_hz);
}

// Group roots into conjugate pairs (plus real leftovers appended as pairs,
// possibly one (r, nan) singleton for odd counts).
struct RootPair {
  cplx first;
  cplx second;
  bool single = false;
};

std::vector<RootPair> pair_roots(std::vector<cplx> roots) {
  double scale = 1.0;
  for (const cplx& r : roots) scale = std::max(scale, std::abs(r));
  const double tol = 1e-8 * scale;

  std::vector<cplx> complex_roots;
  std::vector<double> real_roots;
  for (const cplx& r : roots) {
    if (std::fabs(r.imag()) > tol) {
      complex_roots.push_back(r);
    } else {
      real_roots.push_back(r.real());
    }
  }

  std::vector<RootPair> pairs;
  std::vector<bool> used(complex_roots.size(), false);
  // keep only upper-half-plane representatives, matched with their conjugates
  for (std::size_t i = 0; i < complex_roots.size(); ++i) {
    if (used[i] || complex_roots[i].imag() < 0.0) continue;
    used[i] = true;
    std::size_t match = complex_roots.size();
    double best = 0.0;
    for (std::size_t j = 0; j < complex_roots.size(); ++j) {
      if (used[j] || complex_roots[j].imag() >= 0.0) continue;
      const double d = std::abs(complex_roots[j] - std::conj(complex_roots[i]));
      if (match == complex_roots.size() || d < best) {
        match = j;
        best = d;
      }
    }
    if (match == complex_roots.size()) {
      throw std::runtime_error("filter design: unpaired complex root");
    }
    used[match] = true;
    pairs.push_back({complex_roots[i], complex_roots[match], false});
  }

  std::sort(real_roots.begin(), real_roots.end(), std::greater<double>());
  for (std::size_t i = 0; i + 1 < real_roots.size(); i += 2) {
    pairs.push_back({cplx(real_roots[i], 0.0), cplx(real_roots[i + 1], 0.0), false});
  }
  if (real_roots.size() % 2 == 1) {
    pairs.push_back({cplx(real_roots.back(), 0.0), cplx(0.0, 0.0), true});
  }
  return pairs;
}

// Bilinear transform of an analog zero/pole/gain design into a biquad
// cascade, with the overall gain spread evenly across sections.
BiquadCascade bilinear(const std::vector<cplx>& analog_poles,
                       const std::vector<cplx>& analog_zeros, double analog_gain,
                       double fs_hz) {
  const double k = 2.0 * fs_hz;

  cplx gain(analog_gain, 0.0);
  for (const cplx& z : analog_zeros) gain *= (k - z);
  for (const cplx& p : analog_poles) gain /= (k - p);
  double digital_gain = gain.real();

  std::vector<cplx> zeros;
  std::vector<cplx> poles;
  for (const cplx& z : analog_zeros) zeros.push_back((k + z) / (k - z));
  for (const cplx& p : analog_poles) poles.push_back((k + p) / (k - p));
  // zeros at infinity land on z = -1
  while (zeros.size() < poles.size()) zeros.emplace_back(-1.0, 0.0);

  auto pole_pairs = pair_roots(poles);
  // closest to the unit circle first
  std::sort(pole_pairs.begin(), pole_pairs.end(), [](const RootPair& a, const RootPair& b) {
    return std::abs(a.first) > std::abs(b.first);
  });

  // hand each section one zero from the front of the sorted list and one from
  // the back: a bandpass gets (+1, -1) per section, a lowpass (-1, -1)
  std::sort(zeros.begin(), zeros.end(), [](const cplx& a, const cplx& b) {
    if (a.real() != b.real()) return a.real() > b.real();
    return a.imag() > b.imag();
  });

  BiquadCascade cascade;
  cascade.fs_hz = fs_hz;
  cascade.order = static_cast<int>(analog_poles.size());

  const std::size_t n_sections = pole_pairs.size();
  const double section_gain =
      std::pow(std::fabs(digital_gain), 1.0 / static_cast<double>(n_sections));
  double sign = digital_gain < 0.0 ? -1.0 : 1.0;

  std::size_t zfront = 0;
  std::size_t zback = zeros.size();
  for (std::size_t i = 0; i < n_sections; ++i) {
    const RootPair& pp = pole_pairs[i];
    BiquadSection s;
    if (pp.single) {
      s.a1 = -pp.first.real();
      s.a2 = 0.0;
      const cplx z = zeros[zfront++];
      s.b0 = 1.0;
      s.b1 = -z.real();
      s.b2 = 0.0;
    } else {
      s.a1 = -(pp.first + pp.second).real();
      s.a2 = (pp.first * pp.second).real();
      const cplx z1 = zeros[zfront++];
      const cplx z2 = zeros[--zback];
      s.b0 = 1.0;
      s.b1 = -(z1 + z2).real();
      s.b2 = (z1 * z2).real();
    }
    const double g = section_gain * sign;
    sign = 1.0;
    s.b0 *= g;
    s.b1 *= g;
    s.b2 *= g;
    cascade.sections.push_back(s);
  }

  if (!cascade.stable()) {
    throw std::runtime_error("filter design produced an unstable cascade");
  }
  return cascade;
}

}  // namespace

std::complex<double> BiquadCascade::response(double f_hz) const {
  const double w = 2.0 * M_PI * f_hz / fs_hz;
  const cplx e1 = std::exp(cplx(0.0, -w));
  const cplx e2 = e1 * e1;
  cplx h(1.0, 0.0);
  for (const BiquadSection& s : sections) {
    h *= (s.b0 + s.b1 * e1 + s.b2 * e2) / (1.0 + s.a1 * e1 + s.a2 * e2);
  }
  return h;
}

double BiquadCascade::gain_db(double f_hz) const {
  return 20.0 * std::log10(std::abs(response(f_hz)));
}

bool BiquadCascade::stable() const {
  for (const BiquadSection& s : sections) {
    const double disc = s.a1 * s.a1 - 4.0 * s.a2;
    double radius = 0.0;
    if (disc >= 0.0) {
      const double r1 = (-s.a1 + std::sqrt(disc)) / 2.0;
      const double r2 = (-s.a1 - std::sqrt(disc)) / 2.0;
      radius = std::max(std::fabs(r1), std::fabs(r2));
    } else {
      radius = std::sqrt(s.a2);
    }
    if (!(radius < 1.0)) return false;
  }
  return true;
}

BiquadCascade design_lowpass(double cutoff_hz, double fs_hz, int order) {
  if (fs_hz <= 0.0) throw std::invalid_argument("design_lowpass: fs must be positive");
  if (!(cutoff_hz > 0.0 && cutoff_hz < fs_hz / 2.0)) {
    throw std::invalid_argument("design_lowpass: cutoff must lie in (0, fs/2)");
  }
  if (order < 1) throw std::invalid_argument("design_lowpass: order must be >= 1");

  const double wc = prewarp(cutoff_hz, fs_hz);
  std::vector<cplx> poles;
  for (const cplx& p : prototype_poles(order)) poles.push_back(wc * p);
  const double gain = std::pow(wc, order);

  BiquadCascade cascade = bilinear(poles, {}, gain, fs_hz);
  cascade.kind = FilterKind::lowpass;
  cascade.f_low_hz = cutoff_hz;
  return cascade;
}

BiquadCascade design_bandpass(double low_hz, double high_hz, double fs_hz, int order) {
  if (fs_hz <= 0.0) throw std::invalid_argument("design_bandpass: fs must be positive");
  if (!(low_hz > 0.0 && low_hz < high_hz && high_hz < fs_hz / 2.0)) {
    throw std::invalid_argument("design_bandpass: edges must satisfy 0 < low < high < fs/2");
  }
  if (order < 2 || order % 2 != 0) {
    throw std::invalid_argument("design_bandpass: order must be even and >= 2");
  }

  const int n = order / 2;  // analog prototype order; the bandpass doubles it
  const double w1 = prewarp(low_hz, fs_hz);
  const double w2 = prewarp(high_hz, fs_hz);
  const double bw = w2 - w1;
  const double w0sq = w1 * w2;

  std::vector<cplx> poles;
  for (const cplx& p : prototype_poles(n)) {
    const cplx half = 0.5 * bw * p;
    const cplx d = std::sqrt(half * half - w0sq);
    poles.push_back(half + d);
    poles.push_back(half - d);
  }
  std::vector<cplx> zeros(n, cplx(0.0, 0.0));
  const double gain = std::pow(bw, n);

  BiquadCascade cascade = bilinear(poles, zeros, gain, fs_hz);
  cascade.kind = FilterKind::bandpass;
  cascade.f_low_hz = low_hz;
  cascade.f_high_hz = high_hz;
  return cascade;
}

BiquadCascade design_notch(double f0_hz, double q, double fs_hz) {
  if (fs_hz <= 0.0) throw std::invalid_argument("design_notch: fs must be positive");
  if (!(f0_hz > 0.0 && f0_hz < fs_hz / 2.0)) {
    throw std::invalid_argument("design_notch: centre must lie in (0, fs/2)");
  }
  if (q <= 0.0) throw std::invalid_argument("design_notch: q must be positive");

  const double w0 = 2.0 * M_PI * f0_hz / fs_hz;
  const double alpha = std::sin(w0) / (2.0 * q);
  const double inv = 1.0 / (1.0 + alpha);

  BiquadSection s;
  s.b0 = inv;
  s.b1 = -2.0 * std::cos(w0) * inv;
  s.b2 = inv;
  s.a1 = s.b1;
  s.a2 = (1.0 - alpha) * inv;

  BiquadCascade cascade;
  cascade.sections.push_back(s);
  cascade.kind = FilterKind::notch;
  cascade.fs_hz = fs_hz;
  cascade.f_low_hz = f0_hz;
  cascade.q = q;
  cascade.order = 2;
  return cascade;
}

std::vector<double> filter(const BiquadCascade& cascade, const std::vector<double>& x) {
  std::vector<double> y = x;
  for (const BiquadSection& s : cascade.sections) {
    // transposed direct form II
    double z1 = 0.0, z2 = 0.0;
    for (double& v : y) {
      const double in = v;
      const double out = s.b0 * in + z1;
      z1 = s.b1 * in - s.a1 * out + z2;
      z2 = s.b2 * in - s.a2 * out;
      v = out;
    }
  }
  return y;
}

namespace {

// One causal pass with every section's delay state started at its steady
// state for the leading sample, so a constant signal passes through without
// any startup transient.
void filter_steady(const BiquadCascade& cascade, std::vector<double>& y) {
  for (const BiquadSection& s : cascade.sections) {
    const double v0 = y.empty() ? 0.0 : y.front();
    const double y0 = v0 * (s.b0 + s.b1 + s.b2) / (1.0 + s.a1 + s.a2);
    double z1 = y0 - s.b0 * v0;
    double z2 = s.b2 * v0 - s.a2 * y0;
    for (double& v : y) {
      const double in = v;
      const double out = s.b0 * in + z1;
      z1 = s.b1 * in - s.a1 * out + z2;
      z2 = s.b2 * in - s.a2 * out;
      v = out;
    }
  }
}

}  // namespace

std::vector<double> filtfilt(const BiquadCascade& cascade, const std::vector<double>& x) {
  const std::size_t pad = 3 * static_cast<std::size_t>(cascade.order);
  const std::size_t n = x.size();
  if (n <= pad) {
    throw std::invalid_argument("filtfilt: signal must be longer than 3 * filter order");
  }

  std::vector<double> ext(n + 2 * pad);
  for (std::size_t i = 0; i < pad; ++i) ext[i] = 2.0 * x[0] - x[pad - i];
  std::copy(x.begin(), x.end(), ext.begin() + pad);
  for (std::size_t i = 0; i < pad; ++i) ext[pad + n + i] = 2.0 * x[n - 1] - x[n - 2 - i];

  filter_steady(cascade, ext);
  std::reverse(ext.begin(), ext.end());
  filter_steady(cascade, ext);
  std::reverse(ext.begin(), ext.end());

  return std::vector<double>(ext.begin() + pad, ext.begin() + pad + n);
}

void filtfilt_rows(const BiquadCascade& cascade, Matrix& x) {
  std::vector<double> channel(x.cols());
  for (std::size_t r = 0; r < x.rows(); ++r) {
    std::copy(x.row(r), x.row(r) + x.cols(), channel.begin());
    const std::vector<double> filtered = filtfilt(cascade, channel);
    std::copy(filtered.begin(), filtered.end(), x.row(r));
  }
}

Recording decimate(const Recording& rec, int factor) {
  if (factor < 1) throw std::invalid_argument("decimate: factor must be >= 1");
  if (factor == 1) return rec;

  const double out_fs = rec.fs_hz / factor;
  const BiquadCascade aa = design_lowpass(0.4 * out_fs, rec.fs_hz, 8);

  const std::size_t n_out = rec.n_samples() / static_cast<std::size_t>(factor);
  Recording out;
  out.subject = rec.subject;
  out.fs_hz = out_fs;
  out.layout = rec.layout;
  out.data = Matrix(rec.n_channels(), n_out);

  std::vector<double> channel(rec.n_samples());
  for (std::size_t r = 0; r < rec.n_channels(); ++r) {
    std::copy(rec.data.row(r), rec.data.row(r) + rec.n_samples(), channel.begin());
    const std::vector<double> filtered = filtfilt(aa, channel);
    for (std::size_t k = 0; k < n_out; ++k) {
      out.data(r, k) = filtered[k * static_cast<std::size_t>(factor)];
    }
  }

  for (const Event& ev : rec.events) {
    const std::size_t sample = ev.sample / static_cast<std::size_t>(factor);
    if (sample < n_out) out.events.push_back({sample, ev.label});
  }
  return out;
}

Matrix common_average_reference(const Matrix& x) {
  if (x.rows() < 2) {
    throw std::invalid_argument("common_average_reference: needs at least two channels");
  }
  std::vector<double> mean(x.cols(), 0.0);
  for (std::size_t r = 0; r < x.rows(); ++r) {
    const double* row = x.row(r);
    for (std::size_t c = 0; c < x.cols(); ++c) mean[c] += row[c];
  }
  const double inv = 1.0 / static_cast<double>(x.rows());
  for (double& m : mean) m *= inv;

  Matrix y(x.rows(), x.cols());
  for (std::size_t r = 0; r < x.rows(); ++r) {
    const double* src = x.row(r);
    double* dst = y.row(r);
    for (std::size_t c = 0; c < x.cols(); ++c) dst[c] = src[c] - mean[c];
  }
  return y;
}

namespace {

// solve a small symmetric positive system in place by Gaussian elimination
std::vector<double> solve_dense(Matrix a, std::vector<double> b) {
  const std::size_t n = a.rows();
  for (std::size_t i = 0; i < n; ++i) {
    std::size_t pivot = i;
    for (std::size_t r = i + 1; r < n; ++r) {
      if (std::fabs(a(r, i)) > std::fabs(a(pivot, i))) pivot = r;
    }
    if (std::fabs(a(pivot, i)) < 1e-12 * (max_abs(a) > 0.0 ? max_abs(a) : 1.0)) {
      throw std::runtime_error("ocular regression system is singular");
    }
    if (pivot != i) {
      for (std::size_t c = 0; c < n; ++c) std::swap(a(i, c), a(pivot, c));
      std::swap(b[i], b[pivot]);
    }
    for (std::size_t r = i + 1; r < n; ++r) {
      const double f = a(r, i) / a(i, i);
      for (std::size_t c = i; c < n; ++c) a(r, c) -= f * a(i, c);
      b[r] -= f * b[i];
    }
  }
  std::vector<double> x(n, 0.0);
  for (std::size_t i = n; i-- > 0;) {
    double sum = b[i];
    for (std::size_t c = i + 1; c < n; ++c) sum -= a(i, c) * x[c];
    x[i] = sum / a(i, i);
  }
  return x;
}

}  // namespace

ArtifactResult remove_artifacts(const Matrix& x, double fs_hz,
                                const std::vector<std::size_t>& eog_refs,
                                double emg_threshold) {
  if (eog_refs.empty()) {
    throw std::invalid_argument("remove_artifacts: needs at least one reference channel");
  }
  if (emg_threshold <= 0.0) {
    throw std::invalid_argument("remove_artifacts: threshold must be positive");
  }
  const std::size_t n = x.cols();
  const std::size_t k = eog_refs.size();
  for (std::size_t r : eog_refs) {
    if (r >= x.rows()) throw std::invalid_argument("remove_artifacts: reference index out of range");
  }

  // reference means and degeneracy check
  std::vector<double> ref_mean(k, 0.0);
  for (std::size_t j = 0; j < k; ++j) {
    const double* row = x.row(eog_refs[j]);
    for (std::size_t c = 0; c < n; ++c) ref_mean[j] += row[c];
    ref_mean[j] /= static_cast<double>(n);
    double var = 0.0;
    for (std::size_t c = 0; c < n; ++c) {
      const double d = row[c] - ref_mean[j];
      var += d * d;
    }
    if (var / static_cast<double>(n) < 1e-24) {
      throw std::runtime_error("remove_artifacts: degenerate (constant) reference channel");
    }
  }

  // normal equations for [intercept, refs]; shared across channels
  const std::size_t m = k + 1;
  Matrix gram(m, m);
  gram(0, 0) = static_cast<double>(n);
  for (std::size_t j = 0; j < k; ++j) {
    const double* rj = x.row(eog_refs[j]);
    double s = 0.0;
    for (std::size_t c = 0; c < n; ++c) s += rj[c];
    gram(0, j + 1) = gram(j + 1, 0) = s;
    for (std::size_t j2 = j; j2 < k; ++j2) {
      const double* r2 = x.row(eog_refs[j2]);
      double dot = 0.0;
      for (std::size_t c = 0; c < n; ++c) dot += rj[c] * r2[c];
      gram(j + 1, j2 + 1) = gram(j2 + 1, j + 1) = dot;
    }
  }

  ArtifactResult out;
  out.data = x;
  for (std::size_t ch = 0; ch < x.rows(); ++ch) {
    // the reference pair itself passes through untouched
    if (std::find(eog_refs.begin(), eog_refs.end(), ch) != eog_refs.end()) continue;
    const double* row = x.row(ch);
    std::vector<double> rhs(m, 0.0);
    for (std::size_t c = 0; c < n; ++c) rhs[0] += row[c];
    for (std::size_t j = 0; j < k; ++j) {
      const double* rj = x.row(eog_refs[j]);
      double dot = 0.0;
      for (std::size_t c = 0; c < n; ++c) dot += rj[c] * row[c];
      rhs[j + 1] = dot;
    }
    const std::vector<double> beta = solve_dense(gram, rhs);
    double* dst = out.data.row(ch);
    for (std::size_t c = 0; c < n; ++c) {
      double fit = beta[0];
      for (std::size_t j = 0; j < k; ++j) fit += beta[j + 1] * x(eog_refs[j], c);
      dst[c] = row[c] - fit;
    }
  }

  // muscle bursts: cross-channel RMS envelope of the high-frequency residue
  const double env_low = 55.0;
  const double env_high = 0.45 * fs_hz;
  std::vector<double> envelope(n, 0.0);
  if (env_low < env_high) {
    const BiquadCascade hf = design_bandpass(env_low, env_high, fs_hz, 4);
    std::vector<double> channel(n);
    for (std::size_t ch = 0; ch < x.rows(); ++ch) {
      std::copy(out.data.row(ch), out.data.row(ch) + n, channel.begin());
      const std::vector<double> filtered = filtfilt(hf, channel);
      for (std::size_t c = 0; c < n; ++c) envelope[c] += filtered[c] * filtered[c];
    }
    for (double& e : envelope) e = std::sqrt(e / static_cast<double>(x.rows()));

    // 50 ms moving average smooths the rectified trace
    const std::size_t half = static_cast<std::size_t>(std::lround(0.025 * fs_hz));
    std::vector<double> smooth(n, 0.0);
    for (std::size_t c = 0; c < n; ++c) {
      const std::size_t lo = c >= half ? c - half : 0;
      const std::size_t hi = std::min(n - 1, c + half);
      double s = 0.0;
      for (std::size_t i = lo; i <= hi; ++i) s += envelope[i];
      smooth[c] = s / static_cast<double>(hi - lo + 1);
    }
    envelope.swap(smooth);
  }

  double mean = 0.0;
  for (double e : envelope) mean += e;
  mean /= static_cast<double>(n);
  double var = 0.0;
  for (double e : envelope) var += (e - mean) * (e - mean);
  const double sd = std::sqrt(var / static_cast<double>(n));

  out.flagged.assign(n, false);
  std::size_t count = 0;
  const double limit = mean + emg_threshold * sd;
  for (std::size_t c = 0; c < n; ++c) {
    if (sd > 0.0 && envelope[c] > limit) {
      out.flagged[c] = true;
      ++count;
    }
  }
  out.flagged_fraction = static_cast<double>(count) / static_cast<double>(n);
  return out;
}

EpochResult epoch_and_baseline(const Recording& rec, double window_s, double baseline_s,
                               const std::vector<bool>* flagged) {
  if (window_s <= 0.0 || baseline_s <= 0.0) {
    throw std::invalid_argument("epoch_and_baseline: window and baseline must be positive");
  }
  if (flagged && flagged->size() != rec.n_samples()) {
    throw std::invalid_argument("epoch_and_baseline: mask length disagrees with the recording");
  }
  const std::size_t w = static_cast<std::size_t>(std::lround(window_s * rec.fs_hz));
  const std::size_t b = static_cast<std::size_t>(std::lround(baseline_s * rec.fs_hz));

  EpochResult out;
  for (std::size_t idx = 0; idx < rec.events.size(); ++idx) {
    const Event& ev = rec.events[idx];
    if (ev.sample < b || ev.sample + w > rec.n_samples()) {
      out.skipped.push_back(idx);
      continue;
    }
    Epoch epoch;
    epoch.subject = rec.subject;
    epoch.label = ev.label;
    epoch.onset = ev.sample;
    epoch.fs_hz = rec.fs_hz;
    epoch.data = Matrix(rec.n_channels(), w);
    epoch.baseline = Matrix(rec.n_channels(), b);
    for (std::size_t ch = 0; ch < rec.n_channels(); ++ch) {
      const double* row = rec.data.row(ch);
      double mean = 0.0;
      for (std::size_t c = 0; c < b; ++c) mean += row[ev.sample - b + c];
      mean /= static_cast<double>(b);
      for (std::size_t c = 0; c < w; ++c) epoch.data(ch, c) = row[ev.sample + c] - mean;
      for (std::size_t c = 0; c < b; ++c) {
        epoch.baseline(ch, c) = row[ev.sample - b + c] - mean;
      }
    }
    if (flagged) {
      std::size_t count = 0;
      for (std::size_t c = 0; c < w; ++c) {
        if ((*flagged)[ev.sample + c]) ++count;
      }
      epoch.flagged_fraction = static_cast<double>(count) / static_cast<double>(w);
    }
    out.epochs.push_back(std::move(epoch));
  }
  return out;
}

}  // namespace b2t
