#include "doctest.h"

#include <cmath>
#include <vector>

#include "b2t/dsp.hpp"
#include "b2t/rng.hpp"

using namespace b2t;

namespace {

std::vector<double> sine(double f_hz, double fs_hz, std::size_t n, double amp = 1.0) {
  std::vector<double> x(n);
  for (std::size_t t = 0; t < n; ++t) {
    x[t] = amp * std::sin(2.0 * M_PI * f_hz * static_cast<double>(t) / fs_hz);
  }
  return x;
}

// amplitude of the f component by projection onto the quadrature pair
double tone_amplitude(const std::vector<double>& x, double f_hz, double fs_hz,
                      std::size_t from, std::size_t to) {
  double s = 0.0, c = 0.0;
  for (std::size_t t = from; t < to; ++t) {
    const double phase = 2.0 * M_PI * f_hz * static_cast<double>(t) / fs_hz;
    s += x[t] * std::sin(phase);
    c += x[t] * std::cos(phase);
  }
  const double half = static_cast<double>(to - from) / 2.0;
  return std::sqrt(s * s + c * c) / half;
}

}  // namespace

TEST_SUITE_BEGIN("dsp");

TEST_CASE("band-pass hits -3 dB at both cutoffs and stays flat mid-band") {
  const struct { double lo, hi, fs; int order; } designs[] = {
      {30.0, 120.0, 1000.0, 4},
      {8.0, 30.0, 250.0, 6},
      {0.5, 125.0, 1000.0, 4},
  };
  for (const auto& d : designs) {
    const BiquadCascade bp = design_bandpass(d.lo, d.hi, d.fs, d.order);
    CHECK(bp.stable());
    CHECK(bp.gain_db(d.lo) == doctest::Approx(-3.0103).epsilon(0.15));
    CHECK(std::fabs(bp.gain_db(d.lo) + 3.0) < 0.5);
    CHECK(std::fabs(bp.gain_db(d.hi) + 3.0) < 0.5);
  }

  const BiquadCascade bp = design_bandpass(30.0, 120.0, 1000.0, 4);
  const double mid = bp.gain_db(60.0);
  CHECK(mid <= 0.0);
  CHECK(mid >= -1.0);
  CHECK(bp.gain_db(1.0) < -40.0);
  CHECK(bp.gain_db(450.0) < -40.0);
}

TEST_CASE("band-pass design rejects bad parameters") {
  CHECK_THROWS_AS(design_bandpass(30.0, 120.0, 1000.0, 3), std::invalid_argument);
  CHECK_THROWS_AS(design_bandpass(30.0, 120.0, 1000.0, 0), std::invalid_argument);
  CHECK_THROWS_AS(design_bandpass(120.0, 30.0, 1000.0, 4), std::invalid_argument);
  CHECK_THROWS_AS(design_bandpass(30.0, 600.0, 1000.0, 4), std::invalid_argument);
}

TEST_CASE("notch kills the target and spares the half frequency") {
  const BiquadCascade notch = design_notch(60.0, 35.0, 1000.0);
  CHECK(notch.stable());
  CHECK(notch.gain_db(60.0) <= -40.0);
  CHECK(std::fabs(notch.gain_db(30.0)) <= 0.5);
  CHECK(std::fabs(notch.gain_db(1e-6)) < 1e-6);  // unit DC gain

  const BiquadCascade n120 = design_notch(120.0, 35.0, 250.0);
  CHECK(n120.gain_db(120.0) <= -40.0);
  CHECK(std::fabs(n120.gain_db(60.0)) <= 0.5);
}

TEST_CASE("low-pass basics") {
  const BiquadCascade lp = design_lowpass(40.0, 1000.0, 4);
  CHECK(lp.stable());
  CHECK(std::fabs(lp.gain_db(1e-6)) < 1e-6);
  CHECK(std::fabs(lp.gain_db(40.0) + 3.0103) < 0.1);
  CHECK(lp.gain_db(200.0) < -40.0);
  CHECK_THROWS_AS(design_lowpass(600.0, 1000.0, 4), std::invalid_argument);
}

TEST_CASE("filtfilt is zero-phase and preserves DC") {
  const BiquadCascade lp = design_lowpass(40.0, 1000.0, 4);

  std::vector<double> impulse(1001, 0.0);
  impulse[500] = 1.0;
  const std::vector<double> y = filtfilt(lp, impulse);
  std::size_t peak = 0;
  for (std::size_t t = 1; t < y.size(); ++t) {
    if (y[t] > y[peak]) peak = t;
  }
  CHECK(peak == 500);
  // symmetric response around the impulse
  for (std::size_t d = 1; d < 100; ++d) {
    CHECK(y[500 + d] == doctest::Approx(y[500 - d]).epsilon(1e-9));
  }

  const std::vector<double> flat(2000, 3.5);
  const std::vector<double> yflat = filtfilt(lp, flat);
  for (double v : yflat) CHECK(std::fabs(v - 3.5) < 1e-6);
}

TEST_CASE("filtfilt is linear") {
  Rng rng(5);
  const BiquadCascade bp = design_bandpass(8.0, 30.0, 250.0, 4);
  std::vector<double> a(512), b(512), sum(512);
  for (std::size_t t = 0; t < a.size(); ++t) {
    a[t] = rng.gaussian();
    b[t] = rng.gaussian();
    sum[t] = 2.0 * a[t] - 0.5 * b[t];
  }
  const std::vector<double> ya = filtfilt(bp, a);
  const std::vector<double> yb = filtfilt(bp, b);
  const std::vector<double> ysum = filtfilt(bp, sum);
  for (std::size_t t = 0; t < a.size(); ++t) {
    CHECK(ysum[t] == doctest::Approx(2.0 * ya[t] - 0.5 * yb[t]).epsilon(1e-9));
  }
}

TEST_CASE("filtfilt applies the squared magnitude response") {
  const BiquadCascade bp = design_bandpass(30.0, 120.0, 1000.0, 4);
  for (double f : {20.0, 60.0, 150.0}) {
    const std::size_t n = 8000;
    const std::vector<double> y = filtfilt(bp, sine(f, 1000.0, n));
    const double expected = std::pow(std::abs(bp.response(f)), 2.0);
    const double measured = tone_amplitude(y, f, 1000.0, 2000, 6000);
    CHECK(measured == doctest::Approx(expected).epsilon(1e-3));
  }
}

TEST_CASE("filtfilt needs enough samples for its padding") {
  const BiquadCascade lp = design_lowpass(40.0, 1000.0, 4);  // pad = 12
  CHECK_THROWS_AS(filtfilt(lp, std::vector<double>(12, 1.0)), std::invalid_argument);
  CHECK_NOTHROW(filtfilt(lp, std::vector<double>(13, 1.0)));
}

TEST_CASE("decimate keeps 10 Hz and rejects 200 Hz at 1000 to 250 Hz") {
  const std::size_t n = 4000;
  std::vector<double> x(n);
  for (std::size_t t = 0; t < n; ++t) {
    const double s = static_cast<double>(t) / 1000.0;
    x[t] = std::sin(2.0 * M_PI * 10.0 * s) + std::sin(2.0 * M_PI * 200.0 * s);
  }
  Recording rec;
  rec.subject = 0;
  rec.fs_hz = 1000.0;
  rec.layout.names = {"a"};
  rec.layout.positions = {{0.0, 0.0}};
  rec.data = Matrix(1, n);
  for (std::size_t t = 0; t < n; ++t) rec.data(0, 0 + t) = x[t];
  rec.events = {{1000, 3}, {3996, 4}};

  const Recording out = decimate(rec, 4);
  CHECK(out.fs_hz == 250.0);
  CHECK(out.n_samples() == 1000);
  REQUIRE(out.events.size() == 2);
  CHECK(out.events[0].sample == 250);
  CHECK(out.events[1].sample == 999);
  CHECK(out.events[1].label == 4);

  std::vector<double> y(out.n_samples());
  for (std::size_t t = 0; t < y.size(); ++t) y[t] = out.data(0, t);
  const double keep = tone_amplitude(y, 10.0, 250.0, 100, 900);
  CHECK(std::fabs(keep - 1.0) < 0.01);  // within 1 percent
  // 200 Hz folds onto 50 Hz after the rate change; require 40 dB suppression
  const double alias = tone_amplitude(y, 50.0, 250.0, 100, 900);
  CHECK(alias < 0.01);
}

TEST_CASE("decimate drops events beyond the shortened end and keeps factor 1 exact") {
  Recording rec;
  rec.subject = 0;
  rec.fs_hz = 1000.0;
  rec.layout.names = {"a"};
  rec.layout.positions = {{0.0, 0.0}};
  rec.data = Matrix(1, 1003);
  for (std::size_t t = 0; t < 1003; ++t) {
    rec.data(0, t) = std::sin(2.0 * M_PI * 7.0 * static_cast<double>(t) / 1000.0);
  }
  rec.events = {{800, 3}, {1002, 1}};

  const Recording out = decimate(rec, 4);
  CHECK(out.n_samples() == 250);
  CHECK(out.fs_hz == 250.0);
  // 800 / 4 = 200 stays in range; 1002 / 4 = 250 falls off the shortened end
  REQUIRE(out.events.size() == 1);
  CHECK(out.events[0].sample == 200);
  CHECK(out.events[0].label == 3);

  // factor 1 is an exact copy, even for signals too short to filter
  Recording tiny;
  tiny.fs_hz = 100.0;
  tiny.data = Matrix(1, 10);
  for (std::size_t t = 0; t < 10; ++t) tiny.data(0, t) = static_cast<double>(t);
  const Recording same = decimate(tiny, 1);
  CHECK(same.data == tiny.data);
  CHECK_THROWS_AS(decimate(tiny, 0), std::invalid_argument);
}

TEST_CASE("common average reference") {
  Matrix x(2, 2);
  x(0, 0) = 1; x(0, 1) = 2; x(1, 0) = 3; x(1, 1) = 4;
  const Matrix y = common_average_reference(x);
  CHECK(y(0, 0) == -1);
  CHECK(y(0, 1) == -1);
  CHECK(y(1, 0) == 1);
  CHECK(y(1, 1) == 1);

  Rng rng(17);
  Matrix big(8, 512);
  for (double& v : big.data()) v = 50.0 * rng.gaussian();
  const Matrix ref = common_average_reference(big);
  for (std::size_t t = 0; t < ref.cols(); ++t) {
    double mean = 0.0;
    for (std::size_t ch = 0; ch < ref.rows(); ++ch) mean += ref(ch, t);
    mean /= static_cast<double>(ref.rows());
    CHECK(std::fabs(mean) < 1e-12);
  }

  // idempotent
  const Matrix twice = common_average_reference(ref);
  CHECK(max_abs(twice - ref) < 1e-12);

  CHECK_THROWS_AS(common_average_reference(Matrix(1, 4)), std::invalid_argument);
}

TEST_CASE("ocular regression removes the reference pattern from other channels") {
  Rng rng(23);
  const std::size_t n = 2000;
  const double fs = 250.0;

  // two reference channels see the blink directly, the others a scaled copy
  std::vector<double> blink(n, 0.0);
  for (std::size_t k = 200; k < n; k += 600) {
    for (std::size_t t = 0; t < 75 && k + t < n; ++t) {
      blink[k + t] += 80.0 * 0.5 * (1.0 - std::cos(2.0 * M_PI * t / 75.0));
    }
  }
  Matrix x(4, n);
  std::vector<double> clean(n);
  for (std::size_t t = 0; t < n; ++t) {
    const double s = std::sin(2.0 * M_PI * 40.0 * t / fs);
    clean[t] = s;
    x(0, t) = blink[t] + 0.5 * rng.gaussian();
    x(1, t) = 0.8 * blink[t] + 0.5 * rng.gaussian();
    x(2, t) = s + 0.3 * blink[t] + 0.1 * rng.gaussian();
    x(3, t) = -0.5 * s + 0.1 * rng.gaussian();
  }

  const ArtifactResult out = remove_artifacts(x, fs, {0, 1}, 4.0);

  // references pass through untouched
  for (std::size_t t = 0; t < n; ++t) {
    CHECK(out.data(0, t) == x(0, t));
    CHECK(out.data(1, t) == x(1, t));
  }

  // blink power in channel 2 drops by well over 10x
  double before = 0.0, after = 0.0, signal = 0.0;
  for (std::size_t t = 0; t < n; ++t) {
    before += (x(2, t) - clean[t]) * (x(2, t) - clean[t]);
    after += (out.data(2, t) - clean[t]) * (out.data(2, t) - clean[t]);
    signal += clean[t] * clean[t];
  }
  CHECK(after < before / 10.0);
  // and the signal itself survives
  double kept = 0.0;
  for (std::size_t t = 0; t < n; ++t) kept += out.data(2, t) * clean[t];
  CHECK(kept / signal == doctest::Approx(1.0).epsilon(0.05));
}

TEST_CASE("muscle flagging marks the burst region") {
  Rng rng(29);
  const std::size_t n = 4000;
  const double fs = 250.0;
  Matrix x(3, n);
  for (double& v : x.data()) v = rng.gaussian();
  // strong high-frequency burst in the middle of every channel
  for (std::size_t t = 1800; t < 2000; ++t) {
    for (std::size_t ch = 0; ch < 3; ++ch) x(ch, t) += 25.0 * rng.gaussian();
  }
  Matrix with_ref(4, n);
  for (std::size_t t = 0; t < n; ++t) {
    with_ref(0, t) = rng.gaussian();
    for (std::size_t ch = 0; ch < 3; ++ch) with_ref(ch + 1, t) = x(ch, t);
  }

  const ArtifactResult out = remove_artifacts(with_ref, fs, {0}, 4.0);
  CHECK(out.flagged_fraction > 0.0);
  CHECK(out.flagged_fraction < 0.2);
  std::size_t inside = 0, outside = 0;
  for (std::size_t t = 0; t < n; ++t) {
    if (!out.flagged[t]) continue;
    if (t >= 1780 && t < 2020) {
      ++inside;
    } else {
      ++outside;
    }
  }
  CHECK(inside > 100);
  CHECK(outside < 40);
}

TEST_CASE("artifact removal input validation") {
  Matrix x(3, 100);
  Rng rng(31);
  for (double& v : x.data()) v = rng.gaussian();
  CHECK_THROWS_AS(remove_artifacts(x, 250.0, {}, 4.0), std::invalid_argument);
  CHECK_THROWS_AS(remove_artifacts(x, 250.0, {7}, 4.0), std::invalid_argument);
  CHECK_THROWS_AS(remove_artifacts(x, 250.0, {0}, 0.0), std::invalid_argument);

  Matrix constant_ref = x;
  for (std::size_t t = 0; t < constant_ref.cols(); ++t) constant_ref(0, t) = 1.0;
  CHECK_THROWS_WITH_AS(remove_artifacts(constant_ref, 250.0, {0}, 4.0),
                       doctest::Contains("degenerate"), std::runtime_error);
}

TEST_CASE("epoching skips events that do not fit and corrects the baseline") {
  const double fs = 100.0;
  Recording rec;
  rec.subject = 7;
  rec.fs_hz = fs;
  rec.layout.names = {"a", "b"};
  rec.layout.positions = {{0.0, 0.0}, {0.1, 0.1}};
  rec.data = Matrix(2, 1000);
  Rng rng(37);
  for (std::size_t t = 0; t < 1000; ++t) {
    rec.data(0, t) = 10.0 + rng.gaussian();  // constant offset to remove
    rec.data(1, t) = rng.gaussian();
  }
  rec.events = {{150, 3}, {20, 1}, {950, 2}};

  std::vector<bool> flagged(1000, false);
  for (std::size_t t = 160; t < 170; ++t) flagged[t] = true;

  const EpochResult result = epoch_and_baseline(rec, 2.0, 0.5, &flagged);
  REQUIRE(result.epochs.size() == 1);
  CHECK(result.skipped == std::vector<std::size_t>{1, 2});

  const Epoch& epoch = result.epochs[0];
  CHECK(epoch.subject == 7);
  CHECK(epoch.label == 3);
  CHECK(epoch.onset == 150);
  CHECK(epoch.data.rows() == 2);
  CHECK(epoch.data.cols() == 200);
  CHECK(epoch.baseline.cols() == 50);
  CHECK(epoch.flagged_fraction == doctest::Approx(10.0 / 200.0));

  // the baseline block is mean-corrected, so its mean is zero; the window
  // had the same offset subtracted
  for (std::size_t ch = 0; ch < 2; ++ch) {
    double base_mean = 0.0;
    for (std::size_t t = 0; t < epoch.baseline.cols(); ++t) base_mean += epoch.baseline(ch, t);
    CHECK(std::fabs(base_mean / 50.0) < 1e-12);

    double orig = 0.0;
    for (std::size_t t = 100; t < 150; ++t) orig += rec.data(ch, t);
    orig /= 50.0;
    CHECK(epoch.data(ch, 0) == doctest::Approx(rec.data(ch, 150) - orig).epsilon(1e-12));
  }

  CHECK_THROWS_AS(epoch_and_baseline(rec, 0.0, 0.5), std::invalid_argument);
  CHECK_THROWS_AS(epoch_and_baseline(rec, 2.0, -0.5), std::invalid_argument);
}

TEST_SUITE_END();
