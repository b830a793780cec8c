#pragma once

#include <cstddef>
#include <string>
#include <vector>

#include "b2t/dsp.hpp"
#include "b2t/linalg.hpp"

namespace b2t {

// Shrunk, trace-normalized channel covariance of one epoch window.
struct CovarianceEstimate {
  Matrix cov;                 // channels x channels, SPD, trace == channels
  std::size_t channels = 0;
  double shrinkage = 0.0;
};

// Sample covariance blended with shrinkage * (trace/n) * I, then scaled so
// the trace equals the channel count. Throws for an all-zero (degenerate)
// window or shrinkage outside [0, 1].
CovarianceEstimate estimate_covariance(const Matrix& window, double shrinkage = 0.05);

// Spatial filters for one class pair. Rows of `filters` are filters w with
// w' * (cov_a + cov_b) * w == 1; `eigenvalues` holds the matching generalized
// eigenvalue w' * cov_a * w in (0, 1). The first n_pairs rows take the
// largest eigenvalues in descending order, the last n_pairs the smallest in
// ascending order.
struct CspPair {
  Matrix filters;
  std::vector<double> eigenvalues;
};

// Solve cov_a * w = lambda * (cov_a + cov_b) * w by whitening cov_a + cov_b
// and diagonalizing the whitened cov_a. Each filter's largest-magnitude
// component is made positive. Throws for shape mismatches, non-SPD inputs,
// or n_pairs exceeding channels / 2.
CspPair fit_csp_pair(const Matrix& cov_a, const Matrix& cov_b, std::size_t n_pairs);

// One-vs-rest filter bank over all classes, patterns_per_class filters each,
// stacked in class order.
struct SpatialFilterBank {
  Matrix filters;               // (classes * patterns_per_class) x channels
  std::vector<int> class_ids;   // block order
  std::size_t patterns_per_class = 0;
  std::size_t window_count = 16;

  std::size_t n_filters() const { return filters.rows(); }
  std::size_t n_channels() const { return filters.cols(); }
};

// Fit each class against the mean covariance of the others. patterns_per_class
// must be even (half from each end of the eigenvalue spectrum); at least two
// classes are required.
SpatialFilterBank fit_multicsp(const std::vector<Matrix>& class_covs,
                               const std::vector<int>& class_ids,
                               std::size_t patterns_per_class = 8);

// Windowed log-variance features of one epoch: the epoch is cut into
// `window_count` equal windows (trailing samples beyond the last full window
// are dropped), each window is projected through every filter, and the log of
// the projection variance is taken. Each filter column then has its mean
// across windows subtracted.
struct FeatureEmbedding {
  Matrix features;  // window_count x n_filters

  std::vector<double> flat() const { return features.data(); }
};

FeatureEmbedding embed(const Epoch& epoch, const SpatialFilterBank& bank);

// bank serialization: raw float32 filter matrix next to a JSON description
void write_bank(const SpatialFilterBank& bank, const std::string& dir);
SpatialFilterBank read_bank(const std::string& dir);

}  // namespace b2t
