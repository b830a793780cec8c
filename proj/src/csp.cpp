#include "b2t/csp.hpp"

#include <cmath>
#include <filesystem>
#include <fstream>
#include <stdexcept>

#include "b2t/rawio.hpp"
#include "json.hpp"

namespace b2t {

CovarianceEstimate estimate_covariance(const Matrix& window, double shrinkage) {
  if (window.rows() == 0 || window.cols() < 2) {
    throw std::invalid_argument("estimate_covariance: window needs >= 2 samples");
  }
  if (shrinkage < 0.0 || shrinkage > 1.0) {
    throw std::invalid_argument("estimate_covariance: shrinkage must lie in [0, 1]");
  }
  const std::size_t n_ch = window.rows();
  const std::size_t n = window.cols();

  std::vector<double> mean(n_ch, 0.0);
  for (std::size_t ch = 0; ch < n_ch; ++ch) {
    const double* row = window.row(ch);
    for (std::size_t c = 0; c < n; ++c) mean[ch] += row[c];
    mean[ch] /= static_cast<double>(n);
  }

  Matrix cov(n_ch, n_ch);
  for (std::size_t i = 0; i < n_ch; ++i) {
    const double* ri = window.row(i);
    for (std::size_t j = i; j < n_ch; ++j) {
      const double* rj = window.row(j);
      double acc = 0.0;
      for (std::size_t c = 0; c < n; ++c) acc += (ri[c] - mean[i]) * (rj[c] - mean[j]);
      cov(i, j) = cov(j, i) = acc / static_cast<double>(n);
    }
  }

  const double tr = trace(cov);
  if (tr <= 0.0) {
    throw std::runtime_error("estimate_covariance: degenerate (constant) window");
  }

  const double ridge = shrinkage * tr / static_cast<double>(n_ch);
  for (std::size_t i = 0; i < n_ch; ++i) {
    for (std::size_t j = 0; j < n_ch; ++j) cov(i, j) *= (1.0 - shrinkage);
    cov(i, i) += ridge;
  }
  // trace is unchanged by the blend; normalize it to the channel count
  const double scale = static_cast<double>(n_ch) / tr;
  for (double& v : cov.data()) v *= scale;

  CovarianceEstimate out;
  out.cov = std::move(cov);
  out.channels = n_ch;
  out.shrinkage = shrinkage;
  return out;
}

CspPair fit_csp_pair(const Matrix& cov_a, const Matrix& cov_b, std::size_t n_pairs) {
  const std::size_t n = cov_a.rows();
  if (n == 0 || cov_a.cols() != n || cov_b.rows() != n || cov_b.cols() != n) {
    throw std::invalid_argument("fit_csp_pair: covariances must be square and equally sized");
  }
  if (n_pairs == 0 || 2 * n_pairs > n) {
    throw std::invalid_argument("fit_csp_pair: n_pairs must lie in [1, channels/2]");
  }
  if (!is_spd(cov_a) || !is_spd(cov_b)) {
    throw std::invalid_argument("fit_csp_pair: covariances must be symmetric positive definite");
  }

  // whiten the composite covariance
  const Matrix composite = cov_a + cov_b;
  const SymmetricEigen ce = eigen_symmetric(composite);
  if (ce.values.front() <= 0.0) {
    throw std::invalid_argument("fit_csp_pair: composite covariance is singular");
  }
  Matrix whiten(n, n);
  for (std::size_t i = 0; i < n; ++i) {
    const double inv_sqrt = 1.0 / std::sqrt(ce.values[i]);
    for (std::size_t j = 0; j < n; ++j) whiten(i, j) = inv_sqrt * ce.vectors(j, i);
  }

  // diagonalize class a in the whitened space
  Matrix s = matmul(matmul(whiten, cov_a), transpose(whiten));
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = i + 1; j < n; ++j) {
      const double v = 0.5 * (s(i, j) + s(j, i));
      s(i, j) = s(j, i) = v;
    }
  }
  const SymmetricEigen se = eigen_symmetric(s);

  // rows of V' * whiten satisfy w' (cov_a + cov_b) w == 1
  const Matrix all_filters = matmul(transpose(se.vectors), whiten);

  CspPair out;
  out.filters = Matrix(2 * n_pairs, n);
  out.eigenvalues.resize(2 * n_pairs);
  for (std::size_t k = 0; k < n_pairs; ++k) {
    // largest eigenvalues descending, then smallest ascending
    const std::size_t hi = n - 1 - k;
    const std::size_t lo = k;
    for (std::size_t j = 0; j < n; ++j) {
      out.filters(k, j) = all_filters(hi, j);
      out.filters(n_pairs + k, j) = all_filters(lo, j);
    }
    out.eigenvalues[k] = se.values[hi];
    out.eigenvalues[n_pairs + k] = se.values[lo];
  }

  // orient each filter so its largest-magnitude component is positive
  for (std::size_t r = 0; r < out.filters.rows(); ++r) {
    std::size_t peak = 0;
    for (std::size_t j = 1; j < n; ++j) {
      if (std::fabs(out.filters(r, j)) > std::fabs(out.filters(r, peak))) peak = j;
    }
    if (out.filters(r, peak) < 0.0) {
      for (std::size_t j = 0; j < n; ++j) out.filters(r, j) = -out.filters(r, j);
    }
  }
  return out;
}

SpatialFilterBank fit_multicsp(const std::vector<Matrix>& class_covs,
                               const std::vector<int>& class_ids,
                               std::size_t patterns_per_class) {
  if (class_covs.size() < 2) {
    throw std::invalid_argument("fit_multicsp: needs at least two classes");
  }
  if (class_covs.size() != class_ids.size()) {
    throw std::invalid_argument("fit_multicsp: covariance and id counts disagree");
  }
  if (patterns_per_class == 0 || patterns_per_class % 2 != 0) {
    throw std::invalid_argument("fit_multicsp: patterns_per_class must be even and positive");
  }
  const std::size_t n = class_covs.front().rows();
  for (const Matrix& c : class_covs) {
    if (c.rows() != n || c.cols() != n) {
      throw std::invalid_argument("fit_multicsp: covariance shapes disagree");
    }
  }

  SpatialFilterBank bank;
  bank.patterns_per_class = patterns_per_class;
  bank.class_ids = class_ids;
  bank.filters = Matrix(class_covs.size() * patterns_per_class, n);

  for (std::size_t c = 0; c < class_covs.size(); ++c) {
    Matrix rest(n, n);
    for (std::size_t o = 0; o < class_covs.size(); ++o) {
      if (o == c) continue;
      rest = rest + class_covs[o];
    }
    rest = (1.0 / static_cast<double>(class_covs.size() - 1)) * rest;

    const CspPair pair = fit_csp_pair(class_covs[c], rest, patterns_per_class / 2);
    for (std::size_t r = 0; r < patterns_per_class; ++r) {
      for (std::size_t j = 0; j < n; ++j) {
        bank.filters(c * patterns_per_class + r, j) = pair.filters(r, j);
      }
    }
  }
  return bank;
}

FeatureEmbedding embed(const Epoch& epoch, const SpatialFilterBank& bank) {
  if (epoch.data.rows() != bank.n_channels()) {
    throw std::invalid_argument("embed: epoch channels disagree with the bank");
  }
  const std::size_t windows = bank.window_count;
  const std::size_t len = epoch.data.cols() / windows;
  if (len < 2) {
    throw std::invalid_argument("embed: epoch too short for the window count");
  }

  // project the whole epoch once, then take per-window variances
  const Matrix projected = matmul(bank.filters, epoch.data);

  FeatureEmbedding out;
  out.features = Matrix(windows, bank.n_filters());
  for (std::size_t f = 0; f < bank.n_filters(); ++f) {
    const double* row = projected.row(f);
    for (std::size_t w = 0; w < windows; ++w) {
      const double* seg = row + w * len;
      double mean = 0.0;
      for (std::size_t t = 0; t < len; ++t) mean += seg[t];
      mean /= static_cast<double>(len);
      double var = 0.0;
      for (std::size_t t = 0; t < len; ++t) var += (seg[t] - mean) * (seg[t] - mean);
      var /= static_cast<double>(len);
      out.features(w, f) = std::log(std::max(var, 1e-30));
    }
  }

  // per-filter mean across windows is removed
  for (std::size_t f = 0; f < bank.n_filters(); ++f) {
    double mean = 0.0;
    for (std::size_t w = 0; w < windows; ++w) mean += out.features(w, f);
    mean /= static_cast<double>(windows);
    for (std::size_t w = 0; w < windows; ++w) out.features(w, f) -= mean;
  }
  return out;
}

void write_bank(const SpatialFilterBank& bank, const std::string& dir) {
  std::filesystem::create_directories(dir);
  nlohmann::json meta;
  meta["format"] = "b2t-bank";
  meta["version"] = 1;
  meta["n_filters"] = bank.n_filters();
  meta["n_channels"] = bank.n_channels();
  meta["patterns_per_class"] = bank.patterns_per_class;
  meta["window_count"] = bank.window_count;
  meta["class_ids"] = bank.class_ids;

  std::ofstream out(dir + "/bank.json", std::ios::trunc);
  if (!out) throw std::runtime_error("cannot write " + dir + "/bank.json");
  out << meta.dump(2) << "\n";
  write_f32_matrix(dir + "/bank.f32", bank.filters);
}

SpatialFilterBank read_bank(const std::string& dir) {
  std::ifstream in(dir + "/bank.json");
  if (!in) throw std::runtime_error("cannot read " + dir + "/bank.json");
  nlohmann::json meta = nlohmann::json::parse(in);

  SpatialFilterBank bank;
  bank.patterns_per_class = meta.at("patterns_per_class").get<std::size_t>();
  bank.window_count = meta.at("window_count").get<std::size_t>();
  bank.class_ids = meta.at("class_ids").get<std::vector<int>>();
  bank.filters = read_f32_matrix(dir + "/bank.f32", meta.at("n_filters").get<std::size_t>(),
                                 meta.at("n_channels").get<std::size_t>());
  return bank;
}

}  // namespace b2t
