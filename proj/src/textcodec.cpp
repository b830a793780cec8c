#include "b2t/textcodec.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <stdexcept>

namespace b2t {

int Vocabulary::index_of(char c) {
  if (c >= 'a' && c <= 'z') return c - 'a';
  if (c == ' ') return static_cast<int>(space_index);
  return -1;
}

char Vocabulary::char_at(std::size_t index) {
  if (index < 26) return static_cast<char>('a' + index);
  if (index == space_index) return ' ';
  return '\0';
}

CharEmbeddingSeq encode_text(const std::string& text, std::size_t max_len, double smoothing) {
  if (text.size() > max_len) {
    throw std::invalid_argument("encode_text: transcript longer than max_len");
  }
  if (smoothing < 0.0 || smoothing >= 1.0) {
    throw std::invalid_argument("encode_text: smoothing must lie in [0, 1)");
  }
  const double off = smoothing / static_cast<double>(Vocabulary::size - 1);
  const double on = 1.0 - smoothing;

  CharEmbeddingSeq seq;
  seq.rows = Matrix(max_len, Vocabulary::size, off);
  for (std::size_t i = 0; i < max_len; ++i) {
    std::size_t target = Vocabulary::pad_index;
    if (i < text.size()) {
      const int idx = Vocabulary::index_of(text[i]);
      if (idx < 0) {
        throw std::invalid_argument("encode_text: character outside the inventory");
      }
      target = static_cast<std::size_t>(idx);
    }
    seq.rows(i, target) = on;
  }
  return seq;
}

std::string decode(const CharEmbeddingSeq& seq) {
  std::string out;
  for (std::size_t i = 0; i < seq.rows.rows(); ++i) {
    std::size_t best = 0;
    for (std::size_t j = 1; j < seq.rows.cols(); ++j) {
      if (seq.rows(i, j) > seq.rows(i, best)) best = j;
    }
    if (best == Vocabulary::pad_index) break;
    out.push_back(Vocabulary::char_at(best));
  }
  return out;
}

std::size_t edit_distance(const std::string& a, const std::string& b) {
  const std::size_t m = a.size();
  const std::size_t n = b.size();
  std::vector<std::size_t> prev(n + 1), curr(n + 1);
  for (std::size_t j = 0; j <= n; ++j) prev[j] = j;
  for (std::size_t i = 1; i <= m; ++i) {
    curr[0] = i;
    for (std::size_t j = 1; j <= n; ++j) {
      const std::size_t sub = prev[j - 1] + (a[i - 1] == b[j - 1] ? 0 : 1);
      curr[j] = std::min({prev[j] + 1, curr[j - 1] + 1, sub});
    }
    std::swap(prev, curr);
  }
  return prev[n];
}

double cer(const std::string& reference, const std::string& hypothesis) {
  if (reference.empty()) return hypothesis.empty() ? 0.0 : 1.0;
  return static_cast<double>(edit_distance(reference, hypothesis)) /
         static_cast<double>(reference.size());
}

CerSummary report_cer(const std::vector<CerSample>& samples) {
  CerSummary out;
  out.n_trials = samples.size();
  if (samples.empty()) return out;

  std::map<int, std::pair<double, std::size_t>> by_subject;
  for (const CerSample& s : samples) {
    auto& acc = by_subject[s.subject];
    acc.first += s.cer;
    acc.second += 1;
  }
  out.n_subjects = by_subject.size();

  double mean = 0.0;
  for (const auto& [subject, acc] : by_subject) {
    mean += acc.first / static_cast<double>(acc.second);
  }
  mean /= static_cast<double>(by_subject.size());

  double var = 0.0;
  for (const auto& [subject, acc] : by_subject) {
    const double d = acc.first / static_cast<double>(acc.second) - mean;
    var += d * d;
  }
  var /= static_cast<double>(by_subject.size());

  out.mean_pct = 100.0 * mean;
  out.std_pct = 100.0 * std::sqrt(var);
  return out;
}

}  // namespace b2t
