#pragma once

#include <cstddef>
#include <string>
#include <vector>

#include "b2t/linalg.hpp"

namespace b2t {

// Character inventory for transcripts: 'a'..'z' (0..25), space (26) and a
// padding symbol (27) that also terminates decoded strings.
struct Vocabulary {
  static constexpr std::size_t size = 28;
  static constexpr std::size_t space_index = 26;
  static constexpr std::size_t pad_index = 27;

  // index for a transcript character, or -1 if it is not in the inventory
  static int index_of(char c);
  // inverse of index_of; the pad index maps to '\0'
  static char char_at(std::size_t index);
};

constexpr std::size_t kMaxTranscriptLen = 12;

// Fixed-length sequence of per-position distributions over the vocabulary;
// rows is max_len x Vocabulary::size, each row nonnegative and summing to 1.
struct CharEmbeddingSeq {
  Matrix rows;

  std::size_t max_len() const { return rows.rows(); }
  std::vector<double> flat() const { return rows.data(); }
};

// One-hot (optionally label-smoothed) encoding of a transcript, padded to
// max_len. With smoothing s > 0 the target cell gets 1 - s and every other
// cell s / (size - 1). Throws std::invalid_argument for characters outside
// the inventory or a transcript longer than max_len.
CharEmbeddingSeq encode_text(const std::string& text, std::size_t max_len = kMaxTranscriptLen,
                             double smoothing = 0.0);

// Per-row argmax (ties resolve to the lowest index); the first pad symbol
// terminates the string and trailing pads are dropped.
std::string decode(const CharEmbeddingSeq& seq);

// Levenshtein distance with unit insert/delete/substitute costs.
std::size_t edit_distance(const std::string& a, const std::string& b);

// Character error rate: edit distance over reference length. An empty
// reference scores 0 against an empty hypothesis and 1 otherwise.
double cer(const std::string& reference, const std::string& hypothesis);

struct CerSample {
  int subject = 0;
  double cer = 0.0;
};

struct CerSummary {
  double mean_pct = 0.0;  // mean of per-subject mean CER, in percent
  double std_pct = 0.0;   // population standard deviation across subjects
  std::size_t n_subjects = 0;
  std::size_t n_trials = 0;
};

// Aggregate per-trial scores to per-subject means, then summarize across
// subjects. Empty input yields an all-zero summary.
CerSummary report_cer(const std::vector<CerSample>& samples);

}  // namespace b2t
