#include "doctest.h"

#include <algorithm>
#include <cmath>
#include <string>
#include <vector>

#include "b2t/recording.hpp"
#include "b2t/rng.hpp"
#include "b2t/textcodec.hpp"

using namespace b2t;

namespace {

// direct recursive definition, exponential but exact for short strings
std::size_t lev_recursive(const std::string& a, const std::string& b, std::size_t i,
                          std::size_t j) {
  if (i == a.size()) return b.size() - j;
  if (j == b.size()) return a.size() - i;
  const std::size_t subst = lev_recursive(a, b, i + 1, j + 1) + (a[i] != b[j] ? 1 : 0);
  const std::size_t del = lev_recursive(a, b, i + 1, j) + 1;
  const std::size_t ins = lev_recursive(a, b, i, j + 1) + 1;
  return std::min({subst, del, ins});
}

std::string random_word(Rng& rng, std::size_t max_len, const std::string& alphabet) {
  const std::size_t len = rng.index(max_len + 1);
  std::string s;
  for (std::size_t i = 0; i < len; ++i) s += alphabet[rng.index(alphabet.size())];
  return s;
}

}  // namespace

TEST_SUITE_BEGIN("textcodec");

TEST_CASE("vocabulary maps letters, space and pad") {
  CHECK(Vocabulary::size == 28);
  CHECK(Vocabulary::index_of('a') == 0);
  CHECK(Vocabulary::index_of('z') == 25);
  CHECK(Vocabulary::index_of(' ') == 26);
  CHECK(Vocabulary::char_at(26) == ' ');
  CHECK(Vocabulary::index_of('A') == -1);
  CHECK(Vocabulary::index_of('!') == -1);
  CHECK(Vocabulary::char_at(Vocabulary::pad_index) == '\0');
}

TEST_CASE("one-hot encoding with padding") {
  const CharEmbeddingSeq seq = encode_text("water");
  REQUIRE(seq.max_len() == 12);
  CHECK(seq.rows.cols() == 28);
  CHECK(seq.rows(0, Vocabulary::index_of('w')) == 1.0);
  CHECK(seq.rows(4, Vocabulary::index_of('r')) == 1.0);
  for (std::size_t r = 5; r < 12; ++r) CHECK(seq.rows(r, Vocabulary::pad_index) == 1.0);

  // every row sums to one
  for (std::size_t r = 0; r < 12; ++r) {
    double sum = 0.0;
    for (std::size_t c = 0; c < 28; ++c) sum += seq.rows(r, c);
    CHECK(sum == doctest::Approx(1.0).epsilon(1e-15));
  }
}

TEST_CASE("label smoothing spreads mass but keeps the argmax") {
  const double s = 0.1;
  const CharEmbeddingSeq seq = encode_text("hi", 12, s);
  CHECK(seq.rows(0, Vocabulary::index_of('h')) == doctest::Approx(0.9));
  CHECK(seq.rows(0, Vocabulary::index_of('a')) == doctest::Approx(0.1 / 27.0));
  for (std::size_t r = 0; r < 12; ++r) {
    double sum = 0.0;
    for (std::size_t c = 0; c < 28; ++c) sum += seq.rows(r, c);
    CHECK(sum == doctest::Approx(1.0).epsilon(1e-12));
  }
  CHECK(decode(seq) == "hi");
}

TEST_CASE("encoding rejects bad input") {
  CHECK_THROWS_AS(encode_text("thirteenchars"), std::invalid_argument);  // 13 > 12
  CHECK_THROWS_AS(encode_text("Water"), std::invalid_argument);
  CHECK_THROWS_AS(encode_text("a!b"), std::invalid_argument);
  CHECK_THROWS_AS(encode_text("hi", 12, 1.0), std::invalid_argument);
  CHECK_THROWS_AS(encode_text("hi", 12, -0.01), std::invalid_argument);
}

TEST_CASE("decode inverts encode for all words in the table") {
  for (const WordLabel& w : word_table()) {
    const std::string text = transcript(w);
    CHECK(decode(encode_text(text)) == text);
  }
}

TEST_CASE("decode tie-breaking and pad termination") {
  CharEmbeddingSeq seq{Matrix(3, 28)};
  // row 0: uniform, argmax resolves to the lowest index 'a'
  for (std::size_t c = 0; c < 28; ++c) seq.rows(0, c) = 1.0 / 28.0;
  // row 1: pad, terminates the transcript
  seq.rows(1, Vocabulary::pad_index) = 1.0;
  // row 2 would decode to 'z' but must be ignored
  seq.rows(2, 25) = 1.0;
  CHECK(decode(seq) == "a");
}

TEST_CASE("edit distance on known cases") {
  CHECK(edit_distance("kitten", "sitting") == 3);
  CHECK(edit_distance("", "") == 0);
  CHECK(edit_distance("", "abc") == 3);
  CHECK(edit_distance("abc", "") == 3);
  CHECK(edit_distance("water", "water") == 0);
  CHECK(edit_distance("water", "wotor") == 2);
}

TEST_CASE("dynamic program equals the recursive definition on random pairs") {
  Rng rng(71);
  const std::string alphabet = "abc ";
  for (int trial = 0; trial < 1000; ++trial) {
    const std::string a = random_word(rng, 8, alphabet);
    const std::string b = random_word(rng, 8, alphabet);
    CHECK(edit_distance(a, b) == lev_recursive(a, b, 0, 0));
  }
}

TEST_CASE("character error rate") {
  CHECK(cer("water", "wotor") == doctest::Approx(0.4).epsilon(1e-15));
  CHECK(cer("water", "water") == 0.0);
  CHECK(cer("", "") == 0.0);
  CHECK(cer("", "anything") == 1.0);
  CHECK(cer("ab", "") == 1.0);
  CHECK(cer("a", "abcd") == 3.0);  // can exceed one
}

TEST_CASE("per-subject aggregation") {
  // one trial each for two subjects: mean of {20, 40} percent, population std
  const CerSummary two = report_cer({{0, 0.2}, {1, 0.4}});
  CHECK(two.mean_pct == doctest::Approx(30.0).epsilon(1e-12));
  CHECK(two.std_pct == doctest::Approx(10.0).epsilon(1e-12));
  CHECK(two.n_subjects == 2);
  CHECK(two.n_trials == 2);

  const CerSummary one = report_cer({{5, 0.25}});
  CHECK(one.mean_pct == doctest::Approx(25.0).epsilon(1e-12));
  CHECK(one.std_pct == 0.0);

  // trials pool within a subject before the cross-subject mean
  const CerSummary mixed = report_cer({{0, 0.2}, {0, 0.3}, {1, 0.4}});
  CHECK(mixed.mean_pct == doctest::Approx(32.5).epsilon(1e-12));
  CHECK(mixed.std_pct == doctest::Approx(7.5).epsilon(1e-12));
  CHECK(mixed.n_subjects == 2);
  CHECK(mixed.n_trials == 3);

  const CerSummary empty = report_cer({});
  CHECK(empty.mean_pct == 0.0);
  CHECK(empty.n_trials == 0);
}

TEST_SUITE_END();
