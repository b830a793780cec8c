#include "doctest.h"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <map>
#include <set>
#include <string>
#include <vector>

#include "b2t/csp.hpp"
#include "b2t/dataset.hpp"
#include "b2t/experiment.hpp"
#include "b2t/layout.hpp"

using namespace b2t;

namespace {

SynthConfig tiny_config() {
  SynthConfig config;
  config.subjects = 1;
  config.trials_per_class = 2;
  config.fs_hz = 1000.0;
  config.snr_db = 20.0;
  config.seed = 42;
  return config;
}

// leave-one-out nearest-centroid accuracy over flattened embeddings
double loo_centroid_accuracy(const std::vector<std::vector<double>>& feats,
                             const std::vector<int>& labels) {
  std::size_t hits = 0;
  for (std::size_t i = 0; i < feats.size(); ++i) {
    std::map<int, std::vector<double>> sums;
    std::map<int, std::size_t> counts;
    for (std::size_t j = 0; j < feats.size(); ++j) {
      if (j == i) continue;
      auto& s = sums[labels[j]];
      if (s.empty()) s.assign(feats[j].size(), 0.0);
      for (std::size_t k = 0; k < feats[j].size(); ++k) s[k] += feats[j][k];
      counts[labels[j]] += 1;
    }
    int best_label = -1;
    double best_dist = 0.0;
    for (const auto& [label, sum] : sums) {
      double dist = 0.0;
      for (std::size_t k = 0; k < sum.size(); ++k) {
        const double d = feats[i][k] - sum[k] / static_cast<double>(counts[label]);
        dist += d * d;
      }
      if (best_label < 0 || dist < best_dist) {
        best_label = label;
        best_dist = dist;
      }
    }
    if (best_label == labels[i]) ++hits;
  }
  return static_cast<double>(hits) / static_cast<double>(feats.size());
}

// synthesize one subject at the given SNR, preprocess, and score a 12-class
// nearest-centroid probe on spatial-filter embeddings
double embedding_probe_accuracy(double snr_db) {
  SynthConfig config;
  config.subjects = 1;
  config.trials_per_class = 6;
  config.snr_db = snr_db;
  config.seed = 42;

  const PreprocessedSet set = preprocess_recording(synth_subject(config, 0), PreprocessConfig{});

  std::map<int, std::vector<std::size_t>> by_label;
  for (std::size_t i = 0; i < set.epochs.size(); ++i) {
    if (set.epochs[i].label < 12) by_label[set.epochs[i].label].push_back(i);
  }
  REQUIRE(by_label.size() == 12);

  std::vector<Matrix> class_covs;
  std::vector<int> class_ids;
  for (const auto& [label, members] : by_label) {
    Matrix mean;
    for (std::size_t idx : members) {
      const Matrix cov = estimate_covariance(set.epochs[idx].data).cov;
      mean = mean.rows() == 0 ? cov : mean + cov;
    }
    class_covs.push_back((1.0 / static_cast<double>(members.size())) * mean);
    class_ids.push_back(label);
  }
  const SpatialFilterBank bank = fit_multicsp(class_covs, class_ids, 4);

  std::vector<std::vector<double>> feats;
  std::vector<int> labels;
  for (const auto& [label, members] : by_label) {
    for (std::size_t idx : members) {
      feats.push_back(embed(set.epochs[idx], bank).flat());
      labels.push_back(label);
    }
  }
  return loo_centroid_accuracy(feats, labels);
}

}  // namespace

TEST_SUITE_BEGIN("dataset");

TEST_CASE("word table holds the thirteen cue classes") {
  const std::vector<WordLabel>& words = word_table();
  REQUIRE(words.size() == 13);
  for (std::size_t i = 0; i < words.size(); ++i) CHECK(words[i].id == static_cast<int>(i));
  CHECK(words[0].text == "ambulance");
  CHECK(words[3].text == "water");
  CHECK(words[10].text == "help me");
  CHECK(words[12].text == "rest");
  CHECK(transcript(words[12]) == "");
  CHECK(transcript(words[3]) == "water");
}

TEST_CASE("trial schedule: spacing, onsets and class balance") {
  const Recording rec = synth_subject(tiny_config(), 0);
  REQUIRE(rec.events.size() == 26);  // 13 classes x 2 trials
  CHECK(rec.fs_hz == 1000.0);
  CHECK(rec.n_channels() == 64);

  // 1 s preroll + 0.5 s baseline gap before the first cue; 3 s stride after
  CHECK(rec.events[0].sample == 1500);
  for (std::size_t i = 1; i < rec.events.size(); ++i) {
    CHECK(rec.events[i].sample - rec.events[i - 1].sample == 3000);
  }
  // 1 s preroll + 26 * 3 s + 1 s tail
  CHECK(rec.n_samples() == static_cast<std::size_t>((1 + 26 * 3 + 1) * 1000));

  std::map<int, int> counts;
  for (const Event& e : rec.events) counts[e.label] += 1;
  REQUIRE(counts.size() == 13);
  for (const auto& [label, n] : counts) CHECK(n == 2);
}

TEST_CASE("synthesis is deterministic and seed-sensitive") {
  const SynthConfig config = tiny_config();
  const Recording a = synth_subject(config, 0);
  const Recording b = synth_subject(config, 0);
  REQUIRE(a.data.rows() == b.data.rows());
  REQUIRE(a.data.cols() == b.data.cols());
  CHECK(max_abs(a.data - b.data) == 0.0);
  REQUIRE(a.events.size() == b.events.size());
  for (std::size_t i = 0; i < a.events.size(); ++i) {
    CHECK(a.events[i].sample == b.events[i].sample);
    CHECK(a.events[i].label == b.events[i].label);
  }

  const Recording other_subject = synth_subject(config, 1);
  CHECK(max_abs(a.data - other_subject.data) > 0.0);

  SynthConfig reseeded = config;
  reseeded.seed = 43;
  const Recording other_seed = synth_subject(reseeded, 0);
  CHECK(max_abs(a.data - other_seed.data) > 0.0);
}

TEST_CASE("samples are exactly representable in float32") {
  const Recording rec = synth_subject(tiny_config(), 0);
  for (std::size_t c = 0; c < rec.n_channels(); c += 7) {
    for (std::size_t s = 0; s < rec.n_samples(); s += 997) {
      const double v = rec.data(c, s);
      CHECK(v == static_cast<double>(static_cast<float>(v)));
    }
  }
}

TEST_CASE("config validation") {
  SynthConfig config = tiny_config();
  config.snr_db = -25.0;
  CHECK_THROWS_AS(synth_subject(config, 0), std::invalid_argument);
  config.snr_db = 45.0;
  CHECK_THROWS_AS(synth_subject(config, 0), std::invalid_argument);
  config = tiny_config();
  config.trials_per_class = 0;
  CHECK_THROWS_AS(synth_subject(config, 0), std::invalid_argument);
  config = tiny_config();
  config.fs_hz = 200.0;
  CHECK_THROWS_AS(synth_subject(config, 0), std::invalid_argument);
  CHECK_THROWS_AS(synth_subject(tiny_config(), -1), std::invalid_argument);
}

TEST_CASE("class mixing vectors are unit norm with a silent rest row") {
  const ChannelLayout layout = default_layout();
  const Matrix mixing = class_mixing(42, layout);
  REQUIRE(mixing.rows() == 13);
  REQUIRE(mixing.cols() == 64);
  for (std::size_t c = 0; c + 1 < mixing.rows(); ++c) {
    double norm = 0.0;
    for (std::size_t ch = 0; ch < mixing.cols(); ++ch) norm += mixing(c, ch) * mixing(c, ch);
    CHECK(std::sqrt(norm) == doctest::Approx(1.0).epsilon(1e-12));
  }
  for (std::size_t ch = 0; ch < mixing.cols(); ++ch) CHECK(mixing(12, ch) == 0.0);

  // distinct classes peak on distinct channels
  std::set<std::size_t> peaks;
  for (std::size_t c = 0; c + 1 < mixing.rows(); ++c) {
    std::size_t peak = 0;
    for (std::size_t ch = 1; ch < mixing.cols(); ++ch) {
      if (std::abs(mixing(c, ch)) > std::abs(mixing(c, peak))) peak = ch;
    }
    peaks.insert(peak);
  }
  CHECK(peaks.size() == 12);

  const Matrix again = class_mixing(42, layout);
  CHECK(max_abs(mixing - again) == 0.0);
  const Matrix reseeded = class_mixing(43, layout);
  CHECK(max_abs(mixing - reseeded) > 0.0);
}

TEST_CASE("dataset container round-trips bit-exactly") {
  SynthConfig config = tiny_config();
  config.subjects = 2;
  const Dataset dataset = synth_dataset(config);
  REQUIRE(dataset.recordings.size() == 2);

  const std::string dir = "dataset_roundtrip";
  write_dataset(dataset, dir);
  const Dataset loaded = read_dataset(dir);

  CHECK(loaded.manifest.fs_hz == dataset.manifest.fs_hz);
  CHECK(loaded.manifest.seed == dataset.manifest.seed);
  CHECK(loaded.manifest.trials_per_class == dataset.manifest.trials_per_class);
  CHECK(loaded.manifest.snr_db == dataset.manifest.snr_db);
  CHECK(loaded.manifest.subjects == dataset.manifest.subjects);
  REQUIRE(loaded.manifest.classes.size() == 13);
  CHECK(loaded.manifest.classes[3].text == "water");
  CHECK(max_abs(loaded.manifest.mixing - dataset.manifest.mixing) == 0.0);
  REQUIRE(loaded.manifest.layout.size() == 64);
  CHECK(loaded.manifest.layout.names == dataset.manifest.layout.names);
  for (std::size_t i = 0; i < 64; ++i) {
    CHECK(loaded.manifest.layout.positions[i][0] ==
          doctest::Approx(dataset.manifest.layout.positions[i][0]).epsilon(1e-12));
    CHECK(loaded.manifest.layout.positions[i][1] ==
          doctest::Approx(dataset.manifest.layout.positions[i][1]).epsilon(1e-12));
  }

  for (std::size_t r = 0; r < 2; ++r) {
    const Recording& a = dataset.recordings[r];
    const Recording& b = loaded.recordings[r];
    CHECK(b.subject == a.subject);
    CHECK(b.fs_hz == a.fs_hz);
    REQUIRE(b.data.rows() == a.data.rows());
    REQUIRE(b.data.cols() == a.data.cols());
    CHECK(max_abs(a.data - b.data) == 0.0);
    REQUIRE(b.events.size() == a.events.size());
    for (std::size_t i = 0; i < a.events.size(); ++i) {
      CHECK(b.events[i].sample == a.events[i].sample);
      CHECK(b.events[i].label == a.events[i].label);
    }
  }
}

TEST_CASE("protocol names round-trip") {
  CHECK(protocol_from_string("seen_only") == Protocol::seen_only);
  CHECK(protocol_from_string("unseen_word") == Protocol::unseen_word);
  CHECK(protocol_from_string("cross_subject") == Protocol::cross_subject);
  CHECK(to_string(Protocol::unseen_word) == "unseen_word");
  CHECK_THROWS_AS(protocol_from_string("bogus"), std::invalid_argument);
}

TEST_CASE("seen-only folds are stratified per class") {
  // 2 subjects x 13 classes x 5 trials
  std::vector<TrialKey> trials;
  for (int s = 0; s < 2; ++s) {
    for (int t = 0; t < 5; ++t) {
      for (int c = 0; c < 13; ++c) trials.push_back({s, c});
    }
  }
  const FoldSplit split = make_folds(trials, word_table(), 5, 7, Protocol::seen_only);
  REQUIRE(split.assignment.size() == trials.size());
  CHECK(split.held_out_label == -1);
  CHECK(split.held_out_subject == -1);

  // 10 trials per class over 5 folds: exactly 2 in each
  std::map<int, std::map<int, int>> per_class_fold;
  for (std::size_t i = 0; i < trials.size(); ++i) {
    CHECK(split.assignment[i] >= 0);
    CHECK(split.assignment[i] < 5);
    per_class_fold[trials[i].label][split.assignment[i]] += 1;
  }
  for (const auto& [label, folds] : per_class_fold) {
    REQUIRE(folds.size() == 5);
    for (const auto& [fold, n] : folds) CHECK(n == 2);
  }

  // deterministic in the seed
  const FoldSplit again = make_folds(trials, word_table(), 5, 7, Protocol::seen_only);
  CHECK(again.assignment == split.assignment);
}

TEST_CASE("unseen-word folds quarantine the held-out word in the last fold") {
  std::vector<TrialKey> trials;
  for (int s = 0; s < 2; ++s) {
    for (int t = 0; t < 5; ++t) {
      for (int c = 0; c < 13; ++c) trials.push_back({s, c});
    }
  }
  const FoldSplit split = make_folds(trials, word_table(), 5, 7, Protocol::unseen_word, "stop");
  CHECK(split.held_out_label == 9);

  std::map<int, std::map<int, int>> per_class_fold;
  for (std::size_t i = 0; i < trials.size(); ++i) {
    per_class_fold[trials[i].label][split.assignment[i]] += 1;
    if (trials[i].label == 9) CHECK(split.assignment[i] == 4);
  }
  // the other classes stay balanced over all five folds
  for (const auto& [label, folds] : per_class_fold) {
    if (label == 9) continue;
    REQUIRE(folds.size() == 5);
    for (const auto& [fold, n] : folds) CHECK(n == 2);
  }
}

TEST_CASE("cross-subject folds quarantine the held-out subject") {
  // 3 subjects x 13 classes x 4 trials, subject 1 held out, 5 folds
  std::vector<TrialKey> trials;
  for (int s = 0; s < 3; ++s) {
    for (int t = 0; t < 4; ++t) {
      for (int c = 0; c < 13; ++c) trials.push_back({s, c});
    }
  }
  const FoldSplit split =
      make_folds(trials, word_table(), 5, 7, Protocol::cross_subject, "stop", 1);
  CHECK(split.held_out_subject == 1);

  std::map<int, std::map<int, int>> per_class_fold;
  for (std::size_t i = 0; i < trials.size(); ++i) {
    if (trials[i].subject == 1) {
      CHECK(split.assignment[i] == 4);
    } else {
      CHECK(split.assignment[i] < 4);
      per_class_fold[trials[i].label][split.assignment[i]] += 1;
    }
  }
  // the remaining 8 trials per class spread over folds 0..3: exactly 2 each
  for (const auto& [label, folds] : per_class_fold) {
    REQUIRE(folds.size() == 4);
    for (const auto& [fold, n] : folds) CHECK(n == 2);
  }
}

TEST_CASE("fold construction rejects bad requests") {
  std::vector<TrialKey> trials;
  for (int t = 0; t < 4; ++t) {
    for (int c = 0; c < 13; ++c) trials.push_back({0, c});
  }
  CHECK_THROWS_AS(make_folds(trials, word_table(), 1, 7, Protocol::seen_only),
                  std::invalid_argument);
  CHECK_THROWS_AS(make_folds({}, word_table(), 5, 7, Protocol::seen_only), std::invalid_argument);
  CHECK_THROWS_AS(make_folds(trials, word_table(), 5, 7, Protocol::seen_only),
                  std::invalid_argument);  // 4 trials per class < 5 folds
  CHECK_THROWS_AS(make_folds(trials, word_table(), 4, 7, Protocol::unseen_word, "zebra"),
                  std::invalid_argument);
  CHECK_THROWS_AS(make_folds(trials, word_table(), 4, 7, Protocol::cross_subject, "stop", 3),
                  std::invalid_argument);
}

TEST_CASE("trial_table lists events in manifest order") {
  SynthConfig config = tiny_config();
  config.subjects = 2;
  const Dataset dataset = synth_dataset(config);
  const std::vector<TrialKey> trials = trial_table(dataset);
  REQUIRE(trials.size() == 52);
  std::size_t cursor = 0;
  for (std::size_t r = 0; r < dataset.recordings.size(); ++r) {
    for (const Event& e : dataset.recordings[r].events) {
      CHECK(trials[cursor].subject == dataset.recordings[r].subject);
      CHECK(trials[cursor].label == e.label);
      ++cursor;
    }
  }
}

TEST_CASE("embeddings separate classes at high SNR and not at chance-level SNR") {
  const double high = embedding_probe_accuracy(20.0);
  CHECK(high > 0.8);

  // At -20 dB nothing class-specific survives, so the probe must not beat
  // chance (1/12). Leave-one-out centroids sit below chance on null data
  // (dropping a trial shifts its own centroid away from it), so only the
  // upper bound is meaningful.
  const double low = embedding_probe_accuracy(-20.0);
  CHECK(low <= 1.0 / 12.0 + 0.10);
}

TEST_SUITE_END();
