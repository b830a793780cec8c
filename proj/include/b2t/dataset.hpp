#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "b2t/layout.hpp"
#include "b2t/linalg.hpp"
#include "b2t/recording.hpp"

namespace b2t {

// Synthetic-recording knobs. One recording is generated per subject; every
// class contributes trials_per_class cues in shuffled order.
struct SynthConfig {
  int subjects = 2;
  int trials_per_class = 20;
  double fs_hz = 1000.0;
  double snr_db = 20.0;  // peak-channel class-signal power over in-band noise
  std::uint64_t seed = 42;
};

// Dataset-wide metadata. `mixing` is the ground-truth per-class spatial
// pattern (classes x channels; the silent class row is zero), kept so
// topography checks can compare against what was injected.
struct DatasetManifest {
  double fs_hz = 0.0;
  std::uint64_t seed = 0;
  int trials_per_class = 0;
  double snr_db = 0.0;
  std::vector<int> subjects;
  std::vector<WordLabel> classes;
  ChannelLayout layout;
  Matrix mixing;
};

struct Dataset {
  DatasetManifest manifest;
  std::vector<Recording> recordings;  // one per subject, same order as manifest.subjects
};

// Ground-truth class mixing vectors shared by all subjects before the
// per-subject rotation; deterministic in the seed.
Matrix class_mixing(std::uint64_t seed, const ChannelLayout& layout);

// One subject's raw recording: per-class spatial bursts in the 30-120 Hz
// band on a pink-noise floor, frontal blink artifacts, temporal muscle
// bursts, cue events. Fully determined by (config, subject_id). Throws for
// non-positive counts or SNR outside [-20, 40] dB.
Recording synth_subject(const SynthConfig& config, int subject_id);

Dataset synth_dataset(const SynthConfig& config);

// Directory container: manifest.json plus one headerless little-endian
// float32 channels-x-samples blob per recording. read(write(x)) is
// bit-identical because recordings are synthesized at float32 precision.
void write_dataset(const Dataset& dataset, const std::string& dir);
Dataset read_dataset(const std::string& dir);

enum class Protocol { seen_only, unseen_word, cross_subject };

Protocol protocol_from_string(const std::string& name);
std::string to_string(Protocol protocol);

// (subject, label) key of one trial; order defines the global trial id
struct TrialKey {
  int subject = 0;
  int label = 0;
};

// Per-trial fold assignment. Folds are stratified per (subject, class);
// under unseen_word every trial of the held-out word sits in the last fold,
// under cross_subject every trial of the held-out subject does.
struct FoldSplit {
  std::size_t fold_count = 0;
  Protocol protocol = Protocol::seen_only;
  std::vector<int> assignment;  // fold index per trial
  int held_out_label = -1;
  int held_out_subject = -1;
};

FoldSplit make_folds(const std::vector<TrialKey>& trials, const std::vector<WordLabel>& classes,
                     std::size_t fold_count, std::uint64_t seed, Protocol protocol,
                     const std::string& held_out_word = "stop", int held_out_subject = 0);

// trial keys of a dataset in event order, subjects in manifest order
std::vector<TrialKey> trial_table(const Dataset& dataset);

}  // namespace b2t
