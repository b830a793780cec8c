#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "b2t/csp.hpp"
#include "b2t/dataset.hpp"
#include "b2t/dsp.hpp"
#include "b2t/gan.hpp"
#include "b2t/textcodec.hpp"

namespace b2t {

// signal chain from raw multichannel recordings to baseline-corrected epochs
struct PreprocessConfig {
  double wide_low_hz = 0.5;
  double wide_high_hz = 125.0;
  int wide_order = 4;
  std::vector<double> notch_hz = {60.0, 120.0};
  double notch_q = 35.0;
  double target_fs_hz = 250.0;
  double model_low_hz = 30.0;
  double model_high_hz = 120.0;
  int model_order = 4;
  double emg_threshold = 4.0;
  double window_s = 2.0;
  double baseline_s = 0.5;
};

struct CspConfig {
  std::size_t patterns_per_class = 8;
  double shrinkage = 0.05;
  std::size_t window_count = 16;
  // also fit classes absent from the training folds (pulls their trials from
  // evaluation data, which the hygiene audit will flag)
  bool fit_all_classes = false;
};

struct ProtocolConfig {
  Protocol protocol = Protocol::unseen_word;
  std::size_t folds = 5;
  std::uint64_t split_seed = 7;
  std::string held_out_word = "stop";
  int held_out_subject = 0;
};

struct ExperimentConfig {
  SynthConfig synth;
  PreprocessConfig preprocess;
  CspConfig csp;
  ProtocolConfig protocol;
  GanConfig gan;
  double target_smoothing = 0.0;
  // control experiment: permute the training trials' labels among themselves
  // (evaluation keeps the true transcripts)
  bool shuffle_labels = false;
  int jobs = 1;
  std::string out_dir = "out";
};

ExperimentConfig load_config(const std::string& path);
void save_config(const ExperimentConfig& config, const std::string& path);

struct PreprocessedSet {
  double fs_hz = 0.0;
  ChannelLayout layout;
  std::vector<Epoch> epochs;
};

PreprocessedSet preprocess_recording(Recording rec, const PreprocessConfig& config);
PreprocessedSet preprocess_dataset(const Dataset& dataset, const PreprocessConfig& config);

void write_epochs(const PreprocessedSet& set, const std::string& dir);
PreprocessedSet read_epochs(const std::string& dir);

// fold usage of one training/evaluation pass
struct RunPlan {
  std::size_t run = 0;
  std::vector<int> train_folds;
  std::vector<int> eval_folds;
};

std::vector<RunPlan> protocol_runs(Protocol protocol, std::size_t folds);

struct TrialCer {
  std::size_t run = 0;
  std::size_t trial = 0;  // index into the epoch list
  int subject = 0;
  int fold = 0;
  int word_id = 0;
  std::string word;
  std::string decoded;
  bool unseen = false;
  double cer = 0.0;
};

// per-run data hygiene audit over trial indices
struct HygieneReport {
  std::string train_hash;  // FNV-1a over the sorted training trial ids
  std::string csp_hash;    // same, over the trials the filter bank saw
  bool disjoint_train_eval = false;
  bool held_out_absent_from_training = false;
  bool held_out_absent_from_csp = false;
  bool ok = false;
};

struct RunReport {
  std::size_t run = 0;
  std::size_t train_size = 0;
  std::size_t eval_size = 0;
  HygieneReport hygiene;
  CerSummary seen;
  bool has_unseen = false;
  CerSummary unseen;
  std::size_t gan_epochs = 0;
  EpochStats gan_final;
};

// event-related spectral change per word and channel, in dB relative to the
// pre-onset baseline, averaged over that word's trials
struct SpatialMap {
  std::vector<WordLabel> words;
  Matrix ers_db;                    // words x channels
  std::vector<std::size_t> counts;  // trials per word
};

SpatialMap spatial_analysis(const PreprocessedSet& set);

struct EvalReport {
  std::string protocol;
  std::size_t folds = 0;
  std::vector<RunReport> runs;
  std::vector<TrialCer> trials;
  CerSummary seen;
  bool has_unseen = false;
  CerSummary unseen;
  ChannelLayout layout;
  SpatialMap spatial;
};

// folds, spatial filters, adversarial training and scoring over an already
// preprocessed set; runs and rows come back in a fixed order regardless of
// config.jobs
EvalReport evaluate_protocol(const PreprocessedSet& set, const ExperimentConfig& config);

// cross-checks a report against itself (aggregates vs rows, counts, hygiene)
void validate_report(const EvalReport& report);

// report.json, cer.csv, topography.csv and topography.svg; byte-identical
// across identical runs
void emit_reports(const EvalReport& report, const ExperimentConfig& config,
                  const std::string& out_dir);

// just topography.csv and topography.svg (needs layout and spatial filled in)
void emit_topography(const EvalReport& report, const std::string& out_dir);

// synthesize (one subject in memory at a time), preprocess, evaluate, emit
EvalReport run_pipeline(const ExperimentConfig& config);

}  // namespace b2t
