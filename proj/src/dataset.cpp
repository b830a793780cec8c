#include "b2t/dataset.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <map>
#include <stdexcept>

#include "b2t/dsp.hpp"
#include "b2t/rawio.hpp"
#include "b2t/rng.hpp"
#include "json.hpp"

namespace b2t {

const std::vector<WordLabel>& word_table() {
  static const std::vector<WordLabel> table = {
      {0, "ambulance"}, {1, "light"},   {2, "tv"},    {3, "water"},
      {4, "pain"},      {5, "hello"},   {6, "toilet"}, {7, "clock"},
      {8, "yes"},       {9, "stop"},    {10, "help me"}, {11, "thank you"},
      {12, "rest"},
  };
  return table;
}

std::string transcript(const WordLabel& label) {
  return label.text == "rest" ? std::string{} : label.text;
}

namespace {

constexpr double kTrialWindowS = 2.0;
constexpr double kBaselineGapS = 0.5;
constexpr double kPostGapS = 0.5;
constexpr double kPrerollS = 1.0;
constexpr double kBackgroundSigmaUv = 10.0;

void validate(const SynthConfig& config) {
  if (config.subjects < 1 || config.trials_per_class < 1) {
    throw std::invalid_argument("synth: subject and trial counts must be positive");
  }
  if (config.snr_db < -20.0 || config.snr_db > 40.0) {
    throw std::invalid_argument("synth: snr_db must lie in [-20, 40]");
  }
  if (config.fs_hz <= 240.0) {
    throw std::invalid_argument("synth: fs must exceed 240 Hz for the 30-120 Hz band");
  }
}

// pink (1/f) noise sample stream, Kellet's filtered-white construction
class PinkNoise {
 public:
  explicit PinkNoise(Rng& rng) : rng_(rng) {}

  double next() {
    const double w = rng_.gaussian();
    b0_ = 0.99886 * b0_ + w * 0.0555179;
    b1_ = 0.99332 * b1_ + w * 0.0750759;
    b2_ = 0.96900 * b2_ + w * 0.1538520;
    b3_ = 0.86650 * b3_ + w * 0.3104856;
    b4_ = 0.55000 * b4_ + w * 0.5329522;
    b5_ = -0.7616 * b5_ - w * 0.0168980;
    const double pink = b0_ + b1_ + b2_ + b3_ + b4_ + b5_ + b6_ + w * 0.5362;
    b6_ = w * 0.115926;
    return pink * 0.11;  // roughly unit variance
  }

 private:
  Rng& rng_;
  double b0_ = 0, b1_ = 0, b2_ = 0, b3_ = 0, b4_ = 0, b5_ = 0, b6_ = 0;
};

// raised-cosine bump over [0, 1], peak 1 at the centre
double bump(double u) { return 0.5 * (1.0 - std::cos(2.0 * M_PI * u)); }

// anchor channels for the 12 spoken classes: the full inner ring plus four
// spread positions of the second ring, all well inside the central region
std::vector<std::size_t> anchor_channels() {
  return {1, 2, 3, 4, 5, 6, 7, 8, 9, 12, 15, 18};
}

}  // namespace

Matrix class_mixing(std::uint64_t seed, const ChannelLayout& layout) {
  const auto& classes = word_table();
  const std::vector<std::size_t> anchors = anchor_channels();
  Rng rng(seed ^ 0x9e3779b97f4a7c15ull);

  Matrix mixing(classes.size(), layout.size());
  for (std::size_t c = 0; c + 1 < classes.size(); ++c) {  // last class is silent
    const auto& anchor = layout.positions[anchors[c]];
    double norm = 0.0;
    for (std::size_t i = 0; i < layout.size(); ++i) {
      const double dx = layout.positions[i][0] - anchor[0];
      const double dy = layout.positions[i][1] - anchor[1];
      const double d2 = dx * dx + dy * dy;
      double w = std::exp(-d2 / (2.0 * 0.12 * 0.12));
      w *= 1.0 + 0.15 * rng.gaussian();  // fixed random texture per class
      mixing(c, i) = w;
      norm += w * w;
    }
    norm = std::sqrt(norm);
    for (std::size_t i = 0; i < layout.size(); ++i) mixing(c, i) /= norm;
  }
  return mixing;
}

Recording synth_subject(const SynthConfig& config, int subject_id) {
  validate(config);
  if (subject_id < 0) throw std::invalid_argument("synth: subject id must be nonnegative");

  const ChannelLayout layout = default_layout();
  const std::size_t n_ch = layout.size();
  const double fs = config.fs_hz;
  const auto& classes = word_table();
  const std::size_t n_classes = classes.size();
  const int silent_id = static_cast<int>(n_classes) - 1;

  const Matrix base_mixing = class_mixing(config.seed, layout);
  Rng rng(config.seed + static_cast<std::uint64_t>(subject_id));

  // small per-subject rotation of every class pattern
  Matrix mixing = base_mixing;
  const double angle = 0.1;
  for (std::size_t c = 0; c + 1 < n_classes; ++c) {
    std::vector<double> u(n_ch);
    double dot = 0.0;
    for (std::size_t i = 0; i < n_ch; ++i) {
      u[i] = rng.gaussian();
      dot += u[i] * base_mixing(c, i);
    }
    double norm = 0.0;
    for (std::size_t i = 0; i < n_ch; ++i) {
      u[i] -= dot * base_mixing(c, i);
      norm += u[i] * u[i];
    }
    norm = std::sqrt(norm);
    for (std::size_t i = 0; i < n_ch; ++i) {
      mixing(c, i) = std::cos(angle) * base_mixing(c, i) + std::sin(angle) * u[i] / norm;
    }
  }

  // cue order: every class trials_per_class times, shuffled
  std::vector<int> labels;
  for (std::size_t c = 0; c < n_classes; ++c) {
    labels.insert(labels.end(), config.trials_per_class, static_cast<int>(c));
  }
  rng.shuffle(labels);

  const double stride_s = kBaselineGapS + kTrialWindowS + kPostGapS;
  const double total_s = kPrerollS + static_cast<double>(labels.size()) * stride_s + 1.0;
  const std::size_t n = static_cast<std::size_t>(std::lround(total_s * fs));
  const std::size_t trial_len = static_cast<std::size_t>(std::lround(kTrialWindowS * fs));

  Recording rec;
  rec.subject = subject_id;
  rec.fs_hz = fs;
  rec.layout = layout;
  rec.data = Matrix(n_ch, n);

  // background floor
  for (std::size_t ch = 0; ch < n_ch; ++ch) {
    PinkNoise pink(rng);
    double* row = rec.data.row(ch);
    for (std::size_t t = 0; t < n; ++t) row[t] = kBackgroundSigmaUv * pink.next();
  }

  // in-band noise power, probed on the first channel
  const BiquadCascade band = design_bandpass(30.0, 120.0, fs, 4);
  double noise_band_power = 0.0;
  {
    const std::size_t probe_len = std::min<std::size_t>(n, static_cast<std::size_t>(8.0 * fs));
    std::vector<double> probe(rec.data.row(0), rec.data.row(0) + probe_len);
    const std::vector<double> filtered = filtfilt(band, probe);
    for (double v : filtered) noise_band_power += v * v;
    noise_band_power /= static_cast<double>(probe_len);
  }

  // frontal blink artifacts, shared waveform with a frontal falloff
  std::vector<double> ocular(n, 0.0);
  {
    double t = kPrerollS * 0.5;
    while (t < total_s) {
      const double amp = rng.uniform(60.0, 110.0);
      const double width = 0.3;
      const std::size_t start = static_cast<std::size_t>(std::lround(t * fs));
      const std::size_t len = static_cast<std::size_t>(std::lround(width * fs));
      for (std::size_t k = 0; k < len && start + k < n; ++k) {
        ocular[start + k] += amp * bump(static_cast<double>(k) / static_cast<double>(len));
      }
      t += rng.uniform(1.5, 5.0);
    }
    for (std::size_t ch = 0; ch < n_ch; ++ch) {
      const double dx = layout.positions[ch][0];
      const double dy = layout.positions[ch][1] - 0.95;
      const double w = std::exp(-(dx * dx + dy * dy) / (2.0 * 0.25 * 0.25));
      if (w < 1e-4) continue;
      double* row = rec.data.row(ch);
      for (std::size_t t2 = 0; t2 < n; ++t2) row[t2] += w * ocular[t2];
    }
  }

  // temporal muscle bursts
  {
    const int n_bursts = std::max(2, static_cast<int>(std::lround(total_s / 90.0)));
    for (int burst = 0; burst < n_bursts; ++burst) {
      const double start_s = rng.uniform(0.0, total_s - 1.0);
      const double dur_s = rng.uniform(0.2, 0.5);
      const double amp = 45.0;
      const double side = rng.uniform() < 0.5 ? -0.9 : 0.9;
      const std::size_t start = static_cast<std::size_t>(std::lround(start_s * fs));
      const std::size_t len = static_cast<std::size_t>(std::lround(dur_s * fs));
      std::vector<double> noise(len);
      for (double& v : noise) v = rng.gaussian();
      for (std::size_t ch = 0; ch < n_ch; ++ch) {
        const double dx = layout.positions[ch][0] - side;
        const double dy = layout.positions[ch][1];
        const double w = std::exp(-(dx * dx + dy * dy) / (2.0 * 0.15 * 0.15));
        if (w < 1e-4) continue;
        double* row = rec.data.row(ch);
        for (std::size_t k = 0; k < len && start + k < n; ++k) {
          row[start + k] += amp * w * noise[k] * bump(static_cast<double>(k) / static_cast<double>(len));
        }
      }
    }
  }

  // cue trials
  const double snr_lin = std::pow(10.0, config.snr_db / 10.0);
  for (std::size_t k = 0; k < labels.size(); ++k) {
    const int label = labels[k];
    const double onset_s = kPrerollS + static_cast<double>(k) * stride_s + kBaselineGapS;
    const std::size_t onset = static_cast<std::size_t>(std::lround(onset_s * fs));
    rec.events.push_back({onset, label});
    if (label == silent_id) continue;  // the silent phase adds nothing

    // band-limited carrier, fresh per trial
    std::vector<double> carrier(trial_len);
    for (double& v : carrier) v = rng.gaussian();
    carrier = filtfilt(band, carrier);

    // class-specific amplitude modulation with soft edges
    const double mod_hz = 1.5 + 0.4 * static_cast<double>(label);
    std::vector<double> wave(trial_len);
    double power = 0.0;
    const std::size_t ramp = static_cast<std::size_t>(std::lround(0.1 * fs));
    for (std::size_t t = 0; t < trial_len; ++t) {
      double env = 0.55 + 0.45 * std::sin(2.0 * M_PI * mod_hz * static_cast<double>(t) / fs - M_PI / 2.0);
      if (t < ramp) env *= bump(0.5 * static_cast<double>(t) / static_cast<double>(ramp));
      if (trial_len - 1 - t < ramp) {
        env *= bump(0.5 * static_cast<double>(trial_len - 1 - t) / static_cast<double>(ramp));
      }
      wave[t] = env * carrier[t];
      power += wave[t] * wave[t];
    }
    power /= static_cast<double>(trial_len);

    double peak_sq = 0.0;
    for (std::size_t i = 0; i < n_ch; ++i) peak_sq = std::max(peak_sq, mixing(label, i) * mixing(label, i));
    const double gain = std::sqrt(snr_lin * noise_band_power / (peak_sq * power));

    for (std::size_t ch = 0; ch < n_ch; ++ch) {
      const double w = gain * mixing(label, ch);
      if (std::fabs(w) < 1e-9) continue;
      double* row = rec.data.row(ch);
      for (std::size_t t = 0; t < trial_len; ++t) row[onset + t] += w * wave[t];
    }
  }

  // quantize to float32 so the on-disk container round-trips bit-exactly
  for (double& v : rec.data.data()) v = static_cast<double>(static_cast<float>(v));
  return rec;
}

Dataset synth_dataset(const SynthConfig& config) {
  validate(config);
  Dataset dataset;
  dataset.manifest.fs_hz = config.fs_hz;
  dataset.manifest.seed = config.seed;
  dataset.manifest.trials_per_class = config.trials_per_class;
  dataset.manifest.snr_db = config.snr_db;
  dataset.manifest.classes = word_table();
  dataset.manifest.layout = default_layout();
  dataset.manifest.mixing = class_mixing(config.seed, dataset.manifest.layout);
  for (int s = 0; s < config.subjects; ++s) {
    dataset.manifest.subjects.push_back(s);
    dataset.recordings.push_back(synth_subject(config, s));
  }
  return dataset;
}

void write_dataset(const Dataset& dataset, const std::string& dir) {
  namespace fs = std::filesystem;
  fs::create_directories(dir);

  nlohmann::json manifest;
  manifest["format"] = "b2t-dataset";
  manifest["version"] = 1;
  manifest["fs_hz"] = dataset.manifest.fs_hz;
  manifest["seed"] = dataset.manifest.seed;
  manifest["trials_per_class"] = dataset.manifest.trials_per_class;
  manifest["snr_db"] = dataset.manifest.snr_db;
  manifest["subjects"] = dataset.manifest.subjects;

  nlohmann::json classes = nlohmann::json::array();
  for (const WordLabel& w : dataset.manifest.classes) {
    classes.push_back({{"id", w.id}, {"text", w.text}});
  }
  manifest["classes"] = classes;

  nlohmann::json layout;
  layout["names"] = dataset.manifest.layout.names;
  nlohmann::json positions = nlohmann::json::array();
  for (const auto& p : dataset.manifest.layout.positions) {
    positions.push_back({p[0], p[1]});
  }
  layout["positions"] = positions;
  manifest["layout"] = layout;

  nlohmann::json mixing = nlohmann::json::array();
  for (std::size_t r = 0; r < dataset.manifest.mixing.rows(); ++r) {
    nlohmann::json row = nlohmann::json::array();
    for (std::size_t c = 0; c < dataset.manifest.mixing.cols(); ++c) {
      row.push_back(dataset.manifest.mixing(r, c));
    }
    mixing.push_back(row);
  }
  manifest["mixing"] = mixing;

  nlohmann::json files = nlohmann::json::array();
  for (const Recording& rec : dataset.recordings) {
    char name[32];
    std::snprintf(name, sizeof(name), "subject_%03d.f32", rec.subject);
    nlohmann::json entry;
    entry["subject"] = rec.subject;
    entry["path"] = name;
    entry["n_channels"] = rec.n_channels();
    entry["n_samples"] = rec.n_samples();
    nlohmann::json events = nlohmann::json::array();
    for (const Event& ev : rec.events) {
      events.push_back({ev.sample, ev.label});
    }
    entry["events"] = events;
    files.push_back(entry);

    std::vector<float> values(rec.data.data().size());
    for (std::size_t i = 0; i < values.size(); ++i) {
      values[i] = static_cast<float>(rec.data.data()[i]);
    }
    write_f32((fs::path(dir) / name).string(), values);
  }
  manifest["files"] = files;

  std::ofstream out(fs::path(dir) / "manifest.json", std::ios::trunc);
  if (!out) throw std::runtime_error("cannot write dataset manifest in " + dir);
  out << manifest.dump(2) << "\n";
}

Dataset read_dataset(const std::string& dir) {
  namespace fs = std::filesystem;
  std::ifstream in(fs::path(dir) / "manifest.json");
  if (!in) throw std::runtime_error("cannot read dataset manifest in " + dir);
  nlohmann::json manifest = nlohmann::json::parse(in);
  if (manifest.value("format", "") != "b2t-dataset") {
    throw std::runtime_error("not a dataset directory: " + dir);
  }

  Dataset dataset;
  dataset.manifest.fs_hz = manifest.at("fs_hz").get<double>();
  dataset.manifest.seed = manifest.at("seed").get<std::uint64_t>();
  dataset.manifest.trials_per_class = manifest.at("trials_per_class").get<int>();
  dataset.manifest.snr_db = manifest.at("snr_db").get<double>();
  dataset.manifest.subjects = manifest.at("subjects").get<std::vector<int>>();

  for (const auto& entry : manifest.at("classes")) {
    dataset.manifest.classes.push_back(
        {entry.at("id").get<int>(), entry.at("text").get<std::string>()});
  }

  const auto& layout = manifest.at("layout");
  dataset.manifest.layout.names = layout.at("names").get<std::vector<std::string>>();
  for (const auto& p : layout.at("positions")) {
    dataset.manifest.layout.positions.push_back({p.at(0).get<double>(), p.at(1).get<double>()});
  }

  const auto& mixing = manifest.at("mixing");
  dataset.manifest.mixing =
      Matrix(mixing.size(), dataset.manifest.layout.size());
  for (std::size_t r = 0; r < mixing.size(); ++r) {
    for (std::size_t c = 0; c < dataset.manifest.layout.size(); ++c) {
      dataset.manifest.mixing(r, c) = mixing.at(r).at(c).get<double>();
    }
  }

  for (const auto& entry : manifest.at("files")) {
    Recording rec;
    rec.subject = entry.at("subject").get<int>();
    rec.fs_hz = dataset.manifest.fs_hz;
    rec.layout = dataset.manifest.layout;
    const std::size_t n_ch = entry.at("n_channels").get<std::size_t>();
    const std::size_t n = entry.at("n_samples").get<std::size_t>();
    const std::vector<float> values =
        read_f32((fs::path(dir) / entry.at("path").get<std::string>()).string(), n_ch * n);
    rec.data = Matrix(n_ch, n);
    for (std::size_t i = 0; i < values.size(); ++i) rec.data.data()[i] = values[i];
    for (const auto& ev : entry.at("events")) {
      rec.events.push_back({ev.at(0).get<std::size_t>(), ev.at(1).get<int>()});
    }
    dataset.recordings.push_back(std::move(rec));
  }
  return dataset;
}

Protocol protocol_from_string(const std::string& name) {
  if (name == "seen_only") return Protocol::seen_only;
  if (name == "unseen_word") return Protocol::unseen_word;
  if (name == "cross_subject") return Protocol::cross_subject;
  throw std::invalid_argument("unknown protocol: " + name);
}

std::string to_string(Protocol protocol) {
  switch (protocol) {
    case Protocol::seen_only: return "seen_only";
    case Protocol::unseen_word: return "unseen_word";
    case Protocol::cross_subject: return "cross_subject";
  }
  throw std::logic_error("unreachable");
}

std::vector<TrialKey> trial_table(const Dataset& dataset) {
  std::vector<TrialKey> trials;
  for (const Recording& rec : dataset.recordings) {
    for (const Event& ev : rec.events) trials.push_back({rec.subject, ev.label});
  }
  return trials;
}

FoldSplit make_folds(const std::vector<TrialKey>& trials, const std::vector<WordLabel>& classes,
                     std::size_t fold_count, std::uint64_t seed, Protocol protocol,
                     const std::string& held_out_word, int held_out_subject) {
  if (fold_count < 2) throw std::invalid_argument("make_folds: needs at least two folds");
  if (trials.empty()) throw std::invalid_argument("make_folds: no trials");

  int held_out_label = -1;
  if (protocol == Protocol::unseen_word) {
    for (const WordLabel& w : classes) {
      if (w.text == held_out_word) held_out_label = w.id;
    }
    if (held_out_label < 0) {
      throw std::invalid_argument("make_folds: held-out word is not in the class table");
    }
  }
  if (protocol == Protocol::cross_subject) {
    bool found = false;
    for (const TrialKey& t : trials) found = found || t.subject == held_out_subject;
    if (!found) {
      throw std::invalid_argument("make_folds: held-out subject has no trials");
    }
  }

  std::map<int, std::vector<std::size_t>> by_label;
  for (std::size_t i = 0; i < trials.size(); ++i) by_label[trials[i].label].push_back(i);
  for (const auto& [label, members] : by_label) {
    if (members.size() < fold_count) {
      throw std::invalid_argument("make_folds: a class has fewer trials than folds");
    }
  }

  FoldSplit split;
  split.fold_count = fold_count;
  split.protocol = protocol;
  split.assignment.assign(trials.size(), 0);
  split.held_out_label = held_out_label;
  split.held_out_subject = protocol == Protocol::cross_subject ? held_out_subject : -1;

  Rng rng(seed);
  const int last_fold = static_cast<int>(fold_count) - 1;
  // training folds only, when one fold is reserved for a held-out subject
  const std::size_t deal_folds =
      protocol == Protocol::cross_subject ? fold_count - 1 : fold_count;

  for (auto& [label, members] : by_label) {
    std::vector<std::size_t> pool;
    for (std::size_t idx : members) {
      if (protocol == Protocol::cross_subject && trials[idx].subject == held_out_subject) {
        split.assignment[idx] = last_fold;
      } else {
        pool.push_back(idx);
      }
    }
    rng.shuffle(pool);
    const std::size_t offset = pool.empty() ? 0 : rng.index(deal_folds);
    for (std::size_t i = 0; i < pool.size(); ++i) {
      split.assignment[pool[i]] = static_cast<int>((offset + i) % deal_folds);
    }
  }

  if (protocol == Protocol::unseen_word) {
    for (std::size_t i = 0; i < trials.size(); ++i) {
      if (trials[i].label == held_out_label) split.assignment[i] = last_fold;
    }
  }
  return split;
}

}  // namespace b2t
