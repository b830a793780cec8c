#include "b2t/experiment.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <set>
#include <thread>

#include "b2t/layout.hpp"
#include "b2t/rawio.hpp"
#include "b2t/rng.hpp"
#include "json.hpp"

namespace b2t {

namespace {

std::string fnv1a_hash(std::vector<std::size_t> ids) {
  std::sort(ids.begin(), ids.end());
  std::uint64_t h = 14695981039346656037ull;
  for (std::size_t id : ids) {
    std::uint64_t v = id;
    for (int byte = 0; byte < 8; ++byte) {
      h ^= v & 0xffu;
      h *= 1099511628211ull;
      v >>= 8;
    }
  }
  char buf[17];
  std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

const WordLabel& word_by_id(const std::vector<WordLabel>& words, int id) {
  for (const WordLabel& w : words) {
    if (w.id == id) return w;
  }
  throw std::runtime_error("trial label " + std::to_string(id) + " is not in the word table");
}

nlohmann::json summary_to_json(const CerSummary& summary) {
  return {{"mean_pct", summary.mean_pct},
          {"std_pct", summary.std_pct},
          {"n_subjects", summary.n_subjects},
          {"n_trials", summary.n_trials}};
}

std::string format_double(const char* fmt, double v) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), fmt, v);
  return buf;
}

struct RunWork {
  RunReport report;
  std::vector<TrialCer> rows;
};

struct RunContext {
  const PreprocessedSet* set = nullptr;
  const ExperimentConfig* config = nullptr;
  const FoldSplit* split = nullptr;
  const std::vector<WordLabel>* words = nullptr;
};

RunWork execute_run(const RunContext& ctx, const RunPlan& plan) {
  const PreprocessedSet& set = *ctx.set;
  const ExperimentConfig& config = *ctx.config;
  const FoldSplit& split = *ctx.split;
  const std::vector<WordLabel>& words = *ctx.words;

  auto in_folds = [&](std::size_t trial, const std::vector<int>& folds) {
    return std::find(folds.begin(), folds.end(), split.assignment[trial]) != folds.end();
  };

  std::vector<std::size_t> train_ids, eval_ids;
  for (std::size_t i = 0; i < set.epochs.size(); ++i) {
    if (in_folds(i, plan.train_folds)) train_ids.push_back(i);
    if (in_folds(i, plan.eval_folds)) eval_ids.push_back(i);
  }
  if (train_ids.empty() || eval_ids.empty()) {
    throw std::runtime_error("run " + std::to_string(plan.run) +
                             " has an empty training or evaluation split");
  }

  // training labels; the shuffle control permutes them among the training
  // trials while evaluation keeps the true transcripts
  std::vector<int> train_labels(train_ids.size());
  for (std::size_t i = 0; i < train_ids.size(); ++i) {
    train_labels[i] = set.epochs[train_ids[i]].label;
  }
  if (config.shuffle_labels) {
    Rng rng(config.protocol.split_seed ^ 0x73687566666cull ^ plan.run);
    rng.shuffle(train_labels);
  }

  // one covariance per class over its training trials
  std::map<int, std::vector<std::size_t>> class_members;
  for (std::size_t i = 0; i < train_ids.size(); ++i) {
    class_members[train_labels[i]].push_back(train_ids[i]);
  }
  std::vector<std::size_t> csp_ids;
  if (config.csp.fit_all_classes) {
    for (const WordLabel& w : words) {
      if (class_members.count(w.id)) continue;
      for (std::size_t i = 0; i < set.epochs.size(); ++i) {
        if (set.epochs[i].label == w.id) class_members[w.id].push_back(i);
      }
    }
  }
  std::vector<Matrix> class_covs;
  std::vector<int> class_ids;
  for (const auto& [label, members] : class_members) {
    if (members.empty()) continue;
    Matrix mean_cov(set.layout.size(), set.layout.size());
    for (std::size_t idx : members) {
      mean_cov = mean_cov + estimate_covariance(set.epochs[idx].data, config.csp.shrinkage).cov;
      csp_ids.push_back(idx);
    }
    class_covs.push_back((1.0 / static_cast<double>(members.size())) * mean_cov);
    class_ids.push_back(label);
  }
  SpatialFilterBank bank =
      fit_multicsp(class_covs, class_ids, config.csp.patterns_per_class);
  bank.window_count = config.csp.window_count;

  const std::size_t max_len = config.gan.max_len;
  const std::size_t vocab = config.gan.vocab;
  const std::size_t z_dim = bank.n_filters() * bank.window_count;

  Matrix z_train(train_ids.size(), z_dim);
  Matrix x_train(train_ids.size(), max_len * vocab);
  for (std::size_t i = 0; i < train_ids.size(); ++i) {
    const std::vector<double> features = embed(set.epochs[train_ids[i]], bank).flat();
    std::copy(features.begin(), features.end(), z_train.row(i));
    const WordLabel& w = word_by_id(words, train_labels[i]);
    const std::vector<double> target =
        encode_text(transcript(w), max_len, config.target_smoothing).flat();
    std::copy(target.begin(), target.end(), x_train.row(i));
  }

  GanConfig gan = config.gan;
  gan.z_dim = 0;  // follow the embedding width
  gan.seed = config.gan.seed + plan.run;
  const TrainResult model = train_gan(z_train, x_train, gan);

  Matrix z_eval(eval_ids.size(), z_dim);
  for (std::size_t i = 0; i < eval_ids.size(); ++i) {
    const std::vector<double> features = embed(set.epochs[eval_ids[i]], bank).flat();
    std::copy(features.begin(), features.end(), z_eval.row(i));
  }
  const Matrix generated = generate(model.generator, z_eval);

  RunWork work;
  std::vector<CerSample> seen_samples, unseen_samples;
  for (std::size_t i = 0; i < eval_ids.size(); ++i) {
    const Epoch& epoch = set.epochs[eval_ids[i]];
    const WordLabel& w = word_by_id(words, epoch.label);
    TrialCer row;
    row.run = plan.run;
    row.trial = eval_ids[i];
    row.subject = epoch.subject;
    row.fold = split.assignment[eval_ids[i]];
    row.word_id = w.id;
    row.word = w.text;
    row.decoded = decode(as_sequence(generated, i, max_len, vocab));
    row.unseen = split.protocol == Protocol::unseen_word && w.id == split.held_out_label;
    row.cer = cer(transcript(w), row.decoded);
    (row.unseen ? unseen_samples : seen_samples).push_back({row.subject, row.cer});
    work.rows.push_back(std::move(row));
  }

  RunReport& report = work.report;
  report.run = plan.run;
  report.train_size = train_ids.size();
  report.eval_size = eval_ids.size();
  report.seen = report_cer(seen_samples);
  report.has_unseen = split.protocol == Protocol::unseen_word;
  report.unseen = report_cer(unseen_samples);
  report.gan_epochs = model.history.size();
  report.gan_final = model.history.back();

  // hygiene audit on the true labels and subjects
  HygieneReport& hygiene = report.hygiene;
  hygiene.train_hash = fnv1a_hash(train_ids);
  hygiene.csp_hash = fnv1a_hash(csp_ids);
  const std::set<std::size_t> train_set(train_ids.begin(), train_ids.end());
  hygiene.disjoint_train_eval = true;
  for (std::size_t idx : eval_ids) {
    if (train_set.count(idx)) hygiene.disjoint_train_eval = false;
  }
  auto leaks = [&](const std::vector<std::size_t>& ids) {
    for (std::size_t idx : ids) {
      const Epoch& epoch = set.epochs[idx];
      if (split.protocol == Protocol::unseen_word && epoch.label == split.held_out_label) {
        return true;
      }
      if (split.protocol == Protocol::cross_subject &&
          epoch.subject == split.held_out_subject) {
        return true;
      }
    }
    return false;
  };
  hygiene.held_out_absent_from_training = !leaks(train_ids);
  hygiene.held_out_absent_from_csp = !leaks(csp_ids);
  hygiene.ok = hygiene.disjoint_train_eval && hygiene.held_out_absent_from_training &&
               hygiene.held_out_absent_from_csp;
  return work;
}

// "protocol" is both a section and a key inside it, so a flat config is an
// easy mistake; fail with the section name instead of a json type error
const nlohmann::json& config_section(const nlohmann::json& j, const char* name) {
  const auto& section = j.at(name);
  if (!section.is_object()) {
    throw std::runtime_error(std::string("config: \"") + name +
                             "\" must be an object of settings");
  }
  return section;
}

}  // namespace

ExperimentConfig load_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot read config: " + path);
  const nlohmann::json j = nlohmann::json::parse(in);
  if (!j.is_object()) throw std::runtime_error("config: top level must be a JSON object");
  ExperimentConfig config;

  if (j.contains("synth")) {
    const auto& s = config_section(j, "synth");
    config.synth.subjects = s.value("subjects", config.synth.subjects);
    config.synth.trials_per_class = s.value("trials_per_class", config.synth.trials_per_class);
    config.synth.fs_hz = s.value("fs_hz", config.synth.fs_hz);
    config.synth.snr_db = s.value("snr_db", config.synth.snr_db);
    config.synth.seed = s.value("seed", config.synth.seed);
  }
  if (j.contains("preprocess")) {
    const auto& p = config_section(j, "preprocess");
    config.preprocess.wide_low_hz = p.value("wide_low_hz", config.preprocess.wide_low_hz);
    config.preprocess.wide_high_hz = p.value("wide_high_hz", config.preprocess.wide_high_hz);
    config.preprocess.wide_order = p.value("wide_order", config.preprocess.wide_order);
    config.preprocess.notch_hz = p.value("notch_hz", config.preprocess.notch_hz);
    config.preprocess.notch_q = p.value("notch_q", config.preprocess.notch_q);
    config.preprocess.target_fs_hz = p.value("target_fs_hz", config.preprocess.target_fs_hz);
    config.preprocess.model_low_hz = p.value("model_low_hz", config.preprocess.model_low_hz);
    config.preprocess.model_high_hz = p.value("model_high_hz", config.preprocess.model_high_hz);
    config.preprocess.model_order = p.value("model_order", config.preprocess.model_order);
    config.preprocess.emg_threshold = p.value("emg_threshold", config.preprocess.emg_threshold);
    config.preprocess.window_s = p.value("window_s", config.preprocess.window_s);
    config.preprocess.baseline_s = p.value("baseline_s", config.preprocess.baseline_s);
  }
  if (j.contains("csp")) {
    const auto& c = config_section(j, "csp");
    config.csp.patterns_per_class = c.value("patterns_per_class", config.csp.patterns_per_class);
    config.csp.shrinkage = c.value("shrinkage", config.csp.shrinkage);
    config.csp.window_count = c.value("window_count", config.csp.window_count);
    config.csp.fit_all_classes = c.value("fit_all_classes", config.csp.fit_all_classes);
  }
  if (j.contains("protocol")) {
    const auto& p = config_section(j, "protocol");
    config.protocol.protocol =
        protocol_from_string(p.value("protocol", to_string(config.protocol.protocol)));
    config.protocol.folds = p.value("folds", config.protocol.folds);
    config.protocol.split_seed = p.value("split_seed", config.protocol.split_seed);
    config.protocol.held_out_word = p.value("held_out_word", config.protocol.held_out_word);
    config.protocol.held_out_subject =
        p.value("held_out_subject", config.protocol.held_out_subject);
  }
  if (j.contains("gan")) {
    const auto& g = config_section(j, "gan");
    config.gan.g_hidden = g.value("g_hidden", config.gan.g_hidden);
    config.gan.d_hidden = g.value("d_hidden", config.gan.d_hidden);
    config.gan.adam.lr = g.value("lr", config.gan.adam.lr);
    config.gan.adam.beta1 = g.value("beta1", config.gan.adam.beta1);
    config.gan.adam.beta2 = g.value("beta2", config.gan.adam.beta2);
    config.gan.adam.eps = g.value("eps", config.gan.adam.eps);
    config.gan.batch = g.value("batch", config.gan.batch);
    config.gan.epochs = g.value("epochs", config.gan.epochs);
    config.gan.d_steps = g.value("d_steps", config.gan.d_steps);
    config.gan.g_steps = g.value("g_steps", config.gan.g_steps);
    config.gan.recon_weight = g.value("recon_weight", config.gan.recon_weight);
    config.gan.noise_sigma = g.value("noise_sigma", config.gan.noise_sigma);
    config.gan.seed = g.value("seed", config.gan.seed);
  }
  config.target_smoothing = j.value("target_smoothing", config.target_smoothing);
  config.shuffle_labels = j.value("shuffle_labels", config.shuffle_labels);
  config.jobs = j.value("jobs", config.jobs);
  config.out_dir = j.value("out_dir", config.out_dir);
  return config;
}

void save_config(const ExperimentConfig& config, const std::string& path) {
  nlohmann::json j;
  j["synth"] = {{"subjects", config.synth.subjects},
                {"trials_per_class", config.synth.trials_per_class},
                {"fs_hz", config.synth.fs_hz},
                {"snr_db", config.synth.snr_db},
                {"seed", config.synth.seed}};
  j["preprocess"] = {{"wide_low_hz", config.preprocess.wide_low_hz},
                     {"wide_high_hz", config.preprocess.wide_high_hz},
                     {"wide_order", config.preprocess.wide_order},
                     {"notch_hz", config.preprocess.notch_hz},
                     {"notch_q", config.preprocess.notch_q},
                     {"target_fs_hz", config.preprocess.target_fs_hz},
                     {"model_low_hz", config.preprocess.model_low_hz},
                     {"model_high_hz", config.preprocess.model_high_hz},
                     {"model_order", config.preprocess.model_order},
                     {"emg_threshold", config.preprocess.emg_threshold},
                     {"window_s", config.preprocess.window_s},
                     {"baseline_s", config.preprocess.baseline_s}};
  j["csp"] = {{"patterns_per_class", config.csp.patterns_per_class},
              {"shrinkage", config.csp.shrinkage},
              {"window_count", config.csp.window_count},
              {"fit_all_classes", config.csp.fit_all_classes}};
  j["protocol"] = {{"protocol", to_string(config.protocol.protocol)},
                   {"folds", config.protocol.folds},
                   {"split_seed", config.protocol.split_seed},
                   {"held_out_word", config.protocol.held_out_word},
                   {"held_out_subject", config.protocol.held_out_subject}};
  j["gan"] = {{"g_hidden", config.gan.g_hidden},
              {"d_hidden", config.gan.d_hidden},
              {"lr", config.gan.adam.lr},
              {"beta1", config.gan.adam.beta1},
              {"beta2", config.gan.adam.beta2},
              {"eps", config.gan.adam.eps},
              {"batch", config.gan.batch},
              {"epochs", config.gan.epochs},
              {"d_steps", config.gan.d_steps},
              {"g_steps", config.gan.g_steps},
              {"recon_weight", config.gan.recon_weight},
              {"noise_sigma", config.gan.noise_sigma},
              {"seed", config.gan.seed}};
  j["target_smoothing"] = config.target_smoothing;
  j["shuffle_labels"] = config.shuffle_labels;
  j["jobs"] = config.jobs;
  j["out_dir"] = config.out_dir;

  std::ofstream out(path, std::ios::trunc);
  if (!out) throw std::runtime_error("cannot write config: " + path);
  out << j.dump(2) << "\n";
}

PreprocessedSet preprocess_recording(Recording rec, const PreprocessConfig& config) {
  const double ratio = rec.fs_hz / config.target_fs_hz;
  const int factor = static_cast<int>(std::lround(ratio));
  if (factor < 1 || std::fabs(ratio - factor) > 1e-9) {
    throw std::invalid_argument("preprocess: sample rate is not an integer multiple of " +
                                std::to_string(config.target_fs_hz) + " Hz");
  }

  filtfilt_rows(design_bandpass(config.wide_low_hz, config.wide_high_hz, rec.fs_hz,
                                config.wide_order),
                rec.data);
  for (double f0 : config.notch_hz) {
    filtfilt_rows(design_notch(f0, config.notch_q, rec.fs_hz), rec.data);
  }

  Recording work = decimate(rec, factor);
  rec.data = Matrix(0, 0);  // release the raw-rate buffer

  work.data = common_average_reference(work.data);

  const auto refs = frontal_pair(work.layout);
  ArtifactResult cleaned = remove_artifacts(
      work.data, work.fs_hz, {refs[0], refs[1]}, config.emg_threshold);
  work.data = std::move(cleaned.data);

  filtfilt_rows(design_bandpass(config.model_low_hz, config.model_high_hz, work.fs_hz,
                                config.model_order),
                work.data);

  EpochResult result =
      epoch_and_baseline(work, config.window_s, config.baseline_s, &cleaned.flagged);

  PreprocessedSet set;
  set.fs_hz = work.fs_hz;
  set.layout = work.layout;
  set.epochs = std::move(result.epochs);
  return set;
}

PreprocessedSet preprocess_dataset(const Dataset& dataset, const PreprocessConfig& config) {
  PreprocessedSet set;
  for (const Recording& rec : dataset.recordings) {
    PreprocessedSet one = preprocess_recording(rec, config);
    if (set.layout.size() == 0) {
      set.fs_hz = one.fs_hz;
      set.layout = one.layout;
    }
    std::move(one.epochs.begin(), one.epochs.end(), std::back_inserter(set.epochs));
  }
  return set;
}

void write_epochs(const PreprocessedSet& set, const std::string& dir) {
  namespace fs = std::filesystem;
  fs::create_directories(dir);

  nlohmann::json meta;
  meta["format"] = "b2t-epochs";
  meta["version"] = 1;
  meta["fs_hz"] = set.fs_hz;
  meta["names"] = set.layout.names;
  nlohmann::json positions = nlohmann::json::array();
  for (const auto& p : set.layout.positions) positions.push_back({p[0], p[1]});
  meta["positions"] = positions;

  std::vector<float> values;
  nlohmann::json epochs = nlohmann::json::array();
  for (const Epoch& epoch : set.epochs) {
    epochs.push_back({{"subject", epoch.subject},
                      {"label", epoch.label},
                      {"onset", epoch.onset},
                      {"flagged_fraction", epoch.flagged_fraction},
                      {"window", epoch.data.cols()},
                      {"baseline", epoch.baseline.cols()}});
    for (double v : epoch.data.data()) values.push_back(static_cast<float>(v));
    for (double v : epoch.baseline.data()) values.push_back(static_cast<float>(v));
  }
  meta["epochs"] = epochs;

  std::ofstream out(fs::path(dir) / "epochs.json", std::ios::trunc);
  if (!out) throw std::runtime_error("cannot write epoch metadata in " + dir);
  out << meta.dump(2) << "\n";
  write_f32((fs::path(dir) / "epochs.f32").string(), values);
}

PreprocessedSet read_epochs(const std::string& dir) {
  namespace fs = std::filesystem;
  std::ifstream in(fs::path(dir) / "epochs.json");
  if (!in) throw std::runtime_error("cannot read epoch metadata in " + dir);
  const nlohmann::json meta = nlohmann::json::parse(in);
  if (meta.value("format", "") != "b2t-epochs") {
    throw std::runtime_error("not an epochs directory: " + dir);
  }

  PreprocessedSet set;
  set.fs_hz = meta.at("fs_hz").get<double>();
  set.layout.names = meta.at("names").get<std::vector<std::string>>();
  for (const auto& p : meta.at("positions")) {
    set.layout.positions.push_back({p.at(0).get<double>(), p.at(1).get<double>()});
  }
  const std::size_t n_ch = set.layout.size();

  std::size_t total = 0;
  for (const auto& entry : meta.at("epochs")) {
    total += n_ch * (entry.at("window").get<std::size_t>() +
                     entry.at("baseline").get<std::size_t>());
  }
  const std::vector<float> values = read_f32((fs::path(dir) / "epochs.f32").string(), total);

  std::size_t cursor = 0;
  for (const auto& entry : meta.at("epochs")) {
    Epoch epoch;
    epoch.subject = entry.at("subject").get<int>();
    epoch.label = entry.at("label").get<int>();
    epoch.onset = entry.at("onset").get<std::size_t>();
    epoch.flagged_fraction = entry.at("flagged_fraction").get<double>();
    epoch.fs_hz = set.fs_hz;
    epoch.data = Matrix(n_ch, entry.at("window").get<std::size_t>());
    epoch.baseline = Matrix(n_ch, entry.at("baseline").get<std::size_t>());
    for (double& v : epoch.data.data()) v = values[cursor++];
    for (double& v : epoch.baseline.data()) v = values[cursor++];
    set.epochs.push_back(std::move(epoch));
  }
  return set;
}

std::vector<RunPlan> protocol_runs(Protocol protocol, std::size_t folds) {
  std::vector<RunPlan> plans;
  switch (protocol) {
    case Protocol::seen_only: {
      if (folds < 2) throw std::invalid_argument("seen_only needs at least 2 folds");
      for (std::size_t r = 0; r < folds; ++r) {
        RunPlan plan;
        plan.run = r;
        for (std::size_t f = 0; f < folds; ++f) {
          if (f == r) {
            plan.eval_folds.push_back(static_cast<int>(f));
          } else {
            plan.train_folds.push_back(static_cast<int>(f));
          }
        }
        plans.push_back(std::move(plan));
      }
      return plans;
    }
    case Protocol::unseen_word: {
      if (folds < 3) throw std::invalid_argument("unseen_word needs at least 3 folds");
      RunPlan plan;
      plan.run = 0;
      for (std::size_t f = 0; f + 2 < folds; ++f) plan.train_folds.push_back(static_cast<int>(f));
      plan.eval_folds = {static_cast<int>(folds) - 2, static_cast<int>(folds) - 1};
      plans.push_back(std::move(plan));
      return plans;
    }
    case Protocol::cross_subject: {
      if (folds < 2) throw std::invalid_argument("cross_subject needs at least 2 folds");
      RunPlan plan;
      plan.run = 0;
      for (std::size_t f = 0; f + 1 < folds; ++f) plan.train_folds.push_back(static_cast<int>(f));
      plan.eval_folds = {static_cast<int>(folds) - 1};
      plans.push_back(std::move(plan));
      return plans;
    }
  }
  throw std::logic_error("unreachable");
}

SpatialMap spatial_analysis(const PreprocessedSet& set) {
  const std::vector<WordLabel>& words = word_table();
  const std::size_t n_ch = set.layout.size();

  SpatialMap map;
  map.words = words;
  map.ers_db = Matrix(words.size(), n_ch);
  map.counts.assign(words.size(), 0);

  for (std::size_t w = 0; w < words.size(); ++w) {
    for (const Epoch& epoch : set.epochs) {
      if (epoch.label != words[w].id) continue;
      if (epoch.data.cols() == 0 || epoch.baseline.cols() == 0) {
        throw std::runtime_error("spatial analysis needs nonempty window and baseline blocks");
      }
      map.counts[w] += 1;
      for (std::size_t ch = 0; ch < n_ch; ++ch) {
        double post = 0.0, base = 0.0;
        const double* row = epoch.data.row(ch);
        for (std::size_t t = 0; t < epoch.data.cols(); ++t) post += row[t] * row[t];
        post /= static_cast<double>(epoch.data.cols());
        const double* b = epoch.baseline.row(ch);
        for (std::size_t t = 0; t < epoch.baseline.cols(); ++t) base += b[t] * b[t];
        base /= static_cast<double>(epoch.baseline.cols());
        map.ers_db(w, ch) +=
            10.0 * std::log10(std::max(post, 1e-30) / std::max(base, 1e-30));
      }
    }
    if (map.counts[w] == 0) {
      throw std::runtime_error("no trials for word '" + words[w].text + "'");
    }
    for (std::size_t ch = 0; ch < n_ch; ++ch) {
      map.ers_db(w, ch) /= static_cast<double>(map.counts[w]);
    }
  }
  return map;
}

EvalReport evaluate_protocol(const PreprocessedSet& set, const ExperimentConfig& config) {
  if (set.epochs.empty()) throw std::invalid_argument("evaluate_protocol: no epochs");
  const std::vector<WordLabel>& words = word_table();

  std::vector<TrialKey> trials;
  for (const Epoch& epoch : set.epochs) trials.push_back({epoch.subject, epoch.label});
  const FoldSplit split =
      make_folds(trials, words, config.protocol.folds, config.protocol.split_seed,
                 config.protocol.protocol, config.protocol.held_out_word,
                 config.protocol.held_out_subject);
  const std::vector<RunPlan> plans =
      protocol_runs(config.protocol.protocol, config.protocol.folds);

  RunContext ctx{&set, &config, &split, &words};
  std::vector<RunWork> works(plans.size());
  const std::size_t jobs = std::min<std::size_t>(
      plans.size(), static_cast<std::size_t>(std::max(1, config.jobs)));

  if (jobs <= 1) {
    for (std::size_t i = 0; i < plans.size(); ++i) works[i] = execute_run(ctx, plans[i]);
  } else {
    std::atomic<std::size_t> next{0};
    std::vector<std::exception_ptr> errors(plans.size());
    std::vector<std::thread> pool;
    for (std::size_t t = 0; t < jobs; ++t) {
      pool.emplace_back([&]() {
        for (std::size_t i = next.fetch_add(1); i < plans.size(); i = next.fetch_add(1)) {
          try {
            works[i] = execute_run(ctx, plans[i]);
          } catch (...) {
            errors[i] = std::current_exception();
          }
        }
      });
    }
    for (std::thread& t : pool) t.join();
    for (const std::exception_ptr& e : errors) {
      if (e) std::rethrow_exception(e);
    }
  }

  EvalReport report;
  report.protocol = to_string(config.protocol.protocol);
  report.folds = config.protocol.folds;
  report.layout = set.layout;
  std::vector<CerSample> seen_samples, unseen_samples;
  for (RunWork& work : works) {
    for (TrialCer& row : work.rows) {
      (row.unseen ? unseen_samples : seen_samples).push_back({row.subject, row.cer});
      report.trials.push_back(std::move(row));
    }
    report.has_unseen = report.has_unseen || work.report.has_unseen;
    report.runs.push_back(std::move(work.report));
  }
  report.seen = report_cer(seen_samples);
  report.unseen = report_cer(unseen_samples);
  report.spatial = spatial_analysis(set);
  return report;
}

void validate_report(const EvalReport& report) {
  auto fail = [](const std::string& what) {
    throw std::runtime_error("inconsistent report: " + what);
  };
  if (report.runs.empty()) fail("no runs");

  for (std::size_t i = 1; i < report.trials.size(); ++i) {
    const TrialCer& a = report.trials[i - 1];
    const TrialCer& b = report.trials[i];
    if (a.run > b.run || (a.run == b.run && a.trial >= b.trial)) {
      fail("trial rows are not ordered by (run, trial)");
    }
  }

  std::vector<CerSample> seen_samples, unseen_samples;
  for (const RunReport& run : report.runs) {
    std::vector<CerSample> run_seen, run_unseen;
    std::size_t rows = 0;
    for (const TrialCer& row : report.trials) {
      if (row.run != run.run) continue;
      rows += 1;
      (row.unseen ? run_unseen : run_seen).push_back({row.subject, row.cer});
      (row.unseen ? unseen_samples : seen_samples).push_back({row.subject, row.cer});
    }
    if (rows != run.eval_size) fail("run eval_size disagrees with its trial rows");
    const CerSummary seen = report_cer(run_seen);
    const CerSummary unseen = report_cer(run_unseen);
    if (std::fabs(seen.mean_pct - run.seen.mean_pct) > 1e-9 ||
        std::fabs(seen.std_pct - run.seen.std_pct) > 1e-9 ||
        seen.n_trials != run.seen.n_trials) {
      fail("run seen summary disagrees with its trial rows");
    }
    if (run.has_unseen &&
        (std::fabs(unseen.mean_pct - run.unseen.mean_pct) > 1e-9 ||
         unseen.n_trials != run.unseen.n_trials)) {
      fail("run unseen summary disagrees with its trial rows");
    }
    if (run.hygiene.ok &&
        !(run.hygiene.disjoint_train_eval && run.hygiene.held_out_absent_from_training &&
          run.hygiene.held_out_absent_from_csp)) {
      fail("hygiene ok flag disagrees with its checks");
    }
  }

  const CerSummary seen = report_cer(seen_samples);
  if (std::fabs(seen.mean_pct - report.seen.mean_pct) > 1e-9 ||
      std::fabs(seen.std_pct - report.seen.std_pct) > 1e-9 ||
      seen.n_trials != report.seen.n_trials) {
    fail("aggregate seen summary disagrees with the trial rows");
  }
  const CerSummary unseen = report_cer(unseen_samples);
  if (report.has_unseen && (std::fabs(unseen.mean_pct - report.unseen.mean_pct) > 1e-9 ||
                            unseen.n_trials != report.unseen.n_trials)) {
    fail("aggregate unseen summary disagrees with the trial rows");
  }

  if (report.spatial.words.empty() ||
      report.spatial.ers_db.rows() != report.spatial.words.size() ||
      report.spatial.ers_db.cols() != report.layout.size()) {
    fail("spatial map shape disagrees with words and layout");
  }
  for (std::size_t c : report.spatial.counts) {
    if (c == 0) fail("a word has no trials in the spatial map");
  }
}

namespace {

void write_report_json(const EvalReport& report, const ExperimentConfig& config,
                       const std::string& path) {
  nlohmann::json j;
  j["format"] = "b2t-report";
  j["version"] = 1;
  j["protocol"] = report.protocol;
  j["folds"] = report.folds;
  j["config"] = {{"synth",
                  {{"subjects", config.synth.subjects},
                   {"trials_per_class", config.synth.trials_per_class},
                   {"fs_hz", config.synth.fs_hz},
                   {"snr_db", config.synth.snr_db},
                   {"seed", config.synth.seed}}},
                 {"csp",
                  {{"patterns_per_class", config.csp.patterns_per_class},
                   {"shrinkage", config.csp.shrinkage},
                   {"window_count", config.csp.window_count},
                   {"fit_all_classes", config.csp.fit_all_classes}}},
                 {"gan",
                  {{"epochs", config.gan.epochs},
                   {"batch", config.gan.batch},
                   {"recon_weight", config.gan.recon_weight},
                   {"noise_sigma", config.gan.noise_sigma},
                   {"seed", config.gan.seed}}},
                 {"split_seed", config.protocol.split_seed},
                 {"held_out_word", config.protocol.held_out_word},
                 {"held_out_subject", config.protocol.held_out_subject},
                 {"target_smoothing", config.target_smoothing},
                 {"shuffle_labels", config.shuffle_labels}};

  nlohmann::json runs = nlohmann::json::array();
  for (const RunReport& run : report.runs) {
    nlohmann::json r;
    r["run"] = run.run;
    r["train_size"] = run.train_size;
    r["eval_size"] = run.eval_size;
    r["hygiene"] = {{"train_hash", run.hygiene.train_hash},
                    {"csp_hash", run.hygiene.csp_hash},
                    {"disjoint_train_eval", run.hygiene.disjoint_train_eval},
                    {"held_out_absent_from_training", run.hygiene.held_out_absent_from_training},
                    {"held_out_absent_from_csp", run.hygiene.held_out_absent_from_csp},
                    {"ok", run.hygiene.ok}};
    r["seen"] = summary_to_json(run.seen);
    r["unseen"] = run.has_unseen ? summary_to_json(run.unseen) : nlohmann::json(nullptr);
    r["gan"] = {{"epochs", run.gan_epochs},
                {"final_loss_d", run.gan_final.loss_d},
                {"final_loss_g", run.gan_final.loss_g},
                {"final_recon_ce", run.gan_final.recon_ce},
                {"final_acc_real", run.gan_final.acc_real},
                {"final_acc_fake", run.gan_final.acc_fake}};
    runs.push_back(std::move(r));
  }
  j["runs"] = runs;
  j["aggregate"] = {{"seen", summary_to_json(report.seen)},
                    {"unseen", report.has_unseen ? summary_to_json(report.unseen)
                                                 : nlohmann::json(nullptr)}};

  double vmax = 0.0;
  for (double v : report.spatial.ers_db.data()) vmax = std::max(vmax, std::fabs(v));
  nlohmann::json words = nlohmann::json::array();
  for (std::size_t w = 0; w < report.spatial.words.size(); ++w) {
    words.push_back({{"id", report.spatial.words[w].id},
                     {"word", report.spatial.words[w].text},
                     {"trials", report.spatial.counts[w]}});
  }
  j["spatial"] = {{"abs_max_db", vmax}, {"words", words}};
  j["files"] = {{"trials", "cer.csv"},
                {"topography", "topography.csv"},
                {"topography_plot", "topography.svg"}};

  std::ofstream out(path, std::ios::trunc);
  if (!out) throw std::runtime_error("cannot write " + path);
  out << j.dump(2) << "\n";
}

void write_cer_csv(const EvalReport& report, const std::string& path) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw std::runtime_error("cannot write " + path);
  out << "run,trial,subject,fold,word_id,word,role,decoded,cer_pct\n";
  for (const TrialCer& row : report.trials) {
    out << row.run << ',' << row.trial << ',' << row.subject << ',' << row.fold << ','
        << row.word_id << ',' << row.word << ',' << (row.unseen ? "unseen" : "seen") << ','
        << row.decoded << ',' << format_double("%.6f", 100.0 * row.cer) << "\n";
  }
}

void write_topography_csv(const EvalReport& report, const std::string& path) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw std::runtime_error("cannot write " + path);
  out << "word_id,word,channel,name,x,y,ers_db,trials\n";
  for (std::size_t w = 0; w < report.spatial.words.size(); ++w) {
    for (std::size_t ch = 0; ch < report.layout.size(); ++ch) {
      out << report.spatial.words[w].id << ',' << report.spatial.words[w].text << ',' << ch
          << ',' << report.layout.names[ch] << ','
          << format_double("%.17g", report.layout.positions[ch][0]) << ','
          << format_double("%.17g", report.layout.positions[ch][1]) << ','
          << format_double("%.17g", report.spatial.ers_db(w, ch)) << ','
          << report.spatial.counts[w] << "\n";
    }
  }
}

std::string scale_color(double t) {
  // symmetric diverging ramp: blue, white, red
  const double lo[3] = {38, 82, 196};
  const double mid[3] = {247, 247, 247};
  const double hi[3] = {196, 38, 38};
  double rgb[3];
  if (t < 0.5) {
    const double u = t * 2.0;
    for (int k = 0; k < 3; ++k) rgb[k] = lo[k] + u * (mid[k] - lo[k]);
  } else {
    const double u = (t - 0.5) * 2.0;
    for (int k = 0; k < 3; ++k) rgb[k] = mid[k] + u * (hi[k] - mid[k]);
  }
  char buf[16];
  std::snprintf(buf, sizeof(buf), "#%02x%02x%02x", static_cast<int>(std::lround(rgb[0])),
                static_cast<int>(std::lround(rgb[1])), static_cast<int>(std::lround(rgb[2])));
  return buf;
}

void write_topography_svg(const EvalReport& report, const std::string& path) {
  const std::size_t n_words = report.spatial.words.size();
  const std::size_t cols = 5;
  const std::size_t rows = (n_words + cols - 1) / cols;
  const double cell = 150.0;
  const double width = cols * cell;
  const double height = rows * cell + 70.0;

  double vmax = 0.0;
  for (double v : report.spatial.ers_db.data()) vmax = std::max(vmax, std::fabs(v));
  if (vmax <= 0.0) vmax = 1.0;

  std::string svg;
  char buf[256];
  std::snprintf(buf, sizeof(buf),
                "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"%.0f\" height=\"%.0f\" "
                "viewBox=\"0 0 %.0f %.0f\">\n",
                width, height, width, height);
  svg += buf;
  svg += "<rect width=\"100%\" height=\"100%\" fill=\"#ffffff\"/>\n";

  for (std::size_t w = 0; w < n_words; ++w) {
    const double cx = (w % cols) * cell + cell / 2.0;
    const double cy = (w / cols) * cell + cell / 2.0 - 8.0;
    const double head = 56.0;
    std::snprintf(buf, sizeof(buf),
                  "<circle cx=\"%.1f\" cy=\"%.1f\" r=\"%.1f\" fill=\"none\" "
                  "stroke=\"#444444\" stroke-width=\"1.5\"/>\n",
                  cx, cy, head);
    svg += buf;
    std::snprintf(buf, sizeof(buf),
                  "<path d=\"M %.1f %.1f L %.1f %.1f L %.1f %.1f\" fill=\"none\" "
                  "stroke=\"#444444\" stroke-width=\"1.5\"/>\n",
                  cx - 7.0, cy - head + 1.5, cx, cy - head - 8.0, cx + 7.0, cy - head + 1.5);
    svg += buf;
    for (std::size_t ch = 0; ch < report.layout.size(); ++ch) {
      const double px = cx + report.layout.positions[ch][0] * head * 0.92;
      const double py = cy - report.layout.positions[ch][1] * head * 0.92;
      const double v = report.spatial.ers_db(w, ch);
      const double t = std::min(1.0, std::max(0.0, (v + vmax) / (2.0 * vmax)));
      std::snprintf(buf, sizeof(buf),
                    "<circle cx=\"%.2f\" cy=\"%.2f\" r=\"4.4\" fill=\"%s\" "
                    "stroke=\"#777777\" stroke-width=\"0.4\"/>\n",
                    px, py, scale_color(t).c_str());
      svg += buf;
    }
    const std::string caption =
        report.spatial.words[w].text.empty() ? "(empty)" : report.spatial.words[w].text;
    std::snprintf(buf, sizeof(buf),
                  "<text x=\"%.1f\" y=\"%.1f\" text-anchor=\"middle\" font-family=\"sans-serif\" "
                  "font-size=\"12\" fill=\"#222222\">%s</text>\n",
                  cx, cy + head + 16.0, caption.c_str());
    svg += buf;
  }

  // shared color bar
  const double bar_w = 300.0, bar_h = 12.0;
  const double bar_x = (width - bar_w) / 2.0, bar_y = rows * cell + 18.0;
  const int steps = 60;
  for (int s = 0; s < steps; ++s) {
    const double t = (s + 0.5) / steps;
    std::snprintf(buf, sizeof(buf),
                  "<rect x=\"%.2f\" y=\"%.1f\" width=\"%.2f\" height=\"%.1f\" fill=\"%s\"/>\n",
                  bar_x + s * bar_w / steps, bar_y, bar_w / steps + 0.5, bar_h,
                  scale_color(t).c_str());
    svg += buf;
  }
  std::snprintf(buf, sizeof(buf),
                "<text x=\"%.1f\" y=\"%.1f\" text-anchor=\"middle\" font-family=\"sans-serif\" "
                "font-size=\"11\" fill=\"#222222\">%+.2f dB</text>\n",
                bar_x, bar_y + bar_h + 14.0, -vmax);
  svg += buf;
  std::snprintf(buf, sizeof(buf),
                "<text x=\"%.1f\" y=\"%.1f\" text-anchor=\"middle\" font-family=\"sans-serif\" "
                "font-size=\"11\" fill=\"#222222\">%+.2f dB</text>\n",
                bar_x + bar_w, bar_y + bar_h + 14.0, vmax);
  svg += buf;
  std::snprintf(buf, sizeof(buf),
                "<text x=\"%.1f\" y=\"%.1f\" text-anchor=\"middle\" font-family=\"sans-serif\" "
                "font-size=\"11\" fill=\"#222222\">band power change vs baseline</text>\n",
                width / 2.0, bar_y + bar_h + 14.0);
  svg += buf;
  svg += "</svg>\n";

  std::ofstream out(path, std::ios::trunc | std::ios::binary);
  if (!out) throw std::runtime_error("cannot write " + path);
  out << svg;
}

}  // namespace

void emit_topography(const EvalReport& report, const std::string& out_dir) {
  namespace fs = std::filesystem;
  fs::create_directories(out_dir);
  write_topography_csv(report, (fs::path(out_dir) / "topography.csv").string());
  write_topography_svg(report, (fs::path(out_dir) / "topography.svg").string());
}

void emit_reports(const EvalReport& report, const ExperimentConfig& config,
                  const std::string& out_dir) {
  namespace fs = std::filesystem;
  fs::create_directories(out_dir);
  write_report_json(report, config, (fs::path(out_dir) / "report.json").string());
  write_cer_csv(report, (fs::path(out_dir) / "cer.csv").string());
  emit_topography(report, out_dir);
}

EvalReport run_pipeline(const ExperimentConfig& config) {
  PreprocessedSet set;
  for (int s = 0; s < config.synth.subjects; ++s) {
    PreprocessedSet one =
        preprocess_recording(synth_subject(config.synth, s), config.preprocess);
    if (set.layout.size() == 0) {
      set.fs_hz = one.fs_hz;
      set.layout = one.layout;
    }
    std::move(one.epochs.begin(), one.epochs.end(), std::back_inserter(set.epochs));
  }

  EvalReport report = evaluate_protocol(set, config);
  validate_report(report);
  emit_reports(report, config, config.out_dir);
  return report;
}

}  // namespace b2t
