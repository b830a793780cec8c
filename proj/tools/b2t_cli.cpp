// Command line front end: synthetic data, the preprocessing chain, spatial
// filter fitting, adversarial training, protocol evaluation and the spatial
// analysis, plus run-all for the whole pipeline in one go.

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <exception>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "b2t/experiment.hpp"

namespace {

using b2t::ExperimentConfig;

// flags shared by every stage that consumes an experiment config
void add_config_options(CLI::App* cmd, std::string& config_path, ExperimentConfig& config) {
  cmd->add_option("--config", config_path, "experiment config (json)")
      ->check(CLI::ExistingFile);

  cmd->add_option("--seed", config.synth.seed, "dataset seed");
  cmd->add_option("--subjects", config.synth.subjects, "number of subjects")
      ->check(CLI::PositiveNumber);
  cmd->add_option("--trials-per-class", config.synth.trials_per_class,
                  "trials per word and subject")
      ->check(CLI::PositiveNumber);
  cmd->add_option("--snr-db", config.synth.snr_db, "peak-channel in-band snr (dB)");

  std::map<std::string, b2t::Protocol> protocols{
      {"seen_only", b2t::Protocol::seen_only},
      {"unseen_word", b2t::Protocol::unseen_word},
      {"cross_subject", b2t::Protocol::cross_subject}};
  cmd->add_option("--protocol", config.protocol.protocol, "evaluation protocol")
      ->transform(CLI::CheckedTransformer(protocols, CLI::ignore_case));
  cmd->add_option("--folds", config.protocol.folds, "fold count")->check(CLI::PositiveNumber);
  cmd->add_option("--split-seed", config.protocol.split_seed, "fold assignment seed");
  cmd->add_option("--held-out-word", config.protocol.held_out_word,
                  "word excluded from training (unseen_word)");
  cmd->add_option("--held-out-subject", config.protocol.held_out_subject,
                  "subject excluded from training (cross_subject)");

  cmd->add_option("--gan-epochs", config.gan.epochs, "training epochs")
      ->check(CLI::PositiveNumber);
  cmd->add_option("--gan-seed", config.gan.seed, "training seed");
  cmd->add_option("--batch", config.gan.batch, "batch size")->check(CLI::PositiveNumber);
  cmd->add_option("--recon-weight", config.gan.recon_weight,
                  "weight of the generator's reconstruction term");
  cmd->add_option("--noise-sigma", config.gan.noise_sigma, "input noise level");
  cmd->add_option("--target-smoothing", config.target_smoothing, "target label smoothing");
  cmd->add_flag("--shuffle-labels", config.shuffle_labels,
                "control run: permute training labels");
  cmd->add_option("--jobs", config.jobs, "parallel evaluation runs")
      ->check(CLI::PositiveNumber);
}

// --config values first, command line flags on top
ExperimentConfig resolve_config(const CLI::App* cmd, const std::string& config_path,
                                const ExperimentConfig& flags) {
  if (config_path.empty()) return flags;
  ExperimentConfig config = b2t::load_config(config_path);
  ExperimentConfig merged = flags;

  auto keep = [&](const std::string& name) { return cmd->count(name) == 0; };
  if (keep("--seed")) merged.synth.seed = config.synth.seed;
  if (keep("--subjects")) merged.synth.subjects = config.synth.subjects;
  if (keep("--trials-per-class")) merged.synth.trials_per_class = config.synth.trials_per_class;
  if (keep("--snr-db")) merged.synth.snr_db = config.synth.snr_db;
  if (keep("--protocol")) merged.protocol.protocol = config.protocol.protocol;
  if (keep("--folds")) merged.protocol.folds = config.protocol.folds;
  if (keep("--split-seed")) merged.protocol.split_seed = config.protocol.split_seed;
  if (keep("--held-out-word")) merged.protocol.held_out_word = config.protocol.held_out_word;
  if (keep("--held-out-subject")) {
    merged.protocol.held_out_subject = config.protocol.held_out_subject;
  }
  if (keep("--gan-epochs")) merged.gan.epochs = config.gan.epochs;
  if (keep("--gan-seed")) merged.gan.seed = config.gan.seed;
  if (keep("--batch")) merged.gan.batch = config.gan.batch;
  if (keep("--recon-weight")) merged.gan.recon_weight = config.gan.recon_weight;
  if (keep("--noise-sigma")) merged.gan.noise_sigma = config.gan.noise_sigma;
  if (keep("--target-smoothing")) merged.target_smoothing = config.target_smoothing;
  if (keep("--shuffle-labels")) merged.shuffle_labels = config.shuffle_labels;
  if (keep("--jobs")) merged.jobs = config.jobs;
  merged.synth.fs_hz = config.synth.fs_hz;
  merged.preprocess = config.preprocess;
  merged.csp = config.csp;
  merged.gan.g_hidden = config.gan.g_hidden;
  merged.gan.d_hidden = config.gan.d_hidden;
  merged.gan.adam = config.gan.adam;
  merged.gan.d_steps = config.gan.d_steps;
  merged.gan.g_steps = config.gan.g_steps;
  merged.out_dir = config.out_dir;
  return merged;
}

void print_summary(const b2t::EvalReport& report) {
  std::printf("protocol %s, %zu fold(s), %zu run(s)\n", report.protocol.c_str(), report.folds,
              report.runs.size());
  std::printf("seen   CER %.2f %% (std %.2f, %zu trials)\n", report.seen.mean_pct,
              report.seen.std_pct, report.seen.n_trials);
  if (report.has_unseen) {
    std::printf("unseen CER %.2f %% (std %.2f, %zu trials)\n", report.unseen.mean_pct,
                report.unseen.std_pct, report.unseen.n_trials);
  }
  for (const b2t::RunReport& run : report.runs) {
    std::printf("run %zu: train %zu, eval %zu, hygiene %s (train %s, csp %s)\n", run.run,
                run.train_size, run.eval_size, run.hygiene.ok ? "ok" : "VIOLATED",
                run.hygiene.train_hash.c_str(), run.hygiene.csp_hash.c_str());
  }
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"synthetic imagined-speech recordings to text, end to end"};
  app.require_subcommand(1);

  ExperimentConfig flags;
  std::string config_path;
  std::string data_dir = "data";
  std::string epochs_dir = "epochs";
  std::string bank_dir = "bank";
  std::string model_dir = "model";
  std::string out_dir;

  CLI::App* synth = app.add_subcommand("synth-data", "write a synthetic dataset");
  add_config_options(synth, config_path, flags);
  synth->add_option("--out", data_dir, "dataset directory");

  CLI::App* pre = app.add_subcommand("preprocess", "filter, decimate and epoch a dataset");
  add_config_options(pre, config_path, flags);
  pre->add_option("--data", data_dir, "dataset directory")->required();
  pre->add_option("--out", epochs_dir, "epochs directory");

  CLI::App* fit = app.add_subcommand("fit-csp", "fit a spatial filter bank on epochs");
  add_config_options(fit, config_path, flags);
  fit->add_option("--epochs", epochs_dir, "epochs directory")->required();
  fit->add_option("--out", bank_dir, "filter bank directory");

  CLI::App* train = app.add_subcommand("train", "train the adversarial model on epochs");
  add_config_options(train, config_path, flags);
  train->add_option("--epochs", epochs_dir, "epochs directory")->required();
  train->add_option("--bank", bank_dir, "filter bank directory")->required();
  train->add_option("--out", model_dir, "model directory");

  CLI::App* eval = app.add_subcommand("evaluate", "protocol evaluation over epochs");
  add_config_options(eval, config_path, flags);
  eval->add_option("--epochs", epochs_dir, "epochs directory")->required();
  eval->add_option("--out", out_dir, "report directory");

  CLI::App* spatial = app.add_subcommand("analyze-spatial", "per-word band power topographies");
  add_config_options(spatial, config_path, flags);
  spatial->add_option("--epochs", epochs_dir, "epochs directory")->required();
  spatial->add_option("--out", out_dir, "report directory");

  CLI::App* all = app.add_subcommand("run-all", "synthesize, preprocess, evaluate, report");
  add_config_options(all, config_path, flags);
  all->add_option("--out", out_dir, "report directory");

  CLI11_PARSE(app, argc, argv);
  CLI::App* cmd = app.get_subcommands().front();

  try {
    ExperimentConfig config = resolve_config(cmd, config_path, flags);
    if (!out_dir.empty()) config.out_dir = out_dir;

    if (cmd == synth) {
      const b2t::Dataset dataset = b2t::synth_dataset(config.synth);
      b2t::write_dataset(dataset, data_dir);
      std::size_t events = 0;
      for (const b2t::Recording& rec : dataset.recordings) events += rec.events.size();
      std::printf("wrote %zu recording(s), %zu trials\n", dataset.recordings.size(), events);
    } else if (cmd == pre) {
      const b2t::Dataset dataset = b2t::read_dataset(data_dir);
      const b2t::PreprocessedSet set = b2t::preprocess_dataset(dataset, config.preprocess);
      b2t::write_epochs(set, epochs_dir);
      std::printf("wrote %zu epoch(s) at %.0f Hz\n", set.epochs.size(), set.fs_hz);
    } else if (cmd == fit) {
      const b2t::PreprocessedSet set = b2t::read_epochs(epochs_dir);
      std::map<int, std::vector<const b2t::Epoch*>> by_class;
      for (const b2t::Epoch& epoch : set.epochs) by_class[epoch.label].push_back(&epoch);
      std::vector<b2t::Matrix> covs;
      std::vector<int> ids;
      for (const auto& [label, members] : by_class) {
        b2t::Matrix mean_cov(set.layout.size(), set.layout.size());
        for (const b2t::Epoch* epoch : members) {
          mean_cov = mean_cov +
                     b2t::estimate_covariance(epoch->data, config.csp.shrinkage).cov;
        }
        covs.push_back((1.0 / static_cast<double>(members.size())) * mean_cov);
        ids.push_back(label);
      }
      b2t::SpatialFilterBank bank =
          b2t::fit_multicsp(covs, ids, config.csp.patterns_per_class);
      bank.window_count = config.csp.window_count;
      b2t::write_bank(bank, bank_dir);
      std::printf("fit %zu filter(s) over %zu class(es); note: uses every epoch, "
                  "run evaluate or run-all for split-safe fitting\n",
                  bank.n_filters(), ids.size());
    } else if (cmd == train) {
      const b2t::PreprocessedSet set = b2t::read_epochs(epochs_dir);
      const b2t::SpatialFilterBank bank = b2t::read_bank(bank_dir);
      b2t::Matrix z(set.epochs.size(), bank.n_filters() * bank.window_count);
      b2t::Matrix x(set.epochs.size(), config.gan.max_len * config.gan.vocab);
      const auto& words = b2t::word_table();
      for (std::size_t i = 0; i < set.epochs.size(); ++i) {
        const std::vector<double> features = b2t::embed(set.epochs[i], bank).flat();
        std::copy(features.begin(), features.end(), z.row(i));
        std::string text;
        for (const b2t::WordLabel& w : words) {
          if (w.id == set.epochs[i].label) text = b2t::transcript(w);
        }
        const std::vector<double> target =
            b2t::encode_text(text, config.gan.max_len, config.target_smoothing).flat();
        std::copy(target.begin(), target.end(), x.row(i));
      }
      b2t::GanConfig gan = config.gan;
      gan.z_dim = 0;
      const b2t::TrainResult model = b2t::train_gan(z, x, gan);
      b2t::write_gan(model, model_dir);
      const b2t::EpochStats& last = model.history.back();
      std::printf("trained %zu epoch(s); loss_d %.4f, loss_g %.4f, recon %.4f\n",
                  model.history.size(), last.loss_d, last.loss_g, last.recon_ce);
    } else if (cmd == eval) {
      const b2t::PreprocessedSet set = b2t::read_epochs(epochs_dir);
      const b2t::EvalReport report = b2t::evaluate_protocol(set, config);
      b2t::validate_report(report);
      b2t::emit_reports(report, config, config.out_dir);
      print_summary(report);
      std::printf("reports in %s\n", config.out_dir.c_str());
    } else if (cmd == spatial) {
      const b2t::PreprocessedSet set = b2t::read_epochs(epochs_dir);
      b2t::EvalReport report;  // carrier for the topography emitters
      report.protocol = "spatial";
      report.layout = set.layout;
      report.spatial = b2t::spatial_analysis(set);
      b2t::emit_topography(report, config.out_dir);
      double vmax = 0.0;
      for (double v : report.spatial.ers_db.data()) vmax = std::max(vmax, std::fabs(v));
      std::printf("%zu word(s), strongest change %.2f dB, maps in %s\n",
                  report.spatial.words.size(), vmax, config.out_dir.c_str());
    } else if (cmd == all) {
      const b2t::EvalReport report = b2t::run_pipeline(config);
      print_summary(report);
      std::printf("reports in %s\n", config.out_dir.c_str());
    }
  } catch (const std::exception& e) {
    std::fprintf(stderr, "%s: error: %s\n", cmd->get_name().c_str(), e.what());
    return 1;
  }
  return 0;
}
