#include "b2t/gan.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <numeric>

#include "b2t/rawio.hpp"
#include "b2t/rng.hpp"
#include "json.hpp"

namespace b2t {

namespace {

constexpr double kLeakySlope = 0.2;
constexpr double kProbFloor = 1e-7;
constexpr double kProbCeil = 1.0 - 1e-7;

double clamp_prob(double p) { return std::min(std::max(p, kProbFloor), kProbCeil); }

// logs use clamped probabilities, so outside the clamp window the loss is
// locally constant and the derivative is zero
double dlog_clamped(double p) {
  return (p > kProbFloor && p < kProbCeil) ? 1.0 / p : 0.0;
}

void apply_activation(const DenseLayer& layer, Matrix& z) {
  switch (layer.activation) {
    case Activation::identity:
      return;
    case Activation::leaky_relu:
      for (double& v : z.data()) {
        if (v < 0.0) v *= kLeakySlope;
      }
      return;
    case Activation::sigmoid:
      for (double& v : z.data()) v = 1.0 / (1.0 + std::exp(-v));
      return;
    case Activation::softmax_rows: {
      const std::size_t width = layer.softmax_width;
      for (std::size_t r = 0; r < z.rows(); ++r) {
        double* row = z.row(r);
        for (std::size_t g = 0; g < z.cols(); g += width) {
          double hi = row[g];
          for (std::size_t k = 1; k < width; ++k) hi = std::max(hi, row[g + k]);
          double sum = 0.0;
          for (std::size_t k = 0; k < width; ++k) {
            row[g + k] = std::exp(row[g + k] - hi);
            sum += row[g + k];
          }
          for (std::size_t k = 0; k < width; ++k) row[g + k] /= sum;
        }
      }
      return;
    }
  }
}

// d(objective)/d(pre-activation) from d(objective)/d(output), using only the
// layer's output y (every activation here exposes its slope through y)
Matrix activation_backward(const DenseLayer& layer, const Matrix& y, const Matrix& dy) {
  Matrix dz = dy;
  switch (layer.activation) {
    case Activation::identity:
      return dz;
    case Activation::leaky_relu:
      for (std::size_t i = 0; i < dz.data().size(); ++i) {
        if (y.data()[i] < 0.0) dz.data()[i] *= kLeakySlope;
      }
      return dz;
    case Activation::sigmoid:
      for (std::size_t i = 0; i < dz.data().size(); ++i) {
        const double s = y.data()[i];
        dz.data()[i] *= s * (1.0 - s);
      }
      return dz;
    case Activation::softmax_rows: {
      const std::size_t width = layer.softmax_width;
      for (std::size_t r = 0; r < dz.rows(); ++r) {
        const double* yr = y.row(r);
        double* dr = dz.row(r);
        for (std::size_t g = 0; g < dz.cols(); g += width) {
          double dot = 0.0;
          for (std::size_t k = 0; k < width; ++k) dot += dr[g + k] * yr[g + k];
          for (std::size_t k = 0; k < width; ++k) dr[g + k] = yr[g + k] * (dr[g + k] - dot);
        }
      }
      return dz;
    }
  }
  throw std::logic_error("unreachable");
}

Matrix layer_forward(const DenseLayer& layer, const Matrix& x) {
  Matrix z = matmul(x, transpose(layer.weights));
  for (std::size_t r = 0; r < z.rows(); ++r) {
    double* row = z.row(r);
    for (std::size_t c = 0; c < z.cols(); ++c) row[c] += layer.bias[c];
  }
  apply_activation(layer, z);
  return z;
}

std::vector<double> probabilities(const Matrix& d_out) {
  std::vector<double> p(d_out.rows());
  for (std::size_t r = 0; r < d_out.rows(); ++r) p[r] = d_out(r, 0);
  return p;
}

bool net_finite(const DenseNet& net) {
  for (const DenseLayer& layer : net.layers) {
    if (!all_finite(layer.weights)) return false;
    for (double b : layer.bias) {
      if (!std::isfinite(b)) return false;
    }
  }
  return true;
}

nlohmann::json net_to_json(const DenseNet& net) {
  nlohmann::json layers = nlohmann::json::array();
  for (const DenseLayer& layer : net.layers) {
    layers.push_back({{"in", layer.weights.cols()},
                      {"out", layer.weights.rows()},
                      {"activation", to_string(layer.activation)},
                      {"softmax_width", layer.softmax_width}});
  }
  return layers;
}

DenseNet net_from_json(const nlohmann::json& layers) {
  DenseNet net;
  for (const auto& entry : layers) {
    DenseLayer layer;
    layer.weights = Matrix(entry.at("out").get<std::size_t>(), entry.at("in").get<std::size_t>());
    layer.bias.assign(entry.at("out").get<std::size_t>(), 0.0);
    layer.activation = activation_from_string(entry.at("activation").get<std::string>());
    layer.softmax_width = entry.at("softmax_width").get<std::size_t>();
    net.layers.push_back(std::move(layer));
  }
  if (net.layers.empty()) throw std::runtime_error("model file describes an empty net");
  return net;
}

void append_values(std::vector<double>& values, const DenseNet& net) {
  for (const DenseLayer& layer : net.layers) {
    values.insert(values.end(), layer.weights.data().begin(), layer.weights.data().end());
    values.insert(values.end(), layer.bias.begin(), layer.bias.end());
  }
}

std::size_t parameter_count(const DenseNet& net) {
  std::size_t n = 0;
  for (const DenseLayer& layer : net.layers) n += layer.weights.data().size() + layer.bias.size();
  return n;
}

void load_values(DenseNet& net, const std::vector<double>& values, std::size_t& cursor) {
  for (DenseLayer& layer : net.layers) {
    std::copy_n(values.begin() + cursor, layer.weights.data().size(),
                layer.weights.data().begin());
    cursor += layer.weights.data().size();
    std::copy_n(values.begin() + cursor, layer.bias.size(), layer.bias.begin());
    cursor += layer.bias.size();
  }
}

}  // namespace

std::string to_string(Activation activation) {
  switch (activation) {
    case Activation::identity: return "identity";
    case Activation::leaky_relu: return "leaky_relu";
    case Activation::sigmoid: return "sigmoid";
    case Activation::softmax_rows: return "softmax_rows";
  }
  throw std::logic_error("unreachable");
}

Activation activation_from_string(const std::string& name) {
  if (name == "identity") return Activation::identity;
  if (name == "leaky_relu") return Activation::leaky_relu;
  if (name == "sigmoid") return Activation::sigmoid;
  if (name == "softmax_rows") return Activation::softmax_rows;
  throw std::invalid_argument("unknown activation: " + name);
}

DenseNet make_net(std::size_t input_dim, const std::vector<LayerSpec>& layers) {
  if (input_dim == 0 || layers.empty()) {
    throw std::invalid_argument("make_net: empty net");
  }
  DenseNet net;
  std::size_t in = input_dim;
  for (const LayerSpec& spec : layers) {
    if (spec.out == 0) throw std::invalid_argument("make_net: zero-width layer");
    const bool softmax = spec.activation == Activation::softmax_rows;
    if (softmax != (spec.softmax_width > 0)) {
      throw std::invalid_argument("make_net: softmax_width must be set exactly for softmax_rows");
    }
    if (softmax && spec.out % spec.softmax_width != 0) {
      throw std::invalid_argument("make_net: softmax_width must divide the layer width");
    }
    DenseLayer layer;
    layer.weights = Matrix(spec.out, in);
    layer.bias.assign(spec.out, 0.0);
    layer.activation = spec.activation;
    layer.softmax_width = spec.softmax_width;
    net.layers.push_back(std::move(layer));
    in = spec.out;
  }
  return net;
}

void init_xavier_uniform(DenseNet& net, Rng& rng) {
  for (DenseLayer& layer : net.layers) {
    const double fan_in = static_cast<double>(layer.weights.cols());
    const double fan_out = static_cast<double>(layer.weights.rows());
    const double bound = std::sqrt(6.0 / (fan_in + fan_out));
    for (double& w : layer.weights.data()) w = rng.uniform(-bound, bound);
    std::fill(layer.bias.begin(), layer.bias.end(), 0.0);
  }
}

DenseNetGrads zero_grads(const DenseNet& net) {
  DenseNetGrads grads;
  for (const DenseLayer& layer : net.layers) {
    grads.weights.emplace_back(layer.weights.rows(), layer.weights.cols());
    grads.bias.emplace_back(layer.bias.size(), 0.0);
  }
  return grads;
}

Matrix forward(const DenseNet& net, const Matrix& input) {
  Matrix x = input;
  for (const DenseLayer& layer : net.layers) x = layer_forward(layer, x);
  return x;
}

ForwardTrace forward_trace(const DenseNet& net, const Matrix& input) {
  ForwardTrace trace;
  trace.activations.reserve(net.layers.size() + 1);
  trace.activations.push_back(input);
  for (const DenseLayer& layer : net.layers) {
    trace.activations.push_back(layer_forward(layer, trace.activations.back()));
  }
  return trace;
}

Matrix backward(const DenseNet& net, const ForwardTrace& trace, const Matrix& output_grad,
                DenseNetGrads* grads) {
  if (trace.activations.size() != net.layers.size() + 1) {
    throw std::invalid_argument("backward: trace does not match the net");
  }
  Matrix dy = output_grad;
  for (std::size_t l = net.layers.size(); l-- > 0;) {
    const DenseLayer& layer = net.layers[l];
    const Matrix dz = activation_backward(layer, trace.activations[l + 1], dy);
    if (grads) {
      Matrix dw = matmul(transpose(dz), trace.activations[l]);
      grads->weights[l] = grads->weights[l] + dw;
      for (std::size_t r = 0; r < dz.rows(); ++r) {
        const double* row = dz.row(r);
        for (std::size_t c = 0; c < dz.cols(); ++c) grads->bias[l][c] += row[c];
      }
    }
    dy = matmul(dz, layer.weights);
  }
  return dy;
}

double loss_d(const std::vector<double>& p_real, const std::vector<double>& p_fake) {
  if (p_real.empty() || p_fake.empty()) {
    throw std::invalid_argument("loss_d: empty batch");
  }
  double real = 0.0, fake = 0.0;
  for (double p : p_real) real += std::log(clamp_prob(p));
  for (double p : p_fake) fake += std::log(clamp_prob(1.0 - p));
  return real / static_cast<double>(p_real.size()) + fake / static_cast<double>(p_fake.size());
}

double loss_g(const std::vector<double>& p_fake) {
  if (p_fake.empty()) throw std::invalid_argument("loss_g: empty batch");
  double sum = 0.0;
  for (double p : p_fake) sum += std::log(clamp_prob(p));
  return sum / static_cast<double>(p_fake.size());
}

double discriminator_objective(const DenseNet& d, const Matrix& real, const Matrix& fake,
                               DenseNetGrads* d_grads) {
  const ForwardTrace real_trace = forward_trace(d, real);
  const ForwardTrace fake_trace = forward_trace(d, fake);
  const std::vector<double> p_real = probabilities(real_trace.output());
  const std::vector<double> p_fake = probabilities(fake_trace.output());
  const double objective = loss_d(p_real, p_fake);
  if (d_grads) {
    Matrix real_grad(p_real.size(), 1);
    for (std::size_t i = 0; i < p_real.size(); ++i) {
      real_grad(i, 0) = dlog_clamped(p_real[i]) / static_cast<double>(p_real.size());
    }
    Matrix fake_grad(p_fake.size(), 1);
    for (std::size_t i = 0; i < p_fake.size(); ++i) {
      fake_grad(i, 0) = -dlog_clamped(1.0 - p_fake[i]) / static_cast<double>(p_fake.size());
    }
    backward(d, real_trace, real_grad, d_grads);
    backward(d, fake_trace, fake_grad, d_grads);
  }
  return objective;
}

double generator_objective(const DenseNet& g, const DenseNet& d, const Matrix& z,
                           const Matrix& target, double recon_weight, DenseNetGrads* g_grads,
                           double* adversarial_out, double* recon_out) {
  if (z.rows() != target.rows()) {
    throw std::invalid_argument("generator_objective: batch sizes disagree");
  }
  const double n = static_cast<double>(z.rows());
  const ForwardTrace g_trace = forward_trace(g, z);
  const Matrix& fake = g_trace.output();
  const ForwardTrace d_trace = forward_trace(d, fake);
  const std::vector<double> p_fake = probabilities(d_trace.output());

  const double adversarial = loss_g(p_fake);
  double recon = 0.0;
  for (std::size_t i = 0; i < fake.data().size(); ++i) {
    recon -= target.data()[i] * std::log(clamp_prob(fake.data()[i]));
  }
  recon /= n;
  if (adversarial_out) *adversarial_out = adversarial;
  if (recon_out) *recon_out = recon;

  if (g_grads) {
    Matrix p_grad(p_fake.size(), 1);
    for (std::size_t i = 0; i < p_fake.size(); ++i) {
      p_grad(i, 0) = dlog_clamped(p_fake[i]) / n;
    }
    Matrix fake_grad = backward(d, d_trace, p_grad, nullptr);
    if (recon_weight != 0.0) {
      for (std::size_t i = 0; i < fake_grad.data().size(); ++i) {
        const double p = fake.data()[i];
        fake_grad.data()[i] += recon_weight * target.data()[i] * dlog_clamped(p) / n;
      }
    }
    backward(g, g_trace, fake_grad, g_grads);
  }
  return adversarial - recon_weight * recon;
}

AdamState make_adam_state(const DenseNet& net) {
  AdamState state;
  for (const DenseLayer& layer : net.layers) {
    state.m_weights.emplace_back(layer.weights.rows(), layer.weights.cols());
    state.v_weights.emplace_back(layer.weights.rows(), layer.weights.cols());
    state.m_bias.emplace_back(layer.bias.size(), 0.0);
    state.v_bias.emplace_back(layer.bias.size(), 0.0);
  }
  return state;
}

void adam_step(DenseNet& net, const DenseNetGrads& grads, AdamState& state,
               const AdamConfig& config, double direction) {
  for (std::size_t l = 0; l < net.layers.size(); ++l) {
    for (double v : grads.weights[l].data()) {
      if (!std::isfinite(v)) return;
    }
    for (double v : grads.bias[l]) {
      if (!std::isfinite(v)) return;
    }
  }
  state.step += 1;
  const double c1 = 1.0 - std::pow(config.beta1, static_cast<double>(state.step));
  const double c2 = 1.0 - std::pow(config.beta2, static_cast<double>(state.step));
  auto update = [&](double& param, double g, double& m, double& v) {
    m = config.beta1 * m + (1.0 - config.beta1) * g;
    v = config.beta2 * v + (1.0 - config.beta2) * g * g;
    param += direction * config.lr * (m / c1) / (std::sqrt(v / c2) + config.eps);
  };
  for (std::size_t l = 0; l < net.layers.size(); ++l) {
    DenseLayer& layer = net.layers[l];
    for (std::size_t i = 0; i < layer.weights.data().size(); ++i) {
      update(layer.weights.data()[i], grads.weights[l].data()[i], state.m_weights[l].data()[i],
             state.v_weights[l].data()[i]);
    }
    for (std::size_t i = 0; i < layer.bias.size(); ++i) {
      update(layer.bias[i], grads.bias[l][i], state.m_bias[l][i], state.v_bias[l][i]);
    }
  }
}

TrainingDiverged::TrainingDiverged(std::size_t epoch_, std::vector<EpochStats> history_)
    : std::runtime_error("training diverged at epoch " + std::to_string(epoch_)),
      epoch(epoch_),
      history(std::move(history_)) {}

DenseNet make_generator(const GanConfig& config) {
  std::vector<LayerSpec> layers;
  for (std::size_t width : config.g_hidden) {
    layers.push_back({width, Activation::leaky_relu, 0});
  }
  layers.push_back({config.max_len * config.vocab, Activation::softmax_rows, config.vocab});
  return make_net(config.z_dim, layers);
}

DenseNet make_discriminator(const GanConfig& config) {
  std::vector<LayerSpec> layers;
  for (std::size_t width : config.d_hidden) {
    layers.push_back({width, Activation::leaky_relu, 0});
  }
  layers.push_back({1, Activation::sigmoid, 0});
  return make_net(config.max_len * config.vocab, layers);
}

TrainResult train_gan(const Matrix& z, const Matrix& x, const GanConfig& config) {
  if (z.rows() == 0 || z.rows() != x.rows()) {
    throw std::invalid_argument("train_gan: need matching nonempty input and target batches");
  }
  if (x.cols() != config.max_len * config.vocab) {
    throw std::invalid_argument("train_gan: target width disagrees with max_len * vocab");
  }
  if (config.z_dim != 0 && config.z_dim != z.cols()) {
    throw std::invalid_argument("train_gan: z width disagrees with the configured z_dim");
  }
  if (config.batch == 0 || config.epochs == 0 || config.d_steps == 0 || config.g_steps == 0) {
    throw std::invalid_argument("train_gan: batch, epochs and step counts must be positive");
  }

  GanConfig cfg = config;
  cfg.z_dim = z.cols();

  Rng rng(cfg.seed);
  TrainResult result;
  result.generator = make_generator(cfg);
  result.discriminator = make_discriminator(cfg);
  init_xavier_uniform(result.generator, rng);
  init_xavier_uniform(result.discriminator, rng);
  AdamState g_state = make_adam_state(result.generator);
  AdamState d_state = make_adam_state(result.discriminator);

  const std::size_t n = z.rows();
  std::vector<std::size_t> perm(n);
  std::iota(perm.begin(), perm.end(), 0);

  for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
    rng.shuffle(perm);
    EpochStats stats;
    double weight = 0.0;

    for (std::size_t start = 0; start < n; start += cfg.batch) {
      const std::size_t b = std::min(cfg.batch, n - start);
      Matrix zb(b, z.cols());
      Matrix xb(b, x.cols());
      for (std::size_t i = 0; i < b; ++i) {
        const std::size_t src = perm[start + i];
        std::copy_n(z.row(src), z.cols(), zb.row(i));
        std::copy_n(x.row(src), x.cols(), xb.row(i));
      }
      if (cfg.noise_sigma > 0.0) {
        for (double& v : zb.data()) v += cfg.noise_sigma * rng.gaussian();
      }

      double batch_loss_d = 0.0;
      for (std::size_t step = 0; step < cfg.d_steps; ++step) {
        const Matrix fake = forward(result.generator, zb);
        DenseNetGrads d_grads = zero_grads(result.discriminator);
        batch_loss_d = discriminator_objective(result.discriminator, xb, fake, &d_grads);
        adam_step(result.discriminator, d_grads, d_state, cfg.adam, 1.0);
      }
      {
        const std::vector<double> p_real =
            probabilities(forward(result.discriminator, xb));
        const std::vector<double> p_fake = probabilities(
            forward(result.discriminator, forward(result.generator, zb)));
        double right_real = 0.0, right_fake = 0.0;
        for (double p : p_real) right_real += p > 0.5 ? 1.0 : 0.0;
        for (double p : p_fake) right_fake += p < 0.5 ? 1.0 : 0.0;
        stats.acc_real += right_real;
        stats.acc_fake += right_fake;
      }

      double batch_adv = 0.0, batch_recon = 0.0;
      for (std::size_t step = 0; step < cfg.g_steps; ++step) {
        DenseNetGrads g_grads = zero_grads(result.generator);
        generator_objective(result.generator, result.discriminator, zb, xb, cfg.recon_weight,
                            &g_grads, &batch_adv, &batch_recon);
        adam_step(result.generator, g_grads, g_state, cfg.adam, 1.0);
      }

      const double w = static_cast<double>(b);
      stats.loss_d += w * batch_loss_d;
      stats.loss_g += w * batch_adv;
      stats.recon_ce += w * batch_recon;
      weight += w;
    }

    stats.loss_d /= weight;
    stats.loss_g /= weight;
    stats.recon_ce /= weight;
    stats.acc_real /= weight;
    stats.acc_fake /= weight;
    result.history.push_back(stats);

    const bool finite = std::isfinite(stats.loss_d) && std::isfinite(stats.loss_g) &&
                        std::isfinite(stats.recon_ce) && net_finite(result.generator) &&
                        net_finite(result.discriminator);
    if (!finite) throw TrainingDiverged(epoch, result.history);
  }
  return result;
}

Matrix generate(const DenseNet& g, const Matrix& z) { return forward(g, z); }

CharEmbeddingSeq as_sequence(const Matrix& flat, std::size_t row, std::size_t max_len,
                             std::size_t vocab) {
  if (flat.cols() != max_len * vocab || row >= flat.rows()) {
    throw std::invalid_argument("as_sequence: shape disagrees with max_len * vocab");
  }
  CharEmbeddingSeq seq{Matrix(max_len, vocab)};
  std::copy_n(flat.row(row), max_len * vocab, seq.rows.data().begin());
  return seq;
}

void write_gan(const TrainResult& model, const std::string& dir) {
  namespace fs = std::filesystem;
  fs::create_directories(dir);

  nlohmann::json meta;
  meta["format"] = "b2t-gan";
  meta["version"] = 1;
  meta["generator"] = net_to_json(model.generator);
  meta["discriminator"] = net_to_json(model.discriminator);
  nlohmann::json history = nlohmann::json::array();
  for (const EpochStats& s : model.history) {
    history.push_back({{"loss_d", s.loss_d},
                       {"loss_g", s.loss_g},
                       {"recon_ce", s.recon_ce},
                       {"acc_real", s.acc_real},
                       {"acc_fake", s.acc_fake}});
  }
  meta["history"] = history;

  std::ofstream out(fs::path(dir) / "gan.json", std::ios::trunc);
  if (!out) throw std::runtime_error("cannot write model metadata in " + dir);
  out << meta.dump(2) << "\n";

  std::vector<double> values;
  values.reserve(parameter_count(model.generator) + parameter_count(model.discriminator));
  append_values(values, model.generator);
  append_values(values, model.discriminator);
  write_f64((fs::path(dir) / "gan.f64").string(), values);
}

TrainResult read_gan(const std::string& dir) {
  namespace fs = std::filesystem;
  std::ifstream in(fs::path(dir) / "gan.json");
  if (!in) throw std::runtime_error("cannot read model metadata in " + dir);
  nlohmann::json meta = nlohmann::json::parse(in);
  if (meta.value("format", "") != "b2t-gan") {
    throw std::runtime_error("not a model directory: " + dir);
  }

  TrainResult model;
  model.generator = net_from_json(meta.at("generator"));
  model.discriminator = net_from_json(meta.at("discriminator"));
  for (const auto& entry : meta.at("history")) {
    model.history.push_back({entry.at("loss_d").get<double>(), entry.at("loss_g").get<double>(),
                             entry.at("recon_ce").get<double>(),
                             entry.at("acc_real").get<double>(),
                             entry.at("acc_fake").get<double>()});
  }

  const std::vector<double> values =
      read_f64((fs::path(dir) / "gan.f64").string(),
               parameter_count(model.generator) + parameter_count(model.discriminator));
  std::size_t cursor = 0;
  load_values(model.generator, values, cursor);
  load_values(model.discriminator, values, cursor);
  return model;
}

}  // namespace b2t
