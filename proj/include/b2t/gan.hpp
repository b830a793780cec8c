#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

#include "b2t/linalg.hpp"
#include "b2t/textcodec.hpp"

namespace b2t {

// Dense nets with reverse-mode gradients, small enough to keep explicit.
// Batches are matrices with one sample per row.

enum class Activation { identity, leaky_relu, sigmoid, softmax_rows };

std::string to_string(Activation activation);
Activation activation_from_string(const std::string& name);

struct DenseLayer {
  Matrix weights;             // out x in
  std::vector<double> bias;   // out
  Activation activation = Activation::identity;
  std::size_t softmax_width = 0;  // group size for softmax_rows, else 0
};

struct DenseNet {
  std::vector<DenseLayer> layers;

  std::size_t input_dim() const { return layers.front().weights.cols(); }
  std::size_t output_dim() const { return layers.back().weights.rows(); }
};

// layer shape description used to build a net before initialization
struct LayerSpec {
  std::size_t out = 0;
  Activation activation = Activation::identity;
  std::size_t softmax_width = 0;
};

class Rng;

DenseNet make_net(std::size_t input_dim, const std::vector<LayerSpec>& layers);
void init_xavier_uniform(DenseNet& net, Rng& rng);

// gradient accumulators in the exact shape of a net's parameters
struct DenseNetGrads {
  std::vector<Matrix> weights;
  std::vector<std::vector<double>> bias;
};

DenseNetGrads zero_grads(const DenseNet& net);

struct ForwardTrace {
  std::vector<Matrix> activations;  // [0] is the input, [i + 1] layer i's output

  const Matrix& output() const { return activations.back(); }
};

Matrix forward(const DenseNet& net, const Matrix& input);
ForwardTrace forward_trace(const DenseNet& net, const Matrix& input);

// Propagates d(objective)/d(output) back through the trace.  Parameter
// gradients accumulate into grads when it is non-null; the return value is
// d(objective)/d(input).
Matrix backward(const DenseNet& net, const ForwardTrace& trace, const Matrix& output_grad,
                DenseNetGrads* grads);

// Mean GAN objectives over a batch of discriminator probabilities, with the
// probabilities clamped to [1e-7, 1 - 1e-7] inside every log.
double loss_d(const std::vector<double>& p_real, const std::vector<double>& p_fake);
double loss_g(const std::vector<double>& p_fake);

// Scalar objectives with full analytic parameter gradients, as used by the
// training loop.  Both are ascent objectives: training takes steps along
// +gradient.  generator_objective returns loss_g(d(g(z))) minus
// recon_weight times the cross entropy between g(z) and target rows.
double discriminator_objective(const DenseNet& d, const Matrix& real, const Matrix& fake,
                               DenseNetGrads* d_grads);
double generator_objective(const DenseNet& g, const DenseNet& d, const Matrix& z,
                           const Matrix& target, double recon_weight, DenseNetGrads* g_grads,
                           double* adversarial_out = nullptr, double* recon_out = nullptr);

struct AdamConfig {
  double lr = 2e-4;
  double beta1 = 0.5;
  double beta2 = 0.999;
  double eps = 1e-8;
};

struct AdamState {
  std::vector<Matrix> m_weights, v_weights;
  std::vector<std::vector<double>> m_bias, v_bias;
  std::uint64_t step = 0;
};

AdamState make_adam_state(const DenseNet& net);

// One bias-corrected step along direction * grads (direction +1 ascends).
// A non-finite gradient anywhere aborts the whole step, moments included.
void adam_step(DenseNet& net, const DenseNetGrads& grads, AdamState& state,
               const AdamConfig& config, double direction);

struct GanConfig {
  std::size_t z_dim = 0;  // set from the feature embedding width
  std::size_t max_len = kMaxTranscriptLen;
  std::size_t vocab = Vocabulary::size;
  std::vector<std::size_t> g_hidden = {512, 512};
  std::vector<std::size_t> d_hidden = {256, 256};
  AdamConfig adam;
  std::size_t batch = 32;
  std::size_t epochs = 120;
  std::size_t d_steps = 1;
  std::size_t g_steps = 1;
  double recon_weight = 1.0;
  double noise_sigma = 0.0;
  std::uint64_t seed = 42;
};

struct EpochStats {
  double loss_d = 0.0;
  double loss_g = 0.0;
  double recon_ce = 0.0;
  double acc_real = 0.0;
  double acc_fake = 0.0;
};

struct TrainResult {
  DenseNet generator;
  DenseNet discriminator;
  std::vector<EpochStats> history;
};

class TrainingDiverged : public std::runtime_error {
 public:
  TrainingDiverged(std::size_t epoch, std::vector<EpochStats> history);

  std::size_t epoch;
  std::vector<EpochStats> history;
};

DenseNet make_generator(const GanConfig& config);
DenseNet make_discriminator(const GanConfig& config);

// z: one flattened feature embedding per row; x: the matching flattened
// character-embedding sequence per row
TrainResult train_gan(const Matrix& z, const Matrix& x, const GanConfig& config);

Matrix generate(const DenseNet& g, const Matrix& z);

// one generated row viewed as a character-embedding sequence
CharEmbeddingSeq as_sequence(const Matrix& flat, std::size_t row, std::size_t max_len,
                             std::size_t vocab);

void write_gan(const TrainResult& model, const std::string& dir);
TrainResult read_gan(const std::string& dir);

}  // namespace b2t
