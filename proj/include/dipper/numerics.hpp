#pragma once

#include <cstddef>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "dipper/rng.hpp"

namespace dipper::nn {

using Matrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using Vector = Eigen::VectorXd;

enum class Activation { Relu, Tanh };
enum class OutputHead { Linear, SquashedGaussian, Categorical };

struct LayerShape {
  int in = 0;
  int out = 0;

  friend bool operator==(const LayerShape&, const LayerShape&) = default;
};

struct MlpSpec {
  int input_dim = 0;
  int hidden_width = 64;
  int n_hidden = 3;
  int output_dim = 0;
  Activation hidden_activation = Activation::Tanh;
  OutputHead head = OutputHead::Linear;

  std::vector<LayerShape> layer_shapes() const;
  std::size_t param_count() const;
  // Throws ConfigError on non-positive dimensions.
  void validate() const;
};

// Flat parameters; per layer a row-major (out x in) weight block followed by
// the bias of length out.
struct ParamVector {
  std::vector<double> values;
  std::vector<LayerShape> shape_table;

  std::size_t size() const { return values.size(); }
  std::span<double> span() { return values; }
  std::span<const double> span() const { return values; }

  static ParamVector zeros(const MlpSpec& spec);
  // Sum over layers of in*out + out.
  static std::size_t expected_size(const std::vector<LayerShape>& shapes);
};

// Xavier-uniform weights, zero biases; the output layer is scaled by
// output_scale.
ParamVector init_params(const MlpSpec& spec, Rng& rng, double output_scale = 1.0);

struct ForwardCache {
  // layer inputs; activations.back() is the network output
  std::vector<Matrix> activations;
};

// Row-per-sample batch evaluation. Throws ShapeError on a width mismatch.
Matrix forward_batch(const MlpSpec& spec, const ParamVector& params, const Matrix& inputs,
                     ForwardCache* cache = nullptr);

std::vector<double> forward(const MlpSpec& spec, const ParamVector& params, std::span<const double> input);

// Adds dLoss/dParams to `grad` given dLoss/dOutput for every sample of a cached
// forward pass; optionally writes dLoss/dInputs.
void backward_batch(const MlpSpec& spec, const ParamVector& params, const ForwardCache& cache,
                    const Matrix& d_output, std::span<double> grad, Matrix* d_input = nullptr);

// Scalar loss of the network output; writes dLoss/dOutput into `d_output`.
using OutputLoss = std::function<double(std::span<const double> output, std::span<double> d_output)>;

std::vector<double> grad(const MlpSpec& spec, const ParamVector& params, std::span<const double> input,
                         const OutputLoss& loss_fn);

Matrix to_matrix(const std::vector<std::vector<double>>& rows);

struct AdamConfig {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps_hat = 1e-8;
};

struct AdamState {
  std::vector<double> first_moment;
  std::vector<double> second_moment;
  long step_count = 0;
  AdamConfig config;

  static AdamState create(std::size_t n, AdamConfig config = {});
};

// Bias-corrected Adam update applied in place.
void adam_step(AdamState& state, std::span<double> params, std::span<const double> gradient);

// Polyak averaging: target <- (1 - tau) * target + tau * source.
void polyak_update(std::span<double> target, std::span<const double> source, double tau);

bool all_finite(std::span<const double> values);

// --- distributions -------------------------------------------------------

inline constexpr double kLogStdMin = -5.0;
inline constexpr double kLogStdMax = 2.0;

double clamp_log_std(double log_std);

// Log-density of a diagonal Gaussian at `action`. With squash on, `action` is
// the tanh-squashed value and must lie in (-1, 1); the change-of-variables
// term -sum log(1 - tanh(u)^2) is included. Throws DomainError otherwise.
double gaussian_log_prob(std::span<const double> mean, std::span<const double> log_std,
                         std::span<const double> action, bool squash);

// Log-density and its gradient with respect to mean and (unclamped) log_std
// for a fixed pre-squash sample u. Entries of d_log_std are zero where the
// clamp is active.
struct GaussianGrad {
  double log_prob = 0.0;
  std::vector<double> d_mean;
  std::vector<double> d_log_std;
};
GaussianGrad gaussian_log_prob_grad(std::span<const double> mean, std::span<const double> log_std,
                                    std::span<const double> pre_squash, bool squash);

struct SquashedSample {
  std::vector<double> noise;       // standard normal draw
  std::vector<double> pre_squash;  // mean + std * noise
  std::vector<double> action;      // tanh(pre_squash)
};
SquashedSample sample_squashed_gaussian(std::span<const double> mean, std::span<const double> log_std, Rng& rng);

// tanh(u) kept strictly inside (-1, 1).
double safe_tanh(double u);

// Log-softmax over entries with mask > 0; masked entries get -infinity.
std::vector<double> log_softmax(std::span<const double> logits, std::span<const double> mask = {});

// --- checkpoints ---------------------------------------------------------

// Writes <prefix>.bin (little-endian doubles) and <prefix>.json (shape table).
void save_checkpoint(const std::string& prefix, const ParamVector& params);
ParamVector load_checkpoint(const std::string& prefix);

}  // namespace dipper::nn
