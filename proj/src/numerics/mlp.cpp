#include <cmath>

#include "dipper/errors.hpp"
#include "dipper/numerics.hpp"

namespace dipper::nn {

namespace {

using RowMap = Eigen::Map<const Matrix>;
using ConstVecMap = Eigen::Map<const Eigen::RowVectorXd>;
using MatMap = Eigen::Map<Matrix>;
using VecMap = Eigen::Map<Eigen::RowVectorXd>;

void apply_activation(Activation act, Matrix& m) {
  if (act == Activation::Tanh) {
    m = m.array().tanh().matrix();
  } else {
    m = m.cwiseMax(0.0);
  }
}

// Multiplies d (dLoss/dy) in place by dy/dz, using the post-activation y.
void apply_activation_grad(Activation act, const Matrix& y, Matrix& d) {
  if (act == Activation::Tanh) {
    d.array() *= (1.0 - y.array().square());
  } else {
    d.array() *= (y.array() > 0.0).cast<double>();
  }
}

}  // namespace

std::vector<LayerShape> MlpSpec::layer_shapes() const {
  std::vector<LayerShape> shapes;
  int in = input_dim;
  for (int i = 0; i < n_hidden; ++i) {
    shapes.push_back({in, hidden_width});
    in = hidden_width;
  }
  shapes.push_back({in, output_dim});
  return shapes;
}

std::size_t MlpSpec::param_count() const { return ParamVector::expected_size(layer_shapes()); }

void MlpSpec::validate() const {
  if (input_dim <= 0 || output_dim <= 0 || n_hidden < 0 || (n_hidden > 0 && hidden_width <= 0)) {
    throw ConfigError("MLP dimensions must be positive (input " + std::to_string(input_dim) + ", hidden " +
                      std::to_string(hidden_width) + "x" + std::to_string(n_hidden) + ", output " +
                      std::to_string(output_dim) + ")");
  }
}

std::size_t ParamVector::expected_size(const std::vector<LayerShape>& shapes) {
  std::size_t n = 0;
  for (const auto& s : shapes) n += static_cast<std::size_t>(s.in) * s.out + s.out;
  return n;
}

ParamVector ParamVector::zeros(const MlpSpec& spec) {
  spec.validate();
  ParamVector p;
  p.shape_table = spec.layer_shapes();
  p.values.assign(expected_size(p.shape_table), 0.0);
  return p;
}

ParamVector init_params(const MlpSpec& spec, Rng& rng, double output_scale) {
  ParamVector p = ParamVector::zeros(spec);
  std::size_t offset = 0;
  for (std::size_t l = 0; l < p.shape_table.size(); ++l) {
    const auto [in, out] = p.shape_table[l];
    double bound = std::sqrt(6.0 / (in + out));
    if (l + 1 == p.shape_table.size()) bound *= output_scale;
    std::uniform_real_distribution<double> dist(-bound, bound);
    for (int i = 0; i < in * out; ++i) p.values[offset + static_cast<std::size_t>(i)] = dist(rng);
    offset += static_cast<std::size_t>(in) * out + out;
  }
  return p;
}

Matrix forward_batch(const MlpSpec& spec, const ParamVector& params, const Matrix& inputs, ForwardCache* cache) {
  if (inputs.cols() != spec.input_dim) {
    throw ShapeError("MLP input has width " + std::to_string(inputs.cols()) + ", expected " +
                     std::to_string(spec.input_dim));
  }
  if (params.size() != spec.param_count()) {
    throw ShapeError("parameter vector has " + std::to_string(params.size()) + " entries, expected " +
                     std::to_string(spec.param_count()));
  }
  const auto shapes = spec.layer_shapes();
  if (cache) {
    cache->activations.clear();
    cache->activations.reserve(shapes.size() + 1);
    cache->activations.push_back(inputs);
  }
  Matrix x = inputs;
  std::size_t offset = 0;
  for (std::size_t l = 0; l < shapes.size(); ++l) {
    const auto [in, out] = shapes[l];
    RowMap w(params.values.data() + offset, out, in);
    ConstVecMap b(params.values.data() + offset + static_cast<std::size_t>(in) * out, out);
    Matrix z = x * w.transpose();
    z.rowwise() += b;
    if (l + 1 < shapes.size()) apply_activation(spec.hidden_activation, z);
    x = std::move(z);
    if (cache) cache->activations.push_back(x);
    offset += static_cast<std::size_t>(in) * out + out;
  }
  return x;
}

std::vector<double> forward(const MlpSpec& spec, const ParamVector& params, std::span<const double> input) {
  Matrix x = Eigen::Map<const Matrix>(input.data(), 1, static_cast<Eigen::Index>(input.size()));
  Matrix y = forward_batch(spec, params, x);
  return {y.data(), y.data() + y.size()};
}

void backward_batch(const MlpSpec& spec, const ParamVector& params, const ForwardCache& cache,
                    const Matrix& d_output, std::span<double> grad, Matrix* d_input) {
  const auto shapes = spec.layer_shapes();
  if (cache.activations.size() != shapes.size() + 1) throw ShapeError("forward cache does not match network");
  if (grad.size() != params.size()) throw ShapeError("gradient buffer size mismatch");
  if (d_output.rows() != cache.activations.back().rows() || d_output.cols() != spec.output_dim) {
    throw ShapeError("output gradient shape mismatch");
  }
  std::vector<std::size_t> offsets(shapes.size());
  std::size_t offset = 0;
  for (std::size_t l = 0; l < shapes.size(); ++l) {
    offsets[l] = offset;
    offset += static_cast<std::size_t>(shapes[l].in) * shapes[l].out + shapes[l].out;
  }
  Matrix d = d_output;
  for (std::size_t li = shapes.size(); li-- > 0;) {
    const auto [in, out] = shapes[li];
    if (li + 1 < shapes.size()) apply_activation_grad(spec.hidden_activation, cache.activations[li + 1], d);
    const Matrix& x = cache.activations[li];
    MatMap gw(grad.data() + offsets[li], out, in);
    VecMap gb(grad.data() + offsets[li] + static_cast<std::size_t>(in) * out, out);
    gw.noalias() += d.transpose() * x;
    gb += d.colwise().sum();
    if (li > 0 || d_input) {
      RowMap w(params.values.data() + offsets[li], out, in);
      Matrix dx = d * w;
      d = std::move(dx);
    }
  }
  if (d_input) *d_input = std::move(d);
}

std::vector<double> grad(const MlpSpec& spec, const ParamVector& params, std::span<const double> input,
                         const OutputLoss& loss_fn) {
  ForwardCache cache;
  Matrix x = Eigen::Map<const Matrix>(input.data(), 1, static_cast<Eigen::Index>(input.size()));
  Matrix y = forward_batch(spec, params, x, &cache);
  Matrix dy = Matrix::Zero(1, spec.output_dim);
  loss_fn(std::span<const double>(y.data(), static_cast<std::size_t>(y.size())),
          std::span<double>(dy.data(), static_cast<std::size_t>(dy.size())));
  std::vector<double> g(params.size(), 0.0);
  backward_batch(spec, params, cache, dy, g);
  return g;
}

Matrix to_matrix(const std::vector<std::vector<double>>& rows) {
  if (rows.empty()) return Matrix(0, 0);
  Matrix m(static_cast<Eigen::Index>(rows.size()), static_cast<Eigen::Index>(rows.front().size()));
  for (std::size_t i = 0; i < rows.size(); ++i) {
    if (rows[i].size() != rows.front().size()) throw ShapeError("ragged feature rows");
    for (std::size_t j = 0; j < rows[i].size(); ++j) {
      m(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) = rows[i][j];
    }
  }
  return m;
}

}  // namespace dipper::nn
