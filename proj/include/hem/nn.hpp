#pragma once

// Dense relu networks with explicit reverse-mode gradients and Adam.
//
// Activations are stored column-wise: a batch of B inputs is an (in x B)
// matrix, so a single input is the B = 1 case of the same code path.

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <numeric>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "hem/errors.hpp"
#include "hem/rng.hpp"

namespace hem {

using Vec = std::vector<double>;

struct MlpParams {
  std::vector<int> layer_sizes;
  std::vector<Eigen::MatrixXd> weights;  // layer l: (layer_sizes[l+1] x layer_sizes[l])
  std::vector<Eigen::VectorXd> biases;

  std::size_t num_layers() const { return weights.size(); }
  int input_dim() const { return layer_sizes.front(); }
  int output_dim() const { return layer_sizes.back(); }

  std::size_t parameter_count() const {
    std::size_t n = 0;
    for (std::size_t l = 0; l < weights.size(); ++l) n += weights[l].size() + biases[l].size();
    return n;
  }
};

/// d(loss)/d(parameter), congruent with the MlpParams it was computed for.
struct GradBundle {
  std::vector<Eigen::MatrixXd> weights;
  std::vector<Eigen::VectorXd> biases;

  static GradBundle zeros_like(const MlpParams& p) {
    GradBundle g;
    for (std::size_t l = 0; l < p.num_layers(); ++l) {
      g.weights.push_back(Eigen::MatrixXd::Zero(p.weights[l].rows(), p.weights[l].cols()));
      g.biases.push_back(Eigen::VectorXd::Zero(p.biases[l].size()));
    }
    return g;
  }

  GradBundle& add_scaled(const GradBundle& other, double s) {
    if (weights.size() != other.weights.size()) throw ShapeError("gradient layer count mismatch");
    for (std::size_t l = 0; l < weights.size(); ++l) {
      weights[l] += s * other.weights[l];
      biases[l] += s * other.biases[l];
    }
    return *this;
  }

  GradBundle& scale(double s) {
    for (auto& w : weights) w *= s;
    for (auto& b : biases) b *= s;
    return *this;
  }

  bool all_finite() const {
    for (std::size_t l = 0; l < weights.size(); ++l)
      if (!weights[l].allFinite() || !biases[l].allFinite()) return false;
    return true;
  }

  double max_abs() const {
    double m = 0.0;
    for (std::size_t l = 0; l < weights.size(); ++l) {
      if (weights[l].size()) m = std::max(m, weights[l].cwiseAbs().maxCoeff());
      if (biases[l].size()) m = std::max(m, biases[l].cwiseAbs().maxCoeff());
    }
    return m;
  }
};

/// Activations retained by mlp_forward for the matching mlp_backward call.
struct ForwardCache {
  std::vector<Eigen::MatrixXd> layer_inputs;  // input to layer l (post-relu of l-1)
  std::vector<Eigen::MatrixXd> pre_activations;
};

inline void check_congruent(const MlpParams& p, const GradBundle& g) {
  if (g.weights.size() != p.weights.size() || g.biases.size() != p.biases.size())
    throw ShapeError("gradient bundle does not match parameter layer count");
  for (std::size_t l = 0; l < p.weights.size(); ++l) {
    if (g.weights[l].rows() != p.weights[l].rows() || g.weights[l].cols() != p.weights[l].cols() ||
        g.biases[l].size() != p.biases[l].size())
      throw ShapeError("gradient bundle shape mismatch at layer " + std::to_string(l));
  }
}

/// Weights ~ U(-sqrt(1/fan_in), +sqrt(1/fan_in)), biases zero.
inline MlpParams mlp_init(const std::vector<int>& layer_sizes, std::uint64_t seed) {
  if (layer_sizes.size() < 2) throw ConfigError("mlp needs at least an input and an output size");
  for (int s : layer_sizes)
    if (s < 1) throw ConfigError("mlp layer sizes must be positive");
  Rng rng(derive_seed(seed, {static_cast<std::uint64_t>(Stream::init)}));
  MlpParams p;
  p.layer_sizes = layer_sizes;
  for (std::size_t l = 0; l + 1 < layer_sizes.size(); ++l) {
    const int in = layer_sizes[l], out = layer_sizes[l + 1];
    const double bound = std::sqrt(1.0 / in);
    Eigen::MatrixXd w(out, in);
    for (int i = 0; i < out; ++i)
      for (int j = 0; j < in; ++j) w(i, j) = rng.uniform(-bound, bound);
    p.weights.push_back(std::move(w));
    p.biases.push_back(Eigen::VectorXd::Zero(out));
  }
  return p;
}

/// Batched forward pass; hidden layers relu, output layer linear.
inline Eigen::MatrixXd mlp_forward(const MlpParams& p, const Eigen::MatrixXd& input,
                                   ForwardCache* cache = nullptr) {
  if (input.rows() != p.input_dim())
    throw ShapeError("mlp input has " + std::to_string(input.rows()) + " rows, expected " +
                     std::to_string(p.input_dim()));
  if (cache) {
    cache->layer_inputs.clear();
    cache->pre_activations.clear();
  }
  Eigen::MatrixXd x = input;
  const std::size_t L = p.num_layers();
  for (std::size_t l = 0; l < L; ++l) {
    Eigen::MatrixXd z = p.weights[l] * x;
    z.colwise() += p.biases[l];
    if (cache) {
      cache->layer_inputs.push_back(std::move(x));
      cache->pre_activations.push_back(z);
    }
    x = (l + 1 < L) ? Eigen::MatrixXd(z.cwiseMax(0.0)) : std::move(z);
  }
  return x;
}

inline Vec mlp_forward(const MlpParams& p, std::span<const double> input,
                       ForwardCache* cache = nullptr) {
  Eigen::Map<const Eigen::VectorXd> in(input.data(), static_cast<Eigen::Index>(input.size()));
  Eigen::MatrixXd out = mlp_forward(p, Eigen::MatrixXd(in), cache);
  return Vec(out.data(), out.data() + out.size());
}

/// Reverse-mode gradient of sum over the batch of <output_grad, output>.
inline GradBundle mlp_backward(const MlpParams& p, const ForwardCache& cache,
                               const Eigen::MatrixXd& output_grad) {
  const std::size_t L = p.num_layers();
  if (cache.layer_inputs.size() != L || cache.pre_activations.size() != L)
    throw ShapeError("forward cache does not match network depth");
  if (output_grad.rows() != p.output_dim() ||
      output_grad.cols() != cache.pre_activations.back().cols())
    throw ShapeError("output gradient shape does not match cached forward pass");
  for (std::size_t l = 0; l < L; ++l)
    if (cache.layer_inputs[l].rows() != p.weights[l].cols())
      throw ShapeError("stale forward cache");

  GradBundle g;
  g.weights.resize(L);
  g.biases.resize(L);
  Eigen::MatrixXd delta = output_grad;
  for (std::size_t l = L; l-- > 0;) {
    g.weights[l] = delta * cache.layer_inputs[l].transpose();
    g.biases[l] = delta.rowwise().sum();
    if (l > 0) {
      delta = p.weights[l].transpose() * delta;
      delta = delta.cwiseProduct(
          (cache.pre_activations[l - 1].array() > 0.0).cast<double>().matrix());
    }
  }
  return g;
}

inline GradBundle mlp_backward(const MlpParams& p, const ForwardCache& cache,
                               std::span<const double> output_grad) {
  Eigen::Map<const Eigen::VectorXd> og(output_grad.data(),
                                       static_cast<Eigen::Index>(output_grad.size()));
  return mlp_backward(p, cache, Eigen::MatrixXd(og));
}

// ---------------------------------------------------------------------------
// Adam

struct AdamConfig {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
};

struct AdamState {
  std::uint64_t step_count = 0;
  GradBundle first_moment;
  GradBundle second_moment;
  AdamConfig cfg;

  static AdamState for_params(const MlpParams& p, AdamConfig cfg = {}) {
    return AdamState{0, GradBundle::zeros_like(p), GradBundle::zeros_like(p), cfg};
  }
};

namespace detail {
template <class Derived, class DerivedG>
void adam_block(Eigen::MatrixBase<Derived>& param, const Eigen::MatrixBase<DerivedG>& grad,
                Eigen::MatrixBase<Derived>& m, Eigen::MatrixBase<Derived>& v,
                const AdamConfig& c, double lr, double bc1, double bc2) {
  m = c.beta1 * m + (1.0 - c.beta1) * grad;
  v = c.beta2 * v + (1.0 - c.beta2) * grad.cwiseProduct(grad);
  param -= (lr * (m / bc1).array() / ((v / bc2).array().sqrt() + c.epsilon)).matrix();
}
}  // namespace detail

/// One bias-corrected Adam descent step: params -= lr * m_hat / (sqrt(v_hat) + eps).
/// Callers maximizing an objective pass the negated gradient.
inline void adam_step(AdamState& state, MlpParams& params, const GradBundle& grads, double lr) {
  check_congruent(params, grads);
  check_congruent(params, state.first_moment);
  if (!grads.all_finite()) throw NumericalError("non-finite gradient; adam update refused");
  state.step_count += 1;
  const double t = static_cast<double>(state.step_count);
  const double bc1 = 1.0 - std::pow(state.cfg.beta1, t);
  const double bc2 = 1.0 - std::pow(state.cfg.beta2, t);
  for (std::size_t l = 0; l < params.num_layers(); ++l) {
    detail::adam_block(params.weights[l], grads.weights[l], state.first_moment.weights[l],
                       state.second_moment.weights[l], state.cfg, lr, bc1, bc2);
    detail::adam_block(params.biases[l], grads.biases[l], state.first_moment.biases[l],
                       state.second_moment.biases[l], state.cfg, lr, bc1, bc2);
  }
}

/// Adam over a plain vector of parameters (used for the Gaussian log-std).
struct VectorAdam {
  std::uint64_t step_count = 0;
  Eigen::VectorXd m, v;
  AdamConfig cfg;

  void step(Eigen::VectorXd& params, const Eigen::VectorXd& grad, double lr) {
    if (grad.size() != params.size()) throw ShapeError("vector adam shape mismatch");
    if (!grad.allFinite()) throw NumericalError("non-finite gradient; adam update refused");
    if (m.size() != params.size()) {
      m = Eigen::VectorXd::Zero(params.size());
      v = Eigen::VectorXd::Zero(params.size());
    }
    step_count += 1;
    const double t = static_cast<double>(step_count);
    detail::adam_block(params, grad, m, v, cfg, lr, 1.0 - std::pow(cfg.beta1, t),
                       1.0 - std::pow(cfg.beta2, t));
  }
};

// ---------------------------------------------------------------------------
// Finite-difference gradient check

/// Loss together with its analytic gradient at the given parameters.
using LossWithGrad = std::function<double(const MlpParams&, GradBundle*)>;

/// Max relative error between analytic gradient and central differences.
/// Denominator is max(|analytic|, |numeric|, 1e-8). Above 10^4 parameters a
/// fixed-seed random subsample of 10^4 coordinates is checked.
inline double grad_check(const LossWithGrad& loss, const MlpParams& params, double h) {
  if (!(h > 0.0)) throw InputError("grad_check step must be positive");
  GradBundle analytic = GradBundle::zeros_like(params);
  const double base = loss(params, &analytic);
  if (!std::isfinite(base)) throw NumericalError("loss is not finite");
  check_congruent(params, analytic);

  struct Coord {
    std::size_t layer;
    bool is_bias;
    Eigen::Index index;
  };
  std::vector<Coord> coords;
  for (std::size_t l = 0; l < params.num_layers(); ++l) {
    for (Eigen::Index i = 0; i < params.weights[l].size(); ++i) coords.push_back({l, false, i});
    for (Eigen::Index i = 0; i < params.biases[l].size(); ++i) coords.push_back({l, true, i});
  }
  constexpr std::size_t kMaxCoords = 10000;
  if (coords.size() > kMaxCoords) {
    Rng rng(0x9c4ec4);
    std::shuffle(coords.begin(), coords.end(), rng.engine());
    coords.resize(kMaxCoords);
  }

  MlpParams probe = params;
  double worst = 0.0;
  for (const auto& c : coords) {
    double& slot = c.is_bias ? probe.biases[c.layer](c.index) : probe.weights[c.layer](c.index);
    const double orig = slot;
    slot = orig + h;
    const double up = loss(probe, nullptr);
    slot = orig - h;
    const double down = loss(probe, nullptr);
    slot = orig;
    if (!std::isfinite(up) || !std::isfinite(down)) throw NumericalError("loss is not finite");
    const double numeric = (up - down) / (2.0 * h);
    const double a =
        c.is_bias ? analytic.biases[c.layer](c.index) : analytic.weights[c.layer](c.index);
    const double denom = std::max({std::abs(a), std::abs(numeric), 1e-8});
    worst = std::max(worst, std::abs(a - numeric) / denom);
  }
  return worst;
}

// ---------------------------------------------------------------------------
// Checkpoint format: one flat array
//   [n_sizes, size_0 .. size_{n-1}, W_0 row-major, .., W_{L-1}, b_0, .., b_{L-1}]

inline nlohmann::json mlp_to_json(const MlpParams& p) {
  nlohmann::json arr = nlohmann::json::array();
  arr.push_back(p.layer_sizes.size());
  for (int s : p.layer_sizes) arr.push_back(s);
  for (const auto& w : p.weights)
    for (Eigen::Index i = 0; i < w.rows(); ++i)
      for (Eigen::Index j = 0; j < w.cols(); ++j) arr.push_back(w(i, j));
  for (const auto& b : p.biases)
    for (Eigen::Index i = 0; i < b.size(); ++i) arr.push_back(b(i));
  return arr;
}

inline MlpParams mlp_from_json(const nlohmann::json& arr) {
  if (!arr.is_array() || arr.empty()) throw InputError("mlp checkpoint must be a non-empty array");
  std::size_t pos = 0;
  auto next = [&]() -> const nlohmann::json& {
    if (pos >= arr.size()) throw InputError("mlp checkpoint truncated");
    return arr[pos++];
  };
  const auto n = next().get<std::size_t>();
  std::vector<int> sizes;
  for (std::size_t i = 0; i < n; ++i) sizes.push_back(next().get<int>());
  MlpParams p = mlp_init(sizes, 0);
  for (auto& w : p.weights)
    for (Eigen::Index i = 0; i < w.rows(); ++i)
      for (Eigen::Index j = 0; j < w.cols(); ++j) w(i, j) = next().get<double>();
  for (auto& b : p.biases)
    for (Eigen::Index i = 0; i < b.size(); ++i) b(i) = next().get<double>();
  if (pos != arr.size()) throw InputError("mlp checkpoint has trailing values");
  return p;
}

}  // namespace hem
