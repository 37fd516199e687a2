#pragma once

#include <Eigen/Dense>

#include <cmath>
#include <cstdint>
#include <istream>
#include <ostream>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "terrawalk/error.hpp"
#include "terrawalk/rng.hpp"
#include "terrawalk/text.hpp"

namespace terrawalk {

enum class Activation { Identity, Tanh };

inline const char* activation_name(Activation a) noexcept {
  return a == Activation::Tanh ? "tanh" : "identity";
}

/// Per-parameter partials with the network's layer layout.
struct Gradients {
  std::vector<Eigen::MatrixXd> weights;
  std::vector<Eigen::VectorXd> biases;

  bool all_finite() const {
    for (const auto& w : weights)
      if (!w.allFinite()) return false;
    for (const auto& b : biases)
      if (!b.allFinite()) return false;
    return true;
  }

  bool is_zero() const {
    for (const auto& w : weights)
      if (!w.isZero(0.0)) return false;
    for (const auto& b : biases)
      if (!b.isZero(0.0)) return false;
    return true;
  }

  Gradients& operator*=(double s) {
    for (auto& w : weights) w *= s;
    for (auto& b : biases) b *= s;
    return *this;
  }
};

/**
 * Fully connected network: relu hidden layers, identity or tanh output.
 *
 * Batches are column-major: each column of the input matrix is one sample.
 * Weights of layer l map sizes[l] inputs to sizes[l + 1] outputs.
 */
class Mlp {
 public:
  /// Intermediates of one batched forward pass, consumed by backward().
  struct Cache {
    std::vector<Eigen::MatrixXd> inputs;  // input to each layer
    std::vector<Eigen::MatrixXd> pre;     // pre-activation of each layer
    Eigen::MatrixXd output;
  };

  Mlp() = default;

  /// Uniform(-1/sqrt(fan_in), 1/sqrt(fan_in)) weights, zero biases.
  Mlp(std::vector<int> sizes, Activation output, std::uint64_t seed)
      : Mlp(zeros(std::move(sizes), output)) {
    Xoshiro256 rng(seed);
    for (auto& w : weights_) {
      const double bound = 1.0 / std::sqrt(static_cast<double>(w.cols()));
      for (Eigen::Index c = 0; c < w.cols(); ++c)
        for (Eigen::Index r = 0; r < w.rows(); ++r) w(r, c) = rng.uniform(-bound, bound);
    }
  }

  static Mlp zeros(std::vector<int> sizes, Activation output) {
    if (sizes.size() < 2) throw ParameterError("mlp: need at least an input and an output layer");
    for (int s : sizes)
      if (s <= 0) throw ParameterError("mlp: layer sizes must be positive");
    Mlp m;
    m.sizes_ = std::move(sizes);
    m.output_ = output;
    for (std::size_t l = 0; l + 1 < m.sizes_.size(); ++l) {
      m.weights_.push_back(Eigen::MatrixXd::Zero(m.sizes_[l + 1], m.sizes_[l]));
      m.biases_.push_back(Eigen::VectorXd::Zero(m.sizes_[l + 1]));
    }
    return m;
  }

  const std::vector<int>& sizes() const noexcept { return sizes_; }
  Activation output_activation() const noexcept { return output_; }
  int input_size() const { return sizes_.front(); }
  int output_size() const { return sizes_.back(); }
  std::size_t layer_count() const noexcept { return weights_.size(); }

  std::size_t parameter_count() const {
    std::size_t n = 0;
    for (std::size_t l = 0; l < weights_.size(); ++l)
      n += static_cast<std::size_t>(weights_[l].size() + biases_[l].size());
    return n;
  }

  Eigen::MatrixXd& weight(std::size_t l) { return weights_.at(l); }
  const Eigen::MatrixXd& weight(std::size_t l) const { return weights_.at(l); }
  Eigen::VectorXd& bias(std::size_t l) { return biases_.at(l); }
  const Eigen::VectorXd& bias(std::size_t l) const { return biases_.at(l); }

  bool same_architecture(const Mlp& other) const {
    return sizes_ == other.sizes_ && output_ == other.output_;
  }

  Eigen::MatrixXd forward(const Eigen::MatrixXd& x) const {
    check_input(x);
    Eigen::MatrixXd a = x;
    for (std::size_t l = 0; l < weights_.size(); ++l) {
      Eigen::MatrixXd z = (weights_[l] * a).colwise() + biases_[l];
      a = activate(std::move(z), l);
    }
    return a;
  }

  Eigen::VectorXd forward(const Eigen::VectorXd& x) const {
    return forward(Eigen::MatrixXd(x)).col(0);
  }

  Eigen::MatrixXd forward(const Eigen::MatrixXd& x, Cache& cache) const {
    check_input(x);
    cache.inputs.clear();
    cache.pre.clear();
    Eigen::MatrixXd a = x;
    for (std::size_t l = 0; l < weights_.size(); ++l) {
      cache.inputs.push_back(a);
      Eigen::MatrixXd z = (weights_[l] * a).colwise() + biases_[l];
      cache.pre.push_back(z);
      a = activate(std::move(z), l);
    }
    cache.output = a;
    return a;
  }

  /**
   * Reverse pass. `upstream` holds dL/dy per sample (same shape as the
   * output). Parameter gradients are summed over the batch; `input_grad`, if
   * given, receives dL/dx per sample.
   */
  Gradients backward(const Cache& cache, const Eigen::MatrixXd& upstream,
                     Eigen::MatrixXd* input_grad = nullptr) const {
    if (cache.pre.size() != weights_.size())
      throw ParameterError("mlp backward: cache does not match the network");
    if (upstream.rows() != output_size() || upstream.cols() != cache.output.cols())
      throw ParameterError("mlp backward: upstream gradient shape mismatch");

    Gradients g;
    g.weights.resize(weights_.size());
    g.biases.resize(weights_.size());
    Eigen::MatrixXd delta = upstream;
    for (std::size_t k = weights_.size(); k-- > 0;) {
      if (k + 1 == weights_.size()) {
        if (output_ == Activation::Tanh)
          delta.array() *= 1.0 - cache.output.array().square();
      } else {
        delta.array() *= (cache.pre[k].array() > 0.0).cast<double>();
      }
      g.weights[k] = delta * cache.inputs[k].transpose();
      g.biases[k] = delta.rowwise().sum();
      if (k > 0 || input_grad) delta = weights_[k].transpose() * delta;
    }
    if (input_grad) *input_grad = std::move(delta);
    return g;
  }

  /// Flat parameter vector: per layer, W row-major then b.
  std::vector<double> parameters() const {
    std::vector<double> out;
    out.reserve(parameter_count());
    for (std::size_t l = 0; l < weights_.size(); ++l) {
      for (Eigen::Index r = 0; r < weights_[l].rows(); ++r)
        for (Eigen::Index c = 0; c < weights_[l].cols(); ++c) out.push_back(weights_[l](r, c));
      for (Eigen::Index r = 0; r < biases_[l].size(); ++r) out.push_back(biases_[l](r));
    }
    return out;
  }

  void set_parameters(const std::vector<double>& p) {
    if (p.size() != parameter_count()) throw ParameterError("mlp: parameter count mismatch");
    std::size_t i = 0;
    for (std::size_t l = 0; l < weights_.size(); ++l) {
      for (Eigen::Index r = 0; r < weights_[l].rows(); ++r)
        for (Eigen::Index c = 0; c < weights_[l].cols(); ++c) weights_[l](r, c) = p[i++];
      for (Eigen::Index r = 0; r < biases_[l].size(); ++r) biases_[l](r) = p[i++];
    }
  }

  bool operator==(const Mlp& o) const {
    if (!same_architecture(o)) return false;
    for (std::size_t l = 0; l < weights_.size(); ++l)
      if (weights_[l] != o.weights_[l] || biases_[l] != o.biases_[l]) return false;
    return true;
  }

 private:
  void check_input(const Eigen::MatrixXd& x) const {
    if (weights_.empty()) throw ParameterError("mlp: empty network");
    if (x.rows() != input_size())
      throw ParameterError("mlp forward: expected " + std::to_string(input_size()) +
                           " inputs, got " + std::to_string(x.rows()));
  }

  Eigen::MatrixXd activate(Eigen::MatrixXd z, std::size_t layer) const {
    if (layer + 1 < weights_.size()) return z.cwiseMax(0.0);
    if (output_ == Activation::Tanh) return z.array().tanh().matrix();
    return z;
  }

  std::vector<int> sizes_;
  Activation output_ = Activation::Identity;
  std::vector<Eigen::MatrixXd> weights_;
  std::vector<Eigen::VectorXd> biases_;
};

struct BackwardResult {
  Gradients grads;
  Eigen::VectorXd input_grad;
};

/// Single-sample reverse pass.
inline BackwardResult backward(const Mlp& net, const Eigen::VectorXd& x,
                               const Eigen::VectorXd& upstream) {
  Mlp::Cache cache;
  net.forward(Eigen::MatrixXd(x), cache);
  Eigen::MatrixXd dx;
  BackwardResult out;
  out.grads = net.backward(cache, Eigen::MatrixXd(upstream), &dx);
  out.input_grad = dx.col(0);
  return out;
}

// ---------------------------------------------------------------------------
// Optimisation
// ---------------------------------------------------------------------------

struct AdamState {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  std::uint64_t step_count = 0;
  Gradients m;
  Gradients v;

  AdamState() = default;
  explicit AdamState(double learning_rate) : lr(learning_rate) {}
};

/// One bias-corrected Adam descent step. Zero gradients leave parameters
/// exactly unchanged.
inline void adam_step(AdamState& opt, Mlp& net, const Gradients& g) {
  const std::size_t layers = net.layer_count();
  if (g.weights.size() != layers || g.biases.size() != layers)
    throw ParameterError("adam_step: gradient layout does not match the network");
  for (std::size_t l = 0; l < layers; ++l)
    if (g.weights[l].rows() != net.weight(l).rows() || g.weights[l].cols() != net.weight(l).cols() ||
        g.biases[l].size() != net.bias(l).size())
      throw ParameterError("adam_step: gradient shape mismatch in layer " + std::to_string(l));

  if (opt.m.weights.empty()) {
    for (std::size_t l = 0; l < layers; ++l) {
      opt.m.weights.push_back(Eigen::MatrixXd::Zero(net.weight(l).rows(), net.weight(l).cols()));
      opt.m.biases.push_back(Eigen::VectorXd::Zero(net.bias(l).size()));
    }
    opt.v = opt.m;
  } else if (opt.m.weights.size() != layers) {
    throw ParameterError("adam_step: optimiser state belongs to another network");
  }

  ++opt.step_count;
  const double t = static_cast<double>(opt.step_count);
  const double c1 = 1.0 - std::pow(opt.beta1, t);
  const double c2 = 1.0 - std::pow(opt.beta2, t);

  auto apply = [&](auto& param, auto& m, auto& v, const auto& grad) {
    m = opt.beta1 * m + (1.0 - opt.beta1) * grad;
    v = opt.beta2 * v + (1.0 - opt.beta2) * grad.cwiseProduct(grad);
    param.array() -= opt.lr * (m.array() / c1) / ((v.array() / c2).sqrt() + opt.eps);
  };
  for (std::size_t l = 0; l < layers; ++l) {
    apply(net.weight(l), opt.m.weights[l], opt.v.weights[l], g.weights[l]);
    apply(net.bias(l), opt.m.biases[l], opt.v.biases[l], g.biases[l]);
  }
}

/// target <- tau * source + (1 - tau) * target.
inline void soft_update(Mlp& target, const Mlp& source, double tau) {
  if (!target.same_architecture(source))
    throw ParameterError("soft_update: architectures differ");
  if (!(tau >= 0.0 && tau <= 1.0)) throw ParameterError("soft_update: tau must lie in [0, 1]");
  for (std::size_t l = 0; l < target.layer_count(); ++l) {
    if (tau == 1.0) {
      target.weight(l) = source.weight(l);
      target.bias(l) = source.bias(l);
    } else {
      target.weight(l) = tau * source.weight(l) + (1.0 - tau) * target.weight(l);
      target.bias(l) = tau * source.bias(l) + (1.0 - tau) * target.bias(l);
    }
  }
}

// ---------------------------------------------------------------------------
// Text format
// ---------------------------------------------------------------------------

/**
 * `TWK1 <role> <sizes joined by '-'>` then one parameter per line in flat
 * order (per layer, W row-major then b). The output activation is not part of
 * the format; the reader supplies it.
 */
inline void write_mlp(std::ostream& out, const Mlp& net, const std::string& role) {
  if (role.empty() || role.find_first_of(" \t\n") != std::string::npos)
    throw ParameterError("write_mlp: role must be a single non-empty token");
  out << "TWK1 " << role << ' ';
  for (std::size_t i = 0; i < net.sizes().size(); ++i) out << (i ? "-" : "") << net.sizes()[i];
  out << '\n';
  for (double p : net.parameters()) out << format_double(p) << '\n';
}

struct LoadedMlp {
  std::string role;
  Mlp net;
};

inline LoadedMlp read_mlp(std::istream& in, Activation output) {
  std::string header;
  if (!std::getline(in, header)) throw ParseError(1, "network file: missing header");
  std::istringstream hs(header);
  std::string magic, role, shape, extra;
  if (!(hs >> magic >> role >> shape) || (hs >> extra) || magic != "TWK1")
    throw ParseError(1, "network file: header must be 'TWK1 <role> <sizes>'");

  std::vector<int> sizes;
  std::string_view sv = shape;
  while (!sv.empty()) {
    const auto dash = sv.find('-');
    const std::string_view tok = sv.substr(0, dash);
    int n = 0;
    const auto res = std::from_chars(tok.data(), tok.data() + tok.size(), n);
    if (tok.empty() || res.ec != std::errc{} || res.ptr != tok.data() + tok.size() || n <= 0)
      throw ParseError(1, "network file: bad layer size '" + std::string(tok) + "'");
    sizes.push_back(n);
    if (dash == std::string_view::npos) break;
    sv.remove_prefix(dash + 1);
  }
  if (sizes.size() < 2) throw ParseError(1, "network file: need at least two layer sizes");

  LoadedMlp loaded{role, Mlp::zeros(sizes, output)};
  std::vector<double> params;
  params.reserve(loaded.net.parameter_count());
  std::string line;
  std::size_t lineno = 1;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty() || line == "\r") continue;
    if (params.size() == loaded.net.parameter_count())
      throw ParseError(lineno, "network file: more parameters than the header declares");
    params.push_back(parse_double(line, lineno, "network file"));
  }
  if (params.size() != loaded.net.parameter_count())
    throw ParseError(lineno, "network file: expected " +
                                 std::to_string(loaded.net.parameter_count()) + " parameters, got " +
                                 std::to_string(params.size()));
  loaded.net.set_parameters(params);
  return loaded;
}

}  // namespace terrawalk
