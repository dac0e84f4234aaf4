#pragma once

#include <algorithm>
#include <cmath>
#include <string>
#include <vector>

#include "cellcount/errors.hpp"
#include "cellcount/network.hpp"

namespace cellcount {

// Momentum SGD: v <- mu * v - lr * g;  theta <- theta + v.
// With mu = 0 this is plain gradient descent.
template <typename S>
class MomentumSgd {
 public:
  MomentumSgd(double learning_rate, double momentum)
      : learning_rate_(learning_rate), momentum_(momentum) {}

  void step(Network<S>& net, const ParamSet<S>& grads) {
    if (velocity_.empty()) velocity_ = zeros_like(net.params);
    const S lr = static_cast<S>(learning_rate_);
    const S mu = static_cast<S>(momentum_);
    for (std::size_t l = 0; l < net.params.size(); ++l) {
      update(net.params[l].weight, velocity_[l].weight, grads[l].weight, lr, mu);
      update(net.params[l].bias, velocity_[l].bias, grads[l].bias, lr, mu);
    }
  }

  double learning_rate() const { return learning_rate_; }
  double momentum() const { return momentum_; }

 private:
  static void update(AlignedVector<S>& theta, AlignedVector<S>& v, const AlignedVector<S>& g, S lr,
                     S mu) {
    for (std::size_t k = 0; k < theta.size(); ++k) {
      v[k] = mu * v[k] - lr * g[k];
      theta[k] += v[k];
    }
  }

  double learning_rate_;
  double momentum_;
  ParamSet<S> velocity_;
};

// RMSProp: s <- rho * s + (1 - rho) * g^2;  theta <- theta - lr * g / (sqrt(s) + eps).
template <typename S>
class RmsProp {
 public:
  RmsProp(double learning_rate, double decay = 0.99, double epsilon = 1e-8)
      : learning_rate_(learning_rate), decay_(decay), epsilon_(epsilon) {}

  void step(Network<S>& net, const ParamSet<S>& grads) {
    if (square_.empty()) square_ = zeros_like(net.params);
    for (std::size_t l = 0; l < net.params.size(); ++l) {
      update(net.params[l].weight, square_[l].weight, grads[l].weight);
      update(net.params[l].bias, square_[l].bias, grads[l].bias);
    }
  }

 private:
  void update(AlignedVector<S>& theta, AlignedVector<S>& sq, const AlignedVector<S>& g) const {
    const S lr = static_cast<S>(learning_rate_);
    const S rho = static_cast<S>(decay_);
    const S eps = static_cast<S>(epsilon_);
    for (std::size_t k = 0; k < theta.size(); ++k) {
      sq[k] = rho * sq[k] + (S{1} - rho) * g[k] * g[k];
      theta[k] -= lr * g[k] / (std::sqrt(sq[k]) + eps);
    }
  }

  double learning_rate_;
  double decay_;
  double epsilon_;
  ParamSet<S> square_;
};

enum class OptimizerKind { sgd, rmsprop };

inline const char* to_string(OptimizerKind k) { return k == OptimizerKind::sgd ? "sgd" : "rmsprop"; }

inline OptimizerKind parse_optimizer(const std::string& name) {
  if (name == "sgd") return OptimizerKind::sgd;
  if (name == "rmsprop") return OptimizerKind::rmsprop;
  throw ConfigError("unknown optimizer '" + name + "' (expected sgd or rmsprop)");
}

// Either optimizer behind one step() call; `momentum` only applies to SGD.
template <typename S>
class Optimizer {
 public:
  Optimizer(OptimizerKind kind, double learning_rate, double momentum, double rms_decay = 0.99)
      : kind_(kind), sgd_(learning_rate, momentum), rms_(learning_rate, rms_decay) {}

  void step(Network<S>& net, const ParamSet<S>& grads) {
    if (kind_ == OptimizerKind::sgd) sgd_.step(net, grads);
    else rms_.step(net, grads);
  }

 private:
  OptimizerKind kind_;
  MomentumSgd<S> sgd_;
  RmsProp<S> rms_;
};

// Clamps every weight and bias of `net` into [-bound, bound].
template <typename S>
void clip_parameters(Network<S>& net, double bound) {
  const S b = static_cast<S>(bound);
  for (auto& p : net.params) {
    for (auto& w : p.weight) w = std::clamp(w, -b, b);
    for (auto& w : p.bias) w = std::clamp(w, -b, b);
  }
}

template <typename S>
bool all_finite(const ParamSet<S>& ps) {
  for (const auto& p : ps) {
    for (const S w : p.weight)
      if (!std::isfinite(w)) return false;
    for (const S w : p.bias)
      if (!std::isfinite(w)) return false;
  }
  return true;
}

}  // namespace cellcount
