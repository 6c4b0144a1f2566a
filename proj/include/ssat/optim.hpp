#pragma once

#include <cmath>
#include <vector>

#include "ssat/error.hpp"
#include "ssat/tensor.hpp"

namespace ssat {

// lr = eta * 0.5 * (1 + cos(pi * e / E)), non-increasing over e in [0, E].
inline double cosine_lr(int epoch, int total_epochs, double base_lr) {
  if (total_epochs <= 0) throw Error("cosine_lr: total_epochs must be > 0");
  if (epoch < 0 || epoch > total_epochs) {
    throw Error("cosine_lr: epoch out of range [0, E]");
  }
  const double frac =
      static_cast<double>(epoch) / static_cast<double>(total_epochs);
  return base_lr * 0.5 * (1.0 + std::cos(3.14159265358979323846 * frac));
}

struct OptimState {
  double base_lr = 0.1;
  double weight_decay = 0.0;
  int total_epochs = 1;
  int epoch = 0;

  double lr() const { return cosine_lr(epoch, total_epochs, base_lr); }
};

// w <- w - lr * (g + wd * w). Plain SGD, no momentum.
inline std::vector<Tensor> sgd_step(const std::vector<Tensor>& params,
                                    const std::vector<Tensor>& grads,
                                    double lr, double weight_decay) {
  if (params.size() != grads.size()) {
    throw Error("sgd_step: parameter/gradient count mismatch");
  }
  std::vector<Tensor> out = params;
  for (std::size_t i = 0; i < out.size(); ++i) {
    if (!params[i].same_shape(grads[i])) {
      throw Error("sgd_step: shape mismatch at tensor " + std::to_string(i) +
                  " (" + params[i].shape_str() + " vs " +
                  grads[i].shape_str() + ")");
    }
    if (!grads[i].all_finite()) {
      throw Error("sgd_step: non-finite gradient at tensor " +
                  std::to_string(i));
    }
    for (std::size_t j = 0; j < out[i].data.size(); ++j) {
      out[i].data[j] -=
          lr * (grads[i].data[j] + weight_decay * params[i].data[j]);
    }
  }
  return out;
}

inline std::vector<Tensor> sgd_step(const std::vector<Tensor>& params,
                                    const std::vector<Tensor>& grads,
                                    const OptimState& state) {
  return sgd_step(params, grads, state.lr(), state.weight_decay);
}

}  // namespace ssat
