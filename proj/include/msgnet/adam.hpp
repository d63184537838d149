#pragma once

#include <cmath>
#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "msgnet/errors.hpp"
#include "msgnet/tensor.hpp"

namespace msgnet {

struct AdamState {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
  std::int64_t step = 0;
  std::vector<std::vector<float>> m;
  std::vector<std::vector<float>> v;
};

using NamedParams = std::vector<std::pair<std::string, Tensor>>;

// One bias-corrected Adam update over every parameter's current gradient.
// Moment buffers are created on the first call.
inline void adam_step(NamedParams& params, AdamState& state, double lr) {
  if (state.m.empty() && state.v.empty()) {
    for (const auto& [name, p] : params) {
      state.m.emplace_back(static_cast<std::size_t>(p.numel()), 0.0f);
      state.v.emplace_back(static_cast<std::size_t>(p.numel()), 0.0f);
    }
  }
  if (state.m.size() != params.size() || state.v.size() != params.size()) {
    raise<ShapeError>("adam: optimizer state holds ", state.m.size(), " buffers for ", params.size(), " parameters");
  }
  for (std::size_t k = 0; k < params.size(); ++k) {
    const auto& [name, p] = params[k];
    if (state.m[k].size() != static_cast<std::size_t>(p.numel()) || state.v[k].size() != static_cast<std::size_t>(p.numel())) {
      raise<ShapeError>("adam: moment buffer size mismatch for parameter '", name, "'");
    }
    if (!p.has_grad()) raise<Error>("adam: parameter '", name, "' has no gradient buffer");
    for (float g : p.grad())
      if (!std::isfinite(g)) raise<NumericError>("adam: non-finite gradient for parameter '", name, "'");
  }

  ++state.step;
  const double c1 = 1.0 - std::pow(state.beta1, static_cast<double>(state.step));
  const double c2 = 1.0 - std::pow(state.beta2, static_cast<double>(state.step));
  for (std::size_t k = 0; k < params.size(); ++k) {
    Tensor& p = params[k].second;
    auto data = p.mutable_data();
    const auto grad = p.grad();
    auto& m = state.m[k];
    auto& v = state.v[k];
    for (std::size_t i = 0; i < data.size(); ++i) {
      const double g = grad[i];
      const double mi = state.beta1 * m[i] + (1.0 - state.beta1) * g;
      const double vi = state.beta2 * v[i] + (1.0 - state.beta2) * g * g;
      m[i] = static_cast<float>(mi);
      v[i] = static_cast<float>(vi);
      const double mhat = mi / c1;
      const double vhat = vi / c2;
      data[i] = static_cast<float>(data[i] - lr * mhat / (std::sqrt(vhat) + state.epsilon));
    }
  }
}

}  // namespace msgnet
