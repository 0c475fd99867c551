#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "silencio/tensor.hpp"

namespace silencio::tg {

struct AdamConfig {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

/// Adam moment accumulators for one ordered list of parameters.
struct OptState {
  std::vector<Tensor> first_moment;
  std::vector<Tensor> second_moment;
  std::int64_t step = 0;
};

// Zero-initialized state matching `params`.
OptState make_opt_state(std::span<const Tensor> params);

// One Adam step in place. Throws DimensionError when params, grads and state
// disagree in count or shape, ContractError when lr <= 0.
void optimizer_step(std::span<Tensor> params, std::span<const Tensor> grads, OptState& state,
                    double lr, const AdamConfig& cfg = {});

// Plain gradient descent: p -= lr * g.
void sgd_step(std::span<Tensor> params, std::span<const Tensor> grads, double lr);

}  // namespace silencio::tg
