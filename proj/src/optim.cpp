#include "silencio/optim.hpp"

#include <cmath>

#include <fmt/format.h>

#include "silencio/errors.hpp"

namespace silencio::tg {
namespace {

void check_shapes(std::span<const Tensor> params, std::span<const Tensor> grads) {
  if (params.size() != grads.size()) {
    throw DimensionError(fmt::format("optimizer: {} parameters but {} gradients", params.size(),
                                     grads.size()));
  }
  for (std::size_t i = 0; i < params.size(); ++i) {
    if (!params[i].same_shape(grads[i])) {
      throw DimensionError(fmt::format("optimizer: parameter {} is {} but gradient is {}", i,
                                       params[i].shape_string(), grads[i].shape_string()));
    }
  }
}

}  // namespace

OptState make_opt_state(std::span<const Tensor> params) {
  OptState state;
  for (const Tensor& p : params) {
    state.first_moment.emplace_back(p.rows(), p.cols());
    state.second_moment.emplace_back(p.rows(), p.cols());
  }
  return state;
}

void optimizer_step(std::span<Tensor> params, std::span<const Tensor> grads, OptState& state,
                    double lr, const AdamConfig& cfg) {
  if (!(lr > 0.0)) throw ContractError(fmt::format("optimizer: lr must be > 0, got {}", lr));
  check_shapes(params, grads);
  check_shapes(params, state.first_moment);
  check_shapes(params, state.second_moment);

  ++state.step;
  const double t = static_cast<double>(state.step);
  const double correction1 = 1.0 - std::pow(cfg.beta1, t);
  const double correction2 = 1.0 - std::pow(cfg.beta2, t);
  for (std::size_t i = 0; i < params.size(); ++i) {
    Tensor& p = params[i];
    Tensor& m = state.first_moment[i];
    Tensor& v = state.second_moment[i];
    const Tensor& g = grads[i];
    for (std::size_t j = 0; j < p.size(); ++j) {
      m[j] = cfg.beta1 * m[j] + (1.0 - cfg.beta1) * g[j];
      v[j] = cfg.beta2 * v[j] + (1.0 - cfg.beta2) * g[j] * g[j];
      const double m_hat = m[j] / correction1;
      const double v_hat = v[j] / correction2;
      p[j] -= lr * m_hat / (std::sqrt(v_hat) + cfg.eps);
    }
  }
}

void sgd_step(std::span<Tensor> params, std::span<const Tensor> grads, double lr) {
  if (!(lr > 0.0)) throw ContractError(fmt::format("sgd: lr must be > 0, got {}", lr));
  check_shapes(params, grads);
  for (std::size_t i = 0; i < params.size(); ++i)
    for (std::size_t j = 0; j < params[i].size(); ++j) params[i][j] -= lr * grads[i][j];
}

}  // namespace silencio::tg
