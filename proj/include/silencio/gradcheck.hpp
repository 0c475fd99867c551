#pragma once

#include <functional>
#include <span>
#include <vector>

#include "silencio/tensorgrad.hpp"

namespace silencio::tg {

// Builds a scalar on `tape` from leaves bound to the points being checked.
using ScalarFn = std::function<Node(Tape& tape, std::span<const Node> leaves)>;

/// Largest |analytic - central difference| / max(1, |analytic|) over every
/// coordinate of every point. Throws NumericError if any evaluation is
/// non-finite, ContractError if eps <= 0.
double grad_check(const ScalarFn& fn, const std::vector<Tensor>& points, double eps = 1e-5);

// Single-point convenience.
double grad_check(const std::function<Node(Tape&, Node)>& fn, const Tensor& point,
                  double eps = 1e-5);

}  // namespace silencio::tg
