#pragma once

#include <functional>

#include "ftz/tensor.hpp"

namespace ftz {

// Central-difference check of the tape gradient of a scalar-valued forward
// pass with respect to one tensor. Returns the max relative error with
// denominator max(|analytic|, |numeric|, 1e-8). Requires 64-bit mode;
// finite differences are unreliable at single precision.
//
// The forward callable must rebuild the graph from current tensor contents
// on every invocation; `x` is perturbed in place between calls.
double gradcheck(const std::function<Tensor()>& forward, Tensor x, double h = 1e-5);

}  // namespace ftz
