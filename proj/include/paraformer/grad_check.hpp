#pragma once

#include <functional>
#include <vector>

#include "paraformer/tensor.hpp"

namespace paraformer {

// Central finite-difference check of reverse-mode gradients.
// Returns max over coordinates of
//   |analytic - (f(x + h e_i) - f(x - h e_i)) / 2h| / (|analytic| + 1e-8).
// f must be deterministic; x is perturbed in place and restored.
double grad_check(const std::function<Tensor(const Tensor&)>& f, Tensor x, double step = 1e-5);

// Same check over a set of leaf tensors feeding a scalar loss. loss_fn is
// re-evaluated after each coordinate perturbation.
double grad_check_params(const std::function<Tensor()>& loss_fn, const std::vector<Tensor>& params,
                         double step = 1e-5);

}  // namespace paraformer
