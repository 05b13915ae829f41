#include "paraformer/grad_check.hpp"

#include <cmath>

#include "paraformer/errors.hpp"

namespace paraformer {

namespace {

double max_rel_error(const std::vector<double>& analytic, const std::vector<double>& numeric) {
  double worst = 0.0;
  for (std::size_t i = 0; i < analytic.size(); ++i) {
    const double err = std::abs(analytic[i] - numeric[i]) / (std::abs(analytic[i]) + 1e-8);
    worst = std::max(worst, err);
  }
  return worst;
}

}  // namespace

double grad_check_params(const std::function<Tensor()>& loss_fn, const std::vector<Tensor>& params,
                         double step) {
  for (const Tensor& p : params) {
    if (!p.requires_grad()) throw DomainError("grad_check_params: parameter does not require grad");
  }
  std::vector<Tensor> leaves = params;
  for (Tensor& p : leaves) p.zero_grad();
  Tensor loss = loss_fn();
  if (loss.numel() != 1) throw ShapeError("grad_check loss must be scalar");
  loss.backward();

  double worst = 0.0;
  NoGradGuard no_grad;
  for (Tensor& p : leaves) {
    const std::vector<double> analytic = p.grad();
    std::vector<double> numeric(p.numel());
    double* data = p.data();
    for (std::size_t i = 0; i < p.numel(); ++i) {
      const double saved = data[i];
      data[i] = saved + step;
      const double up = loss_fn().item();
      data[i] = saved - step;
      const double down = loss_fn().item();
      data[i] = saved;
      numeric[i] = (up - down) / (2.0 * step);
    }
    worst = std::max(worst, max_rel_error(analytic, numeric));
  }
  return worst;
}

double grad_check(const std::function<Tensor(const Tensor&)>& f, Tensor x, double step) {
  x.set_requires_grad(true);
  return grad_check_params([&] { return f(x); }, {x}, step);
}

}  // namespace paraformer
