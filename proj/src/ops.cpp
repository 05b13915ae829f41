#include "paraformer/ops.hpp"

#include <cmath>
#include <cstring>

#include "paraformer/errors.hpp"

namespace paraformer {

namespace {

void require_rank2(const Tensor& t, const char* who) {
  if (t.rank() != 2) {
    throw ShapeError(std::string(who) + " expects a 2-D tensor, got " + shape_to_string(t.shape()));
  }
}

// C[r x c] += A[r x k] * B[k x c], accumulation over k in increasing order.
// i-k-j loop order: each C[i][j] still receives its k-terms in sequence, so
// this matches the naive i-j-k triple loop bitwise while staying cache
// friendly on row-major data.
void matmul_accumulate(const double* a, const double* b, double* c, int r, int k, int cc) {
  for (int i = 0; i < r; ++i) {
    const double* arow = a + static_cast<std::size_t>(i) * k;
    double* crow = c + static_cast<std::size_t>(i) * cc;
    for (int kk = 0; kk < k; ++kk) {
      const double av = arow[kk];
      const double* brow = b + static_cast<std::size_t>(kk) * cc;
      for (int j = 0; j < cc; ++j) crow[j] += av * brow[j];
    }
  }
}

}  // namespace

Tensor matmul(const Tensor& a, const Tensor& b) {
  require_rank2(a, "matmul");
  require_rank2(b, "matmul");
  if (a.dim(1) != b.dim(0)) {
    throw ShapeError("matmul inner dimensions disagree: " + shape_to_string(a.shape()) +
                     " vs " + shape_to_string(b.shape()));
  }
  const int r = a.dim(0), k = a.dim(1), c = b.dim(1);
  std::vector<double> out(static_cast<std::size_t>(r) * c, 0.0);
  matmul_accumulate(a.data(), b.data(), out.data(), r, k, c);

  Tensor at = a, bt = b;
  return detail::make_result(
      {r, c}, std::move(out), "matmul", {a, b}, [at, bt, r, k, c](detail::TensorNode& node) mutable {
        const double* g = node.grad.data();
        if (at.requires_grad()) {
          // dA = dC * B^T
          std::vector<double> da(static_cast<std::size_t>(r) * k, 0.0);
          const double* bd = bt.data();
          for (int i = 0; i < r; ++i) {
            const double* grow = g + static_cast<std::size_t>(i) * c;
            double* darow = da.data() + static_cast<std::size_t>(i) * k;
            for (int kk = 0; kk < k; ++kk) {
              const double* brow = bd + static_cast<std::size_t>(kk) * c;
              double acc = 0.0;
              for (int j = 0; j < c; ++j) acc += grow[j] * brow[j];
              darow[kk] = acc;
            }
          }
          at.node()->accumulate(da.data(), da.size());
        }
        if (bt.requires_grad()) {
          // dB = A^T * dC
          std::vector<double> db(static_cast<std::size_t>(k) * c, 0.0);
          const double* ad = at.data();
          for (int kk = 0; kk < k; ++kk)
            for (int i = 0; i < r; ++i) {
              const double av = ad[static_cast<std::size_t>(i) * k + kk];
              for (int j = 0; j < c; ++j)
                db[static_cast<std::size_t>(kk) * c + j] += av * g[static_cast<std::size_t>(i) * c + j];
            }
          bt.node()->accumulate(db.data(), db.size());
        }
      });
}

Tensor add(const Tensor& a, const Tensor& b) {
  if (a.shape() != b.shape()) {
    throw ShapeError("add shape mismatch: " + shape_to_string(a.shape()) + " vs " +
                     shape_to_string(b.shape()));
  }
  std::vector<double> out(a.numel());
  const double* ad = a.data();
  const double* bd = b.data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = ad[i] + bd[i];
  Tensor at = a, bt = b;
  return detail::make_result(a.shape(), std::move(out), "add", {a, b},
                             [at, bt](detail::TensorNode& node) mutable {
                               if (at.requires_grad()) at.node()->accumulate(node.grad.data(), node.grad.size());
                               if (bt.requires_grad()) bt.node()->accumulate(node.grad.data(), node.grad.size());
                             });
}

Tensor mul(const Tensor& a, const Tensor& b) {
  if (a.shape() != b.shape()) {
    throw ShapeError("mul shape mismatch: " + shape_to_string(a.shape()) + " vs " +
                     shape_to_string(b.shape()));
  }
  std::vector<double> out(a.numel());
  const double* ad = a.data();
  const double* bd = b.data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = ad[i] * bd[i];
  Tensor at = a, bt = b;
  return detail::make_result(a.shape(), std::move(out), "mul", {a, b},
                             [at, bt](detail::TensorNode& node) mutable {
                               const double* g = node.grad.data();
                               if (at.requires_grad()) {
                                 std::vector<double> da(at.numel());
                                 const double* bv = bt.data();
                                 for (std::size_t i = 0; i < da.size(); ++i) da[i] = g[i] * bv[i];
                                 at.node()->accumulate(da.data(), da.size());
                               }
                               if (bt.requires_grad()) {
                                 std::vector<double> db(bt.numel());
                                 const double* av = at.data();
                                 for (std::size_t i = 0; i < db.size(); ++i) db[i] = g[i] * av[i];
                                 bt.node()->accumulate(db.data(), db.size());
                               }
                             });
}

Tensor add_rowwise(const Tensor& x, const Tensor& bias) {
  require_rank2(x, "add_rowwise");
  if (bias.rank() != 1 || bias.dim(0) != x.dim(1)) {
    throw ShapeError("add_rowwise bias shape " + shape_to_string(bias.shape()) +
                     " does not match row width of " + shape_to_string(x.shape()));
  }
  const int r = x.dim(0), d = x.dim(1);
  std::vector<double> out(x.numel());
  const double* xd = x.data();
  const double* bd = bias.data();
  for (int i = 0; i < r; ++i)
    for (int j = 0; j < d; ++j)
      out[static_cast<std::size_t>(i) * d + j] = xd[static_cast<std::size_t>(i) * d + j] + bd[j];
  Tensor xt = x, bt = bias;
  return detail::make_result(x.shape(), std::move(out), "add_rowwise", {x, bias},
                             [xt, bt, r, d](detail::TensorNode& node) mutable {
                               const double* g = node.grad.data();
                               if (xt.requires_grad()) xt.node()->accumulate(g, node.grad.size());
                               if (bt.requires_grad()) {
                                 // column sums, rows visited top to bottom
                                 std::vector<double> db(static_cast<std::size_t>(d), 0.0);
                                 for (int i = 0; i < r; ++i)
                                   for (int j = 0; j < d; ++j) db[j] += g[static_cast<std::size_t>(i) * d + j];
                                 bt.node()->accumulate(db.data(), db.size());
                               }
                             });
}

Tensor scale(const Tensor& x, double s) {
  std::vector<double> out(x.numel());
  const double* xd = x.data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = xd[i] * s;
  Tensor xt = x;
  return detail::make_result(x.shape(), std::move(out), "scale", {x},
                             [xt, s](detail::TensorNode& node) mutable {
                               if (!xt.requires_grad()) return;
                               std::vector<double> dx(xt.numel());
                               for (std::size_t i = 0; i < dx.size(); ++i) dx[i] = node.grad[i] * s;
                               xt.node()->accumulate(dx.data(), dx.size());
                             });
}

Tensor transpose(const Tensor& x) {
  require_rank2(x, "transpose");
  const int r = x.dim(0), c = x.dim(1);
  std::vector<double> out(x.numel());
  const double* xd = x.data();
  for (int i = 0; i < r; ++i)
    for (int j = 0; j < c; ++j)
      out[static_cast<std::size_t>(j) * r + i] = xd[static_cast<std::size_t>(i) * c + j];
  Tensor xt = x;
  return detail::make_result({c, r}, std::move(out), "transpose", {x},
                             [xt, r, c](detail::TensorNode& node) mutable {
                               if (!xt.requires_grad()) return;
                               std::vector<double> dx(xt.numel());
                               const double* g = node.grad.data();
                               for (int j = 0; j < c; ++j)
                                 for (int i = 0; i < r; ++i)
                                   dx[static_cast<std::size_t>(i) * c + j] = g[static_cast<std::size_t>(j) * r + i];
                               xt.node()->accumulate(dx.data(), dx.size());
                             });
}

Tensor softmax_rows(const Tensor& x) {
  require_rank2(x, "softmax_rows");
  const int r = x.dim(0), c = x.dim(1);
  std::vector<double> out(x.numel());
  const double* xd = x.data();
  for (int i = 0; i < r; ++i) {
    const double* row = xd + static_cast<std::size_t>(i) * c;
    double* orow = out.data() + static_cast<std::size_t>(i) * c;
    double m = row[0];
    for (int j = 1; j < c; ++j) m = std::max(m, row[j]);
    double denom = 0.0;
    for (int j = 0; j < c; ++j) {
      orow[j] = std::exp(row[j] - m);
      denom += orow[j];
    }
    for (int j = 0; j < c; ++j) orow[j] /= denom;
  }
  Tensor xt = x;
  std::vector<double> yvals = out;
  return detail::make_result(x.shape(), std::move(out), "softmax_rows", {x},
                             [xt, yvals = std::move(yvals), r, c](detail::TensorNode& node) mutable {
                               if (!xt.requires_grad()) return;
                               std::vector<double> dx(xt.numel());
                               const double* g = node.grad.data();
                               for (int i = 0; i < r; ++i) {
                                 const double* yrow = yvals.data() + static_cast<std::size_t>(i) * c;
                                 const double* grow = g + static_cast<std::size_t>(i) * c;
                                 double dot = 0.0;
                                 for (int j = 0; j < c; ++j) dot += grow[j] * yrow[j];
                                 double* drow = dx.data() + static_cast<std::size_t>(i) * c;
                                 for (int j = 0; j < c; ++j) drow[j] = yrow[j] * (grow[j] - dot);
                               }
                               xt.node()->accumulate(dx.data(), dx.size());
                             });
}

Tensor layer_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta, double eps) {
  require_rank2(x, "layer_norm");
  const int r = x.dim(0), d = x.dim(1);
  if (gamma.rank() != 1 || gamma.dim(0) != d || beta.rank() != 1 || beta.dim(0) != d) {
    throw ShapeError("layer_norm gamma/beta must be [" + std::to_string(d) + "], got " +
                     shape_to_string(gamma.shape()) + " and " + shape_to_string(beta.shape()));
  }
  std::vector<double> out(x.numel());
  std::vector<double> xhat(x.numel());
  std::vector<double> inv_sigma(static_cast<std::size_t>(r));
  const double* xd = x.data();
  const double* gd = gamma.data();
  const double* bd = beta.data();
  for (int i = 0; i < r; ++i) {
    const double* row = xd + static_cast<std::size_t>(i) * d;
    double mean = 0.0;
    for (int j = 0; j < d; ++j) mean += row[j];
    mean /= d;
    double var = 0.0;
    for (int j = 0; j < d; ++j) {
      const double t = row[j] - mean;
      var += t * t;
    }
    var /= d;
    const double inv = 1.0 / std::sqrt(var + eps);
    inv_sigma[static_cast<std::size_t>(i)] = inv;
    for (int j = 0; j < d; ++j) {
      const double xh = (row[j] - mean) * inv;
      xhat[static_cast<std::size_t>(i) * d + j] = xh;
      out[static_cast<std::size_t>(i) * d + j] = gd[j] * xh + bd[j];
    }
  }
  Tensor xt = x, gt = gamma, bt = beta;
  return detail::make_result(
      x.shape(), std::move(out), "layer_norm", {x, gamma, beta},
      [xt, gt, bt, xhat = std::move(xhat), inv_sigma = std::move(inv_sigma), r,
       d](detail::TensorNode& node) mutable {
        const double* g = node.grad.data();
        const double* gd = gt.data();
        if (gt.requires_grad()) {
          std::vector<double> dgamma(static_cast<std::size_t>(d), 0.0);
          for (int i = 0; i < r; ++i)
            for (int j = 0; j < d; ++j)
              dgamma[j] += g[static_cast<std::size_t>(i) * d + j] * xhat[static_cast<std::size_t>(i) * d + j];
          gt.node()->accumulate(dgamma.data(), dgamma.size());
        }
        if (bt.requires_grad()) {
          std::vector<double> dbeta(static_cast<std::size_t>(d), 0.0);
          for (int i = 0; i < r; ++i)
            for (int j = 0; j < d; ++j) dbeta[j] += g[static_cast<std::size_t>(i) * d + j];
          bt.node()->accumulate(dbeta.data(), dbeta.size());
        }
        if (xt.requires_grad()) {
          std::vector<double> dx(xt.numel());
          for (int i = 0; i < r; ++i) {
            const double* grow = g + static_cast<std::size_t>(i) * d;
            const double* xrow = xhat.data() + static_cast<std::size_t>(i) * d;
            double mean_gy = 0.0, mean_gyx = 0.0;
            for (int j = 0; j < d; ++j) {
              const double gy = grow[j] * gd[j];
              mean_gy += gy;
              mean_gyx += gy * xrow[j];
            }
            mean_gy /= d;
            mean_gyx /= d;
            const double inv = inv_sigma[static_cast<std::size_t>(i)];
            for (int j = 0; j < d; ++j) {
              const double gy = grow[j] * gd[j];
              dx[static_cast<std::size_t>(i) * d + j] = (gy - mean_gy - xrow[j] * mean_gyx) * inv;
            }
          }
          xt.node()->accumulate(dx.data(), dx.size());
        }
      });
}

Activation activation_from_string(const std::string& name) {
  if (name == "sigmoid") return Activation::Sigmoid;
  if (name == "gelu") return Activation::Gelu;
  throw ConfigError("unknown activation kind '" + name + "' (expected sigmoid or gelu)");
}

const char* activation_name(Activation a) {
  return a == Activation::Sigmoid ? "sigmoid" : "gelu";
}

namespace {
constexpr double kGeluC = 0.7978845608028654;  // sqrt(2/pi)
constexpr double kGeluA = 0.044715;

double sigmoid_scalar(double x) { return 1.0 / (1.0 + std::exp(-x)); }

double gelu_scalar(double x) {
  return 0.5 * x * (1.0 + std::tanh(kGeluC * (x + kGeluA * x * x * x)));
}

double gelu_derivative(double x) {
  const double u = kGeluC * (x + kGeluA * x * x * x);
  const double t = std::tanh(u);
  const double sech2 = 1.0 - t * t;
  return 0.5 * (1.0 + t) + 0.5 * x * sech2 * kGeluC * (1.0 + 3.0 * kGeluA * x * x);
}
}  // namespace

double activation_scalar(double x, Activation kind) {
  return kind == Activation::Sigmoid ? sigmoid_scalar(x) : gelu_scalar(x);
}

Tensor activation(const Tensor& x, Activation kind) {
  std::vector<double> out(x.numel());
  const double* xd = x.data();
  if (kind == Activation::Sigmoid) {
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = sigmoid_scalar(xd[i]);
  } else {
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = gelu_scalar(xd[i]);
  }
  Tensor xt = x;
  std::vector<double> yvals = out;
  return detail::make_result(x.shape(), std::move(out), "activation", {x},
                             [xt, kind, yvals = std::move(yvals)](detail::TensorNode& node) mutable {
                               if (!xt.requires_grad()) return;
                               std::vector<double> dx(xt.numel());
                               const double* g = node.grad.data();
                               const double* xd = xt.data();
                               if (kind == Activation::Sigmoid) {
                                 for (std::size_t i = 0; i < dx.size(); ++i) {
                                   const double s = yvals[i];
                                   dx[i] = g[i] * s * (1.0 - s);
                                 }
                               } else {
                                 for (std::size_t i = 0; i < dx.size(); ++i)
                                   dx[i] = g[i] * gelu_derivative(xd[i]);
                               }
                               xt.node()->accumulate(dx.data(), dx.size());
                             });
}

Tensor sum(const Tensor& x) {
  double total = 0.0;
  const double* xd = x.data();
  for (std::size_t i = 0; i < x.numel(); ++i) total += xd[i];
  Tensor xt = x;
  return detail::make_result({1}, {total}, "sum", {x}, [xt](detail::TensorNode& node) mutable {
    if (!xt.requires_grad()) return;
    std::vector<double> dx(xt.numel(), node.grad[0]);
    xt.node()->accumulate(dx.data(), dx.size());
  });
}

Tensor concat_cols(const std::vector<Tensor>& parts) {
  if (parts.empty()) throw ShapeError("concat_cols needs at least one input");
  const int r = parts[0].dim(0);
  int total = 0;
  for (const Tensor& p : parts) {
    if (p.rank() != 2 || p.dim(0) != r) {
      throw ShapeError("concat_cols row mismatch: " + shape_to_string(parts[0].shape()) + " vs " +
                       shape_to_string(p.shape()));
    }
    total += p.dim(1);
  }
  std::vector<double> out(static_cast<std::size_t>(r) * total);
  int col = 0;
  for (const Tensor& p : parts) {
    const int c = p.dim(1);
    const double* pd = p.data();
    for (int i = 0; i < r; ++i)
      std::memcpy(out.data() + static_cast<std::size_t>(i) * total + col,
                  pd + static_cast<std::size_t>(i) * c, sizeof(double) * c);
    col += c;
  }
  std::vector<Tensor> inputs = parts;
  return detail::make_result({r, total}, std::move(out), "concat_cols", parts,
                             [inputs, r, total](detail::TensorNode& node) mutable {
                               const double* g = node.grad.data();
                               int col = 0;
                               for (Tensor& p : inputs) {
                                 const int c = p.dim(1);
                                 if (p.requires_grad()) {
                                   std::vector<double> dp(p.numel());
                                   for (int i = 0; i < r; ++i)
                                     std::memcpy(dp.data() + static_cast<std::size_t>(i) * c,
                                                 g + static_cast<std::size_t>(i) * total + col,
                                                 sizeof(double) * c);
                                   p.node()->accumulate(dp.data(), dp.size());
                                 }
                                 col += c;
                               }
                             });
}

Tensor prepend_row(const Tensor& row, const Tensor& rest) {
  if (row.rank() != 1 || rest.rank() != 2 || row.dim(0) != rest.dim(1)) {
    throw ShapeError("prepend_row expects [d] and [S x d], got " + shape_to_string(row.shape()) +
                     " and " + shape_to_string(rest.shape()));
  }
  const int s = rest.dim(0), d = rest.dim(1);
  std::vector<double> out(static_cast<std::size_t>(s + 1) * d);
  std::memcpy(out.data(), row.data(), sizeof(double) * d);
  std::memcpy(out.data() + d, rest.data(), sizeof(double) * rest.numel());
  Tensor rt = row, xt = rest;
  return detail::make_result({s + 1, d}, std::move(out), "prepend_row", {row, rest},
                             [rt, xt, d](detail::TensorNode& node) mutable {
                               const double* g = node.grad.data();
                               if (rt.requires_grad()) rt.node()->accumulate(g, static_cast<std::size_t>(d));
                               if (xt.requires_grad()) xt.node()->accumulate(g + d, xt.numel());
                             });
}

Tensor slice_row(const Tensor& x, int r) {
  require_rank2(x, "slice_row");
  if (r < 0 || r >= x.dim(0)) {
    throw ShapeError("slice_row index " + std::to_string(r) + " out of range for " +
                     shape_to_string(x.shape()));
  }
  const int d = x.dim(1);
  std::vector<double> out(static_cast<std::size_t>(d));
  std::memcpy(out.data(), x.data() + static_cast<std::size_t>(r) * d, sizeof(double) * d);
  Tensor xt = x;
  return detail::make_result({1, d}, std::move(out), "slice_row", {x},
                             [xt, r, d](detail::TensorNode& node) mutable {
                               if (!xt.requires_grad()) return;
                               std::vector<double> dx(xt.numel(), 0.0);
                               std::memcpy(dx.data() + static_cast<std::size_t>(r) * d, node.grad.data(),
                                           sizeof(double) * d);
                               xt.node()->accumulate(dx.data(), dx.size());
                             });
}

Tensor reshape(const Tensor& x, Shape shape) {
  if (shape_numel(shape) != x.numel()) {
    throw ShapeError("reshape from " + shape_to_string(x.shape()) + " to " + shape_to_string(shape) +
                     " changes element count");
  }
  Tensor xt = x;
  return detail::make_result(std::move(shape), x.values(), "reshape", {x},
                             [xt](detail::TensorNode& node) mutable {
                               if (xt.requires_grad()) xt.node()->accumulate(node.grad.data(), node.grad.size());
                             });
}

Tensor cross_entropy(const Tensor& logits, const std::vector<int>& labels) {
  Tensor l2 = logits.rank() == 1 ? reshape(logits, {1, logits.dim(0)}) : logits;
  require_rank2(l2, "cross_entropy");
  const int b = l2.dim(0), k = l2.dim(1);
  if (static_cast<int>(labels.size()) != b) {
    throw ShapeError("cross_entropy got " + std::to_string(labels.size()) + " labels for batch of " +
                     std::to_string(b));
  }
  for (int i = 0; i < b; ++i) {
    if (labels[i] < 0 || labels[i] >= k) {
      throw DomainError("cross_entropy label " + std::to_string(labels[i]) + " out of range [0, " +
                        std::to_string(k) + ")");
    }
  }
  const double* xd = l2.data();
  std::vector<double> probs(l2.numel());
  double loss = 0.0;
  for (int i = 0; i < b; ++i) {
    const double* row = xd + static_cast<std::size_t>(i) * k;
    double m = row[0];
    for (int j = 1; j < k; ++j) m = std::max(m, row[j]);
    double denom = 0.0;
    for (int j = 0; j < k; ++j) {
      const double e = std::exp(row[j] - m);
      probs[static_cast<std::size_t>(i) * k + j] = e;
      denom += e;
    }
    for (int j = 0; j < k; ++j) probs[static_cast<std::size_t>(i) * k + j] /= denom;
    loss += (m + std::log(denom)) - row[labels[i]];
  }
  loss /= b;
  Tensor lt = l2;
  return detail::make_result({1}, {loss}, "cross_entropy", {l2},
                             [lt, labels, probs = std::move(probs), b, k](detail::TensorNode& node) mutable {
                               if (!lt.requires_grad()) return;
                               std::vector<double> dx(lt.numel());
                               const double g = node.grad[0] / b;
                               for (int i = 0; i < b; ++i) {
                                 for (int j = 0; j < k; ++j)
                                   dx[static_cast<std::size_t>(i) * k + j] =
                                       g * probs[static_cast<std::size_t>(i) * k + j];
                                 dx[static_cast<std::size_t>(i) * k + labels[i]] -= g;
                               }
                               lt.node()->accumulate(dx.data(), dx.size());
                             });
}

bool all_finite(const Tensor& x) {
  const double* xd = x.data();
  for (std::size_t i = 0; i < x.numel(); ++i)
    if (!std::isfinite(xd[i])) return false;
  return true;
}

}  // namespace paraformer
