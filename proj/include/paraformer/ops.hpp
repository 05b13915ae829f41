#pragma once

#include <string>
#include <vector>

#include "paraformer/tensor.hpp"

namespace paraformer {

// Reduction/accumulation order is fixed and part of each op's contract:
//  - matmul: out[r][c] accumulates over k in increasing order, no FMA
//    contraction (the build disables it), so a naive triple loop with the
//    same k order reproduces results bitwise.
//  - row reductions (softmax denominators, layer_norm moments, row sums):
//    left to right over the row.
//  - column reductions (bias gradients): top to bottom over rows.

// [r x k] * [k x c] -> [r x c]
Tensor matmul(const Tensor& a, const Tensor& b);

// Same-shape elementwise.
Tensor add(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);

// [r x d] plus row vector [d], applied to every row.
Tensor add_rowwise(const Tensor& x, const Tensor& bias);

Tensor scale(const Tensor& x, double s);
Tensor transpose(const Tensor& x);  // 2-D

// Row-stable softmax: per row, subtract the row max before exponentiating.
Tensor softmax_rows(const Tensor& x);

// Per-row normalization with biased (population) variance:
// out = gamma * (x - mean) / sqrt(var + eps) + beta.
Tensor layer_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta, double eps = 1e-5);

enum class Activation { Sigmoid, Gelu };
Activation activation_from_string(const std::string& name);
const char* activation_name(Activation a);

// sigmoid(x) = 1/(1+exp(-x)).
// gelu uses the tanh form: 0.5*x*(1 + tanh(sqrt(2/pi)*(x + 0.044715*x^3)))
// with sqrt(2/pi) = 0.7978845608028654.
Tensor activation(const Tensor& x, Activation kind);
double activation_scalar(double x, Activation kind);

// Sum of all entries -> scalar [1]. Row-major element order.
Tensor sum(const Tensor& x);

// Concatenate along columns: inputs share the row count.
Tensor concat_cols(const std::vector<Tensor>& parts);
// Stack a [d] vector as the first row above a [S x d] matrix.
Tensor prepend_row(const Tensor& row, const Tensor& rest);
// Extract row r of a 2-D tensor as a [1 x d] tensor.
Tensor slice_row(const Tensor& x, int r);
// Same data, new shape (copies; gradient routes through unchanged).
Tensor reshape(const Tensor& x, Shape shape);

// Mean cross-entropy of logits [B x K] (or [K]) against integer labels,
// computed via a stable log-sum-exp. Returns scalar [1].
Tensor cross_entropy(const Tensor& logits, const std::vector<int>& labels);

bool all_finite(const Tensor& x);

}  // namespace paraformer
