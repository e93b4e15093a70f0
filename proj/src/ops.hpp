#pragma once

#include <cstddef>
#include <span>
#include <vector>

#include "tape.hpp"
#include "tensor.hpp"

namespace lookwhen {

// Plain forward kernels on tensors.
Tensor matmul(const Tensor& a, const Tensor& b);
Tensor softmax(const Tensor& x);
Tensor layer_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta, double eps = 1e-6);
Tensor gelu(const Tensor& x);
Tensor transpose(const Tensor& x);

// Standard normal CDF, x * Phi(x) is GELU.
double normal_cdf(double x);

// Recorded ops. Every op below has a hand-written backward.

// [m x k] * [k x n]; dA = dC * B^T, dB = A^T * dC.
Var matmul(Var a, Var b);
Var add(Var a, Var b);
Var sub(Var a, Var b);
// x[... x n] + b[n], broadcast over leading axes.
Var add_bias(Var x, Var b);
Var scale(Var x, double c);
Var gelu(Var x);
// Over the last axis, max-subtracted.
Var softmax(Var x);
Var layer_norm(Var x, Var gamma, Var beta, double eps = 1e-6);
Var transpose(Var x);
Var reshape(Var x, Shape shape);

// out.flat[i] = x.flat[src[i]]; backward scatter-adds.
Var gather(Var x, Shape out_shape, std::vector<std::size_t> src);
// Rows of a 2-D tensor, repeats allowed.
Var gather_rows(Var x, std::span<const std::size_t> rows);
Var slice_rows(Var x, std::size_t begin, std::size_t end);
Var slice_cols(Var x, std::size_t begin, std::size_t end);
Var concat_rows(std::span<const Var> parts);
Var concat_cols(std::span<const Var> parts);

// Mean squared error over all elements, scalar output.
Var mse(Var a, Var b);
// Mean over elements of the numerically stable binary cross-entropy with
// logits x and soft targets y in [0, 1].
Var bce_with_logits(Var logits, const Tensor& target);

// Mean over rows of -log softmax(logits)[label], logits [n x C].
Var softmax_cross_entropy(Var logits, std::span<const int> labels);

}  // namespace lookwhen
