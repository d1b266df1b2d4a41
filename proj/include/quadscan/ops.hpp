#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "quadscan/tensor.hpp"

namespace quadscan::ops {

// Matrix product of a[m x k] and b[k x n].
Tensor matmul(const Tensor& a, const Tensor& b);

// x[m x k] * w[k x n] (+ bias[n]).
Tensor linear(const Tensor& x, const Tensor& w, const Tensor& bias = {});

// Binary elementwise ops. b may have the same shape as a, or a shape equal to
// a trailing suffix of a's shape, in which case it is repeated over the
// leading dimensions. Nothing else broadcasts.
Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);

Tensor scale(const Tensor& a, double s);

Tensor exp(const Tensor& a);
Tensor abs(const Tensor& a);
Tensor softplus(const Tensor& a);
Tensor sigmoid(const Tensor& a);
Tensor silu(const Tensor& a);

// Normalizes each row over the last dimension, then applies gamma/beta.
Tensor layernorm(const Tensor& x, const Tensor& gamma, const Tensor& beta, double eps = 1e-6);

// Softmax over the last dimension.
Tensor softmax(const Tensor& x);

Tensor sum(const Tensor& a);
Tensor mean(const Tensor& a);

Tensor reshape(const Tensor& a, Shape shape);

// out row i = x row index[i]; index -1 yields a zero row.
Tensor gather_rows(const Tensor& x, std::span<const std::int64_t> index);

Tensor concat_rows(std::span<const Tensor> parts);
Tensor slice_rows(const Tensor& x, std::size_t begin, std::size_t count);

// Multi-head softmax attention applied independently to each contiguous
// block of group_len rows. q, k, v are [rows x C] with C divisible by heads.
Tensor grouped_attention(const Tensor& q, const Tensor& k, const Tensor& v,
                         std::size_t group_len, std::size_t heads);

}  // namespace quadscan::ops
