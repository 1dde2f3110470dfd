#pragma once

#include <cstddef>
#include <optional>
#include <span>

#include "zigma/diffkit/tensor.hpp"

// Differentiable operations. Binary elementwise ops accept equal shapes or a
// single-element operand (treated as a scalar); anything else is a ShapeError.
namespace zigma::diffkit {

enum class Elementwise { add, sub, mul, neg, exp, tanh, sigmoid, silu, softplus, gelu, square };

Tensor elementwise(Elementwise op, const Tensor& a, const std::optional<Tensor>& b = std::nullopt);

Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor neg(const Tensor& a);
Tensor exp(const Tensor& a);
Tensor tanh(const Tensor& a);
Tensor sigmoid(const Tensor& a);
Tensor silu(const Tensor& a);
Tensor softplus(const Tensor& a);
// tanh approximation: 0.5 x (1 + tanh(sqrt(2/pi) (x + 0.044715 x^3)))
Tensor gelu(const Tensor& a);
Tensor square(const Tensor& a);
Tensor scale(const Tensor& a, double factor);
Tensor add_scalar(const Tensor& a, double value);

inline Tensor operator+(const Tensor& a, const Tensor& b) { return add(a, b); }
inline Tensor operator-(const Tensor& a, const Tensor& b) { return sub(a, b); }
inline Tensor operator*(const Tensor& a, const Tensor& b) { return mul(a, b); }
inline Tensor operator-(const Tensor& a) { return neg(a); }
inline Tensor operator*(const Tensor& a, double s) { return scale(a, s); }
inline Tensor operator*(double s, const Tensor& a) { return scale(a, s); }

Tensor sum(const Tensor& a);
Tensor mean(const Tensor& a);
Tensor mse(const Tensor& prediction, const Tensor& target);

Tensor matmul(const Tensor& a, const Tensor& b);           // [m,k] x [k,n]
Tensor batched_matmul(const Tensor& a, const Tensor& b);   // [B,m,k] x [B,k,n]
Tensor transpose(const Tensor& a);                         // [m,n] -> [n,m]
Tensor batched_transpose(const Tensor& a);                 // [B,m,n] -> [B,n,m]

Tensor reshape(const Tensor& a, Shape shape);
// x[..., in] W[in, out] (+ bias[out])
Tensor linear(const Tensor& x, const Tensor& weight, const std::optional<Tensor>& bias = std::nullopt);
Tensor add_bias(const Tensor& x, const Tensor& bias);
// x[B, ...] + shared[...], the same addend for every leading index.
Tensor add_batch_shared(const Tensor& x, const Tensor& shared);

// Last-axis slice [start, start + length).
Tensor slice_last(const Tensor& x, std::size_t start, std::size_t length);

// Sequence-axis ops on [B, L, C] tensors.
Tensor gather_seq(const Tensor& x, std::span<const std::size_t> order);  // out[b,k] = x[b, order[k]]
Tensor flip_seq(const Tensor& x);
Tensor concat_seq(const Tensor& a, const Tensor& b);
Tensor slice_seq(const Tensor& x, std::size_t start, std::size_t length);
Tensor mean_seq(const Tensor& x);  // [B, L, C] -> [B, C]
// x[B, L, C] * scale[B, C] + shift[B, C]
Tensor modulate(const Tensor& x, const Tensor& scale, const Tensor& shift);

// Normalises the last axis with biased variance; gamma/beta are optional.
Tensor layer_norm(const Tensor& x, const std::optional<Tensor>& gamma, const std::optional<Tensor>& beta,
                  double eps = 1e-5);
Tensor softmax_last(const Tensor& x);

// x[B, L, C], weight[C, K], bias[C]; output position l sees inputs l-K+1..l.
Tensor depthwise_causal_conv1d(const Tensor& x, const Tensor& weight, const Tensor& bias);

// Rows of table[V, d] selected by ids -> [ids.size(), d].
Tensor embedding(const Tensor& table, std::span<const std::size_t> ids);

// out[b, ...] = factors[b] * x[b, ...]
Tensor scale_batch(const Tensor& x, std::span<const double> factors);

// out.flat[i] = x.flat[indices[i]] reshaped to `shape`; repeated indices
// accumulate in the backward pass.
Tensor gather_flat(const Tensor& x, Shape shape, std::span<const std::size_t> indices);

// [B, L, H*E] <-> [B*H, L, E]
Tensor split_heads(const Tensor& x, std::size_t heads);
Tensor merge_heads(const Tensor& x, std::size_t heads);

}  // namespace zigma::diffkit
