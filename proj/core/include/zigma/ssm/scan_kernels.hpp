#pragma once

#include <cstddef>
#include <span>

#include "zigma/diffkit/tensor.hpp"

namespace zigma::ssm {

enum class ScanMode { sequential, parallel };

// First-order linear recurrence h[k] = a[k] * h[k-1] + b[k], h[-1] = 0, over
// `lanes` interleaved lanes: element k of lane j lives at k * lanes + j.
void recurrence_sequential(std::span<const double> a, std::span<const double> b, std::span<double> h,
                           std::size_t lanes = 1);

// Same recurrence as an exclusive up-sweep/down-sweep prefix scan under the
// associative operator (a1, b1) o (a2, b2) = (a1 a2, a2 b1 + b2). The tree
// shape depends only on the length, so results are reproducible.
void recurrence_parallel(std::span<const double> a, std::span<const double> b, std::span<double> h,
                         std::size_t lanes = 1);

// Selective scan with zero-order-hold transition and first-order input:
//   abar = exp(delta[b,k,c] * A[c,n]),  bbar = delta[b,k,c] * Bm[b,k,n]
//   h[b,k,c,n] = abar * h[b,k-1,c,n] + bbar * u[b,k,c]
//   y[b,k,c]   = sum_n Cm[b,k,n] * h[b,k,c,n] + D[c] * u[b,k,c]
// Shapes: u, delta [B,L,C]; A [C,N]; Bm, Cm [B,L,N]; D [C]. Differentiable in
// every input; the backward pass runs the adjoint recurrence in reverse.
diffkit::Tensor selective_scan(const diffkit::Tensor& u, const diffkit::Tensor& delta, const diffkit::Tensor& A,
                               const diffkit::Tensor& Bm, const diffkit::Tensor& Cm, const diffkit::Tensor& D,
                               ScanMode mode = ScanMode::parallel);

}  // namespace zigma::ssm
