#pragma once

#include <cstddef>
#include <string>

#include "zigma/diffkit/params.hpp"
#include "zigma/diffkit/tensor.hpp"

namespace zigma::model {

// Multi-head softmax attention with queries from x [B, M, d] and keys/values
// from context [B, K, d]. Self-attention is forward(x, x).
class MultiHeadAttention {
 public:
  MultiHeadAttention(const std::string& prefix, std::size_t d, std::size_t heads, diffkit::ParameterStore& store,
                     diffkit::Rng& rng);

  diffkit::Tensor forward(const diffkit::Tensor& x, const diffkit::Tensor& context) const;

  // Softmax weights [B * heads, M, K].
  diffkit::Tensor weights(const diffkit::Tensor& x, const diffkit::Tensor& context) const;

  static std::size_t param_count(std::size_t d) { return 4 * d * d + 4 * d; }
  std::size_t heads() const { return heads_; }

  diffkit::Tensor wq, bq, wk, bk, wv, bv, wo, bo;

 private:
  std::size_t d_, heads_;
};

// Attention core on split heads: q [G, M, e], k/v [G, K, e] -> [G, M, e].
// Without gradient tracking, large problems are evaluated in query blocks so
// the full M x K score matrix is never materialised.
diffkit::Tensor scaled_dot_product_attention(const diffkit::Tensor& q, const diffkit::Tensor& k,
                                             const diffkit::Tensor& v);

}  // namespace zigma::model
