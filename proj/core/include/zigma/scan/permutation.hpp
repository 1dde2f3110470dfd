#pragma once

#include <cstddef>
#include <span>
#include <stdexcept>
#include <vector>

#include "zigma/diffkit/tensor.hpp"

namespace zigma::scan {

using Index = std::size_t;

class NotBijectiveError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

// A bijection on [0, M) stored as a dense index array together with its
// inverse, so that inverse_order()[order()[k]] == k.
class Permutation {
 public:
  Permutation() = default;
  explicit Permutation(std::vector<Index> order);

  static Permutation identity(std::size_t size);
  static Permutation random(std::size_t size, diffkit::Rng& rng);

  std::size_t size() const { return order_.size(); }
  std::span<const Index> order() const { return order_; }
  std::span<const Index> inverse_order() const { return inverse_; }
  Index operator[](std::size_t k) const { return order_[k]; }

  Permutation inverse() const;
  bool is_identity() const;

  friend bool operator==(const Permutation& a, const Permutation& b) { return a.order_ == b.order_; }

 private:
  std::vector<Index> order_;
  std::vector<Index> inverse_;
};

// (p o q).order[k] = p.order[q.order[k]]
Permutation compose(const Permutation& p, const Permutation& q);

// Token arrange: out[b, k, :] = tokens[b, p[k], :]. Differentiable.
diffkit::Tensor apply(const Permutation& p, const diffkit::Tensor& tokens);

// Same arrangement on a flat buffer of `p.size()` rows with `row_width` values each.
std::vector<double> apply_rows(const Permutation& p, std::span<const double> rows, std::size_t row_width);

}  // namespace zigma::scan
