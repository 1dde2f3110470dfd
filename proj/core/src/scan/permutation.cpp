#include "zigma/scan/permutation.hpp"

#include <algorithm>
#include <numeric>
#include <string>

#include "zigma/diffkit/ops.hpp"

namespace zigma::scan {

namespace {

constexpr Index kUnset = static_cast<Index>(-1);

}  // namespace

Permutation::Permutation(std::vector<Index> order) : order_(std::move(order)), inverse_(order_.size(), kUnset) {
  for (std::size_t k = 0; k < order_.size(); ++k) {
    const Index v = order_[k];
    if (v >= order_.size()) {
      throw NotBijectiveError("index " + std::to_string(v) + " at position " + std::to_string(k) +
                              " is outside [0, " + std::to_string(order_.size()) + ")");
    }
    if (inverse_[v] != kUnset) {
      throw NotBijectiveError("index " + std::to_string(v) + " appears at positions " + std::to_string(inverse_[v]) +
                              " and " + std::to_string(k));
    }
    inverse_[v] = k;
  }
}

Permutation Permutation::identity(std::size_t size) {
  std::vector<Index> order(size);
  std::iota(order.begin(), order.end(), Index{0});
  return Permutation(std::move(order));
}

Permutation Permutation::random(std::size_t size, diffkit::Rng& rng) {
  std::vector<Index> order(size);
  std::iota(order.begin(), order.end(), Index{0});
  // Fisher-Yates with an explicit draw so results do not depend on std::shuffle.
  for (std::size_t i = size; i > 1; --i) {
    const std::size_t j = static_cast<std::size_t>(rng() % i);
    std::swap(order[i - 1], order[j]);
  }
  return Permutation(std::move(order));
}

Permutation Permutation::inverse() const { return Permutation(inverse_); }

bool Permutation::is_identity() const {
  for (std::size_t k = 0; k < order_.size(); ++k) {
    if (order_[k] != k) return false;
  }
  return true;
}

Permutation compose(const Permutation& p, const Permutation& q) {
  if (p.size() != q.size()) {
    throw std::invalid_argument("compose: length mismatch (" + std::to_string(p.size()) + " vs " +
                                std::to_string(q.size()) + ")");
  }
  std::vector<Index> out(q.size());
  for (std::size_t k = 0; k < q.size(); ++k) out[k] = p[q[k]];
  return Permutation(std::move(out));
}

diffkit::Tensor apply(const Permutation& p, const diffkit::Tensor& tokens) {
  if (tokens.rank() != 3 || tokens.dim(1) != p.size()) {
    throw diffkit::ShapeError("apply: permutation of length " + std::to_string(p.size()) +
                              " cannot arrange tokens of shape " + diffkit::to_string(tokens.shape()));
  }
  return diffkit::gather_seq(tokens, p.order());
}

std::vector<double> apply_rows(const Permutation& p, std::span<const double> rows, std::size_t row_width) {
  if (rows.size() != p.size() * row_width) throw std::invalid_argument("apply_rows: buffer size mismatch");
  std::vector<double> out(rows.size());
  for (std::size_t k = 0; k < p.size(); ++k) {
    std::copy_n(rows.begin() + p[k] * row_width, row_width, out.begin() + k * row_width);
  }
  return out;
}

}  // namespace zigma::scan
