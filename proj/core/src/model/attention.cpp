#include "zigma/model/attention.hpp"

#include <Eigen/Core>
#include <cmath>

#include "zigma/diffkit/ops.hpp"

namespace zigma::model {

namespace dk = zigma::diffkit;
using dk::Tensor;

namespace {

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using ConstMap = Eigen::Map<const RowMat>;

constexpr std::size_t kQueryBlock = 256;
constexpr std::size_t kBlockedThreshold = 1u << 20;  // score entries per group

void check_context(const Tensor& x, const Tensor& context, std::size_t d) {
  if (x.rank() != 3 || x.dim(2) != d) throw dk::ShapeError("attention: x must be [B,M," + std::to_string(d) + "]");
  if (context.rank() != 3 || context.dim(2) != d || context.dim(0) != x.dim(0)) {
    throw dk::ShapeError("attention: context must be [B,K," + std::to_string(d) + "], got " +
                         dk::to_string(context.shape()));
  }
  if (context.dim(1) == 0) throw dk::ShapeError("attention: empty context");
}

Tensor blocked_attention(const Tensor& q, const Tensor& k, const Tensor& v) {
  const std::size_t groups = q.dim(0), m = q.dim(1), e = q.dim(2), kk = k.dim(1);
  const double s = 1.0 / std::sqrt(static_cast<double>(e));
  dk::Storage out(groups * m * e);
  RowMat scores;
  // Aligned scratch row: exp over a row of `scores` would depend on the row's
  // address (scalar head vs packets), so results would shift with the query order.
  Eigen::ArrayXd row;
  for (std::size_t g = 0; g < groups; ++g) {
    ConstMap qg(q.data().data() + g * m * e, m, e);
    ConstMap kg(k.data().data() + g * kk * e, kk, e);
    ConstMap vg(v.data().data() + g * kk * e, kk, e);
    for (std::size_t r0 = 0; r0 < m; r0 += kQueryBlock) {
      const std::size_t rows = std::min(kQueryBlock, m - r0);
      scores.noalias() = (qg.middleRows(r0, rows) * kg.transpose()) * s;
      for (std::size_t r = 0; r < rows; ++r) {
        row = scores.row(r).transpose().array() - scores.row(r).maxCoeff();
        row = row.exp();
        scores.row(r) = row.transpose() / row.sum();
      }
      Eigen::Map<RowMat>(out.data() + (g * m + r0) * e, rows, e).noalias() = scores * vg;
    }
  }
  return dk::make_result({groups, m, e}, std::move(out), std::vector<Tensor>{}, nullptr);
}

}  // namespace

Tensor scaled_dot_product_attention(const Tensor& q, const Tensor& k, const Tensor& v) {
  const std::size_t e = q.dim(2);
  const bool tracked = dk::grad_enabled() && (q.requires_grad() || k.requires_grad() || v.requires_grad());
  if (!tracked && q.dim(1) * k.dim(1) > kBlockedThreshold) return blocked_attention(q, k, v);
  const Tensor scores = dk::scale(dk::batched_matmul(q, dk::batched_transpose(k)), 1.0 / std::sqrt(static_cast<double>(e)));
  return dk::batched_matmul(dk::softmax_last(scores), v);
}

MultiHeadAttention::MultiHeadAttention(const std::string& prefix, std::size_t d, std::size_t heads,
                                       dk::ParameterStore& store, dk::Rng& rng)
    : d_(d), heads_(heads) {
  if (heads == 0 || d % heads != 0) throw dk::ShapeError("attention: d must be divisible by heads");
  const double bound = 1.0 / std::sqrt(static_cast<double>(d));
  auto proj = [&](const char* name) { return store.add(prefix + "." + name, Tensor::uniform({d, d}, rng, -bound, bound)); };
  auto bias = [&](const char* name) { return store.add(prefix + "." + name, Tensor::zeros({d})); };
  wq = proj("wq"), bq = bias("bq");
  wk = proj("wk"), bk = bias("bk");
  wv = proj("wv"), bv = bias("bv");
  wo = proj("wo"), bo = bias("bo");
}

Tensor MultiHeadAttention::weights(const Tensor& x, const Tensor& context) const {
  check_context(x, context, d_);
  const Tensor q = dk::split_heads(dk::linear(x, wq, bq), heads_);
  const Tensor k = dk::split_heads(dk::linear(context, wk, bk), heads_);
  const double s = 1.0 / std::sqrt(static_cast<double>(d_ / heads_));
  return dk::softmax_last(dk::scale(dk::batched_matmul(q, dk::batched_transpose(k)), s));
}

Tensor MultiHeadAttention::forward(const Tensor& x, const Tensor& context) const {
  check_context(x, context, d_);
  const Tensor q = dk::split_heads(dk::linear(x, wq, bq), heads_);
  const Tensor k = dk::split_heads(dk::linear(context, wk, bk), heads_);
  const Tensor v = dk::split_heads(dk::linear(context, wv, bv), heads_);
  return dk::linear(dk::merge_heads(scaled_dot_product_attention(q, k, v), heads_), wo, bo);
}

}  // namespace zigma::model
