#include "zigma/diffkit/ops.hpp"

#include <Eigen/Core>
#include <algorithm>
#include <cmath>
#include <numbers>

#include "vec_math.hpp"

namespace zigma::diffkit {

namespace {

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using ConstMap = Eigen::Map<const RowMat>;
using MutMap = Eigen::Map<RowMat>;

// Grad buffer of a parent when it takes part in differentiation, else null.
double* grad_of(const NodePtr& p) { return p->requires_grad ? p->ensure_grad().data() : nullptr; }

bool is_scalar(const Tensor& t) { return t.numel() == 1; }

[[noreturn]] void mismatch(const char* op, const Shape& a, const Shape& b) {
  throw ShapeError(std::string(op) + ": incompatible shapes " + to_string(a) + " and " + to_string(b));
}

std::size_t last_dim(const Tensor& t, const char* op) {
  if (t.rank() == 0) throw ShapeError(std::string(op) + ": needs rank >= 1, got scalar");
  return t.shape().back();
}

void require_rank(const Tensor& t, std::size_t rank, const char* op) {
  if (t.rank() != rank) {
    throw ShapeError(std::string(op) + ": expected rank " + std::to_string(rank) + ", got shape " +
                     to_string(t.shape()));
  }
}

template <class F, class DF>
Tensor unary(const Tensor& a, F f, DF df) {
  const auto x = a.data();
  Storage out(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) out[i] = f(x[i]);
  return make_result(a.shape(), std::move(out), {a}, [df](Node& n) {
    double* ga = grad_of(n.parents[0]);
    if (!ga) return;
    const auto& x = n.parents[0]->data;
    for (std::size_t i = 0; i < x.size(); ++i) ga[i] += n.grad[i] * df(x[i], n.data[i]);
  });
}

// Binary op with scalar broadcasting. df returns {d/da, d/db} at (a, b).
template <class F, class DF>
Tensor binary(const char* name, const Tensor& a, const Tensor& b, F f, DF df) {
  Shape shape;
  if (a.shape() == b.shape()) {
    shape = a.shape();
  } else if (is_scalar(b)) {
    shape = a.shape();
  } else if (is_scalar(a)) {
    shape = b.shape();
  } else {
    mismatch(name, a.shape(), b.shape());
  }
  const std::size_t n = numel_of(shape);
  const std::size_t sa = a.numel() == n ? 1 : 0;
  const std::size_t sb = b.numel() == n ? 1 : 0;
  const auto x = a.data();
  const auto y = b.data();
  Storage out(n);
  for (std::size_t i = 0; i < n; ++i) out[i] = f(x[i * sa], y[i * sb]);
  return make_result(std::move(shape), std::move(out), {a, b}, [df, sa, sb](Node& node) {
    double* ga = grad_of(node.parents[0]);
    double* gb = grad_of(node.parents[1]);
    const auto& x = node.parents[0]->data;
    const auto& y = node.parents[1]->data;
    for (std::size_t i = 0; i < node.grad.size(); ++i) {
      const auto [da, db] = df(x[i * sa], y[i * sb]);
      if (ga) ga[i * sa] += node.grad[i] * da;
      if (gb) gb[i * sb] += node.grad[i] * db;
    }
  });
}

// Stable logistic of every element: exp(-|x|) in one vectorised pass.
Storage sigmoid_all(std::span<const double> x) {
  Storage s(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) s[i] = -std::abs(x[i]);
  detail::exp_inplace(s.data(), s.size());
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double e = s[i];
    s[i] = x[i] >= 0 ? 1.0 / (1.0 + e) : e / (1.0 + e);
  }
  return s;
}

constexpr double kGeluC = 0.7978845608028654;  // sqrt(2 / pi)
constexpr double kGeluA = 0.044715;

}  // namespace

Tensor elementwise(Elementwise op, const Tensor& a, const std::optional<Tensor>& b) {
  auto need_b = [&]() -> const Tensor& {
    if (!b) throw ShapeError("binary elementwise op called without a second operand");
    return *b;
  };
  switch (op) {
    case Elementwise::add: return add(a, need_b());
    case Elementwise::sub: return sub(a, need_b());
    case Elementwise::mul: return mul(a, need_b());
    case Elementwise::neg: return neg(a);
    case Elementwise::exp: return exp(a);
    case Elementwise::tanh: return tanh(a);
    case Elementwise::sigmoid: return sigmoid(a);
    case Elementwise::silu: return silu(a);
    case Elementwise::softplus: return softplus(a);
    case Elementwise::gelu: return gelu(a);
    case Elementwise::square: return square(a);
  }
  throw std::invalid_argument("unknown elementwise op");
}

Tensor add(const Tensor& a, const Tensor& b) {
  return binary("add", a, b, [](double x, double y) { return x + y; },
                [](double, double) { return std::pair{1.0, 1.0}; });
}

Tensor sub(const Tensor& a, const Tensor& b) {
  return binary("sub", a, b, [](double x, double y) { return x - y; },
                [](double, double) { return std::pair{1.0, -1.0}; });
}

Tensor mul(const Tensor& a, const Tensor& b) {
  return binary("mul", a, b, [](double x, double y) { return x * y; },
                [](double x, double y) { return std::pair{y, x}; });
}

Tensor neg(const Tensor& a) {
  return unary(a, [](double x) { return -x; }, [](double, double) { return -1.0; });
}

Tensor exp(const Tensor& a) {
  return unary(a, [](double x) { return std::exp(x); }, [](double, double y) { return y; });
}

Tensor tanh(const Tensor& a) {
  return unary(a, [](double x) { return std::tanh(x); }, [](double, double y) { return 1.0 - y * y; });
}

Tensor sigmoid(const Tensor& a) {
  return make_result(a.shape(), sigmoid_all(a.data()), {a}, [](Node& n) {
    double* ga = grad_of(n.parents[0]);
    if (!ga) return;
    for (std::size_t i = 0; i < n.data.size(); ++i) ga[i] += n.grad[i] * n.data[i] * (1.0 - n.data[i]);
  });
}

Tensor silu(const Tensor& a) {
  const auto x = a.data();
  Storage out = sigmoid_all(x);
  for (std::size_t i = 0; i < x.size(); ++i) out[i] *= x[i];
  return make_result(a.shape(), std::move(out), {a}, [](Node& n) {
    double* ga = grad_of(n.parents[0]);
    if (!ga) return;
    const auto& x = n.parents[0]->data;
    const Storage s = sigmoid_all(x);
    for (std::size_t i = 0; i < x.size(); ++i) ga[i] += n.grad[i] * s[i] * (1.0 + x[i] * (1.0 - s[i]));
  });
}

Tensor softplus(const Tensor& a) {
  const auto x = a.data();
  Storage out(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) out[i] = -std::abs(x[i]);
  detail::exp_inplace(out.data(), out.size());
  for (std::size_t i = 0; i < x.size(); ++i) out[i] = std::max(x[i], 0.0) + std::log1p(out[i]);
  return make_result(a.shape(), std::move(out), {a}, [](Node& n) {
    double* ga = grad_of(n.parents[0]);
    if (!ga) return;
    const Storage s = sigmoid_all(n.parents[0]->data);
    for (std::size_t i = 0; i < s.size(); ++i) ga[i] += n.grad[i] * s[i];
  });
}

Tensor gelu(const Tensor& a) {
  return unary(a,
               [](double x) {
                 const double u = kGeluC * (x + kGeluA * x * x * x);
                 return 0.5 * x * (1.0 + std::tanh(u));
               },
               [](double x, double) {
                 const double u = kGeluC * (x + kGeluA * x * x * x);
                 const double th = std::tanh(u);
                 const double du = kGeluC * (1.0 + 3.0 * kGeluA * x * x);
                 return 0.5 * (1.0 + th) + 0.5 * x * (1.0 - th * th) * du;
               });
}

Tensor square(const Tensor& a) {
  return unary(a, [](double x) { return x * x; }, [](double x, double) { return 2.0 * x; });
}

Tensor scale(const Tensor& a, double factor) {
  return unary(a, [factor](double x) { return factor * x; }, [factor](double, double) { return factor; });
}

Tensor add_scalar(const Tensor& a, double value) {
  return unary(a, [value](double x) { return x + value; }, [](double, double) { return 1.0; });
}

Tensor sum(const Tensor& a) {
  double s = 0.0;
  for (double v : a.data()) s += v;
  return make_result({}, Storage{s}, {a}, [](Node& n) {
    double* ga = grad_of(n.parents[0]);
    if (!ga) return;
    const std::size_t len = n.parents[0]->data.size();
    for (std::size_t i = 0; i < len; ++i) ga[i] += n.grad[0];
  });
}

Tensor mean(const Tensor& a) {
  if (a.numel() == 0) throw ShapeError("mean of an empty tensor");
  return scale(sum(a), 1.0 / static_cast<double>(a.numel()));
}

Tensor mse(const Tensor& prediction, const Tensor& target) {
  if (prediction.shape() != target.shape()) mismatch("mse", prediction.shape(), target.shape());
  return mean(square(sub(prediction, target)));
}

Tensor matmul(const Tensor& a, const Tensor& b) {
  require_rank(a, 2, "matmul");
  require_rank(b, 2, "matmul");
  const std::size_t m = a.dim(0), k = a.dim(1), n = b.dim(1);
  if (b.dim(0) != k) mismatch("matmul (inner dimensions differ)", a.shape(), b.shape());
  Storage out(m * n);
  MutMap(out.data(), m, n).noalias() = ConstMap(a.data().data(), m, k) * ConstMap(b.data().data(), k, n);
  return make_result({m, n}, std::move(out), {a, b}, [m, k, n](Node& node) {
    ConstMap g(node.grad.data(), m, n);
    if (double* ga = grad_of(node.parents[0])) {
      MutMap(ga, m, k).noalias() += g * ConstMap(node.parents[1]->data.data(), k, n).transpose();
    }
    if (double* gb = grad_of(node.parents[1])) {
      MutMap(gb, k, n).noalias() += ConstMap(node.parents[0]->data.data(), m, k).transpose() * g;
    }
  });
}

Tensor batched_matmul(const Tensor& a, const Tensor& b) {
  require_rank(a, 3, "batched_matmul");
  require_rank(b, 3, "batched_matmul");
  const std::size_t bs = a.dim(0), m = a.dim(1), k = a.dim(2), n = b.dim(2);
  if (b.dim(0) != bs || b.dim(1) != k) mismatch("batched_matmul", a.shape(), b.shape());
  Storage out(bs * m * n);
  for (std::size_t i = 0; i < bs; ++i) {
    MutMap(out.data() + i * m * n, m, n).noalias() =
        ConstMap(a.data().data() + i * m * k, m, k) * ConstMap(b.data().data() + i * k * n, k, n);
  }
  return make_result({bs, m, n}, std::move(out), {a, b}, [bs, m, k, n](Node& node) {
    double* ga = grad_of(node.parents[0]);
    double* gb = grad_of(node.parents[1]);
    const double* av = node.parents[0]->data.data();
    const double* bv = node.parents[1]->data.data();
    for (std::size_t i = 0; i < bs; ++i) {
      ConstMap g(node.grad.data() + i * m * n, m, n);
      if (ga) MutMap(ga + i * m * k, m, k).noalias() += g * ConstMap(bv + i * k * n, k, n).transpose();
      if (gb) MutMap(gb + i * k * n, k, n).noalias() += ConstMap(av + i * m * k, m, k).transpose() * g;
    }
  });
}

Tensor batched_transpose(const Tensor& a) {
  require_rank(a, 3, "batched_transpose");
  const std::size_t bs = a.dim(0), m = a.dim(1), n = a.dim(2);
  Storage out(a.numel());
  for (std::size_t i = 0; i < bs; ++i) {
    MutMap(out.data() + i * m * n, n, m) = ConstMap(a.data().data() + i * m * n, m, n).transpose();
  }
  return make_result({bs, n, m}, std::move(out), {a}, [bs, m, n](Node& node) {
    double* ga = grad_of(node.parents[0]);
    if (!ga) return;
    for (std::size_t i = 0; i < bs; ++i) {
      MutMap(ga + i * m * n, m, n) += ConstMap(node.grad.data() + i * m * n, n, m).transpose();
    }
  });
}

Tensor transpose(const Tensor& a) {
  require_rank(a, 2, "transpose");
  const Shape s = a.shape();
  return reshape(batched_transpose(reshape(a, {1, s[0], s[1]})), {s[1], s[0]});
}

Tensor reshape(const Tensor& a, Shape shape) {
  if (numel_of(shape) != a.numel()) mismatch("reshape", a.shape(), shape);
  Storage out(a.data().begin(), a.data().end());
  return make_result(std::move(shape), std::move(out), {a}, [](Node& n) {
    double* ga = grad_of(n.parents[0]);
    if (!ga) return;
    for (std::size_t i = 0; i < n.grad.size(); ++i) ga[i] += n.grad[i];
  });
}

Tensor linear(const Tensor& x, const Tensor& weight, const std::optional<Tensor>& bias) {
  require_rank(weight, 2, "linear");
  const std::size_t in = last_dim(x, "linear");
  if (weight.dim(0) != in) mismatch("linear", x.shape(), weight.shape());
  const std::size_t out_dim = weight.dim(1);
  if (bias && (bias->rank() != 1 || bias->dim(0) != out_dim)) mismatch("linear (bias)", weight.shape(), bias->shape());
  const std::size_t rows = x.numel() / std::max<std::size_t>(in, 1);
  Shape out_shape = x.shape();
  out_shape.back() = out_dim;

  // One fused op: no reshape copies of the input or the output.
  Storage out(rows * out_dim);
  MutMap y(out.data(), rows, out_dim);
  y.noalias() = ConstMap(x.data().data(), rows, in) * ConstMap(weight.data().data(), in, out_dim);
  if (bias) y.rowwise() += Eigen::Map<const Eigen::RowVectorXd>(bias->data().data(), out_dim);

  std::vector<Tensor> inputs{x, weight};
  if (bias) inputs.push_back(*bias);
  return make_result(std::move(out_shape), std::move(out), std::move(inputs), [rows, in, out_dim](Node& node) {
    ConstMap g(node.grad.data(), rows, out_dim);
    if (double* gx = grad_of(node.parents[0])) {
      MutMap(gx, rows, in).noalias() += g * ConstMap(node.parents[1]->data.data(), in, out_dim).transpose();
    }
    if (double* gw = grad_of(node.parents[1])) {
      MutMap(gw, in, out_dim).noalias() += ConstMap(node.parents[0]->data.data(), rows, in).transpose() * g;
    }
    if (node.parents.size() > 2) {
      if (double* gb = grad_of(node.parents[2])) {
        Eigen::Map<Eigen::RowVectorXd>(gb, out_dim) += g.colwise().sum();
      }
    }
  });
}

Tensor add_bias(const Tensor& x, const Tensor& bias) {
  require_rank(bias, 1, "add_bias");
  const std::size_t n = last_dim(x, "add_bias");
  if (bias.dim(0) != n) mismatch("add_bias", x.shape(), bias.shape());
  Storage out(x.data().begin(), x.data().end());
  const auto b = bias.data();
  for (std::size_t r = 0; r < out.size(); r += n) {
    for (std::size_t j = 0; j < n; ++j) out[r + j] += b[j];
  }
  return make_result(x.shape(), std::move(out), {x, bias}, [n](Node& node) {
    double* gx = grad_of(node.parents[0]);
    double* gb = grad_of(node.parents[1]);
    const std::size_t total = node.grad.size();
    if (gx) {
      for (std::size_t i = 0; i < total; ++i) gx[i] += node.grad[i];
    }
    if (gb) {
      for (std::size_t r = 0; r < total; r += n) {
        for (std::size_t j = 0; j < n; ++j) gb[j] += node.grad[r + j];
      }
    }
  });
}

Tensor add_batch_shared(const Tensor& x, const Tensor& shared) {
  if (x.rank() != shared.rank() + 1 || !std::equal(shared.shape().begin(), shared.shape().end(), x.shape().begin() + 1)) {
    mismatch("add_batch_shared", x.shape(), shared.shape());
  }
  const std::size_t n = shared.numel();
  Storage out(x.data().begin(), x.data().end());
  const auto s = shared.data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] += s[i % n];
  return make_result(x.shape(), std::move(out), {x, shared}, [n](Node& node) {
    double* gx = grad_of(node.parents[0]);
    double* gs = grad_of(node.parents[1]);
    for (std::size_t i = 0; i < node.grad.size(); ++i) {
      if (gx) gx[i] += node.grad[i];
      if (gs) gs[i % n] += node.grad[i];
    }
  });
}

Tensor slice_last(const Tensor& x, std::size_t start, std::size_t length) {
  const std::size_t n = last_dim(x, "slice_last");
  if (start + length > n) {
    throw ShapeError("slice_last: range [" + std::to_string(start) + "," + std::to_string(start + length) +
                     ") exceeds last dimension of " + to_string(x.shape()));
  }
  const std::size_t rows = x.numel() / std::max<std::size_t>(n, 1);
  Shape shape = x.shape();
  shape.back() = length;
  Storage out(rows * length);
  const auto v = x.data();
  for (std::size_t r = 0; r < rows; ++r) {
    std::copy_n(v.begin() + r * n + start, length, out.begin() + r * length);
  }
  return make_result(std::move(shape), std::move(out), {x}, [rows, n, start, length](Node& node) {
    double* gx = grad_of(node.parents[0]);
    if (!gx) return;
    for (std::size_t r = 0; r < rows; ++r) {
      for (std::size_t j = 0; j < length; ++j) gx[r * n + start + j] += node.grad[r * length + j];
    }
  });
}

Tensor gather_seq(const Tensor& x, std::span<const std::size_t> order) {
  require_rank(x, 3, "gather_seq");
  const std::size_t bs = x.dim(0), len = x.dim(1), ch = x.dim(2);
  if (order.size() != len) {
    throw ShapeError("gather_seq: order of length " + std::to_string(order.size()) +
                     " does not match sequence length of " + to_string(x.shape()));
  }
  std::vector<std::size_t> idx(order.begin(), order.end());
  for (auto i : idx) {
    if (i >= len) throw ShapeError("gather_seq: index " + std::to_string(i) + " out of range");
  }
  Storage out(x.numel());
  const auto v = x.data();
  for (std::size_t b = 0; b < bs; ++b) {
    for (std::size_t k = 0; k < len; ++k) {
      std::copy_n(v.begin() + (b * len + idx[k]) * ch, ch, out.begin() + (b * len + k) * ch);
    }
  }
  return make_result(x.shape(), std::move(out), {x}, [idx = std::move(idx), bs, len, ch](Node& node) {
    double* gx = grad_of(node.parents[0]);
    if (!gx) return;
    for (std::size_t b = 0; b < bs; ++b) {
      for (std::size_t k = 0; k < len; ++k) {
        double* dst = gx + (b * len + idx[k]) * ch;
        const double* src = node.grad.data() + (b * len + k) * ch;
        for (std::size_t c = 0; c < ch; ++c) dst[c] += src[c];
      }
    }
  });
}

Tensor flip_seq(const Tensor& x) {
  require_rank(x, 3, "flip_seq");
  std::vector<std::size_t> order(x.dim(1));
  for (std::size_t k = 0; k < order.size(); ++k) order[k] = order.size() - 1 - k;
  return gather_seq(x, order);
}

Tensor concat_seq(const Tensor& a, const Tensor& b) {
  require_rank(a, 3, "concat_seq");
  require_rank(b, 3, "concat_seq");
  if (a.dim(0) != b.dim(0) || a.dim(2) != b.dim(2)) mismatch("concat_seq", a.shape(), b.shape());
  const std::size_t bs = a.dim(0), la = a.dim(1), lb = b.dim(1), ch = a.dim(2);
  Storage out(bs * (la + lb) * ch);
  for (std::size_t i = 0; i < bs; ++i) {
    std::copy_n(a.data().begin() + i * la * ch, la * ch, out.begin() + i * (la + lb) * ch);
    std::copy_n(b.data().begin() + i * lb * ch, lb * ch, out.begin() + (i * (la + lb) + la) * ch);
  }
  return make_result({bs, la + lb, ch}, std::move(out), {a, b}, [bs, la, lb, ch](Node& node) {
    double* ga = grad_of(node.parents[0]);
    double* gb = grad_of(node.parents[1]);
    for (std::size_t i = 0; i < bs; ++i) {
      const double* g = node.grad.data() + i * (la + lb) * ch;
      if (ga) {
        for (std::size_t j = 0; j < la * ch; ++j) ga[i * la * ch + j] += g[j];
      }
      if (gb) {
        for (std::size_t j = 0; j < lb * ch; ++j) gb[i * lb * ch + j] += g[la * ch + j];
      }
    }
  });
}

Tensor slice_seq(const Tensor& x, std::size_t start, std::size_t length) {
  require_rank(x, 3, "slice_seq");
  const std::size_t bs = x.dim(0), len = x.dim(1), ch = x.dim(2);
  if (start + length > len) throw ShapeError("slice_seq: range exceeds sequence length of " + to_string(x.shape()));
  Storage out(bs * length * ch);
  for (std::size_t i = 0; i < bs; ++i) {
    std::copy_n(x.data().begin() + (i * len + start) * ch, length * ch, out.begin() + i * length * ch);
  }
  return make_result({bs, length, ch}, std::move(out), {x}, [bs, len, ch, start, length](Node& node) {
    double* gx = grad_of(node.parents[0]);
    if (!gx) return;
    for (std::size_t i = 0; i < bs; ++i) {
      for (std::size_t j = 0; j < length * ch; ++j) gx[(i * len + start) * ch + j] += node.grad[i * length * ch + j];
    }
  });
}

Tensor mean_seq(const Tensor& x) {
  require_rank(x, 3, "mean_seq");
  const std::size_t bs = x.dim(0), len = x.dim(1), ch = x.dim(2);
  if (len == 0) throw ShapeError("mean_seq over an empty sequence");
  Storage out(bs * ch, 0.0);
  const auto v = x.data();
  for (std::size_t b = 0; b < bs; ++b) {
    for (std::size_t l = 0; l < len; ++l) {
      for (std::size_t c = 0; c < ch; ++c) out[b * ch + c] += v[(b * len + l) * ch + c];
    }
  }
  const double inv = 1.0 / static_cast<double>(len);
  for (auto& o : out) o *= inv;
  return make_result({bs, ch}, std::move(out), {x}, [bs, len, ch, inv](Node& node) {
    double* gx = grad_of(node.parents[0]);
    if (!gx) return;
    for (std::size_t b = 0; b < bs; ++b) {
      for (std::size_t l = 0; l < len; ++l) {
        for (std::size_t c = 0; c < ch; ++c) gx[(b * len + l) * ch + c] += inv * node.grad[b * ch + c];
      }
    }
  });
}

Tensor modulate(const Tensor& x, const Tensor& scale_t, const Tensor& shift) {
  require_rank(x, 3, "modulate");
  const std::size_t bs = x.dim(0), len = x.dim(1), ch = x.dim(2);
  const Shape expect{bs, ch};
  if (scale_t.shape() != expect) mismatch("modulate (scale)", x.shape(), scale_t.shape());
  if (shift.shape() != expect) mismatch("modulate (shift)", x.shape(), shift.shape());
  Storage out(x.numel());
  const auto v = x.data();
  const auto s = scale_t.data();
  const auto t = shift.data();
  for (std::size_t b = 0; b < bs; ++b) {
    for (std::size_t l = 0; l < len; ++l) {
      const std::size_t row = (b * len + l) * ch;
      for (std::size_t c = 0; c < ch; ++c) out[row + c] = v[row + c] * s[b * ch + c] + t[b * ch + c];
    }
  }
  return make_result(x.shape(), std::move(out), {x, scale_t, shift}, [bs, len, ch](Node& node) {
    double* gx = grad_of(node.parents[0]);
    double* gs = grad_of(node.parents[1]);
    double* gt = grad_of(node.parents[2]);
    const auto& v = node.parents[0]->data;
    const auto& s = node.parents[1]->data;
    for (std::size_t b = 0; b < bs; ++b) {
      for (std::size_t l = 0; l < len; ++l) {
        const std::size_t row = (b * len + l) * ch;
        for (std::size_t c = 0; c < ch; ++c) {
          const double g = node.grad[row + c];
          if (gx) gx[row + c] += g * s[b * ch + c];
          if (gs) gs[b * ch + c] += g * v[row + c];
          if (gt) gt[b * ch + c] += g;
        }
      }
    }
  });
}

Tensor layer_norm(const Tensor& x, const std::optional<Tensor>& gamma, const std::optional<Tensor>& beta,
                  double eps) {
  const std::size_t d = last_dim(x, "layer_norm");
  if (d == 0) throw ShapeError("layer_norm: last dimension must be >= 1");
  if (gamma && gamma->shape() != Shape{d}) mismatch("layer_norm (gamma)", x.shape(), gamma->shape());
  if (beta && beta->shape() != Shape{d}) mismatch("layer_norm (beta)", x.shape(), beta->shape());
  const std::size_t rows = x.numel() / d;
  const auto v = x.data();
  Storage out(x.numel());
  std::vector<double> xhat(x.numel());
  std::vector<double> inv_std(rows);
  for (std::size_t r = 0; r < rows; ++r) {
    const double* row = v.data() + r * d;
    double mu = 0.0;
    for (std::size_t j = 0; j < d; ++j) mu += row[j];
    mu /= static_cast<double>(d);
    double var = 0.0;
    for (std::size_t j = 0; j < d; ++j) var += (row[j] - mu) * (row[j] - mu);
    var /= static_cast<double>(d);
    const double denom = var + eps;
    inv_std[r] = denom > 0.0 ? 1.0 / std::sqrt(denom) : 0.0;
    for (std::size_t j = 0; j < d; ++j) {
      const double h = (row[j] - mu) * inv_std[r];
      xhat[r * d + j] = h;
      out[r * d + j] = h * (gamma ? gamma->data()[j] : 1.0) + (beta ? beta->data()[j] : 0.0);
    }
  }
  std::vector<Tensor> inputs{x};
  if (gamma) inputs.push_back(*gamma);
  if (beta) inputs.push_back(*beta);
  const bool has_gamma = gamma.has_value();
  const bool has_beta = beta.has_value();
  return make_result(x.shape(), std::move(out), inputs,
                     [rows, d, has_gamma, has_beta, xhat = std::move(xhat), inv_std = std::move(inv_std)](Node& node) {
                       double* gx = grad_of(node.parents[0]);
                       double* gg = has_gamma ? grad_of(node.parents[1]) : nullptr;
                       double* gb = has_beta ? grad_of(node.parents[has_gamma ? 2 : 1]) : nullptr;
                       const double* gamma_v = has_gamma ? node.parents[1]->data.data() : nullptr;
                       std::vector<double> dxhat(d);
                       for (std::size_t r = 0; r < rows; ++r) {
                         const double* g = node.grad.data() + r * d;
                         const double* h = xhat.data() + r * d;
                         double mean_dh = 0.0, mean_dh_h = 0.0;
                         for (std::size_t j = 0; j < d; ++j) {
                           dxhat[j] = g[j] * (gamma_v ? gamma_v[j] : 1.0);
                           mean_dh += dxhat[j];
                           mean_dh_h += dxhat[j] * h[j];
                           if (gg) gg[j] += g[j] * h[j];
                           if (gb) gb[j] += g[j];
                         }
                         mean_dh /= static_cast<double>(d);
                         mean_dh_h /= static_cast<double>(d);
                         if (gx) {
                           for (std::size_t j = 0; j < d; ++j) {
                             gx[r * d + j] += inv_std[r] * (dxhat[j] - mean_dh - h[j] * mean_dh_h);
                           }
                         }
                       }
                     });
}

Tensor softmax_last(const Tensor& x) {
  const std::size_t d = last_dim(x, "softmax_last");
  if (d == 0) throw ShapeError("softmax over an empty axis");
  const std::size_t rows = x.numel() / d;
  const auto v = x.data();
  Storage out(x.numel());
  for (std::size_t r = 0; r < rows; ++r) {
    const double* row = v.data() + r * d;
    const double mx = *std::max_element(row, row + d);
    double z = 0.0;
    for (std::size_t j = 0; j < d; ++j) {
      out[r * d + j] = std::exp(row[j] - mx);
      z += out[r * d + j];
    }
    for (std::size_t j = 0; j < d; ++j) out[r * d + j] /= z;
  }
  return make_result(x.shape(), std::move(out), {x}, [rows, d](Node& node) {
    double* gx = grad_of(node.parents[0]);
    if (!gx) return;
    for (std::size_t r = 0; r < rows; ++r) {
      const double* y = node.data.data() + r * d;
      const double* g = node.grad.data() + r * d;
      double dot = 0.0;
      for (std::size_t j = 0; j < d; ++j) dot += g[j] * y[j];
      for (std::size_t j = 0; j < d; ++j) gx[r * d + j] += y[j] * (g[j] - dot);
    }
  });
}

Tensor depthwise_causal_conv1d(const Tensor& x, const Tensor& weight, const Tensor& bias) {
  require_rank(x, 3, "depthwise_causal_conv1d");
  require_rank(weight, 2, "depthwise_causal_conv1d");
  const std::size_t bs = x.dim(0), len = x.dim(1), ch = x.dim(2), k = weight.dim(1);
  if (weight.dim(0) != ch) mismatch("depthwise_causal_conv1d (weight)", x.shape(), weight.shape());
  if (bias.shape() != Shape{ch}) mismatch("depthwise_causal_conv1d (bias)", x.shape(), bias.shape());
  const auto v = x.data();
  const auto w = weight.data();
  const auto b = bias.data();
  Storage out(x.numel());
  for (std::size_t n = 0; n < bs; ++n) {
    for (std::size_t l = 0; l < len; ++l) {
      for (std::size_t c = 0; c < ch; ++c) {
        double acc = b[c];
        for (std::size_t j = 0; j < k; ++j) {
          const std::size_t back = k - 1 - j;
          if (back > l) continue;
          acc += w[c * k + j] * v[(n * len + l - back) * ch + c];
        }
        out[(n * len + l) * ch + c] = acc;
      }
    }
  }
  return make_result(x.shape(), std::move(out), {x, weight, bias}, [bs, len, ch, k](Node& node) {
    double* gx = grad_of(node.parents[0]);
    double* gw = grad_of(node.parents[1]);
    double* gb = grad_of(node.parents[2]);
    const auto& v = node.parents[0]->data;
    const auto& w = node.parents[1]->data;
    for (std::size_t n = 0; n < bs; ++n) {
      for (std::size_t l = 0; l < len; ++l) {
        for (std::size_t c = 0; c < ch; ++c) {
          const double g = node.grad[(n * len + l) * ch + c];
          if (gb) gb[c] += g;
          for (std::size_t j = 0; j < k; ++j) {
            const std::size_t back = k - 1 - j;
            if (back > l) continue;
            const std::size_t src = (n * len + l - back) * ch + c;
            if (gx) gx[src] += g * w[c * k + j];
            if (gw) gw[c * k + j] += g * v[src];
          }
        }
      }
    }
  });
}

Tensor embedding(const Tensor& table, std::span<const std::size_t> ids) {
  require_rank(table, 2, "embedding");
  const std::size_t vocab = table.dim(0), d = table.dim(1);
  std::vector<std::size_t> idx(ids.begin(), ids.end());
  Storage out(idx.size() * d);
  for (std::size_t i = 0; i < idx.size(); ++i) {
    if (idx[i] >= vocab) {
      throw ShapeError("embedding: id " + std::to_string(idx[i]) + " out of range for vocabulary " +
                       std::to_string(vocab));
    }
    std::copy_n(table.data().begin() + idx[i] * d, d, out.begin() + i * d);
  }
  const std::size_t count = idx.size();
  return make_result({count, d}, std::move(out), {table}, [idx = std::move(idx), d](Node& node) {
    double* gt = grad_of(node.parents[0]);
    if (!gt) return;
    for (std::size_t i = 0; i < idx.size(); ++i) {
      for (std::size_t j = 0; j < d; ++j) gt[idx[i] * d + j] += node.grad[i * d + j];
    }
  });
}

Tensor scale_batch(const Tensor& x, std::span<const double> factors) {
  if (x.rank() == 0 || x.dim(0) != factors.size()) {
    throw ShapeError("scale_batch: " + std::to_string(factors.size()) + " factors for shape " + to_string(x.shape()));
  }
  const std::size_t row = factors.empty() ? 0 : x.numel() / factors.size();
  std::vector<double> f(factors.begin(), factors.end());
  const auto v = x.data();
  Storage out(v.size());
  for (std::size_t i = 0; i < v.size(); ++i) out[i] = f[i / row] * v[i];
  return make_result(x.shape(), std::move(out), {x}, [f = std::move(f), row](Node& node) {
    double* gx = grad_of(node.parents[0]);
    if (!gx) return;
    for (std::size_t i = 0; i < node.grad.size(); ++i) gx[i] += f[i / row] * node.grad[i];
  });
}

Tensor gather_flat(const Tensor& x, Shape shape, std::span<const std::size_t> indices) {
  if (numel_of(shape) != indices.size()) throw ShapeError("gather_flat: index count does not match " + to_string(shape));
  std::vector<std::size_t> idx(indices.begin(), indices.end());
  Storage out(idx.size());
  const auto v = x.data();
  for (std::size_t i = 0; i < idx.size(); ++i) {
    if (idx[i] >= v.size()) throw ShapeError("gather_flat: index out of range for " + to_string(x.shape()));
    out[i] = v[idx[i]];
  }
  return make_result(std::move(shape), std::move(out), {x}, [idx = std::move(idx)](Node& node) {
    double* gx = grad_of(node.parents[0]);
    if (!gx) return;
    for (std::size_t i = 0; i < idx.size(); ++i) gx[idx[i]] += node.grad[i];
  });
}

namespace {

// Maps between [B, L, H*E] and [B*H, L, E]; returns (src, dst) flat offsets.
template <class Visit>
void for_each_head_element(std::size_t bs, std::size_t len, std::size_t heads, std::size_t e, Visit visit) {
  for (std::size_t b = 0; b < bs; ++b) {
    for (std::size_t l = 0; l < len; ++l) {
      for (std::size_t h = 0; h < heads; ++h) {
        for (std::size_t j = 0; j < e; ++j) {
          const std::size_t merged = (b * len + l) * heads * e + h * e + j;
          const std::size_t split = ((b * heads + h) * len + l) * e + j;
          visit(merged, split);
        }
      }
    }
  }
}

}  // namespace

Tensor split_heads(const Tensor& x, std::size_t heads) {
  require_rank(x, 3, "split_heads");
  const std::size_t bs = x.dim(0), len = x.dim(1), width = x.dim(2);
  if (heads == 0 || width % heads != 0) {
    throw ShapeError("split_heads: width " + std::to_string(width) + " not divisible by " + std::to_string(heads));
  }
  const std::size_t e = width / heads;
  Storage out(x.numel());
  const auto v = x.data();
  for_each_head_element(bs, len, heads, e, [&](std::size_t m, std::size_t s) { out[s] = v[m]; });
  return make_result({bs * heads, len, e}, std::move(out), {x}, [bs, len, heads, e](Node& node) {
    double* gx = grad_of(node.parents[0]);
    if (!gx) return;
    for_each_head_element(bs, len, heads, e, [&](std::size_t m, std::size_t s) { gx[m] += node.grad[s]; });
  });
}

Tensor merge_heads(const Tensor& x, std::size_t heads) {
  require_rank(x, 3, "merge_heads");
  if (heads == 0 || x.dim(0) % heads != 0) throw ShapeError("merge_heads: batch not divisible by head count");
  const std::size_t bs = x.dim(0) / heads, len = x.dim(1), e = x.dim(2);
  Storage out(x.numel());
  const auto v = x.data();
  for_each_head_element(bs, len, heads, e, [&](std::size_t m, std::size_t s) { out[m] = v[s]; });
  return make_result({bs, len, heads * e}, std::move(out), {x}, [bs, len, heads, e](Node& node) {
    double* gx = grad_of(node.parents[0]);
    if (!gx) return;
    for_each_head_element(bs, len, heads, e, [&](std::size_t m, std::size_t s) { gx[s] += node.grad[m]; });
  });
}

}  // namespace zigma::diffkit
