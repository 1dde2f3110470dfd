#include "zigma/ssm/scan_kernels.hpp"

#include <bit>
#include <cmath>
#include <stdexcept>
#include <string>
#include <vector>

#include "../diffkit/vec_math.hpp"

namespace zigma::ssm {

using diffkit::Node;
using diffkit::Shape;
using diffkit::ShapeError;
using diffkit::Storage;
using diffkit::Tensor;

namespace {

// abar[c, n] = exp(delta[c] * A[c, n]) for one token.
void transition(const double* delta, const double* a, std::size_t ch, std::size_t ns, double* abar) {
  for (std::size_t c = 0; c < ch; ++c) {
    for (std::size_t n = 0; n < ns; ++n) abar[c * ns + n] = delta[c] * a[c * ns + n];
  }
  diffkit::detail::exp_inplace(abar, ch * ns);
}

// Grad buffer of a parent, or a zeroed scratch sink so the kernels need no branches.
double* grad_or_sink(Node& node, std::size_t i, std::vector<double>& sink) {
  if (node.parents[i]->requires_grad) return node.parents[i]->ensure_grad().data();
  sink.assign(node.parents[i]->data.size(), 0.0);
  return sink.data();
}

void check_lengths(std::span<const double> a, std::span<const double> b, std::span<double> h, std::size_t lanes) {
  if (lanes == 0 || a.size() != b.size() || a.size() != h.size() || a.size() % lanes != 0) {
    throw std::invalid_argument("recurrence: coefficient, input and output lengths must agree");
  }
}

}  // namespace

void recurrence_sequential(std::span<const double> a, std::span<const double> b, std::span<double> h,
                           std::size_t lanes) {
  check_lengths(a, b, h, lanes);
  const std::size_t len = a.size() / lanes;
  for (std::size_t j = 0; j < lanes && len > 0; ++j) h[j] = b[j];
  for (std::size_t k = 1; k < len; ++k) {
    const std::size_t row = k * lanes;
    for (std::size_t j = 0; j < lanes; ++j) h[row + j] = a[row + j] * h[row - lanes + j] + b[row + j];
  }
}

void recurrence_parallel(std::span<const double> a, std::span<const double> b, std::span<double> h,
                         std::size_t lanes) {
  check_lengths(a, b, h, lanes);
  const std::size_t len = a.size() / lanes;
  if (len == 0) return;
  const std::size_t padded = std::bit_ceil(len);

  // Tree of affine maps; padding uses the identity element (1, 0).
  std::vector<double> ta(padded * lanes, 1.0);
  std::vector<double> tb(padded * lanes, 0.0);
  std::copy(a.begin(), a.end(), ta.begin());
  std::copy(b.begin(), b.end(), tb.begin());

  // (a1, b1) o (a2, b2): apply 1 first, then 2.
  auto combine_into = [&](std::size_t left, std::size_t right) {
    for (std::size_t j = 0; j < lanes; ++j) {
      const double a1 = ta[left * lanes + j], b1 = tb[left * lanes + j];
      double& a2 = ta[right * lanes + j];
      double& b2 = tb[right * lanes + j];
      b2 = a2 * b1 + b2;
      a2 = a1 * a2;
    }
  };

  for (std::size_t d = 1; d < padded; d *= 2) {
    for (std::size_t i = 2 * d - 1; i < padded; i += 2 * d) combine_into(i - d, i);
  }

  for (std::size_t j = 0; j < lanes; ++j) {
    ta[(padded - 1) * lanes + j] = 1.0;
    tb[(padded - 1) * lanes + j] = 0.0;
  }
  for (std::size_t d = padded / 2; d >= 1; d /= 2) {
    for (std::size_t i = 2 * d - 1; i < padded; i += 2 * d) {
      const std::size_t l = i - d;
      for (std::size_t j = 0; j < lanes; ++j) {
        const double left_a = ta[l * lanes + j], left_b = tb[l * lanes + j];
        const double pre_a = ta[i * lanes + j], pre_b = tb[i * lanes + j];
        ta[l * lanes + j] = pre_a;
        tb[l * lanes + j] = pre_b;
        // prefix o left-subtree total
        ta[i * lanes + j] = pre_a * left_a;
        tb[i * lanes + j] = left_a * pre_b + left_b;
      }
    }
    if (d == 1) break;
  }

  // Inclusive state from the exclusive prefix applied to h[-1] = 0.
  for (std::size_t k = 0; k < len; ++k) {
    for (std::size_t j = 0; j < lanes; ++j) {
      const std::size_t e = k * lanes + j;
      h[e] = a[e] * tb[e] + b[e];
    }
  }
}

Tensor selective_scan(const Tensor& u, const Tensor& delta, const Tensor& A, const Tensor& Bm, const Tensor& Cm,
                      const Tensor& D, ScanMode mode) {
  if (u.rank() != 3) throw ShapeError("selective_scan: u must be [B,L,C], got " + diffkit::to_string(u.shape()));
  const std::size_t bs = u.dim(0), len = u.dim(1), ch = u.dim(2);
  if (A.rank() != 2 || A.dim(0) != ch) throw ShapeError("selective_scan: A must be [C,N], got " + diffkit::to_string(A.shape()));
  const std::size_t ns = A.dim(1);
  if (delta.shape() != u.shape()) throw ShapeError("selective_scan: delta shape " + diffkit::to_string(delta.shape()) + " differs from u " + diffkit::to_string(u.shape()));
  const Shape bc_shape{bs, len, ns};
  if (Bm.shape() != bc_shape) throw ShapeError("selective_scan: B must be " + diffkit::to_string(bc_shape) + ", got " + diffkit::to_string(Bm.shape()));
  if (Cm.shape() != bc_shape) throw ShapeError("selective_scan: C must be " + diffkit::to_string(bc_shape) + ", got " + diffkit::to_string(Cm.shape()));
  if (D.shape() != Shape{ch}) throw ShapeError("selective_scan: D must be [C], got " + diffkit::to_string(D.shape()));

  const auto uv = u.data();
  const auto dv = delta.data();
  const auto av = A.data();
  const auto bv = Bm.data();
  const auto cv = Cm.data();
  const auto skip = D.data();

  const bool keep_states = diffkit::grad_enabled() &&
                           (u.requires_grad() || delta.requires_grad() || A.requires_grad() ||
                            Bm.requires_grad() || Cm.requires_grad() || D.requires_grad());
  // States are kept token-major, [L, C, N] per batch element, for the backward
  // pass. One buffer per element keeps each allocation small enough to be
  // reused from the heap instead of being mapped afresh on every call.
  std::vector<Storage> states(keep_states ? bs : 0);
  for (auto& s : states) s.resize(len * ch * ns);
  Storage out(bs * len * ch);
  auto non_finite = [](std::size_t b, std::size_t k, std::size_t c) {
    return std::runtime_error("selective_scan: non-finite state at batch " + std::to_string(b) + ", position " +
                              std::to_string(k) + ", channel " + std::to_string(c));
  };
  if (mode == ScanMode::sequential) {
    // Fused recurrence, token by token: u, delta, B and C are read
    // contiguously and the C*N states of one sequence stay in cache.
    std::vector<double> h(ch * ns), abar(ch * ns);
    for (std::size_t b = 0; b < bs; ++b) {
      std::fill(h.begin(), h.end(), 0.0);
      for (std::size_t k = 0; k < len; ++k) {
        const std::size_t tok0 = (b * len + k) * ch;
        transition(dv.data() + tok0, av.data(), ch, ns, abar.data());
        const double* brow = bv.data() + (b * len + k) * ns;
        const double* crow = cv.data() + (b * len + k) * ns;
        for (std::size_t c = 0; c < ch; ++c) {
          const double dt = dv[tok0 + c], ut = uv[tok0 + c];
          const double* ab = abar.data() + c * ns;
          double* hc = h.data() + c * ns;
          double y = 0.0;
#pragma omp simd reduction(+ : y)
          for (std::size_t n = 0; n < ns; ++n) {
            const double hn = ab[n] * hc[n] + dt * brow[n] * ut;
            hc[n] = hn;
            y += crow[n] * hn;
          }
          y += skip[c] * ut;
          if (!std::isfinite(y)) throw non_finite(b, k, c);
          out[tok0 + c] = y;
        }
        if (keep_states) std::copy(h.begin(), h.end(), states[b].begin() + k * ch * ns);
      }
    }
  } else {
    // One channel at a time through the prefix scan over all L positions.
    std::vector<double> abar(len * ns), bbar(len * ns), h(len * ns);
    for (std::size_t b = 0; b < bs; ++b) {
      for (std::size_t c = 0; c < ch; ++c) {
        for (std::size_t k = 0; k < len; ++k) {
          const std::size_t tok = (b * len + k) * ch + c;
          const double dt = dv[tok];
          for (std::size_t n = 0; n < ns; ++n) {
            abar[k * ns + n] = dt * av[c * ns + n];
            bbar[k * ns + n] = dt * bv[(b * len + k) * ns + n] * uv[tok];
          }
        }
        diffkit::detail::exp_inplace(abar.data(), abar.size());
        recurrence_parallel(abar, bbar, h, ns);
        for (std::size_t k = 0; k < len; ++k) {
          const std::size_t tok = (b * len + k) * ch + c;
          double y = 0.0;
          for (std::size_t n = 0; n < ns; ++n) y += cv[(b * len + k) * ns + n] * h[k * ns + n];
          y += skip[c] * uv[tok];
          if (!std::isfinite(y)) throw non_finite(b, k, c);
          out[tok] = y;
          if (keep_states) std::copy(h.begin() + k * ns, h.begin() + (k + 1) * ns, states[b].begin() + (k * ch + c) * ns);
        }
      }
    }
  }

  return diffkit::make_result(
      u.shape(), std::move(out), {u, delta, A, Bm, Cm, D},
      [bs, len, ch, ns, states = std::move(states)](Node& node) {
        std::vector<double> sinks[6];
        double* gu = grad_or_sink(node, 0, sinks[0]);
        double* gdelta = grad_or_sink(node, 1, sinks[1]);
        double* gA = grad_or_sink(node, 2, sinks[2]);
        double* gB = grad_or_sink(node, 3, sinks[3]);
        double* gC = grad_or_sink(node, 4, sinks[4]);
        double* gD = grad_or_sink(node, 5, sinks[5]);
        const auto& uv = node.parents[0]->data;
        const auto& dv = node.parents[1]->data;
        const auto& av = node.parents[2]->data;
        const auto& bv = node.parents[3]->data;
        const auto& cv = node.parents[4]->data;
        const auto& skip = node.parents[5]->data;
        // carry = dL/dh[k] flowing back from position k + 1, for every (c, n).
        std::vector<double> carry(ch * ns), abar(ch * ns);
        const std::vector<double> zeros(ch * ns, 0.0);

        for (std::size_t b = 0; b < bs; ++b) {
          std::fill(carry.begin(), carry.end(), 0.0);
          for (std::size_t k = len; k-- > 0;) {
            const std::size_t tok0 = (b * len + k) * ch;
            const std::size_t row = (b * len + k) * ns;
            const double* hk_all = states[b].data() + k * ch * ns;
            const double* hprev_all = k > 0 ? hk_all - ch * ns : zeros.data();
            const double* brow = bv.data() + row;
            const double* crow = cv.data() + row;
            double* gbrow = gB + row;
            double* gcrow = gC + row;
            transition(dv.data() + tok0, av.data(), ch, ns, abar.data());
            for (std::size_t c = 0; c < ch; ++c) {
              const std::size_t tok = tok0 + c;
              const double g = node.grad[tok];
              const double ut = uv[tok];
              const double dt = dv[tok];
              const double* hk = hk_all + c * ns;
              const double* hp = hprev_all + c * ns;
              const double* ab = abar.data() + c * ns;
              const double* a_c = av.data() + c * ns;
              double* ga_c = gA + c * ns;
              double* cr = carry.data() + c * ns;
              double ddelta = 0.0, dbu = 0.0;
#pragma omp simd reduction(+ : ddelta, dbu)
              for (std::size_t n = 0; n < ns; ++n) {
                const double dh = g * crow[n] + cr[n];
                const double ah = hp[n] * ab[n];
                gcrow[n] += g * hk[n];
                ddelta += dh * (ah * a_c[n] + brow[n] * ut);
                ga_c[n] += dh * ah * dt;
                gbrow[n] += dh * dt * ut;
                dbu += dh * brow[n];
                cr[n] = dh * ab[n];
              }
              gD[c] += g * ut;
              gdelta[tok] += ddelta;
              gu[tok] += g * skip[c] + dt * dbu;
            }
          }
        }
      });
}

}  // namespace zigma::ssm
