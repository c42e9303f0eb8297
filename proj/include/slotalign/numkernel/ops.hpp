#pragma once

// Differentiable primitives over Graph<T>. Each op has a plain kernel in
// `kernels::` (usable without a tape) and a recording wrapper that attaches
// the backward rule.

#include <Eigen/Core>
#include <cmath>
#include <cstddef>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "slotalign/error.hpp"
#include "slotalign/numkernel/graph.hpp"
#include "slotalign/numkernel/tensor.hpp"

namespace slotalign::nk {

// Additive score for disallowed attention pairs. exp(kMaskedScore - max)
// underflows to exactly zero in both float and double.
inline constexpr double kMaskedScore = -1e30;
inline constexpr double kLayerNormEps = 1e-5;

namespace detail {

template <typename T>
using RowMat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename T>
using MapMat = Eigen::Map<RowMat<T>>;
template <typename T>
using MapConstMat = Eigen::Map<const RowMat<T>>;
template <typename T>
using StridedConst = Eigen::Map<const RowMat<T>, 0, Eigen::OuterStride<>>;
template <typename T>
using Strided = Eigen::Map<RowMat<T>, 0, Eigen::OuterStride<>>;

template <typename T>
MapConstMat<T> as_mat(const Tensor<T>& t) {
  return MapConstMat<T>(t.data(), static_cast<Eigen::Index>(t.rows()),
                        static_cast<Eigen::Index>(t.cols()));
}
template <typename T>
MapMat<T> as_mat(Tensor<T>& t) {
  return MapMat<T>(t.data(), static_cast<Eigen::Index>(t.rows()),
                   static_cast<Eigen::Index>(t.cols()));
}

inline void require(bool ok, const std::string& what) {
  if (!ok) throw InvalidInput(what);
}

template <typename T>
void require_matrix(const Tensor<T>& t, const char* op) {
  require(t.rank() == 2, std::string(op) + ": expected a matrix, got " + shape_str(t.shape()));
}

}  // namespace detail

namespace kernels {

template <typename T>
Tensor<T> matmul(const Tensor<T>& a, const Tensor<T>& b) {
  detail::require_matrix(a, "matmul");
  detail::require_matrix(b, "matmul");
  detail::require(a.cols() == b.rows(), "matmul: inner extents differ " + shape_str(a.shape()) +
                                            " vs " + shape_str(b.shape()));
  auto out = Tensor<T>::matrix(a.rows(), b.cols());
  if (out.size()) detail::as_mat(out).noalias() = detail::as_mat(a) * detail::as_mat(b);
  return out;
}

template <typename T>
Tensor<T> softmax_rows(const Tensor<T>& x) {
  detail::require(!x.empty() && x.cols() >= 1, "softmax_rows: empty tensor");
  Tensor<T> out(x.shape());
  const std::size_t c = x.cols();
  for (std::size_t r = 0; r < x.rows(); ++r) {
    const T* in = x.data() + r * c;
    T* o = out.data() + r * c;
    T mx = in[0];
    for (std::size_t j = 1; j < c; ++j) mx = std::max(mx, in[j]);
    T sum = 0;
    for (std::size_t j = 0; j < c; ++j) {
      o[j] = std::exp(in[j] - mx);
      sum += o[j];
    }
    for (std::size_t j = 0; j < c; ++j) o[j] /= sum;
  }
  return out;
}

template <typename T>
Tensor<T> layer_norm(const Tensor<T>& x, const Tensor<T>& gamma, const Tensor<T>& beta,
                     Tensor<T>* xhat_out = nullptr, std::vector<T>* rstd_out = nullptr) {
  const std::size_t d = x.cols();
  detail::require(d >= 2, "layer_norm: feature width must be at least 2");
  detail::require(gamma.size() == d && beta.size() == d, "layer_norm: affine width mismatch");
  Tensor<T> out(x.shape());
  if (xhat_out) *xhat_out = Tensor<T>(x.shape());
  if (rstd_out) rstd_out->assign(x.rows(), T(0));
  for (std::size_t r = 0; r < x.rows(); ++r) {
    const T* in = x.data() + r * d;
    T mean = 0;
    for (std::size_t j = 0; j < d; ++j) mean += in[j];
    mean /= T(d);
    T var = 0;
    for (std::size_t j = 0; j < d; ++j) var += (in[j] - mean) * (in[j] - mean);
    var /= T(d);
    const T rstd = T(1) / std::sqrt(var + T(kLayerNormEps));
    for (std::size_t j = 0; j < d; ++j) {
      const T xh = (in[j] - mean) * rstd;
      if (xhat_out) (*xhat_out)[r * d + j] = xh;
      out[r * d + j] = gamma[j] * xh + beta[j];
    }
    if (rstd_out) (*rstd_out)[r] = rstd;
  }
  return out;
}

template <typename T>
Tensor<T> embedding(const Tensor<T>& table, std::span<const int> ids) {
  detail::require_matrix(table, "embedding");
  const std::size_t d = table.cols();
  auto out = Tensor<T>::matrix(ids.size(), d);
  for (std::size_t i = 0; i < ids.size(); ++i) {
    if (ids[i] < 0 || static_cast<std::size_t>(ids[i]) >= table.rows()) {
      throw InvalidInput("embedding: id " + std::to_string(ids[i]) + " outside table of " +
                         std::to_string(table.rows()) + " rows");
    }
    std::copy_n(table.data() + static_cast<std::size_t>(ids[i]) * d, d, out.data() + i * d);
  }
  return out;
}

inline void check_mask(const BoolMask& allow, std::size_t tq, std::size_t tk) {
  if (allow.rows() != tq || allow.cols() != tk) {
    throw InvalidMask("attention mask is " + std::to_string(allow.rows()) + "x" +
                      std::to_string(allow.cols()) + ", expected " + std::to_string(tq) + "x" +
                      std::to_string(tk));
  }
  for (std::size_t i = 0; i < tq; ++i) {
    if (allow.row_count(i) == 0) {
      throw InvalidMask("attention mask row " + std::to_string(i) + " allows no positions");
    }
  }
}

// Multi-head scaled dot-product attention. Heads are contiguous column blocks
// of q, k and v. `probs`, when given, receives the per-head weight matrices
// (heads x Tq x Tk) for the backward pass.
template <typename T>
Tensor<T> attention(const Tensor<T>& q, const Tensor<T>& k, const Tensor<T>& v,
                    const BoolMask& allow, std::size_t n_heads,
                    std::vector<T>* probs = nullptr) {
  detail::require_matrix(q, "attention");
  detail::require_matrix(k, "attention");
  detail::require_matrix(v, "attention");
  const std::size_t tq = q.rows(), tk = k.rows(), d = q.cols();
  detail::require(k.cols() == d && v.cols() == d && v.rows() == tk,
                  "attention: q/k/v shapes disagree");
  detail::require(n_heads >= 1 && d % n_heads == 0, "attention: width not divisible by heads");
  detail::require(tq >= 1 && tk >= 1, "attention: empty sequence");
  check_mask(allow, tq, tk);

  const std::size_t dh = d / n_heads;
  const T scale = T(1) / std::sqrt(T(dh));
  auto out = Tensor<T>::matrix(tq, d);
  if (probs) probs->assign(n_heads * tq * tk, T(0));
  detail::RowMat<T> s(static_cast<Eigen::Index>(tq), static_cast<Eigen::Index>(tk));
  const auto ei = [](std::size_t n) { return static_cast<Eigen::Index>(n); };
  for (std::size_t h = 0; h < n_heads; ++h) {
    detail::StridedConst<T> qh(q.data() + h * dh, ei(tq), ei(dh), Eigen::OuterStride<>(ei(d)));
    detail::StridedConst<T> kh(k.data() + h * dh, ei(tk), ei(dh), Eigen::OuterStride<>(ei(d)));
    detail::StridedConst<T> vh(v.data() + h * dh, ei(tk), ei(dh), Eigen::OuterStride<>(ei(d)));
    detail::Strided<T> oh(out.data() + h * dh, ei(tq), ei(dh), Eigen::OuterStride<>(ei(d)));
    s.noalias() = (qh * kh.transpose()) * scale;
    for (std::size_t i = 0; i < tq; ++i) {
      T* row = s.data() + i * tk;
      for (std::size_t j = 0; j < tk; ++j) {
        if (!allow(i, j)) row[j] += T(kMaskedScore);
      }
      T mx = row[0];
      for (std::size_t j = 1; j < tk; ++j) mx = std::max(mx, row[j]);
      T sum = 0;
      for (std::size_t j = 0; j < tk; ++j) {
        row[j] = std::exp(row[j] - mx);
        sum += row[j];
      }
      for (std::size_t j = 0; j < tk; ++j) row[j] /= sum;
    }
    oh.noalias() = s * vh;
    if (probs) std::copy_n(s.data(), tq * tk, probs->data() + h * tq * tk);
  }
  return out;
}

// Mean negative log-likelihood over masked rows. Unmasked rows are never read.
template <typename T>
T slot_cross_entropy(const Tensor<T>& logits, std::span<const int> targets,
                     std::span<const bool> mask, Tensor<T>* dlogits = nullptr) {
  detail::require_matrix(logits, "slot_cross_entropy");
  const std::size_t rows = logits.rows(), c = logits.cols();
  detail::require(targets.size() == rows && mask.size() == rows,
                  "slot_cross_entropy: targets/mask length differs from logits rows");
  std::size_t n = 0;
  for (std::size_t i = 0; i < rows; ++i) {
    if (!mask[i]) continue;
    ++n;
    if (targets[i] < 0 || static_cast<std::size_t>(targets[i]) >= c) {
      throw InvalidInput("slot_cross_entropy: target " + std::to_string(targets[i]) +
                         " outside [0, " + std::to_string(c) + ")");
    }
  }
  if (n == 0) throw InvalidInput("slot_cross_entropy: mask selects no positions");
  if (dlogits) *dlogits = Tensor<T>(logits.shape());
  const T inv_n = T(1) / T(n);
  T total = 0;
  for (std::size_t i = 0; i < rows; ++i) {
    if (!mask[i]) continue;
    const T* row = logits.data() + i * c;
    T mx = row[0];
    for (std::size_t j = 1; j < c; ++j) mx = std::max(mx, row[j]);
    T sum = 0;
    for (std::size_t j = 0; j < c; ++j) sum += std::exp(row[j] - mx);
    const T lse = mx + std::log(sum);
    total += lse - row[targets[i]];
    if (dlogits) {
      T* g = dlogits->data() + i * c;
      for (std::size_t j = 0; j < c; ++j) g[j] = std::exp(row[j] - lse) * inv_n;
      g[targets[i]] -= inv_n;
    }
  }
  return total * inv_n;
}

}  // namespace kernels

// ---------------------------------------------------------------------------
// Recording ops
// ---------------------------------------------------------------------------

template <typename T>
Var matmul(Graph<T>& g, Var a, Var b) {
  auto out = kernels::matmul(g.value(a), g.value(b));
  return g.record(std::move(out), {a, b}, "matmul", [&g, a, b, o = Var{g.size()}] {
    const auto go = detail::as_mat(g.grad(o));
    if (g.needs_grad(a)) detail::as_mat(g.grad_mut(a)).noalias() += go * detail::as_mat(g.value(b)).transpose();
    if (g.needs_grad(b)) detail::as_mat(g.grad_mut(b)).noalias() += detail::as_mat(g.value(a)).transpose() * go;
  });
}

// x[T x in] * w[in x out] + bias[out]
template <typename T>
Var linear(Graph<T>& g, Var x, Var w, Var bias) {
  auto out = kernels::matmul(g.value(x), g.value(w));
  const auto& b = g.value(bias);
  detail::require(b.size() == out.cols(), "linear: bias width mismatch");
  for (std::size_t r = 0; r < out.rows(); ++r)
    for (std::size_t c = 0; c < out.cols(); ++c) out(r, c) += b[c];
  return g.record(std::move(out), {x, w, bias}, "linear", [&g, x, w, bias, o = Var{g.size()}] {
    const auto go = detail::as_mat(g.grad(o));
    if (g.needs_grad(x)) detail::as_mat(g.grad_mut(x)).noalias() += go * detail::as_mat(g.value(w)).transpose();
    if (g.needs_grad(w)) detail::as_mat(g.grad_mut(w)).noalias() += detail::as_mat(g.value(x)).transpose() * go;
    if (g.needs_grad(bias)) {
      auto& gb = g.grad_mut(bias);
      const auto& gt = g.grad(o);
      for (std::size_t r = 0; r < gt.rows(); ++r)
        for (std::size_t c = 0; c < gt.cols(); ++c) gb[c] += gt(r, c);
    }
  });
}

template <typename T>
Var add(Graph<T>& g, Var a, Var b) {
  const auto& va = g.value(a);
  const auto& vb = g.value(b);
  detail::require(va.shape() == vb.shape(), "add: shape mismatch " + shape_str(va.shape()) +
                                                " vs " + shape_str(vb.shape()));
  Tensor<T> out = va;
  for (std::size_t i = 0; i < out.size(); ++i) out[i] += vb[i];
  return g.record(std::move(out), {a, b}, "add", [&g, a, b, o = Var{g.size()}] {
    const auto& go = g.grad(o);
    for (Var in : {a, b}) {
      if (!g.needs_grad(in)) continue;
      auto& gi = g.grad_mut(in);
      for (std::size_t i = 0; i < gi.size(); ++i) gi[i] += go[i];
    }
  });
}

// Rows [begin, begin + count) of a matrix.
template <typename T>
Var slice_rows(Graph<T>& g, Var x, std::size_t begin, std::size_t count) {
  const auto& vx = g.value(x);
  detail::require_matrix(vx, "slice_rows");
  if (begin + count > vx.rows()) {
    throw CapacityError("slice_rows: rows [" + std::to_string(begin) + ", " +
                        std::to_string(begin + count) + ") exceed " + std::to_string(vx.rows()));
  }
  const std::size_t d = vx.cols();
  auto out = Tensor<T>::matrix(count, d);
  std::copy_n(vx.data() + begin * d, count * d, out.data());
  return g.record(std::move(out), {x}, "slice_rows", [&g, x, begin, o = Var{g.size()}] {
    const auto& go = g.grad(o);
    auto& gx = g.grad_mut(x);
    for (std::size_t i = 0; i < go.size(); ++i) gx[begin * go.cols() + i] += go[i];
  });
}

template <typename T>
Var concat_rows(Graph<T>& g, Var a, Var b) {
  const auto& va = g.value(a);
  const auto& vb = g.value(b);
  detail::require(va.cols() == vb.cols(), "concat_rows: width mismatch");
  auto out = Tensor<T>::matrix(va.rows() + vb.rows(), va.cols());
  std::copy_n(va.data(), va.size(), out.data());
  std::copy_n(vb.data(), vb.size(), out.data() + va.size());
  return g.record(std::move(out), {a, b}, "concat_rows", [&g, a, b, o = Var{g.size()}] {
    const auto& go = g.grad(o);
    const std::size_t na = g.value(a).size();
    if (g.needs_grad(a)) {
      auto& ga = g.grad_mut(a);
      for (std::size_t i = 0; i < na; ++i) ga[i] += go[i];
    }
    if (g.needs_grad(b)) {
      auto& gb = g.grad_mut(b);
      for (std::size_t i = 0; i < gb.size(); ++i) gb[i] += go[na + i];
    }
  });
}

// Rotary position code: inside each head, the column pair (2i, 2i+1) of row
// r is rotated by (offset + r) * base^(-2i / head_width).
template <typename T>
Var rotary(Graph<T>& g, Var x, std::size_t n_heads, double base = 10000.0, std::size_t offset = 0) {
  const auto& vx = g.value(x);
  detail::require_matrix(vx, "rotary");
  const std::size_t d = vx.cols();
  detail::require(n_heads >= 1 && d % n_heads == 0 && (d / n_heads) % 2 == 0,
                  "rotary: head width must be even");
  const std::size_t dh = d / n_heads, half = dh / 2;
  std::vector<T> cs(vx.rows() * half), sn(vx.rows() * half);
  for (std::size_t r = 0; r < vx.rows(); ++r) {
    for (std::size_t i = 0; i < half; ++i) {
      const double a = static_cast<double>(offset + r) * std::pow(base, -2.0 * static_cast<double>(i) / static_cast<double>(dh));
      cs[r * half + i] = static_cast<T>(std::cos(a));
      sn[r * half + i] = static_cast<T>(std::sin(a));
    }
  }
  Tensor<T> out(vx.shape());
  for (std::size_t r = 0; r < vx.rows(); ++r) {
    for (std::size_t h = 0; h < n_heads; ++h) {
      for (std::size_t i = 0; i < half; ++i) {
        const std::size_t j = r * d + h * dh + 2 * i;
        const T c = cs[r * half + i], s = sn[r * half + i];
        out[j] = vx[j] * c - vx[j + 1] * s;
        out[j + 1] = vx[j] * s + vx[j + 1] * c;
      }
    }
  }
  return g.record(std::move(out), {x}, "rotary",
                  [&g, x, n_heads, d, dh, half, cs = std::move(cs), sn = std::move(sn), o = Var{g.size()}] {
                    const auto& go = g.grad(o);
                    auto& gx = g.grad_mut(x);
                    for (std::size_t r = 0; r < go.rows(); ++r) {
                      for (std::size_t h = 0; h < n_heads; ++h) {
                        for (std::size_t i = 0; i < half; ++i) {
                          const std::size_t j = r * d + h * dh + 2 * i;
                          const T c = cs[r * half + i], s = sn[r * half + i];
                          gx[j] += go[j] * c + go[j + 1] * s;
                          gx[j + 1] += go[j + 1] * c - go[j] * s;
                        }
                      }
                    }
                  });
}

// Tanh-approximated GELU.
template <typename T>
Var gelu(Graph<T>& g, Var x) {
  constexpr double kC = 0.7978845608028654;  // sqrt(2/pi)
  constexpr double kA = 0.044715;
  const auto& vx = g.value(x);
  Tensor<T> out(vx.shape());
  for (std::size_t i = 0; i < vx.size(); ++i) {
    const T v = vx[i];
    out[i] = T(0.5) * v * (T(1) + std::tanh(T(kC) * (v + T(kA) * v * v * v)));
  }
  return g.record(std::move(out), {x}, "gelu", [&g, x, o = Var{g.size()}] {
    const auto& vx = g.value(x);
    const auto& go = g.grad(o);
    auto& gx = g.grad_mut(x);
    for (std::size_t i = 0; i < vx.size(); ++i) {
      const T v = vx[i];
      const T t = std::tanh(T(kC) * (v + T(kA) * v * v * v));
      const T dt = (T(1) - t * t) * T(kC) * (T(1) + T(3 * kA) * v * v);
      gx[i] += go[i] * (T(0.5) * (T(1) + t) + T(0.5) * v * dt);
    }
  });
}

template <typename T>
Var softmax_rows(Graph<T>& g, Var x) {
  auto out = kernels::softmax_rows(g.value(x));
  return g.record(std::move(out), {x}, "softmax_rows", [&g, x, o = Var{g.size()}] {
    const auto& y = g.value(o);
    const auto& go = g.grad(o);
    auto& gx = g.grad_mut(x);
    const std::size_t c = y.cols();
    for (std::size_t r = 0; r < y.rows(); ++r) {
      T dot = 0;
      for (std::size_t j = 0; j < c; ++j) dot += go[r * c + j] * y[r * c + j];
      for (std::size_t j = 0; j < c; ++j) gx[r * c + j] += y[r * c + j] * (go[r * c + j] - dot);
    }
  });
}

template <typename T>
Var layer_norm(Graph<T>& g, Var x, Var gamma, Var beta) {
  Tensor<T> xhat;
  std::vector<T> rstd;
  auto out = kernels::layer_norm(g.value(x), g.value(gamma), g.value(beta),
                                 g.recording() ? &xhat : nullptr,
                                 g.recording() ? &rstd : nullptr);
  return g.record(std::move(out), {x, gamma, beta}, "layer_norm",
                  [&g, x, gamma, beta, o = Var{g.size()}, xhat = std::move(xhat),
                   rstd = std::move(rstd)] {
                    const auto& go = g.grad(o);
                    const auto& gm = g.value(gamma);
                    const std::size_t d = go.cols();
                    std::vector<T> dxh(d);
                    for (std::size_t r = 0; r < go.rows(); ++r) {
                      const T* gr = go.data() + r * d;
                      const T* xr = xhat.data() + r * d;
                      if (g.needs_grad(gamma)) {
                        auto& gg = g.grad_mut(gamma);
                        for (std::size_t j = 0; j < d; ++j) gg[j] += gr[j] * xr[j];
                      }
                      if (g.needs_grad(beta)) {
                        auto& gb = g.grad_mut(beta);
                        for (std::size_t j = 0; j < d; ++j) gb[j] += gr[j];
                      }
                      if (!g.needs_grad(x)) continue;
                      T sum = 0, sum_xh = 0;
                      for (std::size_t j = 0; j < d; ++j) {
                        dxh[j] = gr[j] * gm[j];
                        sum += dxh[j];
                        sum_xh += dxh[j] * xr[j];
                      }
                      T* gx = g.grad_mut(x).data() + r * d;
                      const T k = rstd[r] / T(d);
                      for (std::size_t j = 0; j < d; ++j)
                        gx[j] += k * (T(d) * dxh[j] - sum - xr[j] * sum_xh);
                    }
                  });
}

template <typename T>
Var embedding(Graph<T>& g, Var table, std::vector<int> ids) {
  auto out = kernels::embedding(g.value(table), ids);
  return g.record(std::move(out), {table}, "embedding",
                  [&g, table, ids = std::move(ids), o = Var{g.size()}] {
                    const auto& go = g.grad(o);
                    auto& gt = g.grad_mut(table);
                    const std::size_t d = go.cols();
                    for (std::size_t i = 0; i < ids.size(); ++i) {
                      T* dst = gt.data() + static_cast<std::size_t>(ids[i]) * d;
                      for (std::size_t j = 0; j < d; ++j) dst[j] += go[i * d + j];
                    }
                  });
}

template <typename T>
Var attention(Graph<T>& g, Var q, Var k, Var v, const BoolMask& allow, std::size_t n_heads) {
  std::vector<T> probs;
  auto out = kernels::attention(g.value(q), g.value(k), g.value(v), allow, n_heads,
                                g.recording() ? &probs : nullptr);
  return g.record(
      std::move(out), {q, k, v}, "attention",
      [&g, q, k, v, n_heads, probs = std::move(probs), o = Var{g.size()}] {
        const auto ei = [](std::size_t n) { return static_cast<Eigen::Index>(n); };
        const auto& go = g.grad(o);
        const std::size_t tq = go.rows(), tk = g.value(k).rows(), d = go.cols();
        const std::size_t dh = d / n_heads;
        const T scale = T(1) / std::sqrt(T(dh));
        const bool need_q = g.needs_grad(q), need_k = g.needs_grad(k), need_v = g.needs_grad(v);
        detail::RowMat<T> dp(ei(tq), ei(tk));
        for (std::size_t h = 0; h < n_heads; ++h) {
          const auto stride = Eigen::OuterStride<>(ei(d));
          Eigen::Map<const detail::RowMat<T>> p(probs.data() + h * tq * tk, ei(tq), ei(tk));
          detail::StridedConst<T> goh(go.data() + h * dh, ei(tq), ei(dh), stride);
          detail::StridedConst<T> qh(g.value(q).data() + h * dh, ei(tq), ei(dh), stride);
          detail::StridedConst<T> kh(g.value(k).data() + h * dh, ei(tk), ei(dh), stride);
          detail::StridedConst<T> vh(g.value(v).data() + h * dh, ei(tk), ei(dh), stride);
          if (need_v) {
            detail::Strided<T> gv(g.grad_mut(v).data() + h * dh, ei(tk), ei(dh), stride);
            gv.noalias() += p.transpose() * goh;
          }
          if (!need_q && !need_k) continue;
          dp.noalias() = goh * vh.transpose();
          for (std::size_t i = 0; i < tq; ++i) {
            T dot = 0;
            for (std::size_t j = 0; j < tk; ++j) dot += dp(ei(i), ei(j)) * p(ei(i), ei(j));
            for (std::size_t j = 0; j < tk; ++j)
              dp(ei(i), ei(j)) = p(ei(i), ei(j)) * (dp(ei(i), ei(j)) - dot) * scale;
          }
          if (need_q) {
            detail::Strided<T> gq(g.grad_mut(q).data() + h * dh, ei(tq), ei(dh), stride);
            gq.noalias() += dp * kh;
          }
          if (need_k) {
            detail::Strided<T> gk(g.grad_mut(k).data() + h * dh, ei(tk), ei(dh), stride);
            gk.noalias() += dp.transpose() * qh;
          }
        }
      });
}

// Single-head form.
template <typename T>
Var masked_attention(Graph<T>& g, Var q, Var k, Var v, const BoolMask& allow) {
  return attention(g, q, k, v, allow, 1);
}

template <typename T>
Var slot_cross_entropy(Graph<T>& g, Var logits, std::vector<int> targets, std::vector<bool> mask) {
  Tensor<T> dl;
  std::vector<int> tgt = targets;
  // std::vector<bool> has no contiguous storage; copy into a plain array.
  std::unique_ptr<bool[]> m(new bool[mask.size()]);
  for (std::size_t i = 0; i < mask.size(); ++i) m[i] = mask[i];
  const T loss = kernels::slot_cross_entropy(g.value(logits), std::span<const int>(tgt),
                                             std::span<const bool>(m.get(), mask.size()),
                                             g.recording() ? &dl : nullptr);
  return g.record(Tensor<T>::scalar(loss), {logits}, "slot_cross_entropy",
                  [&g, logits, dl = std::move(dl), o = Var{g.size()}] {
                    const T s = g.grad(o)[0];
                    auto& gl = g.grad_mut(logits);
                    for (std::size_t i = 0; i < gl.size(); ++i) gl[i] += s * dl[i];
                  });
}

template <typename T>
Var sum(Graph<T>& g, Var x) {
  T s = 0;
  for (T v : g.value(x).values()) s += v;
  return g.record(Tensor<T>::scalar(s), {x}, "sum", [&g, x, o = Var{g.size()}] {
    const T s = g.grad(o)[0];
    for (auto& v : g.grad_mut(x).values()) v += s;
  });
}

template <typename T>
Var scale(Graph<T>& g, Var x, T factor) {
  Tensor<T> out = g.value(x);
  for (auto& v : out.values()) v *= factor;
  return g.record(std::move(out), {x}, "scale", [&g, x, factor, o = Var{g.size()}] {
    const auto& go = g.grad(o);
    auto& gx = g.grad_mut(x);
    for (std::size_t i = 0; i < gx.size(); ++i) gx[i] += factor * go[i];
  });
}

// Elementwise product with a constant tensor; used by tests to build
// random scalar projections of an op's output.
template <typename T>
Var weighted_sum(Graph<T>& g, Var x, const Tensor<T>& weights) {
  const auto& vx = g.value(x);
  detail::require(vx.size() == weights.size(), "weighted_sum: size mismatch");
  T s = 0;
  for (std::size_t i = 0; i < vx.size(); ++i) s += vx[i] * weights[i];
  return g.record(Tensor<T>::scalar(s), {x}, "weighted_sum", [&g, x, weights, o = Var{g.size()}] {
    const T s = g.grad(o)[0];
    auto& gx = g.grad_mut(x);
    for (std::size_t i = 0; i < gx.size(); ++i) gx[i] += s * weights[i];
  });
}

}  // namespace slotalign::nk
