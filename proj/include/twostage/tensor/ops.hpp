// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <span>
#include <string>
#include <vector>

#include "twostage/tensor/autograd.hpp"

namespace twostage::tensor {

/// Label value excluded from the loss.
inline constexpr std::int32_t kIgnoreLabel = -1;

namespace kernel {

// C[m,n] += A[m,k] * B[k,n]. Inner loop is an axpy over a row of B, which keeps
// the summation order fixed regardless of vectorization.
template <typename T>
void gemm_acc(std::size_t m, std::size_t k, std::size_t n, const T* a, const T* b, T* c) {
  for (std::size_t i = 0; i < m; ++i) {
    T* crow = c + i * n;
    const T* arow = a + i * k;
    for (std::size_t p = 0; p < k; ++p) {
      const T av = arow[p];
      const T* brow = b + p * n;
      for (std::size_t j = 0; j < n; ++j) crow[j] += av * brow[j];
    }
  }
}

// out[c,r] = in[r,c]
template <typename T>
std::vector<T> transpose(std::size_t r, std::size_t c, const T* in) {
  std::vector<T> out(r * c);
  for (std::size_t i = 0; i < r; ++i)
    for (std::size_t j = 0; j < c; ++j) out[j * r + i] = in[i * c + j];
  return out;
}

}  // namespace kernel

namespace detail {

template <typename T>
void require_same_graph(const Var<T>& a, const Var<T>& b) {
  if (a.graph != b.graph) throw Error("operands live on different graphs");
}

inline Shape with_last(Shape s, std::size_t last) {
  if (s.empty()) s.push_back(last);
  else s.back() = last;
  return s;
}

}  // namespace detail

/// Matrix product of a[m,k] and b[k,n].
template <typename T>
Var<T> matmul(Var<T> a, Var<T> b) {
  detail::require_same_graph(a, b);
  const Tensor<T>& av = a.value();
  const Tensor<T>& bv = b.value();
  if (av.rank() != 2 || bv.rank() != 2 || av.dim(1) != bv.dim(0)) {
    throw DimensionError("matmul shape mismatch: " + shape_str(av.shape()) + " x " + shape_str(bv.shape()));
  }
  const std::size_t m = av.dim(0), k = av.dim(1), n = bv.dim(1);
  Tensor<T> out({m, n});
  kernel::gemm_acc(m, k, n, av.data(), bv.data(), out.data());
  const std::size_t ia = a.id, ib = b.id;
  return a.graph->push(std::move(out), {ia, ib}, [ia, ib, m, k, n](Graph<T>& g, std::size_t self) {
    const Tensor<T>& dc = *g.grad(self);
    if (g.requires_grad(ia)) {
      auto bt = kernel::transpose(k, n, g.value(ib).data());
      kernel::gemm_acc(m, n, k, dc.data(), bt.data(), g.grad_ref(ia).data());
    }
    if (g.requires_grad(ib)) {
      auto at = kernel::transpose(m, k, g.value(ia).data());
      kernel::gemm_acc(k, m, n, at.data(), dc.data(), g.grad_ref(ib).data());
    }
  });
}

/// x[..,k] times the transpose of w[n,k]; the layout used by linear layers and output projections.
template <typename T>
Var<T> matmul_bt(Var<T> x, Var<T> w) {
  detail::require_same_graph(x, w);
  const Tensor<T>& xv = x.value();
  const Tensor<T>& wv = w.value();
  if (xv.rank() < 1 || wv.rank() != 2 || xv.cols() != wv.dim(1)) {
    throw DimensionError("matmul_bt shape mismatch: " + shape_str(xv.shape()) + " x " + shape_str(wv.shape()) + "^T");
  }
  const std::size_t m = xv.rows(), k = xv.cols(), n = wv.dim(0);
  Tensor<T> out(detail::with_last(xv.shape(), n));
  auto wt = kernel::transpose(n, k, wv.data());
  kernel::gemm_acc(m, k, n, xv.data(), wt.data(), out.data());
  const std::size_t ix = x.id, iw = w.id;
  return x.graph->push(std::move(out), {ix, iw}, [ix, iw, m, k, n](Graph<T>& g, std::size_t self) {
    const Tensor<T>& dc = *g.grad(self);
    if (g.requires_grad(ix)) kernel::gemm_acc(m, n, k, dc.data(), g.value(iw).data(), g.grad_ref(ix).data());
    if (g.requires_grad(iw)) {
      auto dct = kernel::transpose(m, n, dc.data());
      kernel::gemm_acc(n, m, k, dct.data(), g.value(ix).data(), g.grad_ref(iw).data());
    }
  });
}

template <typename T>
Var<T> add(Var<T> a, Var<T> b) {
  detail::require_same_graph(a, b);
  if (a.shape() != b.shape()) {
    throw DimensionError("add shape mismatch: " + shape_str(a.shape()) + " + " + shape_str(b.shape()));
  }
  Tensor<T> out = a.value();
  const T* bp = b.value().data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] += bp[i];
  const std::size_t ia = a.id, ib = b.id;
  return a.graph->push(std::move(out), {ia, ib}, [ia, ib](Graph<T>& g, std::size_t self) {
    const Tensor<T>& d = *g.grad(self);
    for (std::size_t in : {ia, ib}) {
      if (!g.requires_grad(in)) continue;
      T* dp = g.grad_ref(in).data();
      for (std::size_t i = 0; i < d.size(); ++i) dp[i] += d[i];
    }
  });
}

template <typename T>
Var<T> mul(Var<T> a, Var<T> b) {
  detail::require_same_graph(a, b);
  if (a.shape() != b.shape()) {
    throw DimensionError("mul shape mismatch: " + shape_str(a.shape()) + " * " + shape_str(b.shape()));
  }
  Tensor<T> out = a.value();
  const T* bp = b.value().data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] *= bp[i];
  const std::size_t ia = a.id, ib = b.id;
  return a.graph->push(std::move(out), {ia, ib}, [ia, ib](Graph<T>& g, std::size_t self) {
    const Tensor<T>& d = *g.grad(self);
    if (g.requires_grad(ia)) {
      T* dp = g.grad_ref(ia).data();
      const T* o = g.value(ib).data();
      for (std::size_t i = 0; i < d.size(); ++i) dp[i] += d[i] * o[i];
    }
    if (g.requires_grad(ib)) {
      T* dp = g.grad_ref(ib).data();
      const T* o = g.value(ia).data();
      for (std::size_t i = 0; i < d.size(); ++i) dp[i] += d[i] * o[i];
    }
  });
}

template <typename T>
Var<T> scale(Var<T> x, T factor) {
  Tensor<T> out = x.value();
  for (auto& v : out.values()) v *= factor;
  const std::size_t ix = x.id;
  return x.graph->push(std::move(out), {ix}, [ix, factor](Graph<T>& g, std::size_t self) {
    const Tensor<T>& d = *g.grad(self);
    T* dp = g.grad_ref(ix).data();
    for (std::size_t i = 0; i < d.size(); ++i) dp[i] += d[i] * factor;
  });
}

/// Sum of all elements, as a scalar.
template <typename T>
Var<T> sum(Var<T> x) {
  T acc{0};
  for (T v : x.value().values()) acc += v;
  const std::size_t ix = x.id;
  return x.graph->push(Tensor<T>::scalar(acc), {ix}, [ix](Graph<T>& g, std::size_t self) {
    const T d = g.grad(self)->item();
    for (auto& v : g.grad_ref(ix).values()) v += d;
  });
}

/// Adds a bias vector b[n] to every row of x[..,n].
template <typename T>
Var<T> add_bias(Var<T> x, Var<T> b) {
  detail::require_same_graph(x, b);
  const std::size_t n = x.value().cols();
  if (b.value().rank() != 1 || b.value().size() != n) {
    throw DimensionError("add_bias shape mismatch: " + shape_str(x.shape()) + " + " + shape_str(b.shape()));
  }
  Tensor<T> out = x.value();
  const T* bp = b.value().data();
  for (std::size_t r = 0; r < out.rows(); ++r) {
    T* row = out.data() + r * n;
    for (std::size_t j = 0; j < n; ++j) row[j] += bp[j];
  }
  const std::size_t ix = x.id, ib = b.id;
  return x.graph->push(std::move(out), {ix, ib}, [ix, ib, n](Graph<T>& g, std::size_t self) {
    const Tensor<T>& d = *g.grad(self);
    if (g.requires_grad(ix)) {
      T* dp = g.grad_ref(ix).data();
      for (std::size_t i = 0; i < d.size(); ++i) dp[i] += d[i];
    }
    if (g.requires_grad(ib)) {
      T* db = g.grad_ref(ib).data();
      for (std::size_t r = 0; r < d.rows(); ++r)
        for (std::size_t j = 0; j < n; ++j) db[j] += d[r * n + j];
    }
  });
}

/// x[..,in] W^T + b with W[out,in], b[out].
template <typename T>
Var<T> linear(Var<T> x, Var<T> w, Var<T> b) {
  return add_bias(matmul_bt(x, w), b);
}

template <typename T>
Var<T> reshape(Var<T> x, Shape shape) {
  if (numel(shape) != x.value().size()) {
    throw DimensionError("cannot reshape " + shape_str(x.shape()) + " to " + shape_str(shape));
  }
  Tensor<T> out(std::move(shape), x.value().values());
  const std::size_t ix = x.id;
  return x.graph->push(std::move(out), {ix}, [ix](Graph<T>& g, std::size_t self) {
    const Tensor<T>& d = *g.grad(self);
    T* dp = g.grad_ref(ix).data();
    for (std::size_t i = 0; i < d.size(); ++i) dp[i] += d[i];
  });
}

/// Per-row normalization over the last dimension, then gain and bias.
template <typename T>
Var<T> layer_norm(Var<T> x, Var<T> gain, Var<T> bias, T eps) {
  detail::require_same_graph(x, gain);
  const std::size_t d = x.value().cols();
  if (d == 0 || gain.value().size() != d || bias.value().size() != d) {
    throw DimensionError("layer_norm shape mismatch: x " + shape_str(x.shape()) + ", gain " +
                         shape_str(gain.shape()) + ", bias " + shape_str(bias.shape()));
  }
  if (!(eps > T{0})) throw Error("layer_norm eps must be positive");
  const Tensor<T>& xv = x.value();
  const std::size_t rows = xv.rows();
  Tensor<T> out(xv.shape());
  std::vector<T> xhat(xv.size());
  std::vector<T> rstd(rows);
  const T* gp = gain.value().data();
  const T* bp = bias.value().data();
  for (std::size_t r = 0; r < rows; ++r) {
    const T* in = xv.data() + r * d;
    T mean{0};
    for (std::size_t j = 0; j < d; ++j) mean += in[j];
    mean /= static_cast<T>(d);
    T var{0};
    for (std::size_t j = 0; j < d; ++j) var += (in[j] - mean) * (in[j] - mean);
    var /= static_cast<T>(d);
    const T rs = T{1} / std::sqrt(var + eps);
    rstd[r] = rs;
    for (std::size_t j = 0; j < d; ++j) {
      const T h = (in[j] - mean) * rs;
      xhat[r * d + j] = h;
      out[r * d + j] = h * gp[j] + bp[j];
    }
  }
  const std::size_t ix = x.id, ig = gain.id, ib = bias.id;
  return x.graph->push(std::move(out), {ix, ig, ib},
                       [ix, ig, ib, d, rows, xhat = std::move(xhat), rstd = std::move(rstd)](Graph<T>& g, std::size_t self) {
    const Tensor<T>& dy = *g.grad(self);
    if (g.requires_grad(ig)) {
      T* dg = g.grad_ref(ig).data();
      for (std::size_t r = 0; r < rows; ++r)
        for (std::size_t j = 0; j < d; ++j) dg[j] += dy[r * d + j] * xhat[r * d + j];
    }
    if (g.requires_grad(ib)) {
      T* db = g.grad_ref(ib).data();
      for (std::size_t r = 0; r < rows; ++r)
        for (std::size_t j = 0; j < d; ++j) db[j] += dy[r * d + j];
    }
    if (g.requires_grad(ix)) {
      const T* gp = g.value(ig).data();
      T* dx = g.grad_ref(ix).data();
      std::vector<T> dh(d);
      for (std::size_t r = 0; r < rows; ++r) {
        T mean_dh{0}, mean_dh_h{0};
        for (std::size_t j = 0; j < d; ++j) {
          dh[j] = dy[r * d + j] * gp[j];
          mean_dh += dh[j];
          mean_dh_h += dh[j] * xhat[r * d + j];
        }
        mean_dh /= static_cast<T>(d);
        mean_dh_h /= static_cast<T>(d);
        for (std::size_t j = 0; j < d; ++j) {
          dx[r * d + j] += rstd[r] * (dh[j] - mean_dh - xhat[r * d + j] * mean_dh_h);
        }
      }
    }
  });
}

/// Exact (erf-based) GELU.
template <typename T>
Var<T> gelu(Var<T> x) {
  static const T kInvSqrt2 = T{1} / std::sqrt(T{2});
  Tensor<T> out = x.value();
  for (auto& v : out.values()) v = T{0.5} * v * (T{1} + std::erf(v * kInvSqrt2));
  const std::size_t ix = x.id;
  return x.graph->push(std::move(out), {ix}, [ix](Graph<T>& g, std::size_t self) {
    static const T kInvSqrt2Pi = T{1} / std::sqrt(T{2} * std::acos(T{-1}));
    const Tensor<T>& d = *g.grad(self);
    const T* xp = g.value(ix).data();
    T* dx = g.grad_ref(ix).data();
    for (std::size_t i = 0; i < d.size(); ++i) {
      const T v = xp[i];
      const T cdf = T{0.5} * (T{1} + std::erf(v * kInvSqrt2));
      const T pdf = kInvSqrt2Pi * std::exp(T{-0.5} * v * v);
      dx[i] += d[i] * (cdf + v * pdf);
    }
  });
}

/// Inverted dropout; the identity outside training mode or when p == 0.
template <typename T>
Var<T> dropout(Var<T> x, T p) {
  Graph<T>& graph = *x.graph;
  if (!graph.training() || p <= T{0}) return x;
  if (p >= T{1}) throw Error("dropout probability must be < 1");
  const T keep_scale = T{1} / (T{1} - p);
  std::vector<T> mask(x.value().size());
  std::bernoulli_distribution drop(static_cast<double>(p));
  for (auto& m : mask) m = drop(graph.rng()) ? T{0} : keep_scale;
  Tensor<T> out = x.value();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] *= mask[i];
  const std::size_t ix = x.id;
  return graph.push(std::move(out), {ix}, [ix, mask = std::move(mask)](Graph<T>& g, std::size_t self) {
    const Tensor<T>& d = *g.grad(self);
    T* dx = g.grad_ref(ix).data();
    for (std::size_t i = 0; i < d.size(); ++i) dx[i] += d[i] * mask[i];
  });
}

/// Row lookup: out[i,:] = table[ids[i],:], reshaped to out_shape + [d].
template <typename T>
Var<T> embedding(Var<T> table, std::span<const std::int32_t> ids, Shape out_shape) {
  const Tensor<T>& tv = table.value();
  if (tv.rank() != 2) throw DimensionError("embedding table must be 2-D, got " + shape_str(tv.shape()));
  if (numel(out_shape) != ids.size()) {
    throw DimensionError("embedding: " + std::to_string(ids.size()) + " ids for shape " + shape_str(out_shape));
  }
  const std::size_t vocab = tv.dim(0), d = tv.dim(1);
  for (std::int32_t id : ids) {
    if (id < 0 || static_cast<std::size_t>(id) >= vocab) {
      throw Error("token id " + std::to_string(id) + " out of range for vocabulary of " + std::to_string(vocab));
    }
  }
  out_shape.push_back(d);
  Tensor<T> out(std::move(out_shape));
  for (std::size_t i = 0; i < ids.size(); ++i) {
    std::copy_n(tv.data() + static_cast<std::size_t>(ids[i]) * d, d, out.data() + i * d);
  }
  const std::size_t it = table.id;
  std::vector<std::int32_t> idv(ids.begin(), ids.end());
  return table.graph->push(std::move(out), {it}, [it, d, idv = std::move(idv)](Graph<T>& g, std::size_t self) {
    const Tensor<T>& dout = *g.grad(self);
    T* dt = g.grad_ref(it).data();
    for (std::size_t i = 0; i < idv.size(); ++i) {
      T* row = dt + static_cast<std::size_t>(idv[i]) * d;
      const T* src = dout.data() + i * d;
      for (std::size_t j = 0; j < d; ++j) row[j] += src[j];
    }
  });
}

/// Gathers rows of x[..,d] (flattened leading dims) into [rows.size(), d].
template <typename T>
Var<T> select_rows(Var<T> x, std::span<const std::size_t> rows) {
  const Tensor<T>& xv = x.value();
  const std::size_t d = xv.cols();
  Tensor<T> out({rows.size(), d});
  for (std::size_t i = 0; i < rows.size(); ++i) {
    if (rows[i] >= xv.rows()) {
      throw DimensionError("select_rows index " + std::to_string(rows[i]) + " out of range for " + shape_str(xv.shape()));
    }
    std::copy_n(xv.data() + rows[i] * d, d, out.data() + i * d);
  }
  const std::size_t ix = x.id;
  std::vector<std::size_t> rv(rows.begin(), rows.end());
  return x.graph->push(std::move(out), {ix}, [ix, d, rv = std::move(rv)](Graph<T>& g, std::size_t self) {
    const Tensor<T>& dout = *g.grad(self);
    T* dx = g.grad_ref(ix).data();
    for (std::size_t i = 0; i < rv.size(); ++i)
      for (std::size_t j = 0; j < d; ++j) dx[rv[i] * d + j] += dout[i * d + j];
  });
}

struct AttentionShape {
  std::size_t batch = 1;
  std::size_t query_len = 1;
  std::size_t key_len = 1;
  std::size_t heads = 1;
  bool causal = false;
};

/// Multi-head scaled dot-product attention over already-projected q[B,Tq,d], k/v[B,Tk,d].
/// key_valid (B*Tk bytes, or empty for all-valid) excludes padded keys; causal restricts
/// query i to keys j <= i. Excluded keys are skipped, never weighted by exp(-inf).
template <typename T>
Var<T> attention(Var<T> q, Var<T> k, Var<T> v, const AttentionShape& as, std::span<const std::uint8_t> key_valid) {
  detail::require_same_graph(q, k);
  detail::require_same_graph(q, v);
  const std::size_t d = q.value().cols();
  const std::size_t B = as.batch, Tq = as.query_len, Tk = as.key_len, H = as.heads;
  if (H == 0 || d % H != 0) throw DimensionError("attention: width " + std::to_string(d) + " not divisible by heads");
  if (q.value().size() != B * Tq * d || k.value().size() != B * Tk * d || v.value().size() != B * Tk * d ||
      k.value().cols() != d || v.value().cols() != d) {
    throw DimensionError("attention shape mismatch: q " + shape_str(q.shape()) + ", k " + shape_str(k.shape()) +
                         ", v " + shape_str(v.shape()));
  }
  if (!key_valid.empty() && key_valid.size() != B * Tk) {
    throw DimensionError("attention key mask has " + std::to_string(key_valid.size()) + " entries, expected " +
                         std::to_string(B * Tk));
  }
  if (as.causal && Tq != Tk) throw DimensionError("causal attention requires equal query and key lengths");
  const std::size_t dh = d / H;
  const T scl = T{1} / std::sqrt(static_cast<T>(dh));
  std::vector<std::uint8_t> valid(key_valid.begin(), key_valid.end());
  if (valid.empty()) valid.assign(B * Tk, 1);

  // probs[b,h,i,j]; zero at excluded keys.
  std::vector<T> probs(B * H * Tq * Tk, T{0});
  Tensor<T> out({B, Tq, d});
  const T* qp = q.value().data();
  const T* kp = k.value().data();
  const T* vp = v.value().data();
  std::vector<T> scores(Tk);
  for (std::size_t b = 0; b < B; ++b) {
    for (std::size_t h = 0; h < H; ++h) {
      for (std::size_t i = 0; i < Tq; ++i) {
        const T* qi = qp + (b * Tq + i) * d + h * dh;
        const std::size_t jmax = as.causal ? i + 1 : Tk;
        T mx = -std::numeric_limits<T>::infinity();
        bool any = false;
        for (std::size_t j = 0; j < jmax; ++j) {
          if (!valid[b * Tk + j]) continue;
          const T* kj = kp + (b * Tk + j) * d + h * dh;
          T s{0};
          for (std::size_t c = 0; c < dh; ++c) s += qi[c] * kj[c];
          s *= scl;
          scores[j] = s;
          mx = any ? std::max(mx, s) : s;
          any = true;
        }
        if (!any) continue;
        T* pr = probs.data() + ((b * H + h) * Tq + i) * Tk;
        T denom{0};
        for (std::size_t j = 0; j < jmax; ++j) {
          if (!valid[b * Tk + j]) continue;
          pr[j] = std::exp(scores[j] - mx);
          denom += pr[j];
        }
        T* oi = out.data() + (b * Tq + i) * d + h * dh;
        for (std::size_t j = 0; j < jmax; ++j) {
          if (!valid[b * Tk + j]) continue;
          pr[j] /= denom;
          const T* vj = vp + (b * Tk + j) * d + h * dh;
          for (std::size_t c = 0; c < dh; ++c) oi[c] += pr[j] * vj[c];
        }
      }
    }
  }

  const std::size_t iq = q.id, ik = k.id, iv = v.id;
  return q.graph->push(
      std::move(out), {iq, ik, iv},
      [iq, ik, iv, B, Tq, Tk, H, d, dh, scl, causal = as.causal, valid = std::move(valid),
       probs = std::move(probs)](Graph<T>& g, std::size_t self) {
        const Tensor<T>& dout = *g.grad(self);
        const T* qp = g.value(iq).data();
        const T* kp = g.value(ik).data();
        const T* vp = g.value(iv).data();
        T* dq = g.requires_grad(iq) ? g.grad_ref(iq).data() : nullptr;
        T* dk = g.requires_grad(ik) ? g.grad_ref(ik).data() : nullptr;
        T* dv = g.requires_grad(iv) ? g.grad_ref(iv).data() : nullptr;
        std::vector<T> dp(Tk);
        for (std::size_t b = 0; b < B; ++b) {
          for (std::size_t h = 0; h < H; ++h) {
            for (std::size_t i = 0; i < Tq; ++i) {
              const T* pr = probs.data() + ((b * H + h) * Tq + i) * Tk;
              const T* doi = dout.data() + (b * Tq + i) * d + h * dh;
              const std::size_t jmax = causal ? i + 1 : Tk;
              T dot{0};
              for (std::size_t j = 0; j < jmax; ++j) {
                if (!valid[b * Tk + j]) continue;
                const T* vj = vp + (b * Tk + j) * d + h * dh;
                T s{0};
                for (std::size_t c = 0; c < dh; ++c) s += doi[c] * vj[c];
                dp[j] = s;
                dot += pr[j] * s;
                if (dv) {
                  T* dvj = dv + (b * Tk + j) * d + h * dh;
                  for (std::size_t c = 0; c < dh; ++c) dvj[c] += pr[j] * doi[c];
                }
              }
              const T* qi = qp + (b * Tq + i) * d + h * dh;
              T* dqi = dq ? dq + (b * Tq + i) * d + h * dh : nullptr;
              for (std::size_t j = 0; j < jmax; ++j) {
                if (!valid[b * Tk + j]) continue;
                const T ds = pr[j] * (dp[j] - dot) * scl;
                const T* kj = kp + (b * Tk + j) * d + h * dh;
                if (dqi)
                  for (std::size_t c = 0; c < dh; ++c) dqi[c] += ds * kj[c];
                if (dk) {
                  T* dkj = dk + (b * Tk + j) * d + h * dh;
                  for (std::size_t c = 0; c < dh; ++c) dkj[c] += ds * qi[c];
                }
              }
            }
          }
        }
      });
}

/// Softmax over a 1-D logit vector, with max subtraction.
template <typename T>
std::vector<T> softmax(std::span<const T> logits) {
  std::vector<T> w(logits.size());
  if (w.empty()) return w;
  const T mx = *std::max_element(logits.begin(), logits.end());
  T denom{0};
  for (std::size_t i = 0; i < w.size(); ++i) {
    w[i] = std::exp(logits[i] - mx);
    denom += w[i];
  }
  for (auto& x : w) x /= denom;
  return w;
}

/// Convex combination sum_i softmax(logits)_i * states[i]; all states share one shape.
template <typename T>
Var<T> weighted_sum(std::span<const Var<T>> states, Var<T> logits) {
  if (states.empty()) throw DimensionError("weighted_sum of zero states");
  if (logits.value().size() != states.size()) {
    throw DimensionError("fusion weights have " + std::to_string(logits.value().size()) + " entries for " +
                         std::to_string(states.size()) + " states");
  }
  for (const auto& s : states) {
    detail::require_same_graph(s, logits);
    if (s.shape() != states[0].shape()) {
      throw DimensionError("weighted_sum state shape mismatch: " + shape_str(s.shape()) + " vs " +
                           shape_str(states[0].shape()));
    }
  }
  const std::vector<T> w = softmax<T>(logits.value().values());
  Tensor<T> out(states[0].shape());
  for (std::size_t i = 0; i < states.size(); ++i) {
    const T* sp = states[i].value().data();
    for (std::size_t e = 0; e < out.size(); ++e) out[e] += w[i] * sp[e];
  }
  std::vector<std::size_t> inputs;
  for (const auto& s : states) inputs.push_back(s.id);
  const std::size_t il = logits.id;
  inputs.push_back(il);
  std::vector<std::size_t> ids(inputs.begin(), inputs.end() - 1);
  return logits.graph->push(std::move(out), inputs, [ids = std::move(ids), il, w](Graph<T>& g, std::size_t self) {
    const Tensor<T>& dout = *g.grad(self);
    std::vector<T> dw(ids.size(), T{0});
    for (std::size_t i = 0; i < ids.size(); ++i) {
      const T* sp = g.value(ids[i]).data();
      for (std::size_t e = 0; e < dout.size(); ++e) dw[i] += dout[e] * sp[e];
      if (g.requires_grad(ids[i])) {
        T* ds = g.grad_ref(ids[i]).data();
        for (std::size_t e = 0; e < dout.size(); ++e) ds[e] += w[i] * dout[e];
      }
    }
    if (g.requires_grad(il)) {
      T mean{0};
      for (std::size_t i = 0; i < ids.size(); ++i) mean += w[i] * dw[i];
      T* dl = g.grad_ref(il).data();
      for (std::size_t i = 0; i < ids.size(); ++i) dl[i] += w[i] * (dw[i] - mean);
    }
  });
}

/// Mean negative log-likelihood over rows whose label is not kIgnoreLabel.
/// Zero (with zero gradient) when every row is ignored.
template <typename T>
Var<T> softmax_cross_entropy(Var<T> logits, std::span<const std::int32_t> labels) {
  const Tensor<T>& lv = logits.value();
  const std::size_t V = lv.cols(), N = lv.rows();
  if (labels.size() != N) {
    throw DimensionError("cross entropy: " + std::to_string(labels.size()) + " labels for logits " + shape_str(lv.shape()));
  }
  std::size_t count = 0;
  for (std::int32_t y : labels) {
    if (y == kIgnoreLabel) continue;
    if (y < 0 || static_cast<std::size_t>(y) >= V) {
      throw Error("label " + std::to_string(y) + " out of range for " + std::to_string(V) + " classes");
    }
    ++count;
  }
  T total{0};
  for (std::size_t r = 0; r < N; ++r) {
    if (labels[r] == kIgnoreLabel) continue;
    const T* row = lv.data() + r * V;
    const T mx = *std::max_element(row, row + V);
    T se{0};
    for (std::size_t j = 0; j < V; ++j) se += std::exp(row[j] - mx);
    total += mx + std::log(se) - row[labels[r]];
  }
  const T loss = count ? total / static_cast<T>(count) : T{0};
  const std::size_t il = logits.id;
  std::vector<std::int32_t> lab(labels.begin(), labels.end());
  return logits.graph->push(Tensor<T>::scalar(loss), {il}, [il, V, N, count, lab = std::move(lab)](Graph<T>& g, std::size_t self) {
    if (count == 0) return;
    const T scale = g.grad(self)->item() / static_cast<T>(count);
    const T* lp = g.value(il).data();
    T* dl = g.grad_ref(il).data();
    for (std::size_t r = 0; r < N; ++r) {
      if (lab[r] == kIgnoreLabel) continue;
      const T* row = lp + r * V;
      const T mx = *std::max_element(row, row + V);
      T se{0};
      for (std::size_t j = 0; j < V; ++j) se += std::exp(row[j] - mx);
      for (std::size_t j = 0; j < V; ++j) dl[r * V + j] += scale * std::exp(row[j] - mx) / se;
      dl[r * V + static_cast<std::size_t>(lab[r])] -= scale;
    }
  });
}

/// Row-wise log-softmax of a plain tensor (no tape); used by decoding and evaluation.
template <typename T>
std::vector<T> log_softmax_row(const T* row, std::size_t n) {
  std::vector<T> out(n);
  const T mx = *std::max_element(row, row + n);
  T se{0};
  for (std::size_t j = 0; j < n; ++j) se += std::exp(row[j] - mx);
  const T lse = mx + std::log(se);
  for (std::size_t j = 0; j < n; ++j) out[j] = row[j] - lse;
  return out;
}

}  // namespace twostage::tensor
