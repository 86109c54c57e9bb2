#include "oavl/nn/graph.hpp"

#include <algorithm>
#include <cmath>

#include "kernels.hpp"
#include "oavl/errors.hpp"

namespace oavl::nn {

namespace {

[[noreturn]] void shape_error(const char* op, const std::string& detail) {
  throw ValidationError(std::string(op) + ": shape mismatch, " + detail);
}

void require_rank(const char* op, const Shape& s, std::size_t rank) {
  if (s.size() != rank) {
    shape_error(op, "expected rank " + std::to_string(rank) + ", got " + shape_string(s));
  }
}

}  // namespace

template <typename Real>
Var Graph<Real>::push(Tensor<Real> value, bool requires_grad, std::function<void()> backward) {
  Node n;
  n.value = std::move(value);
  n.requires_grad = requires_grad;
  if (requires_grad) {
    n.backward = std::move(backward);
  }
  nodes_.push_back(std::move(n));
  return Var{nodes_.size() - 1};
}

template <typename Real>
std::vector<Real>& Graph<Real>::grad_buffer(std::size_t id) {
  auto& n = nodes_[id];
  if (n.grad.empty()) {
    n.grad.assign(n.value.numel(), Real{0});
  }
  return n.grad;
}

template <typename Real>
bool Graph<Real>::any_grad(std::initializer_list<Var> vars) const {
  return std::any_of(vars.begin(), vars.end(), [&](Var v) { return nodes_.at(v.id).requires_grad; });
}

template <typename Real>
Var Graph<Real>::constant(Tensor<Real> t) {
  return push(std::move(t), false);
}

template <typename Real>
Var Graph<Real>::leaf(Tensor<Real> t) {
  const Var v = push(std::move(t), true, [] {});
  nodes_[v.id].leaf = true;
  return v;
}

template <typename Real>
Var Graph<Real>::param(Parameter<Real>& p) {
  const Var v = push(p.value, true, [] {});
  nodes_[v.id].bound = &p;
  nodes_[v.id].leaf = true;
  return v;
}

template <typename Real>
Var Graph<Real>::linear(Var x, Var w, Var b) {
  const auto& xs = shape(x);
  const auto& ws = shape(w);
  const auto& bs = shape(b);
  require_rank("linear", xs, 2);
  require_rank("linear", ws, 2);
  require_rank("linear", bs, 1);
  if (xs[1] != ws[0] || bs[0] != ws[1]) {
    shape_error("linear", "x " + shape_string(xs) + ", W " + shape_string(ws) + ", b " + shape_string(bs));
  }
  const auto n = static_cast<std::size_t>(xs[0]);
  const auto din = static_cast<std::size_t>(ws[0]);
  const auto dout = static_cast<std::size_t>(ws[1]);
  Tensor<Real> y({xs[0], ws[1]});
  for (std::size_t i = 0; i < n; ++i) {
    std::copy_n(value(b).data.begin(), dout, y.data.begin() + static_cast<std::ptrdiff_t>(i * dout));
  }
  kernels::gemm_nn(n, dout, din, value(x).data.data(), value(w).data.data(), y.data.data());

  const Var out = push(std::move(y), any_grad({x, w, b}), {});
  if (!requires_grad(out)) {
    return out;
  }
  nodes_[out.id].backward = [this, x, w, b, out, n, din, dout] {
    const auto& g = nodes_[out.id].grad;
    if (requires_grad(x)) {
      // dx = g W^T
      std::vector<Real> wt(din * dout);
      kernels::transpose(din, dout, value(w).data.data(), wt.data());
      kernels::gemm_nn(n, din, dout, g.data(), wt.data(), grad_buffer(x.id).data());
    }
    if (requires_grad(w)) {
      kernels::gemm_tn(din, dout, n, value(x).data.data(), g.data(), grad_buffer(w.id).data());
    }
    if (requires_grad(b)) {
      auto& gb = grad_buffer(b.id);
      for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t j = 0; j < dout; ++j) {
          gb[j] += g[i * dout + j];
        }
      }
    }
  };
  return out;
}

template <typename Real>
Var Graph<Real>::matmul_nt(Var a, Var b) {
  const auto& as = shape(a);
  const auto& bs = shape(b);
  require_rank("matmul_nt", as, 2);
  require_rank("matmul_nt", bs, 2);
  if (as[1] != bs[1]) {
    shape_error("matmul_nt", shape_string(as) + " vs " + shape_string(bs));
  }
  const auto n = static_cast<std::size_t>(as[0]);
  const auto m = static_cast<std::size_t>(bs[0]);
  const auto d = static_cast<std::size_t>(as[1]);
  Tensor<Real> y({as[0], bs[0]});
  const auto& av = value(a).data;
  const auto& bv = value(b).data;
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < m; ++j) {
      Real acc{0};
      for (std::size_t k = 0; k < d; ++k) {
        acc += av[i * d + k] * bv[j * d + k];
      }
      y.data[i * m + j] = acc;
    }
  }
  const Var out = push(std::move(y), any_grad({a, b}));
  if (!requires_grad(out)) {
    return out;
  }
  nodes_[out.id].backward = [this, a, b, out, n, m, d] {
    const auto& g = nodes_[out.id].grad;
    if (requires_grad(a)) {
      kernels::gemm_nn(n, d, m, g.data(), value(b).data.data(), grad_buffer(a.id).data());
    }
    if (requires_grad(b)) {
      kernels::gemm_tn(m, d, n, g.data(), value(a).data.data(), grad_buffer(b.id).data());
    }
  };
  return out;
}

template <typename Real>
Var Graph<Real>::transpose(Var x) {
  const auto& xs = shape(x);
  require_rank("transpose", xs, 2);
  const auto r = static_cast<std::size_t>(xs[0]);
  const auto c = static_cast<std::size_t>(xs[1]);
  Tensor<Real> y({xs[1], xs[0]});
  kernels::transpose(r, c, value(x).data.data(), y.data.data());
  const Var out = push(std::move(y), any_grad({x}));
  if (requires_grad(out)) {
    nodes_[out.id].backward = [this, x, out, r, c] {
      const auto& g = nodes_[out.id].grad;
      auto& gx = grad_buffer(x.id);
      for (std::size_t i = 0; i < r; ++i) {
        for (std::size_t j = 0; j < c; ++j) {
          gx[i * c + j] += g[j * r + i];
        }
      }
    };
  }
  return out;
}

template <typename Real>
Var Graph<Real>::conv2d(Var x, Var k, int stride, int pad_h, int pad_w) {
  const auto& xs = shape(x);
  const auto& ks = shape(k);
  require_rank("conv2d", xs, 4);
  require_rank("conv2d", ks, 4);
  if (xs[1] != ks[1]) {
    shape_error("conv2d", "input " + shape_string(xs) + " vs kernel " + shape_string(ks));
  }
  if (stride < 1 || pad_h < 0 || pad_w < 0) {
    throw ValidationError("conv2d: stride must be >= 1 and padding >= 0");
  }
  kernels::ConvGeometry geo{xs[1], xs[2], xs[3], ks[2], ks[3], stride, pad_h, pad_w, 0, 0};
  const int ho_num = geo.h + 2 * pad_h - geo.kh;
  const int wo_num = geo.w + 2 * pad_w - geo.kw;
  if (ho_num < 0 || wo_num < 0) {
    throw ValidationError("conv2d: nonpositive output size");
  }
  geo.ho = ho_num / stride + 1;
  geo.wo = wo_num / stride + 1;

  const int batch = xs[0];
  const int cout = ks[0];
  const std::size_t crows = geo.col_rows();
  const std::size_t ccols = geo.col_cols();
  const std::size_t in_stride = static_cast<std::size_t>(geo.cin * geo.h * geo.w);
  const std::size_t out_stride = static_cast<std::size_t>(cout) * ccols;

  Tensor<Real> y({batch, cout, geo.ho, geo.wo});
  const bool needs_grad = any_grad({x, k});
  // Column buffers are kept for the backward pass.
  std::vector<Real> cols(needs_grad ? crows * ccols * static_cast<std::size_t>(batch) : crows * ccols);
  for (int n = 0; n < batch; ++n) {
    Real* col = needs_grad ? cols.data() + crows * ccols * static_cast<std::size_t>(n) : cols.data();
    kernels::im2col(geo, value(x).data.data() + in_stride * static_cast<std::size_t>(n), col);
    kernels::gemm_nn(static_cast<std::size_t>(cout), ccols, crows, value(k).data.data(), col,
                     y.data.data() + out_stride * static_cast<std::size_t>(n));
  }

  const Var out = push(std::move(y), needs_grad);
  if (!needs_grad) {
    return out;
  }
  nodes_[out.id].backward = [this, x, k, out, geo, batch, cout, crows, ccols, in_stride, out_stride,
                             cols = std::move(cols)] {
    const auto& g = nodes_[out.id].grad;
    const auto co = static_cast<std::size_t>(cout);
    std::vector<Real> scratch;
    for (int n = 0; n < batch; ++n) {
      const Real* col = cols.data() + crows * ccols * static_cast<std::size_t>(n);
      const Real* gout = g.data() + out_stride * static_cast<std::size_t>(n);
      if (requires_grad(k)) {
        // dK[co, crows] += gout[co, ccols] * col^T
        scratch.resize(crows * ccols);
        kernels::transpose(crows, ccols, col, scratch.data());
        kernels::gemm_nn(co, crows, ccols, gout, scratch.data(), grad_buffer(k.id).data());
      }
      if (requires_grad(x)) {
        // dcol[crows, ccols] = K^T gout
        scratch.assign(crows * ccols, Real{0});
        kernels::gemm_tn(crows, ccols, co, value(k).data.data(), gout, scratch.data());
        kernels::col2im(geo, scratch.data(), grad_buffer(x.id).data() + in_stride * static_cast<std::size_t>(n));
      }
    }
  };
  return out;
}

template <typename Real>
Var Graph<Real>::add_channel_bias(Var x, Var b) {
  const auto& xs = shape(x);
  const auto& bs = shape(b);
  if (xs.size() < 2 || bs.size() != 1 || bs[0] != xs[1]) {
    shape_error("add_channel_bias", "x " + shape_string(xs) + ", b " + shape_string(bs));
  }
  const auto batch = static_cast<std::size_t>(xs[0]);
  const auto channels = static_cast<std::size_t>(xs[1]);
  const std::size_t inner = value(x).numel() / (batch * channels);
  Tensor<Real> y = value(x);
  const auto& bv = value(b).data;
  for (std::size_t n = 0; n < batch; ++n) {
    for (std::size_t c = 0; c < channels; ++c) {
      Real* p = y.data.data() + (n * channels + c) * inner;
      for (std::size_t i = 0; i < inner; ++i) {
        p[i] += bv[c];
      }
    }
  }
  const Var out = push(std::move(y), any_grad({x, b}));
  if (requires_grad(out)) {
    nodes_[out.id].backward = [this, x, b, out, batch, channels, inner] {
      const auto& g = nodes_[out.id].grad;
      if (requires_grad(x)) {
        auto& gx = grad_buffer(x.id);
        for (std::size_t i = 0; i < g.size(); ++i) {
          gx[i] += g[i];
        }
      }
      if (requires_grad(b)) {
        auto& gb = grad_buffer(b.id);
        for (std::size_t n = 0; n < batch; ++n) {
          for (std::size_t c = 0; c < channels; ++c) {
            const Real* p = g.data() + (n * channels + c) * inner;
            Real acc{0};
            for (std::size_t i = 0; i < inner; ++i) {
              acc += p[i];
            }
            gb[c] += acc;
          }
        }
      }
    };
  }
  return out;
}

template <typename Real>
Var Graph<Real>::relu(Var x) {
  Tensor<Real> y = value(x);
  for (auto& v : y.data) {
    v = v > Real{0} ? v : Real{0};
  }
  const Var out = push(std::move(y), any_grad({x}));
  if (requires_grad(out)) {
    nodes_[out.id].backward = [this, x, out] {
      const auto& g = nodes_[out.id].grad;
      const auto& xv = value(x).data;
      auto& gx = grad_buffer(x.id);
      for (std::size_t i = 0; i < g.size(); ++i) {
        if (xv[i] > Real{0}) {
          gx[i] += g[i];
        }
      }
    };
  }
  return out;
}

template <typename Real>
Var Graph<Real>::mean_pool(Var x) {
  const auto& xs = shape(x);
  require_rank("mean_pool", xs, 4);
  const auto rows = static_cast<std::size_t>(xs[0] * xs[1]);
  const auto inner = static_cast<std::size_t>(xs[2] * xs[3]);
  Tensor<Real> y({xs[0], xs[1]});
  const auto& xv = value(x).data;
  for (std::size_t r = 0; r < rows; ++r) {
    Real acc{0};
    for (std::size_t i = 0; i < inner; ++i) {
      acc += xv[r * inner + i];
    }
    y.data[r] = acc / static_cast<Real>(inner);
  }
  const Var out = push(std::move(y), any_grad({x}));
  if (requires_grad(out)) {
    nodes_[out.id].backward = [this, x, out, rows, inner] {
      const auto& g = nodes_[out.id].grad;
      auto& gx = grad_buffer(x.id);
      for (std::size_t r = 0; r < rows; ++r) {
        const Real share = g[r] / static_cast<Real>(inner);
        for (std::size_t i = 0; i < inner; ++i) {
          gx[r * inner + i] += share;
        }
      }
    };
  }
  return out;
}

template <typename Real>
Var Graph<Real>::masked_mean_pool(Var x, std::span<const std::uint8_t> mask) {
  const auto& xs = shape(x);
  require_rank("masked_mean_pool", xs, 4);
  const auto batch = static_cast<std::size_t>(xs[0]);
  const auto channels = static_cast<std::size_t>(xs[1]);
  const auto inner = static_cast<std::size_t>(xs[2] * xs[3]);
  if (mask.size() != batch * inner) {
    shape_error("masked_mean_pool", "mask has " + std::to_string(mask.size()) + " entries for " + shape_string(xs));
  }
  std::vector<Real> inv_count(batch);
  for (std::size_t n = 0; n < batch; ++n) {
    std::size_t count = 0;
    for (std::size_t i = 0; i < inner; ++i) {
      count += mask[n * inner + i] != 0 ? 1 : 0;
    }
    inv_count[n] = Real{1} / static_cast<Real>(std::max<std::size_t>(count, 1));
  }
  std::vector<std::uint8_t> m(mask.begin(), mask.end());
  Tensor<Real> y({xs[0], xs[1]});
  const auto& xv = value(x).data;
  for (std::size_t n = 0; n < batch; ++n) {
    for (std::size_t c = 0; c < channels; ++c) {
      const Real* p = xv.data() + (n * channels + c) * inner;
      Real acc{0};
      for (std::size_t i = 0; i < inner; ++i) {
        if (m[n * inner + i] != 0) {
          acc += p[i];
        }
      }
      y.data[n * channels + c] = acc * inv_count[n];
    }
  }
  const Var out = push(std::move(y), any_grad({x}));
  if (requires_grad(out)) {
    nodes_[out.id].backward = [this, x, out, batch, channels, inner, m = std::move(m),
                               inv_count = std::move(inv_count)] {
      const auto& g = nodes_[out.id].grad;
      auto& gx = grad_buffer(x.id);
      for (std::size_t n = 0; n < batch; ++n) {
        for (std::size_t c = 0; c < channels; ++c) {
          const Real share = g[n * channels + c] * inv_count[n];
          Real* p = gx.data() + (n * channels + c) * inner;
          for (std::size_t i = 0; i < inner; ++i) {
            if (m[n * inner + i] != 0) {
              p[i] += share;
            }
          }
        }
      }
    };
  }
  return out;
}

template <typename Real>
Var Graph<Real>::mask_positions(Var x, std::span<const std::uint8_t> mask) {
  const auto& xs = shape(x);
  require_rank("mask_positions", xs, 4);
  const auto batch = static_cast<std::size_t>(xs[0]);
  const auto channels = static_cast<std::size_t>(xs[1]);
  const auto inner = static_cast<std::size_t>(xs[2] * xs[3]);
  if (mask.size() != batch * inner) {
    shape_error("mask_positions", "mask has " + std::to_string(mask.size()) + " entries for " + shape_string(xs));
  }
  std::vector<std::uint8_t> m(mask.begin(), mask.end());
  Tensor<Real> y = value(x);
  for (std::size_t n = 0; n < batch; ++n) {
    for (std::size_t c = 0; c < channels; ++c) {
      Real* p = y.data.data() + (n * channels + c) * inner;
      for (std::size_t i = 0; i < inner; ++i) {
        if (m[n * inner + i] == 0) {
          p[i] = Real{0};
        }
      }
    }
  }
  const Var out = push(std::move(y), any_grad({x}));
  if (requires_grad(out)) {
    nodes_[out.id].backward = [this, x, out, batch, channels, inner, m = std::move(m)] {
      const auto& g = nodes_[out.id].grad;
      auto& gx = grad_buffer(x.id);
      for (std::size_t n = 0; n < batch; ++n) {
        for (std::size_t c = 0; c < channels; ++c) {
          const std::size_t base = (n * channels + c) * inner;
          for (std::size_t i = 0; i < inner; ++i) {
            if (m[n * inner + i] != 0) {
              gx[base + i] += g[base + i];
            }
          }
        }
      }
    };
  }
  return out;
}

template <typename Real>
Var Graph<Real>::embed_tokens(std::span<const std::int32_t> tokens, std::span<const std::uint8_t> mask, int n_rows,
                              int len, Var table, Var pos) {
  const auto& ts = shape(table);
  const auto& ps = shape(pos);
  require_rank("embed_tokens", ts, 2);
  require_rank("embed_tokens", ps, 2);
  const auto rows = static_cast<std::size_t>(n_rows);
  const auto l = static_cast<std::size_t>(len);
  if (tokens.size() != rows * l || mask.size() != rows * l || ps[1] != ts[1] || ps[0] < len) {
    shape_error("embed_tokens", "table " + shape_string(ts) + ", positions " + shape_string(ps) + ", " +
                                    std::to_string(tokens.size()) + " tokens");
  }
  const auto vocab = ts[0];
  const auto d = static_cast<std::size_t>(ts[1]);
  for (auto t : tokens) {
    if (t < 0 || t >= vocab) {
      throw ValidationError("embed_tokens: token index " + std::to_string(t) + " out of range for vocabulary of " +
                            std::to_string(vocab));
    }
  }
  std::vector<std::int32_t> tok(tokens.begin(), tokens.end());
  std::vector<std::uint8_t> m(mask.begin(), mask.end());
  Tensor<Real> y({n_rows, ts[1], 1, len});
  const auto& tv = value(table).data;
  const auto& pv = value(pos).data;
  for (std::size_t n = 0; n < rows; ++n) {
    for (std::size_t i = 0; i < l; ++i) {
      if (m[n * l + i] == 0) {
        continue;
      }
      const auto t = static_cast<std::size_t>(tok[n * l + i]);
      for (std::size_t c = 0; c < d; ++c) {
        y.data[(n * d + c) * l + i] = tv[t * d + c] + pv[i * d + c];
      }
    }
  }
  const Var out = push(std::move(y), any_grad({table, pos}));
  if (requires_grad(out)) {
    nodes_[out.id].backward = [this, table, pos, out, rows, l, d, tok = std::move(tok), m = std::move(m)] {
      const auto& g = nodes_[out.id].grad;
      const bool gt = requires_grad(table);
      const bool gp = requires_grad(pos);
      auto* gtab = gt ? grad_buffer(table.id).data() : nullptr;
      auto* gpos = gp ? grad_buffer(pos.id).data() : nullptr;
      for (std::size_t n = 0; n < rows; ++n) {
        for (std::size_t i = 0; i < l; ++i) {
          if (m[n * l + i] == 0) {
            continue;
          }
          const auto t = static_cast<std::size_t>(tok[n * l + i]);
          for (std::size_t c = 0; c < d; ++c) {
            const Real gv = g[(n * d + c) * l + i];
            if (gt) gtab[t * d + c] += gv;
            if (gp) gpos[i * d + c] += gv;
          }
        }
      }
    };
  }
  return out;
}

template <typename Real>
Var Graph<Real>::l2_normalize(Var x, Real eps) {
  const auto& xs = shape(x);
  if (xs.empty()) {
    shape_error("l2_normalize", "scalar input");
  }
  const auto d = static_cast<std::size_t>(xs.back());
  const std::size_t rows = d == 0 ? 0 : value(x).numel() / d;
  std::vector<Real> norms(rows);
  Tensor<Real> y = value(x);
  for (std::size_t r = 0; r < rows; ++r) {
    Real* p = y.data.data() + r * d;
    Real ss{0};
    for (std::size_t i = 0; i < d; ++i) {
      ss += p[i] * p[i];
    }
    norms[r] = std::sqrt(ss);
    const Real denom = norms[r] + eps;
    for (std::size_t i = 0; i < d; ++i) {
      p[i] /= denom;
    }
  }
  const Var out = push(std::move(y), any_grad({x}));
  if (requires_grad(out)) {
    nodes_[out.id].backward = [this, x, out, rows, d, eps, norms = std::move(norms)] {
      const auto& g = nodes_[out.id].grad;
      const auto& xv = value(x).data;
      auto& gx = grad_buffer(x.id);
      for (std::size_t r = 0; r < rows; ++r) {
        const Real n = norms[r];
        const Real denom = n + eps;
        const Real* gr = g.data() + r * d;
        const Real* xr = xv.data() + r * d;
        Real* out_r = gx.data() + r * d;
        Real gdotx{0};
        for (std::size_t i = 0; i < d; ++i) {
          gdotx += gr[i] * xr[i];
        }
        const Real k = n > Real{0} ? gdotx / (denom * denom * n) : Real{0};
        for (std::size_t i = 0; i < d; ++i) {
          out_r[i] += gr[i] / denom - xr[i] * k;
        }
      }
    };
  }
  return out;
}

template <typename Real>
Var Graph<Real>::rowwise_dot(Var a, Var b) {
  const auto& as = shape(a);
  const auto& bs = shape(b);
  require_rank("rowwise_dot", as, 2);
  if (as != bs) {
    shape_error("rowwise_dot", shape_string(as) + " vs " + shape_string(bs));
  }
  const auto n = static_cast<std::size_t>(as[0]);
  const auto d = static_cast<std::size_t>(as[1]);
  Tensor<Real> y({as[0]});
  const auto& av = value(a).data;
  const auto& bv = value(b).data;
  for (std::size_t i = 0; i < n; ++i) {
    Real acc{0};
    for (std::size_t k = 0; k < d; ++k) {
      acc += av[i * d + k] * bv[i * d + k];
    }
    y.data[i] = acc;
  }
  const Var out = push(std::move(y), any_grad({a, b}));
  if (requires_grad(out)) {
    nodes_[out.id].backward = [this, a, b, out, n, d] {
      const auto& g = nodes_[out.id].grad;
      if (requires_grad(a)) {
        auto& ga = grad_buffer(a.id);
        const auto& bv = value(b).data;
        for (std::size_t i = 0; i < n; ++i) {
          for (std::size_t k = 0; k < d; ++k) {
            ga[i * d + k] += g[i] * bv[i * d + k];
          }
        }
      }
      if (requires_grad(b)) {
        auto& gb = grad_buffer(b.id);
        const auto& av = value(a).data;
        for (std::size_t i = 0; i < n; ++i) {
          for (std::size_t k = 0; k < d; ++k) {
            gb[i * d + k] += g[i] * av[i * d + k];
          }
        }
      }
    };
  }
  return out;
}

template <typename Real>
Var Graph<Real>::sum(Var x) {
  Real acc{0};
  for (auto v : value(x).data) {
    acc += v;
  }
  const Var out = push(Tensor<Real>({1}, {acc}), any_grad({x}));
  if (requires_grad(out)) {
    nodes_[out.id].backward = [this, x, out] {
      const Real g = nodes_[out.id].grad[0];
      for (auto& v : grad_buffer(x.id)) {
        v += g;
      }
    };
  }
  return out;
}

template <typename Real>
Var Graph<Real>::mean(Var x) {
  const auto n = value(x).numel();
  if (n == 0) {
    throw ValidationError("mean: empty tensor");
  }
  return scale(sum(x), Real{1} / static_cast<Real>(n));
}

template <typename Real>
Var Graph<Real>::softmax_cross_entropy(Var logits, std::span<const int> targets) {
  const auto& ls = shape(logits);
  require_rank("softmax_cross_entropy", ls, 2);
  const auto n = static_cast<std::size_t>(ls[0]);
  const auto k = static_cast<std::size_t>(ls[1]);
  if (targets.size() != n) {
    shape_error("softmax_cross_entropy", std::to_string(targets.size()) + " targets for " + shape_string(ls));
  }
  if (n == 0) {
    throw ValidationError("softmax_cross_entropy: empty batch");
  }
  for (int t : targets) {
    if (t < 0 || static_cast<std::size_t>(t) >= k) {
      throw ValidationError("softmax_cross_entropy: target index " + std::to_string(t) + " out of range");
    }
  }
  const auto& lv = value(logits).data;
  std::vector<Real> probs(n * k);
  std::vector<int> tgt(targets.begin(), targets.end());
  double total = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const Real* row = lv.data() + i * k;
    std::size_t arg = 0;
    for (std::size_t j = 1; j < k; ++j) {
      if (row[j] > row[arg]) {
        arg = j;
      }
    }
    const double mx = row[arg];
    // log-sum-exp as max + log1p(sum of the other terms) keeps saturated rows exact.
    double rest = 0.0;
    for (std::size_t j = 0; j < k; ++j) {
      const double e = std::exp(static_cast<double>(row[j]) - mx);
      probs[i * k + j] = static_cast<Real>(e);
      if (j != arg) {
        rest += e;
      }
    }
    const double lse_shift = std::log1p(rest);
    const double denom = 1.0 + rest;
    for (std::size_t j = 0; j < k; ++j) {
      probs[i * k + j] = static_cast<Real>(static_cast<double>(probs[i * k + j]) / denom);
    }
    total += lse_shift + (mx - static_cast<double>(row[static_cast<std::size_t>(tgt[i])]));
  }
  const Var out = push(Tensor<Real>({1}, {static_cast<Real>(total / static_cast<double>(n))}), any_grad({logits}));
  if (requires_grad(out)) {
    nodes_[out.id].backward = [this, logits, out, n, k, probs = std::move(probs), tgt = std::move(tgt)] {
      const Real g = nodes_[out.id].grad[0] / static_cast<Real>(n);
      auto& gl = grad_buffer(logits.id);
      for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t j = 0; j < k; ++j) {
          const Real onehot = static_cast<std::size_t>(tgt[i]) == j ? Real{1} : Real{0};
          gl[i * k + j] += g * (probs[i * k + j] - onehot);
        }
      }
    };
  }
  return out;
}

template <typename Real>
Var Graph<Real>::add(Var a, Var b) {
  if (shape(a) != shape(b)) {
    shape_error("add", shape_string(shape(a)) + " vs " + shape_string(shape(b)));
  }
  Tensor<Real> y = value(a);
  const auto& bv = value(b).data;
  for (std::size_t i = 0; i < y.data.size(); ++i) {
    y.data[i] += bv[i];
  }
  const Var out = push(std::move(y), any_grad({a, b}));
  if (requires_grad(out)) {
    nodes_[out.id].backward = [this, a, b, out] {
      const auto& g = nodes_[out.id].grad;
      for (Var v : {a, b}) {
        if (requires_grad(v)) {
          auto& gv = grad_buffer(v.id);
          for (std::size_t i = 0; i < g.size(); ++i) {
            gv[i] += g[i];
          }
        }
      }
    };
  }
  return out;
}

template <typename Real>
Var Graph<Real>::scale(Var x, Real c) {
  Tensor<Real> y = value(x);
  for (auto& v : y.data) {
    v *= c;
  }
  const Var out = push(std::move(y), any_grad({x}));
  if (requires_grad(out)) {
    nodes_[out.id].backward = [this, x, out, c] {
      const auto& g = nodes_[out.id].grad;
      auto& gx = grad_buffer(x.id);
      for (std::size_t i = 0; i < g.size(); ++i) {
        gx[i] += c * g[i];
      }
    };
  }
  return out;
}

template <typename Real>
Var Graph<Real>::mul_scalar(Var x, Var s) {
  if (value(s).numel() != 1) {
    shape_error("mul_scalar", "scalar operand has shape " + shape_string(shape(s)));
  }
  const Real c = value(s).data[0];
  Tensor<Real> y = value(x);
  for (auto& v : y.data) {
    v *= c;
  }
  const Var out = push(std::move(y), any_grad({x, s}));
  if (requires_grad(out)) {
    nodes_[out.id].backward = [this, x, s, out] {
      const auto& g = nodes_[out.id].grad;
      const Real c = value(s).data[0];
      if (requires_grad(x)) {
        auto& gx = grad_buffer(x.id);
        for (std::size_t i = 0; i < g.size(); ++i) {
          gx[i] += c * g[i];
        }
      }
      if (requires_grad(s)) {
        const auto& xv = value(x).data;
        Real acc{0};
        for (std::size_t i = 0; i < g.size(); ++i) {
          acc += g[i] * xv[i];
        }
        grad_buffer(s.id)[0] += acc;
      }
    };
  }
  return out;
}

template <typename Real>
Var Graph<Real>::exp_clamped(Var s, Real lo, Real hi) {
  if (value(s).numel() != 1) {
    shape_error("exp_clamped", "expected scalar, got " + shape_string(shape(s)));
  }
  const Real raw = value(s).data[0];
  const Real y = std::exp(std::clamp(raw, lo, hi));
  const bool inside = raw >= lo && raw <= hi;
  const Var out = push(Tensor<Real>({1}, {y}), any_grad({s}));
  if (requires_grad(out)) {
    nodes_[out.id].backward = [this, s, out, y, inside] {
      if (inside) {
        grad_buffer(s.id)[0] += nodes_[out.id].grad[0] * y;
      }
    };
  }
  return out;
}

template <typename Real>
void Graph<Real>::backward(Var root) {
  if (value(root).numel() != 1) {
    throw ValidationError("backward: root must be a scalar, got " + shape_string(shape(root)));
  }
  for (auto& n : nodes_) {
    n.grad.clear();
  }
  if (!requires_grad(root)) {
    return;
  }
  grad_buffer(root.id)[0] = Real{1};
  for (std::size_t id = root.id + 1; id-- > 0;) {
    auto& n = nodes_[id];
    if (n.requires_grad && !n.grad.empty() && n.backward) {
      n.backward();
    }
  }
  // Leaves the gradient never reached still get an all-zero buffer.
  for (auto& n : nodes_) {
    if (n.leaf && n.grad.empty()) {
      n.grad.assign(n.value.numel(), Real{0});
    }
  }
}

template <typename Real>
void Graph<Real>::accumulate_param_grads() {
  for (auto& n : nodes_) {
    if (n.bound != nullptr && !n.grad.empty()) {
      n.bound->accumulate_grad(n.grad);
    }
  }
}

template class Graph<float>;
template class Graph<double>;

}  // namespace oavl::nn
