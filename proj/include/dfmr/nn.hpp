#pragma once
// Differentiable tensor ops: dense and 2D convolution layers, activations,
// per-channel modulation, complex packing, and small reduction losses.
// Convolutions are zero padded "same" with odd kernels. All ops are real
// valued except pack_complex, which bridges a [2,H,W] real pair into one
// complex [H,W] image, and sum_squares, which accepts either dtype.

#include <cmath>
#include <vector>

#include "dfmr/autodiff.hpp"
#include "dfmr/errors.hpp"
#include "dfmr/tensor.hpp"

namespace dfmr {

enum class Act { None, Tanh, LeakyRelu };

constexpr double kLeakySlope = 0.01;

namespace detail {

inline Graph& same_graph(Var a, Var b) {
  if (a.g != b.g) throw NumericError("op: vars from different graphs");
  return *a.g;
}

inline bool any_grad(Graph& g, std::initializer_list<int> ids) {
  for (int id : ids)
    if (g.node(id).requires_grad) return true;
  return false;
}

}  // namespace detail

// ---- elementwise arithmetic ----

inline Var add(Var a, Var b) {
  Graph& g = detail::same_graph(a, b);
  const Tensor& ta = g.value(a);
  const Tensor& tb = g.value(b);
  if (!ta.same_layout(tb)) throw NumericError("add: layout mismatch");
  Tensor out = ta;
  for (size_t k = 0; k < out.data.size(); ++k) out.data[k] += tb.data[k];
  int ia = a.id, ib = b.id;
  return g.make(std::move(out), detail::any_grad(g, {ia, ib}),
                [ia, ib](Graph& gr, int self) {
                  const Tensor& gs = gr.node(self).grad;
                  accumulate_grad(gr, ia, gs);
                  accumulate_grad(gr, ib, gs);
                });
}

inline Var sub(Var a, Var b) {
  Graph& g = detail::same_graph(a, b);
  const Tensor& ta = g.value(a);
  const Tensor& tb = g.value(b);
  if (!ta.same_layout(tb)) throw NumericError("sub: layout mismatch");
  Tensor out = ta;
  for (size_t k = 0; k < out.data.size(); ++k) out.data[k] -= tb.data[k];
  int ia = a.id, ib = b.id;
  return g.make(std::move(out), detail::any_grad(g, {ia, ib}),
                [ia, ib](Graph& gr, int self) {
                  const Tensor& gs = gr.node(self).grad;
                  accumulate_grad(gr, ia, gs);
                  if (!gr.node(ib).requires_grad) return;
                  Tensor& gb = gr.grad_buffer(ib);
                  for (size_t k = 0; k < gb.data.size(); ++k)
                    gb.data[k] -= gs.data[k];
                });
}

inline Var scale(Var a, double c) {
  Graph& g = *a.g;
  Tensor out = g.value(a);
  for (double& v : out.data) v *= c;
  int ia = a.id;
  return g.make(std::move(out), g.node(ia).requires_grad,
                [ia, c](Graph& gr, int self) {
                  if (!gr.node(ia).requires_grad) return;
                  const Tensor& gs = gr.node(self).grad;
                  Tensor& ga = gr.grad_buffer(ia);
                  for (size_t k = 0; k < ga.data.size(); ++k)
                    ga.data[k] += c * gs.data[k];
                });
}

// Sum of real scalar vars (used to combine per-term losses).
inline Var vsum(const std::vector<Var>& terms) {
  if (terms.empty()) throw NumericError("vsum: empty term list");
  Graph& g = *terms[0].g;
  double s = 0.0;
  bool req = false;
  std::vector<int> ids;
  ids.reserve(terms.size());
  for (Var t : terms) {
    detail::same_graph(terms[0], t);
    const Tensor& tv = g.value(t);
    if (tv.numel() != 1 || tv.is_complex())
      throw NumericError("vsum: terms must be real scalars");
    s += tv.data[0];
    req = req || g.node(t.id).requires_grad;
    ids.push_back(t.id);
  }
  Tensor out = Tensor::zeros_real({1});
  out.data[0] = s;
  return g.make(std::move(out), req, [ids](Graph& gr, int self) {
    double gs = gr.node(self).grad.data[0];
    for (int id : ids) {
      if (!gr.node(id).requires_grad) continue;
      gr.grad_buffer(id).data[0] += gs;
    }
  });
}

// ||x||^2 over all stored scalars; for complex tensors this is the squared
// complex norm.
inline Var sum_squares(Var a) {
  Graph& g = *a.g;
  const Tensor& ta = g.value(a);
  double s = 0.0;
  for (double v : ta.data) s += v * v;
  Tensor out = Tensor::zeros_real({1});
  out.data[0] = s;
  int ia = a.id;
  return g.make(std::move(out), g.node(ia).requires_grad,
                [ia](Graph& gr, int self) {
                  if (!gr.node(ia).requires_grad) return;
                  double gs = gr.node(self).grad.data[0];
                  const Tensor& va = gr.node(ia).value;
                  Tensor& ga = gr.grad_buffer(ia);
                  for (size_t k = 0; k < ga.data.size(); ++k)
                    ga.data[k] += 2.0 * gs * va.data[k];
                });
}

// ---- layers ----

// y = W x + b with x [n], W [m,n], b [m].
inline Var dense(Var x, Var w, Var b) {
  Graph& g = detail::same_graph(x, w);
  detail::same_graph(x, b);
  const Tensor& tx = g.value(x);
  const Tensor& tw = g.value(w);
  const Tensor& tb = g.value(b);
  if (tx.rank() != 1 || tw.rank() != 2 || tb.rank() != 1 ||
      tw.size(1) != tx.size(0) || tw.size(0) != tb.size(0) || tx.is_complex())
    throw NumericError("dense: bad shapes");
  int64_t m = tw.size(0), n = tw.size(1);
  Tensor out = Tensor::zeros_real({m});
  for (int64_t i = 0; i < m; ++i) {
    double acc = tb.data[static_cast<size_t>(i)];
    const double* wr = tw.data.data() + i * n;
    for (int64_t j = 0; j < n; ++j) acc += wr[j] * tx.data[static_cast<size_t>(j)];
    out.data[static_cast<size_t>(i)] = acc;
  }
  int ix = x.id, iw = w.id, ib = b.id;
  return g.make(std::move(out), detail::any_grad(g, {ix, iw, ib}),
                [ix, iw, ib, m, n](Graph& gr, int self) {
                  const Tensor& gs = gr.node(self).grad;
                  const Tensor& vx = gr.node(ix).value;
                  const Tensor& vw = gr.node(iw).value;
                  if (gr.node(ix).requires_grad) {
                    Tensor& gx = gr.grad_buffer(ix);
                    for (int64_t i = 0; i < m; ++i) {
                      double gi = gs.data[static_cast<size_t>(i)];
                      const double* wr = vw.data.data() + i * n;
                      for (int64_t j = 0; j < n; ++j)
                        gx.data[static_cast<size_t>(j)] += wr[j] * gi;
                    }
                  }
                  if (gr.node(iw).requires_grad) {
                    Tensor& gw = gr.grad_buffer(iw);
                    for (int64_t i = 0; i < m; ++i) {
                      double gi = gs.data[static_cast<size_t>(i)];
                      double* gwr = gw.data.data() + i * n;
                      for (int64_t j = 0; j < n; ++j)
                        gwr[j] += gi * vx.data[static_cast<size_t>(j)];
                    }
                  }
                  if (gr.node(ib).requires_grad) {
                    Tensor& gb = gr.grad_buffer(ib);
                    for (int64_t i = 0; i < m; ++i)
                      gb.data[static_cast<size_t>(i)] += gs.data[static_cast<size_t>(i)];
                  }
                });
}

namespace detail {

// out[co] += sum_ci K[co,ci] * shifted(in[ci]); shared by the forward pass
// and the input-gradient pass (which runs it with transposed kernels).
inline void conv2d_accumulate(const double* in, int64_t cin, const double* k,
                              int64_t cout, int64_t kh, int64_t kw, int64_t h,
                              int64_t w, double* out) {
  int64_t ph = kh / 2, pw = kw / 2;
  for (int64_t co = 0; co < cout; ++co) {
    double* outp = out + co * h * w;
    for (int64_t ci = 0; ci < cin; ++ci) {
      const double* inp = in + ci * h * w;
      const double* kp = k + (co * cin + ci) * kh * kw;
      for (int64_t ty = 0; ty < kh; ++ty) {
        int64_t dy = ty - ph;
        int64_t y0 = dy < 0 ? -dy : 0;
        int64_t y1 = dy > 0 ? h - dy : h;
        for (int64_t tx = 0; tx < kw; ++tx) {
          int64_t dx = tx - pw;
          double kv = kp[ty * kw + tx];
          if (kv == 0.0) continue;
          int64_t x0 = dx < 0 ? -dx : 0;
          int64_t x1 = dx > 0 ? w - dx : w;
          for (int64_t y = y0; y < y1; ++y) {
            double* orow = outp + y * w;
            const double* irow = inp + (y + dy) * w + dx;
            for (int64_t x = x0; x < x1; ++x) orow[x] += kv * irow[x];
          }
        }
      }
    }
  }
}

}  // namespace detail

// Zero-padded "same" convolution: x [Cin,H,W], k [Cout,Cin,kh,kw] with odd
// kh,kw, b [Cout] -> [Cout,H,W].
inline Var conv2d(Var x, Var k, Var b) {
  Graph& g = detail::same_graph(x, k);
  detail::same_graph(x, b);
  const Tensor& tx = g.value(x);
  const Tensor& tk = g.value(k);
  const Tensor& tb = g.value(b);
  if (tx.rank() != 3 || tk.rank() != 4 || tb.rank() != 1 || tx.is_complex() ||
      tk.size(1) != tx.size(0) || tb.size(0) != tk.size(0) ||
      tk.size(2) % 2 == 0 || tk.size(3) % 2 == 0)
    throw NumericError("conv2d: bad shapes");
  int64_t cin = tx.size(0), h = tx.size(1), w = tx.size(2);
  int64_t cout = tk.size(0), kh = tk.size(2), kw = tk.size(3);
  Tensor out = Tensor::zeros_real({cout, h, w});
  for (int64_t co = 0; co < cout; ++co) {
    double bv = tb.data[static_cast<size_t>(co)];
    double* op = out.data.data() + co * h * w;
    for (int64_t i = 0; i < h * w; ++i) op[i] = bv;
  }
  detail::conv2d_accumulate(tx.data.data(), cin, tk.data.data(), cout, kh, kw,
                            h, w, out.data.data());
  int ix = x.id, ik = k.id, ib = b.id;
  return g.make(
      std::move(out), detail::any_grad(g, {ix, ik, ib}),
      [ix, ik, ib, cin, cout, h, w, kh, kw](Graph& gr, int self) {
        const Tensor& gs = gr.node(self).grad;
        const Tensor& vx = gr.node(ix).value;
        const Tensor& vk = gr.node(ik).value;
        int64_t ph = kh / 2, pw = kw / 2;
        if (gr.node(ix).requires_grad) {
          // Correlation with the flipped kernel, channels transposed.
          Tensor kt = Tensor::zeros_real({cin, cout, kh, kw});
          for (int64_t co = 0; co < cout; ++co)
            for (int64_t ci = 0; ci < cin; ++ci)
              for (int64_t ty = 0; ty < kh; ++ty)
                for (int64_t tx2 = 0; tx2 < kw; ++tx2)
                  kt.data[static_cast<size_t>(
                      ((ci * cout + co) * kh + (kh - 1 - ty)) * kw +
                      (kw - 1 - tx2))] =
                      vk.data[static_cast<size_t>(((co * cin + ci) * kh + ty) * kw +
                                                  tx2)];
          Tensor& gx = gr.grad_buffer(ix);
          detail::conv2d_accumulate(gs.data.data(), cout, kt.data.data(), cin,
                                    kh, kw, h, w, gx.data.data());
        }
        if (gr.node(ik).requires_grad) {
          Tensor& gk = gr.grad_buffer(ik);
          for (int64_t co = 0; co < cout; ++co) {
            const double* gp = gs.data.data() + co * h * w;
            for (int64_t ci = 0; ci < cin; ++ci) {
              const double* ip = vx.data.data() + ci * h * w;
              for (int64_t ty = 0; ty < kh; ++ty) {
                int64_t dy = ty - ph;
                int64_t y0 = dy < 0 ? -dy : 0;
                int64_t y1 = dy > 0 ? h - dy : h;
                for (int64_t tx2 = 0; tx2 < kw; ++tx2) {
                  int64_t dx = tx2 - pw;
                  int64_t x0 = dx < 0 ? -dx : 0;
                  int64_t x1 = dx > 0 ? w - dx : w;
                  double acc = 0.0;
                  for (int64_t y = y0; y < y1; ++y) {
                    const double* grow = gp + y * w;
                    const double* irow = ip + (y + dy) * w + dx;
                    for (int64_t x = x0; x < x1; ++x) acc += grow[x] * irow[x];
                  }
                  gk.data[static_cast<size_t>(((co * cin + ci) * kh + ty) * kw +
                                              tx2)] += acc;
                }
              }
            }
          }
        }
        if (gr.node(ib).requires_grad) {
          Tensor& gb = gr.grad_buffer(ib);
          for (int64_t co = 0; co < cout; ++co) {
            const double* gp = gs.data.data() + co * h * w;
            double acc = 0.0;
            for (int64_t i = 0; i < h * w; ++i) acc += gp[i];
            gb.data[static_cast<size_t>(co)] += acc;
          }
        }
      });
}

// out[c,:,:] = x[c,:,:] * v[c]; the conditioning hook that lets a temporal
// factor vector steer spatial features.
inline Var channel_modulate(Var x, Var v) {
  Graph& g = detail::same_graph(x, v);
  const Tensor& tx = g.value(x);
  const Tensor& tv = g.value(v);
  if (tx.rank() != 3 || tv.rank() != 1 || tv.size(0) != tx.size(0) ||
      tx.is_complex() || tv.is_complex())
    throw NumericError("channel_modulate: bad shapes");
  int64_t c = tx.size(0), hw = tx.size(1) * tx.size(2);
  Tensor out = tx;
  for (int64_t ch = 0; ch < c; ++ch) {
    double f = tv.data[static_cast<size_t>(ch)];
    double* p = out.data.data() + ch * hw;
    for (int64_t i = 0; i < hw; ++i) p[i] *= f;
  }
  int ix = x.id, iv = v.id;
  return g.make(std::move(out), detail::any_grad(g, {ix, iv}),
                [ix, iv, c, hw](Graph& gr, int self) {
                  const Tensor& gs = gr.node(self).grad;
                  const Tensor& vx = gr.node(ix).value;
                  const Tensor& vv = gr.node(iv).value;
                  if (gr.node(ix).requires_grad) {
                    Tensor& gx = gr.grad_buffer(ix);
                    for (int64_t ch = 0; ch < c; ++ch) {
                      double f = vv.data[static_cast<size_t>(ch)];
                      double* gp = gx.data.data() + ch * hw;
                      const double* sp = gs.data.data() + ch * hw;
                      for (int64_t i = 0; i < hw; ++i) gp[i] += f * sp[i];
                    }
                  }
                  if (gr.node(iv).requires_grad) {
                    Tensor& gv = gr.grad_buffer(iv);
                    for (int64_t ch = 0; ch < c; ++ch) {
                      const double* xp = vx.data.data() + ch * hw;
                      const double* sp = gs.data.data() + ch * hw;
                      double acc = 0.0;
                      for (int64_t i = 0; i < hw; ++i) acc += xp[i] * sp[i];
                      gv.data[static_cast<size_t>(ch)] += acc;
                    }
                  }
                });
}

inline Var activate(Var x, Act act) {
  if (act == Act::None) return x;
  Graph& g = *x.g;
  const Tensor& tx = g.value(x);
  if (tx.is_complex()) throw NumericError("activate: real input expected");
  Tensor out = tx;
  if (act == Act::Tanh) {
    for (double& v : out.data) v = std::tanh(v);
  } else {
    for (double& v : out.data) v = v > 0.0 ? v : kLeakySlope * v;
  }
  int ix = x.id;
  return g.make(std::move(out), g.node(ix).requires_grad,
                [ix, act](Graph& gr, int self) {
                  if (!gr.node(ix).requires_grad) return;
                  const Tensor& gs = gr.node(self).grad;
                  Tensor& gx = gr.grad_buffer(ix);
                  if (act == Act::Tanh) {
                    const Tensor& y = gr.node(self).value;
                    for (size_t k = 0; k < gx.data.size(); ++k)
                      gx.data[k] += (1.0 - y.data[k] * y.data[k]) * gs.data[k];
                  } else {
                    const Tensor& vx = gr.node(ix).value;
                    for (size_t k = 0; k < gx.data.size(); ++k)
                      gx.data[k] +=
                          (vx.data[k] > 0.0 ? 1.0 : kLeakySlope) * gs.data[k];
                  }
                });
}

// Contiguous slice of a rank-1 real tensor.
inline Var slice1d(Var x, int64_t off, int64_t len) {
  Graph& g = *x.g;
  const Tensor& tx = g.value(x);
  if (tx.rank() != 1 || tx.is_complex() || off < 0 || len < 0 ||
      off + len > tx.size(0))
    throw NumericError("slice1d: bad range");
  Tensor out = Tensor::zeros_real({len});
  for (int64_t i = 0; i < len; ++i)
    out.data[static_cast<size_t>(i)] = tx.data[static_cast<size_t>(off + i)];
  int ix = x.id;
  return g.make(std::move(out), g.node(ix).requires_grad,
                [ix, off, len](Graph& gr, int self) {
                  if (!gr.node(ix).requires_grad) return;
                  const Tensor& gs = gr.node(self).grad;
                  Tensor& gx = gr.grad_buffer(ix);
                  for (int64_t i = 0; i < len; ++i)
                    gx.data[static_cast<size_t>(off + i)] +=
                        gs.data[static_cast<size_t>(i)];
                });
}

// [2,H,W] real (re plane, im plane) -> [H,W] complex.
inline Var pack_complex(Var x) {
  Graph& g = *x.g;
  const Tensor& tx = g.value(x);
  if (tx.rank() != 3 || tx.size(0) != 2 || tx.is_complex())
    throw NumericError("pack_complex: expected [2,H,W] real");
  int64_t h = tx.size(1), w = tx.size(2), hw = h * w;
  Tensor out = Tensor::zeros_complex({h, w});
  for (int64_t i = 0; i < hw; ++i) {
    out.data[static_cast<size_t>(2 * i)] = tx.data[static_cast<size_t>(i)];
    out.data[static_cast<size_t>(2 * i + 1)] = tx.data[static_cast<size_t>(hw + i)];
  }
  int ix = x.id;
  return g.make(std::move(out), g.node(ix).requires_grad,
                [ix, hw](Graph& gr, int self) {
                  if (!gr.node(ix).requires_grad) return;
                  const Tensor& gs = gr.node(self).grad;
                  Tensor& gx = gr.grad_buffer(ix);
                  for (int64_t i = 0; i < hw; ++i) {
                    gx.data[static_cast<size_t>(i)] +=
                        gs.data[static_cast<size_t>(2 * i)];
                    gx.data[static_cast<size_t>(hw + i)] +=
                        gs.data[static_cast<size_t>(2 * i + 1)];
                  }
                });
}

// lambda * sum of squared first differences along axis 0. Rows may hold any
// number of columns (e.g. [S] rotations or [S,2] translations).
inline Var first_diff_penalty(Var x, double lambda) {
  Graph& g = *x.g;
  const Tensor& tx = g.value(x);
  if (tx.rank() < 1 || tx.is_complex())
    throw NumericError("first_diff_penalty: real tensor expected");
  int64_t rows = tx.size(0);
  int64_t cols = rows > 0 ? tx.numel() / rows : 0;
  double s = 0.0;
  for (int64_t r = 0; r + 1 < rows; ++r)
    for (int64_t c = 0; c < cols; ++c) {
      double d = tx.data[static_cast<size_t>((r + 1) * cols + c)] -
                 tx.data[static_cast<size_t>(r * cols + c)];
      s += d * d;
    }
  Tensor out = Tensor::zeros_real({1});
  out.data[0] = lambda * s;
  int ix = x.id;
  return g.make(std::move(out), g.node(ix).requires_grad,
                [ix, rows, cols, lambda](Graph& gr, int self) {
                  if (!gr.node(ix).requires_grad) return;
                  double gs = gr.node(self).grad.data[0];
                  const Tensor& vx = gr.node(ix).value;
                  Tensor& gx = gr.grad_buffer(ix);
                  for (int64_t r = 0; r + 1 < rows; ++r)
                    for (int64_t c = 0; c < cols; ++c) {
                      double d = vx.data[static_cast<size_t>((r + 1) * cols + c)] -
                                 vx.data[static_cast<size_t>(r * cols + c)];
                      double gd = 2.0 * lambda * gs * d;
                      gx.data[static_cast<size_t>((r + 1) * cols + c)] += gd;
                      gx.data[static_cast<size_t>(r * cols + c)] -= gd;
                    }
                });
}

}  // namespace dfmr
