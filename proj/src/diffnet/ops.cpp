#include "theragan/diffnet/ops.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <memory>
#include <string>

#include "theragan/diffnet/fft.hpp"
#include "theragan/error.hpp"

namespace theragan::diffnet {

namespace {

void require(bool ok, const std::string& what) {
  if (!ok) throw Error(ErrorKind::ShapeMismatch, what);
}

// Indices i in [0, count) with i * stride + offset in [0, bound).
struct Span {
  std::size_t begin;
  std::size_t end;
};

Span valid_range(std::size_t count, std::size_t stride, long offset, std::size_t bound) {
  const long s = static_cast<long>(stride);
  long lo = 0;
  if (offset < 0) lo = (-offset + s - 1) / s;
  const long top = static_cast<long>(bound) - 1 - offset;
  if (top < 0) return {0, 0};
  long hi = top / s + 1;
  hi = std::min<long>(hi, static_cast<long>(count));
  if (hi <= lo) return {0, 0};
  return {static_cast<std::size_t>(lo), static_cast<std::size_t>(hi)};
}

std::size_t last_dim(const Shape& s) { return s.empty() ? 1 : s.back(); }

Tensor& grad_of(Var v) { return v.grad(); }

template <typename F>
Var unary(Var x, F&& fn, Graph::BackwardFn backward) {
  Tensor out(x.shape());
  const Tensor& in = x.value();
  for (std::size_t i = 0; i < in.size(); ++i) out[i] = fn(in[i]);
  return x.graph->record(std::move(out), {x}, std::move(backward));
}

}  // namespace

std::size_t conv_output_length(std::size_t length, std::size_t kernel, std::size_t stride, std::size_t pad) {
  if (stride == 0 || length + 2 * pad < kernel) {
    throw Error(ErrorKind::ShapeMismatch, "convolution kernel larger than padded input");
  }
  return (length + 2 * pad - kernel) / stride + 1;
}

std::size_t tconv_output_length(std::size_t length, std::size_t kernel, std::size_t stride, std::size_t pad,
                                std::size_t output_pad) {
  const long out = (static_cast<long>(length) - 1) * static_cast<long>(stride) - 2 * static_cast<long>(pad) +
                   static_cast<long>(kernel) + static_cast<long>(output_pad);
  if (length == 0 || out <= 0) throw Error(ErrorKind::ShapeMismatch, "transposed convolution yields empty output");
  return static_cast<std::size_t>(out);
}

// ---------------------------------------------------------------------------
// Convolutions

Var conv1d(Var x, Var weight, Var bias, ConvGeometry geo) {
  const Shape& xs = x.shape();
  const Shape& ws = weight.shape();
  require(xs.size() == 3 && ws.size() == 3, "conv1d expects (N,C,L) input and (Cout,Cin,K) weight");
  require(xs[1] == ws[1], "conv1d channel mismatch: input " + shape_string(xs) + " weight " + shape_string(ws));
  require(bias.value().size() == ws[0], "conv1d bias size mismatch");
  const std::size_t n_batch = xs[0], cin = xs[1], len = xs[2];
  const std::size_t cout = ws[0], k_size = ws[2];
  const std::size_t lout = conv_output_length(len, k_size, geo.stride, geo.pad);
  const std::size_t s = geo.stride;
  const long pad = static_cast<long>(geo.pad);

  Tensor out({n_batch, cout, lout});
  const auto& xv = x.value().data;
  const auto& wv = weight.value().data;
  const auto& bv = bias.value().data;
  for (std::size_t n = 0; n < n_batch; ++n) {
    for (std::size_t co = 0; co < cout; ++co) {
      double* o = &out.data[(n * cout + co) * lout];
      std::fill(o, o + lout, bv[co]);
      for (std::size_t ci = 0; ci < cin; ++ci) {
        const double* xi = &xv[(n * cin + ci) * len];
        for (std::size_t k = 0; k < k_size; ++k) {
          const double w = wv[(co * cin + ci) * k_size + k];
          const long off = static_cast<long>(k) - pad;
          const Span r = valid_range(lout, s, off, len);
          for (std::size_t lo = r.begin; lo < r.end; ++lo) o[lo] += w * xi[lo * s + off];
        }
      }
    }
  }
  return x.graph->record(std::move(out), {x, weight, bias},
                         [=](const Tensor&, const Tensor& g) {
                           const auto& xv = x.value().data;
                           const auto& wv = weight.value().data;
                           const bool gx = x.requires_grad(), gw = weight.requires_grad(),
                                      gb = bias.requires_grad();
                           double* dx = gx ? grad_of(x).data.data() : nullptr;
                           double* dw = gw ? grad_of(weight).data.data() : nullptr;
                           double* db = gb ? grad_of(bias).data.data() : nullptr;
                           for (std::size_t n = 0; n < n_batch; ++n) {
                             for (std::size_t co = 0; co < cout; ++co) {
                               const double* go = &g.data[(n * cout + co) * lout];
                               if (db) {
                                 double acc = 0.0;
                                 for (std::size_t lo = 0; lo < lout; ++lo) acc += go[lo];
                                 db[co] += acc;
                               }
                               for (std::size_t ci = 0; ci < cin; ++ci) {
                                 const std::size_t xoff = (n * cin + ci) * len;
                                 for (std::size_t k = 0; k < k_size; ++k) {
                                   const std::size_t widx = (co * cin + ci) * k_size + k;
                                   const long off = static_cast<long>(k) - pad;
                                   const Span r = valid_range(lout, s, off, len);
                                   if (dx) {
                                     const double w = wv[widx];
                                     for (std::size_t lo = r.begin; lo < r.end; ++lo)
                                       dx[xoff + lo * s + off] += w * go[lo];
                                   }
                                   if (dw) {
                                     double acc = 0.0;
                                     for (std::size_t lo = r.begin; lo < r.end; ++lo)
                                       acc += go[lo] * xv[xoff + lo * s + off];
                                     dw[widx] += acc;
                                   }
                                 }
                               }
                             }
                           }
                         });
}

Var tconv1d(Var x, Var weight, Var bias, ConvGeometry geo) {
  const Shape& xs = x.shape();
  const Shape& ws = weight.shape();
  require(xs.size() == 3 && ws.size() == 3, "tconv1d expects (N,C,L) input and (Cin,Cout,K) weight");
  require(xs[1] == ws[0], "tconv1d channel mismatch: input " + shape_string(xs) + " weight " + shape_string(ws));
  require(bias.value().size() == ws[1], "tconv1d bias size mismatch");
  const std::size_t n_batch = xs[0], cin = xs[1], len = xs[2];
  const std::size_t cout = ws[1], k_size = ws[2];
  const std::size_t lout = tconv_output_length(len, k_size, geo.stride, geo.pad, geo.output_pad);
  const std::size_t s = geo.stride;
  const long pad = static_cast<long>(geo.pad);

  Tensor out({n_batch, cout, lout});
  const auto& xv = x.value().data;
  const auto& wv = weight.value().data;
  const auto& bv = bias.value().data;
  for (std::size_t n = 0; n < n_batch; ++n) {
    for (std::size_t co = 0; co < cout; ++co) {
      double* o = &out.data[(n * cout + co) * lout];
      std::fill(o, o + lout, bv[co]);
      for (std::size_t ci = 0; ci < cin; ++ci) {
        const double* xi = &xv[(n * cin + ci) * len];
        for (std::size_t k = 0; k < k_size; ++k) {
          const double w = wv[(ci * cout + co) * k_size + k];
          const long off = static_cast<long>(k) - pad;
          const Span r = valid_range(len, s, off, lout);
          for (std::size_t li = r.begin; li < r.end; ++li) o[li * s + off] += w * xi[li];
        }
      }
    }
  }
  return x.graph->record(std::move(out), {x, weight, bias},
                         [=](const Tensor&, const Tensor& g) {
                           const auto& xv = x.value().data;
                           const auto& wv = weight.value().data;
                           double* dx = x.requires_grad() ? grad_of(x).data.data() : nullptr;
                           double* dw = weight.requires_grad() ? grad_of(weight).data.data() : nullptr;
                           double* db = bias.requires_grad() ? grad_of(bias).data.data() : nullptr;
                           for (std::size_t n = 0; n < n_batch; ++n) {
                             for (std::size_t co = 0; co < cout; ++co) {
                               const double* go = &g.data[(n * cout + co) * lout];
                               if (db) {
                                 double acc = 0.0;
                                 for (std::size_t lo = 0; lo < lout; ++lo) acc += go[lo];
                                 db[co] += acc;
                               }
                               for (std::size_t ci = 0; ci < cin; ++ci) {
                                 const std::size_t xoff = (n * cin + ci) * len;
                                 for (std::size_t k = 0; k < k_size; ++k) {
                                   const std::size_t widx = (ci * cout + co) * k_size + k;
                                   const long off = static_cast<long>(k) - pad;
                                   const Span r = valid_range(len, s, off, lout);
                                   if (dx) {
                                     const double w = wv[widx];
                                     for (std::size_t li = r.begin; li < r.end; ++li)
                                       dx[xoff + li] += w * go[li * s + off];
                                   }
                                   if (dw) {
                                     double acc = 0.0;
                                     for (std::size_t li = r.begin; li < r.end; ++li)
                                       acc += go[li * s + off] * xv[xoff + li];
                                     dw[widx] += acc;
                                   }
                                 }
                               }
                             }
                           }
                         });
}

Var depthwise_conv1d(Var x, Var weight, Var bias, ConvGeometry geo) {
  const Shape& xs = x.shape();
  const Shape& ws = weight.shape();
  require(xs.size() == 3 && ws.size() == 2 && ws[0] == xs[1], "depthwise_conv1d expects (N,C,L) and (C,K)");
  require(bias.value().size() == xs[1], "depthwise_conv1d bias size mismatch");
  const std::size_t n_batch = xs[0], ch = xs[1], len = xs[2], k_size = ws[1];
  const std::size_t lout = conv_output_length(len, k_size, geo.stride, geo.pad);
  const std::size_t s = geo.stride;
  const long pad = static_cast<long>(geo.pad);

  Tensor out({n_batch, ch, lout});
  const auto& xv = x.value().data;
  const auto& wv = weight.value().data;
  for (std::size_t n = 0; n < n_batch; ++n) {
    for (std::size_t c = 0; c < ch; ++c) {
      double* o = &out.data[(n * ch + c) * lout];
      std::fill(o, o + lout, bias.value()[c]);
      const double* xi = &xv[(n * ch + c) * len];
      for (std::size_t k = 0; k < k_size; ++k) {
        const long off = static_cast<long>(k) - pad;
        const Span r = valid_range(lout, s, off, len);
        for (std::size_t lo = r.begin; lo < r.end; ++lo) o[lo] += wv[c * k_size + k] * xi[lo * s + off];
      }
    }
  }
  return x.graph->record(std::move(out), {x, weight, bias}, [=](const Tensor&, const Tensor& g) {
    const auto& xv = x.value().data;
    const auto& wv = weight.value().data;
    double* dx = x.requires_grad() ? grad_of(x).data.data() : nullptr;
    double* dw = weight.requires_grad() ? grad_of(weight).data.data() : nullptr;
    double* db = bias.requires_grad() ? grad_of(bias).data.data() : nullptr;
    for (std::size_t n = 0; n < n_batch; ++n) {
      for (std::size_t c = 0; c < ch; ++c) {
        const double* go = &g.data[(n * ch + c) * lout];
        const std::size_t xoff = (n * ch + c) * len;
        if (db)
          for (std::size_t lo = 0; lo < lout; ++lo) db[c] += go[lo];
        for (std::size_t k = 0; k < k_size; ++k) {
          const long off = static_cast<long>(k) - pad;
          const Span r = valid_range(lout, s, off, len);
          for (std::size_t lo = r.begin; lo < r.end; ++lo) {
            if (dx) dx[xoff + lo * s + off] += wv[c * k_size + k] * go[lo];
            if (dw) dw[c * k_size + k] += go[lo] * xv[xoff + lo * s + off];
          }
        }
      }
    }
  });
}

Var sepconv1d(Var x, Var depthwise, Var pointwise, Var bias, ConvGeometry geo) {
  const Shape& xs = x.shape();
  const Shape& ds = depthwise.shape();
  const Shape& ps = pointwise.shape();
  require(xs.size() == 3 && ds.size() == 2 && ds[0] == xs[1], "sepconv1d expects (N,C,L) and depthwise (C,K)");
  require(ps.size() == 2 && ps[1] == xs[1], "sepconv1d pointwise weight must be (Cout,C)");
  require(bias.value().size() == ps[0], "sepconv1d bias size mismatch");
  const std::size_t n_batch = xs[0], ch = xs[1], len = xs[2], k_size = ds[1], cout = ps[0];
  const std::size_t lout = conv_output_length(len, k_size, geo.stride, geo.pad);
  const std::size_t s = geo.stride;
  const long pad = static_cast<long>(geo.pad);

  // Depthwise intermediate is kept for the backward pass.
  auto mid = std::make_shared<std::vector<double>>(n_batch * ch * lout, 0.0);
  const auto& xv = x.value().data;
  const auto& dv = depthwise.value().data;
  const auto& pv = pointwise.value().data;
  for (std::size_t n = 0; n < n_batch; ++n) {
    for (std::size_t c = 0; c < ch; ++c) {
      double* m = &(*mid)[(n * ch + c) * lout];
      const double* xi = &xv[(n * ch + c) * len];
      for (std::size_t k = 0; k < k_size; ++k) {
        const long off = static_cast<long>(k) - pad;
        const Span r = valid_range(lout, s, off, len);
        for (std::size_t lo = r.begin; lo < r.end; ++lo) m[lo] += dv[c * k_size + k] * xi[lo * s + off];
      }
    }
  }
  Tensor out({n_batch, cout, lout});
  for (std::size_t n = 0; n < n_batch; ++n) {
    for (std::size_t co = 0; co < cout; ++co) {
      double* o = &out.data[(n * cout + co) * lout];
      std::fill(o, o + lout, bias.value()[co]);
      for (std::size_t c = 0; c < ch; ++c) {
        const double w = pv[co * ch + c];
        const double* m = &(*mid)[(n * ch + c) * lout];
        for (std::size_t lo = 0; lo < lout; ++lo) o[lo] += w * m[lo];
      }
    }
  }
  return x.graph->record(std::move(out), {x, depthwise, pointwise, bias}, [=](const Tensor&, const Tensor& g) {
    const auto& xv = x.value().data;
    const auto& dv = depthwise.value().data;
    const auto& pv = pointwise.value().data;
    double* dx = x.requires_grad() ? grad_of(x).data.data() : nullptr;
    double* ddw = depthwise.requires_grad() ? grad_of(depthwise).data.data() : nullptr;
    double* dpw = pointwise.requires_grad() ? grad_of(pointwise).data.data() : nullptr;
    double* db = bias.requires_grad() ? grad_of(bias).data.data() : nullptr;
    std::vector<double> gmid(lout);
    for (std::size_t n = 0; n < n_batch; ++n) {
      for (std::size_t co = 0; co < cout; ++co) {
        if (!db) break;
        const double* go = &g.data[(n * cout + co) * lout];
        for (std::size_t lo = 0; lo < lout; ++lo) db[co] += go[lo];
      }
      for (std::size_t c = 0; c < ch; ++c) {
        const double* m = &(*mid)[(n * ch + c) * lout];
        std::fill(gmid.begin(), gmid.end(), 0.0);
        for (std::size_t co = 0; co < cout; ++co) {
          const double* go = &g.data[(n * cout + co) * lout];
          const double w = pv[co * ch + c];
          double acc = 0.0;
          for (std::size_t lo = 0; lo < lout; ++lo) {
            gmid[lo] += w * go[lo];
            acc += go[lo] * m[lo];
          }
          if (dpw) dpw[co * ch + c] += acc;
        }
        if (!dx && !ddw) continue;
        const std::size_t xoff = (n * ch + c) * len;
        for (std::size_t k = 0; k < k_size; ++k) {
          const long off = static_cast<long>(k) - pad;
          const Span r = valid_range(lout, s, off, len);
          for (std::size_t lo = r.begin; lo < r.end; ++lo) {
            if (dx) dx[xoff + lo * s + off] += dv[c * k_size + k] * gmid[lo];
            if (ddw) ddw[c * k_size + k] += gmid[lo] * xv[xoff + lo * s + off];
          }
        }
      }
    }
  });
}

Var conv2d(Var x, Var weight, Var bias, ConvGeometry geo) {
  const Shape& xs = x.shape();
  const Shape& ws = weight.shape();
  require(xs.size() == 4 && ws.size() == 4 && xs[1] == ws[1], "conv2d expects (N,C,H,W) and (Cout,Cin,KH,KW)");
  require(bias.value().size() == ws[0], "conv2d bias size mismatch");
  const std::size_t n_batch = xs[0], cin = xs[1], h = xs[2], w = xs[3];
  const std::size_t cout = ws[0], kh = ws[2], kw = ws[3];
  const std::size_t s = geo.stride;
  const long pad = static_cast<long>(geo.pad);
  const std::size_t ho = conv_output_length(h, kh, s, geo.pad);
  const std::size_t wo = conv_output_length(w, kw, s, geo.pad);

  Tensor out({n_batch, cout, ho, wo});
  const auto& xv = x.value().data;
  const auto& wv = weight.value().data;
  for (std::size_t n = 0; n < n_batch; ++n) {
    for (std::size_t co = 0; co < cout; ++co) {
      double* o = &out.data[(n * cout + co) * ho * wo];
      std::fill(o, o + ho * wo, bias.value()[co]);
      for (std::size_t ci = 0; ci < cin; ++ci) {
        const double* xi = &xv[(n * cin + ci) * h * w];
        for (std::size_t a = 0; a < kh; ++a) {
          const long offr = static_cast<long>(a) - pad;
          const Span rr = valid_range(ho, s, offr, h);
          for (std::size_t b = 0; b < kw; ++b) {
            const double wt = wv[((co * cin + ci) * kh + a) * kw + b];
            const long offc = static_cast<long>(b) - pad;
            const Span rc = valid_range(wo, s, offc, w);
            for (std::size_t i = rr.begin; i < rr.end; ++i) {
              const double* xrow = xi + (i * s + offr) * w;
              double* orow = o + i * wo;
              for (std::size_t j = rc.begin; j < rc.end; ++j) orow[j] += wt * xrow[j * s + offc];
            }
          }
        }
      }
    }
  }
  return x.graph->record(std::move(out), {x, weight, bias}, [=](const Tensor&, const Tensor& g) {
    const auto& xv = x.value().data;
    const auto& wv = weight.value().data;
    double* dx = x.requires_grad() ? grad_of(x).data.data() : nullptr;
    double* dw = weight.requires_grad() ? grad_of(weight).data.data() : nullptr;
    double* db = bias.requires_grad() ? grad_of(bias).data.data() : nullptr;
    for (std::size_t n = 0; n < n_batch; ++n) {
      for (std::size_t co = 0; co < cout; ++co) {
        const double* go = &g.data[(n * cout + co) * ho * wo];
        if (db)
          for (std::size_t i = 0; i < ho * wo; ++i) db[co] += go[i];
        for (std::size_t ci = 0; ci < cin; ++ci) {
          const std::size_t xoff = (n * cin + ci) * h * w;
          for (std::size_t a = 0; a < kh; ++a) {
            const long offr = static_cast<long>(a) - pad;
            const Span rr = valid_range(ho, s, offr, h);
            for (std::size_t b = 0; b < kw; ++b) {
              const std::size_t widx = ((co * cin + ci) * kh + a) * kw + b;
              const long offc = static_cast<long>(b) - pad;
              const Span rc = valid_range(wo, s, offc, w);
              double acc = 0.0;
              for (std::size_t i = rr.begin; i < rr.end; ++i) {
                const std::size_t xrow = xoff + (i * s + offr) * w;
                const double* grow = go + i * wo;
                for (std::size_t j = rc.begin; j < rc.end; ++j) {
                  if (dx) dx[xrow + j * s + offc] += wv[widx] * grow[j];
                  acc += grow[j] * xv[xrow + j * s + offc];
                }
              }
              if (dw) dw[widx] += acc;
            }
          }
        }
      }
    }
  });
}

// ---------------------------------------------------------------------------
// Dense and pooling

Var dense(Var x, Var weight, Var bias) {
  const Shape& xs = x.shape();
  const Shape& ws = weight.shape();
  require(ws.size() == 2 && !xs.empty() && xs.back() == ws[1],
          "dense input " + shape_string(xs) + " incompatible with weight " + shape_string(ws));
  require(bias.value().size() == ws[0], "dense bias size mismatch");
  const std::size_t features = ws[1], outs = ws[0];
  const std::size_t rows = x.value().size() / features;
  Shape os = xs;
  os.back() = outs;
  Tensor out(os);
  const auto& xv = x.value().data;
  const auto& wv = weight.value().data;
  const auto& bv = bias.value().data;
  for (std::size_t r = 0; r < rows; ++r) {
    const double* xr = &xv[r * features];
    for (std::size_t o = 0; o < outs; ++o) {
      const double* wr = &wv[o * features];
      double acc = bv[o];
      for (std::size_t f = 0; f < features; ++f) acc += wr[f] * xr[f];
      out.data[r * outs + o] = acc;
    }
  }
  return x.graph->record(std::move(out), {x, weight, bias}, [=](const Tensor&, const Tensor& g) {
    const auto& xv = x.value().data;
    const auto& wv = weight.value().data;
    double* dx = x.requires_grad() ? grad_of(x).data.data() : nullptr;
    double* dw = weight.requires_grad() ? grad_of(weight).data.data() : nullptr;
    double* db = bias.requires_grad() ? grad_of(bias).data.data() : nullptr;
    for (std::size_t r = 0; r < rows; ++r) {
      const double* xr = &xv[r * features];
      for (std::size_t o = 0; o < outs; ++o) {
        const double go = g.data[r * outs + o];
        if (go == 0.0) continue;
        if (db) db[o] += go;
        if (dx) {
          const double* wr = &wv[o * features];
          double* dxr = dx + r * features;
          for (std::size_t f = 0; f < features; ++f) dxr[f] += go * wr[f];
        }
        if (dw) {
          double* dwr = dw + o * features;
          for (std::size_t f = 0; f < features; ++f) dwr[f] += go * xr[f];
        }
      }
    }
  });
}

Var maxpool1d(Var x, std::size_t width, std::size_t stride, std::size_t pad) {
  const Shape& xs = x.shape();
  require(!xs.empty() && width > 0 && stride > 0, "maxpool1d requires width, stride > 0");
  const std::size_t len = xs.back();
  require(pad < width, "maxpool1d pad must be smaller than width");
  const std::size_t lout = conv_output_length(len, width, stride, pad);
  const std::size_t rows = x.value().size() / len;
  Shape os = xs;
  os.back() = lout;
  Tensor out(os);
  auto argmax = std::make_shared<std::vector<std::size_t>>(rows * lout);
  const auto& xv = x.value().data;
  for (std::size_t r = 0; r < rows; ++r) {
    for (std::size_t lo = 0; lo < lout; ++lo) {
      double best = -std::numeric_limits<double>::infinity();
      std::size_t best_i = 0;
      for (std::size_t k = 0; k < width; ++k) {
        const long li = static_cast<long>(lo * stride + k) - static_cast<long>(pad);
        if (li < 0 || li >= static_cast<long>(len)) continue;
        const double v = xv[r * len + static_cast<std::size_t>(li)];
        if (v > best) {
          best = v;
          best_i = static_cast<std::size_t>(li);
        }
      }
      out.data[r * lout + lo] = best;
      (*argmax)[r * lout + lo] = r * len + best_i;
    }
  }
  return x.graph->record(std::move(out), {x}, [=](const Tensor&, const Tensor& g) {
    Tensor& dx = grad_of(x);
    for (std::size_t i = 0; i < g.size(); ++i) dx[(*argmax)[i]] += g[i];
  });
}

Var avgpool1d(Var x, std::size_t width, std::size_t stride, std::size_t pad) {
  const Shape& xs = x.shape();
  require(!xs.empty() && width > 0 && stride > 0, "avgpool1d requires width, stride > 0");
  const std::size_t len = xs.back();
  const std::size_t lout = conv_output_length(len, width, stride, pad);
  const std::size_t rows = x.value().size() / len;
  const double inv = 1.0 / static_cast<double>(width);
  Shape os = xs;
  os.back() = lout;
  Tensor out(os);
  const auto& xv = x.value().data;
  for (std::size_t r = 0; r < rows; ++r) {
    for (std::size_t k = 0; k < width; ++k) {
      const long off = static_cast<long>(k) - static_cast<long>(pad);
      const Span sp = valid_range(lout, stride, off, len);
      for (std::size_t lo = sp.begin; lo < sp.end; ++lo)
        out.data[r * lout + lo] += inv * xv[r * len + lo * stride + off];
    }
  }
  return x.graph->record(std::move(out), {x}, [=](const Tensor&, const Tensor& g) {
    Tensor& dx = grad_of(x);
    for (std::size_t r = 0; r < rows; ++r) {
      for (std::size_t k = 0; k < width; ++k) {
        const long off = static_cast<long>(k) - static_cast<long>(pad);
        const Span sp = valid_range(lout, stride, off, len);
        for (std::size_t lo = sp.begin; lo < sp.end; ++lo)
          dx.data[r * len + lo * stride + off] += inv * g.data[r * lout + lo];
      }
    }
  });
}

// ---------------------------------------------------------------------------
// Elementwise

Var relu(Var x) {
  return unary(x, [](double v) { return v > 0.0 ? v : 0.0; }, [x](const Tensor&, const Tensor& g) {
    Tensor& dx = grad_of(x);
    const auto& xv = x.value().data;
    for (std::size_t i = 0; i < g.size(); ++i)
      if (xv[i] > 0.0) dx[i] += g[i];
  });
}

Var leaky_relu(Var x, double slope) {
  return unary(x, [slope](double v) { return v > 0.0 ? v : slope * v; },
               [x, slope](const Tensor&, const Tensor& g) {
                 Tensor& dx = grad_of(x);
                 const auto& xv = x.value().data;
                 for (std::size_t i = 0; i < g.size(); ++i) dx[i] += xv[i] > 0.0 ? g[i] : slope * g[i];
               });
}

Var tanh(Var x) {
  return unary(x, [](double v) { return std::tanh(v); }, [x](const Tensor& y, const Tensor& g) {
    Tensor& dx = grad_of(x);
    for (std::size_t i = 0; i < g.size(); ++i) dx[i] += g[i] * (1.0 - y[i] * y[i]);
  });
}

Var sigmoid(Var x) {
  return unary(
      x,
      [](double v) {
        if (v >= 0.0) return 1.0 / (1.0 + std::exp(-v));
        const double e = std::exp(v);
        return e / (1.0 + e);
      },
      [x](const Tensor& y, const Tensor& g) {
        Tensor& dx = grad_of(x);
        for (std::size_t i = 0; i < g.size(); ++i) dx[i] += g[i] * y[i] * (1.0 - y[i]);
      });
}

Var add(Var a, Var b) {
  require(a.shape() == b.shape(), "add shape mismatch " + shape_string(a.shape()) + " vs " + shape_string(b.shape()));
  Tensor out(a.shape());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.value()[i] + b.value()[i];
  return a.graph->record(std::move(out), {a, b}, [a, b](const Tensor&, const Tensor& g) {
    if (a.requires_grad()) {
      Tensor& da = grad_of(a);
      for (std::size_t i = 0; i < g.size(); ++i) da[i] += g[i];
    }
    if (b.requires_grad()) {
      Tensor& db = grad_of(b);
      for (std::size_t i = 0; i < g.size(); ++i) db[i] += g[i];
    }
  });
}

Var sub(Var a, Var b) { return add(a, scale(b, -1.0)); }

Var mul(Var a, Var b) {
  require(a.shape() == b.shape(), "mul shape mismatch");
  Tensor out(a.shape());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.value()[i] * b.value()[i];
  return a.graph->record(std::move(out), {a, b}, [a, b](const Tensor&, const Tensor& g) {
    if (a.requires_grad()) {
      Tensor& da = grad_of(a);
      for (std::size_t i = 0; i < g.size(); ++i) da[i] += g[i] * b.value()[i];
    }
    if (b.requires_grad()) {
      Tensor& db = grad_of(b);
      for (std::size_t i = 0; i < g.size(); ++i) db[i] += g[i] * a.value()[i];
    }
  });
}

Var scale(Var x, double factor) {
  return unary(x, [factor](double v) { return v * factor; }, [x, factor](const Tensor&, const Tensor& g) {
    Tensor& dx = grad_of(x);
    for (std::size_t i = 0; i < g.size(); ++i) dx[i] += factor * g[i];
  });
}

Var add_broadcast(Var x, const Tensor& constant) {
  const std::size_t block = constant.size();
  require(block > 0 && x.value().size() % block == 0, "add_broadcast constant does not tile the input");
  Tensor out = x.value();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] += constant[i % block];
  return x.graph->record(std::move(out), {x}, [x](const Tensor&, const Tensor& g) {
    Tensor& dx = grad_of(x);
    for (std::size_t i = 0; i < g.size(); ++i) dx[i] += g[i];
  });
}

// ---------------------------------------------------------------------------
// Shape manipulation

Var concat(const std::vector<Var>& parts, std::size_t axis) {
  require(!parts.empty(), "concat of zero tensors");
  const Shape& first = parts.front().shape();
  require(axis < first.size(), "concat axis out of range");
  Shape os = first;
  os[axis] = 0;
  for (const Var& p : parts) {
    const Shape& s = p.shape();
    require(s.size() == first.size(), "concat rank mismatch");
    for (std::size_t d = 0; d < s.size(); ++d) {
      if (d != axis) require(s[d] == first[d], "concat shape mismatch " + shape_string(s) + " vs " + shape_string(first));
    }
    os[axis] += s[axis];
  }
  std::size_t outer = 1, inner = 1;
  for (std::size_t d = 0; d < axis; ++d) outer *= first[d];
  for (std::size_t d = axis + 1; d < first.size(); ++d) inner *= first[d];
  Tensor out(os);
  const std::size_t out_block = os[axis] * inner;
  std::size_t offset = 0;
  for (const Var& p : parts) {
    const std::size_t block = p.shape()[axis] * inner;
    for (std::size_t o = 0; o < outer; ++o) {
      std::copy_n(p.value().data.begin() + static_cast<std::ptrdiff_t>(o * block), block,
                  out.data.begin() + static_cast<std::ptrdiff_t>(o * out_block + offset));
    }
    offset += block;
  }
  return parts.front().graph->record(std::move(out), parts, [=](const Tensor&, const Tensor& g) {
    std::size_t offset = 0;
    for (const Var& p : parts) {
      const std::size_t block = p.shape()[axis] * inner;
      if (p.requires_grad()) {
        Tensor& dp = grad_of(p);
        for (std::size_t o = 0; o < outer; ++o)
          for (std::size_t i = 0; i < block; ++i) dp[o * block + i] += g[o * out_block + offset + i];
      }
      offset += block;
    }
  });
}

Var reshape(Var x, Shape shape) {
  require(shape_size(shape) == x.value().size(),
          "reshape " + shape_string(x.shape()) + " to " + shape_string(shape) + " changes element count");
  Tensor out(std::move(shape), x.value().data);
  return x.graph->record(std::move(out), {x}, [x](const Tensor&, const Tensor& g) {
    Tensor& dx = grad_of(x);
    for (std::size_t i = 0; i < g.size(); ++i) dx[i] += g[i];
  });
}

Var permute(Var x, const std::vector<std::size_t>& order) {
  const Shape& xs = x.shape();
  require(order.size() == xs.size(), "permute order rank mismatch");
  const std::size_t rank = xs.size();
  std::vector<std::size_t> in_strides(rank, 1);
  for (std::size_t d = rank - 1; d-- > 0;) in_strides[d] = in_strides[d + 1] * xs[d + 1];
  Shape os(rank);
  for (std::size_t d = 0; d < rank; ++d) os[d] = xs.at(order[d]);
  // Source offset of every output element.
  auto source = std::make_shared<std::vector<std::size_t>>(x.value().size());
  std::vector<std::size_t> idx(rank, 0);
  for (std::size_t i = 0; i < source->size(); ++i) {
    std::size_t src = 0;
    for (std::size_t d = 0; d < rank; ++d) src += idx[d] * in_strides[order[d]];
    (*source)[i] = src;
    for (std::size_t d = rank; d-- > 0;) {
      if (++idx[d] < os[d]) break;
      idx[d] = 0;
    }
  }
  Tensor out(os);
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = x.value()[(*source)[i]];
  return x.graph->record(std::move(out), {x}, [x, source](const Tensor&, const Tensor& g) {
    Tensor& dx = grad_of(x);
    for (std::size_t i = 0; i < g.size(); ++i) dx[(*source)[i]] += g[i];
  });
}

Var slice_last(Var x, std::size_t begin, std::size_t count) {
  const Shape& xs = x.shape();
  const std::size_t len = last_dim(xs);
  require(begin + count <= len && count > 0, "slice_last range out of bounds");
  const std::size_t rows = x.value().size() / len;
  Shape os = xs;
  os.back() = count;
  Tensor out(os);
  for (std::size_t r = 0; r < rows; ++r)
    for (std::size_t i = 0; i < count; ++i) out[r * count + i] = x.value()[r * len + begin + i];
  return x.graph->record(std::move(out), {x}, [=](const Tensor&, const Tensor& g) {
    Tensor& dx = grad_of(x);
    for (std::size_t r = 0; r < rows; ++r)
      for (std::size_t i = 0; i < count; ++i) dx[r * len + begin + i] += g[r * count + i];
  });
}

Var select_last(Var x, std::size_t index) {
  const Shape& xs = x.shape();
  require(xs.size() >= 2 && index < xs.back(), "select_last index out of bounds");
  const std::size_t len = xs.back();
  const std::size_t rows = x.value().size() / len;
  Shape os(xs.begin(), xs.end() - 1);
  Tensor out(os);
  for (std::size_t r = 0; r < rows; ++r) out[r] = x.value()[r * len + index];
  return x.graph->record(std::move(out), {x}, [=](const Tensor&, const Tensor& g) {
    Tensor& dx = grad_of(x);
    for (std::size_t r = 0; r < rows; ++r) dx[r * len + index] += g[r];
  });
}

Var mean_axis(Var x, std::size_t axis) {
  const Shape& xs = x.shape();
  require(axis < xs.size() && xs.size() >= 2, "mean_axis axis out of range");
  std::size_t outer = 1, inner = 1;
  for (std::size_t d = 0; d < axis; ++d) outer *= xs[d];
  for (std::size_t d = axis + 1; d < xs.size(); ++d) inner *= xs[d];
  const std::size_t n = xs[axis];
  Shape os = xs;
  os.erase(os.begin() + static_cast<std::ptrdiff_t>(axis));
  Tensor out(os);
  const double inv = 1.0 / static_cast<double>(n);
  for (std::size_t o = 0; o < outer; ++o)
    for (std::size_t a = 0; a < n; ++a)
      for (std::size_t i = 0; i < inner; ++i) out[o * inner + i] += inv * x.value()[(o * n + a) * inner + i];
  return x.graph->record(std::move(out), {x}, [=](const Tensor&, const Tensor& g) {
    Tensor& dx = grad_of(x);
    for (std::size_t o = 0; o < outer; ++o)
      for (std::size_t a = 0; a < n; ++a)
        for (std::size_t i = 0; i < inner; ++i) dx[(o * n + a) * inner + i] += inv * g[o * inner + i];
  });
}

Var sum_all(Var x) {
  double acc = 0.0;
  for (double v : x.value().data) acc += v;
  return x.graph->record(Tensor({1}, {acc}), {x}, [x](const Tensor&, const Tensor& g) {
    Tensor& dx = grad_of(x);
    for (std::size_t i = 0; i < dx.size(); ++i) dx[i] += g[0];
  });
}

// ---------------------------------------------------------------------------
// Attention building blocks

Var matmul(Var a, Var b) {
  const Shape& as = a.shape();
  const Shape& bs = b.shape();
  require(as.size() >= 2 && as.size() == bs.size(), "matmul rank mismatch");
  const std::size_t r = as.size();
  require(as[r - 1] == bs[r - 2], "matmul inner dimension mismatch " + shape_string(as) + " x " + shape_string(bs));
  for (std::size_t d = 0; d + 2 < r; ++d) require(as[d] == bs[d], "matmul batch dimension mismatch");
  const std::size_t m = as[r - 2], k = as[r - 1], p = bs[r - 1];
  const std::size_t batch = a.value().size() / (m * k);
  Shape os = as;
  os.back() = p;
  Tensor out(os);
  const auto& av = a.value().data;
  const auto& bv = b.value().data;
  for (std::size_t t = 0; t < batch; ++t)
    for (std::size_t i = 0; i < m; ++i)
      for (std::size_t j = 0; j < k; ++j) {
        const double aij = av[(t * m + i) * k + j];
        const double* brow = &bv[(t * k + j) * p];
        double* orow = &out.data[(t * m + i) * p];
        for (std::size_t c = 0; c < p; ++c) orow[c] += aij * brow[c];
      }
  return a.graph->record(std::move(out), {a, b}, [=](const Tensor&, const Tensor& g) {
    const auto& av = a.value().data;
    const auto& bv = b.value().data;
    double* da = a.requires_grad() ? grad_of(a).data.data() : nullptr;
    double* db = b.requires_grad() ? grad_of(b).data.data() : nullptr;
    for (std::size_t t = 0; t < batch; ++t)
      for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = 0; j < k; ++j) {
          const double* grow = &g.data[(t * m + i) * p];
          const double* brow = &bv[(t * k + j) * p];
          if (da) {
            double acc = 0.0;
            for (std::size_t c = 0; c < p; ++c) acc += grow[c] * brow[c];
            da[(t * m + i) * k + j] += acc;
          }
          if (db) {
            const double aij = av[(t * m + i) * k + j];
            double* dbrow = db + (t * k + j) * p;
            for (std::size_t c = 0; c < p; ++c) dbrow[c] += aij * grow[c];
          }
        }
  });
}

Var softmax_last(Var x) {
  const std::size_t len = last_dim(x.shape());
  const std::size_t rows = x.value().size() / len;
  Tensor out(x.shape());
  for (std::size_t r = 0; r < rows; ++r) {
    const double* xr = &x.value().data[r * len];
    double* yr = &out.data[r * len];
    const double mx = *std::max_element(xr, xr + len);
    double total = 0.0;
    for (std::size_t i = 0; i < len; ++i) total += (yr[i] = std::exp(xr[i] - mx));
    for (std::size_t i = 0; i < len; ++i) yr[i] /= total;
  }
  return x.graph->record(std::move(out), {x}, [=](const Tensor& y, const Tensor& g) {
    Tensor& dx = grad_of(x);
    for (std::size_t r = 0; r < rows; ++r) {
      double dot = 0.0;
      for (std::size_t i = 0; i < len; ++i) dot += g[r * len + i] * y[r * len + i];
      for (std::size_t i = 0; i < len; ++i) dx[r * len + i] += y[r * len + i] * (g[r * len + i] - dot);
    }
  });
}

Var layer_norm_last(Var x, Var gain, Var offset, double eps) {
  const std::size_t len = last_dim(x.shape());
  require(gain.value().size() == len && offset.value().size() == len, "layer_norm parameter size mismatch");
  const std::size_t rows = x.value().size() / len;
  auto normalized = std::make_shared<std::vector<double>>(x.value().size());
  auto inv_std = std::make_shared<std::vector<double>>(rows);
  Tensor out(x.shape());
  for (std::size_t r = 0; r < rows; ++r) {
    const double* xr = &x.value().data[r * len];
    double mean = 0.0;
    for (std::size_t i = 0; i < len; ++i) mean += xr[i];
    mean /= static_cast<double>(len);
    double var = 0.0;
    for (std::size_t i = 0; i < len; ++i) var += (xr[i] - mean) * (xr[i] - mean);
    var /= static_cast<double>(len);
    const double is = 1.0 / std::sqrt(var + eps);
    (*inv_std)[r] = is;
    for (std::size_t i = 0; i < len; ++i) {
      const double xh = (xr[i] - mean) * is;
      (*normalized)[r * len + i] = xh;
      out[r * len + i] = gain.value()[i] * xh + offset.value()[i];
    }
  }
  return x.graph->record(std::move(out), {x, gain, offset}, [=](const Tensor&, const Tensor& g) {
    double* dgain = gain.requires_grad() ? grad_of(gain).data.data() : nullptr;
    double* doff = offset.requires_grad() ? grad_of(offset).data.data() : nullptr;
    double* dx = x.requires_grad() ? grad_of(x).data.data() : nullptr;
    const double n = static_cast<double>(len);
    for (std::size_t r = 0; r < rows; ++r) {
      double sum_gh = 0.0, sum_gh_xh = 0.0;
      for (std::size_t i = 0; i < len; ++i) {
        const double gi = g[r * len + i];
        const double xh = (*normalized)[r * len + i];
        if (dgain) dgain[i] += gi * xh;
        if (doff) doff[i] += gi;
        const double gh = gi * gain.value()[i];
        sum_gh += gh;
        sum_gh_xh += gh * xh;
      }
      if (!dx) continue;
      for (std::size_t i = 0; i < len; ++i) {
        const double gh = g[r * len + i] * gain.value()[i];
        const double xh = (*normalized)[r * len + i];
        dx[r * len + i] += (*inv_std)[r] * (gh - sum_gh / n - xh * sum_gh_xh / n);
      }
    }
  });
}

// ---------------------------------------------------------------------------
// Noise and spectra

Var gaussian_noise(Var x, double sigma, Rng& rng) {
  std::normal_distribution<double> dist(0.0, sigma);
  Tensor out = x.value();
  for (double& v : out.data) v += dist(rng);
  return x.graph->record(std::move(out), {x}, [x](const Tensor&, const Tensor& g) {
    Tensor& dx = grad_of(x);
    for (std::size_t i = 0; i < g.size(); ++i) dx[i] += g[i];
  });
}

Var dft_magnitude(Var x) {
  const Shape& xs = x.shape();
  const std::size_t len = last_dim(xs);
  require(!xs.empty() && len >= 2, "dft_magnitude requires a last axis of length >= 2");
  const std::size_t bins = len / 2 + 1;
  const std::size_t rows = x.value().size() / len;
  Shape os = xs;
  os.back() = bins;
  Tensor out(os);
  auto re = std::make_shared<std::vector<double>>(rows * bins);
  auto im = std::make_shared<std::vector<double>>(rows * bins);
  for (std::size_t r = 0; r < rows; ++r) {
    std::span<const double> row(&x.value().data[r * len], len);
    real_dft(row, {&(*re)[r * bins], bins}, {&(*im)[r * bins], bins});
    for (std::size_t k = 0; k < bins; ++k) {
      const double a = (*re)[r * bins + k], b = (*im)[r * bins + k];
      out[r * bins + k] = std::sqrt(a * a + b * b + kDftEpsilon);
    }
  }
  return x.graph->record(std::move(out), {x}, [=](const Tensor& y, const Tensor& g) {
    Tensor& dx = grad_of(x);
    const TwiddleTable table(len);
    std::vector<double> cr(bins), ci(bins);
    for (std::size_t r = 0; r < rows; ++r) {
      for (std::size_t k = 0; k < bins; ++k) {
        const double scale_k = g[r * bins + k] / y[r * bins + k];
        cr[k] = scale_k * (*re)[r * bins + k];
        ci[k] = scale_k * (*im)[r * bins + k];
      }
      for (std::size_t t = 0; t < len; ++t) {
        double acc = 0.0;
        for (std::size_t k = 0; k < bins; ++k) {
          const std::size_t m = (k * t) % len;
          acc += cr[k] * table.cos[m] - ci[k] * table.sin[m];
        }
        dx[r * len + t] += acc;
      }
    }
  });
}

// ---------------------------------------------------------------------------
// Losses

Var bce_loss(Var probabilities, std::span<const double> labels) {
  const Tensor& p = probabilities.value();
  require(p.size() == labels.size() && !labels.empty(), "bce_loss label count mismatch");
  constexpr double lo = 1e-7, hi = 1.0 - 1e-7;
  const double inv_n = 1.0 / static_cast<double>(labels.size());
  double total = 0.0;
  for (std::size_t i = 0; i < p.size(); ++i) {
    const double q = std::clamp(p[i], lo, hi);
    total -= labels[i] * std::log(q) + (1.0 - labels[i]) * std::log(1.0 - q);
  }
  std::vector<double> y(labels.begin(), labels.end());
  return probabilities.graph->record(Tensor({1}, {total * inv_n}), {probabilities},
                                     [probabilities, y, inv_n](const Tensor&, const Tensor& g) {
                                       Tensor& dp = grad_of(probabilities);
                                       const Tensor& p = probabilities.value();
                                       for (std::size_t i = 0; i < p.size(); ++i) {
                                         if (p[i] < lo || p[i] > hi) continue;
                                         dp[i] += g[0] * inv_n * (-(y[i] / p[i]) + (1.0 - y[i]) / (1.0 - p[i]));
                                       }
                                     });
}

Var cross_entropy(Var probabilities, std::span<const std::size_t> labels) {
  const Shape& ps = probabilities.shape();
  require(ps.size() == 2 && ps[0] == labels.size() && !labels.empty(), "cross_entropy expects (N,K) and N labels");
  const std::size_t k = ps[1];
  constexpr double lo = 1e-7;
  const double inv_n = 1.0 / static_cast<double>(labels.size());
  double total = 0.0;
  for (std::size_t i = 0; i < labels.size(); ++i) {
    require(labels[i] < k, "cross_entropy label out of range");
    total -= std::log(std::max(probabilities.value()[i * k + labels[i]], lo));
  }
  std::vector<std::size_t> y(labels.begin(), labels.end());
  return probabilities.graph->record(Tensor({1}, {total * inv_n}), {probabilities},
                                     [probabilities, y, k, inv_n](const Tensor&, const Tensor& g) {
                                       Tensor& dp = grad_of(probabilities);
                                       for (std::size_t i = 0; i < y.size(); ++i) {
                                         const double p = probabilities.value()[i * k + y[i]];
                                         if (p < lo) continue;
                                         dp[i * k + y[i]] -= g[0] * inv_n / p;
                                       }
                                     });
}

}  // namespace theragan::diffnet
