#include "dcvit/ops.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <numeric>

#include "dcvit/error.hpp"

namespace dcvit {

namespace {

using detail::Node;

std::size_t normalize_axis(int axis, std::size_t rank) {
  int r = static_cast<int>(rank);
  int a = axis < 0 ? axis + r : axis;
  if (a < 0 || a >= r) {
    throw ShapeError("axis " + std::to_string(axis) + " out of range for rank " +
                     std::to_string(rank));
  }
  return static_cast<std::size_t>(a);
}

// Gradient buffer of parent i, or nullptr when it does not need one.
std::vector<double>* parent_grad(Node& self, std::size_t i) {
  Node& p = *self.parents[i];
  return p.requires_grad ? &p.ensure_grad() : nullptr;
}

Shape broadcast_shape(const Shape& a, const Shape& b) {
  const std::size_t r = std::max(a.size(), b.size());
  Shape out(r);
  for (std::size_t i = 0; i < r; ++i) {
    std::size_t da = i < r - a.size() ? 1 : a[i - (r - a.size())];
    std::size_t db = i < r - b.size() ? 1 : b[i - (r - b.size())];
    if (da != db && da != 1 && db != 1) {
      throw ShapeError("cannot broadcast " + shape_str(a) + " with " + shape_str(b));
    }
    out[i] = std::max(da, db);
  }
  return out;
}

// Strides of `in` laid over `out`, zero along broadcast dimensions.
std::vector<std::size_t> broadcast_strides(const Shape& in, const Shape& out) {
  std::vector<std::size_t> strides(out.size(), 0);
  std::size_t stride = 1;
  for (std::size_t k = 0; k < in.size(); ++k) {
    std::size_t i = in.size() - 1 - k;
    std::size_t o = out.size() - 1 - k;
    strides[o] = in[i] == 1 ? 0 : stride;
    stride *= in[i];
  }
  return strides;
}

// Calls f(out_index, a_offset, b_offset) for every output element.
template <class F>
void for_each_broadcast(const Shape& out, const std::vector<std::size_t>& sa,
                        const std::vector<std::size_t>& sb, F&& f) {
  const std::size_t r = out.size();
  const std::size_t inner = out[r - 1];
  const std::size_t ia_step = sa[r - 1];
  const std::size_t ib_step = sb[r - 1];
  const std::size_t total = shape_numel(out);
  std::vector<std::size_t> idx(r, 0);
  std::size_t oa = 0, ob = 0;
  for (std::size_t base = 0; base < total; base += inner) {
    for (std::size_t j = 0; j < inner; ++j) f(base + j, oa + j * ia_step, ob + j * ib_step);
    // Advance the outer counter.
    for (std::size_t d = r - 1; d-- > 0;) {
      ++idx[d];
      oa += sa[d];
      ob += sb[d];
      if (idx[d] < out[d]) break;
      oa -= sa[d] * idx[d];
      ob -= sb[d] * idx[d];
      idx[d] = 0;
    }
  }
}

enum class BinaryKind { kAdd, kSub, kMul, kDiv };

Tensor binary(const Tensor& a, const Tensor& b, BinaryKind kind) {
  const Shape out_shape = broadcast_shape(a.shape(), b.shape());
  const auto sa = broadcast_strides(a.shape(), out_shape);
  const auto sb = broadcast_strides(b.shape(), out_shape);
  std::vector<double> out(shape_numel(out_shape));
  auto ad = a.data();
  auto bd = b.data();
  for_each_broadcast(out_shape, sa, sb, [&](std::size_t o, std::size_t i, std::size_t j) {
    switch (kind) {
      case BinaryKind::kAdd: out[o] = ad[i] + bd[j]; break;
      case BinaryKind::kSub: out[o] = ad[i] - bd[j]; break;
      case BinaryKind::kMul: out[o] = ad[i] * bd[j]; break;
      case BinaryKind::kDiv: out[o] = ad[i] / bd[j]; break;
    }
  });
  return Tensor::make_result(
      out_shape, std::move(out), {a, b}, [out_shape, sa, sb, kind](Node& self) {
        auto* ga = parent_grad(self, 0);
        auto* gb = parent_grad(self, 1);
        const auto& av = self.parents[0]->data;
        const auto& bv = self.parents[1]->data;
        const auto& g = self.grad;
        for_each_broadcast(out_shape, sa, sb, [&](std::size_t o, std::size_t i, std::size_t j) {
          switch (kind) {
            case BinaryKind::kAdd:
              if (ga) (*ga)[i] += g[o];
              if (gb) (*gb)[j] += g[o];
              break;
            case BinaryKind::kSub:
              if (ga) (*ga)[i] += g[o];
              if (gb) (*gb)[j] -= g[o];
              break;
            case BinaryKind::kMul:
              if (ga) (*ga)[i] += g[o] * bv[j];
              if (gb) (*gb)[j] += g[o] * av[i];
              break;
            case BinaryKind::kDiv:
              if (ga) (*ga)[i] += g[o] / bv[j];
              if (gb) (*gb)[j] -= g[o] * av[i] / (bv[j] * bv[j]);
              break;
          }
        });
      });
}

}  // namespace

// ---------------------------------------------------------------------------
// Convolution

void Conv2dSpec::validate() const {
  if (in_channels == 0 || out_channels == 0 || groups == 0) {
    throw ShapeError("conv2d: channel counts and groups must be positive");
  }
  if (kernel.first == 0 || kernel.second == 0 || stride.first == 0 || stride.second == 0) {
    throw ShapeError("conv2d: kernel and stride must be positive");
  }
  if (in_channels % groups != 0 || out_channels % groups != 0) {
    throw ShapeError("conv2d: groups (" + std::to_string(groups) + ") must divide in_channels (" +
                     std::to_string(in_channels) + ") and out_channels (" +
                     std::to_string(out_channels) + ")");
  }
}

std::pair<std::size_t, std::size_t> Conv2dSpec::output_size(std::size_t height,
                                                            std::size_t width) const {
  auto one = [](std::size_t size, std::size_t k, std::size_t s, std::size_t p,
                const char* which) -> std::size_t {
    const std::size_t padded = size + 2 * p;
    if (padded < k) {
      throw ShapeError(std::string("conv2d: non-positive output ") + which + " (input " +
                       std::to_string(size) + ", kernel " + std::to_string(k) + ", padding " +
                       std::to_string(p) + ")");
    }
    return (padded - k) / s + 1;
  };
  return {one(height, kernel.first, stride.first, padding.first, "height"),
          one(width, kernel.second, stride.second, padding.second, "width")};
}

Tensor conv2d(const Tensor& input, const Tensor& weight, const Tensor& bias,
              const Conv2dSpec& spec) {
  spec.validate();
  const Shape& is = input.shape();
  if (is.size() != 4 || is[1] != spec.in_channels) {
    throw ShapeError("conv2d: input " + shape_str(is) + " does not match in_channels " +
                     std::to_string(spec.in_channels));
  }
  if (weight.shape() != spec.weight_shape()) {
    throw ShapeError("conv2d: weight " + shape_str(weight.shape()) + " expected " +
                     shape_str(spec.weight_shape()));
  }
  if (bias.defined() && bias.shape() != Shape{spec.out_channels}) {
    throw ShapeError("conv2d: bias " + shape_str(bias.shape()) + " expected [" +
                     std::to_string(spec.out_channels) + "]");
  }
  const auto [hout, wout] = spec.output_size(is[2], is[3]);

  struct Geometry {
    std::size_t batch, cin, h, w, cout, hout, wout, kh, kw, sh, sw, ph, pw, groups;
  };
  const Geometry geo{is[0],           is[1],           is[2],           is[3],
                     spec.out_channels, hout,          wout,            spec.kernel.first,
                     spec.kernel.second, spec.stride.first, spec.stride.second,
                     spec.padding.first, spec.padding.second, spec.groups};

  // Visits (b, oc, ic, weight index, oh, ow range) tuples; the body sees
  // the input row for a given kernel tap.
  auto sweep = [](const Geometry& g, auto&& tap) {
    const std::size_t cin_g = g.cin / g.groups;
    const std::size_t cout_g = g.cout / g.groups;
    for (std::size_t b = 0; b < g.batch; ++b) {
      for (std::size_t oc = 0; oc < g.cout; ++oc) {
        const std::size_t grp = oc / cout_g;
        for (std::size_t icg = 0; icg < cin_g; ++icg) {
          const std::size_t ic = grp * cin_g + icg;
          const std::size_t in_plane = (b * g.cin + ic) * g.h * g.w;
          const std::size_t out_plane = (b * g.cout + oc) * g.hout * g.wout;
          for (std::size_t ki = 0; ki < g.kh; ++ki) {
            for (std::size_t kj = 0; kj < g.kw; ++kj) {
              const std::size_t widx = ((oc * cin_g + icg) * g.kh + ki) * g.kw + kj;
              // ow such that 0 <= ow*sw + kj - pw < w
              std::size_t ow_lo = 0;
              if (g.pw > kj) ow_lo = (g.pw - kj + g.sw - 1) / g.sw;
              if (g.w + g.pw <= kj) continue;
              std::size_t ow_hi = (g.w - 1 + g.pw - kj) / g.sw;
              if (ow_hi >= g.wout) ow_hi = g.wout - 1;
              if (ow_lo > ow_hi) continue;
              for (std::size_t oh = 0; oh < g.hout; ++oh) {
                const std::size_t ih_raw = oh * g.sh + ki;
                if (ih_raw < g.ph || ih_raw - g.ph >= g.h) continue;
                const std::size_t in_row = in_plane + (ih_raw - g.ph) * g.w;
                const std::size_t out_row = out_plane + oh * g.wout;
                tap(widx, in_row, out_row, ow_lo, ow_hi, kj);
              }
            }
          }
        }
      }
    }
  };

  std::vector<double> out(geo.batch * geo.cout * hout * wout, 0.0);
  auto x = input.data();
  auto wv = weight.data();
  if (bias.defined()) {
    auto bv = bias.data();
    for (std::size_t b = 0; b < geo.batch; ++b)
      for (std::size_t oc = 0; oc < geo.cout; ++oc)
        std::fill_n(out.begin() + static_cast<std::ptrdiff_t>((b * geo.cout + oc) * hout * wout),
                    hout * wout, bv[oc]);
  }
  sweep(geo, [&](std::size_t widx, std::size_t in_row, std::size_t out_row, std::size_t lo,
                 std::size_t hi, std::size_t kj) {
    const double w = wv[widx];
    for (std::size_t ow = lo; ow <= hi; ++ow) {
      out[out_row + ow] += w * x[in_row + ow * geo.sw + kj - geo.pw];
    }
  });

  std::vector<Tensor> parents{input, weight};
  if (bias.defined()) parents.push_back(bias);
  return Tensor::make_result(
      {geo.batch, geo.cout, hout, wout}, std::move(out), std::move(parents),
      [geo, sweep](Node& self) {
        auto* gin = parent_grad(self, 0);
        auto* gw = parent_grad(self, 1);
        const auto& xv = self.parents[0]->data;
        const auto& wv2 = self.parents[1]->data;
        const auto& g = self.grad;
        if (gin || gw) {
          sweep(geo, [&](std::size_t widx, std::size_t in_row, std::size_t out_row,
                         std::size_t lo, std::size_t hi, std::size_t kj) {
            const double w = wv2[widx];
            double acc = 0.0;
            for (std::size_t ow = lo; ow <= hi; ++ow) {
              const std::size_t xi = in_row + ow * geo.sw + kj - geo.pw;
              if (gin) (*gin)[xi] += w * g[out_row + ow];
              acc += xv[xi] * g[out_row + ow];
            }
            if (gw) (*gw)[widx] += acc;
          });
        }
        if (self.parents.size() > 2) {
          if (auto* gb = parent_grad(self, 2)) {
            const std::size_t plane = geo.hout * geo.wout;
            for (std::size_t b = 0; b < geo.batch; ++b)
              for (std::size_t oc = 0; oc < geo.cout; ++oc) {
                const std::size_t base = (b * geo.cout + oc) * plane;
                double s = 0.0;
                for (std::size_t i = 0; i < plane; ++i) s += g[base + i];
                (*gb)[oc] += s;
              }
          }
        }
      });
}

// ---------------------------------------------------------------------------
// Dense algebra

Tensor linear(const Tensor& input, const Tensor& weight, const Tensor& bias) {
  const Shape& xs = input.shape();
  const Shape& ws = weight.shape();
  if (ws.size() != 2) throw ShapeError("linear: weight must be [Dout, Din], got " + shape_str(ws));
  const std::size_t din = ws[1];
  const std::size_t dout = ws[0];
  if (xs.back() != din) {
    throw ShapeError("linear: input " + shape_str(xs) + " last dim != Din " + std::to_string(din));
  }
  if (bias.defined() && bias.shape() != Shape{dout}) {
    throw ShapeError("linear: bias " + shape_str(bias.shape()) + " expected [" +
                     std::to_string(dout) + "]");
  }
  const std::size_t rows = input.numel() / din;
  Shape out_shape = xs;
  out_shape.back() = dout;
  std::vector<double> out(rows * dout);
  auto x = input.data();
  auto w = weight.data();
  for (std::size_t r = 0; r < rows; ++r) {
    const double* xr = x.data() + r * din;
    for (std::size_t o = 0; o < dout; ++o) {
      const double* wo = w.data() + o * din;
      double s = bias.defined() ? bias.data()[o] : 0.0;
      for (std::size_t i = 0; i < din; ++i) s += xr[i] * wo[i];
      out[r * dout + o] = s;
    }
  }
  std::vector<Tensor> parents{input, weight};
  if (bias.defined()) parents.push_back(bias);
  return Tensor::make_result(out_shape, std::move(out), std::move(parents),
                             [rows, din, dout](Node& self) {
                               auto* gx = parent_grad(self, 0);
                               auto* gw = parent_grad(self, 1);
                               auto* gb = self.parents.size() > 2 ? parent_grad(self, 2) : nullptr;
                               const auto& xv = self.parents[0]->data;
                               const auto& wv = self.parents[1]->data;
                               const auto& g = self.grad;
                               for (std::size_t r = 0; r < rows; ++r) {
                                 for (std::size_t o = 0; o < dout; ++o) {
                                   const double go = g[r * dout + o];
                                   if (go == 0.0) continue;
                                   if (gx) {
                                     double* dst = gx->data() + r * din;
                                     const double* wo = wv.data() + o * din;
                                     for (std::size_t i = 0; i < din; ++i) dst[i] += go * wo[i];
                                   }
                                   if (gw) {
                                     double* dst = gw->data() + o * din;
                                     const double* xr = xv.data() + r * din;
                                     for (std::size_t i = 0; i < din; ++i) dst[i] += go * xr[i];
                                   }
                                   if (gb) (*gb)[o] += go;
                                 }
                               }
                             });
}

Tensor matmul(const Tensor& a, const Tensor& b) {
  const Shape& as = a.shape();
  const Shape& bs = b.shape();
  if (as.size() < 2 || bs.size() < 2) throw ShapeError("matmul: operands need rank >= 2");
  const std::size_t m = as[as.size() - 2];
  const std::size_t k = as.back();
  const std::size_t n = bs.back();
  if (bs[bs.size() - 2] != k) {
    throw ShapeError("matmul: inner dimensions differ, " + shape_str(as) + " x " + shape_str(bs));
  }
  const bool shared_b = bs.size() == 2;
  if (!shared_b && !std::equal(as.begin(), as.end() - 2, bs.begin(), bs.end() - 2)) {
    throw ShapeError("matmul: batch dimensions differ, " + shape_str(as) + " x " + shape_str(bs));
  }
  const std::size_t batch = a.numel() / (m * k);
  Shape out_shape(as.begin(), as.end() - 2);
  out_shape.push_back(m);
  out_shape.push_back(n);
  std::vector<double> out(batch * m * n, 0.0);
  auto av = a.data();
  auto bv = b.data();
  for (std::size_t p = 0; p < batch; ++p) {
    const double* A = av.data() + p * m * k;
    const double* B = bv.data() + (shared_b ? 0 : p * k * n);
    double* C = out.data() + p * m * n;
    for (std::size_t i = 0; i < m; ++i)
      for (std::size_t t = 0; t < k; ++t) {
        const double aik = A[i * k + t];
        const double* brow = B + t * n;
        double* crow = C + i * n;
        for (std::size_t j = 0; j < n; ++j) crow[j] += aik * brow[j];
      }
  }
  return Tensor::make_result(
      out_shape, std::move(out), {a, b}, [batch, m, k, n, shared_b](Node& self) {
        auto* ga = parent_grad(self, 0);
        auto* gb = parent_grad(self, 1);
        const auto& av2 = self.parents[0]->data;
        const auto& bv2 = self.parents[1]->data;
        const auto& g = self.grad;
        for (std::size_t p = 0; p < batch; ++p) {
          const double* A = av2.data() + p * m * k;
          const double* B = bv2.data() + (shared_b ? 0 : p * k * n);
          const double* G = g.data() + p * m * n;
          for (std::size_t i = 0; i < m; ++i) {
            for (std::size_t t = 0; t < k; ++t) {
              const double* brow = B + t * n;
              const double* grow = G + i * n;
              if (ga) {
                double s = 0.0;
                for (std::size_t j = 0; j < n; ++j) s += grow[j] * brow[j];
                (*ga)[p * m * k + i * k + t] += s;
              }
              if (gb) {
                const double aik = A[i * k + t];
                double* dst = gb->data() + (shared_b ? 0 : p * k * n) + t * n;
                for (std::size_t j = 0; j < n; ++j) dst[j] += aik * grow[j];
              }
            }
          }
        }
      });
}

Tensor add(const Tensor& a, const Tensor& b) { return binary(a, b, BinaryKind::kAdd); }
Tensor sub(const Tensor& a, const Tensor& b) { return binary(a, b, BinaryKind::kSub); }
Tensor mul(const Tensor& a, const Tensor& b) { return binary(a, b, BinaryKind::kMul); }
Tensor div(const Tensor& a, const Tensor& b) { return binary(a, b, BinaryKind::kDiv); }

Tensor scale(const Tensor& x, double factor) {
  std::vector<double> out(x.data().begin(), x.data().end());
  for (double& v : out) v *= factor;
  return Tensor::make_result(x.shape(), std::move(out), {x}, [factor](Node& self) {
    if (auto* gx = parent_grad(self, 0))
      for (std::size_t i = 0; i < gx->size(); ++i) (*gx)[i] += factor * self.grad[i];
  });
}

Tensor sum(const Tensor& x) {
  auto d = x.data();
  const double s = std::accumulate(d.begin(), d.end(), 0.0);
  return Tensor::make_result({1}, {s}, {x}, [](Node& self) {
    if (auto* gx = parent_grad(self, 0))
      for (double& v : *gx) v += self.grad[0];
  });
}

Tensor mean(const Tensor& x) { return scale(sum(x), 1.0 / static_cast<double>(x.numel())); }

// ---------------------------------------------------------------------------
// Layout

Tensor reshape(const Tensor& x, const Shape& shape) {
  if (shape_numel(shape) != x.numel()) {
    throw ShapeError("reshape: " + shape_str(x.shape()) + " -> " + shape_str(shape) +
                     " changes element count");
  }
  std::vector<double> out(x.data().begin(), x.data().end());
  return Tensor::make_result(shape, std::move(out), {x}, [](Node& self) {
    if (auto* gx = parent_grad(self, 0))
      for (std::size_t i = 0; i < gx->size(); ++i) (*gx)[i] += self.grad[i];
  });
}

Tensor permute(const Tensor& x, const std::vector<std::size_t>& order) {
  const Shape& xs = x.shape();
  const std::size_t r = xs.size();
  if (order.size() != r) throw ShapeError("permute: order rank mismatch");
  std::vector<bool> seen(r, false);
  for (std::size_t o : order) {
    if (o >= r || seen[o]) throw ShapeError("permute: invalid axis order");
    seen[o] = true;
  }
  std::vector<std::size_t> in_strides(r, 1);
  for (std::size_t d = r - 1; d-- > 0;) in_strides[d] = in_strides[d + 1] * xs[d + 1];
  Shape out_shape(r);
  std::vector<std::size_t> strides(r);
  for (std::size_t i = 0; i < r; ++i) {
    out_shape[i] = xs[order[i]];
    strides[i] = in_strides[order[i]];
  }
  // map[out_flat] = in_flat
  const std::size_t total = x.numel();
  auto gather = std::make_shared<std::vector<std::size_t>>(total);
  const std::vector<std::size_t> zero(r, 0);
  for_each_broadcast(out_shape, strides, zero,
                     [&](std::size_t o, std::size_t i, std::size_t) { (*gather)[o] = i; });
  std::vector<double> out(total);
  auto xv = x.data();
  for (std::size_t o = 0; o < total; ++o) out[o] = xv[(*gather)[o]];
  return Tensor::make_result(out_shape, std::move(out), {x}, [gather](Node& self) {
    if (auto* gx = parent_grad(self, 0))
      for (std::size_t o = 0; o < gather->size(); ++o) (*gx)[(*gather)[o]] += self.grad[o];
  });
}

Tensor transpose(const Tensor& x, int axis0, int axis1) {
  std::vector<std::size_t> order(x.rank());
  std::iota(order.begin(), order.end(), 0);
  std::swap(order[normalize_axis(axis0, x.rank())], order[normalize_axis(axis1, x.rank())]);
  return permute(x, order);
}

Tensor concat(const std::vector<Tensor>& parts, int axis) {
  if (parts.empty()) throw ShapeError("concat: no inputs");
  const Shape& first = parts.front().shape();
  const std::size_t ax = normalize_axis(axis, first.size());
  Shape out_shape = first;
  out_shape[ax] = 0;
  for (const Tensor& p : parts) {
    const Shape& s = p.shape();
    if (s.size() != first.size()) throw ShapeError("concat: rank mismatch");
    for (std::size_t d = 0; d < s.size(); ++d)
      if (d != ax && s[d] != first[d])
        throw ShapeError("concat: " + shape_str(s) + " incompatible with " + shape_str(first));
    out_shape[ax] += s[ax];
  }
  std::size_t outer = 1, inner = 1;
  for (std::size_t d = 0; d < ax; ++d) outer *= first[d];
  for (std::size_t d = ax + 1; d < first.size(); ++d) inner *= first[d];
  std::vector<std::size_t> widths;
  for (const Tensor& p : parts) widths.push_back(p.shape()[ax] * inner);
  const std::size_t row = out_shape[ax] * inner;
  std::vector<double> out(outer * row);
  std::size_t col = 0;
  for (std::size_t k = 0; k < parts.size(); ++k) {
    auto pv = parts[k].data();
    for (std::size_t o = 0; o < outer; ++o)
      std::copy_n(pv.begin() + static_cast<std::ptrdiff_t>(o * widths[k]), widths[k],
                  out.begin() + static_cast<std::ptrdiff_t>(o * row + col));
    col += widths[k];
  }
  return Tensor::make_result(out_shape, std::move(out), parts, [outer, row, widths](Node& self) {
    std::size_t c = 0;
    for (std::size_t k = 0; k < widths.size(); ++k) {
      if (auto* gp = parent_grad(self, k)) {
        for (std::size_t o = 0; o < outer; ++o)
          for (std::size_t i = 0; i < widths[k]; ++i)
            (*gp)[o * widths[k] + i] += self.grad[o * row + c + i];
      }
      c += widths[k];
    }
  });
}

Tensor slice(const Tensor& x, int axis, std::size_t start, std::size_t length) {
  const Shape& xs = x.shape();
  const std::size_t ax = normalize_axis(axis, xs.size());
  if (length == 0 || start + length > xs[ax]) {
    throw ShapeError("slice: [" + std::to_string(start) + ", " + std::to_string(start + length) +
                     ") out of range for axis of size " + std::to_string(xs[ax]));
  }
  std::size_t outer = 1, inner = 1;
  for (std::size_t d = 0; d < ax; ++d) outer *= xs[d];
  for (std::size_t d = ax + 1; d < xs.size(); ++d) inner *= xs[d];
  Shape out_shape = xs;
  out_shape[ax] = length;
  const std::size_t in_row = xs[ax] * inner;
  const std::size_t out_row = length * inner;
  const std::size_t offset = start * inner;
  std::vector<double> out(outer * out_row);
  auto xv = x.data();
  for (std::size_t o = 0; o < outer; ++o)
    std::copy_n(xv.begin() + static_cast<std::ptrdiff_t>(o * in_row + offset), out_row,
                out.begin() + static_cast<std::ptrdiff_t>(o * out_row));
  return Tensor::make_result(out_shape, std::move(out), {x},
                             [outer, in_row, out_row, offset](Node& self) {
                               if (auto* gx = parent_grad(self, 0))
                                 for (std::size_t o = 0; o < outer; ++o)
                                   for (std::size_t i = 0; i < out_row; ++i)
                                     (*gx)[o * in_row + offset + i] += self.grad[o * out_row + i];
                             });
}

Tensor broadcast_to(const Tensor& x, const Shape& shape) {
  if (broadcast_shape(x.shape(), shape) != shape) {
    throw ShapeError("broadcast_to: cannot expand " + shape_str(x.shape()) + " to " +
                     shape_str(shape));
  }
  const auto sx = broadcast_strides(x.shape(), shape);
  const std::vector<std::size_t> zero(shape.size(), 0);
  std::vector<double> out(shape_numel(shape));
  auto xv = x.data();
  for_each_broadcast(shape, sx, zero,
                     [&](std::size_t o, std::size_t i, std::size_t) { out[o] = xv[i]; });
  return Tensor::make_result(shape, std::move(out), {x}, [shape, sx, zero](Node& self) {
    if (auto* gx = parent_grad(self, 0))
      for_each_broadcast(shape, sx, zero,
                         [&](std::size_t o, std::size_t i, std::size_t) { (*gx)[i] += self.grad[o]; });
  });
}

// ---------------------------------------------------------------------------
// Normalization

Tensor layer_norm(const Tensor& input, const Tensor& gain, const Tensor& offset, double eps) {
  if (!(eps > 0.0)) throw ConfigError("layer_norm: eps must be positive");
  const std::size_t d = input.shape().back();
  if (d == 0) throw ShapeError("layer_norm: zero-length normalization axis");
  if (gain.defined() && gain.shape() != Shape{d}) throw ShapeError("layer_norm: gain shape");
  if (offset.defined() && offset.shape() != Shape{d}) throw ShapeError("layer_norm: offset shape");
  const std::size_t rows = input.numel() / d;
  auto x = input.data();
  auto xhat = std::make_shared<std::vector<double>>(input.numel());
  auto rstd = std::make_shared<std::vector<double>>(rows);
  std::vector<double> out(input.numel());
  for (std::size_t r = 0; r < rows; ++r) {
    const double* xr = x.data() + r * d;
    double mu = 0.0;
    for (std::size_t i = 0; i < d; ++i) mu += xr[i];
    mu /= static_cast<double>(d);
    double var = 0.0;
    for (std::size_t i = 0; i < d; ++i) var += (xr[i] - mu) * (xr[i] - mu);
    var /= static_cast<double>(d);
    const double rs = 1.0 / std::sqrt(var + eps);
    (*rstd)[r] = rs;
    for (std::size_t i = 0; i < d; ++i) {
      const double h = (xr[i] - mu) * rs;
      (*xhat)[r * d + i] = h;
      double y = h;
      if (gain.defined()) y *= gain.data()[i];
      if (offset.defined()) y += offset.data()[i];
      out[r * d + i] = y;
    }
  }
  std::vector<Tensor> parents{input};
  const bool has_gain = gain.defined();
  const bool has_offset = offset.defined();
  if (has_gain) parents.push_back(gain);
  if (has_offset) parents.push_back(offset);
  return Tensor::make_result(
      input.shape(), std::move(out), std::move(parents),
      [rows, d, xhat, rstd, has_gain, has_offset](Node& self) {
        auto* gx = parent_grad(self, 0);
        std::vector<double>* gg = has_gain ? parent_grad(self, 1) : nullptr;
        std::vector<double>* gb = has_offset ? parent_grad(self, has_gain ? 2 : 1) : nullptr;
        const std::vector<double>* gain_v = has_gain ? &self.parents[1]->data : nullptr;
        const auto& g = self.grad;
        std::vector<double> dxhat(d);
        for (std::size_t r = 0; r < rows; ++r) {
          double m1 = 0.0, m2 = 0.0;
          for (std::size_t i = 0; i < d; ++i) {
            const double gi = g[r * d + i];
            const double h = (*xhat)[r * d + i];
            if (gg) (*gg)[i] += gi * h;
            if (gb) (*gb)[i] += gi;
            dxhat[i] = gain_v ? gi * (*gain_v)[i] : gi;
            m1 += dxhat[i];
            m2 += dxhat[i] * h;
          }
          if (!gx) continue;
          m1 /= static_cast<double>(d);
          m2 /= static_cast<double>(d);
          for (std::size_t i = 0; i < d; ++i)
            (*gx)[r * d + i] += (*rstd)[r] * (dxhat[i] - m1 - (*xhat)[r * d + i] * m2);
        }
      });
}

Tensor batch_norm2d(const Tensor& input, const Tensor& gamma, const Tensor& beta,
                    Tensor& running_mean, Tensor& running_var, bool training, double momentum,
                    double eps) {
  const Shape& xs = input.shape();
  if (xs.size() != 4) throw ShapeError("batch_norm2d: input must be [B, C, H, W]");
  const std::size_t c = xs[1];
  const Shape cs{c};
  if (gamma.shape() != cs || beta.shape() != cs || running_mean.shape() != cs ||
      running_var.shape() != cs) {
    throw ShapeError("batch_norm2d: parameter shapes must be [" + std::to_string(c) + "]");
  }
  const std::size_t batch = xs[0];
  const std::size_t plane = xs[2] * xs[3];
  const std::size_t count = batch * plane;
  auto x = input.data();
  std::vector<double> mu(c), rstd(c);
  if (training) {
    auto rm = running_mean.mutable_data();
    auto rv = running_var.mutable_data();
    for (std::size_t ch = 0; ch < c; ++ch) {
      double s = 0.0;
      for (std::size_t b = 0; b < batch; ++b)
        for (std::size_t i = 0; i < plane; ++i) s += x[(b * c + ch) * plane + i];
      const double m = s / static_cast<double>(count);
      double v = 0.0;
      for (std::size_t b = 0; b < batch; ++b)
        for (std::size_t i = 0; i < plane; ++i) {
          const double t = x[(b * c + ch) * plane + i] - m;
          v += t * t;
        }
      v /= static_cast<double>(count);
      mu[ch] = m;
      rstd[ch] = 1.0 / std::sqrt(v + eps);
      const double unbiased =
          count > 1 ? v * static_cast<double>(count) / static_cast<double>(count - 1) : v;
      rm[ch] = (1.0 - momentum) * rm[ch] + momentum * m;
      rv[ch] = (1.0 - momentum) * rv[ch] + momentum * unbiased;
    }
  } else {
    for (std::size_t ch = 0; ch < c; ++ch) {
      mu[ch] = running_mean.data()[ch];
      rstd[ch] = 1.0 / std::sqrt(running_var.data()[ch] + eps);
    }
  }
  auto xhat = std::make_shared<std::vector<double>>(input.numel());
  std::vector<double> out(input.numel());
  auto gv = gamma.data();
  auto bv = beta.data();
  for (std::size_t b = 0; b < batch; ++b)
    for (std::size_t ch = 0; ch < c; ++ch)
      for (std::size_t i = 0; i < plane; ++i) {
        const std::size_t k = (b * c + ch) * plane + i;
        const double h = (x[k] - mu[ch]) * rstd[ch];
        (*xhat)[k] = h;
        out[k] = gv[ch] * h + bv[ch];
      }
  return Tensor::make_result(
      xs, std::move(out), {input, gamma, beta},
      [batch, c, plane, count, training, xhat, rstd = std::move(rstd)](Node& self) {
        auto* gx = parent_grad(self, 0);
        auto* gg = parent_grad(self, 1);
        auto* gb = parent_grad(self, 2);
        const auto& gam = self.parents[1]->data;
        const auto& g = self.grad;
        for (std::size_t ch = 0; ch < c; ++ch) {
          double sg = 0.0, sgh = 0.0;
          for (std::size_t b = 0; b < batch; ++b)
            for (std::size_t i = 0; i < plane; ++i) {
              const std::size_t k = (b * c + ch) * plane + i;
              sg += g[k];
              sgh += g[k] * (*xhat)[k];
            }
          if (gg) (*gg)[ch] += sgh;
          if (gb) (*gb)[ch] += sg;
          if (!gx) continue;
          const double scale_c = gam[ch] * rstd[ch];
          const double m1 = sg / static_cast<double>(count);
          const double m2 = sgh / static_cast<double>(count);
          for (std::size_t b = 0; b < batch; ++b)
            for (std::size_t i = 0; i < plane; ++i) {
              const std::size_t k = (b * c + ch) * plane + i;
              (*gx)[k] += training ? scale_c * (g[k] - m1 - (*xhat)[k] * m2) : scale_c * g[k];
            }
        }
      });
}

namespace {

struct AxisLayout {
  std::size_t outer, n, inner;
};

AxisLayout axis_layout(const Shape& s, int axis) {
  const std::size_t ax = normalize_axis(axis, s.size());
  AxisLayout l{1, s[ax], 1};
  for (std::size_t d = 0; d < ax; ++d) l.outer *= s[d];
  for (std::size_t d = ax + 1; d < s.size(); ++d) l.inner *= s[d];
  if (l.n == 0) throw ShapeError("softmax: zero-length axis");
  return l;
}

}  // namespace

Tensor softmax(const Tensor& input, int axis) {
  const AxisLayout l = axis_layout(input.shape(), axis);
  auto x = input.data();
  std::vector<double> out(input.numel());
  for (std::size_t o = 0; o < l.outer; ++o)
    for (std::size_t in = 0; in < l.inner; ++in) {
      const std::size_t base = o * l.n * l.inner + in;
      double mx = -std::numeric_limits<double>::infinity();
      for (std::size_t j = 0; j < l.n; ++j) mx = std::max(mx, x[base + j * l.inner]);
      double s = 0.0;
      for (std::size_t j = 0; j < l.n; ++j) {
        const double e = std::exp(x[base + j * l.inner] - mx);
        out[base + j * l.inner] = e;
        s += e;
      }
      for (std::size_t j = 0; j < l.n; ++j) out[base + j * l.inner] /= s;
    }
  return Tensor::make_result(input.shape(), std::move(out), {input}, [l](Node& self) {
    auto* gx = parent_grad(self, 0);
    if (!gx) return;
    const auto& y = self.data;
    const auto& g = self.grad;
    for (std::size_t o = 0; o < l.outer; ++o)
      for (std::size_t in = 0; in < l.inner; ++in) {
        const std::size_t base = o * l.n * l.inner + in;
        double dot = 0.0;
        for (std::size_t j = 0; j < l.n; ++j) dot += g[base + j * l.inner] * y[base + j * l.inner];
        for (std::size_t j = 0; j < l.n; ++j) {
          const std::size_t k = base + j * l.inner;
          (*gx)[k] += y[k] * (g[k] - dot);
        }
      }
  });
}

Tensor log_softmax(const Tensor& input, int axis) {
  const AxisLayout l = axis_layout(input.shape(), axis);
  auto x = input.data();
  std::vector<double> out(input.numel());
  for (std::size_t o = 0; o < l.outer; ++o)
    for (std::size_t in = 0; in < l.inner; ++in) {
      const std::size_t base = o * l.n * l.inner + in;
      double mx = -std::numeric_limits<double>::infinity();
      for (std::size_t j = 0; j < l.n; ++j) mx = std::max(mx, x[base + j * l.inner]);
      double s = 0.0;
      for (std::size_t j = 0; j < l.n; ++j) s += std::exp(x[base + j * l.inner] - mx);
      const double lse = mx + std::log(s);
      for (std::size_t j = 0; j < l.n; ++j) out[base + j * l.inner] = x[base + j * l.inner] - lse;
    }
  return Tensor::make_result(input.shape(), std::move(out), {input}, [l](Node& self) {
    auto* gx = parent_grad(self, 0);
    if (!gx) return;
    const auto& y = self.data;
    const auto& g = self.grad;
    for (std::size_t o = 0; o < l.outer; ++o)
      for (std::size_t in = 0; in < l.inner; ++in) {
        const std::size_t base = o * l.n * l.inner + in;
        double gs = 0.0;
        for (std::size_t j = 0; j < l.n; ++j) gs += g[base + j * l.inner];
        for (std::size_t j = 0; j < l.n; ++j) {
          const std::size_t k = base + j * l.inner;
          (*gx)[k] += g[k] - std::exp(y[k]) * gs;
        }
      }
  });
}

// ---------------------------------------------------------------------------
// Activations

Tensor gelu(const Tensor& input) {
  auto x = input.data();
  std::vector<double> out(x.size());
  for (std::size_t i = 0; i < x.size(); ++i)
    out[i] = 0.5 * x[i] * (1.0 + std::erf(x[i] * std::numbers::sqrt2 / 2.0));
  return Tensor::make_result(input.shape(), std::move(out), {input}, [](Node& self) {
    auto* gx = parent_grad(self, 0);
    if (!gx) return;
    const auto& xv = self.parents[0]->data;
    const double inv_sqrt_2pi = 0.5 * std::numbers::inv_sqrtpi * std::numbers::sqrt2;
    for (std::size_t i = 0; i < xv.size(); ++i) {
      const double v = xv[i];
      const double cdf = 0.5 * (1.0 + std::erf(v * std::numbers::sqrt2 / 2.0));
      const double pdf = inv_sqrt_2pi * std::exp(-0.5 * v * v);
      (*gx)[i] += self.grad[i] * (cdf + v * pdf);
    }
  });
}

Tensor dropout(const Tensor& input, double p, bool training, std::uint64_t seed) {
  if (!(p >= 0.0 && p < 1.0)) throw ConfigError("dropout: p must lie in [0, 1)");
  if (!training || p == 0.0) return input;
  std::mt19937_64 rng(seed);
  const double keep_scale = 1.0 / (1.0 - p);
  auto mask = std::make_shared<std::vector<double>>(input.numel());
  for (double& m : *mask) {
    const double u = static_cast<double>(rng() >> 11) * 0x1.0p-53;
    m = u >= p ? keep_scale : 0.0;
  }
  auto x = input.data();
  std::vector<double> out(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) out[i] = x[i] * (*mask)[i];
  return Tensor::make_result(input.shape(), std::move(out), {input}, [mask](Node& self) {
    if (auto* gx = parent_grad(self, 0))
      for (std::size_t i = 0; i < gx->size(); ++i) (*gx)[i] += self.grad[i] * (*mask)[i];
  });
}

Tensor cross_entropy(const Tensor& logits, std::span<const std::size_t> targets) {
  const Shape& s = logits.shape();
  if (s.size() != 2) throw ShapeError("cross_entropy: logits must be [B, k]");
  const std::size_t batch = s[0];
  const std::size_t k = s[1];
  if (targets.size() != batch) throw ShapeError("cross_entropy: one target per row required");
  auto x = logits.data();
  auto probs = std::make_shared<std::vector<double>>(logits.numel());
  auto tgt = std::make_shared<std::vector<std::size_t>>(targets.begin(), targets.end());
  double loss = 0.0;
  for (std::size_t b = 0; b < batch; ++b) {
    if ((*tgt)[b] >= k) throw ShapeError("cross_entropy: target class out of range");
    const double* row = x.data() + b * k;
    const double mx = *std::max_element(row, row + k);
    double s2 = 0.0;
    for (std::size_t j = 0; j < k; ++j) {
      (*probs)[b * k + j] = std::exp(row[j] - mx);
      s2 += (*probs)[b * k + j];
    }
    for (std::size_t j = 0; j < k; ++j) (*probs)[b * k + j] /= s2;
    loss -= row[(*tgt)[b]] - mx - std::log(s2);
  }
  loss /= static_cast<double>(batch);
  return Tensor::make_result({1}, {loss}, {logits}, [batch, k, probs, tgt](Node& self) {
    auto* gx = parent_grad(self, 0);
    if (!gx) return;
    const double g = self.grad[0] / static_cast<double>(batch);
    for (std::size_t b = 0; b < batch; ++b)
      for (std::size_t j = 0; j < k; ++j) {
        const double onehot = j == (*tgt)[b] ? 1.0 : 0.0;
        (*gx)[b * k + j] += g * ((*probs)[b * k + j] - onehot);
      }
  });
}

}  // namespace dcvit
