#include "core/nn_ops.hpp"

#include <algorithm>
#include <cmath>

namespace actfno {

namespace {

struct ConvDims {
  int64_t B, Cin, H, W, Cout;
  int k, dilation, half;
};

ConvDims conv_check(const Tensor& input, const Tensor& weight, const Tensor* bias, int dilation) {
  if (input.ndim() != 4) throw ValidationError("conv2d: input must be (B,C,H,W)");
  if (weight.ndim() != 4) throw ValidationError("conv2d: weight must be (Cout,Cin,k,k)");
  ConvDims d;
  d.B = input.size(0);
  d.Cin = input.size(1);
  d.H = input.size(2);
  d.W = input.size(3);
  d.Cout = weight.size(0);
  if (weight.size(1) != d.Cin)
    throw ValidationError(format_msg("conv2d: channel mismatch, input has ", d.Cin,
                                     " channels but weight expects ", weight.size(1)));
  if (weight.size(2) != weight.size(3)) throw ValidationError("conv2d: kernel must be square");
  d.k = int(weight.size(2));
  if (d.k != 1 && d.k != 3) throw ValidationError("conv2d: kernel extent must be 1 or 3");
  if (dilation < 1) throw ValidationError("conv2d: dilation must be positive");
  d.dilation = dilation;
  d.half = (d.k - 1) / 2;
  int64_t eff = int64_t(d.k - 1) * dilation + 1;
  if (eff > d.H || eff > d.W)
    throw ValidationError(format_msg("conv2d: effective kernel ", eff, " exceeds input ",
                                     d.H, "x", d.W));
  if (bias && (bias->ndim() != 1 || bias->size(0) != d.Cout))
    throw ValidationError("conv2d: bias must have one entry per output channel");
  return d;
}

// out[i,j] += w * in[i+du, j+dv] over the in-range region.
inline void shifted_add(double* out, const double* in, int64_t H, int64_t W, int64_t du,
                        int64_t dv, double w) {
  int64_t i0 = std::max<int64_t>(0, -du), i1 = std::min(H, H - du);
  int64_t j0 = std::max<int64_t>(0, -dv), j1 = std::min(W, W - dv);
  for (int64_t i = i0; i < i1; ++i) {
    double* o = out + i * W;
    const double* s = in + (i + du) * W + dv;
    for (int64_t j = j0; j < j1; ++j) o[j] += w * s[j];
  }
}

// dot of out-plane (shifted) against in-plane over the in-range region.
inline double shifted_dot(const double* a, const double* b, int64_t H, int64_t W, int64_t du,
                          int64_t dv) {
  int64_t i0 = std::max<int64_t>(0, -du), i1 = std::min(H, H - du);
  int64_t j0 = std::max<int64_t>(0, -dv), j1 = std::min(W, W - dv);
  double acc = 0.0;
  for (int64_t i = i0; i < i1; ++i) {
    const double* pa = a + i * W;
    const double* pb = b + (i + du) * W + dv;
    for (int64_t j = j0; j < j1; ++j) acc += pa[j] * pb[j];
  }
  return acc;
}

}  // namespace

Tensor conv2d(const Tensor& input, const Tensor& weight, const Tensor* bias, int dilation) {
  ConvDims d = conv_check(input, weight, bias, dilation);
  const int64_t plane = d.H * d.W;
  Tensor out = Tensor::zeros({d.B, d.Cout, d.H, d.W});
  const double* pin = input.data();
  const double* pw = weight.data();
  const double* pb = bias ? bias->data() : nullptr;
  double* po = out.data_mut();

  for (int64_t b = 0; b < d.B; ++b) {
    for (int64_t co = 0; co < d.Cout; ++co) {
      double* oplane = po + (b * d.Cout + co) * plane;
      if (pb) {
        double bv = pb[co];
        for (int64_t i = 0; i < plane; ++i) oplane[i] = bv;
      }
      for (int64_t ci = 0; ci < d.Cin; ++ci) {
        const double* iplane = pin + (b * d.Cin + ci) * plane;
        const double* wk = pw + (co * d.Cin + ci) * d.k * d.k;
        if (d.k == 1) {
          double w = wk[0];
          for (int64_t i = 0; i < plane; ++i) oplane[i] += w * iplane[i];
        } else {
          for (int u = 0; u < d.k; ++u)
            for (int v = 0; v < d.k; ++v)
              shifted_add(oplane, iplane, d.H, d.W, int64_t(d.dilation) * (u - d.half),
                          int64_t(d.dilation) * (v - d.half), wk[u * d.k + v]);
        }
      }
    }
  }
  ensure_finite(out, "conv2d");

  Graph* g = Graph::active();
  bool want_b = bias && g && g->wants(*bias);
  if (g && (g->wants(input) || g->wants(weight) || want_b)) {
    auto sin = input.storage();
    auto sw = weight.storage();
    std::vector<Graph::Ref> parents{g->ref(input), g->ref(weight)};
    if (bias) parents.push_back(g->ref(*bias));
    int32_t node = g->add_node(
        {out.shape()}, std::move(parents), [d, plane, sin, sw](Graph::BackCtx& ctx) {
          const double* adj = ctx.adjoint(0);
          if (!adj) return;
          const double* pw = sw->data();
          const double* pin = sin->data();
          if (double* din = ctx.parent_grad(0)) {
            for (int64_t b = 0; b < d.B; ++b)
              for (int64_t co = 0; co < d.Cout; ++co) {
                const double* aplane = adj + (b * d.Cout + co) * plane;
                for (int64_t ci = 0; ci < d.Cin; ++ci) {
                  double* dplane = din + (b * d.Cin + ci) * plane;
                  const double* wk = pw + (co * d.Cin + ci) * d.k * d.k;
                  if (d.k == 1) {
                    double w = wk[0];
                    for (int64_t i = 0; i < plane; ++i) dplane[i] += w * aplane[i];
                  } else {
                    for (int u = 0; u < d.k; ++u)
                      for (int v = 0; v < d.k; ++v)
                        // transpose: scatter adjoint back through the taps
                        shifted_add(dplane, aplane, d.H, d.W,
                                    -int64_t(d.dilation) * (u - d.half),
                                    -int64_t(d.dilation) * (v - d.half), wk[u * d.k + v]);
                  }
                }
              }
          }
          if (double* dw = ctx.parent_grad(1)) {
            for (int64_t b = 0; b < d.B; ++b)
              for (int64_t co = 0; co < d.Cout; ++co) {
                const double* aplane = adj + (b * d.Cout + co) * plane;
                for (int64_t ci = 0; ci < d.Cin; ++ci) {
                  const double* iplane = pin + (b * d.Cin + ci) * plane;
                  double* wk = dw + (co * d.Cin + ci) * d.k * d.k;
                  if (d.k == 1) {
                    wk[0] += shifted_dot(aplane, iplane, d.H, d.W, 0, 0);
                  } else {
                    for (int u = 0; u < d.k; ++u)
                      for (int v = 0; v < d.k; ++v)
                        wk[u * d.k + v] +=
                            shifted_dot(aplane, iplane, d.H, d.W,
                                        int64_t(d.dilation) * (u - d.half),
                                        int64_t(d.dilation) * (v - d.half));
                  }
                }
              }
          }
          if (double* db = ctx.parent_grad(2)) {
            for (int64_t b = 0; b < d.B; ++b)
              for (int64_t co = 0; co < d.Cout; ++co) {
                const double* aplane = adj + (b * d.Cout + co) * plane;
                double acc = 0.0;
                for (int64_t i = 0; i < plane; ++i) acc += aplane[i];
                db[co] += acc;
              }
          }
        });
    g->bind(out, node, 0);
  }
  return out;
}

Tensor group_norm(const Tensor& x, int groups, const Tensor& weight, const Tensor& bias,
                  double eps) {
  if (x.ndim() != 4) throw ValidationError("group_norm expects (B,C,H,W)");
  int64_t B = x.size(0), C = x.size(1), plane = x.size(2) * x.size(3);
  if (groups < 1 || C % groups != 0)
    throw ValidationError(format_msg("group_norm: ", C, " channels not divisible by ", groups,
                                     " groups"));
  if (weight.numel() != C || bias.numel() != C)
    throw ValidationError("group_norm: weight/bias must have one entry per channel");
  int64_t Cg = C / groups;
  int64_t gsize = Cg * plane;

  Tensor out = Tensor::zeros(x.shape());
  auto means = std::make_shared<std::vector<double>>(size_t(B * groups));
  auto istds = std::make_shared<std::vector<double>>(size_t(B * groups));
  const double* px = x.data();
  const double* pwt = weight.data();
  const double* pbs = bias.data();
  double* po = out.data_mut();

  for (int64_t b = 0; b < B; ++b) {
    for (int64_t gi = 0; gi < groups; ++gi) {
      const double* base = px + (b * C + gi * Cg) * plane;
      double mean = 0.0;
      for (int64_t i = 0; i < gsize; ++i) mean += base[i];
      mean /= double(gsize);
      double var = 0.0;
      for (int64_t i = 0; i < gsize; ++i) {
        double dv = base[i] - mean;
        var += dv * dv;
      }
      var /= double(gsize);
      double istd = 1.0 / std::sqrt(var + eps);
      (*means)[size_t(b * groups + gi)] = mean;
      (*istds)[size_t(b * groups + gi)] = istd;
      for (int64_t cc = 0; cc < Cg; ++cc) {
        int64_t c = gi * Cg + cc;
        const double* src = px + (b * C + c) * plane;
        double* dst = po + (b * C + c) * plane;
        double wv = pwt[c], bv = pbs[c];
        for (int64_t i = 0; i < plane; ++i) dst[i] = (src[i] - mean) * istd * wv + bv;
      }
    }
  }
  ensure_finite(out, "group_norm");

  Graph* g = Graph::active();
  if (g && (g->wants(x) || g->wants(weight) || g->wants(bias))) {
    auto sx = x.storage();
    auto swt = weight.storage();
    int32_t node = g->add_node(
        {x.shape()}, {g->ref(x), g->ref(weight), g->ref(bias)},
        [B, C, Cg, plane, groups, gsize, sx, swt, means, istds](Graph::BackCtx& ctx) {
          const double* adj = ctx.adjoint(0);
          if (!adj) return;
          const double* px = sx->data();
          const double* pwt = swt->data();
          double* dx = ctx.parent_grad(0);
          double* dw = ctx.parent_grad(1);
          double* db = ctx.parent_grad(2);
          for (int64_t b = 0; b < B; ++b) {
            for (int64_t gi = 0; gi < groups; ++gi) {
              double mean = (*means)[size_t(b * groups + gi)];
              double istd = (*istds)[size_t(b * groups + gi)];
              // first pass: group means of dxhat and dxhat*xhat
              double m1 = 0.0, m2 = 0.0;
              for (int64_t cc = 0; cc < Cg; ++cc) {
                int64_t c = gi * Cg + cc;
                const double* a = adj + (b * C + c) * plane;
                const double* src = px + (b * C + c) * plane;
                double wv = pwt[c];
                for (int64_t i = 0; i < plane; ++i) {
                  double xh = (src[i] - mean) * istd;
                  double dxh = a[i] * wv;
                  m1 += dxh;
                  m2 += dxh * xh;
                }
              }
              m1 /= double(gsize);
              m2 /= double(gsize);
              for (int64_t cc = 0; cc < Cg; ++cc) {
                int64_t c = gi * Cg + cc;
                const double* a = adj + (b * C + c) * plane;
                const double* src = px + (b * C + c) * plane;
                double wv = pwt[c];
                double wsum = 0.0, bsum = 0.0;
                for (int64_t i = 0; i < plane; ++i) {
                  double xh = (src[i] - mean) * istd;
                  if (dx) dx[(b * C + c) * plane + i] += istd * (a[i] * wv - m1 - xh * m2);
                  wsum += a[i] * xh;
                  bsum += a[i];
                }
                if (dw) dw[c] += wsum;
                if (db) db[c] += bsum;
              }
            }
          }
        });
    g->bind(out, node, 0);
  }
  return out;
}

std::vector<double> identity_axis(int64_t n) {
  if (n < 2) throw ValidationError("identity_axis: extent must be at least 2");
  std::vector<double> a(size_t(n));
  for (int64_t i = 0; i < n; ++i) a[size_t(i)] = (2.0 * double(i)) / double(n - 1) - 1.0;
  return a;
}

namespace {

struct SamplePoint {
  int64_t x0, x1, y0, y1;
  double fx, fy;
  bool clamped_x, clamped_y;
};

inline SamplePoint locate(double gx, double gy, int64_t H, int64_t W) {
  SamplePoint s;
  double px = (gx + 1.0) * 0.5 * double(W - 1);
  double py = (gy + 1.0) * 0.5 * double(H - 1);
  s.clamped_x = px < 0.0 || px > double(W - 1);
  s.clamped_y = py < 0.0 || py > double(H - 1);
  px = std::clamp(px, 0.0, double(W - 1));
  py = std::clamp(py, 0.0, double(H - 1));
  s.x0 = int64_t(std::floor(px));
  if (s.x0 >= W - 1) s.x0 = W - 2;
  s.x1 = s.x0 + 1;
  s.fx = px - double(s.x0);
  s.y0 = int64_t(std::floor(py));
  if (s.y0 >= H - 1) s.y0 = H - 2;
  s.y1 = s.y0 + 1;
  s.fy = py - double(s.y0);
  return s;
}

}  // namespace

Tensor bilinear_resample(const Tensor& values, const Tensor& grid) {
  if (values.ndim() != 4) throw ValidationError("bilinear_resample: values must be (B,C,H,W)");
  if (grid.ndim() != 4 || grid.size(1) != 2)
    throw ValidationError("bilinear_resample: grid must be (B,2,H,W)");
  if (grid.size(0) != values.size(0))
    throw ValidationError(format_msg("bilinear_resample: batch mismatch, values ",
                                     values.size(0), " vs grid ", grid.size(0)));
  int64_t B = values.size(0), C = values.size(1), H = values.size(2), W = values.size(3);
  int64_t Hg = grid.size(2), Wg = grid.size(3);
  if (H < 2 || W < 2) throw ValidationError("bilinear_resample: spatial extents must be >= 2");

  std::vector<double> ax = identity_axis(W), ay = identity_axis(H);
  bool same_extent = (Hg == H && Wg == W);

  Tensor out = Tensor::zeros({B, C, Hg, Wg});
  const double* pv = values.data();
  const double* pg = grid.data();
  double* po = out.data_mut();
  int64_t vplane = H * W, gplane = Hg * Wg;

  for (int64_t b = 0; b < B; ++b) {
    const double* gx = pg + (b * 2 + 0) * gplane;
    const double* gy = pg + (b * 2 + 1) * gplane;
    for (int64_t i = 0; i < Hg; ++i) {
      for (int64_t j = 0; j < Wg; ++j) {
        int64_t q = i * Wg + j;
        if (same_extent && gx[q] == ax[size_t(j)] && gy[q] == ay[size_t(i)]) {
          // exact identity query: copy the pixel bit-for-bit
          for (int64_t c = 0; c < C; ++c)
            po[(b * C + c) * gplane + q] = pv[(b * C + c) * vplane + q];
          continue;
        }
        SamplePoint s = locate(gx[q], gy[q], H, W);
        double w00 = (1.0 - s.fx) * (1.0 - s.fy);
        double w01 = s.fx * (1.0 - s.fy);
        double w10 = (1.0 - s.fx) * s.fy;
        double w11 = s.fx * s.fy;
        for (int64_t c = 0; c < C; ++c) {
          const double* vp = pv + (b * C + c) * vplane;
          po[(b * C + c) * gplane + q] = w00 * vp[s.y0 * W + s.x0] + w01 * vp[s.y0 * W + s.x1] +
                                         w10 * vp[s.y1 * W + s.x0] + w11 * vp[s.y1 * W + s.x1];
        }
      }
    }
  }
  ensure_finite(out, "bilinear_resample");

  Graph* g = Graph::active();
  if (g && (g->wants(values) || g->wants(grid))) {
    auto sv = values.storage();
    auto sg = grid.storage();
    int32_t node = g->add_node(
        {out.shape()}, {g->ref(values), g->ref(grid)},
        [B, C, H, W, Hg, Wg, vplane, gplane, sv, sg](Graph::BackCtx& ctx) {
          const double* adj = ctx.adjoint(0);
          if (!adj) return;
          const double* pv = sv->data();
          const double* pg = sg->data();
          double* dv = ctx.parent_grad(0);
          double* dg = ctx.parent_grad(1);
          double sx = 0.5 * double(W - 1), sy = 0.5 * double(H - 1);
          for (int64_t b = 0; b < B; ++b) {
            const double* gx = pg + (b * 2 + 0) * gplane;
            const double* gy = pg + (b * 2 + 1) * gplane;
            for (int64_t i = 0; i < Hg; ++i) {
              for (int64_t j = 0; j < Wg; ++j) {
                int64_t q = i * Wg + j;
                SamplePoint s = locate(gx[q], gy[q], H, W);
                double w00 = (1.0 - s.fx) * (1.0 - s.fy);
                double w01 = s.fx * (1.0 - s.fy);
                double w10 = (1.0 - s.fx) * s.fy;
                double w11 = s.fx * s.fy;
                double dpx = 0.0, dpy = 0.0;
                for (int64_t c = 0; c < C; ++c) {
                  double a = adj[(b * C + c) * gplane + q];
                  if (a == 0.0) continue;
                  const double* vp = pv + (b * C + c) * vplane;
                  if (dv) {
                    double* dvp = dv + (b * C + c) * vplane;
                    dvp[s.y0 * W + s.x0] += a * w00;
                    dvp[s.y0 * W + s.x1] += a * w01;
                    dvp[s.y1 * W + s.x0] += a * w10;
                    dvp[s.y1 * W + s.x1] += a * w11;
                  }
                  if (dg) {
                    double v00 = vp[s.y0 * W + s.x0], v01 = vp[s.y0 * W + s.x1];
                    double v10 = vp[s.y1 * W + s.x0], v11 = vp[s.y1 * W + s.x1];
                    dpx += a * ((1.0 - s.fy) * (v01 - v00) + s.fy * (v11 - v10));
                    dpy += a * ((1.0 - s.fx) * (v10 - v00) + s.fx * (v11 - v01));
                  }
                }
                if (dg) {
                  if (!s.clamped_x) dg[(b * 2 + 0) * gplane + q] += dpx * sx;
                  if (!s.clamped_y) dg[(b * 2 + 1) * gplane + q] += dpy * sy;
                }
              }
            }
          }
        });
    g->bind(out, node, 0);
  }
  return out;
}

std::vector<double> finite_difference_gradient(const std::function<double(const Tensor&)>& f,
                                               const Tensor& x, double step) {
  if (step <= 0.0) throw ValidationError("finite_difference_gradient: step must be positive");
  Tensor probe = x.clone();
  double* p = probe.data_mut();
  int64_t n = probe.numel();
  std::vector<double> grad(size_t(n));
  for (int64_t i = 0; i < n; ++i) {
    double keep = p[i];
    p[i] = keep + step;
    double fp = f(probe);
    p[i] = keep - step;
    double fm = f(probe);
    p[i] = keep;
    grad[size_t(i)] = (fp - fm) / (2.0 * step);
  }
  return grad;
}

}  // namespace actfno
