#include "core/fft.hpp"

#include <fftw3.h>

#include <map>
#include <mutex>

namespace actfno {

namespace {

struct PlanSet {
  fftw_plan r2c = nullptr;
  fftw_plan c2c_bwd = nullptr;
};

// The FFTW planner is not thread-safe; executing cached plans on fresh
// arrays is. FFTW_ESTIMATE keeps plan choice deterministic.
PlanSet& plans_for(int64_t H, int64_t W) {
  static std::mutex mu;
  static std::map<std::pair<int64_t, int64_t>, PlanSet> cache;
  std::lock_guard<std::mutex> lock(mu);
  auto key = std::make_pair(H, W);
  auto it = cache.find(key);
  if (it != cache.end()) return it->second;
  int64_t Wh = W / 2 + 1;
  std::vector<double> rbuf(size_t(H * W));
  std::vector<std::complex<double>> cin(size_t(H * W)), cout(size_t(H * W)), hbuf(size_t(H * Wh));
  PlanSet p;
  p.r2c = fftw_plan_dft_r2c_2d(int(H), int(W), rbuf.data(),
                               reinterpret_cast<fftw_complex*>(hbuf.data()),
                               FFTW_ESTIMATE | FFTW_UNALIGNED);
  p.c2c_bwd = fftw_plan_dft_2d(int(H), int(W), reinterpret_cast<fftw_complex*>(cin.data()),
                               reinterpret_cast<fftw_complex*>(cout.data()), FFTW_BACKWARD,
                               FFTW_ESTIMATE | FFTW_UNALIGNED);
  auto res = cache.emplace(key, p);
  return res.first->second;
}

void exec_r2c(int64_t H, int64_t W, const double* in, std::complex<double>* out) {
  PlanSet& p = plans_for(H, W);
  // out-of-place r2c preserves its input; FFTW's API is just not const-aware
  fftw_execute_dft_r2c(p.r2c, const_cast<double*>(in), reinterpret_cast<fftw_complex*>(out));
}

void exec_c2c_bwd(int64_t H, int64_t W, std::complex<double>* in, std::complex<double>* out) {
  PlanSet& p = plans_for(H, W);
  fftw_execute_dft(p.c2c_bwd, reinterpret_cast<fftw_complex*>(in),
                   reinterpret_cast<fftw_complex*>(out));
}

// Scatter a half-spectrum into a full H x W complex grid. With `mirror`,
// columns 0 < k2 < W - Wh + 1 .. i.e. the redundant right half .. are filled
// by conjugate symmetry; otherwise they stay zero.
void half_to_full(const std::complex<double>* half, int64_t H, int64_t W, bool mirror,
                  std::complex<double>* full) {
  int64_t Wh = W / 2 + 1;
  std::fill(full, full + H * W, std::complex<double>(0.0, 0.0));
  for (int64_t r = 0; r < H; ++r)
    for (int64_t c = 0; c < Wh; ++c) full[r * W + c] = half[r * Wh + c];
  if (mirror) {
    for (int64_t r = 0; r < H; ++r) {
      int64_t rm = (H - r) % H;
      for (int64_t c = Wh; c < W; ++c) full[r * W + c] = std::conj(half[rm * Wh + (W - c)]);
    }
  }
}

void check_spatial(const Tensor& x) {
  if (x.ndim() != 4) throw ValidationError("rfft2/irfft2 expect (B,C,H,W)");
  if (x.size(2) < 2 || x.size(3) < 2)
    throw ValidationError("rfft2/irfft2: spatial extents must be at least 2");
}

}  // namespace

void rfft2_plane(const double* in, int64_t H, int64_t W, std::complex<double>* out) {
  exec_r2c(H, W, in, out);
}

void irfft2_plane(const std::complex<double>* in, int64_t H, int64_t W, double* out) {
  std::vector<std::complex<double>> full(size_t(H * W)), inv(size_t(H * W));
  half_to_full(in, H, W, true, full.data());
  exec_c2c_bwd(H, W, full.data(), inv.data());
  double scale = 1.0 / double(H * W);
  for (int64_t i = 0; i < H * W; ++i) out[i] = inv[size_t(i)].real() * scale;
}

ComplexSpectrum rfft2(const Tensor& x) {
  check_spatial(x);
  int64_t B = x.size(0), C = x.size(1), H = x.size(2), W = x.size(3);
  int64_t Wh = W / 2 + 1;
  Tensor re = Tensor::zeros({B, C, H, Wh});
  Tensor im = Tensor::zeros({B, C, H, Wh});
  const double* px = x.data();
  double* pre = re.data_mut();
  double* pim = im.data_mut();
  std::vector<std::complex<double>> half(size_t(H * Wh));
  for (int64_t s = 0; s < B * C; ++s) {
    exec_r2c(H, W, px + s * H * W, half.data());
    double* r = pre + s * H * Wh;
    double* i = pim + s * H * Wh;
    for (int64_t k = 0; k < H * Wh; ++k) {
      r[k] = half[size_t(k)].real();
      i[k] = half[size_t(k)].imag();
    }
  }
  ensure_finite(re, "rfft2");
  ensure_finite(im, "rfft2");

  Graph* g = Graph::active();
  if (g && g->wants(x)) {
    int32_t node = g->add_node(
        {re.shape(), im.shape()}, {g->ref(x)}, [B, C, H, W, Wh](Graph::BackCtx& ctx) {
          const double* are = ctx.adjoint(0);
          const double* aim = ctx.adjoint(1);
          if (!are && !aim) return;
          double* dx = ctx.parent_grad(0);
          if (!dx) return;
          // adjoint of the stored-half forward map: place the adjoint
          // spectrum verbatim (no mirror), inverse-transform unnormalized,
          // keep the real part
          std::vector<std::complex<double>> half(size_t(H * Wh)), full(size_t(H * W)),
              inv(size_t(H * W));
          for (int64_t s = 0; s < B * C; ++s) {
            for (int64_t k = 0; k < H * Wh; ++k) {
              double rr = are ? are[s * H * Wh + k] : 0.0;
              double ii = aim ? aim[s * H * Wh + k] : 0.0;
              half[size_t(k)] = {rr, ii};
            }
            half_to_full(half.data(), H, W, false, full.data());
            exec_c2c_bwd(H, W, full.data(), inv.data());
            double* d = dx + s * H * W;
            for (int64_t i = 0; i < H * W; ++i) d[i] += inv[size_t(i)].real();
          }
        });
    Tensor re_b = re, im_b = im;
    g->bind(re_b, node, 0);
    g->bind(im_b, node, 1);
  }
  return {re, im, W};
}

Tensor irfft2(const ComplexSpectrum& s) {
  check_spatial(s.re);
  if (s.re.shape() != s.im.shape())
    throw ValidationError("irfft2: real/imaginary parts must have matching shapes");
  int64_t B = s.re.size(0), C = s.re.size(1), H = s.re.size(2), Wh = s.re.size(3);
  int64_t W = s.width;
  if (W / 2 + 1 != Wh)
    throw ValidationError(format_msg("irfft2: width ", W, " inconsistent with half-spectrum ",
                                     Wh));
  Tensor out = Tensor::zeros({B, C, H, W});
  const double* pre = s.re.data();
  const double* pim = s.im.data();
  double* po = out.data_mut();
  std::vector<std::complex<double>> half(size_t(H * Wh));
  for (int64_t sl = 0; sl < B * C; ++sl) {
    for (int64_t k = 0; k < H * Wh; ++k)
      half[size_t(k)] = {pre[sl * H * Wh + k], pim[sl * H * Wh + k]};
    irfft2_plane(half.data(), H, W, po + sl * H * W);
  }
  ensure_finite(out, "irfft2");

  Graph* g = Graph::active();
  if (g && (g->wants(s.re) || g->wants(s.im))) {
    int32_t node = g->add_node(
        {out.shape()}, {g->ref(s.re), g->ref(s.im)}, [B, C, H, W, Wh](Graph::BackCtx& ctx) {
          const double* adj = ctx.adjoint(0);
          if (!adj) return;
          double* dre = ctx.parent_grad(0);
          double* dim = ctx.parent_grad(1);
          if (!dre && !dim) return;
          // adjoint of the Hermitian-completed inverse: forward transform of
          // the real adjoint, 1/(HW)-scaled, mirrored columns counted twice
          std::vector<std::complex<double>> half(size_t(H * Wh));
          double scale = 1.0 / double(H * W);
          for (int64_t sl = 0; sl < B * C; ++sl) {
            exec_r2c(H, W, adj + sl * H * W, half.data());
            for (int64_t r = 0; r < H; ++r) {
              for (int64_t c = 0; c < Wh; ++c) {
                bool self = (c == 0) || (W % 2 == 0 && c == W / 2);
                double m = (self ? 1.0 : 2.0) * scale;
                std::complex<double> v = half[size_t(r * Wh + c)];
                if (dre) dre[sl * H * Wh + r * Wh + c] += m * v.real();
                if (dim) dim[sl * H * Wh + r * Wh + c] += m * v.imag();
              }
            }
          }
        });
    g->bind(out, node, 0);
  }
  return out;
}

}  // namespace actfno
