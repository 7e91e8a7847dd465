#include "core/act.hpp"

#include <cmath>

#include "core/rng.hpp"

namespace actfno {

ConvParams make_conv(int64_t cout, int64_t cin, int k, bool bias, int dilation,
                     uint64_t seed, const std::string& name, InitKind init) {
  ConvParams p;
  p.dilation = dilation;
  p.has_bias = bias;
  p.weight = Tensor::zeros({cout, cin, k, k});
  if (bias) p.bias = Tensor::zeros({cout});
  if (init == InitKind::FanInUniform) {
    Rng rng(mix_seed(seed, hash_name(name)));
    double bound = 1.0 / std::sqrt(double(cin) * double(k) * double(k));
    double* w = p.weight.data_mut();
    for (int64_t i = 0; i < p.weight.numel(); ++i) w[i] = rng.uniform(-bound, bound);
    if (bias) {
      double* b = p.bias.data_mut();
      for (int64_t i = 0; i < cout; ++i) b[i] = rng.uniform(-bound, bound);
    }
  }
  p.weight.set_requires_grad(true);
  if (bias) p.bias.set_requires_grad(true);
  return p;
}

Tensor apply_conv(const Tensor& x, const ConvParams& p) {
  return conv2d(x, p.weight, p.has_bias ? &p.bias : nullptr, p.dilation);
}

void ActConfig::validate() const {
  if (channels <= 0 || head_dim <= 0 || branch_width <= 0)
    throw ValidationError("act: channels, head_dim and branch_width must be positive");
  if (channels % head_dim != 0)
    throw ValidationError(format_msg("act: channels ", channels, " not divisible by head_dim ",
                                     head_dim));
  if (alpha <= 0.0) throw ValidationError("act: alpha must be positive");
  if (norm_groups <= 0 || channels % norm_groups != 0)
    throw ValidationError(format_msg("act: channels ", channels, " not divisible by norm_groups ",
                                     norm_groups));
}

double adaptive_alpha(int64_t H, int64_t W, AlphaPolicy policy, double fixed_value) {
  if (H < 2 || W < 2) throw ValidationError("adaptive_alpha: grid extents must be at least 2");
  if (policy == AlphaPolicy::Fixed) return fixed_value;
  return 2.0 / double(std::min(H, W));
}

const Tensor& CoordinateGrid::get(int64_t H, int64_t W) {
  if (h_ == H && w_ == W) return cached_;
  std::vector<double> ax = identity_axis(W), ay = identity_axis(H);
  Tensor t = Tensor::zeros({1, 2, H, W});
  double* p = t.data_mut();
  for (int64_t i = 0; i < H; ++i)
    for (int64_t j = 0; j < W; ++j) {
      p[i * W + j] = ax[size_t(j)];
      p[H * W + i * W + j] = ay[size_t(i)];
    }
  cached_ = t;
  h_ = H;
  w_ = W;
  return cached_;
}

ActBlockParams make_act_block(const ActConfig& cfg, uint64_t seed, const std::string& prefix) {
  cfg.validate();
  ActBlockParams p;
  p.cfg = cfg;
  int64_t C = cfg.channels;
  int64_t in_branch = cfg.head_dim + 2;  // value channels plus both coordinates
  p.value_proj = make_conv(C, C, 1, true, 1, seed, prefix + "value_proj", InitKind::FanInUniform);
  p.branch1x1 = make_conv(cfg.branch_width, in_branch, 1, true, 1, seed, prefix + "branch1x1",
                          InitKind::FanInUniform);
  p.branch3x3 = make_conv(cfg.branch_width, in_branch, 3, true, 1, seed, prefix + "branch3x3",
                          InitKind::FanInUniform);
  p.branch_dil = make_conv(cfg.branch_width, in_branch, 3, true, 2, seed, prefix + "branch_dilated",
                           InitKind::FanInUniform);
  // zero start: every block begins at the identity transformation
  p.fuse = make_conv(2, 3 * cfg.branch_width, 1, true, 1, seed, prefix + "fuse", InitKind::Zero);
  p.out_proj = make_conv(C, C, 1, true, 1, seed, prefix + "out_proj", InitKind::FanInUniform);
  p.norm_weight = Tensor::full({C}, 1.0);
  p.norm_bias = Tensor::zeros({C});
  p.norm_weight.set_requires_grad(true);
  p.norm_bias.set_requires_grad(true);
  return p;
}

Tensor periodic_fold(const Tensor& coords) {
  int64_t n = coords.numel();
  Tensor out = Tensor::zeros(coords.shape());
  const double* pc = coords.data();
  double* po = out.data_mut();
  for (int64_t i = 0; i < n; ++i) {
    double g = pc[i];
    if (g >= -1.0 && g <= 1.0) {
      po[i] = g;
    } else {
      double r = std::fmod(g + 1.0, 2.0);
      if (r < 0.0) r += 2.0;
      po[i] = r - 1.0;
    }
  }
  ensure_finite(out, "periodic_fold");
  Graph* g = Graph::active();
  if (g && g->wants(coords)) {
    // the fold is a unit-slope sawtooth; boundary kinks are measure-zero
    int32_t node = g->add_node({coords.shape()}, {g->ref(coords)}, [n](Graph::BackCtx& ctx) {
      const double* adj = ctx.adjoint(0);
      if (!adj) return;
      if (double* dst = ctx.parent_grad(0))
        for (int64_t i = 0; i < n; ++i) dst[i] += adj[i];
    });
    g->bind(out, node, 0);
  }
  return out;
}

namespace {

// Identity grid tiled to (n,2,H,W); plain data, no gradient flows into it.
Tensor tile_grid(const Tensor& grid1, int64_t n) {
  int64_t H = grid1.size(2), W = grid1.size(3);
  Tensor t = Tensor::zeros({n, 2, H, W});
  const double* src = grid1.data();
  double* dst = t.data_mut();
  int64_t block = 2 * H * W;
  for (int64_t b = 0; b < n; ++b) std::copy(src, src + block, dst + b * block);
  return t;
}

}  // namespace

DisplacementPrediction predict_displacement(const Tensor& h, const ActBlockParams& params,
                                            CoordinateGrid& grid) {
  const ActConfig& cfg = params.cfg;
  if (h.ndim() != 4 || h.size(1) != cfg.channels)
    throw ValidationError(format_msg("act: expected ", cfg.channels, " channels, got ",
                                     shape_str(h.shape())));
  int64_t B = h.size(0), H = h.size(2), W = h.size(3);
  int64_t M = cfg.heads();

  Tensor v = apply_conv(h, params.value_proj);
  Tensor heads = v.reshape({B * M, cfg.head_dim, H, W});
  Tensor coords = tile_grid(grid.get(H, W), B * M);
  Tensor fin = concat_channels({heads, coords});
  Tensor b1 = apply_conv(fin, params.branch1x1);
  Tensor b3 = apply_conv(fin, params.branch3x3);
  Tensor bd = apply_conv(fin, params.branch_dil);
  Tensor mixed = activation(concat_channels({b1, b3, bd}), Activation::Gelu);
  Tensor raw = apply_conv(mixed, params.fuse);
  return {heads, raw};
}

Tensor bound_displacement(const Tensor& raw, double alpha) {
  if (alpha <= 0.0) throw ValidationError("bound_displacement: alpha must be positive");
  return scale(activation(raw, Activation::Tanh), alpha);
}

ActForwardResult act_forward(const Tensor& h, const ActBlockParams& params, CoordinateGrid& grid,
                             RunMode mode) {
  const ActConfig& cfg = params.cfg;
  int64_t B = h.size(0), H = h.size(2), W = h.size(3);
  int64_t M = cfg.heads();

  DisplacementPrediction pred = predict_displacement(h, params, grid);
  Tensor delta = bound_displacement(pred.raw, cfg.alpha);
  Tensor base = tile_grid(grid.get(H, W), B * M);
  Tensor sampling = periodic_fold(add(base, delta));
  Tensor sampled = bilinear_resample(pred.value_heads, sampling);
  Tensor merged = sampled.reshape({B, cfg.channels, H, W});
  Tensor out = add(h, apply_conv(merged, params.out_proj));
  if (!cfg.is_final)
    out = group_norm(out, cfg.norm_groups, params.norm_weight, params.norm_bias);

  ActForwardResult r;
  r.output = out;
  if (mode == RunMode::Eval) r.displacement = delta;
  return r;
}

}  // namespace actfno
