#include "core/fno.hpp"

#include <algorithm>
#include <cmath>
#include <map>

#include "core/rng.hpp"

namespace actfno {

void FnoConfig::validate() const {
  if (in_channels <= 0 || out_channels <= 0 || width <= 0)
    throw ValidationError("fno: channel counts must be positive");
  if (modes1 <= 0 || modes2 <= 0) throw ValidationError("fno: modes must be positive");
  if (modes1 % 2 != 0)
    throw ValidationError("fno: modes1 must be even (split across +/- row frequencies)");
  if (n_blocks <= 0) throw ValidationError("fno: need at least one block");
  if (width % 2 != 0) throw ValidationError("fno: width must be even (MLP halves it)");
  if (norm_groups <= 0 || width % norm_groups != 0)
    throw ValidationError("fno: width not divisible by norm_groups");
}

int64_t FnoConfig::default_head_dim(int64_t width) {
  if (width % 16 == 0) return 16;
  if (width % 8 == 0) return 8;
  return width;
}

namespace {

Tensor make_spectral_weight(int64_t C, int64_t m1, int64_t m2, uint64_t seed,
                            const std::string& name) {
  Tensor t = Tensor::zeros({C, C, m1, m2});
  Rng rng(mix_seed(seed, hash_name(name)));
  // keeps per-mode output magnitude on the order of the input magnitude
  double bound = std::sqrt(3.0 / (2.0 * double(C)));
  double* p = t.data_mut();
  for (int64_t i = 0; i < t.numel(); ++i) p[i] = rng.uniform(-bound, bound);
  t.set_requires_grad(true);
  return t;
}

Tensor ones_param(int64_t n) {
  Tensor t = Tensor::full({n}, 1.0);
  t.set_requires_grad(true);
  return t;
}

Tensor zeros_param(int64_t n) {
  Tensor t = Tensor::zeros({n});
  t.set_requires_grad(true);
  return t;
}

}  // namespace

FnoModelParams make_model(const FnoConfig& cfg_in, uint64_t seed) {
  FnoConfig cfg = cfg_in;
  cfg.validate();
  cfg.act.channels = cfg.width;
  if (cfg.act.head_dim <= 0 || cfg.width % cfg.act.head_dim != 0)
    cfg.act.head_dim = FnoConfig::default_head_dim(cfg.width);
  if (cfg.act.norm_groups <= 0 || cfg.width % cfg.act.norm_groups != 0)
    cfg.act.norm_groups = cfg.norm_groups;

  FnoModelParams m;
  m.cfg = cfg;
  m.lift1 = make_conv(cfg.lifting_hidden, cfg.in_channels, 1, true, 1, seed, "lifting.conv1",
                      InitKind::FanInUniform);
  m.lift2 = make_conv(cfg.width, cfg.lifting_hidden, 1, true, 1, seed, "lifting.conv2",
                      InitKind::FanInUniform);
  int64_t C = cfg.width;
  for (int b = 0; b < cfg.n_blocks; ++b) {
    std::string prefix = "blocks." + std::to_string(b) + ".";
    FnoBlockParams blk;
    blk.spec_re = make_spectral_weight(C, cfg.modes1, cfg.modes2, seed, prefix + "spectral.re");
    blk.spec_im = make_spectral_weight(C, cfg.modes1, cfg.modes2, seed, prefix + "spectral.im");
    blk.skip = make_conv(C, C, 1, false, 1, seed, prefix + "skip", InitKind::FanInUniform);
    blk.norm1_weight = ones_param(C);
    blk.norm1_bias = zeros_param(C);
    blk.norm2_weight = ones_param(C);
    blk.norm2_bias = zeros_param(C);
    blk.mlp1 = make_conv(C / 2, C, 1, true, 1, seed, prefix + "mlp.conv1", InitKind::FanInUniform);
    blk.mlp2 = make_conv(C, C / 2, 1, true, 1, seed, prefix + "mlp.conv2", InitKind::FanInUniform);
    blk.gate = ones_param(C);
    bool place_act = cfg.act_placement == ActPlacement::All ||
                     (cfg.act_placement == ActPlacement::FinalOnly && b == cfg.n_blocks - 1);
    if (place_act) {
      ActConfig ac = cfg.act;
      ac.is_final = (b == cfg.n_blocks - 1);
      blk.act = make_act_block(ac, seed, prefix + "act.");
    }
    m.blocks.push_back(std::move(blk));
  }
  m.proj1 = make_conv(cfg.projection_hidden, C, 1, true, 1, seed, "projection.conv1",
                      InitKind::FanInUniform);
  m.proj2 = make_conv(cfg.out_channels, cfg.projection_hidden, 1, true, 1, seed,
                      "projection.conv2", InitKind::FanInUniform);
  return m;
}

ComplexSpectrum mode_mix(const ComplexSpectrum& x, const Tensor& w_re, const Tensor& w_im,
                         int64_t m1, int64_t m2) {
  int64_t B = x.re.size(0), C = x.re.size(1), H = x.re.size(2), Wh = x.re.size(3);
  if (w_re.ndim() != 4 || w_re.size(0) != C || w_re.size(1) != C || w_re.size(2) != m1 ||
      w_re.size(3) != m2 || w_im.shape() != w_re.shape())
    throw ValidationError("mode_mix: weight shape must be (C,C,modes1,modes2)");
  if (H < m1 || Wh < m2)
    throw ValidationError(format_msg("mode_mix: grid ", H, "x", Wh,
                                     " too small for modes (", m1, ",", m2, ")"));

  // retained rows: first m1/2 and last m1/2
  std::vector<std::pair<int64_t, int64_t>> rows;  // (spectrum row, weight row index)
  for (int64_t r = 0; r < m1 / 2; ++r) rows.push_back({r, r});
  for (int64_t r = 0; r < m1 / 2; ++r) rows.push_back({H - m1 / 2 + r, m1 / 2 + r});

  Tensor yre = Tensor::zeros(x.re.shape());
  Tensor yim = Tensor::zeros(x.re.shape());
  int64_t plane = H * Wh;

  auto mix_forward = [&](const double* xr, const double* xi, const double* wr, const double* wi,
                         double* outr, double* outi) {
    std::vector<double> gxr(size_t(C)), gxi(size_t(C));
    for (int64_t b = 0; b < B; ++b) {
      for (auto [r, ir] : rows) {
        for (int64_t c = 0; c < m2; ++c) {
          int64_t off = r * Wh + c;
          for (int64_t i = 0; i < C; ++i) {
            gxr[size_t(i)] = xr[(b * C + i) * plane + off];
            gxi[size_t(i)] = xi[(b * C + i) * plane + off];
          }
          for (int64_t o = 0; o < C; ++o) {
            double ar = 0.0, ai = 0.0;
            const double* wrow_r = wr + ((o * C) * m1 + ir) * m2 + c;
            const double* wrow_i = wi + ((o * C) * m1 + ir) * m2 + c;
            int64_t stride = m1 * m2;
            for (int64_t i = 0; i < C; ++i) {
              double wre_v = wrow_r[i * stride];
              double wim_v = wrow_i[i * stride];
              ar += wre_v * gxr[size_t(i)] - wim_v * gxi[size_t(i)];
              ai += wre_v * gxi[size_t(i)] + wim_v * gxr[size_t(i)];
            }
            outr[(b * C + o) * plane + off] = ar;
            outi[(b * C + o) * plane + off] = ai;
          }
        }
      }
    }
  };
  mix_forward(x.re.data(), x.im.data(), w_re.data(), w_im.data(), yre.data_mut(),
              yim.data_mut());
  ensure_finite(yre, "mode_mix");
  ensure_finite(yim, "mode_mix");

  Graph* g = Graph::active();
  if (g && (g->wants(x.re) || g->wants(x.im) || g->wants(w_re) || g->wants(w_im))) {
    auto sxr = x.re.storage(), sxi = x.im.storage();
    auto swr = w_re.storage(), swi = w_im.storage();
    int32_t node = g->add_node(
        {yre.shape(), yim.shape()},
        {g->ref(x.re), g->ref(x.im), g->ref(w_re), g->ref(w_im)},
        [B, C, m1, m2, plane, Wh, rows, sxr, sxi, swr, swi](Graph::BackCtx& ctx) {
          const double* are = ctx.adjoint(0);
          const double* aim = ctx.adjoint(1);
          if (!are && !aim) return;
          double* dxr = ctx.parent_grad(0);
          double* dxi = ctx.parent_grad(1);
          double* dwr = ctx.parent_grad(2);
          double* dwi = ctx.parent_grad(3);
          const double* wr = swr->data();
          const double* wi = swi->data();
          const double* xr = sxr->data();
          const double* xi = sxi->data();
          std::vector<double> gar(size_t(C)), gai(size_t(C)), gxr(size_t(C)), gxi(size_t(C));
          int64_t stride = m1 * m2;
          for (int64_t b = 0; b < B; ++b) {
            for (auto [r, ir] : rows) {
              for (int64_t c = 0; c < m2; ++c) {
                int64_t off = r * Wh + c;
                for (int64_t o = 0; o < C; ++o) {
                  gar[size_t(o)] = are ? are[(b * C + o) * plane + off] : 0.0;
                  gai[size_t(o)] = aim ? aim[(b * C + o) * plane + off] : 0.0;
                }
                for (int64_t i = 0; i < C; ++i) {
                  gxr[size_t(i)] = xr[(b * C + i) * plane + off];
                  gxi[size_t(i)] = xi[(b * C + i) * plane + off];
                }
                if (dxr || dxi) {
                  for (int64_t i = 0; i < C; ++i) {
                    double accr = 0.0, acci = 0.0;
                    const double* wcol_r = wr + ((i)*m1 + ir) * m2 + c;
                    const double* wcol_i = wi + ((i)*m1 + ir) * m2 + c;
                    for (int64_t o = 0; o < C; ++o) {
                      double wre_v = wcol_r[o * C * stride];
                      double wim_v = wcol_i[o * C * stride];
                      accr += wre_v * gar[size_t(o)] + wim_v * gai[size_t(o)];
                      acci += -wim_v * gar[size_t(o)] + wre_v * gai[size_t(o)];
                    }
                    if (dxr) dxr[(b * C + i) * plane + off] += accr;
                    if (dxi) dxi[(b * C + i) * plane + off] += acci;
                  }
                }
                if (dwr || dwi) {
                  for (int64_t o = 0; o < C; ++o) {
                    double ar = gar[size_t(o)], ai = gai[size_t(o)];
                    if (ar == 0.0 && ai == 0.0) continue;
                    for (int64_t i = 0; i < C; ++i) {
                      int64_t widx = ((o * C + i) * m1 + ir) * m2 + c;
                      if (dwr) dwr[widx] += ar * gxr[size_t(i)] + ai * gxi[size_t(i)];
                      if (dwi) dwi[widx] += -ar * gxi[size_t(i)] + ai * gxr[size_t(i)];
                    }
                  }
                }
              }
            }
          }
        });
    Tensor yre_b = yre, yim_b = yim;
    g->bind(yre_b, node, 0);
    g->bind(yim_b, node, 1);
  }
  return {yre, yim, x.width};
}

Tensor spectral_conv(const Tensor& h, const Tensor& w_re, const Tensor& w_im, int64_t m1,
                     int64_t m2) {
  ComplexSpectrum spec = rfft2(h);
  ComplexSpectrum mixed = mode_mix(spec, w_re, w_im, m1, m2);
  return irfft2(mixed);
}

Tensor lift(const Tensor& u, const FnoModelParams& m) {
  return apply_conv(activation(apply_conv(u, m.lift1), Activation::Gelu), m.lift2);
}

Tensor project(const Tensor& h, const FnoModelParams& m) {
  return apply_conv(activation(apply_conv(h, m.proj1), Activation::Gelu), m.proj2);
}

Tensor fno_block(const Tensor& h, const FnoBlockParams& p, const FnoConfig& cfg) {
  Tensor spec = spectral_conv(h, p.spec_re, p.spec_im, cfg.modes1, cfg.modes2);
  Tensor normed = group_norm(spec, cfg.norm_groups, p.norm1_weight, p.norm1_bias);
  Tensor z = activation(add(normed, apply_conv(h, p.skip)), Activation::Gelu);
  Tensor mid = group_norm(z, cfg.norm_groups, p.norm2_weight, p.norm2_bias);
  Tensor mlp = apply_conv(activation(apply_conv(mid, p.mlp1), Activation::Gelu), p.mlp2);
  return add(channel_scale(mlp, p.gate), z);
}

ModelForwardResult model_forward(const Tensor& u, FnoModelParams& m, RunMode mode) {
  if (u.ndim() != 4 || u.size(1) != m.cfg.in_channels)
    throw ValidationError(format_msg("model_forward: expected ", m.cfg.in_channels,
                                     " input channels, got ", shape_str(u.shape())));
  ModelForwardResult res;
  Tensor h = lift(u, m);
  for (auto& blk : m.blocks) {
    h = fno_block(h, blk, m.cfg);
    if (blk.act) {
      ActForwardResult ar = act_forward(h, *blk.act, m.grid, mode);
      h = ar.output;
      if (mode == RunMode::Eval) res.displacements.push_back(ar.displacement);
    }
  }
  res.output = project(h, m);
  return res;
}

// --- registry -----------------------------------------------------------------

namespace {

void visit_conv(ConvParams& c, const std::string& name, const ParamVisitor& fn) {
  fn(name + ".weight", c.weight);
  if (c.has_bias) fn(name + ".bias", c.bias);
}

}  // namespace

void visit_params(ActBlockParams& p, const std::string& prefix, const ParamVisitor& fn) {
  visit_conv(p.value_proj, prefix + "value_proj", fn);
  visit_conv(p.branch1x1, prefix + "branch1x1", fn);
  visit_conv(p.branch3x3, prefix + "branch3x3", fn);
  visit_conv(p.branch_dil, prefix + "branch_dilated", fn);
  visit_conv(p.fuse, prefix + "fuse", fn);
  visit_conv(p.out_proj, prefix + "out_proj", fn);
  fn(prefix + "norm.weight", p.norm_weight);
  fn(prefix + "norm.bias", p.norm_bias);
}

void visit_params(FnoModelParams& m, const ParamVisitor& fn) {
  visit_conv(m.lift1, "lifting.conv1", fn);
  visit_conv(m.lift2, "lifting.conv2", fn);
  for (size_t b = 0; b < m.blocks.size(); ++b) {
    std::string prefix = "blocks." + std::to_string(b) + ".";
    FnoBlockParams& blk = m.blocks[b];
    fn(prefix + "spectral.weight_re", blk.spec_re);
    fn(prefix + "spectral.weight_im", blk.spec_im);
    visit_conv(blk.skip, prefix + "skip", fn);
    fn(prefix + "norm1.weight", blk.norm1_weight);
    fn(prefix + "norm1.bias", blk.norm1_bias);
    fn(prefix + "norm2.weight", blk.norm2_weight);
    fn(prefix + "norm2.bias", blk.norm2_bias);
    visit_conv(blk.mlp1, prefix + "mlp.conv1", fn);
    visit_conv(blk.mlp2, prefix + "mlp.conv2", fn);
    fn(prefix + "gate.weight", blk.gate);
    if (blk.act) visit_params(*blk.act, prefix + "act.", fn);
  }
  visit_conv(m.proj1, "projection.conv1", fn);
  visit_conv(m.proj2, "projection.conv2", fn);
}

int64_t ParamReport::total() const {
  int64_t t = 0;
  for (const auto& [name, n] : params) t += n;
  return t;
}

int64_t ParamReport::subtotal(const std::string& prefix) const {
  int64_t t = 0;
  for (const auto& [name, n] : params)
    if (name.rfind(prefix, 0) == 0) t += n;
  return t;
}

ParamReport count_parameters(FnoModelParams& m) {
  ParamReport r;
  visit_params(m, [&](const std::string& name, Tensor& t) {
    r.params.emplace_back(name, t.numel());
  });
  return r;
}

ParamReport count_parameters(const FnoConfig& cfg) {
  FnoModelParams m = make_model(cfg, 0);
  return count_parameters(m);
}

std::string format_param_tree(const ParamReport& r) {
  // roll params up into two levels of the dotted hierarchy
  std::vector<std::pair<std::string, int64_t>> groups;
  std::map<std::string, int64_t> seen;
  auto group_of = [](const std::string& name) {
    size_t p1 = name.find('.');
    if (p1 == std::string::npos) return name;
    size_t p2 = name.find('.', p1 + 1);
    if (name.rfind("blocks.", 0) == 0 && p2 != std::string::npos) {
      // keep blocks.N.component as one group
      size_t p3 = name.find('.', p2 + 1);
      return name.substr(0, p3 == std::string::npos ? name.size() : p3);
    }
    return name.substr(0, p2 == std::string::npos ? name.size() : p2);
  };
  for (const auto& [name, n] : r.params) {
    std::string gname = group_of(name);
    auto it = seen.find(gname);
    if (it == seen.end()) {
      groups.emplace_back(gname, n);
      seen.emplace(gname, int64_t(groups.size()) - 1);
    } else {
      groups[size_t(it->second)].second += n;
    }
  }
  std::ostringstream os;
  for (const auto& [gname, n] : groups) os << gname << "  " << n << "\n";
  int64_t act = 0;
  for (const auto& [name, n] : r.params)
    if (name.find(".act.") != std::string::npos) act += n;
  if (act > 0) {
    os << "act_subtotal  " << act << "\n";
    os << "backbone_subtotal  " << (r.total() - act) << "\n";
  }
  os << "total " << r.total() << "\n";
  return os.str();
}

// --- variants ------------------------------------------------------------------

Variant variant_from_string(const std::string& s) {
  if (s == "vanilla") return Variant::Vanilla;
  if (s == "2x-params") return Variant::TwoXParams;
  if (s == "final-act") return Variant::FinalAct;
  if (s == "layerwise-act") return Variant::LayerwiseAct;
  throw ValidationError("unknown variant '" + s + "'");
}

const char* variant_name(Variant v) {
  switch (v) {
    case Variant::Vanilla: return "vanilla";
    case Variant::TwoXParams: return "2x-params";
    case Variant::FinalAct: return "final-act";
    case Variant::LayerwiseAct: return "layerwise-act";
  }
  return "?";
}

FnoConfig build_variant(const FnoConfig& base, Variant v) {
  FnoConfig cfg = base;
  switch (v) {
    case Variant::Vanilla:
      cfg.act_placement = ActPlacement::None;
      break;
    case Variant::FinalAct:
      cfg.act_placement = ActPlacement::FinalOnly;
      break;
    case Variant::LayerwiseAct:
      cfg.act_placement = ActPlacement::All;
      break;
    case Variant::TwoXParams: {
      cfg.act_placement = ActPlacement::None;
      // spectral weights dominate and scale as width^2, so 1.5x width gives
      // roughly 2.25x parameters; rounded to keep the group count valid
      int64_t w = (base.width * 3) / 2;
      w -= w % 8;
      cfg.width = std::max<int64_t>(w, 8);
      break;
    }
  }
  return cfg;
}

}  // namespace actfno
