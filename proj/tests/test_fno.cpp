#include <cmath>
#include <cstring>

#include "core/fno.hpp"
#include "core/rng.hpp"
#include "doctest.h"
#include "oracles.hpp"

using namespace actfno;

namespace {

Tensor random_field(Shape s, uint64_t seed) {
  Rng rng(seed);
  std::vector<double> v(size_t(numel_of(s)));
  for (auto& x : v) x = rng.normal();
  return Tensor::from_data(std::move(s), std::move(v));
}

FnoConfig reference_config(ActPlacement placement) {
  FnoConfig cfg;  // defaults are the reference: in 8, out 2, width 64, modes (32,16), 4 blocks
  cfg.act_placement = placement;
  return cfg;
}

FnoConfig tiny_config(ActPlacement placement) {
  FnoConfig cfg;
  cfg.in_channels = 2;
  cfg.out_channels = 1;
  cfg.width = 8;
  cfg.lifting_hidden = 16;
  cfg.projection_hidden = 16;
  cfg.modes1 = 4;
  cfg.modes2 = 3;
  cfg.n_blocks = 2;
  cfg.norm_groups = 4;
  cfg.act_placement = placement;
  cfg.act.norm_groups = 4;
  return cfg;
}

// band-limit a field to the retained mode set by a spectral round trip
Tensor band_limit(const Tensor& x, int64_t m1, int64_t m2) {
  ComplexSpectrum s = rfft2(x);
  int64_t H = x.size(2), Wh = s.re.size(3);
  double* re = s.re.data_mut();
  double* im = s.im.data_mut();
  for (int64_t b = 0; b < x.size(0) * x.size(1); ++b)
    for (int64_t r = 0; r < H; ++r)
      for (int64_t c = 0; c < Wh; ++c) {
        bool keep_row = r < m1 / 2 || r >= H - m1 / 2;
        bool keep_col = c < m2;
        if (!(keep_row && keep_col)) {
          re[(b * H + r) * Wh + c] = 0.0;
          im[(b * H + r) * Wh + c] = 0.0;
        }
      }
  return irfft2(s);
}

}  // namespace

TEST_CASE("reference parameter accounting") {
  ParamReport act_rep = count_parameters(reference_config(ActPlacement::All));
  ParamReport van_rep = count_parameters(reference_config(ActPlacement::None));

  CHECK(van_rep.total() == 16829634);
  CHECK(act_rep.total() == 16874666);
  CHECK(act_rep.total() - van_rep.total() == 45032);

  CHECK(act_rep.subtotal("lifting") == 9408);
  CHECK(act_rep.subtotal("projection") == 8578);
  CHECK(van_rep.subtotal("blocks.0") == 4202912);
  CHECK(act_rep.subtotal("blocks.0.act") == 11258);
  CHECK(act_rep.subtotal("blocks.0") == 4202912 + 11258);
  CHECK(act_rep.subtotal("blocks.0.spectral") == 4194304);
  CHECK(act_rep.subtotal("blocks.0.skip") == 4096);
  CHECK(act_rep.subtotal("blocks.0.norm1") + act_rep.subtotal("blocks.0.norm2") == 256);
  CHECK(act_rep.subtotal("blocks.0.mlp") == 4192);
  CHECK(act_rep.subtotal("blocks.0.gate") == 64);
  CHECK(act_rep.subtotal("blocks.0.act.value_proj") == 4160);
  CHECK(act_rep.subtotal("blocks.0.act.branch") == 2760);
  CHECK(act_rep.subtotal("blocks.0.act.fuse") == 50);
  CHECK(act_rep.subtotal("blocks.0.act.out_proj") == 4160);
  CHECK(act_rep.subtotal("blocks.0.act.norm") == 128);

  std::string tree = format_param_tree(act_rep);
  CHECK(tree.find("total 16874666") != std::string::npos);
}

TEST_CASE("identity-mixing spectral conv preserves band-limited inputs") {
  int64_t C = 3, m1 = 4, m2 = 3;
  Tensor x = band_limit(random_field({1, C, 12, 12}, 90), m1, m2);
  Tensor wre = Tensor::zeros({C, C, m1, m2});
  Tensor wim = Tensor::zeros({C, C, m1, m2});
  double* w = wre.data_mut();
  for (int64_t o = 0; o < C; ++o)
    for (int64_t r = 0; r < m1; ++r)
      for (int64_t c = 0; c < m2; ++c) w[((o * C + o) * m1 + r) * m2 + c] = 1.0;
  Tensor y = spectral_conv(x, wre, wim, m1, m2);
  for (int64_t i = 0; i < x.numel(); ++i)
    CHECK(std::fabs(y.data()[i] - x.data()[i]) < 1e-10);
}

TEST_CASE("zero spectral weights give the null map") {
  Tensor x = random_field({1, 2, 8, 8}, 91);
  Tensor wre = Tensor::zeros({2, 2, 4, 3});
  Tensor wim = Tensor::zeros({2, 2, 4, 3});
  Tensor y = spectral_conv(x, wre, wim, 4, 3);
  for (int64_t i = 0; i < y.numel(); ++i) CHECK(y.data()[i] == 0.0);
}

TEST_CASE("spectral conv matches the dense DFT oracle") {
  int64_t H = 16, W = 16, C = 2, m1 = 4, m2 = 3;
  Tensor x = random_field({1, C, H, W}, 92);
  Tensor wre = random_field({C, C, m1, m2}, 93);
  Tensor wim = random_field({C, C, m1, m2}, 94);
  Tensor y = spectral_conv(x, wre, wim, m1, m2);

  // oracle: full dense DFT, truncate, per-mode complex mixing, mirror the
  // paired columns for conjugate symmetry, dense inverse, real part
  std::vector<std::vector<std::complex<double>>> X(size_t(C));
  for (int64_t ci = 0; ci < C; ++ci)
    X[size_t(ci)] = oracle::dft2_direct(
        std::vector<double>(x.data() + ci * H * W, x.data() + (ci + 1) * H * W), H, W);
  std::vector<std::vector<std::complex<double>>> Y(
      size_t(C), std::vector<std::complex<double>>(size_t(H * W), {0.0, 0.0}));
  auto weight = [&](int64_t o, int64_t i, int64_t ir, int64_t ic) {
    return std::complex<double>(wre.data()[((o * C + i) * m1 + ir) * m2 + ic],
                                wim.data()[((o * C + i) * m1 + ir) * m2 + ic]);
  };
  std::vector<std::pair<int64_t, int64_t>> rows;
  for (int64_t r = 0; r < m1 / 2; ++r) rows.push_back({r, r});
  for (int64_t r = 0; r < m1 / 2; ++r) rows.push_back({H - m1 / 2 + r, m1 / 2 + r});
  for (auto [r, ir] : rows)
    for (int64_t c = 0; c < m2; ++c)
      for (int64_t o = 0; o < C; ++o) {
        std::complex<double> acc(0.0, 0.0);
        for (int64_t i = 0; i < C; ++i) acc += weight(o, i, ir, c) * X[size_t(i)][size_t(r * W + c)];
        Y[size_t(o)][size_t(r * W + c)] = acc;
        if (c != 0 && c != W / 2)
          Y[size_t(o)][size_t(((H - r) % H) * W + (W - c))] = std::conj(acc);
      }
  for (int64_t o = 0; o < C; ++o) {
    auto want = oracle::idft2_direct_real(Y[size_t(o)], H, W);
    for (int64_t i = 0; i < H * W; ++i)
      CHECK(std::fabs(y.data()[o * H * W + i] - want[size_t(i)]) < 1e-10);
  }
}

TEST_CASE("spectral conv is linear in its input") {
  int64_t m1 = 4, m2 = 3;
  Tensor x = random_field({1, 2, 10, 10}, 95);
  Tensor z = random_field({1, 2, 10, 10}, 96);
  Tensor wre = random_field({2, 2, m1, m2}, 97);
  Tensor wim = random_field({2, 2, m1, m2}, 98);
  double a = 0.7, b = -1.9;
  Tensor lhs = spectral_conv(add(scale(x, a), scale(z, b)), wre, wim, m1, m2);
  Tensor rhs = add(scale(spectral_conv(x, wre, wim, m1, m2), a),
                   scale(spectral_conv(z, wre, wim, m1, m2), b));
  for (int64_t i = 0; i < lhs.numel(); ++i)
    CHECK(std::fabs(lhs.data()[i] - rhs.data()[i]) < 1e-10);
}

TEST_CASE("mode bounds are validated") {
  Tensor x = random_field({1, 1, 4, 4}, 99);
  Tensor wre = Tensor::zeros({1, 1, 8, 3});
  Tensor wim = Tensor::zeros({1, 1, 8, 3});
  CHECK_THROWS_AS(spectral_conv(x, wre, wim, 8, 3), ValidationError);
}

TEST_CASE("unit gate is a no-op") {
  Tensor x = random_field({2, 4, 3, 3}, 100);
  Tensor ones = Tensor::full({4}, 1.0);
  Tensor y = channel_scale(x, ones);
  CHECK(std::memcmp(y.data(), x.data(), size_t(x.numel()) * sizeof(double)) == 0);
}

TEST_CASE("model forward preserves spatial extents and stays finite") {
  for (auto placement : {ActPlacement::None, ActPlacement::FinalOnly, ActPlacement::All}) {
    FnoConfig cfg = tiny_config(placement);
    FnoModelParams m = make_model(cfg, 7);
    Tensor u = random_field({2, cfg.in_channels, 12, 10}, 101);
    ModelForwardResult r = model_forward(u, m, RunMode::Train);
    CHECK(r.output.shape() == Shape{2, cfg.out_channels, 12, 10});
    ensure_finite(r.output, "test");
  }
}

TEST_CASE("reference model forward smoke at 64x64") {
  FnoConfig cfg = reference_config(ActPlacement::All);
  FnoModelParams m = make_model(cfg, 3);
  Tensor u = random_field({1, 8, 64, 64}, 102);
  ModelForwardResult r = model_forward(u, m, RunMode::Train);
  CHECK(r.output.shape() == Shape{1, 2, 64, 64});
  ensure_finite(r.output, "test");
}

TEST_CASE("zero-start equivalence: forward equals the displacement-free pipeline") {
  FnoConfig cfg = tiny_config(ActPlacement::All);
  FnoModelParams m = make_model(cfg, 11);
  Tensor u = random_field({1, cfg.in_channels, 8, 8}, 103);
  ModelForwardResult r = model_forward(u, m, RunMode::Eval);
  for (const Tensor& d : r.displacements) {
    REQUIRE(d.defined());
    for (int64_t i = 0; i < d.numel(); ++i) CHECK(d.data()[i] == 0.0);
  }

  // same stack with every adaptive block replaced by its zero-displacement
  // reduction: out = Norm(h + out_proj(value_proj(h)))
  Tensor h = lift(u, m);
  for (size_t b = 0; b < m.blocks.size(); ++b) {
    h = fno_block(h, m.blocks[b], m.cfg);
    ActBlockParams& act = *m.blocks[b].act;
    Tensor vp = apply_conv(h, act.value_proj);
    h = add(h, apply_conv(vp, act.out_proj));
    if (!act.cfg.is_final)
      h = group_norm(h, act.cfg.norm_groups, act.norm_weight, act.norm_bias);
  }
  Tensor manual = project(h, m);
  CHECK(std::memcmp(r.output.data(), manual.data(), size_t(manual.numel()) * sizeof(double)) == 0);
}

TEST_CASE("forward is deterministic") {
  FnoConfig cfg = tiny_config(ActPlacement::All);
  FnoModelParams m = make_model(cfg, 19);
  Tensor u = random_field({1, cfg.in_channels, 8, 8}, 104);
  ModelForwardResult a = model_forward(u, m, RunMode::Train);
  ModelForwardResult b = model_forward(u, m, RunMode::Train);
  CHECK(std::memcmp(a.output.data(), b.output.data(), size_t(a.output.numel()) * sizeof(double)) ==
        0);
}

TEST_CASE("build_variant") {
  FnoConfig base = reference_config(ActPlacement::None);

  FnoConfig vanilla = build_variant(base, Variant::Vanilla);
  CHECK(vanilla.act_placement == ActPlacement::None);

  FnoConfig fin = build_variant(base, Variant::FinalAct);
  CHECK(fin.act_placement == ActPlacement::FinalOnly);
  FnoModelParams m = make_model(fin, 23);
  int with_act = 0;
  for (size_t b = 0; b < m.blocks.size(); ++b)
    if (m.blocks[b].act) {
      ++with_act;
      CHECK(b == m.blocks.size() - 1);
      CHECK(m.blocks[b].act->cfg.is_final);
    }
  CHECK(with_act == 1);
  ParamReport rep = count_parameters(m);
  CHECK(rep.total() == 16829634 + 11258);

  FnoConfig twox = build_variant(base, Variant::TwoXParams);
  CHECK(twox.width == 96);
  double ratio = double(count_parameters(twox).total()) / double(count_parameters(base).total());
  CHECK(ratio >= 1.8);
  CHECK(ratio <= 2.5);

  CHECK_THROWS_AS(variant_from_string("bogus"), ValidationError);
}

TEST_CASE("small-width models pick a valid head width") {
  CHECK(FnoConfig::default_head_dim(64) == 16);
  CHECK(FnoConfig::default_head_dim(8) == 8);
  CHECK(FnoConfig::default_head_dim(24) == 8);
  FnoConfig cfg = tiny_config(ActPlacement::All);
  FnoModelParams m = make_model(cfg, 5);
  CHECK(m.blocks[0].act->cfg.head_dim == 8);
  CHECK(m.blocks[0].act->cfg.heads() == 1);
}
