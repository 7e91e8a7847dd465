#ifndef ACTFNO_FNO_HPP
#define ACTFNO_FNO_HPP

#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "core/act.hpp"
#include "core/fft.hpp"

namespace actfno {

enum class ActPlacement { None, FinalOnly, All };

struct FnoConfig {
  int64_t in_channels = 8;
  int64_t out_channels = 2;
  int64_t width = 64;
  int64_t lifting_hidden = 128;
  int64_t projection_hidden = 128;
  int64_t modes1 = 32;  // retained row frequencies, split across +/- halves
  int64_t modes2 = 16;  // retained half-spectrum columns
  int n_blocks = 4;
  int norm_groups = 8;
  ActPlacement act_placement = ActPlacement::None;
  ActConfig act;  // channels are synced to width when the model is built

  void validate() const;
  // Default head width for the offset heads given the hidden width.
  static int64_t default_head_dim(int64_t width);
};

struct FnoBlockParams {
  Tensor spec_re, spec_im;  // (C,C,m1,m2) complex weights as real pairs
  ConvParams skip;          // 1x1 C->C, no bias
  Tensor norm1_weight, norm1_bias, norm2_weight, norm2_bias;
  ConvParams mlp1, mlp2;    // C -> C/2 -> C, biased
  Tensor gate;              // per-channel soft gate
  std::optional<ActBlockParams> act;
};

struct FnoModelParams {
  FnoConfig cfg;
  ConvParams lift1, lift2;  // in -> hidden -> C
  std::vector<FnoBlockParams> blocks;
  ConvParams proj1, proj2;  // C -> hidden -> out
  CoordinateGrid grid;      // per-model identity-grid cache
};

FnoModelParams make_model(const FnoConfig& cfg, uint64_t seed);

// Per-mode complex channel mixing on the truncated mode set; modes outside
// the retained set are zeroed.
ComplexSpectrum mode_mix(const ComplexSpectrum& x, const Tensor& w_re, const Tensor& w_im,
                         int64_t modes1, int64_t modes2);

// rfft2 -> retained-mode channel mixing -> irfft2.
Tensor spectral_conv(const Tensor& h, const Tensor& w_re, const Tensor& w_im, int64_t modes1,
                     int64_t modes2);

Tensor lift(const Tensor& u, const FnoModelParams& m);
Tensor project(const Tensor& h, const FnoModelParams& m);

// z = GELU(norm1(spectral(h)) + skip(h)); out = gate * MLP(norm2(z)) + z.
Tensor fno_block(const Tensor& h, const FnoBlockParams& p, const FnoConfig& cfg);

struct ModelForwardResult {
  Tensor output;
  std::vector<Tensor> displacements;  // one per ACT block, eval mode only
};

ModelForwardResult model_forward(const Tensor& u, FnoModelParams& m, RunMode mode);

// --- parameter registry -------------------------------------------------------

using ParamVisitor = std::function<void(const std::string&, Tensor&)>;
void visit_params(ActBlockParams& p, const std::string& prefix, const ParamVisitor& fn);
void visit_params(FnoModelParams& m, const ParamVisitor& fn);

struct ParamReport {
  std::vector<std::pair<std::string, int64_t>> params;  // name -> element count
  int64_t total() const;
  int64_t subtotal(const std::string& prefix) const;
};

ParamReport count_parameters(FnoModelParams& m);
ParamReport count_parameters(const FnoConfig& cfg);
std::string format_param_tree(const ParamReport& r);

// --- ablation variants ---------------------------------------------------------

enum class Variant { Vanilla, TwoXParams, FinalAct, LayerwiseAct };

Variant variant_from_string(const std::string& s);
const char* variant_name(Variant v);
FnoConfig build_variant(const FnoConfig& base, Variant v);

}  // namespace actfno

#endif
