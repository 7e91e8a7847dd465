#ifndef ACTFNO_ACT_HPP
#define ACTFNO_ACT_HPP

#include <string>

#include "core/nn_ops.hpp"
#include "core/tensor.hpp"

namespace actfno {

enum class RunMode { Train, Eval };

// Convolution layer parameters. `weight` is (Cout,Cin,k,k).
struct ConvParams {
  Tensor weight;
  Tensor bias;  // undefined when has_bias is false
  int dilation = 1;
  bool has_bias = true;
};

enum class InitKind { FanInUniform, Zero };

ConvParams make_conv(int64_t cout, int64_t cin, int k, bool bias, int dilation,
                     uint64_t seed, const std::string& name, InitKind init);

Tensor apply_conv(const Tensor& x, const ConvParams& p);

// Configuration of one adaptive coordinate transform block.
struct ActConfig {
  int64_t channels = 64;
  int64_t head_dim = 16;      // value channels per head; heads = channels / head_dim
  int64_t branch_width = 8;   // output channels of each offset-predictor branch
  double alpha = 0.5;         // max displacement magnitude in normalized coordinates
  int norm_groups = 8;
  bool is_final = false;      // final block skips applying its output norm

  int64_t heads() const { return channels / head_dim; }
  void validate() const;
};

enum class AlphaPolicy { Fixed, GridWidth };

// "fixed" returns fixed_value; "grid-width" returns the normalized size of
// one grid cell, 2/min(H,W).
double adaptive_alpha(int64_t H, int64_t W, AlphaPolicy policy, double fixed_value);

// Cached normalized identity grid as a (1,2,H,W) tensor: channel 0 holds the
// x coordinate of each pixel center, channel 1 the y coordinate, corners at
// exactly +-1. Rebuilt when the resolution changes.
class CoordinateGrid {
 public:
  const Tensor& get(int64_t H, int64_t W);

 private:
  Tensor cached_;
  int64_t h_ = -1, w_ = -1;
};

struct ActBlockParams {
  ActConfig cfg;
  ConvParams value_proj;   // 1x1 C->C
  ConvParams branch1x1;    // 1x1 (head_dim+2)->branch_width
  ConvParams branch3x3;    // 3x3 same
  ConvParams branch_dil;   // 3x3 dilation 2
  ConvParams fuse;         // 1x1 3*branch_width->2, zero-initialized
  ConvParams out_proj;     // 1x1 C->C
  Tensor norm_weight, norm_bias;
};

ActBlockParams make_act_block(const ActConfig& cfg, uint64_t seed, const std::string& prefix);

// Wrap coordinates into [-1,1]: components with |g| <= 1 pass through
// unchanged (including +-1 exactly); components strictly outside map via
// ((g + 1) mod 2) - 1 with a nonnegative remainder, so e.g. 3.0 -> -1.0.
// Differentiable with unit slope away from the boundaries.
Tensor periodic_fold(const Tensor& coords);

// Value heads packed into the batch axis plus the raw (unbounded) offsets.
struct DisplacementPrediction {
  Tensor value_heads;  // (B*M, head_dim, H, W)
  Tensor raw;          // (B*M, 2, H, W)
};

DisplacementPrediction predict_displacement(const Tensor& h, const ActBlockParams& params,
                                            CoordinateGrid& grid);

// alpha * tanh(raw), componentwise.
Tensor bound_displacement(const Tensor& raw, double alpha);

struct ActForwardResult {
  Tensor output;        // (B,C,H,W)
  Tensor displacement;  // (B*M,2,H,W); defined only in eval mode
};

// Full block: value projection, offset prediction, bounding, fold, head-wise
// resampling, output projection, identity residual, and (except in the final
// block) group normalization.
ActForwardResult act_forward(const Tensor& h, const ActBlockParams& params, CoordinateGrid& grid,
                             RunMode mode);

}  // namespace actfno

#endif
