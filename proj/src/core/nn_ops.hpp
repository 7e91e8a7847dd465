#ifndef ACTFNO_NN_OPS_HPP
#define ACTFNO_NN_OPS_HPP

#include <functional>

#include "core/tensor.hpp"

namespace actfno {

// 2D cross-correlation with zero padding that preserves spatial extents.
// input (B,Cin,H,W), weight (Cout,Cin,k,k) with k in {1,3}, optional bias (Cout).
// Dilation applies to the 3x3 taps; the effective kernel must fit the input.
Tensor conv2d(const Tensor& input, const Tensor& weight, const Tensor* bias, int dilation = 1);

// Group normalization over (B,C,H,W): per-(sample,group) mean 0 / variance 1
// before the per-channel affine. channels must divide evenly into groups.
Tensor group_norm(const Tensor& x, int groups, const Tensor& weight, const Tensor& bias,
                  double eps = 1e-5);

// Normalized coordinates of pixel centers for an extent-n axis under the
// aligned-corners convention: a[0] = -1, a[n-1] = +1 exactly.
std::vector<double> identity_axis(int64_t n);

// Bilinear sampling of values (B,C,H,W) at grid (B,2,H',W') given in
// normalized [-1,1] coordinates, aligned corners, border clamp.
// Grid channel 0 is the x (width) coordinate, channel 1 the y (height)
// coordinate. A query that equals the output pixel's own identity coordinate
// bit-for-bit copies that pixel, so an identity grid is an exact identity.
Tensor bilinear_resample(const Tensor& values, const Tensor& grid);

// Central finite differences of a scalar function of x, elementwise:
// (f(x + step e_i) - f(x - step e_i)) / (2 step).
std::vector<double> finite_difference_gradient(const std::function<double(const Tensor&)>& f,
                                               const Tensor& x, double step);

}  // namespace actfno

#endif
