#pragma once

#include <utility>

#include "mscnet/tensor.hpp"

namespace mscnet {

// All ops allocate a fresh output, validate shapes up front, and record a
// backward step on the current tape when any tracked input participates.
// Image tensors are NCHW throughout.

// input [N,Cin,H,W], weight [Cout,Cin/groups,kh,kw], bias [Cout] or undefined.
// H' = floor((H + 2*pad_h - kh)/stride) + 1, likewise W'.
Tensor conv2d(const Tensor& input, const Tensor& weight, const Tensor& bias,
              size_t stride, std::pair<size_t, size_t> padding, size_t groups = 1);

// Factorized k x k convolution: (k x 1) pass then (1 x k) pass, each padded
// to preserve spatial size. w_vertical is [C2,C1,k,1], w_horizontal [C3,C2,1,k].
Tensor asym_conv(const Tensor& input, const Tensor& w_vertical, const Tensor& w_horizontal);

// gamma/beta/running stats are [C]. Train mode normalizes by batch statistics
// and folds them into the running stats with the given momentum (running
// variance uses the unbiased estimate); eval mode normalizes by the running
// stats. Running stats are mutated in place and never enter the tape.
Tensor batchnorm2d(const Tensor& input, const Tensor& gamma, const Tensor& beta,
                   Tensor& running_mean, Tensor& running_var, bool training,
                   real momentum = real(0.1), real eps = real(1e-5));

Tensor relu(const Tensor& input);
Tensor relu6(const Tensor& input);
Tensor sigmoid(const Tensor& input);

Tensor global_avg_pool(const Tensor& input);   // [N,C,H,W] -> [N,C,1,1]
Tensor global_max_pool(const Tensor& input);   // [N,C,H,W] -> [N,C,1,1]
Tensor channel_avg_pool(const Tensor& input);  // [N,C,H,W] -> [N,1,H,W]
Tensor channel_max_pool(const Tensor& input);  // [N,C,H,W] -> [N,1,H,W]
// Windowed pooling, no padding; window must fit inside the input.
Tensor max_pool2d(const Tensor& input, size_t window, size_t stride);
Tensor avg_pool2d(const Tensor& input, size_t window, size_t stride);

enum class UpsampleMode { kNearest, kBilinear };

// Doubles H and W. Bilinear uses the align-corners=false convention.
Tensor upsample2x(const Tensor& input, UpsampleMode mode);

// Concatenation along the channel axis; N,H,W must match.
Tensor concat_channels(const Tensor& a, const Tensor& b);

// Elementwise add/mul. Besides exact shape match, the accepted broadcast
// patterns are [N,C,1,1] against [N,C,H,W] (channel gates) and [N,1,H,W]
// against [N,C,H,W] (spatial gates), in either argument order.
Tensor add(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);

Tensor scale(const Tensor& input, real factor);

Tensor sum(const Tensor& input);   // scalar
Tensor mean(const Tensor& input);  // scalar

}  // namespace mscnet
