#pragma once

#include <array>
#include <cstdint>
#include <vector>

#include "btsnet/tensor.hpp"

namespace btsnet {

struct Conv3dParams {
    TensorPtr weight;           // Cout x Cin/groups x kT x kH x kW
    TensorPtr bias;             // Cout, may be null
    std::array<int, 3> stride{1, 1, 1};
    std::array<int, 3> dilation{1, 1, 1};
    std::array<int, 3> padding{0, 0, 0};
    int groups = 1;
};

// Output extent per axis: floor((in + 2*pad - dilation*(k-1) - 1)/stride) + 1.
std::array<int, 3> conv3d_output_extents(const std::array<int, 3>& in,
                                         const std::array<int, 3>& kernel,
                                         const std::array<int, 3>& stride,
                                         const std::array<int, 3>& dilation,
                                         const std::array<int, 3>& padding);

// Cross-correlation (no kernel flip) over N x Cin x T x H x W with per-axis
// stride/dilation/zero-padding and channel groups.
TensorPtr conv3d(const TensorPtr& x, const Conv3dParams& p);

enum class BnMode { Train, Eval };

struct BatchNormParams {
    TensorPtr gamma;   // C
    TensorPtr beta;    // C
    std::vector<double> running_mean;
    std::vector<double> running_var;
    double epsilon = 1e-5;
    double momentum = 0.1;   // running <- (1-momentum)*running + momentum*batch
    BnMode mode = BnMode::Train;
};

// Fresh trainable parameters: gamma 1, beta 0, running stats (0, 1).
BatchNormParams make_batch_norm(int channels);

// Normalizes over every axis except the channel axis (axis 1). Train mode
// uses batch statistics (biased variance) and updates the running stats;
// eval mode uses the running stats as constants. Train mode needs at least
// two elements per channel.
TensorPtr batch_norm(const TensorPtr& x, BatchNormParams& p);

TensorPtr relu(const TensorPtr& x);

// Mean over H,W per (n,c,t): N x C x T x H x W -> N x C x T.
TensorPtr gap_spatial(const TensorPtr& u);

// Mean over T,H,W per (n,c): N x C x T x H x W -> N x C.
TensorPtr gap_spatiotemporal(const TensorPtr& u);

// Per-position linear map across the channel axis; trailing axes preserved.
// x: N x Cin x rest..., weight: Cout x Cin, bias: Cout or null.
TensorPtr pointwise_conv(const TensorPtr& x, const TensorPtr& weight,
                         const TensorPtr& bias = nullptr);

// Softmax along axis 1 (the pathway axis) of N x M x rest..., stabilized by
// max-subtraction, independently per (n, rest) position.
TensorPtr softmax_over_pathways(const TensorPtr& z);

// Mean cross-entropy of logits (N x K) against integer labels, with the
// softmax folded into the loss.
TensorPtr cross_entropy_with_logits(const TensorPtr& logits, const std::vector<int>& labels);

}  // namespace btsnet
