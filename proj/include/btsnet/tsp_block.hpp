#pragma once

#include <array>
#include <cstdint>
#include <random>
#include <utility>
#include <vector>

#include "btsnet/nn_ops.hpp"
#include "btsnet/tensor.hpp"

namespace btsnet {

enum class RfOption { O1, O2 };
enum class FuseType { TC, C };

// Temporal-spatial pathway block configuration. M parallel 3x3x3 convolutions
// with per-pathway dilation triples split the input; a bottleneck over the
// pooled features produces softmax weights per pathway that select among them.
struct TspConfig {
    int pathways = 4;                              // M
    RfOption rf_option = RfOption::O2;
    FuseType fuse_type = FuseType::TC;
    std::vector<std::array<int, 3>> dilations;     // M triples (dT, dH, dW)
    int in_channels = 0;
    int out_channels = 0;
    int groups = 1;                                // cardinality
    int reduction_ratio = 16;
    int min_hidden = 32;
    std::array<int, 3> stride{1, 1, 1};            // shared across pathways

    // d = max(C / r, L), integer division.
    int hidden_width() const;
};

struct TspParams {
    std::vector<Conv3dParams> pathway_convs;       // shared kernel size 3x3x3
    std::vector<BatchNormParams> pathway_bns;
    TensorPtr fuse_compress_weight;                // d x C
    BatchNormParams fuse_bn;                       // over d
    TensorPtr fuse_expand_weight;                  // (M*C) x d
};

// Softmax weights per pathway: N x M x C (fuse C) or N x M x C x T (fuse TC).
struct AttentionMap {
    TensorPtr weights;
    FuseType fuse_type = FuseType::TC;
};

// O1: cube-like dilations (i,i,i) for i = 1..M. O2: a fixed table mixing
// cubic, spatial-only and temporal-only roles, defined for M <= 4 only.
std::vector<std::array<int, 3>> build_dilation_set(int m, RfOption option);

// Deterministic init from seed: conv and fuse weights zero-mean Gaussian with
// variance 2/fan_in, BN gamma 1 and beta 0. The second form draws from a
// caller-owned stream so a network init stays a single deterministic sequence.
TspParams init_tsp_params(const TspConfig& cfg, std::uint64_t seed);
TspParams init_tsp_params(const TspConfig& cfg, std::mt19937_64& rng);

// Fills a flat buffer with N(0, sqrt(2/fan_in)) draws from the given stream.
void he_gaussian_fill(std::vector<double>& buf, std::size_t fan_in, std::mt19937_64& rng);

// Split / fuse / select. Per pathway: conv -> BN -> ReLU; pathway outputs are
// summed, pooled (spatially for fuse TC, spatiotemporally for fuse C), pushed
// through the compress/expand bottleneck, softmaxed along the pathway axis,
// and used to weight the pathway outputs. Fully differentiable.
std::pair<TensorPtr, AttentionMap> tsp_forward(const TensorPtr& x, const TspConfig& cfg,
                                               TspParams& params);

void set_tsp_mode(TspParams& params, BnMode mode);

}  // namespace btsnet
