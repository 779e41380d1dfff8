#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "btsnet/nn_ops.hpp"
#include "btsnet/tsp_block.hpp"

namespace btsnet {

// Classifier skeleton: stem conv -> 4 stages of grouped bottleneck blocks
// (pathway blocks in stages 1-3, a plain grouped conv in stage 4) -> global
// average pool -> linear head. Widths follow the grouped-bottleneck
// convention; a tiny preset exists so tests and the toy task stay cheap.
struct NetworkConfig {
    int depth = 26;                 // 26 | 50 | 101
    int cardinality = 16;           // conv group count; must divide the inner widths
    int pathways = 4;               // M
    RfOption rf_option = RfOption::O2;
    FuseType fuse_type = FuseType::TC;
    int num_classes = 4;
    int input_channels = 3;
    int stem_width = 64;
    std::array<int, 4> stage_inner_width{64, 128, 256, 512};
    int expansion = 4;              // block output width = inner width * expansion
    int reduction_ratio = 16;       // fuse bottleneck d = max(C/r, L)
    int min_hidden = 32;

    // Inner widths {64,...,512} scaled by cardinality/16, so cardinality 16
    // gives the 16x4d layout and cardinality 32 the 32x4d layout.
    static NetworkConfig standard(int depth, int cardinality, int pathways,
                                  RfOption rf, FuseType fuse,
                                  int num_classes, int input_channels);

    // Desk-scale preset: widths {8,16,32,64}, cardinality 4, stem 8, r=4, L=8.
    static NetworkConfig tiny(int pathways, RfOption rf, FuseType fuse,
                              int num_classes, int input_channels);

    std::array<int, 4> stage_blocks() const;   // from depth
};

struct ConvBnLayer {
    Conv3dParams conv;
    BatchNormParams bn;
};

// reduce (1x1x1) -> pathway block or plain grouped 3x3x3 conv -> expand
// (1x1x1) -> residual add -> ReLU. The middle layer carries the block's
// stride; a strided 1x1x1 projection aligns the residual when shape changes.
struct BottleneckBlock {
    ConvBnLayer reduce;
    bool use_tsp = true;
    TspConfig tsp_cfg;
    TspParams tsp;
    ConvBnLayer mid;                // stage-4 plain grouped conv
    ConvBnLayer expand;
    bool has_projection = false;
    ConvBnLayer projection;
};

struct Network {
    NetworkConfig cfg;
    std::uint64_t seed = 0;
    ConvBnLayer stem;
    std::array<std::vector<BottleneckBlock>, 4> stages;
    TensorPtr classifier_weight;    // num_classes x final width
    TensorPtr classifier_bias;      // num_classes
};

Network build_network(const NetworkConfig& cfg, std::uint64_t seed);

void set_network_mode(Network& net, BnMode mode);

struct BlockAttention {
    std::string block_id;           // "stage{s}.block{b}"
    AttentionMap map;
};

// Logits N x num_classes; when attn_out is non-null it receives one entry per
// pathway block in forward order.
TensorPtr forward_classify(Network& net, const TensorPtr& clips,
                           std::vector<BlockAttention>* attn_out = nullptr);

// Deterministic walk over the network, one (name, tensor) per trainable
// parameter. State entries are the batch-norm running statistics.
std::vector<std::pair<std::string, TensorPtr>> named_params(Network& net);
std::vector<std::pair<std::string, std::vector<double>*>> named_state(Network& net);

struct ParamRow {
    std::string name;
    std::vector<int> shape;
    std::size_t count = 0;
};

std::size_t count_params(Network& net, std::vector<ParamRow>* per_layer = nullptr);

// Published totals (millions) for the full-scale variants, for side-by-side
// reporting only; this library's widths are conventions, so no tolerance is
// attached. Returns 0 for unknown (depth, cardinality) pairs.
double reference_param_count_millions(int depth, int cardinality);

// Checkpoint directory: manifest.json (config + tensor listing) plus one
// binary tensor file per entry, trainable parameters and running stats alike.
void save_checkpoint(Network& net, const std::string& dir);
Network load_checkpoint(const std::string& dir);

}  // namespace btsnet
