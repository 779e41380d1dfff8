#include "btsnet/tsp_block.hpp"

#include <cmath>
#include <stdexcept>

namespace btsnet {

int TspConfig::hidden_width() const {
    if (out_channels <= 0 || reduction_ratio <= 0 || min_hidden <= 0)
        throw std::invalid_argument("TspConfig: channels, reduction ratio and min hidden must be positive");
    return std::max(out_channels / reduction_ratio, min_hidden);
}

std::vector<std::array<int, 3>> build_dilation_set(int m, RfOption option) {
    if (m < 1) throw std::invalid_argument("build_dilation_set: M must be >= 1");
    if (option == RfOption::O1) {
        std::vector<std::array<int, 3>> d;
        d.reserve(static_cast<std::size_t>(m));
        for (int i = 1; i <= m; ++i) d.push_back({i, i, i});
        return d;
    }
    // O2 mixes cube, spatial-only and temporal-only views; only these sets
    // are defined, anything else is rejected rather than invented.
    switch (m) {
        case 1: return {{1, 1, 1}};
        case 2: return {{1, 1, 1}, {4, 4, 4}};
        case 3: return {{1, 1, 1}, {1, 4, 4}, {4, 1, 1}};
        case 4: return {{1, 1, 1}, {4, 4, 4}, {1, 4, 4}, {4, 1, 1}};
        default: throw std::invalid_argument("build_dilation_set: O2 is defined for M in 1..4");
    }
}

void he_gaussian_fill(std::vector<double>& buf, std::size_t fan_in, std::mt19937_64& rng) {
    std::normal_distribution<double> dist(0.0, std::sqrt(2.0 / static_cast<double>(fan_in)));
    for (auto& v : buf) v = dist(rng);
}

namespace {

void validate_config(const TspConfig& cfg) {
    if (cfg.pathways < 1) throw std::invalid_argument("TspConfig: M must be >= 1");
    if (static_cast<int>(cfg.dilations.size()) != cfg.pathways)
        throw std::invalid_argument("TspConfig: dilation count must equal M");
    for (const auto& d : cfg.dilations) {
        for (int a = 0; a < 3; ++a)
            if (d[a] < 1) throw std::invalid_argument("TspConfig: dilation components must be >= 1");
    }
    if (cfg.in_channels <= 0 || cfg.out_channels <= 0)
        throw std::invalid_argument("TspConfig: channel counts must be positive");
    if (cfg.groups < 1 || cfg.in_channels % cfg.groups != 0 || cfg.out_channels % cfg.groups != 0)
        throw std::invalid_argument("TspConfig: groups must divide both channel counts");
}

}  // namespace

TspParams init_tsp_params(const TspConfig& cfg, std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    return init_tsp_params(cfg, rng);
}

TspParams init_tsp_params(const TspConfig& cfg, std::mt19937_64& rng) {
    validate_config(cfg);
    TspParams p;
    const int cpg = cfg.in_channels / cfg.groups;
    const std::size_t conv_fan_in = static_cast<std::size_t>(cpg) * 27;
    for (int m = 0; m < cfg.pathways; ++m) {
        Conv3dParams conv;
        std::vector<double> w(static_cast<std::size_t>(cfg.out_channels) * cpg * 27);
        he_gaussian_fill(w, conv_fan_in, rng);
        conv.weight = make_tensor({cfg.out_channels, cpg, 3, 3, 3}, std::move(w), true);
        conv.groups = cfg.groups;
        conv.stride = cfg.stride;
        conv.dilation = cfg.dilations[static_cast<std::size_t>(m)];
        // Same-style padding so every pathway produces the same extents.
        conv.padding = conv.dilation;
        p.pathway_convs.push_back(std::move(conv));
        p.pathway_bns.push_back(make_batch_norm(cfg.out_channels));
    }
    const int d = cfg.hidden_width();
    {
        std::vector<double> w(static_cast<std::size_t>(d) * cfg.out_channels);
        he_gaussian_fill(w, static_cast<std::size_t>(cfg.out_channels), rng);
        p.fuse_compress_weight = make_tensor({d, cfg.out_channels}, std::move(w), true);
    }
    p.fuse_bn = make_batch_norm(d);
    {
        std::vector<double> w(static_cast<std::size_t>(cfg.pathways) * cfg.out_channels * d);
        he_gaussian_fill(w, static_cast<std::size_t>(d), rng);
        p.fuse_expand_weight = make_tensor({cfg.pathways * cfg.out_channels, d}, std::move(w), true);
    }
    return p;
}

void set_tsp_mode(TspParams& params, BnMode mode) {
    for (auto& bn : params.pathway_bns) bn.mode = mode;
    params.fuse_bn.mode = mode;
}

std::pair<TensorPtr, AttentionMap> tsp_forward(const TensorPtr& x, const TspConfig& cfg,
                                               TspParams& params) {
    validate_config(cfg);
    if (static_cast<int>(params.pathway_convs.size()) != cfg.pathways ||
        static_cast<int>(params.pathway_bns.size()) != cfg.pathways)
        throw std::invalid_argument("tsp_forward: params do not match config");
    if (x->rank() != 5) throw std::invalid_argument("tsp_forward: input must be N x C x T x H x W");
    if (x->extent(1) != cfg.in_channels) throw std::invalid_argument("tsp_forward: channel mismatch");

    const int m = cfg.pathways;
    const int c = cfg.out_channels;

    // Split: one dilated conv -> BN -> ReLU per pathway.
    std::vector<TensorPtr> pathway_out;
    pathway_out.reserve(static_cast<std::size_t>(m));
    for (int i = 0; i < m; ++i) {
        auto u = conv3d(x, params.pathway_convs[static_cast<std::size_t>(i)]);
        u = batch_norm(u, params.pathway_bns[static_cast<std::size_t>(i)]);
        u = relu(u);
        if (i > 0 && u->shape != pathway_out[0]->shape)
            throw std::invalid_argument("tsp_forward: pathway output shapes disagree");
        pathway_out.push_back(std::move(u));
    }

    // Fuse: sum, pool, compress.
    TensorPtr u_sum = pathway_out[0];
    for (int i = 1; i < m; ++i) u_sum = add(u_sum, pathway_out[static_cast<std::size_t>(i)]);

    const int t_out = u_sum->extent(2);
    TensorPtr s = cfg.fuse_type == FuseType::TC ? gap_spatial(u_sum)          // N x C x T
                                                : gap_spatiotemporal(u_sum);  // N x C
    TensorPtr z = pointwise_conv(s, params.fuse_compress_weight);
    z = batch_norm(z, params.fuse_bn);
    z = relu(z);

    // Select: expand to M*C, reshape, softmax along the pathway axis.
    TensorPtr z2 = pointwise_conv(z, params.fuse_expand_weight);  // N x (M*C) [x T]
    std::vector<int> attn_shape{x->extent(0), m, c};
    if (cfg.fuse_type == FuseType::TC) attn_shape.push_back(t_out);
    TensorPtr attn = softmax_over_pathways(reshape(z2, attn_shape));

    // Weighted sum of pathways; weights broadcast over the absent axes.
    TensorPtr v;
    for (int i = 0; i < m; ++i) {
        TensorPtr w = slice_axis1(attn, i);  // N x C [x T]
        std::vector<int> bshape{x->extent(0), c, cfg.fuse_type == FuseType::TC ? t_out : 1, 1, 1};
        w = reshape(w, bshape);
        TensorPtr weighted = mul(pathway_out[static_cast<std::size_t>(i)], w);
        v = i == 0 ? weighted : add(v, weighted);
    }

    AttentionMap map;
    map.weights = attn;
    map.fuse_type = cfg.fuse_type;
    return {v, map};
}

}  // namespace btsnet
