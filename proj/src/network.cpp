#include "btsnet/network.hpp"

#include <filesystem>
#include <fstream>
#include <functional>
#include <random>
#include <stdexcept>

#include "json.hpp"

namespace btsnet {

namespace {

using json = nlohmann::json;

std::array<int, 4> blocks_for_depth(int depth) {
    switch (depth) {
        case 26: return {2, 2, 2, 2};
        case 50: return {3, 4, 6, 3};
        case 101: return {3, 4, 23, 3};
        default: throw std::invalid_argument("NetworkConfig: depth must be 26, 50 or 101");
    }
}

void validate_network_config(const NetworkConfig& cfg) {
    blocks_for_depth(cfg.depth);
    if (cfg.cardinality < 1) throw std::invalid_argument("NetworkConfig: cardinality must be >= 1");
    for (int w : cfg.stage_inner_width) {
        if (w < 1 || w % cfg.cardinality != 0)
            throw std::invalid_argument("NetworkConfig: cardinality must divide every stage width");
    }
    if (cfg.pathways < 1) throw std::invalid_argument("NetworkConfig: pathway count must be >= 1");
    if (cfg.num_classes < 1) throw std::invalid_argument("NetworkConfig: num_classes must be >= 1");
    if (cfg.input_channels < 1 || cfg.stem_width < 1 || cfg.expansion < 1)
        throw std::invalid_argument("NetworkConfig: channel settings must be positive");
    if (cfg.reduction_ratio < 1 || cfg.min_hidden < 1)
        throw std::invalid_argument("NetworkConfig: fuse bottleneck settings must be positive");
}

Conv3dParams make_conv(int out_ch, int in_ch, int groups, std::array<int, 3> kernel,
                       std::array<int, 3> stride, std::array<int, 3> padding,
                       std::mt19937_64& rng) {
    Conv3dParams p;
    const int cpg = in_ch / groups;
    const std::size_t k = static_cast<std::size_t>(kernel[0]) * kernel[1] * kernel[2];
    std::vector<double> w(static_cast<std::size_t>(out_ch) * static_cast<std::size_t>(cpg) * k);
    he_gaussian_fill(w, static_cast<std::size_t>(cpg) * k, rng);
    p.weight = make_tensor({out_ch, cpg, kernel[0], kernel[1], kernel[2]}, std::move(w), true);
    p.stride = stride;
    p.padding = padding;
    p.groups = groups;
    return p;
}

ConvBnLayer make_pointwise(int out_ch, int in_ch, std::array<int, 3> stride,
                           std::mt19937_64& rng) {
    ConvBnLayer l;
    l.conv = make_conv(out_ch, in_ch, 1, {1, 1, 1}, stride, {0, 0, 0}, rng);
    l.bn = make_batch_norm(out_ch);
    return l;
}

// Deterministic walk shared by parameter listing, counting and checkpoints.
using ParamFn = std::function<void(const std::string&, const TensorPtr&)>;
using StateFn = std::function<void(const std::string&, std::vector<double>&)>;

void walk_conv_bn(const std::string& prefix, ConvBnLayer& l, const ParamFn& on_param,
                  const StateFn& on_state) {
    if (on_param) {
        on_param(prefix + ".weight", l.conv.weight);
        if (l.conv.bias) on_param(prefix + ".bias", l.conv.bias);
        on_param(prefix + ".bn.gamma", l.bn.gamma);
        on_param(prefix + ".bn.beta", l.bn.beta);
    }
    if (on_state) {
        on_state(prefix + ".bn.running_mean", l.bn.running_mean);
        on_state(prefix + ".bn.running_var", l.bn.running_var);
    }
}

void walk_network(Network& net, const ParamFn& on_param, const StateFn& on_state) {
    walk_conv_bn("stem", net.stem, on_param, on_state);
    for (int s = 0; s < 4; ++s) {
        for (std::size_t b = 0; b < net.stages[static_cast<std::size_t>(s)].size(); ++b) {
            BottleneckBlock& blk = net.stages[static_cast<std::size_t>(s)][b];
            const std::string base =
                "stage" + std::to_string(s + 1) + ".block" + std::to_string(b);
            walk_conv_bn(base + ".reduce", blk.reduce, on_param, on_state);
            if (blk.use_tsp) {
                for (int m = 0; m < blk.tsp_cfg.pathways; ++m) {
                    const std::string pm = base + ".tsp.path" + std::to_string(m);
                    auto& conv = blk.tsp.pathway_convs[static_cast<std::size_t>(m)];
                    auto& bn = blk.tsp.pathway_bns[static_cast<std::size_t>(m)];
                    if (on_param) {
                        on_param(pm + ".weight", conv.weight);
                        on_param(pm + ".bn.gamma", bn.gamma);
                        on_param(pm + ".bn.beta", bn.beta);
                    }
                    if (on_state) {
                        on_state(pm + ".bn.running_mean", bn.running_mean);
                        on_state(pm + ".bn.running_var", bn.running_var);
                    }
                }
                const std::string fuse = base + ".tsp.fuse";
                if (on_param) {
                    on_param(fuse + ".compress.weight", blk.tsp.fuse_compress_weight);
                    on_param(fuse + ".bn.gamma", blk.tsp.fuse_bn.gamma);
                    on_param(fuse + ".bn.beta", blk.tsp.fuse_bn.beta);
                    on_param(fuse + ".expand.weight", blk.tsp.fuse_expand_weight);
                }
                if (on_state) {
                    on_state(fuse + ".bn.running_mean", blk.tsp.fuse_bn.running_mean);
                    on_state(fuse + ".bn.running_var", blk.tsp.fuse_bn.running_var);
                }
            } else {
                walk_conv_bn(base + ".mid", blk.mid, on_param, on_state);
            }
            walk_conv_bn(base + ".expand", blk.expand, on_param, on_state);
            if (blk.has_projection) walk_conv_bn(base + ".proj", blk.projection, on_param, on_state);
        }
    }
    if (on_param) {
        on_param("classifier.weight", net.classifier_weight);
        on_param("classifier.bias", net.classifier_bias);
    }
}

std::string rf_option_name(RfOption o) { return o == RfOption::O1 ? "o1" : "o2"; }
std::string fuse_type_name(FuseType f) { return f == FuseType::TC ? "tc" : "c"; }

RfOption rf_option_from(const std::string& s) {
    if (s == "o1") return RfOption::O1;
    if (s == "o2") return RfOption::O2;
    throw std::invalid_argument("unknown rf option: " + s);
}

FuseType fuse_type_from(const std::string& s) {
    if (s == "tc") return FuseType::TC;
    if (s == "c") return FuseType::C;
    throw std::invalid_argument("unknown fuse type: " + s);
}

}  // namespace

NetworkConfig NetworkConfig::standard(int depth, int cardinality, int pathways, RfOption rf,
                                      FuseType fuse, int num_classes, int input_channels) {
    if (cardinality != 16 && cardinality != 32)
        throw std::invalid_argument("standard preset: cardinality must be 16 or 32");
    NetworkConfig cfg;
    cfg.depth = depth;
    cfg.cardinality = cardinality;
    cfg.pathways = pathways;
    cfg.rf_option = rf;
    cfg.fuse_type = fuse;
    cfg.num_classes = num_classes;
    cfg.input_channels = input_channels;
    const int factor = cardinality / 16;
    cfg.stage_inner_width = {64 * factor, 128 * factor, 256 * factor, 512 * factor};
    validate_network_config(cfg);
    return cfg;
}

NetworkConfig NetworkConfig::tiny(int pathways, RfOption rf, FuseType fuse, int num_classes,
                                  int input_channels) {
    NetworkConfig cfg;
    cfg.depth = 26;
    cfg.cardinality = 4;
    cfg.pathways = pathways;
    cfg.rf_option = rf;
    cfg.fuse_type = fuse;
    cfg.num_classes = num_classes;
    cfg.input_channels = input_channels;
    cfg.stem_width = 8;
    cfg.stage_inner_width = {8, 16, 32, 64};
    cfg.reduction_ratio = 4;
    cfg.min_hidden = 8;
    validate_network_config(cfg);
    return cfg;
}

std::array<int, 4> NetworkConfig::stage_blocks() const { return blocks_for_depth(depth); }

Network build_network(const NetworkConfig& cfg, std::uint64_t seed) {
    validate_network_config(cfg);
    Network net;
    net.cfg = cfg;
    net.seed = seed;
    std::mt19937_64 rng(seed);

    net.stem.conv = make_conv(cfg.stem_width, cfg.input_channels, 1, {3, 3, 3}, {1, 2, 2},
                              {1, 1, 1}, rng);
    net.stem.bn = make_batch_norm(cfg.stem_width);

    const std::array<int, 4> counts = cfg.stage_blocks();
    int in_ch = cfg.stem_width;
    for (int s = 0; s < 4; ++s) {
        const int inner = cfg.stage_inner_width[static_cast<std::size_t>(s)];
        const int out_ch = inner * cfg.expansion;
        for (int b = 0; b < counts[static_cast<std::size_t>(s)]; ++b) {
            // Downsampling happens once, entering stages 2-4.
            const std::array<int, 3> stride =
                (s > 0 && b == 0) ? std::array<int, 3>{2, 2, 2} : std::array<int, 3>{1, 1, 1};
            BottleneckBlock blk;
            blk.reduce = make_pointwise(inner, in_ch, {1, 1, 1}, rng);
            blk.use_tsp = s < 3;   // the last stage keeps a plain grouped conv
            if (blk.use_tsp) {
                TspConfig tc;
                tc.pathways = cfg.pathways;
                tc.rf_option = cfg.rf_option;
                tc.fuse_type = cfg.fuse_type;
                tc.dilations = build_dilation_set(cfg.pathways, cfg.rf_option);
                tc.in_channels = inner;
                tc.out_channels = inner;
                tc.groups = cfg.cardinality;
                tc.reduction_ratio = cfg.reduction_ratio;
                tc.min_hidden = cfg.min_hidden;
                tc.stride = stride;
                blk.tsp_cfg = tc;
                blk.tsp = init_tsp_params(tc, rng);
            } else {
                blk.mid.conv =
                    make_conv(inner, inner, cfg.cardinality, {3, 3, 3}, stride, {1, 1, 1}, rng);
                blk.mid.bn = make_batch_norm(inner);
            }
            blk.expand = make_pointwise(out_ch, inner, {1, 1, 1}, rng);
            blk.has_projection = in_ch != out_ch || stride != std::array<int, 3>{1, 1, 1};
            if (blk.has_projection) blk.projection = make_pointwise(out_ch, in_ch, stride, rng);
            net.stages[static_cast<std::size_t>(s)].push_back(std::move(blk));
            in_ch = out_ch;
        }
    }

    // Small-variance head keeps the initial loss near ln(num_classes).
    std::normal_distribution<double> head(0.0, 0.01);
    std::vector<double> w(static_cast<std::size_t>(cfg.num_classes) *
                          static_cast<std::size_t>(in_ch));
    for (auto& v : w) v = head(rng);
    net.classifier_weight = make_tensor({cfg.num_classes, in_ch}, std::move(w), true);
    net.classifier_bias = zeros({cfg.num_classes}, true);
    return net;
}

void set_network_mode(Network& net, BnMode mode) {
    net.stem.bn.mode = mode;
    for (auto& stage : net.stages) {
        for (auto& blk : stage) {
            blk.reduce.bn.mode = mode;
            if (blk.use_tsp) set_tsp_mode(blk.tsp, mode);
            else blk.mid.bn.mode = mode;
            blk.expand.bn.mode = mode;
            if (blk.has_projection) blk.projection.bn.mode = mode;
        }
    }
}

TensorPtr forward_classify(Network& net, const TensorPtr& clips,
                           std::vector<BlockAttention>* attn_out) {
    if (clips->rank() != 5)
        throw std::invalid_argument("forward_classify: input must be N x C x T x H x W");
    if (clips->extent(1) != net.cfg.input_channels)
        throw std::invalid_argument("forward_classify: clip channel count does not match config");

    TensorPtr h = relu(batch_norm(conv3d(clips, net.stem.conv), net.stem.bn));
    for (int s = 0; s < 4; ++s) {
        for (std::size_t b = 0; b < net.stages[static_cast<std::size_t>(s)].size(); ++b) {
            BottleneckBlock& blk = net.stages[static_cast<std::size_t>(s)][b];
            TensorPtr inner = relu(batch_norm(conv3d(h, blk.reduce.conv), blk.reduce.bn));
            if (blk.use_tsp) {
                auto [v, attn] = tsp_forward(inner, blk.tsp_cfg, blk.tsp);
                inner = v;
                if (attn_out) {
                    attn_out->push_back({"stage" + std::to_string(s + 1) + ".block" +
                                             std::to_string(b),
                                         std::move(attn)});
                }
            } else {
                inner = relu(batch_norm(conv3d(inner, blk.mid.conv), blk.mid.bn));
            }
            TensorPtr main = batch_norm(conv3d(inner, blk.expand.conv), blk.expand.bn);
            TensorPtr shortcut =
                blk.has_projection
                    ? batch_norm(conv3d(h, blk.projection.conv), blk.projection.bn)
                    : h;
            h = relu(add(main, shortcut));
        }
    }
    return pointwise_conv(gap_spatiotemporal(h), net.classifier_weight, net.classifier_bias);
}

std::vector<std::pair<std::string, TensorPtr>> named_params(Network& net) {
    std::vector<std::pair<std::string, TensorPtr>> out;
    walk_network(net, [&](const std::string& n, const TensorPtr& t) { out.emplace_back(n, t); },
                 nullptr);
    return out;
}

std::vector<std::pair<std::string, std::vector<double>*>> named_state(Network& net) {
    std::vector<std::pair<std::string, std::vector<double>*>> out;
    walk_network(net, nullptr,
                 [&](const std::string& n, std::vector<double>& v) { out.emplace_back(n, &v); });
    return out;
}

std::size_t count_params(Network& net, std::vector<ParamRow>* per_layer) {
    if (per_layer) per_layer->clear();
    std::size_t total = 0;
    walk_network(net,
                 [&](const std::string& n, const TensorPtr& t) {
                     total += t->size();
                     if (per_layer) per_layer->push_back({n, t->shape, t->size()});
                 },
                 nullptr);
    return total;
}

double reference_param_count_millions(int depth, int cardinality) {
    if (cardinality == 16) {
        if (depth == 26) return 10.2;
        if (depth == 50) return 17.4;
        if (depth == 101) return 34.6;
    } else if (cardinality == 32) {
        if (depth == 26) return 17.3;
        if (depth == 50) return 31.7;
        if (depth == 101) return 66.1;
    }
    return 0.0;
}

void save_checkpoint(Network& net, const std::string& dir) {
    namespace fs = std::filesystem;
    fs::create_directories(dir);

    json manifest;
    manifest["format"] = "btsnet-checkpoint";
    manifest["version"] = 1;
    json cfg;
    cfg["depth"] = net.cfg.depth;
    cfg["cardinality"] = net.cfg.cardinality;
    cfg["pathways"] = net.cfg.pathways;
    cfg["rf_option"] = rf_option_name(net.cfg.rf_option);
    cfg["fuse_type"] = fuse_type_name(net.cfg.fuse_type);
    cfg["num_classes"] = net.cfg.num_classes;
    cfg["input_channels"] = net.cfg.input_channels;
    cfg["stem_width"] = net.cfg.stem_width;
    cfg["stage_inner_width"] = net.cfg.stage_inner_width;
    cfg["expansion"] = net.cfg.expansion;
    cfg["reduction_ratio"] = net.cfg.reduction_ratio;
    cfg["min_hidden"] = net.cfg.min_hidden;
    cfg["seed"] = net.seed;
    manifest["config"] = std::move(cfg);

    json tensors = json::array();
    auto record = [&](const std::string& name, const std::vector<int>& shape,
                      const std::string& kind) {
        json e;
        e["name"] = name;
        e["shape"] = shape;
        e["file"] = name + ".btsc";
        e["kind"] = kind;
        tensors.push_back(std::move(e));
    };
    walk_network(
        net,
        [&](const std::string& n, const TensorPtr& t) {
            write_tensor((fs::path(dir) / (n + ".btsc")).string(), *t);
            record(n, t->shape, "param");
        },
        [&](const std::string& n, std::vector<double>& v) {
            Tensor tmp;
            tmp.shape = {static_cast<int>(v.size())};
            tmp.data = v;
            write_tensor((fs::path(dir) / (n + ".btsc")).string(), tmp);
            record(n, tmp.shape, "state");
        });
    manifest["tensors"] = std::move(tensors);

    std::ofstream out(fs::path(dir) / "manifest.json", std::ios::binary);
    if (!out) throw std::runtime_error("save_checkpoint: cannot write manifest in " + dir);
    out << manifest.dump(2) << "\n";
    if (!out) throw std::runtime_error("save_checkpoint: manifest write failed in " + dir);
}

Network load_checkpoint(const std::string& dir) {
    namespace fs = std::filesystem;
    std::ifstream in(fs::path(dir) / "manifest.json", std::ios::binary);
    if (!in) throw std::runtime_error("load_checkpoint: cannot open manifest in " + dir);
    json manifest = json::parse(in);
    if (manifest.value("format", "") != "btsnet-checkpoint")
        throw std::runtime_error("load_checkpoint: not a checkpoint manifest: " + dir);

    const json& c = manifest.at("config");
    NetworkConfig cfg;
    cfg.depth = c.at("depth").get<int>();
    cfg.cardinality = c.at("cardinality").get<int>();
    cfg.pathways = c.at("pathways").get<int>();
    cfg.rf_option = rf_option_from(c.at("rf_option").get<std::string>());
    cfg.fuse_type = fuse_type_from(c.at("fuse_type").get<std::string>());
    cfg.num_classes = c.at("num_classes").get<int>();
    cfg.input_channels = c.at("input_channels").get<int>();
    cfg.stem_width = c.at("stem_width").get<int>();
    const auto widths = c.at("stage_inner_width").get<std::vector<int>>();
    if (widths.size() != 4)
        throw std::runtime_error("load_checkpoint: stage_inner_width must have 4 entries");
    for (int i = 0; i < 4; ++i) cfg.stage_inner_width[static_cast<std::size_t>(i)] = widths[static_cast<std::size_t>(i)];
    cfg.expansion = c.at("expansion").get<int>();
    cfg.reduction_ratio = c.at("reduction_ratio").get<int>();
    cfg.min_hidden = c.at("min_hidden").get<int>();

    Network net = build_network(cfg, c.value("seed", 0ULL));

    // Index the freshly built tensors by name, then overwrite from disk.
    std::vector<std::pair<std::string, TensorPtr>> params = named_params(net);
    std::vector<std::pair<std::string, std::vector<double>*>> state = named_state(net);

    auto find_param = [&](const std::string& n) -> TensorPtr {
        for (auto& [name, t] : params)
            if (name == n) return t;
        return nullptr;
    };
    auto find_state = [&](const std::string& n) -> std::vector<double>* {
        for (auto& [name, v] : state)
            if (name == n) return v;
        return nullptr;
    };

    std::size_t loaded = 0;
    for (const json& e : manifest.at("tensors")) {
        const std::string name = e.at("name").get<std::string>();
        const std::string file = e.at("file").get<std::string>();
        TensorPtr t = read_tensor((fs::path(dir) / file).string());
        if (const TensorPtr dst = find_param(name)) {
            if (dst->shape != t->shape)
                throw std::runtime_error("load_checkpoint: shape mismatch for " + name);
            dst->data = std::move(t->data);
            ++loaded;
        } else if (std::vector<double>* sv = find_state(name)) {
            if (sv->size() != t->size())
                throw std::runtime_error("load_checkpoint: size mismatch for " + name);
            *sv = std::move(t->data);
            ++loaded;
        } else {
            throw std::runtime_error("load_checkpoint: unknown tensor " + name);
        }
    }
    if (loaded != params.size() + state.size())
        throw std::runtime_error("load_checkpoint: manifest is missing tensors");
    return net;
}

}  // namespace btsnet
