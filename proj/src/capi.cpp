#include "btsnet.h"

#include <cstring>
#include <sstream>
#include <stdexcept>
#include <string>

#include "btsnet/harness.hpp"
#include "btsnet/network.hpp"
#include "btsnet/rf_analysis.hpp"
#include "btsnet/tensor.hpp"
#include "btsnet/tsp_block.hpp"

struct bts_tensor {
    btsnet::TensorPtr t;
};

struct bts_network {
    btsnet::Network net;
};

struct bts_clips {
    btsnet::ClipBatch batch;
};

namespace {

thread_local std::string g_last_error = "no error";

template <typename Fn>
bts_status guarded(Fn&& fn) {
    try {
        fn();
        return BTS_OK;
    } catch (const std::invalid_argument& e) {
        g_last_error = e.what();
        return BTS_ERR_INVALID_ARGUMENT;
    } catch (const std::exception& e) {
        g_last_error = e.what();
        return BTS_ERR_RUNTIME;
    } catch (...) {
        g_last_error = "unknown error";
        return BTS_ERR_RUNTIME;
    }
}

bts_status null_arg(const char* what) {
    g_last_error = std::string(what) + " must not be NULL";
    return BTS_ERR_NULL_ARGUMENT;
}

btsnet::RfOption parse_rf(const char* s) {
    const std::string v = s;
    if (v == "o1" || v == "O1") return btsnet::RfOption::O1;
    if (v == "o2" || v == "O2") return btsnet::RfOption::O2;
    throw std::invalid_argument("rf_option must be \"o1\" or \"o2\"");
}

btsnet::FuseType parse_fuse(const char* s) {
    const std::string v = s;
    if (v == "tc" || v == "TC") return btsnet::FuseType::TC;
    if (v == "c" || v == "C") return btsnet::FuseType::C;
    throw std::invalid_argument("fuse_type must be \"tc\" or \"c\"");
}

std::vector<btsnet::LayerSpec> convert_stack(const bts_layer_spec* stack, int32_t count) {
    if (count < 1) throw std::invalid_argument("layer stack must have at least one layer");
    std::vector<btsnet::LayerSpec> out(static_cast<std::size_t>(count));
    for (int32_t i = 0; i < count; ++i) {
        const bts_layer_spec& s = stack[i];
        btsnet::LayerSpec& l = out[static_cast<std::size_t>(i)];
        for (int a = 0; a < 3; ++a) {
            l.kernel[static_cast<std::size_t>(a)] = s.kernel[a];
            l.stride[static_cast<std::size_t>(a)] = s.stride[a];
            l.dilation[static_cast<std::size_t>(a)] = s.dilation[a];
            l.padding[static_cast<std::size_t>(a)] = s.padding[a];
        }
        l.input_sampling_rate = s.input_sampling_rate;
    }
    return out;
}

}  // namespace

extern "C" {

const char* bts_last_error(void) { return g_last_error.c_str(); }

void bts_string_free(char* s) { delete[] s; }

/* --------------------------------------------------------------- tensors */

bts_status bts_tensor_create(const int32_t* extents, int32_t rank, const double* data,
                             bts_tensor** out) {
    if (!extents) return null_arg("extents");
    if (!out) return null_arg("out");
    return guarded([&] {
        if (rank < 1) throw std::invalid_argument("rank must be >= 1");
        std::vector<int> shape(extents, extents + rank);
        const std::size_t n = btsnet::numel(shape);
        std::vector<double> values(n, 0.0);
        if (data) values.assign(data, data + n);
        *out = new bts_tensor{btsnet::make_tensor(std::move(shape), std::move(values))};
    });
}

bts_status bts_tensor_read(const char* path, bts_tensor** out) {
    if (!path) return null_arg("path");
    if (!out) return null_arg("out");
    return guarded([&] { *out = new bts_tensor{btsnet::read_tensor(path)}; });
}

bts_status bts_tensor_write(const bts_tensor* t, const char* path) {
    if (!t) return null_arg("tensor");
    if (!path) return null_arg("path");
    return guarded([&] { btsnet::write_tensor(path, *t->t); });
}

int32_t bts_tensor_rank(const bts_tensor* t) { return t ? t->t->rank() : 0; }

bts_status bts_tensor_extents(const bts_tensor* t, int32_t* out, int32_t capacity) {
    if (!t) return null_arg("tensor");
    if (!out) return null_arg("out");
    return guarded([&] {
        if (capacity < t->t->rank()) throw std::invalid_argument("extents capacity too small");
        for (int i = 0; i < t->t->rank(); ++i) out[i] = t->t->extent(i);
    });
}

const double* bts_tensor_data(const bts_tensor* t) { return t ? t->t->data.data() : nullptr; }

uint64_t bts_tensor_size(const bts_tensor* t) { return t ? t->t->size() : 0; }

void bts_tensor_free(bts_tensor* t) { delete t; }

/* --------------------------------------------------------- dilation sets */

bts_status bts_build_dilation_set(int32_t m, const char* rf_option, int32_t* out) {
    if (!rf_option) return null_arg("rf_option");
    if (!out) return null_arg("out");
    return guarded([&] {
        const auto set = btsnet::build_dilation_set(m, parse_rf(rf_option));
        for (std::size_t i = 0; i < set.size(); ++i) {
            out[3 * i + 0] = set[i][0];
            out[3 * i + 1] = set[i][1];
            out[3 * i + 2] = set[i][2];
        }
    });
}

/* ---------------------------------------------------------------- network */

bts_status bts_network_create(const bts_network_config* cfg, bts_network** out) {
    if (!cfg) return null_arg("config");
    if (!cfg->rf_option) return null_arg("config->rf_option");
    if (!cfg->fuse_type) return null_arg("config->fuse_type");
    if (!out) return null_arg("out");
    return guarded([&] {
        const btsnet::RfOption rf = parse_rf(cfg->rf_option);
        const btsnet::FuseType fuse = parse_fuse(cfg->fuse_type);
        btsnet::NetworkConfig nc =
            cfg->tiny ? btsnet::NetworkConfig::tiny(cfg->pathways, rf, fuse, cfg->num_classes,
                                                    cfg->input_channels)
                      : btsnet::NetworkConfig::standard(cfg->depth, cfg->cardinality,
                                                        cfg->pathways, rf, fuse,
                                                        cfg->num_classes, cfg->input_channels);
        if (cfg->tiny) nc.depth = cfg->depth;   // tiny preset still honors depth
        *out = new bts_network{btsnet::build_network(nc, cfg->seed)};
    });
}

bts_status bts_network_load(const char* dir, bts_network** out) {
    if (!dir) return null_arg("dir");
    if (!out) return null_arg("out");
    return guarded([&] { *out = new bts_network{btsnet::load_checkpoint(dir)}; });
}

bts_status bts_network_save(bts_network* net, const char* dir) {
    if (!net) return null_arg("network");
    if (!dir) return null_arg("dir");
    return guarded([&] { btsnet::save_checkpoint(net->net, dir); });
}

int32_t bts_network_num_classes(const bts_network* net) {
    return net ? net->net.cfg.num_classes : 0;
}

bts_status bts_network_param_total(bts_network* net, uint64_t* out) {
    if (!net) return null_arg("network");
    if (!out) return null_arg("out");
    return guarded([&] { *out = btsnet::count_params(net->net); });
}

bts_status bts_network_param_table(bts_network* net, char** out_csv) {
    if (!net) return null_arg("network");
    if (!out_csv) return null_arg("out_csv");
    return guarded([&] {
        std::vector<btsnet::ParamRow> rows;
        const std::size_t total = btsnet::count_params(net->net, &rows);
        std::ostringstream os;
        os << "name,shape,count\n";
        for (const auto& r : rows) {
            os << r.name << ',';
            for (std::size_t i = 0; i < r.shape.size(); ++i) {
                if (i) os << 'x';
                os << r.shape[i];
            }
            os << ',' << r.count << "\n";
        }
        os << "TOTAL,," << total << "\n";
        const std::string s = os.str();
        char* buf = new char[s.size() + 1];
        std::memcpy(buf, s.c_str(), s.size() + 1);
        *out_csv = buf;
    });
}

double bts_reference_param_count_millions(int32_t depth, int32_t cardinality) {
    return btsnet::reference_param_count_millions(depth, cardinality);
}

void bts_network_free(bts_network* net) { delete net; }

/* --------------------------------------------------------- synthetic clips */

bts_status bts_clips_generate(int32_t t, int32_t hw, int32_t n_per_class, uint64_t seed,
                              uint64_t first_index, bts_clips** out) {
    if (!out) return null_arg("out");
    return guarded([&] {
        btsnet::SyntheticTaskSpec spec;
        spec.t = t;
        spec.h = hw;
        spec.w = hw;
        spec.seed = seed;
        *out = new bts_clips{btsnet::generate_clips(spec, n_per_class, first_index)};
    });
}

bts_status bts_clips_save(const bts_clips* c, const char* clips_path, const char* labels_path) {
    if (!c) return null_arg("clips");
    if (!clips_path) return null_arg("clips_path");
    if (!labels_path) return null_arg("labels_path");
    return guarded([&] { btsnet::save_clip_batch(c->batch, clips_path, labels_path); });
}

bts_status bts_clips_load(const char* clips_path, const char* labels_path, bts_clips** out) {
    if (!clips_path) return null_arg("clips_path");
    if (!labels_path) return null_arg("labels_path");
    if (!out) return null_arg("out");
    return guarded([&] { *out = new bts_clips{btsnet::load_clip_batch(clips_path, labels_path)}; });
}

bts_status bts_clips_shape(const bts_clips* c, int32_t out_shape[5]) {
    if (!c) return null_arg("clips");
    if (!out_shape) return null_arg("out_shape");
    return guarded([&] {
        for (int i = 0; i < 5; ++i) out_shape[i] = c->batch.clips->extent(i);
    });
}

bts_status bts_clips_num_classes(const bts_clips* c, int32_t* out) {
    if (!c) return null_arg("clips");
    if (!out) return null_arg("out");
    return guarded([&] {
        int highest = -1;
        for (int l : c->batch.labels) highest = l > highest ? l : highest;
        *out = highest + 1;
    });
}

void bts_clips_free(bts_clips* c) { delete c; }

/* --------------------------------------------------- training & evaluation */

bts_status bts_train(bts_network* net, const bts_clips* train_clips, const bts_clips* val_clips,
                     const bts_train_options* opts, bts_epoch_fn on_epoch, void* user) {
    if (!net) return null_arg("network");
    if (!train_clips) return null_arg("train_clips");
    if (!val_clips) return null_arg("val_clips");
    if (!opts) return null_arg("options");
    return guarded([&] {
        btsnet::TrainOptions to;
        to.lr = opts->lr;
        to.momentum = opts->momentum;
        to.weight_decay = opts->weight_decay;
        to.epochs = opts->epochs;
        to.batch_size = opts->batch_size;
        to.seed = opts->seed;
        btsnet::EpochCallback cb;
        if (on_epoch) {
            cb = [on_epoch, user](const btsnet::EpochLog& log) {
                on_epoch(log.epoch, log.train_loss, log.val_accuracy, user);
            };
        }
        btsnet::train(net->net, train_clips->batch, val_clips->batch, to, cb);
    });
}

bts_status bts_evaluate(bts_network* net, const bts_clips* data, double* accuracy,
                        double* mean_loss, double* per_class, int32_t per_class_capacity) {
    if (!net) return null_arg("network");
    if (!data) return null_arg("data");
    return guarded([&] {
        const btsnet::EvalResult r = btsnet::evaluate(net->net, data->batch);
        if (accuracy) *accuracy = r.accuracy;
        if (mean_loss) *mean_loss = r.mean_loss;
        if (per_class) {
            const int n = std::min<int>(per_class_capacity,
                                        static_cast<int>(r.per_class_accuracy.size()));
            for (int i = 0; i < n; ++i) per_class[i] = r.per_class_accuracy[static_cast<std::size_t>(i)];
        }
    });
}

bts_status bts_export_attention(bts_network* net, const bts_clips* data, const char* out_dir) {
    if (!net) return null_arg("network");
    if (!data) return null_arg("data");
    if (!out_dir) return null_arg("out_dir");
    return guarded([&] { btsnet::export_attention(net->net, data->batch, out_dir); });
}

bts_status bts_attention_discrimination(bts_network* net, const bts_clips* data,
                                        bts_attention_stats* out) {
    if (!net) return null_arg("network");
    if (!data) return null_arg("data");
    if (!out) return null_arg("out");
    return guarded([&] {
        const btsnet::AttentionStats s = btsnet::attention_discrimination(net->net, data->batch);
        out->pathway = s.pathway;
        for (int i = 0; i < 3; ++i) out->dilation[i] = s.dilation[static_cast<std::size_t>(i)];
        out->n_fast = s.n_fast;
        out->n_slow = s.n_slow;
        out->mean_fast = s.test.mean_a;
        out->mean_slow = s.test.mean_b;
        out->t_stat = s.test.t;
        out->df = s.test.df;
        out->p_two_sided = s.test.p_two_sided;
    });
}

/* --------------------------------------------------------- receptive fields */

bts_status bts_rf_analytic(const bts_layer_spec* stack, int32_t count, int64_t out_rf[3],
                           int64_t out_jump[3]) {
    if (!stack) return null_arg("stack");
    if (!out_rf) return null_arg("out_rf");
    if (!out_jump) return null_arg("out_jump");
    return guarded([&] {
        const btsnet::RfResult r = btsnet::analytic_rf(convert_stack(stack, count));
        for (int i = 0; i < 3; ++i) {
            out_rf[i] = r.rf[static_cast<std::size_t>(i)];
            out_jump[i] = r.jump[static_cast<std::size_t>(i)];
        }
    });
}

bts_status bts_rf_empirical(const bts_layer_spec* stack, int32_t count, const int32_t probe[3],
                            int32_t out_rf[3]) {
    if (!stack) return null_arg("stack");
    if (!probe) return null_arg("probe");
    if (!out_rf) return null_arg("out_rf");
    return guarded([&] {
        const std::array<int, 3> p{probe[0], probe[1], probe[2]};
        const std::array<int, 3> r = btsnet::empirical_rf(convert_stack(stack, count), p);
        for (int i = 0; i < 3; ++i) out_rf[i] = r[static_cast<std::size_t>(i)];
    });
}

bts_status bts_rf_write_report(const bts_layer_spec* stack_a, int32_t count_a,
                               const bts_layer_spec* stack_b, int32_t count_b, const char* path) {
    if (!stack_a) return null_arg("stack_a");
    if (!path) return null_arg("path");
    return guarded([&] {
        const std::vector<btsnet::RfReportRow> rows =
            stack_b ? btsnet::compare_pathways(convert_stack(stack_a, count_a),
                                               convert_stack(stack_b, count_b))
                    : btsnet::rf_report(convert_stack(stack_a, count_a));
        btsnet::write_rf_csv(rows, path);
    });
}

}  // extern "C"
