#include "btsnet/harness.hpp"

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <numeric>
#include <random>
#include <sstream>
#include <stdexcept>

#include "json.hpp"

namespace btsnet {

namespace {

using json = nlohmann::json;

void put_u32(std::ostream& os, std::uint32_t v) {
    const unsigned char b[4] = {static_cast<unsigned char>(v & 0xFF),
                                static_cast<unsigned char>((v >> 8) & 0xFF),
                                static_cast<unsigned char>((v >> 16) & 0xFF),
                                static_cast<unsigned char>((v >> 24) & 0xFF)};
    os.write(reinterpret_cast<const char*>(b), 4);
}

std::uint32_t get_u32(std::istream& is) {
    unsigned char b[4];
    is.read(reinterpret_cast<char*>(b), 4);
    if (!is) throw std::runtime_error("labels file: unexpected end of file");
    return static_cast<std::uint32_t>(b[0]) | (static_cast<std::uint32_t>(b[1]) << 8) |
           (static_cast<std::uint32_t>(b[2]) << 16) | (static_cast<std::uint32_t>(b[3]) << 24);
}

// Contiguous sub-batch of the given clip indices, labels included.
std::pair<TensorPtr, std::vector<int>> gather_batch(const ClipBatch& data,
                                                    const std::vector<int>& order,
                                                    std::size_t start, std::size_t count) {
    const std::vector<int>& s = data.clips->shape;
    const std::size_t clip_stride = numel({s[1], s[2], s[3], s[4]});
    std::vector<double> buf(count * clip_stride);
    std::vector<int> labels(count);
    for (std::size_t i = 0; i < count; ++i) {
        const int src = order[start + i];
        std::copy_n(data.clips->data.begin() +
                        static_cast<std::ptrdiff_t>(clip_stride * static_cast<std::size_t>(src)),
                    static_cast<std::ptrdiff_t>(clip_stride),
                    buf.begin() + static_cast<std::ptrdiff_t>(clip_stride * i));
        labels[i] = data.labels[static_cast<std::size_t>(src)];
    }
    return {make_tensor({static_cast<int>(count), s[1], s[2], s[3], s[4]}, std::move(buf)),
            std::move(labels)};
}

void validate_clip_batch(const ClipBatch& data, const char* op) {
    if (!data.clips || data.clips->rank() != 5)
        throw std::invalid_argument(std::string(op) + ": clips must be N x C x T x H x W");
    if (static_cast<std::size_t>(data.clips->extent(0)) != data.labels.size())
        throw std::invalid_argument(std::string(op) + ": label count does not match clips");
    if (data.labels.empty()) throw std::invalid_argument(std::string(op) + ": empty batch");
}

// Channel-averaged weights per (sample, pathway, timestep), normalized to
// sum to 1 over pathways at each timestep. Channel-only fuse has one column.
struct SummaryGrid {
    int n = 0, m = 0, t = 1;
    std::vector<double> w;   // [n][m][t]
    double at(int ni, int mi, int ti) const {
        return w[(static_cast<std::size_t>(ni) * static_cast<std::size_t>(m) +
                  static_cast<std::size_t>(mi)) *
                     static_cast<std::size_t>(t) +
                 static_cast<std::size_t>(ti)];
    }
};

SummaryGrid summarize(const AttentionMap& map) {
    const Tensor& a = *map.weights;
    SummaryGrid g;
    g.n = a.extent(0);
    g.m = a.extent(1);
    const int c = a.extent(2);
    g.t = map.fuse_type == FuseType::TC ? a.extent(3) : 1;
    g.w.assign(static_cast<std::size_t>(g.n) * g.m * g.t, 0.0);
    for (int ni = 0; ni < g.n; ++ni) {
        for (int mi = 0; mi < g.m; ++mi) {
            for (int ci = 0; ci < c; ++ci) {
                for (int ti = 0; ti < g.t; ++ti) {
                    const std::size_t src =
                        ((static_cast<std::size_t>(ni) * g.m + mi) * c + ci) * g.t + ti;
                    g.w[(static_cast<std::size_t>(ni) * g.m + mi) * g.t + ti] +=
                        a.data[src] / static_cast<double>(c);
                }
            }
        }
    }
    for (int ni = 0; ni < g.n; ++ni) {
        for (int ti = 0; ti < g.t; ++ti) {
            double sum = 0.0;
            for (int mi = 0; mi < g.m; ++mi) sum += g.at(ni, mi, ti);
            for (int mi = 0; mi < g.m; ++mi)
                g.w[(static_cast<std::size_t>(ni) * g.m + mi) * g.t + ti] /= sum;
        }
    }
    return g;
}

// Largest temporal dilation; ties prefer the smaller spatial sum, then the
// lower index, so the most purely temporal pathway wins.
int largest_temporal_pathway(const std::vector<std::array<int, 3>>& dilations) {
    int best = 0;
    for (int m = 1; m < static_cast<int>(dilations.size()); ++m) {
        const auto& d = dilations[static_cast<std::size_t>(m)];
        const auto& b = dilations[static_cast<std::size_t>(best)];
        if (d[0] > b[0] || (d[0] == b[0] && d[1] + d[2] < b[1] + b[2])) best = m;
    }
    return best;
}

constexpr std::size_t kEvalBatch = 16;

}  // namespace

ClipBatch generate_clips(const SyntheticTaskSpec& spec, int n_per_class,
                         std::uint64_t first_index) {
    if (n_per_class < 1) throw std::invalid_argument("generate_clips: n_per_class must be >= 1");
    if (spec.t < 1 || spec.h < 1 || spec.w < 1)
        throw std::invalid_argument("generate_clips: clip extents must be positive");
    if (spec.square < 1 || spec.square > spec.h || spec.square > spec.w)
        throw std::invalid_argument("generate_clips: square does not fit in the frame");
    if (spec.noise_stddev < 0.0)
        throw std::invalid_argument("generate_clips: noise stddev must be >= 0");

    const int n = n_per_class * SyntheticTaskSpec::kNumClasses;
    const std::size_t frame = static_cast<std::size_t>(spec.h) * spec.w;
    const std::size_t clip_stride = static_cast<std::size_t>(spec.t) * frame;
    std::vector<double> data(static_cast<std::size_t>(n) * clip_stride, 0.0);
    std::vector<int> labels(static_cast<std::size_t>(n));

    for (int cls = 0; cls < SyntheticTaskSpec::kNumClasses; ++cls) {
        const bool vertical = cls >= 2;
        const int speed = (cls % 2 == 0) ? SyntheticTaskSpec::kSlowSpeed
                                         : SyntheticTaskSpec::kFastSpeed;
        for (int j = 0; j < n_per_class; ++j) {
            const int clip = cls * n_per_class + j;
            labels[static_cast<std::size_t>(clip)] = cls;

            const std::uint64_t stream = first_index + static_cast<std::uint64_t>(clip);
            std::seed_seq seq{static_cast<std::uint32_t>(spec.seed),
                              static_cast<std::uint32_t>(spec.seed >> 32),
                              static_cast<std::uint32_t>(stream),
                              static_cast<std::uint32_t>(stream >> 32)};
            std::mt19937_64 rng(seq);
            std::uniform_int_distribution<int> px(0, spec.w - 1);
            std::uniform_int_distribution<int> py(0, spec.h - 1);
            const int x0 = px(rng);
            const int y0 = py(rng);

            double* clip_data = data.data() + clip_stride * static_cast<std::size_t>(clip);
            for (int t = 0; t < spec.t; ++t) {
                const int off = t * speed;
                const int x = vertical ? x0 : (x0 + off) % spec.w;
                const int y = vertical ? (y0 + off) % spec.h : y0;
                double* frame_data = clip_data + frame * static_cast<std::size_t>(t);
                for (int dy = 0; dy < spec.square; ++dy) {
                    const int row = (y + dy) % spec.h;
                    for (int dx = 0; dx < spec.square; ++dx) {
                        frame_data[static_cast<std::size_t>(row) * spec.w + (x + dx) % spec.w] =
                            1.0;
                    }
                }
            }
            if (spec.noise_stddev > 0.0) {
                std::normal_distribution<double> noise(0.0, spec.noise_stddev);
                for (std::size_t i = 0; i < clip_stride; ++i) {
                    clip_data[i] = std::clamp(clip_data[i] + noise(rng), 0.0, 1.0);
                }
            }
        }
    }

    ClipBatch out;
    out.clips = make_tensor({n, 1, spec.t, spec.h, spec.w}, std::move(data));
    out.labels = std::move(labels);
    return out;
}

void save_clip_batch(const ClipBatch& batch, const std::string& clips_path,
                     const std::string& labels_path) {
    validate_clip_batch(batch, "save_clip_batch");
    write_tensor(clips_path, *batch.clips);
    std::ofstream out(labels_path, std::ios::binary);
    if (!out) throw std::runtime_error("save_clip_batch: cannot open " + labels_path);
    put_u32(out, static_cast<std::uint32_t>(batch.labels.size()));
    for (int l : batch.labels) {
        if (l < 0) throw std::invalid_argument("save_clip_batch: negative label");
        put_u32(out, static_cast<std::uint32_t>(l));
    }
    if (!out) throw std::runtime_error("save_clip_batch: write failed for " + labels_path);
}

ClipBatch load_clip_batch(const std::string& clips_path, const std::string& labels_path) {
    ClipBatch batch;
    batch.clips = read_tensor(clips_path);
    std::ifstream in(labels_path, std::ios::binary);
    if (!in) throw std::runtime_error("load_clip_batch: cannot open " + labels_path);
    const std::uint32_t count = get_u32(in);
    batch.labels.resize(count);
    for (std::uint32_t i = 0; i < count; ++i)
        batch.labels[i] = static_cast<int>(get_u32(in));
    validate_clip_batch(batch, "load_clip_batch");
    return batch;
}

std::vector<EpochLog> train(Network& net, const ClipBatch& train_data,
                            const ClipBatch& val_data, const TrainOptions& opts,
                            const EpochCallback& on_epoch) {
    validate_clip_batch(train_data, "train");
    validate_clip_batch(val_data, "train (validation split)");
    if (opts.lr < 0.0) throw std::invalid_argument("train: lr must be >= 0");
    if (opts.momentum < 0.0 || opts.momentum >= 1.0)
        throw std::invalid_argument("train: momentum must be in [0, 1)");
    if (opts.weight_decay < 0.0) throw std::invalid_argument("train: weight_decay must be >= 0");
    if (opts.epochs < 1) throw std::invalid_argument("train: epochs must be >= 1");
    if (opts.batch_size < 1) throw std::invalid_argument("train: batch_size must be >= 1");

    std::vector<std::pair<std::string, TensorPtr>> params = named_params(net);
    std::vector<std::vector<double>> velocity;
    velocity.reserve(params.size());
    for (auto& [name, p] : params) velocity.emplace_back(p->size(), 0.0);

    const std::size_t n = train_data.labels.size();
    std::vector<int> order(n);
    std::iota(order.begin(), order.end(), 0);
    std::mt19937_64 rng(opts.seed);

    std::vector<EpochLog> logs;
    logs.reserve(static_cast<std::size_t>(opts.epochs));
    for (int epoch = 1; epoch <= opts.epochs; ++epoch) {
        set_network_mode(net, BnMode::Train);
        std::shuffle(order.begin(), order.end(), rng);

        double epoch_loss = 0.0;
        for (std::size_t start = 0; start < n; start += static_cast<std::size_t>(opts.batch_size)) {
            const std::size_t count =
                std::min(static_cast<std::size_t>(opts.batch_size), n - start);
            auto [batch, labels] = gather_batch(train_data, order, start, count);
            TensorPtr loss = cross_entropy_with_logits(forward_classify(net, batch), labels);
            const double loss_value = loss->data[0];
            if (!std::isfinite(loss_value))
                throw std::runtime_error("train: loss diverged (non-finite)");
            epoch_loss += loss_value * static_cast<double>(count);

            backward(loss);
            for (std::size_t pi = 0; pi < params.size(); ++pi) {
                Tensor& p = *params[pi].second;
                std::vector<double>& v = velocity[pi];
                for (std::size_t i = 0; i < p.data.size(); ++i) {
                    v[i] = opts.momentum * v[i] + p.grad[i] + opts.weight_decay * p.data[i];
                    p.data[i] -= opts.lr * v[i];
                }
                p.zero_grad();
            }
        }

        EpochLog log;
        log.epoch = epoch;
        log.train_loss = epoch_loss / static_cast<double>(n);
        log.val_accuracy = evaluate(net, val_data).accuracy;
        if (on_epoch) on_epoch(log);
        logs.push_back(log);
    }
    set_network_mode(net, BnMode::Eval);
    return logs;
}

EvalResult evaluate(Network& net, const ClipBatch& data) {
    validate_clip_batch(data, "evaluate");
    set_network_mode(net, BnMode::Eval);
    NoGradGuard no_grad;

    const int num_classes = net.cfg.num_classes;
    const std::size_t n = data.labels.size();
    std::vector<int> order(n);
    std::iota(order.begin(), order.end(), 0);

    double loss_sum = 0.0;
    std::size_t correct = 0;
    std::vector<std::size_t> class_total(static_cast<std::size_t>(num_classes), 0);
    std::vector<std::size_t> class_correct(static_cast<std::size_t>(num_classes), 0);

    for (std::size_t start = 0; start < n; start += kEvalBatch) {
        const std::size_t count = std::min(kEvalBatch, n - start);
        auto [batch, labels] = gather_batch(data, order, start, count);
        TensorPtr logits = forward_classify(net, batch);
        loss_sum += cross_entropy_with_logits(logits, labels)->data[0] *
                    static_cast<double>(count);
        for (std::size_t i = 0; i < count; ++i) {
            const double* row = logits->data.data() + i * static_cast<std::size_t>(num_classes);
            int arg = 0;
            for (int k = 1; k < num_classes; ++k)
                if (row[k] > row[arg]) arg = k;   // ties keep the lowest index
            const int label = labels[i];
            ++class_total[static_cast<std::size_t>(label)];
            if (arg == label) {
                ++correct;
                ++class_correct[static_cast<std::size_t>(label)];
            }
        }
    }

    EvalResult r;
    r.accuracy = static_cast<double>(correct) / static_cast<double>(n);
    r.mean_loss = loss_sum / static_cast<double>(n);
    r.per_class_accuracy.resize(static_cast<std::size_t>(num_classes), 0.0);
    for (int k = 0; k < num_classes; ++k) {
        const std::size_t tot = class_total[static_cast<std::size_t>(k)];
        if (tot > 0)
            r.per_class_accuracy[static_cast<std::size_t>(k)] =
                static_cast<double>(class_correct[static_cast<std::size_t>(k)]) /
                static_cast<double>(tot);
    }
    return r;
}

void export_attention(Network& net, const ClipBatch& data, const std::string& out_dir) {
    validate_clip_batch(data, "export_attention");
    namespace fs = std::filesystem;
    fs::create_directories(out_dir);
    set_network_mode(net, BnMode::Eval);
    NoGradGuard no_grad;

    const std::size_t n = data.labels.size();
    std::vector<int> order(n);
    std::iota(order.begin(), order.end(), 0);

    // Per block: per-sample raw weight tensors and their summaries, gathered
    // across batches so the output is grouped by block, samples ascending.
    struct BlockRecords {
        std::string block_id;
        FuseType fuse = FuseType::TC;
        int m = 0, c = 0, t = 1;
        std::vector<std::vector<double>> raw;        // per sample, [m][c](x[t])
        std::vector<std::vector<double>> summary;    // per sample, [m][t]
    };
    std::vector<BlockRecords> blocks;

    for (std::size_t start = 0; start < n; start += kEvalBatch) {
        const std::size_t count = std::min(kEvalBatch, n - start);
        auto [batch, labels] = gather_batch(data, order, start, count);
        std::vector<BlockAttention> attn;
        forward_classify(net, batch, &attn);
        if (blocks.empty()) {
            blocks.resize(attn.size());
            for (std::size_t bi = 0; bi < attn.size(); ++bi) {
                const Tensor& w = *attn[bi].map.weights;
                blocks[bi].block_id = attn[bi].block_id;
                blocks[bi].fuse = attn[bi].map.fuse_type;
                blocks[bi].m = w.extent(1);
                blocks[bi].c = w.extent(2);
                blocks[bi].t = blocks[bi].fuse == FuseType::TC ? w.extent(3) : 1;
            }
        }
        for (std::size_t bi = 0; bi < attn.size(); ++bi) {
            BlockRecords& rec = blocks[bi];
            const Tensor& w = *attn[bi].map.weights;
            const std::size_t per_sample =
                static_cast<std::size_t>(rec.m) * rec.c * rec.t;
            const SummaryGrid grid = summarize(attn[bi].map);
            for (std::size_t i = 0; i < count; ++i) {
                rec.raw.emplace_back(w.data.begin() + static_cast<std::ptrdiff_t>(per_sample * i),
                                     w.data.begin() +
                                         static_cast<std::ptrdiff_t>(per_sample * (i + 1)));
                rec.summary.emplace_back(
                    grid.w.begin() +
                        static_cast<std::ptrdiff_t>(static_cast<std::size_t>(rec.m) * rec.t * i),
                    grid.w.begin() + static_cast<std::ptrdiff_t>(static_cast<std::size_t>(rec.m) *
                                                                 rec.t * (i + 1)));
            }
        }
    }

    json records = json::array();
    for (const auto& rec : blocks) {
        for (std::size_t s = 0; s < n; ++s) {
            json e;
            e["block_id"] = rec.block_id;
            e["sample"] = s;
            e["label"] = data.labels[s];
            e["fuse_type"] = rec.fuse == FuseType::TC ? "tc" : "c";
            e["M"] = rec.m;
            e["shape"] = rec.fuse == FuseType::TC ? std::vector<int>{rec.m, rec.c, rec.t}
                                                  : std::vector<int>{rec.m, rec.c};
            json wm = json::array();
            const std::vector<double>& raw = rec.raw[s];
            for (int m = 0; m < rec.m; ++m) {
                json wc = json::array();
                for (int c = 0; c < rec.c; ++c) {
                    if (rec.fuse == FuseType::TC) {
                        json wt = json::array();
                        for (int t = 0; t < rec.t; ++t)
                            wt.push_back(raw[(static_cast<std::size_t>(m) * rec.c + c) * rec.t + t]);
                        wc.push_back(std::move(wt));
                    } else {
                        wc.push_back(raw[static_cast<std::size_t>(m) * rec.c + c]);
                    }
                }
                wm.push_back(std::move(wc));
            }
            e["weights"] = std::move(wm);
            records.push_back(std::move(e));
        }
    }
    {
        std::ofstream out(fs::path(out_dir) / "attention.json", std::ios::binary);
        if (!out) throw std::runtime_error("export_attention: cannot write attention.json");
        out << records.dump(2) << "\n";
        if (!out) throw std::runtime_error("export_attention: attention.json write failed");
    }

    {
        std::ofstream out(fs::path(out_dir) / "attention.csv", std::ios::binary);
        if (!out) throw std::runtime_error("export_attention: cannot write attention.csv");
        out << std::setprecision(17);
        out << "block_id,sample,m,c,t,weight\n";
        for (const auto& rec : blocks) {
            for (std::size_t s = 0; s < n; ++s) {
                const std::vector<double>& raw = rec.raw[s];
                for (int m = 0; m < rec.m; ++m) {
                    for (int c = 0; c < rec.c; ++c) {
                        for (int t = 0; t < rec.t; ++t) {
                            out << rec.block_id << ',' << s << ',' << m << ',' << c << ',';
                            if (rec.fuse == FuseType::TC) out << t;
                            out << ','
                                << raw[(static_cast<std::size_t>(m) * rec.c + c) * rec.t + t]
                                << "\n";
                        }
                    }
                }
            }
        }
        if (!out) throw std::runtime_error("export_attention: attention.csv write failed");
    }

    {
        std::ofstream out(fs::path(out_dir) / "attention_summary.csv", std::ios::binary);
        if (!out) throw std::runtime_error("export_attention: cannot write attention_summary.csv");
        out << std::setprecision(17);
        out << "block_id,sample,label,t,m,weight\n";
        for (const auto& rec : blocks) {
            for (std::size_t s = 0; s < n; ++s) {
                const std::vector<double>& sm = rec.summary[s];
                for (int t = 0; t < rec.t; ++t) {
                    for (int m = 0; m < rec.m; ++m) {
                        out << rec.block_id << ',' << s << ',' << data.labels[s] << ',' << t
                            << ',' << m << ',' << sm[static_cast<std::size_t>(m) * rec.t + t]
                            << "\n";
                    }
                }
            }
        }
        if (!out) throw std::runtime_error("export_attention: attention_summary.csv write failed");
    }
}

AttentionStats attention_discrimination(Network& net, const ClipBatch& data) {
    validate_clip_batch(data, "attention_discrimination");
    const std::vector<std::array<int, 3>> dilations =
        build_dilation_set(net.cfg.pathways, net.cfg.rf_option);
    AttentionStats stats;
    stats.pathway = largest_temporal_pathway(dilations);
    stats.dilation = dilations[static_cast<std::size_t>(stats.pathway)];

    set_network_mode(net, BnMode::Eval);
    NoGradGuard no_grad;

    const std::size_t n = data.labels.size();
    std::vector<int> order(n);
    std::iota(order.begin(), order.end(), 0);

    std::vector<double> per_clip(n, 0.0);
    std::vector<std::size_t> per_clip_terms(n, 0);
    for (std::size_t start = 0; start < n; start += kEvalBatch) {
        const std::size_t count = std::min(kEvalBatch, n - start);
        auto [batch, labels] = gather_batch(data, order, start, count);
        std::vector<BlockAttention> attn;
        forward_classify(net, batch, &attn);
        for (const BlockAttention& block : attn) {
            const SummaryGrid grid = summarize(block.map);
            for (std::size_t i = 0; i < count; ++i) {
                for (int t = 0; t < grid.t; ++t) {
                    per_clip[start + i] += grid.at(static_cast<int>(i), stats.pathway, t);
                    ++per_clip_terms[start + i];
                }
            }
        }
    }
    if (per_clip_terms[0] == 0)
        throw std::runtime_error("attention_discrimination: network has no pathway blocks");

    std::vector<double> fast, slow;
    for (std::size_t i = 0; i < n; ++i) {
        const double mean = per_clip[i] / static_cast<double>(per_clip_terms[i]);
        // Odd labels are the fast classes in the synthetic task.
        (data.labels[i] % 2 == 1 ? fast : slow).push_back(mean);
    }
    stats.n_fast = static_cast<int>(fast.size());
    stats.n_slow = static_cast<int>(slow.size());
    stats.test = welch_t_test(fast, slow);
    return stats;
}

}  // namespace btsnet
