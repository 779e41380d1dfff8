#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "btsnet/network.hpp"
#include "btsnet/stats.hpp"
#include "btsnet/tensor.hpp"

namespace btsnet {

// Four classes = speed x direction of a bright square drifting over a dark
// background: 0 horizontal-slow, 1 horizontal-fast, 2 vertical-slow,
// 3 vertical-fast (odd labels are the fast classes). Positions wrap, so the
// square never leaves the frame and only its motion separates the classes.
struct SyntheticTaskSpec {
    int t = 16;
    int h = 32;
    int w = 32;
    int square = 5;
    double noise_stddev = 0.05;
    std::uint64_t seed = 0;

    static constexpr int kNumClasses = 4;
    static constexpr int kSlowSpeed = 1;   // pixels per frame
    static constexpr int kFastSpeed = 3;
};

struct ClipBatch {
    TensorPtr clips;            // N x 1 x T x H x W, values in [0, 1]
    std::vector<int> labels;    // N entries in [0, kNumClasses)
};

// Deterministic: clip i draws from its own stream keyed by (seed, first_index
// + i), so splits generated with disjoint index ranges never share clips.
// Layout is class-major: all of class 0, then class 1, ...
ClipBatch generate_clips(const SyntheticTaskSpec& spec, int n_per_class,
                         std::uint64_t first_index = 0);

// Clips go to the binary tensor format; labels to a u32 little-endian file
// (count, then count labels).
void save_clip_batch(const ClipBatch& batch, const std::string& clips_path,
                     const std::string& labels_path);
ClipBatch load_clip_batch(const std::string& clips_path, const std::string& labels_path);

struct TrainOptions {
    double lr = 0.05;
    double momentum = 0.9;
    double weight_decay = 1e-4;
    int epochs = 20;
    int batch_size = 10;
    std::uint64_t seed = 0;
};

struct EpochLog {
    int epoch = 0;              // 1-based
    double train_loss = 0.0;    // mean over the epoch's samples
    double val_accuracy = 0.0;
};

using EpochCallback = std::function<void(const EpochLog&)>;

// SGD with momentum and weight decay (v <- momentum*v + g + wd*w; w -= lr*v),
// constant learning rate, per-epoch shuffling from a seeded stream. Aborts
// with an error if the loss stops being finite. Leaves the network in eval
// mode. Single-threaded execution is deterministic given the seed.
std::vector<EpochLog> train(Network& net, const ClipBatch& train_data,
                            const ClipBatch& val_data, const TrainOptions& opts,
                            const EpochCallback& on_epoch = nullptr);

struct EvalResult {
    double accuracy = 0.0;
    double mean_loss = 0.0;
    std::vector<double> per_class_accuracy;   // num_classes entries
};

// Top-1 accuracy with argmax ties broken toward the lowest class index.
EvalResult evaluate(Network& net, const ClipBatch& data);

// Writes attention.json (one record per pathway block per sample),
// attention.csv (block_id,sample,m,c,t,weight; t empty for channel-only
// fuse) and attention_summary.csv (block_id,sample,label,t,m,weight), the
// channel-averaged weight per pathway normalized to sum to 1 at each t.
void export_attention(Network& net, const ClipBatch& data, const std::string& out_dir);

struct AttentionStats {
    int pathway = 0;            // largest-temporal-dilation pathway m*
    std::array<int, 3> dilation{1, 1, 1};
    int n_fast = 0;
    int n_slow = 0;
    WelchResult test;           // sample a = fast clips, sample b = slow clips
};

// Per clip, the summary weight of the largest-temporal-dilation pathway
// (ties: smaller spatial dilation sum, then lower index), pooled over every
// pathway block and timestep; fast vs slow populations are compared with a
// two-sample t-test. Labels follow the synthetic task's convention.
AttentionStats attention_discrimination(Network& net, const ClipBatch& data);

}  // namespace btsnet
