// Command-line front end. Everything flows through the C API in btsnet.h;
// this file only parses arguments, moves files around and formats output.

#include <cinttypes>
#include <cstdint>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "btsnet.h"
#include "json.hpp"

namespace {

namespace fs = std::filesystem;
using nlohmann::json;

void check(bts_status st, const char* what) {
    if (st != BTS_OK) {
        std::fprintf(stderr, "error: %s: %s\n", what, bts_last_error());
        std::exit(1);
    }
}

struct ClipsHandle {
    bts_clips* p = nullptr;
    ~ClipsHandle() { bts_clips_free(p); }
};

struct NetworkHandle {
    bts_network* p = nullptr;
    ~NetworkHandle() { bts_network_free(p); }
};

void load_split(const std::string& data_dir, const std::string& split, ClipsHandle& out) {
    const std::string clips = (fs::path(data_dir) / (split + ".btsc")).string();
    const std::string labels = (fs::path(data_dir) / (split + ".labels")).string();
    check(bts_clips_load(clips.c_str(), labels.c_str(), &out.p), "loading clips");
}

std::vector<bts_layer_spec> parse_stack_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) {
        std::fprintf(stderr, "error: cannot open stack file %s\n", path.c_str());
        std::exit(1);
    }
    json doc;
    try {
        doc = json::parse(in);
    } catch (const std::exception& e) {
        std::fprintf(stderr, "error: %s is not valid JSON: %s\n", path.c_str(), e.what());
        std::exit(1);
    }
    if (!doc.is_array() || doc.empty()) {
        std::fprintf(stderr, "error: %s must be a non-empty JSON array of layers\n", path.c_str());
        std::exit(1);
    }
    std::vector<bts_layer_spec> stack;
    for (const json& layer : doc) {
        bts_layer_spec s{};
        auto triple = [&](const char* key, int32_t* dst, int fallback, bool required) {
            if (!layer.contains(key)) {
                if (required) {
                    std::fprintf(stderr, "error: layer in %s is missing \"%s\"\n", path.c_str(),
                                 key);
                    std::exit(1);
                }
                dst[0] = dst[1] = dst[2] = fallback;
                return;
            }
            const json& v = layer.at(key);
            if (!v.is_array() || v.size() != 3) {
                std::fprintf(stderr, "error: \"%s\" in %s must be a 3-element array (T,H,W)\n",
                             key, path.c_str());
                std::exit(1);
            }
            for (int i = 0; i < 3; ++i) dst[i] = v[static_cast<std::size_t>(i)].get<int32_t>();
        };
        triple("kernel", s.kernel, 1, true);
        triple("stride", s.stride, 1, false);
        triple("dilation", s.dilation, 1, false);
        triple("padding", s.padding, 0, false);
        s.input_sampling_rate = layer.value("input_sampling_rate", 1);
        stack.push_back(s);
    }
    return stack;
}

void print_rf_summary(const char* name, const std::vector<bts_layer_spec>& stack) {
    int64_t rf[3], jump[3];
    check(bts_rf_analytic(stack.data(), static_cast<int32_t>(stack.size()), rf, jump),
          "receptive-field analysis");
    std::printf("%s: %zu layers, rf (t,h,w) = (%" PRId64 ", %" PRId64 ", %" PRId64
                "), jump = (%" PRId64 ", %" PRId64 ", %" PRId64 ") in original frames\n",
                name, stack.size(), rf[0], rf[1], rf[2], jump[0], jump[1], jump[2]);
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Pathway-attention video classifier: synthetic data, training, "
                 "evaluation, attention export and receptive-field reports"};
    app.require_subcommand(1);

    // ---- gen ----
    std::string gen_out;
    int gen_t = 16, gen_hw = 32, gen_n = 50;
    std::uint64_t gen_seed = 1;
    CLI::App* gen = app.add_subcommand("gen", "Generate the synthetic moving-square dataset");
    gen->add_option("--out", gen_out, "Output directory")->required();
    gen->add_option("--t", gen_t, "Frames per clip")->capture_default_str();
    gen->add_option("--hw", gen_hw, "Frame height and width")->capture_default_str();
    gen->add_option("--n-per-class", gen_n, "Training clips per class (validation gets half)")
        ->capture_default_str();
    gen->add_option("--seed", gen_seed, "Random seed")->capture_default_str();

    // ---- train ----
    std::string tr_data, tr_ckpt, tr_rf = "o2", tr_fuse = "tc";
    int tr_depth = 26, tr_card = 16, tr_m = 4, tr_epochs = 20, tr_batch = 10;
    double tr_lr = 0.05;
    std::uint64_t tr_seed = 1;
    bool tr_tiny = false;
    CLI::App* tr = app.add_subcommand("train", "Train a classifier on a generated dataset");
    tr->add_option("--data", tr_data, "Dataset directory from `gen`")->required();
    tr->add_option("--depth", tr_depth, "Network depth")
        ->check(CLI::IsMember({26, 50, 101}))
        ->capture_default_str();
    tr->add_option("--cardinality", tr_card, "Conv group count (standard preset)")
        ->check(CLI::IsMember({16, 32}))
        ->capture_default_str();
    tr->add_option("--m", tr_m, "Pathway count M")->capture_default_str();
    tr->add_option("--rf", tr_rf, "Dilation family: o1 (cubes) or o2 (mixed table)")
        ->check(CLI::IsMember({"o1", "o2"}))
        ->capture_default_str();
    tr->add_option("--fuse", tr_fuse, "Attention granularity: tc (per timestep) or c")
        ->check(CLI::IsMember({"tc", "c"}))
        ->capture_default_str();
    tr->add_option("--epochs", tr_epochs, "Training epochs")->capture_default_str();
    tr->add_option("--lr", tr_lr, "Learning rate")->capture_default_str();
    tr->add_option("--batch", tr_batch, "Batch size")->capture_default_str();
    tr->add_option("--seed", tr_seed, "Init/shuffle seed")->capture_default_str();
    tr->add_option("--ckpt", tr_ckpt, "Checkpoint output directory")->required();
    tr->add_flag("--tiny", tr_tiny, "Use the desk-scale width preset");

    // ---- eval ----
    std::string ev_data, ev_ckpt, ev_split = "val";
    CLI::App* ev = app.add_subcommand("eval", "Evaluate a checkpoint on a dataset split");
    ev->add_option("--data", ev_data, "Dataset directory")->required();
    ev->add_option("--ckpt", ev_ckpt, "Checkpoint directory")->required();
    ev->add_option("--split", ev_split, "Dataset split")
        ->check(CLI::IsMember({"train", "val"}))
        ->capture_default_str();

    // ---- export-attn ----
    std::string ex_data, ex_ckpt, ex_out, ex_split = "val";
    CLI::App* ex = app.add_subcommand("export-attn",
                                      "Export per-block attention weights and summaries");
    ex->add_option("--data", ex_data, "Dataset directory")->required();
    ex->add_option("--ckpt", ex_ckpt, "Checkpoint directory")->required();
    ex->add_option("--out", ex_out, "Output directory")->required();
    ex->add_option("--split", ex_split, "Dataset split")
        ->check(CLI::IsMember({"train", "val"}))
        ->capture_default_str();

    // ---- rf ----
    std::string rf_stack, rf_compare, rf_out;
    CLI::App* rf = app.add_subcommand("rf", "Receptive-field report for a conv stack");
    rf->add_option("--stack", rf_stack, "JSON layer-stack file")->required();
    rf->add_option("--compare", rf_compare, "Second stack to report side by side");
    rf->add_option("--out", rf_out, "Output CSV path")->required();

    // ---- count-params ----
    std::string cp_rf = "o2", cp_fuse = "tc";
    int cp_depth = 26, cp_card = 16, cp_m = 4, cp_classes = 101, cp_channels = 3;
    bool cp_tiny = false, cp_table = false;
    CLI::App* cp = app.add_subcommand("count-params", "Count trainable parameters");
    cp->add_option("--depth", cp_depth, "Network depth")
        ->check(CLI::IsMember({26, 50, 101}))
        ->capture_default_str();
    cp->add_option("--cardinality", cp_card, "Conv group count")
        ->check(CLI::IsMember({16, 32}))
        ->capture_default_str();
    cp->add_option("--m", cp_m, "Pathway count M")->capture_default_str();
    cp->add_option("--rf", cp_rf, "Dilation family")
        ->check(CLI::IsMember({"o1", "o2"}))
        ->capture_default_str();
    cp->add_option("--fuse", cp_fuse, "Attention granularity")
        ->check(CLI::IsMember({"tc", "c"}))
        ->capture_default_str();
    cp->add_option("--num-classes", cp_classes, "Classifier width for the count")
        ->capture_default_str();
    cp->add_option("--input-channels", cp_channels, "Input channel count")
        ->capture_default_str();
    cp->add_flag("--tiny", cp_tiny, "Use the desk-scale width preset");
    cp->add_flag("--table", cp_table, "Print the full per-layer table");

    CLI11_PARSE(app, argc, argv);

    if (*gen) {
        fs::create_directories(gen_out);
        ClipsHandle train_clips, val_clips;
        const int n_val = (gen_n + 1) / 2;
        check(bts_clips_generate(gen_t, gen_hw, gen_n, gen_seed, 0, &train_clips.p),
              "generating training clips");
        // Validation clips continue the index sequence so the splits are disjoint.
        check(bts_clips_generate(gen_t, gen_hw, n_val, gen_seed,
                                 static_cast<std::uint64_t>(gen_n) * 4, &val_clips.p),
              "generating validation clips");
        check(bts_clips_save(train_clips.p, (fs::path(gen_out) / "train.btsc").string().c_str(),
                             (fs::path(gen_out) / "train.labels").string().c_str()),
              "saving training clips");
        check(bts_clips_save(val_clips.p, (fs::path(gen_out) / "val.btsc").string().c_str(),
                             (fs::path(gen_out) / "val.labels").string().c_str()),
              "saving validation clips");
        std::printf("wrote %d train / %d val clips (%d frames of %dx%d) to %s\n", gen_n * 4,
                    n_val * 4, gen_t, gen_hw, gen_hw, gen_out.c_str());
        return 0;
    }

    if (*tr) {
        ClipsHandle train_clips, val_clips;
        load_split(tr_data, "train", train_clips);
        load_split(tr_data, "val", val_clips);
        int32_t shape[5];
        check(bts_clips_shape(train_clips.p, shape), "reading clip shape");
        int32_t classes_train = 0, classes_val = 0;
        check(bts_clips_num_classes(train_clips.p, &classes_train), "counting classes");
        check(bts_clips_num_classes(val_clips.p, &classes_val), "counting classes");

        bts_network_config cfg{};
        cfg.depth = tr_depth;
        cfg.cardinality = tr_card;
        cfg.pathways = tr_m;
        cfg.rf_option = tr_rf.c_str();
        cfg.fuse_type = tr_fuse.c_str();
        cfg.num_classes = classes_train > classes_val ? classes_train : classes_val;
        cfg.input_channels = shape[1];
        cfg.tiny = tr_tiny ? 1 : 0;
        cfg.seed = tr_seed;
        NetworkHandle net;
        check(bts_network_create(&cfg, &net.p), "building network");

        uint64_t total = 0;
        check(bts_network_param_total(net.p, &total), "counting parameters");
        std::printf("depth %d, M %d, rf %s, fuse %s%s: %" PRIu64 " trainable parameters\n",
                    tr_depth, tr_m, tr_rf.c_str(), tr_fuse.c_str(), tr_tiny ? " (tiny)" : "",
                    total);

        bts_train_options opts{};
        opts.lr = tr_lr;
        opts.momentum = 0.9;
        opts.weight_decay = 1e-4;
        opts.epochs = tr_epochs;
        opts.batch_size = tr_batch;
        opts.seed = tr_seed;
        auto on_epoch = [](int32_t epoch, double loss, double acc, void*) {
            std::printf("epoch %3d  train_loss %.6f  val_acc %.4f\n", epoch, loss, acc);
            std::fflush(stdout);
        };
        check(bts_train(net.p, train_clips.p, val_clips.p, &opts, on_epoch, nullptr),
              "training");
        check(bts_network_save(net.p, tr_ckpt.c_str()), "saving checkpoint");
        std::printf("checkpoint written to %s\n", tr_ckpt.c_str());
        return 0;
    }

    if (*ev) {
        NetworkHandle net;
        check(bts_network_load(ev_ckpt.c_str(), &net.p), "loading checkpoint");
        ClipsHandle clips;
        load_split(ev_data, ev_split, clips);
        const int32_t classes = bts_network_num_classes(net.p);
        std::vector<double> per_class(static_cast<std::size_t>(classes), 0.0);
        double accuracy = 0.0, mean_loss = 0.0;
        check(bts_evaluate(net.p, clips.p, &accuracy, &mean_loss, per_class.data(), classes),
              "evaluating");
        std::printf("%s split: accuracy %.4f, mean loss %.6f\n", ev_split.c_str(), accuracy,
                    mean_loss);
        for (int32_t k = 0; k < classes; ++k)
            std::printf("  class %d accuracy %.4f\n", k, per_class[static_cast<std::size_t>(k)]);
        return 0;
    }

    if (*ex) {
        NetworkHandle net;
        check(bts_network_load(ex_ckpt.c_str(), &net.p), "loading checkpoint");
        ClipsHandle clips;
        load_split(ex_data, ex_split, clips);
        check(bts_export_attention(net.p, clips.p, ex_out.c_str()), "exporting attention");
        std::printf("wrote attention.json, attention.csv, attention_summary.csv to %s\n",
                    ex_out.c_str());
        bts_attention_stats stats{};
        if (bts_attention_discrimination(net.p, clips.p, &stats) == BTS_OK) {
            std::printf("pathway %d (dilation %d,%d,%d): mean weight %.6f on fast clips (n=%d) "
                        "vs %.6f on slow clips (n=%d)\n",
                        stats.pathway, stats.dilation[0], stats.dilation[1], stats.dilation[2],
                        stats.mean_fast, stats.n_fast, stats.mean_slow, stats.n_slow);
            std::printf("two-sample t = %.4f, df = %.2f, two-sided p = %.6g\n", stats.t_stat,
                        stats.df, stats.p_two_sided);
        }
        return 0;
    }

    if (*rf) {
        const std::vector<bts_layer_spec> stack_a = parse_stack_file(rf_stack);
        std::vector<bts_layer_spec> stack_b;
        if (!rf_compare.empty()) stack_b = parse_stack_file(rf_compare);
        check(bts_rf_write_report(stack_a.data(), static_cast<int32_t>(stack_a.size()),
                                  stack_b.empty() ? nullptr : stack_b.data(),
                                  static_cast<int32_t>(stack_b.size()), rf_out.c_str()),
              "writing receptive-field report");
        print_rf_summary(stack_b.empty() ? "stack" : "stack a", stack_a);
        if (!stack_b.empty()) print_rf_summary("stack b", stack_b);
        std::printf("report written to %s\n", rf_out.c_str());
        return 0;
    }

    if (*cp) {
        bts_network_config cfg{};
        cfg.depth = cp_depth;
        cfg.cardinality = cp_card;
        cfg.pathways = cp_m;
        cfg.rf_option = cp_rf.c_str();
        cfg.fuse_type = cp_fuse.c_str();
        cfg.num_classes = cp_classes;
        cfg.input_channels = cp_channels;
        cfg.tiny = cp_tiny ? 1 : 0;
        cfg.seed = 0;
        NetworkHandle net;
        check(bts_network_create(&cfg, &net.p), "building network");
        if (cp_table) {
            char* table = nullptr;
            check(bts_network_param_table(net.p, &table), "building parameter table");
            std::fputs(table, stdout);
            bts_string_free(table);
        }
        uint64_t total = 0;
        check(bts_network_param_total(net.p, &total), "counting parameters");
        std::printf("total trainable parameters: %" PRIu64 " (%.1fM)\n", total,
                    static_cast<double>(total) / 1e6);
        const double reference = bts_reference_param_count_millions(cp_depth, cp_card);
        if (!cp_tiny && reference > 0.0) {
            std::printf("published full-scale figure for depth %d cardinality %d: %.1fM\n",
                        cp_depth, cp_card, reference);
            std::printf("(stage widths and stem here are library conventions, so the totals "
                        "are compared, not matched)\n");
        }
        return 0;
    }

    return 0;
}
