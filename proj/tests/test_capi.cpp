#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include "btsnet.h"

#include <cmath>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

namespace fs = std::filesystem;

namespace {

fs::path temp_dir(const char* tag) {
    fs::path dir = fs::temp_directory_path() / (std::string("btsnet_capi_") + tag);
    fs::remove_all(dir);
    fs::create_directories(dir);
    return dir;
}

bts_network_config tiny_config(std::uint64_t seed) {
    bts_network_config cfg{};
    cfg.depth = 26;
    cfg.cardinality = 4;
    cfg.pathways = 4;
    cfg.rf_option = "o2";
    cfg.fuse_type = "tc";
    cfg.num_classes = 4;
    cfg.input_channels = 1;
    cfg.tiny = 1;
    cfg.seed = seed;
    return cfg;
}

std::string first_line(const fs::path& p) {
    std::ifstream in(p);
    REQUIRE(in.good());
    std::string line;
    std::getline(in, line);
    return line;
}

}  // namespace

TEST_CASE("failures set status codes and a readable message") {
    CHECK(bts_tensor_create(nullptr, 2, nullptr, nullptr) == BTS_ERR_NULL_ARGUMENT);
    CHECK(std::strlen(bts_last_error()) > 0);

    int32_t triples[12] = {0};
    CHECK(bts_build_dilation_set(4, nullptr, triples) == BTS_ERR_NULL_ARGUMENT);
    CHECK(bts_build_dilation_set(4, "diagonal", triples) == BTS_ERR_INVALID_ARGUMENT);
    CHECK(std::strlen(bts_last_error()) > 0);
    CHECK(bts_build_dilation_set(5, "o2", triples) == BTS_ERR_INVALID_ARGUMENT);

    bts_tensor* t = nullptr;
    CHECK(bts_tensor_read("/nonexistent/btsc", &t) == BTS_ERR_RUNTIME);
    CHECK(t == nullptr);

    bts_network* net = nullptr;
    bts_network_config cfg = tiny_config(1);
    cfg.rf_option = nullptr;
    CHECK(bts_network_create(&cfg, &net) == BTS_ERR_NULL_ARGUMENT);
    cfg = tiny_config(1);
    cfg.fuse_type = "fancy";
    CHECK(bts_network_create(&cfg, &net) == BTS_ERR_INVALID_ARGUMENT);
    CHECK(net == nullptr);
}

TEST_CASE("tensors round-trip through the binary format") {
    const int32_t extents[2] = {2, 3};
    const double values[6] = {1.0, -2.5, 0.25, 4.0, 0.0, 100.0};   // f32-exact
    bts_tensor* t = nullptr;
    REQUIRE(bts_tensor_create(extents, 2, values, &t) == BTS_OK);
    CHECK(bts_tensor_rank(t) == 2);
    CHECK(bts_tensor_size(t) == 6);
    int32_t got[2] = {0, 0};
    REQUIRE(bts_tensor_extents(t, got, 2) == BTS_OK);
    CHECK(got[0] == 2);
    CHECK(got[1] == 3);
    CHECK(bts_tensor_extents(t, got, 1) == BTS_ERR_INVALID_ARGUMENT);
    const double* data = bts_tensor_data(t);
    REQUIRE(data != nullptr);
    for (int i = 0; i < 6; ++i) CHECK(data[i] == values[i]);

    const fs::path dir = temp_dir("tensor");
    const std::string path = (dir / "t.btsc").string();
    REQUIRE(bts_tensor_write(t, path.c_str()) == BTS_OK);
    bts_tensor* back = nullptr;
    REQUIRE(bts_tensor_read(path.c_str(), &back) == BTS_OK);
    CHECK(bts_tensor_rank(back) == 2);
    CHECK(bts_tensor_size(back) == 6);
    for (int i = 0; i < 6; ++i) CHECK(bts_tensor_data(back)[i] == values[i]);
    bts_tensor_free(back);
    bts_tensor_free(t);

    // Zero-filled when no data is given; bad extents are rejected.
    bts_tensor* zeros = nullptr;
    REQUIRE(bts_tensor_create(extents, 2, nullptr, &zeros) == BTS_OK);
    for (int i = 0; i < 6; ++i) CHECK(bts_tensor_data(zeros)[i] == 0.0);
    bts_tensor_free(zeros);
    const int32_t bad[2] = {2, 0};
    bts_tensor* rejected = nullptr;
    CHECK(bts_tensor_create(bad, 2, nullptr, &rejected) == BTS_ERR_INVALID_ARGUMENT);
    CHECK(bts_tensor_create(extents, 0, nullptr, &rejected) == BTS_ERR_INVALID_ARGUMENT);

    fs::remove_all(dir);
}

TEST_CASE("dilation sets match the published tables") {
    int32_t triples[12] = {0};
    REQUIRE(bts_build_dilation_set(4, "o2", triples) == BTS_OK);
    const int32_t expect_o2[12] = {1, 1, 1, 4, 4, 4, 1, 4, 4, 4, 1, 1};
    for (int i = 0; i < 12; ++i) CHECK(triples[i] == expect_o2[i]);

    int32_t cubes[9] = {0};
    REQUIRE(bts_build_dilation_set(3, "o1", cubes) == BTS_OK);
    const int32_t expect_o1[9] = {1, 1, 1, 2, 2, 2, 3, 3, 3};
    for (int i = 0; i < 9; ++i) CHECK(cubes[i] == expect_o1[i]);
}

TEST_CASE("networks build, report parameters, and round-trip checkpoints") {
    bts_network* net = nullptr;
    const bts_network_config cfg = tiny_config(42);
    REQUIRE(bts_network_create(&cfg, &net) == BTS_OK);
    CHECK(bts_network_num_classes(net) == 4);

    uint64_t total = 0;
    REQUIRE(bts_network_param_total(net, &total) == BTS_OK);
    CHECK(total > 0);

    char* csv = nullptr;
    REQUIRE(bts_network_param_table(net, &csv) == BTS_OK);
    REQUIRE(csv != nullptr);
    std::stringstream ss(csv);
    std::string line;
    std::getline(ss, line);
    CHECK(line == "name,shape,count");
    uint64_t row_sum = 0;
    uint64_t reported_total = 0;
    while (std::getline(ss, line)) {
        const std::size_t c1 = line.find(',');
        const std::size_t c2 = line.find(',', c1 + 1);
        REQUIRE(c2 != std::string::npos);
        const uint64_t count = std::stoull(line.substr(c2 + 1));
        if (line.rfind("TOTAL,", 0) == 0)
            reported_total = count;
        else
            row_sum += count;
    }
    CHECK(row_sum == total);
    CHECK(reported_total == total);
    bts_string_free(csv);

    // Full-scale reference figures exist only for published pairs.
    CHECK(bts_reference_param_count_millions(26, 32) > 0.0);
    CHECK(bts_reference_param_count_millions(27, 16) == 0.0);

    const fs::path dir = temp_dir("ckpt");
    REQUIRE(bts_network_save(net, (dir / "net").string().c_str()) == BTS_OK);
    CHECK(fs::exists(dir / "net" / "manifest.json"));
    bts_network* loaded = nullptr;
    REQUIRE(bts_network_load((dir / "net").string().c_str(), &loaded) == BTS_OK);
    uint64_t loaded_total = 0;
    REQUIRE(bts_network_param_total(loaded, &loaded_total) == BTS_OK);
    CHECK(loaded_total == total);

    // Both copies classify identically (weights differ only by f32 rounding).
    bts_clips* clips = nullptr;
    REQUIRE(bts_clips_generate(6, 12, 2, 3, 0, &clips) == BTS_OK);
    double acc_a = -1.0, loss_a = -1.0, acc_b = -1.0, loss_b = -1.0;
    REQUIRE(bts_evaluate(net, clips, &acc_a, &loss_a, nullptr, 0) == BTS_OK);
    REQUIRE(bts_evaluate(loaded, clips, &acc_b, &loss_b, nullptr, 0) == BTS_OK);
    CHECK(acc_a == acc_b);
    CHECK(loss_a == doctest::Approx(loss_b).epsilon(1e-5));

    bts_clips_free(clips);
    bts_network_free(loaded);
    bts_network_free(net);
    CHECK(bts_network_load((dir / "missing").string().c_str(), &loaded) == BTS_ERR_RUNTIME);
    fs::remove_all(dir);
}

TEST_CASE("clips generate, persist, and describe themselves") {
    bts_clips* clips = nullptr;
    REQUIRE(bts_clips_generate(6, 12, 2, 7, 0, &clips) == BTS_OK);
    int32_t shape[5] = {0};
    REQUIRE(bts_clips_shape(clips, shape) == BTS_OK);
    CHECK(shape[0] == 8);
    CHECK(shape[1] == 1);
    CHECK(shape[2] == 6);
    CHECK(shape[3] == 12);
    CHECK(shape[4] == 12);
    int32_t classes = 0;
    REQUIRE(bts_clips_num_classes(clips, &classes) == BTS_OK);
    CHECK(classes == 4);

    const fs::path dir = temp_dir("clips");
    const std::string cp = (dir / "c.btsc").string();
    const std::string lp = (dir / "l.bin").string();
    REQUIRE(bts_clips_save(clips, cp.c_str(), lp.c_str()) == BTS_OK);
    bts_clips* loaded = nullptr;
    REQUIRE(bts_clips_load(cp.c_str(), lp.c_str(), &loaded) == BTS_OK);
    int32_t shape2[5] = {0};
    REQUIRE(bts_clips_shape(loaded, shape2) == BTS_OK);
    for (int i = 0; i < 5; ++i) CHECK(shape2[i] == shape[i]);
    bts_clips_free(loaded);
    bts_clips_free(clips);

    bts_clips* bad = nullptr;
    CHECK(bts_clips_generate(6, 12, 0, 7, 0, &bad) == BTS_ERR_INVALID_ARGUMENT);
    CHECK(bts_clips_load((dir / "nope.btsc").string().c_str(), lp.c_str(), &bad) ==
          BTS_ERR_RUNTIME);
    fs::remove_all(dir);
}

namespace {

struct EpochTrace {
    std::vector<int32_t> epochs;
    std::vector<double> losses;
};

void record_epoch(int32_t epoch, double train_loss, double val_accuracy, void* user) {
    auto* trace = static_cast<EpochTrace*>(user);
    trace->epochs.push_back(epoch);
    trace->losses.push_back(train_loss);
    (void)val_accuracy;
}

}  // namespace

TEST_CASE("training and attention run end to end") {
    bts_network* net = nullptr;
    const bts_network_config cfg = tiny_config(5);
    REQUIRE(bts_network_create(&cfg, &net) == BTS_OK);

    bts_clips* train_clips = nullptr;
    bts_clips* val_clips = nullptr;
    REQUIRE(bts_clips_generate(6, 12, 2, 9, 0, &train_clips) == BTS_OK);
    REQUIRE(bts_clips_generate(6, 12, 1, 9, 8, &val_clips) == BTS_OK);

    bts_train_options opts{};
    opts.lr = 0.01;
    opts.momentum = 0.9;
    opts.weight_decay = 1e-4;
    opts.epochs = 2;
    opts.batch_size = 8;
    opts.seed = 1;
    EpochTrace trace;
    REQUIRE(bts_train(net, train_clips, val_clips, &opts, record_epoch, &trace) == BTS_OK);
    REQUIRE(trace.epochs.size() == 2);
    CHECK(trace.epochs[0] == 1);
    CHECK(trace.epochs[1] == 2);
    for (double l : trace.losses) CHECK(std::isfinite(l));

    double accuracy = -1.0, mean_loss = -1.0;
    double per_class[4] = {-1, -1, -1, -1};
    REQUIRE(bts_evaluate(net, val_clips, &accuracy, &mean_loss, per_class, 4) == BTS_OK);
    CHECK(accuracy >= 0.0);
    CHECK(accuracy <= 1.0);
    CHECK(std::isfinite(mean_loss));
    for (double a : per_class) {
        CHECK(a >= 0.0);
        CHECK(a <= 1.0);
    }

    const fs::path dir = temp_dir("train");
    REQUIRE(bts_export_attention(net, val_clips, (dir / "attn").string().c_str()) == BTS_OK);
    for (const char* name : {"attention.json", "attention.csv", "attention_summary.csv"})
        CHECK(fs::exists(dir / "attn" / name));

    bts_attention_stats stats{};
    REQUIRE(bts_attention_discrimination(net, val_clips, &stats) == BTS_OK);
    CHECK(stats.pathway == 3);   // the purely temporal dilation (4,1,1)
    CHECK(stats.dilation[0] == 4);
    CHECK(stats.dilation[1] == 1);
    CHECK(stats.dilation[2] == 1);
    CHECK(stats.n_fast == 2);
    CHECK(stats.n_slow == 2);
    CHECK(stats.p_two_sided >= 0.0);
    CHECK(stats.p_two_sided <= 1.0);

    CHECK(bts_train(net, train_clips, val_clips, nullptr, nullptr, nullptr) ==
          BTS_ERR_NULL_ARGUMENT);
    bts_train_options bad = opts;
    bad.epochs = 0;
    CHECK(bts_train(net, train_clips, val_clips, &bad, nullptr, nullptr) ==
          BTS_ERR_INVALID_ARGUMENT);

    bts_clips_free(val_clips);
    bts_clips_free(train_clips);
    bts_network_free(net);
    fs::remove_all(dir);
}

TEST_CASE("receptive fields compute and report through the C interface") {
    bts_layer_spec plain{};
    plain.kernel[0] = plain.kernel[1] = plain.kernel[2] = 3;
    plain.stride[0] = plain.stride[1] = plain.stride[2] = 1;
    plain.dilation[0] = plain.dilation[1] = plain.dilation[2] = 1;
    plain.input_sampling_rate = 1;

    int64_t rf[3] = {0}, jump[3] = {0};
    REQUIRE(bts_rf_analytic(&plain, 1, rf, jump) == BTS_OK);
    for (int i = 0; i < 3; ++i) {
        CHECK(rf[i] == 3);
        CHECK(jump[i] == 1);
    }

    // Stride-2 layer followed by a 3x3x3 layer: 3 + 2*2 = 7 per axis.
    bts_layer_spec strided = plain;
    strided.stride[0] = strided.stride[1] = strided.stride[2] = 2;
    const bts_layer_spec stack[2] = {strided, plain};
    REQUIRE(bts_rf_analytic(stack, 2, rf, jump) == BTS_OK);
    for (int i = 0; i < 3; ++i) {
        CHECK(rf[i] == 7);
        CHECK(jump[i] == 2);
    }

    const int32_t probe[3] = {9, 9, 9};
    int32_t measured[3] = {0};
    REQUIRE(bts_rf_empirical(stack, 2, probe, measured) == BTS_OK);
    for (int i = 0; i < 3; ++i) CHECK(measured[i] == 7);
    const int32_t tight[3] = {7, 9, 9};
    CHECK(bts_rf_empirical(stack, 2, tight, measured) == BTS_ERR_INVALID_ARGUMENT);
    CHECK(bts_rf_analytic(stack, 0, rf, jump) == BTS_ERR_INVALID_ARGUMENT);

    const fs::path dir = temp_dir("rf");
    const std::string single = (dir / "single.csv").string();
    REQUIRE(bts_rf_write_report(stack, 2, nullptr, 0, single.c_str()) == BTS_OK);
    CHECK(first_line(single) == "axis,layer_index,rf,jump,rf_original_frames");
    const std::string compare = (dir / "compare.csv").string();
    REQUIRE(bts_rf_write_report(stack, 2, &plain, 1, compare.c_str()) == BTS_OK);
    CHECK(first_line(compare) == "axis,layer_index,rf,jump,rf_original_frames,stack");
    fs::remove_all(dir);
}
