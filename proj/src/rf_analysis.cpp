#include "btsnet/rf_analysis.hpp"

#include <fstream>
#include <stdexcept>
#include <string>

#include "btsnet/nn_ops.hpp"

namespace btsnet {

namespace {

void validate_stack(const std::vector<LayerSpec>& stack) {
    if (stack.empty()) {
        throw std::invalid_argument("rf: layer stack must not be empty");
    }
    for (const LayerSpec& l : stack) {
        for (int a = 0; a < 3; ++a) {
            if (l.kernel[a] < 1 || l.stride[a] < 1 || l.dilation[a] < 1 || l.padding[a] < 0) {
                throw std::invalid_argument("rf: layer parameters must be positive (padding >= 0)");
            }
        }
        if (l.input_sampling_rate < 1) {
            throw std::invalid_argument("rf: input_sampling_rate must be >= 1");
        }
    }
}

}  // namespace

std::vector<RfTraceEntry> rf_trace(const std::vector<LayerSpec>& stack) {
    validate_stack(stack);
    std::vector<RfTraceEntry> trace;
    trace.reserve(stack.size());
    std::array<std::int64_t, 3> rf{1, 1, 1};
    std::array<std::int64_t, 3> jump{1, 1, 1};
    std::array<std::int64_t, 3> rf_f{1, 1, 1};
    std::array<std::int64_t, 3> jump_f{1, 1, 1};
    int index = 0;
    for (const LayerSpec& l : stack) {
        // Subsampling acts ahead of the layer and only on the temporal axis:
        // one step on the subsampled grid covers q original frames.
        jump_f[0] *= l.input_sampling_rate;
        for (int a = 0; a < 3; ++a) {
            const std::int64_t span = static_cast<std::int64_t>(l.kernel[a] - 1) * l.dilation[a];
            rf[a] += span * jump[a];
            rf_f[a] += span * jump_f[a];
            jump[a] *= l.stride[a];
            jump_f[a] *= l.stride[a];
        }
        RfTraceEntry e;
        e.layer_index = ++index;  // 1-based: "state after layer k"
        e.rf = rf;
        e.jump = jump;
        e.rf_frames = rf_f;
        e.jump_frames = jump_f;
        trace.push_back(e);
    }
    return trace;
}

RfResult analytic_rf(const std::vector<LayerSpec>& stack) {
    const std::vector<RfTraceEntry> trace = rf_trace(stack);
    RfResult r;
    r.rf = trace.back().rf_frames;
    r.jump = trace.back().jump_frames;
    return r;
}

std::array<int, 3> empirical_rf(const std::vector<LayerSpec>& stack,
                                const std::array<int, 3>& probe) {
    validate_stack(stack);
    const RfResult expect = analytic_rf(stack);
    for (int a = 0; a < 3; ++a) {
        if (probe[a] <= expect.rf[a]) {
            throw std::invalid_argument("empirical_rf: probe extent must exceed the analytic rf");
        }
    }

    // All-ones weights make every path weight positive, so the nonzero
    // gradient support of one output element is exactly its receptive field.
    TensorPtr x = full({1, 1, probe[0], probe[1], probe[2]}, 1.0, /*requires_grad=*/true);
    TensorPtr y = x;
    for (const LayerSpec& l : stack) {
        if (l.input_sampling_rate > 1) {
            // Frame subsampling == 1x1x1 convolution with temporal stride q.
            Conv3dParams sub;
            sub.weight = full({1, 1, 1, 1, 1}, 1.0, false);
            sub.stride = {l.input_sampling_rate, 1, 1};
            y = conv3d(y, sub);
        }
        Conv3dParams p;
        p.weight = full({1, 1, l.kernel[0], l.kernel[1], l.kernel[2]}, 1.0, false);
        p.stride = l.stride;
        p.dilation = l.dilation;
        // Zero padding: every surviving output has its full support inside
        // the probe, so no clipping can shrink the measurement.
        y = conv3d(y, p);
    }

    // Differentiate the central output element via a one-hot mask.
    TensorPtr mask = zeros(y->shape, false);
    std::vector<int> center(y->shape.size());
    for (std::size_t i = 0; i < y->shape.size(); ++i) center[i] = (y->shape[i] - 1) / 2;
    mask->data[flat_index(mask->shape, center)] = 1.0;
    backward(sum_all(mul(y, mask)));

    std::array<int, 3> lo{probe[0], probe[1], probe[2]};
    std::array<int, 3> hi{-1, -1, -1};
    const std::vector<double>& g = x->grad;
    std::size_t flat = 0;
    for (int t = 0; t < probe[0]; ++t) {
        for (int h = 0; h < probe[1]; ++h) {
            for (int w = 0; w < probe[2]; ++w, ++flat) {
                if (g[flat] == 0.0) continue;
                const std::array<int, 3> pos{t, h, w};
                for (int a = 0; a < 3; ++a) {
                    if (pos[a] < lo[a]) lo[a] = pos[a];
                    if (pos[a] > hi[a]) hi[a] = pos[a];
                }
            }
        }
    }
    if (hi[0] < 0) {
        throw std::runtime_error("empirical_rf: gradient support is empty");
    }
    return {hi[0] - lo[0] + 1, hi[1] - lo[1] + 1, hi[2] - lo[2] + 1};
}

std::vector<RfReportRow> rf_report(const std::vector<LayerSpec>& stack) {
    const std::vector<RfTraceEntry> trace = rf_trace(stack);
    std::vector<RfReportRow> rows;
    rows.reserve(trace.size() * 3);
    const char axes[3] = {'t', 'h', 'w'};
    for (const RfTraceEntry& e : trace) {
        for (int a = 0; a < 3; ++a) {
            RfReportRow r;
            r.stack = "a";
            r.axis = axes[a];
            r.layer_index = e.layer_index;
            r.rf = e.rf[a];
            r.jump = e.jump[a];
            r.rf_original_frames = e.rf_frames[a];
            rows.push_back(r);
        }
    }
    return rows;
}

std::vector<RfReportRow> compare_pathways(const std::vector<LayerSpec>& a,
                                          const std::vector<LayerSpec>& b) {
    std::vector<RfReportRow> rows = rf_report(a);
    std::vector<RfReportRow> rows_b = rf_report(b);
    for (RfReportRow& r : rows_b) r.stack = "b";
    rows.insert(rows.end(), rows_b.begin(), rows_b.end());
    return rows;
}

void write_rf_csv(const std::vector<RfReportRow>& rows, const std::string& path) {
    if (rows.empty()) {
        throw std::invalid_argument("write_rf_csv: no rows");
    }
    bool two_stacks = false;
    for (const RfReportRow& r : rows) {
        if (r.stack != rows.front().stack) { two_stacks = true; break; }
    }
    std::ofstream out(path, std::ios::binary);
    if (!out) {
        throw std::runtime_error("write_rf_csv: cannot open " + path);
    }
    out << "axis,layer_index,rf,jump,rf_original_frames";
    if (two_stacks) out << ",stack";
    out << "\n";
    for (const RfReportRow& r : rows) {
        out << r.axis << ',' << r.layer_index << ',' << r.rf << ',' << r.jump << ','
            << r.rf_original_frames;
        if (two_stacks) out << ',' << r.stack;
        out << "\n";
    }
    if (!out) {
        throw std::runtime_error("write_rf_csv: write failed for " + path);
    }
}

}  // namespace btsnet
