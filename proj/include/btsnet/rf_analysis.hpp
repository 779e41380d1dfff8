#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include "btsnet/tensor.hpp"

namespace btsnet {

// One convolution layer of a pathway, for receptive-field accounting.
// input_sampling_rate models frame subsampling ahead of the layer (a
// sampling-rate-defined pathway); it widens the temporal axis only.
struct LayerSpec {
    std::array<int, 3> kernel{1, 1, 1};     // (T, H, W)
    std::array<int, 3> stride{1, 1, 1};
    std::array<int, 3> dilation{1, 1, 1};
    std::array<int, 3> padding{0, 0, 0};
    int input_sampling_rate = 1;
};

// Per-layer receptive-field state along one stack.
// rf/jump are on the working grid (subsampling ignored); rf_frames/jump_frames
// are in original-frame units, where the temporal axis is scaled by the
// accumulated sampling rate. Padding does not enter the accounting: it only
// changes which outputs exist, not what one output depends on.
struct RfTraceEntry {
    int layer_index = 0;
    std::array<std::int64_t, 3> rf{1, 1, 1};
    std::array<std::int64_t, 3> jump{1, 1, 1};
    std::array<std::int64_t, 3> rf_frames{1, 1, 1};
    std::array<std::int64_t, 3> jump_frames{1, 1, 1};
};

struct RfResult {
    std::array<std::int64_t, 3> rf{1, 1, 1};     // original-frame units
    std::array<std::int64_t, 3> jump{1, 1, 1};
};

std::vector<RfTraceEntry> rf_trace(const std::vector<LayerSpec>& stack);

// Final receptive field and output-grid jump per axis, in original-frame
// units: rf <- rf + (k-1)*d*jump and jump <- jump*s per layer, with the
// temporal jump seeded by the sampling rate (rf_frames = (rf-1)*q + 1 for a
// stack subsampled once at rate q).
RfResult analytic_rf(const std::vector<LayerSpec>& stack);

// Gradient-support oracle: builds the stack as real convolutions with
// all-ones weights, differentiates one central output element and returns
// the bounding-box extents of the nonzero-gradient support per axis.
// probe must be strictly larger than the analytic rf per axis.
std::array<int, 3> empirical_rf(const std::vector<LayerSpec>& stack,
                                const std::array<int, 3>& probe);

struct RfReportRow {
    std::string stack;   // "a" or "b"
    char axis = 't';     // 't', 'h', 'w'
    int layer_index = 0;
    std::int64_t rf = 1;
    std::int64_t jump = 1;
    std::int64_t rf_original_frames = 1;
};

std::vector<RfReportRow> rf_report(const std::vector<LayerSpec>& stack);
std::vector<RfReportRow> compare_pathways(const std::vector<LayerSpec>& a,
                                          const std::vector<LayerSpec>& b);

// Columns: axis,layer_index,rf,jump,rf_original_frames[,stack].
// The stack column appears only when rows carry two stacks.
void write_rf_csv(const std::vector<RfReportRow>& rows, const std::string& path);

}  // namespace btsnet
