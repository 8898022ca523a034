#pragma once

#include <ostream>
#include <string>
#include <vector>

#include "coconv/coconv.hpp"
#include "coconv/geometry.hpp"

namespace coconv {

// Exact parameter and FLOP totals. One FLOP = one multiply-accumulate; bias
// adds never count toward FLOPs.
struct CostEntry {
    std::string label;
    index_t params = 0;
    index_t flops = 0;
};

struct CostReport {
    index_t params = 0;
    index_t flops = 0;
    std::vector<CostEntry> breakdown;

    void add(std::string label, index_t p, index_t f) {
        params += p;
        flops += f;
        breakdown.push_back(CostEntry{std::move(label), p, f});
    }

    void append(const CostReport& other, const std::string& prefix = "") {
        for (const auto& e : other.breakdown) add(prefix + e.label, e.params, e.flops);
    }
};

// params = M_in * K_w * K_h * M_out  (+ M_out when biased)
// flops  = M_in * K_h * K_w * M_out * W_out * H_out
inline CostReport count_conv_cost(const ConvGeometry& g, SpatialSize out,
                                  const std::string& label = "conv") {
    g.validate();
    CostReport report;
    const index_t weights = g.in_channels * g.kernel_w * g.kernel_h * g.out_channels;
    const index_t params = weights + (g.has_bias ? g.out_channels : 0);
    report.add(label, params, weights * out.w * out.h);
    return report;
}

// Summed per level; dilation never enters, so the totals match a standard
// conv of the same in/out widths whenever the level splits sum to M_out.
inline CostReport count_coconv_cost(const CoConvSpec& spec, SpatialSize out,
                                    const std::string& label = "coconv") {
    spec.validate();
    CostReport report;
    for (std::size_t i = 0; i < spec.levels.size(); ++i) {
        const auto& level = spec.levels[i];
        const index_t weights = spec.in_channels * spec.kernel_w * spec.kernel_h * level.out_channels;
        const index_t params = weights + (spec.has_bias ? level.out_channels : 0);
        report.add(label + ".d" + std::to_string(level.dilation), params, weights * out.w * out.h);
    }
    return report;
}

// True iff the multi-level layer costs exactly what the reference standard
// conv costs, in both params and flops (integer equality).
inline bool check_budget_parity(const CoConvSpec& spec, const ConvGeometry& reference,
                                SpatialSize out) {
    spec.validate();
    reference.validate();
    if (reference.in_channels != spec.in_channels) {
        throw ComparisonError("parity check: input widths differ (" +
                              std::to_string(reference.in_channels) + " vs " +
                              std::to_string(spec.in_channels) + ")");
    }
    if (reference.kernel_h != spec.kernel_h || reference.kernel_w != spec.kernel_w) {
        throw ComparisonError("parity check: kernel sizes differ");
    }
    if (reference.out_channels != spec.out_channels()) {
        throw ComparisonError("parity check: output widths differ (" +
                              std::to_string(reference.out_channels) + " vs " +
                              std::to_string(spec.out_channels()) + ")");
    }
    if (reference.has_bias != spec.has_bias) {
        throw ComparisonError("parity check: bias settings differ");
    }
    const CostReport a = count_coconv_cost(spec, out);
    const CostReport b = count_conv_cost(reference, out);
    return a.params == b.params && a.flops == b.flops;
}

// layer,label,params,flops rows in report order plus a totals row.
inline void write_cost_csv(std::ostream& os, const CostReport& report) {
    os << "layer,label,params,flops\n";
    for (std::size_t i = 0; i < report.breakdown.size(); ++i) {
        const auto& e = report.breakdown[i];
        os << i << "," << e.label << "," << e.params << "," << e.flops << "\n";
    }
    os << report.breakdown.size() << ",total," << report.params << "," << report.flops << "\n";
}

}  // namespace coconv
