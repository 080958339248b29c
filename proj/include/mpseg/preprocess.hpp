#pragma once
#include <algorithm>
#include <cstddef>
#include <string>
#include <utility>
#include <vector>

#include "json.hpp"

#include "mpseg/errors.hpp"
#include "mpseg/stats.hpp"
#include "mpseg/volume.hpp"

namespace mpseg {

// ---------------------------------------------------------------------------
// Robust intensity scaling
// ---------------------------------------------------------------------------

/// Per-channel scaling statistics in input intensity units. Background
/// voxels are those with intensity <= the channel's first percentile; median
/// and IQR are computed over the remaining (foreground) voxels.
struct ChannelScale {
    double background_threshold = 0.0;  // 1st-percentile intensity
    double median = 0.0;
    double iqr = 0.0;                   // P75 - P25 of foreground
};

struct ScaleReport {
    std::vector<ChannelScale> channels;
    bool used_unit_fallback = false;  // set when a degenerate IQR fell back to 1.0

    nlohmann::json to_json() const {
        nlohmann::json j;
        j["channels"] = nlohmann::json::array();
        for (const ChannelScale& c : channels)
            j["channels"].push_back({{"background_threshold", c.background_threshold},
                                     {"median", c.median},
                                     {"iqr", c.iqr}});
        j["used_unit_fallback"] = used_unit_fallback;
        return j;
    }
};

inline constexpr double kDegenerateIqr = 1e-12;

/// Image- and channel-wise outlier-robust scaling: per channel, every voxel
/// becomes (x - median) / iqr with the statistics taken over foreground
/// voxels only. A degenerate IQR (< 1e-12) throws DataError unless
/// fallback_unit_iqr is set, in which case the divisor falls back to 1.0 and
/// the report flags it. The output volume's background_fill is the scaled
/// first percentile.
inline std::pair<Volume, ScaleReport> robust_scale(const Volume& volume,
                                                   bool fallback_unit_iqr = false) {
    Volume out = volume;
    ScaleReport report;
    report.channels.resize(volume.channels);

    std::size_t n = volume.voxel_count();
    std::vector<double> channel_values(n);
    std::vector<double> foreground;
    double fill_sum = 0.0;

    for (std::size_t c = 0; c < volume.channels; ++c) {
        for (std::size_t v = 0; v < n; ++v)
            channel_values[v] = volume.data[v * volume.channels + c];
        std::sort(channel_values.begin(), channel_values.end());
        double threshold = percentile_sorted(channel_values, 1.0);

        foreground.clear();
        // channel_values is sorted, so foreground is the sorted tail > threshold
        auto first_fg = std::upper_bound(channel_values.begin(), channel_values.end(),
                                         threshold);
        foreground.assign(first_fg, channel_values.end());

        double med, iqr;
        if (foreground.empty()) {
            if (!fallback_unit_iqr)
                throw DataError("channel " + std::to_string(c) +
                                " has no foreground voxels (constant intensity?)");
            med = threshold;
            iqr = 1.0;
            report.used_unit_fallback = true;
        } else {
            med = percentile_sorted(foreground, 50.0);
            iqr = percentile_sorted(foreground, 75.0) - percentile_sorted(foreground, 25.0);
            if (iqr < kDegenerateIqr) {
                if (!fallback_unit_iqr)
                    throw DataError("channel " + std::to_string(c) +
                                    " has degenerate IQR (" + std::to_string(iqr) + ")");
                iqr = 1.0;
                report.used_unit_fallback = true;
            }
        }

        report.channels[c] = {threshold, med, iqr};
        double inv = 1.0 / iqr;
        for (std::size_t v = 0; v < n; ++v) {
            std::size_t idx = v * volume.channels + c;
            out.data[idx] = (volume.data[idx] - med) * inv;
        }
        fill_sum += (threshold - med) * inv;
    }

    out.background_fill = fill_sum / static_cast<double>(volume.channels);
    return {std::move(out), std::move(report)};
}

}  // namespace mpseg
