#pragma once
#include <cstdint>
#include <string>
#include <vector>

#include "json.hpp"

#include "mpseg/errors.hpp"
#include "mpseg/fusion.hpp"
#include "mpseg/phantom.hpp"
#include "mpseg/predictor.hpp"
#include "mpseg/sampler.hpp"
#include "mpseg/stats.hpp"
#include "mpseg/views.hpp"

namespace mpseg {

// ---------------------------------------------------------------------------
// Dice / F1
// ---------------------------------------------------------------------------

/// Per-class F1 (dice) scores. mean_f1 averages the foreground classes
/// (1..L-1); the background score is reported separately. A class absent
/// from both maps scores 1 (perfect agreement on absence).
struct DiceReport {
    std::vector<double> per_class_f1;  // length L
    double mean_f1 = 0.0;              // foreground classes only

    nlohmann::json to_json() const {
        return {{"per_class_f1", per_class_f1}, {"mean_f1", mean_f1}};
    }
};

inline DiceReport dice_per_class(const LabelMap& pred, const LabelMap& truth) {
    if (pred.dim_x != truth.dim_x || pred.dim_y != truth.dim_y || pred.dim_z != truth.dim_z)
        throw DataError("dice_per_class: shape mismatch");
    if (pred.num_classes != truth.num_classes)
        throw DataError("dice_per_class: class count mismatch");
    std::int32_t L = pred.num_classes;
    if (L < 2) throw DataError("dice_per_class needs at least one foreground class");

    std::vector<std::size_t> inter(static_cast<std::size_t>(L), 0);
    std::vector<std::size_t> pred_count(static_cast<std::size_t>(L), 0);
    std::vector<std::size_t> truth_count(static_cast<std::size_t>(L), 0);
    for (std::size_t i = 0; i < pred.labels.size(); ++i) {
        std::int32_t p = pred.labels[i];
        std::int32_t t = truth.labels[i];
        if (p < 0 || p >= L || t < 0 || t >= L) throw DataError("label outside [0, L)");
        ++pred_count[static_cast<std::size_t>(p)];
        ++truth_count[static_cast<std::size_t>(t)];
        if (p == t) ++inter[static_cast<std::size_t>(p)];
    }

    DiceReport report;
    report.per_class_f1.resize(static_cast<std::size_t>(L));
    double foreground_sum = 0.0;
    for (std::int32_t c = 0; c < L; ++c) {
        std::size_t denom = pred_count[static_cast<std::size_t>(c)] +
                            truth_count[static_cast<std::size_t>(c)];
        double f1 = denom == 0 ? 1.0
                               : 2.0 * static_cast<double>(inter[static_cast<std::size_t>(c)]) /
                                     static_cast<double>(denom);
        report.per_class_f1[static_cast<std::size_t>(c)] = f1;
        if (c >= 1) foreground_sum += f1;
    }
    report.mean_f1 = foreground_sum / static_cast<double>(L - 1);
    return report;
}

// ---------------------------------------------------------------------------
// Multi-view variance-reduction experiment
// ---------------------------------------------------------------------------

struct ExperimentRow {
    int k = 0;
    int trial = 0;
    double mean_dice = 0.0;
    double coverage_fraction = 0.0;  // voxels covered by at least one view
};

struct ExperimentAggregate {
    int k = 0;
    double mean_dice = 0.0;
    double dice_variance = 0.0;
    double mean_coverage_fraction = 0.0;
};

struct ExperimentTable {
    std::vector<ExperimentRow> rows;
    std::vector<ExperimentAggregate> aggregates;

    std::string to_csv() const {
        std::string csv = "k,trial,mean_dice,coverage_fraction\n";
        for (const ExperimentRow& r : rows)
            csv += std::to_string(r.k) + "," + std::to_string(r.trial) + "," +
                   std::to_string(r.mean_dice) + "," + std::to_string(r.coverage_fraction) +
                   "\n";
        return csv;
    }

    nlohmann::json aggregates_json() const {
        nlohmann::json j = nlohmann::json::array();
        for (const ExperimentAggregate& a : aggregates)
            j.push_back({{"k", a.k},
                         {"mean_dice", a.mean_dice},
                         {"dice_variance", a.dice_variance},
                         {"mean_coverage_fraction", a.mean_coverage_fraction}});
        return j;
    }
};

inline double coverage_fraction(const ProbVolume& fused) noexcept {
    std::size_t covered = 0;
    for (std::int32_t c : fused.coverage)
        if (c > 0) ++covered;
    return static_cast<double>(covered) / static_cast<double>(fused.coverage.size());
}

/// Monte-Carlo harness for the multi-view averaging effect: per (k, trial),
/// fresh phantom noise and a fresh view set (streams keyed by seed, k and
/// trial index), noisy-oracle predictions per view, reconstruction, fusion,
/// and dice against the phantom truth. Deterministic given the seed;
/// trials are independent so parallelism cannot change the table.
inline ExperimentTable variance_experiment(const PhantomSpec& phantom_spec,
                                           std::span<const int> k_values, double flip_rate,
                                           int trials, std::uint64_t seed,
                                           unsigned threads = 1) {
    if (trials < 2) throw ConfigError("variance experiment needs at least two trials");
    phantom_spec.validate();

    // Shared sampling params: native spacing, full coverage of the phantom.
    VolumeGeometry geometry{phantom_spec.shape, phantom_spec.spacing_mm, 1};
    double r = std::min({phantom_spec.spacing_mm.x, phantom_spec.spacing_mm.y,
                         phantom_spec.spacing_mm.z});
    int q = static_cast<int>(std::ceil(geometry.diameter_mm() / r - 1e-9)) + 1;
    SamplingParams params = SamplingParams::from_grid(std::max(q, kMinGridSize), r);

    ExperimentTable table;
    for (int k : k_values) {
        if (k < 1) throw ConfigError("k values must be >= 1");
        std::vector<double> dices;
        std::vector<double> coverages;
        for (int trial = 0; trial < trials; ++trial) {
            PhantomSpec trial_spec = phantom_spec;
            trial_spec.seed = stream_seed(seed, static_cast<std::uint64_t>(k),
                                          static_cast<std::uint64_t>(trial), 0x7068);
            Phantom phantom = make_phantom(trial_spec, threads);

            std::uint64_t view_seed = stream_seed(seed, static_cast<std::uint64_t>(k),
                                                  static_cast<std::uint64_t>(trial), 0x7677);
            ViewSet views = sample_view_axes(k, view_seed);

            NoisyOracleConfig noise{flip_rate, 0.0,
                                    stream_seed(seed, static_cast<std::uint64_t>(k),
                                                static_cast<std::uint64_t>(trial), 0x6e6f)};

            TargetGeometry target{phantom.volume.dim_x, phantom.volume.dim_y,
                                  phantom.volume.dim_z, phantom.volume.affine};
            std::vector<ProbVolume> per_view;
            per_view.reserve(static_cast<std::size_t>(k));
            for (std::size_t vi = 0; vi < views.size(); ++vi) {
                SliceStack stack = sample_stack(phantom.volume, &phantom.labels,
                                                views.axes[vi], params, {0, 0, 0}, threads);
                ViewPrediction pred;
                pred.view = stack.view;
                pred.params = stack.params;
                pred.center_mm = stack.center_mm;
                pred.num_classes = phantom.labels.num_classes;
                pred.prob_slices.reserve(stack.slices.size());
                for (std::size_t si = 0; si < stack.slices.size(); ++si)
                    pred.prob_slices.push_back(noisy_oracle_predict(
                        *stack.slices[si].labels, params.grid_size,
                        phantom.labels.num_classes, noise, vi, si));
                per_view.push_back(reconstruct_view(pred, target, threads));
            }
            ProbVolume fused = fuse_views(per_view, threads);
            DiceReport report = dice_per_class(argmax_labels(fused), phantom.labels);

            ExperimentRow row{k, trial, report.mean_f1, coverage_fraction(fused)};
            table.rows.push_back(row);
            dices.push_back(row.mean_dice);
            coverages.push_back(row.coverage_fraction);
        }
        table.aggregates.push_back(
            {k, mean(dices), sample_variance(dices), mean(coverages)});
    }
    return table;
}

}  // namespace mpseg
