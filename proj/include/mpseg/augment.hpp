#pragma once
#include <cmath>
#include <cstdint>
#include <vector>

#include "mpseg/errors.hpp"
#include "mpseg/image_ops.hpp"
#include "mpseg/rng.hpp"
#include "mpseg/sampler.hpp"

namespace mpseg {

// ---------------------------------------------------------------------------
// Random elastic deformation
// ---------------------------------------------------------------------------

/// Elastic-augmentation policy. Defaults: apply with probability 1/3, draw
/// smoothness sigma uniformly from [20, 30] and intensity alpha from
/// [100, 500] (both in pixel units), and weigh augmented slices by 1/3 in
/// the training loss.
struct AugmentPolicy {
    double probability = 1.0 / 3.0;
    double sigma_low = 20.0, sigma_high = 30.0;
    double alpha_low = 100.0, alpha_high = 500.0;
    double augmented_loss_weight = 1.0 / 3.0;
    std::uint64_t seed = 0;

    void validate() const {
        if (probability < 0.0 || probability > 1.0)
            throw ConfigError("augment probability must lie in [0, 1]");
        if (sigma_low > sigma_high || !(sigma_low > 0.0))
            throw ConfigError("sigma range must be positive with low <= high");
        if (alpha_low > alpha_high || alpha_low < 0.0)
            throw ConfigError("alpha range must be non-negative with low <= high");
        if (!(augmented_loss_weight > 0.0) || augmented_loss_weight > 1.0)
            throw ConfigError("augmented loss weight must lie in (0, 1]");
    }
};

/// Smoothed random displacement field in pixel units. After normalization
/// alpha is the exact maximum absolute displacement: max(|dx|,|dy|) <= alpha.
struct DisplacementField {
    int grid_size = 0;
    std::vector<double> dx, dy;  // q*q, row-major
    double sigma = 0.0;
    double alpha = 0.0;
};

/// Draws per-pixel displacements i.i.d. uniform on [-1, 1], smooths each
/// component with a Gaussian of standard deviation sigma (kernel truncated
/// at 4 sigma, reflective border), rescales each component to unit maximum
/// absolute value, and multiplies by alpha.
inline DisplacementField make_displacement_field(int grid_size, double sigma, double alpha,
                                                 Rng& rng) {
    if (grid_size < 8) throw ConfigError("displacement field needs grid size >= 8");
    if (!(sigma > 0.0)) throw ConfigError("sigma must be > 0");
    if (alpha < 0.0) throw ConfigError("alpha must be >= 0");

    std::size_t n = static_cast<std::size_t>(grid_size) * grid_size;
    DisplacementField field;
    field.grid_size = grid_size;
    field.sigma = sigma;
    field.alpha = alpha;
    field.dx.resize(n);
    field.dy.resize(n);
    for (double& v : field.dx) v = rng.uniform(-1.0, 1.0);
    for (double& v : field.dy) v = rng.uniform(-1.0, 1.0);

    for (std::vector<double>* component : {&field.dx, &field.dy}) {
        detail::gaussian_blur_2d(*component, grid_size, grid_size, sigma);
        double max_abs = 0.0;
        for (double v : *component) max_abs = std::max(max_abs, std::abs(v));
        double scale = max_abs > 1e-300 ? alpha / max_abs : 0.0;
        for (double& v : *component) v *= scale;
    }
    return field;
}

/// Warps a slice with the field: output(a,b) reads the input at
/// (a + dx[a,b], b + dy[a,b]) via bilinear interpolation for the image and
/// nearest neighbour for labels. Out-of-bounds reads use the slice's
/// background_fill / label 0. View and offset metadata are preserved.
inline Slice elastic_deform(const Slice& slice, const DisplacementField& field) {
    if (field.grid_size != slice.grid_size)
        throw DataError("displacement field size does not match slice");

    int q = slice.grid_size;
    int channels = slice.channels;
    Slice out = slice;
    for (int a = 0; a < q; ++a) {
        for (int b = 0; b < q; ++b) {
            std::size_t pix = slice.pixel_index(a, b);
            double sa = a + field.dx[pix];
            double sb = b + field.dy[pix];
            detail::bilinear_sample_2d(slice.image, q, q, channels, sa, sb,
                                       slice.background_fill,
                                       out.image.data() + pix * channels);
            if (slice.labels)
                (*out.labels)[pix] = detail::nearest_sample_2d(*slice.labels, q, q, sa, sb);
        }
    }
    return out;
}

/// Applies the policy: with the configured probability, draws sigma and
/// alpha, deforms the slice, and assigns the augmented loss weight;
/// otherwise returns the slice unchanged with weight 1. Draw order from the
/// rng is fixed: gate, sigma, alpha, then the field.
inline Slice maybe_augment(const Slice& slice, const AugmentPolicy& policy, Rng& rng) {
    policy.validate();
    if (rng.uniform() < policy.probability) {
        double sigma = rng.uniform(policy.sigma_low, policy.sigma_high);
        double alpha = rng.uniform(policy.alpha_low, policy.alpha_high);
        DisplacementField field = make_displacement_field(slice.grid_size, sigma, alpha, rng);
        Slice out = elastic_deform(slice, field);
        out.loss_weight = policy.augmented_loss_weight;
        return out;
    }
    Slice out = slice;
    out.loss_weight = 1.0;
    return out;
}

/// Per-slice augmentation stream: derived from (policy.seed, slice_index) so
/// batch order and parallelism cannot change outcomes.
inline Rng augment_rng(const AugmentPolicy& policy, std::size_t slice_index) noexcept {
    return Rng(stream_seed(policy.seed, 0x617567, slice_index));
}

}  // namespace mpseg
