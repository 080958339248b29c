#pragma once
#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <memory>
#include <numeric>
#include <span>
#include <string>
#include <vector>

#include "json.hpp"

#include "mpseg/errors.hpp"
#include "mpseg/image_ops.hpp"
#include "mpseg/rng.hpp"
#include "mpseg/sampler.hpp"

namespace mpseg {

// ---------------------------------------------------------------------------
// Feature extraction
// ---------------------------------------------------------------------------

inline constexpr int kFeaturesPerChannel = 3;

/// Per-pixel features: for each channel the raw value, its 3x3 box mean, and
/// the central-difference gradient magnitude (F = 3C). Border pixels use
/// reflective padding. Layout is q*q*F with feature fastest, features of one
/// channel contiguous.
inline std::vector<double> featurize(const std::vector<double>& image, int grid_size,
                                     int channels) {
    if (image.size() != static_cast<std::size_t>(grid_size) * grid_size * channels)
        throw DataError("featurize: image shape mismatch");
    int q = grid_size;
    int feature_count = kFeaturesPerChannel * channels;
    std::vector<double> features(static_cast<std::size_t>(q) * q * feature_count);

    auto pixel = [&](int a, int b, int c) {
        int aa = detail::mirror_index(a, q);
        int bb = detail::mirror_index(b, q);
        return image[(static_cast<std::size_t>(aa) * q + bb) * channels + c];
    };

    for (int a = 0; a < q; ++a) {
        for (int b = 0; b < q; ++b) {
            double* out =
                features.data() + (static_cast<std::size_t>(a) * q + b) * feature_count;
            for (int c = 0; c < channels; ++c) {
                double raw = pixel(a, b, c);
                double box = 0.0;
                for (int da = -1; da <= 1; ++da)
                    for (int db = -1; db <= 1; ++db) box += pixel(a + da, b + db, c);
                box /= 9.0;
                double ga = (pixel(a + 1, b, c) - pixel(a - 1, b, c)) / 2.0;
                double gb = (pixel(a, b + 1, c) - pixel(a, b - 1, c)) / 2.0;
                out[c * kFeaturesPerChannel + 0] = raw;
                out[c * kFeaturesPerChannel + 1] = box;
                out[c * kFeaturesPerChannel + 2] = std::sqrt(ga * ga + gb * gb);
            }
        }
    }
    return features;
}

// ---------------------------------------------------------------------------
// Oracle predictors
// ---------------------------------------------------------------------------

/// One-hot encoding of ground-truth labels; the perfect predictor used for
/// pipeline round-trip tests.
inline std::vector<double> oracle_predict(const std::vector<std::int32_t>& labels,
                                          int grid_size, std::int32_t num_classes) {
    if (labels.size() != static_cast<std::size_t>(grid_size) * grid_size)
        throw DataError("oracle_predict: label shape mismatch");
    std::vector<double> probs(labels.size() * static_cast<std::size_t>(num_classes), 0.0);
    for (std::size_t p = 0; p < labels.size(); ++p) {
        std::int32_t v = labels[p];
        if (v < 0 || v >= num_classes)
            throw DataError("label " + std::to_string(v) + " outside [0, " +
                            std::to_string(num_classes) + ")");
        probs[p * static_cast<std::size_t>(num_classes) + static_cast<std::size_t>(v)] = 1.0;
    }
    return probs;
}

/// Configuration for the noise-injecting oracle. Flips are keyed per
/// (seed, view, pixel) so errors are independent across views.
struct NoisyOracleConfig {
    double flip_rate = 0.0;   // in [0, 1)
    double blur_sigma = 0.0;  // optional Gaussian blur of the probability maps
    std::uint64_t seed = 0;

    void validate() const {
        if (flip_rate < 0.0 || flip_rate >= 1.0)
            throw ConfigError("flip_rate must lie in [0, 1)");
        if (blur_sigma < 0.0) throw ConfigError("blur_sigma must be >= 0");
    }
};

/// One-hot labels with each pixel's class flipped to a uniformly random
/// other class with probability flip_rate, then optionally blurred and
/// renormalized. Pure function of its arguments: the same
/// (seed, view_index, slice_index) always yields the same output.
inline std::vector<double> noisy_oracle_predict(const std::vector<std::int32_t>& labels,
                                                int grid_size, std::int32_t num_classes,
                                                const NoisyOracleConfig& config,
                                                std::size_t view_index,
                                                std::size_t slice_index = 0) {
    config.validate();
    if (num_classes < 2) throw DataError("noisy oracle needs at least two classes");
    std::size_t n = static_cast<std::size_t>(grid_size) * grid_size;
    if (labels.size() != n) throw DataError("noisy_oracle_predict: label shape mismatch");

    std::vector<double> probs(n * static_cast<std::size_t>(num_classes), 0.0);
    for (std::size_t p = 0; p < n; ++p) {
        std::int32_t v = labels[p];
        if (v < 0 || v >= num_classes) throw DataError("label outside [0, L)");
        Rng pixel_rng(stream_seed(config.seed, view_index, slice_index * n + p, 0x6f6e));
        if (pixel_rng.uniform() < config.flip_rate) {
            auto other = static_cast<std::int32_t>(
                pixel_rng.uniform_int(static_cast<std::uint64_t>(num_classes - 1)));
            v = other >= v ? other + 1 : other;
        }
        probs[p * static_cast<std::size_t>(num_classes) + static_cast<std::size_t>(v)] = 1.0;
    }

    if (config.blur_sigma > 0.0) {
        std::vector<double> channel(n);
        for (std::int32_t l = 0; l < num_classes; ++l) {
            for (std::size_t p = 0; p < n; ++p)
                channel[p] = probs[p * static_cast<std::size_t>(num_classes) + l];
            detail::gaussian_blur_2d(channel, grid_size, grid_size, config.blur_sigma);
            for (std::size_t p = 0; p < n; ++p)
                probs[p * static_cast<std::size_t>(num_classes) + l] = channel[p];
        }
        for (std::size_t p = 0; p < n; ++p) {
            double* row = probs.data() + p * static_cast<std::size_t>(num_classes);
            double sum = std::accumulate(row, row + num_classes, 0.0);
            if (sum > 0.0)
                for (std::int32_t l = 0; l < num_classes; ++l) row[l] /= sum;
        }
    }
    return probs;
}

// ---------------------------------------------------------------------------
// PatchSoftmaxModel -- per-pixel multinomial logistic regression
// ---------------------------------------------------------------------------

/// Desk-scale stand-in for a real per-slice network: per-pixel softmax
/// regression over local features. The interface boundary is where a real
/// model would plug in.
struct PatchSoftmaxModel {
    std::int32_t num_classes = 0;
    int feature_count = 0;
    std::vector<double> weights;  // F x L, row-major (feature index slow)
    std::vector<double> bias;     // L

    PatchSoftmaxModel() = default;

    PatchSoftmaxModel(std::int32_t classes, int features)
        : num_classes(classes), feature_count(features),
          weights(static_cast<std::size_t>(features) * classes, 0.0),
          bias(static_cast<std::size_t>(classes), 0.0) {
        if (classes < 2) throw ConfigError("model needs at least two classes");
        if (features < 1) throw ConfigError("model needs at least one feature");
    }

    bool all_finite() const noexcept {
        for (double v : weights)
            if (!std::isfinite(v)) return false;
        for (double v : bias)
            if (!std::isfinite(v)) return false;
        return true;
    }

    nlohmann::json to_json() const {
        return {{"num_classes", num_classes},
                {"feature_count", feature_count},
                {"weights", weights},
                {"bias", bias}};
    }

    static PatchSoftmaxModel from_json(const nlohmann::json& j) {
        PatchSoftmaxModel m(j.at("num_classes").get<std::int32_t>(),
                            j.at("feature_count").get<int>());
        m.weights = j.at("weights").get<std::vector<double>>();
        m.bias = j.at("bias").get<std::vector<double>>();
        if (m.weights.size() != static_cast<std::size_t>(m.feature_count) * m.num_classes ||
            m.bias.size() != static_cast<std::size_t>(m.num_classes))
            throw FormatError("model parameter shapes inconsistent");
        if (!m.all_finite()) throw DataError("model parameters not finite");
        return m;
    }

    void save(const std::filesystem::path& path) const {
        std::ofstream out(path);
        if (!out) throw DataError("cannot write model file: " + path.string());
        out << to_json().dump(2) << "\n";
    }

    static PatchSoftmaxModel load(const std::filesystem::path& path) {
        std::ifstream in(path);
        if (!in) throw DataError("cannot open model file: " + path.string());
        nlohmann::json j;
        try {
            in >> j;
        } catch (const nlohmann::json::exception& e) {
            throw FormatError("invalid model JSON: " + std::string(e.what()));
        }
        return from_json(j);
    }
};

namespace detail {

inline void softmax_row(const double* logits, std::int32_t count, double* out) noexcept {
    double max_logit = logits[0];
    for (std::int32_t l = 1; l < count; ++l) max_logit = std::max(max_logit, logits[l]);
    double sum = 0.0;
    for (std::int32_t l = 0; l < count; ++l) {
        out[l] = std::exp(logits[l] - max_logit);
        sum += out[l];
    }
    for (std::int32_t l = 0; l < count; ++l) out[l] /= sum;
}

}  // namespace detail

/// softmax(features . weights + bias) per pixel; rows sum to 1.
inline std::vector<double> predict(const PatchSoftmaxModel& model,
                                   const std::vector<double>& image, int grid_size,
                                   int channels) {
    if (kFeaturesPerChannel * channels != model.feature_count)
        throw DataError("predict: image channel count does not match model features");
    std::vector<double> features = featurize(image, grid_size, channels);
    std::size_t n = static_cast<std::size_t>(grid_size) * grid_size;
    std::int32_t L = model.num_classes;
    int F = model.feature_count;
    std::vector<double> probs(n * static_cast<std::size_t>(L));
    std::vector<double> logits(static_cast<std::size_t>(L));
    for (std::size_t p = 0; p < n; ++p) {
        const double* x = features.data() + p * static_cast<std::size_t>(F);
        for (std::int32_t l = 0; l < L; ++l) logits[static_cast<std::size_t>(l)] = model.bias[static_cast<std::size_t>(l)];
        for (int f = 0; f < F; ++f) {
            double xf = x[f];
            const double* w = model.weights.data() + static_cast<std::size_t>(f) * L;
            for (std::int32_t l = 0; l < L; ++l) logits[static_cast<std::size_t>(l)] += xf * w[l];
        }
        detail::softmax_row(logits.data(), L, probs.data() + p * static_cast<std::size_t>(L));
    }
    return probs;
}

// ---------------------------------------------------------------------------
// Training
// ---------------------------------------------------------------------------

/// Weighted pixel-wise cross-entropy over one slice plus its analytic
/// gradient: loss = loss_weight * mean over pixels of -log p[label].
/// Gradients accumulate into grad_weights (F x L) and grad_bias (L).
inline double weighted_ce_loss_and_grad(const PatchSoftmaxModel& model, const Slice& slice,
                                        std::span<double> grad_weights,
                                        std::span<double> grad_bias) {
    if (!slice.labels) throw DataError("training slice has no labels");
    if (grad_weights.size() != model.weights.size() || grad_bias.size() != model.bias.size())
        throw DataError("gradient buffer shape mismatch");

    std::vector<double> features = featurize(slice.image, slice.grid_size, slice.channels);
    std::size_t n = static_cast<std::size_t>(slice.grid_size) * slice.grid_size;
    std::int32_t L = model.num_classes;
    int F = model.feature_count;
    double inv_n = 1.0 / static_cast<double>(n);
    double scale = slice.loss_weight * inv_n;

    std::fill(grad_weights.begin(), grad_weights.end(), 0.0);
    std::fill(grad_bias.begin(), grad_bias.end(), 0.0);

    std::vector<double> logits(static_cast<std::size_t>(L));
    std::vector<double> probs(static_cast<std::size_t>(L));
    double loss = 0.0;
    for (std::size_t p = 0; p < n; ++p) {
        std::int32_t target = (*slice.labels)[p];
        if (target < 0 || target >= L) throw DataError("training label outside [0, L)");
        const double* x = features.data() + p * static_cast<std::size_t>(F);
        for (std::int32_t l = 0; l < L; ++l) logits[static_cast<std::size_t>(l)] = model.bias[static_cast<std::size_t>(l)];
        for (int f = 0; f < F; ++f) {
            double xf = x[f];
            const double* w = model.weights.data() + static_cast<std::size_t>(f) * L;
            for (std::int32_t l = 0; l < L; ++l) logits[static_cast<std::size_t>(l)] += xf * w[l];
        }
        detail::softmax_row(logits.data(), L, probs.data());
        loss -= std::log(std::max(probs[static_cast<std::size_t>(target)], 1e-300));

        for (std::int32_t l = 0; l < L; ++l) {
            double delta = (probs[static_cast<std::size_t>(l)] - (l == target ? 1.0 : 0.0)) * scale;
            grad_bias[static_cast<std::size_t>(l)] += delta;
            for (int f = 0; f < F; ++f)
                grad_weights[static_cast<std::size_t>(f) * L + static_cast<std::size_t>(l)] += delta * x[f];
        }
    }
    return loss * scale;
}

/// Mini-batch SGD, one slice per step, slice order reshuffled each epoch.
/// Each pixel's loss is scaled by its slice's loss_weight. Returns the
/// per-epoch mean weighted loss; throws DivergenceError on non-finite loss.
inline std::vector<double> train(PatchSoftmaxModel& model, std::span<const Slice> slices,
                                 int epochs, double learning_rate, Rng& rng) {
    if (slices.empty()) throw DataError("train: no slices");
    for (const Slice& s : slices) {
        if (!s.labels) throw DataError("train: slice without labels");
        if (kFeaturesPerChannel * s.channels != model.feature_count)
            throw DataError("train: slice channels do not match model features");
        if (s.loss_weight < 0.0) throw DataError("train: negative loss weight");
    }

    std::vector<std::size_t> order(slices.size());
    std::iota(order.begin(), order.end(), 0);
    std::vector<double> grad_w(model.weights.size());
    std::vector<double> grad_b(model.bias.size());
    std::vector<double> curve;
    curve.reserve(static_cast<std::size_t>(epochs));

    for (int epoch = 0; epoch < epochs; ++epoch) {
        // Fisher-Yates with the caller's stream
        for (std::size_t i = order.size(); i > 1; --i) {
            std::size_t j = rng.uniform_int(i);
            std::swap(order[i - 1], order[j]);
        }
        double epoch_loss = 0.0;
        for (std::size_t idx : order) {
            double loss = weighted_ce_loss_and_grad(model, slices[idx], grad_w, grad_b);
            if (!std::isfinite(loss))
                throw DivergenceError("training loss diverged (epoch " +
                                      std::to_string(epoch) + "); lower the learning rate");
            for (std::size_t i = 0; i < grad_w.size(); ++i)
                model.weights[i] -= learning_rate * grad_w[i];
            for (std::size_t i = 0; i < grad_b.size(); ++i)
                model.bias[i] -= learning_rate * grad_b[i];
            epoch_loss += loss;
        }
        curve.push_back(epoch_loss / static_cast<double>(slices.size()));
    }
    return curve;
}

// ---------------------------------------------------------------------------
// SlicePredictor -- the pluggable per-slice interface
// ---------------------------------------------------------------------------

/// Behavioral contract: predict q x q x L probabilities for a slice, rows
/// normalized to sum 1. view/slice indices key the noise streams of
/// stochastic implementations.
class SlicePredictor {
public:
    virtual ~SlicePredictor() = default;
    virtual std::vector<double> predict_slice(const Slice& slice, std::int32_t num_classes,
                                              std::size_t view_index,
                                              std::size_t slice_index) = 0;
};

class OraclePredictor final : public SlicePredictor {
public:
    std::vector<double> predict_slice(const Slice& slice, std::int32_t num_classes,
                                      std::size_t, std::size_t) override {
        if (!slice.labels) throw DataError("oracle predictor needs slice labels");
        return oracle_predict(*slice.labels, slice.grid_size, num_classes);
    }
};

class NoisyOraclePredictor final : public SlicePredictor {
public:
    explicit NoisyOraclePredictor(NoisyOracleConfig config) : config_(config) {
        config_.validate();
    }

    std::vector<double> predict_slice(const Slice& slice, std::int32_t num_classes,
                                      std::size_t view_index,
                                      std::size_t slice_index) override {
        if (!slice.labels) throw DataError("noisy oracle predictor needs slice labels");
        return noisy_oracle_predict(*slice.labels, slice.grid_size, num_classes, config_,
                                    view_index, slice_index);
    }

private:
    NoisyOracleConfig config_;
};

class ModelPredictor final : public SlicePredictor {
public:
    explicit ModelPredictor(PatchSoftmaxModel model) : model_(std::move(model)) {}

    std::vector<double> predict_slice(const Slice& slice, std::int32_t num_classes,
                                      std::size_t, std::size_t) override {
        if (num_classes != model_.num_classes)
            throw DataError("model class count does not match request");
        return predict(model_, slice.image, slice.grid_size, slice.channels);
    }

private:
    PatchSoftmaxModel model_;
};

}  // namespace mpseg
