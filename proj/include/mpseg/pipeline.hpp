#pragma once
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <memory>
#include <optional>
#include <random>
#include <string>
#include <utility>
#include <vector>

#include "json.hpp"

#include "mpseg/augment.hpp"
#include "mpseg/errors.hpp"
#include "mpseg/evaluation.hpp"
#include "mpseg/fusion.hpp"
#include "mpseg/io.hpp"
#include "mpseg/phantom.hpp"
#include "mpseg/predictor.hpp"
#include "mpseg/preprocess.hpp"
#include "mpseg/sampler.hpp"
#include "mpseg/views.hpp"

namespace mpseg {

// ---------------------------------------------------------------------------
// JSON helpers for geometry types
// ---------------------------------------------------------------------------

inline nlohmann::json to_json(const Vec3& v) { return {v.x, v.y, v.z}; }

inline Vec3 vec3_from_json(const nlohmann::json& j) {
    return {j.at(0).get<double>(), j.at(1).get<double>(), j.at(2).get<double>()};
}

inline nlohmann::json to_json(const ViewAxis& a) {
    return {{"normal", to_json(a.normal)}, {"u", to_json(a.u)}, {"v", to_json(a.v)}};
}

inline ViewAxis view_axis_from_json(const nlohmann::json& j) {
    ViewAxis a{vec3_from_json(j.at("normal")), vec3_from_json(j.at("u")),
               vec3_from_json(j.at("v"))};
    if (!a.orthonormal(1e-6)) throw GeometryError("view axis in file is not orthonormal");
    return a;
}

inline nlohmann::json to_json(const ViewSet& set) {
    nlohmann::json axes = nlohmann::json::array();
    for (const ViewAxis& a : set.axes) axes.push_back(to_json(a));
    return {{"seed", set.seed}, {"axes", axes}};
}

inline ViewSet viewset_from_json(const nlohmann::json& j) {
    ViewSet set;
    set.seed = j.value("seed", std::uint64_t{0});
    for (const auto& a : j.at("axes")) set.axes.push_back(view_axis_from_json(a));
    if (set.axes.empty()) throw ConfigError("view set holds no axes");
    return set;
}

inline nlohmann::json to_json(const SamplingParams& p) {
    return {{"q", p.grid_size}, {"m", p.extent_mm}, {"r", p.spacing_mm}};
}

inline SamplingParams sampling_params_from_json(const nlohmann::json& j) {
    SamplingParams p{j.at("q").get<int>(), j.at("m").get<double>(),
                     j.at("r").get<double>()};
    p.validate();
    return p;
}

inline nlohmann::json to_json(const Affine4& a) { return a.m; }

inline Affine4 affine_from_json(const nlohmann::json& j) {
    Affine4 a;
    for (std::size_t i = 0; i < 16; ++i) a.m[i] = j.at(i).get<double>();
    return a;
}

inline void write_json_file(const std::filesystem::path& path, const nlohmann::json& j) {
    std::ofstream out(path);
    if (!out) throw DataError("cannot write file: " + path.string());
    out << j.dump(2) << "\n";
}

inline nlohmann::json read_json_file(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw DataError("cannot open file: " + path.string());
    nlohmann::json j;
    try {
        in >> j;
    } catch (const nlohmann::json::exception& e) {
        throw FormatError("invalid JSON in " + path.string() + ": " + e.what());
    }
    return j;
}

// ---------------------------------------------------------------------------
// PipelineConfig
// ---------------------------------------------------------------------------

/// Full pipeline configuration. Defaults follow the standard policy
/// constants: augmentation probability 1/3, sigma in [20, 30], alpha in
/// [100, 500], augmented loss weight 1/3, minimum batch size 8.
struct PipelineConfig {
    std::string volume_path;        // empty: use the phantom source
    std::string labels_path;
    std::optional<PhantomSpec> phantom;

    std::string out_dir = "out";
    int k = 6;
    double min_angle_deg = 20.0;
    std::optional<std::uint64_t> seed;
    unsigned threads = 1;
    bool recenter = false;  // center plane grids on the volume center

    std::optional<int> grid_size;       // q override
    std::optional<double> spacing_mm;   // r override
    std::optional<double> extent_mm;    // m override
    std::uint64_t memory_budget_bytes = 8ull << 30;
    int batch_size_min = 8;

    AugmentPolicy augment;
    bool augment_enabled = true;

    std::string predictor = "oracle";  // oracle | noisy-oracle | patch-softmax
    double flip_rate = 0.2;
    double blur_sigma = 0.0;
    int epochs = 20;
    double learning_rate = 0.1;
    bool scale_fallback_unit_iqr = false;

    nlohmann::json to_json() const {
        nlohmann::json sampling;
        sampling["q"] = grid_size ? nlohmann::json(*grid_size) : nlohmann::json(nullptr);
        sampling["r"] = spacing_mm ? nlohmann::json(*spacing_mm) : nlohmann::json(nullptr);
        sampling["m"] = extent_mm ? nlohmann::json(*extent_mm) : nlohmann::json(nullptr);
        return {
            {"volume", volume_path.empty() ? nlohmann::json(nullptr) : nlohmann::json(volume_path)},
            {"labels", labels_path.empty() ? nlohmann::json(nullptr) : nlohmann::json(labels_path)},
            {"phantom_spec", phantom ? phantom->to_json() : nlohmann::json(nullptr)},
            {"out", out_dir},
            {"k", k},
            {"min_angle_deg", min_angle_deg},
            {"seed", seed ? nlohmann::json(*seed) : nlohmann::json(nullptr)},
            {"threads", threads},
            {"recenter", recenter},
            {"sampling", sampling},
            {"memory_budget_bytes", memory_budget_bytes},
            {"batch_size_min", batch_size_min},
            {"augment",
             {{"enabled", augment_enabled},
              {"probability", augment.probability},
              {"sigma_range", {augment.sigma_low, augment.sigma_high}},
              {"alpha_range", {augment.alpha_low, augment.alpha_high}},
              {"loss_weight", augment.augmented_loss_weight},
              {"seed", augment.seed}}},
            {"predictor", predictor},
            {"flip_rate", flip_rate},
            {"blur_sigma", blur_sigma},
            {"train", {{"epochs", epochs}, {"learning_rate", learning_rate}}},
            {"scale_fallback_unit_iqr", scale_fallback_unit_iqr}};
    }

    /// Overlays JSON fields onto this config (missing fields keep their
    /// current values), so flags parsed later can still take precedence.
    void apply_json(const nlohmann::json& j) {
        try {
            if (j.contains("volume") && !j["volume"].is_null())
                volume_path = j["volume"].get<std::string>();
            if (j.contains("labels") && !j["labels"].is_null())
                labels_path = j["labels"].get<std::string>();
            if (j.contains("phantom_spec") && !j["phantom_spec"].is_null()) {
                if (j["phantom_spec"].is_string())
                    phantom = PhantomSpec::from_json(read_json_file(j["phantom_spec"].get<std::string>()));
                else
                    phantom = PhantomSpec::from_json(j["phantom_spec"]);
            }
            if (j.contains("out")) out_dir = j["out"].get<std::string>();
            if (j.contains("k")) k = j["k"].get<int>();
            if (j.contains("min_angle_deg")) min_angle_deg = j["min_angle_deg"].get<double>();
            if (j.contains("seed") && !j["seed"].is_null())
                seed = j["seed"].get<std::uint64_t>();
            if (j.contains("threads")) threads = j["threads"].get<unsigned>();
            if (j.contains("recenter")) recenter = j["recenter"].get<bool>();
            if (j.contains("sampling")) {
                const auto& s = j["sampling"];
                if (s.contains("q") && !s["q"].is_null()) grid_size = s["q"].get<int>();
                if (s.contains("r") && !s["r"].is_null()) spacing_mm = s["r"].get<double>();
                if (s.contains("m") && !s["m"].is_null()) extent_mm = s["m"].get<double>();
            }
            if (j.contains("memory_budget_bytes"))
                memory_budget_bytes = j["memory_budget_bytes"].get<std::uint64_t>();
            if (j.contains("batch_size_min")) batch_size_min = j["batch_size_min"].get<int>();
            if (j.contains("augment")) {
                const auto& a = j["augment"];
                if (a.contains("enabled")) augment_enabled = a["enabled"].get<bool>();
                if (a.contains("probability")) augment.probability = a["probability"].get<double>();
                if (a.contains("sigma_range")) {
                    augment.sigma_low = a["sigma_range"].at(0).get<double>();
                    augment.sigma_high = a["sigma_range"].at(1).get<double>();
                }
                if (a.contains("alpha_range")) {
                    augment.alpha_low = a["alpha_range"].at(0).get<double>();
                    augment.alpha_high = a["alpha_range"].at(1).get<double>();
                }
                if (a.contains("loss_weight"))
                    augment.augmented_loss_weight = a["loss_weight"].get<double>();
                if (a.contains("seed")) augment.seed = a["seed"].get<std::uint64_t>();
            }
            if (j.contains("predictor")) predictor = j["predictor"].get<std::string>();
            if (j.contains("flip_rate")) flip_rate = j["flip_rate"].get<double>();
            if (j.contains("blur_sigma")) blur_sigma = j["blur_sigma"].get<double>();
            if (j.contains("train")) {
                const auto& t = j["train"];
                if (t.contains("epochs")) epochs = t["epochs"].get<int>();
                if (t.contains("learning_rate")) learning_rate = t["learning_rate"].get<double>();
            }
            if (j.contains("scale_fallback_unit_iqr"))
                scale_fallback_unit_iqr = j["scale_fallback_unit_iqr"].get<bool>();
        } catch (const nlohmann::json::exception& e) {
            throw ConfigError("invalid config: " + std::string(e.what()));
        }
    }
};

/// Checks every config invariant and returns ALL violations (empty when the
/// config is valid). Never partially applies anything.
inline std::vector<std::string> validate_config(const PipelineConfig& c) {
    std::vector<std::string> violations;
    auto bad = [&violations](const std::string& msg) { violations.push_back(msg); };

    if (c.k < 1) bad("k: view count must be >= 1");
    if (c.min_angle_deg < 0.0 || c.min_angle_deg > 90.0)
        bad("min_angle_deg: must lie in [0, 90]");
    if (c.augment.probability < 0.0 || c.augment.probability > 1.0)
        bad("augment.probability: must lie in [0, 1]");
    if (!(c.augment.sigma_low > 0.0) || c.augment.sigma_low > c.augment.sigma_high)
        bad("augment.sigma_range: must be positive with low <= high");
    if (c.augment.alpha_low < 0.0 || c.augment.alpha_low > c.augment.alpha_high)
        bad("augment.alpha_range: must be non-negative with low <= high");
    if (!(c.augment.augmented_loss_weight > 0.0) || c.augment.augmented_loss_weight > 1.0)
        bad("augment.loss_weight: must lie in (0, 1]");
    if (c.predictor != "oracle" && c.predictor != "noisy-oracle" &&
        c.predictor != "patch-softmax")
        bad("predictor: must be one of oracle, noisy-oracle, patch-softmax");
    if (c.flip_rate < 0.0 || c.flip_rate >= 1.0) bad("flip_rate: must lie in [0, 1)");
    if (c.blur_sigma < 0.0) bad("blur_sigma: must be >= 0");
    if (c.epochs < 1) bad("train.epochs: must be >= 1");
    if (!(c.learning_rate > 0.0)) bad("train.learning_rate: must be > 0");
    if (c.batch_size_min < 1) bad("batch_size_min: must be >= 1");
    if (c.grid_size && *c.grid_size < 8) bad("sampling.q: must be >= 8");
    if (c.spacing_mm && !(*c.spacing_mm > 0.0)) bad("sampling.r: must be > 0");
    if (c.extent_mm && !(*c.extent_mm > 0.0)) bad("sampling.m: must be > 0");
    if (c.grid_size && c.spacing_mm && c.extent_mm &&
        std::abs(*c.extent_mm - (*c.grid_size - 1) * *c.spacing_mm) > 1e-9)
        bad("sampling: m must equal (q - 1) * r when all three are given");
    if (!c.volume_path.empty() && !std::filesystem::exists(c.volume_path))
        bad("missing file: volume: " + c.volume_path);
    if (!c.labels_path.empty() && !std::filesystem::exists(c.labels_path))
        bad("missing file: labels: " + c.labels_path);
    return violations;
}

inline void require_valid(const PipelineConfig& c) {
    std::vector<std::string> violations = validate_config(c);
    if (violations.empty()) return;
    std::string msg = "invalid configuration:";
    bool all_missing_files = true;
    for (const std::string& v : violations) {
        msg += "\n  - " + v;
        if (v.rfind("missing file:", 0) != 0) all_missing_files = false;
    }
    // absent inputs are a data problem, not a structural config problem
    if (all_missing_files) throw DataError(msg);
    throw ConfigError(msg);
}

/// Two nested ellipsoids in a 64^3 millimetre-unit grid; the stock phantom
/// used when no input volume is given.
inline PhantomSpec default_phantom_spec(std::uint64_t seed) {
    PhantomSpec spec;
    spec.shape = {64, 64, 64};
    spec.spacing_mm = {1, 1, 1};
    spec.noise_sigma = 0.05;  // 5% of the unit class contrast
    spec.seed = seed;
    spec.bodies = {
        {{0, 0, 0}, {24, 20, 16}, 1, 1.0},
        {{0, 0, 0}, {13, 11, 9}, 2, 2.0},
    };
    return spec;
}

// ---------------------------------------------------------------------------
// Stack directory format
// ---------------------------------------------------------------------------
// stacks/: one raw+JSON 3D file per view (shape [q, q, n_slices, C]) named
// view_###.json, labels as view_###_labels.json, plus manifest.json with
// the views, params, offsets and target geometry.

namespace detail {

inline std::string view_file_stem(std::size_t index) {
    char buf[16];
    std::snprintf(buf, sizeof buf, "view_%03zu", index);
    return buf;
}

/// Affine placing stack voxel (a, b, w) in scanner space.
inline Affine4 stack_affine(const ViewAxis& view, const SamplingParams& params,
                            const Vec3& center_mm, double first_offset_mm) {
    double half = (params.grid_size - 1) / 2.0;
    Vec3 origin = center_mm - half * params.spacing_mm * view.u -
                  half * params.spacing_mm * view.v + first_offset_mm * view.normal;
    Affine4 a;
    a.at(0, 0) = view.u.x * params.spacing_mm;
    a.at(1, 0) = view.u.y * params.spacing_mm;
    a.at(2, 0) = view.u.z * params.spacing_mm;
    a.at(0, 1) = view.v.x * params.spacing_mm;
    a.at(1, 1) = view.v.y * params.spacing_mm;
    a.at(2, 1) = view.v.z * params.spacing_mm;
    a.at(0, 2) = view.normal.x * params.spacing_mm;
    a.at(1, 2) = view.normal.y * params.spacing_mm;
    a.at(2, 2) = view.normal.z * params.spacing_mm;
    a.set_translation(origin);
    return a;
}

}  // namespace detail

struct StackSetManifest {
    SamplingParams params;
    Vec3 center_mm{0, 0, 0};
    std::vector<ViewAxis> views;
    std::vector<double> offsets;
    bool has_labels = false;
    std::int32_t num_classes = 0;
    double background_fill = 0.0;
    std::size_t channels = 1;
    TargetGeometry target;

    nlohmann::json to_json() const {
        nlohmann::json views_json = nlohmann::json::array();
        for (const ViewAxis& v : views) views_json.push_back(mpseg::to_json(v));
        return {{"params", mpseg::to_json(params)},
                {"center", mpseg::to_json(center_mm)},
                {"views", views_json},
                {"offsets", offsets},
                {"has_labels", has_labels},
                {"num_classes", num_classes},
                {"background_fill", background_fill},
                {"channels", channels},
                {"target",
                 {{"shape", {target.dim_x, target.dim_y, target.dim_z}},
                  {"affine", mpseg::to_json(target.affine)}}}};
    }

    static StackSetManifest from_json(const nlohmann::json& j) {
        StackSetManifest m;
        try {
            m.params = sampling_params_from_json(j.at("params"));
            m.center_mm = vec3_from_json(j.at("center"));
            for (const auto& v : j.at("views")) m.views.push_back(view_axis_from_json(v));
            m.offsets = j.at("offsets").get<std::vector<double>>();
            m.has_labels = j.at("has_labels").get<bool>();
            m.num_classes = j.at("num_classes").get<std::int32_t>();
            m.background_fill = j.at("background_fill").get<double>();
            m.channels = j.at("channels").get<std::size_t>();
            m.target.dim_x = j.at("target").at("shape").at(0).get<std::size_t>();
            m.target.dim_y = j.at("target").at("shape").at(1).get<std::size_t>();
            m.target.dim_z = j.at("target").at("shape").at(2).get<std::size_t>();
            m.target.affine = affine_from_json(j.at("target").at("affine"));
        } catch (const nlohmann::json::exception& e) {
            throw FormatError("invalid stack manifest: " + std::string(e.what()));
        }
        return m;
    }
};

/// Writes a slice stack as one 4D raw+JSON file per view (+ labels file).
inline void save_stack(const SliceStack& stack, const std::filesystem::path& dir,
                       std::size_t view_index) {
    std::filesystem::create_directories(dir);
    int q = stack.params.grid_size;
    std::size_t n = stack.slices.size();
    if (n < 2) throw DataError("stack too short to save");
    std::size_t channels = static_cast<std::size_t>(stack.slices.front().channels);
    Affine4 affine = detail::stack_affine(stack.view, stack.params, stack.center_mm,
                                          stack.slices.front().offset_mm);

    Volume image_stack(static_cast<std::size_t>(q), static_cast<std::size_t>(q), n,
                       channels, affine);
    image_stack.background_fill = stack.slices.front().background_fill;
    for (std::size_t w = 0; w < n; ++w) {
        const Slice& s = stack.slices[w];
        for (int a = 0; a < q; ++a)
            for (int b = 0; b < q; ++b)
                for (std::size_t c = 0; c < channels; ++c)
                    image_stack.at(static_cast<std::size_t>(a), static_cast<std::size_t>(b),
                                   w, c) = s.image[s.pixel_index(a, b) * channels + c];
    }
    std::string stem = detail::view_file_stem(view_index);
    save_volume(image_stack, dir / (stem + ".json"));

    if (stack.slices.front().labels) {
        LabelMap label_stack(static_cast<std::size_t>(q), static_cast<std::size_t>(q), n,
                             std::max<std::int32_t>(1, stack.slices.front().num_classes),
                             affine);
        for (std::size_t w = 0; w < n; ++w) {
            const Slice& s = stack.slices[w];
            for (int a = 0; a < q; ++a)
                for (int b = 0; b < q; ++b)
                    label_stack.at(static_cast<std::size_t>(a), static_cast<std::size_t>(b),
                                   w) = (*s.labels)[s.pixel_index(a, b)];
        }
        save_labelmap(label_stack, dir / (stem + "_labels.json"));
    }
}

/// Reads back one view's stack written by save_stack.
inline SliceStack load_stack(const std::filesystem::path& dir, std::size_t view_index,
                             const StackSetManifest& manifest) {
    std::string stem = detail::view_file_stem(view_index);
    Volume image_stack = load_volume(dir / (stem + ".json"));
    int q = manifest.params.grid_size;
    std::size_t n = manifest.offsets.size();
    if (image_stack.dim_x != static_cast<std::size_t>(q) ||
        image_stack.dim_y != static_cast<std::size_t>(q) || image_stack.dim_z != n)
        throw FormatError("stack file shape does not match manifest");

    std::optional<LabelMap> label_stack;
    auto labels_path = dir / (stem + "_labels.json");
    if (manifest.has_labels) {
        label_stack = load_labelmap(labels_path, manifest.num_classes);
        if (label_stack->dim_x != static_cast<std::size_t>(q) ||
            label_stack->dim_y != static_cast<std::size_t>(q) || label_stack->dim_z != n)
            throw FormatError("label stack shape does not match manifest");
    }

    SliceStack stack;
    stack.view = manifest.views.at(view_index);
    stack.params = manifest.params;
    stack.center_mm = manifest.center_mm;
    stack.slices.resize(n);
    for (std::size_t w = 0; w < n; ++w) {
        Slice& s = stack.slices[w];
        s.grid_size = q;
        s.channels = static_cast<int>(image_stack.channels);
        s.view = stack.view;
        s.offset_mm = manifest.offsets[w];
        s.background_fill = manifest.background_fill;
        s.num_classes = manifest.num_classes;
        s.image.resize(static_cast<std::size_t>(q) * q * image_stack.channels);
        for (int a = 0; a < q; ++a)
            for (int b = 0; b < q; ++b)
                for (std::size_t c = 0; c < image_stack.channels; ++c)
                    s.image[s.pixel_index(a, b) * image_stack.channels + c] =
                        image_stack.at(static_cast<std::size_t>(a),
                                       static_cast<std::size_t>(b), w, c);
        if (label_stack) {
            s.labels.emplace(static_cast<std::size_t>(q) * q);
            for (int a = 0; a < q; ++a)
                for (int b = 0; b < q; ++b)
                    (*s.labels)[s.pixel_index(a, b)] =
                        label_stack->at(static_cast<std::size_t>(a),
                                        static_cast<std::size_t>(b), w);
        }
    }
    return stack;
}

// ---------------------------------------------------------------------------
// Prediction directory format (per-view probability stacks)
// ---------------------------------------------------------------------------

inline void save_view_prediction(const ViewPrediction& pred,
                                 const std::filesystem::path& dir,
                                 std::size_t view_index) {
    std::filesystem::create_directories(dir);
    pred.validate();
    int q = pred.params.grid_size;
    std::size_t n = pred.prob_slices.size();
    std::vector<double> offsets = slice_offsets(pred.params);
    Affine4 affine = detail::stack_affine(pred.view, pred.params, pred.center_mm, offsets.front());
    Volume prob_stack(static_cast<std::size_t>(q), static_cast<std::size_t>(q), n,
                      static_cast<std::size_t>(pred.num_classes), affine);
    for (std::size_t w = 0; w < n; ++w)
        for (int a = 0; a < q; ++a)
            for (int b = 0; b < q; ++b)
                for (std::int32_t l = 0; l < pred.num_classes; ++l)
                    prob_stack.at(static_cast<std::size_t>(a), static_cast<std::size_t>(b),
                                  w, static_cast<std::size_t>(l)) =
                        pred.prob_slices[w][(static_cast<std::size_t>(a) * q + b) *
                                                pred.num_classes +
                                            l];
    save_volume(prob_stack, dir / (detail::view_file_stem(view_index) + ".json"));
}

inline ViewPrediction load_view_prediction(const std::filesystem::path& dir,
                                           std::size_t view_index,
                                           const StackSetManifest& manifest) {
    Volume prob_stack = load_volume(dir / (detail::view_file_stem(view_index) + ".json"));
    int q = manifest.params.grid_size;
    std::size_t n = manifest.offsets.size();
    if (prob_stack.dim_x != static_cast<std::size_t>(q) ||
        prob_stack.dim_y != static_cast<std::size_t>(q) || prob_stack.dim_z != n ||
        prob_stack.channels != static_cast<std::size_t>(manifest.num_classes))
        throw FormatError("prediction stack shape does not match manifest");

    ViewPrediction pred;
    pred.view = manifest.views.at(view_index);
    pred.params = manifest.params;
    pred.center_mm = manifest.center_mm;
    pred.num_classes = manifest.num_classes;
    pred.prob_slices.resize(n);
    for (std::size_t w = 0; w < n; ++w) {
        auto& s = pred.prob_slices[w];
        s.resize(static_cast<std::size_t>(q) * q * prob_stack.channels);
        for (int a = 0; a < q; ++a)
            for (int b = 0; b < q; ++b)
                for (std::size_t l = 0; l < prob_stack.channels; ++l)
                    s[(static_cast<std::size_t>(a) * q + b) * prob_stack.channels + l] =
                        prob_stack.at(static_cast<std::size_t>(a),
                                      static_cast<std::size_t>(b), w, l);
    }
    pred.validate();
    return pred;
}

// ---------------------------------------------------------------------------
// Pipeline steps shared by the CLI subcommands
// ---------------------------------------------------------------------------

struct PipelineInput {
    Volume volume;
    std::optional<LabelMap> labels;
    std::optional<PhantomSpec> phantom;  // set when generated
};

/// Resolves the pipeline source: an input volume (with optional labels) or
/// a generated phantom (the stock one when nothing is configured).
inline PipelineInput resolve_input(const PipelineConfig& config, std::uint64_t seed) {
    PipelineInput input;
    if (!config.volume_path.empty()) {
        input.volume = load_volume(config.volume_path);
        if (!config.labels_path.empty())
            input.labels = load_labelmap(config.labels_path);
    } else {
        PhantomSpec spec = config.phantom ? *config.phantom : default_phantom_spec(seed);
        Phantom phantom = make_phantom(spec, config.threads);
        input.volume = std::move(phantom.volume);
        input.labels = std::move(phantom.labels);
        input.phantom = spec;
    }
    return input;
}

/// Resolves (q, m, r) from overrides or the fitting heuristic.
inline FitResult resolve_sampling_params(const PipelineConfig& config,
                                         const Volume& volume) {
    if (config.grid_size || config.spacing_mm || config.extent_mm) {
        int q;
        double r;
        if (config.grid_size && config.spacing_mm) {
            q = *config.grid_size;
            r = *config.spacing_mm;
        } else if (config.grid_size && config.extent_mm) {
            q = *config.grid_size;
            r = *config.extent_mm / (q - 1);
        } else if (config.spacing_mm && config.extent_mm) {
            r = *config.spacing_mm;
            q = static_cast<int>(std::round(*config.extent_mm / r)) + 1;
        } else {
            throw ConfigError("sampling overrides need two of q, r, m");
        }
        FitResult result;
        result.params = SamplingParams::from_grid(q, r);
        return result;
    }

    Vec3 spacing{norm({volume.affine.at(0, 0), volume.affine.at(1, 0), volume.affine.at(2, 0)}),
                 norm({volume.affine.at(0, 1), volume.affine.at(1, 1), volume.affine.at(2, 1)}),
                 norm({volume.affine.at(0, 2), volume.affine.at(1, 2), volume.affine.at(2, 2)})};
    VolumeGeometry geometry{{volume.dim_x, volume.dim_y, volume.dim_z}, spacing,
                            volume.channels};
    return fit_sampling_params(std::span{&geometry, 1}, config.memory_budget_bytes,
                               config.batch_size_min);
}

inline std::unique_ptr<SlicePredictor> make_predictor(const PipelineConfig& config,
                                                      std::uint64_t seed,
                                                      std::optional<PatchSoftmaxModel> model) {
    if (config.predictor == "oracle") return std::make_unique<OraclePredictor>();
    if (config.predictor == "noisy-oracle")
        return std::make_unique<NoisyOraclePredictor>(
            NoisyOracleConfig{config.flip_rate, config.blur_sigma, seed});
    if (config.predictor == "patch-softmax") {
        if (!model) throw ConfigError("patch-softmax predictor needs a trained model");
        return std::make_unique<ModelPredictor>(std::move(*model));
    }
    throw ConfigError("unknown predictor: " + config.predictor);
}

/// Trains the stand-in model on all slices of the stacks, with each slice
/// passed through the augmentation policy first (streams keyed by slice
/// index).
inline PatchSoftmaxModel train_from_stacks(const std::vector<SliceStack>& stacks,
                                           const AugmentPolicy& policy, bool augment_enabled,
                                           int epochs, double learning_rate,
                                           std::uint64_t seed,
                                           std::vector<double>* loss_curve = nullptr) {
    std::vector<Slice> training;
    std::size_t slice_index = 0;
    std::int32_t num_classes = 0;
    int channels = 0;
    for (const SliceStack& stack : stacks) {
        for (const Slice& slice : stack.slices) {
            if (!slice.labels) throw DataError("training requires sampled labels");
            num_classes = std::max(num_classes, slice.num_classes);
            channels = slice.channels;
            if (augment_enabled) {
                Rng rng = augment_rng(policy, slice_index);
                training.push_back(maybe_augment(slice, policy, rng));
            } else {
                training.push_back(slice);
            }
            ++slice_index;
        }
    }
    if (num_classes < 2) throw DataError("training needs at least two classes");

    PatchSoftmaxModel model(num_classes, kFeaturesPerChannel * channels);
    Rng train_rng(stream_seed(seed, 0x747261696e));
    std::vector<double> curve = train(model, training, epochs, learning_rate, train_rng);
    if (loss_curve) *loss_curve = std::move(curve);
    return model;
}

// ---------------------------------------------------------------------------
// End-to-end pipeline
// ---------------------------------------------------------------------------

struct PipelineResult {
    nlohmann::json report;
    nlohmann::json manifest;
    std::optional<DiceReport> dice;
};

/// Runs phantom/load -> preprocess -> views -> sample -> (train) -> predict
/// -> fuse -> evaluate and writes the fixed output layout: manifest.json,
/// views.json, stacks/, pred/, fused/, report.json.
inline PipelineResult run_pipeline(PipelineConfig config) {
    require_valid(config);
    if (!config.seed) {
        std::random_device rd;
        config.seed = (static_cast<std::uint64_t>(rd()) << 32) ^ rd();
    }
    std::uint64_t seed = *config.seed;
    if (config.augment.seed == 0) config.augment.seed = seed;

    std::filesystem::path out(config.out_dir);
    std::filesystem::create_directories(out);

    PipelineInput input = resolve_input(config, seed);
    if (input.phantom) config.phantom = input.phantom;  // manifest records the spec

    auto [scaled, scale_report] = robust_scale(input.volume, config.scale_fallback_unit_iqr);

    ViewSet views = sample_view_axes(config.k, seed, config.min_angle_deg);
    write_json_file(out / "views.json", to_json(views));

    FitResult fit = resolve_sampling_params(config, scaled);
    const SamplingParams& params = fit.params;
    config.grid_size = params.grid_size;
    config.spacing_mm = params.spacing_mm;
    config.extent_mm = params.extent_mm;

    Vec3 center{0, 0, 0};
    if (config.recenter) {
        Vec3 lo = scaled.affine.apply({0, 0, 0});
        Vec3 hi = scaled.affine.apply({static_cast<double>(scaled.dim_x - 1),
                                       static_cast<double>(scaled.dim_y - 1),
                                       static_cast<double>(scaled.dim_z - 1)});
        center = (lo + hi) * 0.5;
    }

    TargetGeometry target{scaled.dim_x, scaled.dim_y, scaled.dim_z, scaled.affine};
    std::int32_t num_classes = input.labels ? input.labels->num_classes : 0;

    // sample
    std::vector<SliceStack> stacks;
    stacks.reserve(views.size());
    const LabelMap* labels_ptr = input.labels ? &*input.labels : nullptr;
    for (const ViewAxis& view : views.axes)
        stacks.push_back(sample_stack(scaled, labels_ptr, view, params, center, config.threads));

    StackSetManifest stack_manifest;
    stack_manifest.params = params;
    stack_manifest.center_mm = center;
    stack_manifest.views = views.axes;
    stack_manifest.offsets = slice_offsets(params);
    stack_manifest.has_labels = labels_ptr != nullptr;
    stack_manifest.num_classes = num_classes;
    stack_manifest.background_fill = scaled.background_fill;
    stack_manifest.channels = scaled.channels;
    stack_manifest.target = target;
    std::filesystem::create_directories(out / "stacks");
    for (std::size_t i = 0; i < stacks.size(); ++i) save_stack(stacks[i], out / "stacks", i);
    write_json_file(out / "stacks" / "manifest.json", stack_manifest.to_json());

    // train when requested
    std::optional<PatchSoftmaxModel> model;
    std::vector<double> loss_curve;
    if (config.predictor == "patch-softmax") {
        model = train_from_stacks(stacks, config.augment, config.augment_enabled,
                                  config.epochs, config.learning_rate, seed, &loss_curve);
        model->save(out / "model.json");
        num_classes = model->num_classes;
    }
    if (num_classes < 2) throw ConfigError("pipeline needs labels or a trained model");

    // predict + reconstruct
    std::unique_ptr<SlicePredictor> predictor = make_predictor(config, seed, std::move(model));
    std::filesystem::create_directories(out / "pred");
    std::vector<ProbVolume> per_view;
    per_view.reserve(stacks.size());
    for (std::size_t vi = 0; vi < stacks.size(); ++vi) {
        ViewPrediction pred;
        pred.view = stacks[vi].view;
        pred.params = params;
        pred.center_mm = center;
        pred.num_classes = num_classes;
        pred.prob_slices.reserve(stacks[vi].slices.size());
        for (std::size_t si = 0; si < stacks[vi].slices.size(); ++si)
            pred.prob_slices.push_back(
                predictor->predict_slice(stacks[vi].slices[si], num_classes, vi, si));
        save_view_prediction(pred, out / "pred", vi);
        per_view.push_back(reconstruct_view(pred, target, config.threads));
    }
    write_json_file(out / "pred" / "manifest.json", stack_manifest.to_json());

    // fuse
    ProbVolume fused = fuse_views(per_view, config.threads);
    LabelMap fused_labels = argmax_labels(fused);
    std::filesystem::create_directories(out / "fused");
    save_probvolume(fused, out / "fused" / "probs.json");
    save_labelmap(fused_labels, out / "fused" / "labels.json");

    // evaluate + report
    PipelineResult result;
    nlohmann::json report;
    report["coverage_fraction"] = coverage_fraction(fused);
    report["scale_report"] = scale_report.to_json();
    if (!loss_curve.empty()) report["loss_curve"] = loss_curve;
    if (input.labels) {
        LabelMap truth = *input.labels;
        truth.num_classes = std::max(truth.num_classes, fused_labels.num_classes);
        fused_labels.num_classes = truth.num_classes;
        DiceReport dice = dice_per_class(fused_labels, truth);
        report["dice"] = dice.to_json();
        result.dice = dice;
    }
    write_json_file(out / "report.json", report);

    nlohmann::json manifest = config.to_json();
    manifest["command"] = "pipeline";
    write_json_file(out / "manifest.json", manifest);

    result.report = report;
    result.manifest = manifest;
    return result;
}

}  // namespace mpseg
