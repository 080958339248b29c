// Command-line front end for the multi-planar sampling / fusion toolkit.

#include <cstdint>
#include <filesystem>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "json.hpp"

#include "mpseg/mpseg.hpp"

namespace fs = std::filesystem;
using namespace mpseg;

namespace {

PhantomSpec phantom_from_option(const std::string& spec_path, std::uint64_t seed) {
    if (spec_path.empty()) return default_phantom_spec(seed);
    PhantomSpec spec = PhantomSpec::from_json(read_json_file(spec_path));
    return spec;
}

StackSetManifest read_stack_manifest(const fs::path& dir) {
    return StackSetManifest::from_json(read_json_file(dir / "manifest.json"));
}

std::vector<SliceStack> load_all_stacks(const fs::path& dir, const StackSetManifest& m) {
    std::vector<SliceStack> stacks;
    stacks.reserve(m.views.size());
    for (std::size_t i = 0; i < m.views.size(); ++i) stacks.push_back(load_stack(dir, i, m));
    return stacks;
}

void register_augment_flags(CLI::App* cmd, AugmentPolicy& policy, bool* disable) {
    cmd->add_option("--augment-probability", policy.probability,
                    "probability of deforming a slice");
    cmd->add_option("--sigma-range", [&policy](const std::vector<std::string>& vals) {
        policy.sigma_low = std::stod(vals.at(0));
        policy.sigma_high = std::stod(vals.at(1));
        return true;
    }, "smoothness range (two values, pixels)")->expected(2);
    cmd->add_option("--alpha-range", [&policy](const std::vector<std::string>& vals) {
        policy.alpha_low = std::stod(vals.at(0));
        policy.alpha_high = std::stod(vals.at(1));
        return true;
    }, "displacement intensity range (two values, pixels)")->expected(2);
    cmd->add_option("--augment-weight", policy.augmented_loss_weight,
                    "loss weight of deformed slices");
    cmd->add_option("--augment-seed", policy.seed, "augmentation stream seed");
    if (disable) cmd->add_flag("--no-augment", *disable, "train on raw slices only");
}

// ---------------------------------------------------------------------------
// Subcommand bodies (throw library errors; main maps them to exit codes)
// ---------------------------------------------------------------------------

void cmd_preprocess(const std::string& volume_path, const std::string& out_path,
                    bool fallback) {
    Volume volume = load_volume(volume_path);
    auto [scaled, report] = robust_scale(volume, fallback);
    if (!out_path.empty()) save_volume(scaled, out_path);
    std::cout << report.to_json().dump(2) << "\n";
}

void cmd_fit_params(const std::vector<std::string>& volume_paths,
                    std::uint64_t memory_budget, int batch_size) {
    if (volume_paths.empty()) throw ConfigError("fit-params needs at least one --volume");
    std::vector<VolumeGeometry> geometries;
    for (const std::string& path : volume_paths) {
        Volume v = load_volume(path);
        Vec3 spacing{norm({v.affine.at(0, 0), v.affine.at(1, 0), v.affine.at(2, 0)}),
                     norm({v.affine.at(0, 1), v.affine.at(1, 1), v.affine.at(2, 1)}),
                     norm({v.affine.at(0, 2), v.affine.at(1, 2), v.affine.at(2, 2)})};
        geometries.push_back({{v.dim_x, v.dim_y, v.dim_z}, spacing, v.channels});
    }
    FitResult fit = fit_sampling_params(geometries, memory_budget, batch_size);
    nlohmann::json j = to_json(fit.params);
    j["resolution_violated"] = fit.resolution_violated;
    j["coverage_violated"] = fit.coverage_violated;
    std::cout << j.dump(2) << "\n";
}

void cmd_views(int k, std::uint64_t seed, double min_angle, const std::string& out_path) {
    ViewSet views = sample_view_axes(k, seed, min_angle);
    nlohmann::json j = to_json(views);
    if (!out_path.empty()) write_json_file(out_path, j);
    std::cout << j.dump(2) << "\n";
}

void cmd_phantom(const std::string& spec_path, std::uint64_t seed, const std::string& out_dir) {
    PhantomSpec spec = phantom_from_option(spec_path, seed);
    if (spec_path.empty()) spec.seed = seed;
    Phantom phantom = make_phantom(spec);
    for (const std::string& w : phantom.warnings) std::cerr << "warning: " << w << "\n";
    fs::create_directories(out_dir);
    save_volume(phantom.volume, fs::path(out_dir) / "volume.json");
    save_labelmap(phantom.labels, fs::path(out_dir) / "labels.json");
    write_json_file(fs::path(out_dir) / "phantom_spec.json", spec.to_json());
    std::cout << "phantom written to " << out_dir << "\n";
}

void cmd_sample(const PipelineConfig& config, const std::string& views_file) {
    require_valid(config);
    if (config.volume_path.empty()) throw ConfigError("sample needs --volume");
    Volume volume = load_volume(config.volume_path);
    std::optional<LabelMap> labels;
    if (!config.labels_path.empty()) labels = load_labelmap(config.labels_path);

    std::uint64_t seed = config.seed.value_or(0);
    ViewSet views = views_file.empty()
                        ? sample_view_axes(config.k, seed, config.min_angle_deg)
                        : viewset_from_json(read_json_file(views_file));
    FitResult fit = resolve_sampling_params(config, volume);

    Vec3 center{0, 0, 0};
    if (config.recenter) {
        Vec3 lo = volume.affine.apply({0, 0, 0});
        Vec3 hi = volume.affine.apply({static_cast<double>(volume.dim_x - 1),
                                       static_cast<double>(volume.dim_y - 1),
                                       static_cast<double>(volume.dim_z - 1)});
        center = (lo + hi) * 0.5;
    }

    fs::path out(config.out_dir);
    fs::create_directories(out);
    StackSetManifest manifest;
    manifest.params = fit.params;
    manifest.center_mm = center;
    manifest.views = views.axes;
    manifest.offsets = slice_offsets(fit.params);
    manifest.has_labels = labels.has_value();
    manifest.num_classes = labels ? labels->num_classes : 0;
    manifest.background_fill = volume.background_fill;
    manifest.channels = volume.channels;
    manifest.target = {volume.dim_x, volume.dim_y, volume.dim_z, volume.affine};

    for (std::size_t i = 0; i < views.size(); ++i) {
        SliceStack stack = sample_stack(volume, labels ? &*labels : nullptr, views.axes[i],
                                        fit.params, center, config.threads);
        save_stack(stack, out, i);
    }
    write_json_file(out / "manifest.json", manifest.to_json());
    std::cout << "sampled " << views.size() << " stacks to " << out.string() << "\n";
}

void cmd_augment_preview(const std::string& stacks_dir, const AugmentPolicy& policy,
                         const std::string& out_dir) {
    policy.validate();
    StackSetManifest manifest = read_stack_manifest(stacks_dir);
    std::vector<SliceStack> stacks = load_all_stacks(stacks_dir, manifest);
    fs::path out(out_dir);
    fs::create_directories(out);

    std::size_t slice_index = 0;
    for (std::size_t vi = 0; vi < stacks.size(); ++vi) {
        SliceStack deformed = stacks[vi];
        int q = manifest.params.grid_size;
        Volume fields(static_cast<std::size_t>(q), static_cast<std::size_t>(q),
                      deformed.slices.size(), 2);  // dx, dy per slice
        for (std::size_t si = 0; si < deformed.slices.size(); ++si, ++slice_index) {
            Rng rng = augment_rng(policy, slice_index);
            if (rng.uniform() < policy.probability) {
                double sigma = rng.uniform(policy.sigma_low, policy.sigma_high);
                double alpha = rng.uniform(policy.alpha_low, policy.alpha_high);
                DisplacementField field = make_displacement_field(q, sigma, alpha, rng);
                deformed.slices[si] = elastic_deform(deformed.slices[si], field);
                deformed.slices[si].loss_weight = policy.augmented_loss_weight;
                for (int a = 0; a < q; ++a)
                    for (int b = 0; b < q; ++b) {
                        std::size_t pix = static_cast<std::size_t>(a) * q + b;
                        fields.at(static_cast<std::size_t>(a), static_cast<std::size_t>(b),
                                  si, 0) = field.dx[pix];
                        fields.at(static_cast<std::size_t>(a), static_cast<std::size_t>(b),
                                  si, 1) = field.dy[pix];
                    }
            }
        }
        save_stack(deformed, out, vi);
        save_volume(fields, out / (detail::view_file_stem(vi) + "_field.json"));
    }
    write_json_file(out / "manifest.json", manifest.to_json());
    std::cout << "augmented preview written to " << out.string() << "\n";
}

void cmd_train(const std::string& stacks_dir, const AugmentPolicy& policy,
               bool augment_enabled, int epochs, double learning_rate, std::uint64_t seed,
               const std::string& model_out) {
    StackSetManifest manifest = read_stack_manifest(stacks_dir);
    if (!manifest.has_labels) throw DataError("training requires stacks sampled with labels");
    std::vector<SliceStack> stacks = load_all_stacks(stacks_dir, manifest);
    std::vector<double> curve;
    PatchSoftmaxModel model = train_from_stacks(stacks, policy, augment_enabled, epochs,
                                                learning_rate, seed, &curve);
    model.save(model_out);
    nlohmann::json j = {{"model", model_out}, {"loss_curve", curve}};
    std::cout << j.dump(2) << "\n";
}

void cmd_predict(const std::string& stacks_dir, const std::string& predictor_name,
                 const std::string& model_path, double flip_rate, double blur_sigma,
                 std::uint64_t seed, const std::string& out_dir) {
    StackSetManifest manifest = read_stack_manifest(stacks_dir);
    std::vector<SliceStack> stacks = load_all_stacks(stacks_dir, manifest);

    PipelineConfig predictor_config;
    predictor_config.predictor = predictor_name;
    predictor_config.flip_rate = flip_rate;
    predictor_config.blur_sigma = blur_sigma;
    std::optional<PatchSoftmaxModel> model;
    std::int32_t num_classes = manifest.num_classes;
    if (predictor_name == "patch-softmax") {
        if (model_path.empty()) throw ConfigError("patch-softmax predictor needs --model");
        model = PatchSoftmaxModel::load(model_path);
        num_classes = model->num_classes;
    }
    if (num_classes < 2) throw DataError("prediction needs labelled stacks or a model");
    auto predictor = make_predictor(predictor_config, seed, std::move(model));

    fs::path out(out_dir);
    fs::create_directories(out);
    for (std::size_t vi = 0; vi < stacks.size(); ++vi) {
        ViewPrediction pred;
        pred.view = stacks[vi].view;
        pred.params = manifest.params;
        pred.center_mm = manifest.center_mm;
        pred.num_classes = num_classes;
        pred.prob_slices.reserve(stacks[vi].slices.size());
        for (std::size_t si = 0; si < stacks[vi].slices.size(); ++si)
            pred.prob_slices.push_back(
                predictor->predict_slice(stacks[vi].slices[si], num_classes, vi, si));
        save_view_prediction(pred, out, vi);
    }
    StackSetManifest pred_manifest = manifest;
    pred_manifest.num_classes = num_classes;
    write_json_file(out / "manifest.json", pred_manifest.to_json());
    std::cout << "predictions for " << stacks.size() << " views written to " << out.string()
              << "\n";
}

void cmd_fuse(const std::string& pred_dir, const std::string& out_dir, unsigned threads) {
    StackSetManifest manifest = read_stack_manifest(pred_dir);
    std::vector<ProbVolume> per_view;
    per_view.reserve(manifest.views.size());
    for (std::size_t vi = 0; vi < manifest.views.size(); ++vi) {
        ViewPrediction pred = load_view_prediction(pred_dir, vi, manifest);
        per_view.push_back(reconstruct_view(pred, manifest.target, threads));
    }
    ProbVolume fused = fuse_views(per_view, threads);
    LabelMap labels = argmax_labels(fused);
    fs::path out(out_dir);
    fs::create_directories(out);
    save_probvolume(fused, out / "probs.json");
    save_labelmap(labels, out / "labels.json");
    nlohmann::json j = {{"coverage_fraction", coverage_fraction(fused)},
                        {"num_views", manifest.views.size()}};
    write_json_file(out / "fuse_report.json", j);
    std::cout << j.dump(2) << "\n";
}

void cmd_evaluate(const std::string& pred_path, const std::string& truth_path,
                  const std::string& out_path) {
    LabelMap pred = load_labelmap(pred_path);
    LabelMap truth = load_labelmap(truth_path);
    std::int32_t classes = std::max(pred.num_classes, truth.num_classes);
    pred.num_classes = classes;
    truth.num_classes = classes;
    DiceReport report = dice_per_class(pred, truth);
    if (!out_path.empty()) write_json_file(out_path, report.to_json());
    std::cout << report.to_json().dump(2) << "\n";
}

void cmd_experiment(const std::string& spec_path, std::vector<int> k_values,
                    double flip_rate, int trials, std::uint64_t seed,
                    const std::string& out_dir, unsigned threads) {
    PhantomSpec spec = phantom_from_option(spec_path, seed);
    if (k_values.empty()) k_values = {1, 2, 4, 6};
    ExperimentTable table =
        variance_experiment(spec, k_values, flip_rate, trials, seed, threads);
    fs::create_directories(out_dir);
    {
        std::ofstream csv(fs::path(out_dir) / "experiment.csv");
        if (!csv) throw DataError("cannot write experiment.csv");
        csv << table.to_csv();
    }
    write_json_file(fs::path(out_dir) / "aggregates.json", table.aggregates_json());
    std::cout << table.aggregates_json().dump(2) << "\n";
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"multi-planar slice sampling, augmentation and view-fusion toolkit"};
    app.require_subcommand(1);

    // The pipeline config honors precedence flags > config file > defaults:
    // the file is applied before CLI11 assigns flag values over it.
    PipelineConfig cfg;
    for (int i = 1; i < argc; ++i) {
        std::string arg = argv[i];
        if (arg == "--config" && i + 1 < argc) {
            cfg.apply_json(read_json_file(argv[i + 1]));
        } else if (arg.rfind("--config=", 0) == 0) {
            cfg.apply_json(read_json_file(arg.substr(9)));
        }
    }

    try {
        // preprocess
        std::string pp_volume, pp_out;
        bool pp_fallback = false;
        auto* preprocess = app.add_subcommand(
            "preprocess", "robust per-channel intensity scaling; prints the scale report");
        preprocess->add_option("--volume", pp_volume, "input volume")->required();
        preprocess->add_option("--out-volume", pp_out, "write the scaled volume here");
        preprocess->add_flag("--fallback-unit-iqr", pp_fallback,
                             "divide by 1 instead of failing on degenerate IQR");
        preprocess->callback([&] { cmd_preprocess(pp_volume, pp_out, pp_fallback); });

        // fit-params
        std::vector<std::string> fp_volumes;
        std::uint64_t fp_budget = cfg.memory_budget_bytes;
        int fp_batch = cfg.batch_size_min;
        auto* fit = app.add_subcommand("fit-params",
                                       "pick grid parameters (q, m, r) for a dataset");
        fit->add_option("--volume", fp_volumes, "volume file (repeatable)")->required();
        fit->add_option("--memory-budget", fp_budget, "training memory budget in bytes");
        fit->add_option("--batch-size", fp_batch, "minimum batch size");
        fit->callback([&] { cmd_fit_params(fp_volumes, fp_budget, fp_batch); });

        // views
        int vw_k = cfg.k;
        std::uint64_t vw_seed = cfg.seed.value_or(0);
        double vw_angle = cfg.min_angle_deg;
        std::string vw_out;
        auto* views = app.add_subcommand("views", "sample view axes; prints them as JSON");
        views->add_option("--k", vw_k, "number of views");
        views->add_option("--seed", vw_seed, "RNG seed");
        views->add_option("--min-angle", vw_angle, "minimum pairwise angle (degrees)");
        views->add_option("--out", vw_out, "also write the view set to this file");
        views->callback([&] { cmd_views(vw_k, vw_seed, vw_angle, vw_out); });

        // phantom
        std::string ph_spec, ph_out = "phantom";
        std::uint64_t ph_seed = cfg.seed.value_or(0);
        auto* phantom = app.add_subcommand("phantom", "generate a synthetic labelled volume");
        phantom->add_option("--spec", ph_spec, "phantom spec JSON (default: stock phantom)");
        phantom->add_option("--seed", ph_seed, "noise seed (stock phantom)");
        phantom->add_option("--out", ph_out, "output directory");
        phantom->callback([&] { cmd_phantom(ph_spec, ph_seed, ph_out); });

        // sample
        PipelineConfig sample_cfg = cfg;
        sample_cfg.out_dir = "stacks";
        std::string sm_views_file;
        std::uint64_t sm_seed = cfg.seed.value_or(0);
        auto* sample = app.add_subcommand("sample", "sample per-view slice stacks");
        sample->add_option("--volume", sample_cfg.volume_path, "input volume")->required();
        sample->add_option("--labels", sample_cfg.labels_path, "label map");
        sample->add_option("--views-file", sm_views_file, "reuse a views JSON file");
        sample->add_option("--k", sample_cfg.k, "number of views");
        sample->add_option("--seed", sm_seed, "view seed");
        sample->add_option("--min-angle", sample_cfg.min_angle_deg, "min pairwise angle");
        sample->add_option("--q", sample_cfg.grid_size, "pixels per image side");
        sample->add_option("--r", sample_cfg.spacing_mm, "sample spacing (mm)");
        sample->add_option("--m", sample_cfg.extent_mm, "image extent (mm)");
        sample->add_option("--memory-budget", sample_cfg.memory_budget_bytes,
                           "budget when fitting q/m/r");
        sample->add_flag("--recenter", sample_cfg.recenter, "center grids on the volume");
        sample->add_option("--threads", sample_cfg.threads, "worker threads");
        sample->add_option("--out", sample_cfg.out_dir, "output stack directory");
        sample->callback([&] {
            sample_cfg.seed = sm_seed;
            cmd_sample(sample_cfg, sm_views_file);
        });

        // augment-preview
        std::string ap_stacks, ap_out = "augmented";
        AugmentPolicy ap_policy = cfg.augment;
        auto* augment = app.add_subcommand("augment-preview",
                                           "deform a saved stack for visual inspection");
        augment->add_option("--stacks", ap_stacks, "stack directory")->required();
        augment->add_option("--out", ap_out, "output directory");
        register_augment_flags(augment, ap_policy, nullptr);
        augment->callback([&] { cmd_augment_preview(ap_stacks, ap_policy, ap_out); });

        // train
        std::string tr_stacks, tr_model_out = "model.json";
        AugmentPolicy tr_policy = cfg.augment;
        bool tr_no_augment = !cfg.augment_enabled;
        int tr_epochs = cfg.epochs;
        double tr_lr = cfg.learning_rate;
        std::uint64_t tr_seed = cfg.seed.value_or(0);
        auto* train_cmd = app.add_subcommand("train", "train the per-pixel softmax model");
        train_cmd->add_option("--stacks", tr_stacks, "labelled stack directory")->required();
        train_cmd->add_option("--epochs", tr_epochs, "training epochs");
        train_cmd->add_option("--learning-rate", tr_lr, "SGD learning rate");
        train_cmd->add_option("--seed", tr_seed, "shuffle/augment seed");
        train_cmd->add_option("--model-out", tr_model_out, "model JSON output path");
        register_augment_flags(train_cmd, tr_policy, &tr_no_augment);
        train_cmd->callback([&] {
            if (tr_policy.seed == 0) tr_policy.seed = tr_seed;
            cmd_train(tr_stacks, tr_policy, !tr_no_augment, tr_epochs, tr_lr, tr_seed,
                      tr_model_out);
        });

        // predict
        std::string pr_stacks, pr_model, pr_out = "pred";
        std::string pr_predictor = cfg.predictor;
        double pr_flip = cfg.flip_rate, pr_blur = cfg.blur_sigma;
        std::uint64_t pr_seed = cfg.seed.value_or(0);
        auto* predict_cmd =
            app.add_subcommand("predict", "run a predictor over saved stacks");
        predict_cmd->add_option("--stacks", pr_stacks, "stack directory")->required();
        predict_cmd->add_option("--predictor", pr_predictor,
                                "oracle | noisy-oracle | patch-softmax");
        predict_cmd->add_option("--model", pr_model, "model JSON (patch-softmax)");
        predict_cmd->add_option("--flip-rate", pr_flip, "noisy-oracle flip rate");
        predict_cmd->add_option("--blur-sigma", pr_blur, "noisy-oracle blur sigma");
        predict_cmd->add_option("--seed", pr_seed, "noise seed");
        predict_cmd->add_option("--out", pr_out, "prediction output directory");
        predict_cmd->callback([&] {
            cmd_predict(pr_stacks, pr_predictor, pr_model, pr_flip, pr_blur, pr_seed, pr_out);
        });

        // fuse
        std::string fu_pred, fu_out = "fused";
        unsigned fu_threads = cfg.threads;
        auto* fuse_cmd = app.add_subcommand("fuse",
                                            "reconstruct per-view predictions and fuse them");
        fuse_cmd->add_option("--pred", fu_pred, "prediction directory")->required();
        fuse_cmd->add_option("--out", fu_out, "fused output directory");
        fuse_cmd->add_option("--threads", fu_threads, "worker threads");
        fuse_cmd->callback([&] { cmd_fuse(fu_pred, fu_out, fu_threads); });

        // evaluate
        std::string ev_pred, ev_truth, ev_out;
        auto* evaluate_cmd =
            app.add_subcommand("evaluate", "per-class dice of a segmentation");
        evaluate_cmd->add_option("--pred", ev_pred, "predicted label file")->required();
        evaluate_cmd->add_option("--truth", ev_truth, "ground-truth label file")->required();
        evaluate_cmd->add_option("--out", ev_out, "also write the report here");
        evaluate_cmd->callback([&] { cmd_evaluate(ev_pred, ev_truth, ev_out); });

        // experiment
        std::string ex_spec, ex_out = "experiment";
        std::vector<int> ex_k;
        double ex_flip = cfg.flip_rate;
        int ex_trials = 30;
        std::uint64_t ex_seed = cfg.seed.value_or(0);
        unsigned ex_threads = cfg.threads;
        auto* experiment_cmd = app.add_subcommand(
            "experiment", "multi-view variance-reduction experiment on a phantom");
        experiment_cmd->add_option("--phantom", ex_spec, "phantom spec JSON");
        experiment_cmd->add_option("--k-values", ex_k, "view counts")->delimiter(',');
        experiment_cmd->add_option("--flip-rate", ex_flip, "noisy-oracle flip rate");
        experiment_cmd->add_option("--trials", ex_trials, "trials per k");
        experiment_cmd->add_option("--seed", ex_seed, "experiment seed");
        experiment_cmd->add_option("--out", ex_out, "output directory");
        experiment_cmd->add_option("--threads", ex_threads, "worker threads");
        experiment_cmd->callback([&] {
            cmd_experiment(ex_spec, ex_k, ex_flip, ex_trials, ex_seed, ex_out, ex_threads);
        });

        // pipeline
        std::string pl_phantom_spec, pl_config_unused;
        auto* pipeline_cmd =
            app.add_subcommand("pipeline", "run the end-to-end pipeline");
        pipeline_cmd->add_option("--config", pl_config_unused,
                                 "config JSON (applied before flags)");
        pipeline_cmd->add_option("--volume", cfg.volume_path, "input volume");
        pipeline_cmd->add_option("--labels", cfg.labels_path, "ground-truth labels");
        pipeline_cmd->add_option("--phantom", pl_phantom_spec, "phantom spec JSON");
        pipeline_cmd->add_option("--out", cfg.out_dir, "output directory");
        pipeline_cmd->add_option("--k", cfg.k, "number of views");
        pipeline_cmd->add_option("--min-angle", cfg.min_angle_deg, "min pairwise angle");
        pipeline_cmd->add_option("--seed", cfg.seed, "master seed");
        pipeline_cmd->add_option("--threads", cfg.threads, "worker threads");
        pipeline_cmd->add_flag("--recenter", cfg.recenter, "center grids on the volume");
        pipeline_cmd->add_option("--q", cfg.grid_size, "pixels per image side");
        pipeline_cmd->add_option("--r", cfg.spacing_mm, "sample spacing (mm)");
        pipeline_cmd->add_option("--m", cfg.extent_mm, "image extent (mm)");
        pipeline_cmd->add_option("--memory-budget", cfg.memory_budget_bytes,
                                 "budget when fitting q/m/r");
        pipeline_cmd->add_option("--batch-size", cfg.batch_size_min, "minimum batch size");
        pipeline_cmd->add_option("--predictor", cfg.predictor,
                                 "oracle | noisy-oracle | patch-softmax");
        pipeline_cmd->add_option("--flip-rate", cfg.flip_rate, "noisy-oracle flip rate");
        pipeline_cmd->add_option("--blur-sigma", cfg.blur_sigma, "noisy-oracle blur sigma");
        pipeline_cmd->add_option("--epochs", cfg.epochs, "training epochs");
        pipeline_cmd->add_option("--learning-rate", cfg.learning_rate, "SGD learning rate");
        bool pl_no_augment = !cfg.augment_enabled;
        register_augment_flags(pipeline_cmd, cfg.augment, &pl_no_augment);
        pipeline_cmd->callback([&] {
            cfg.augment_enabled = !pl_no_augment;
            if (!pl_phantom_spec.empty())
                cfg.phantom = PhantomSpec::from_json(read_json_file(pl_phantom_spec));
            PipelineResult result = run_pipeline(cfg);
            std::cout << result.report.dump(2) << "\n";
        });

        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        int rc = app.exit(e);
        return rc == 0 ? 0 : 1;
    } catch (const ConfigError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    } catch (const FormatError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    } catch (const DataError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    } catch (const GeometryError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 3;
    } catch (const DivergenceError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 4;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    return 0;
}
