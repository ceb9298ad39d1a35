#include "voxseg/config.hpp"

#include <fstream>
#include <set>
#include <stdexcept>

#include "json.hpp"

namespace voxseg {

using nlohmann::json;

namespace {

[[noreturn]] void fail(const std::string& msg) { throw std::runtime_error("config: " + msg); }

void check_keys(const json& j, const std::string& path, const std::set<std::string>& known) {
    for (const auto& [key, value] : j.items())
        if (!known.count(key)) fail("unknown key \"" + (path.empty() ? key : path + "." + key) + "\"");
}

template <typename T>
void get_to(const json& j, const std::string& path, const char* key, T& target) {
    if (!j.contains(key)) return;
    try {
        target = j.at(key).get<T>();
    } catch (const json::exception& e) {
        fail("bad value for \"" + path + "." + key + "\": " + e.what());
    }
}

void parse_preprocess(const json& j, PreprocessParams& p) {
    check_keys(j, "preprocess", {"target_spacing_mm", "fg_mode", "per_volume_percentiles"});
    get_to(j, "preprocess", "target_spacing_mm", p.target_spacing);
    get_to(j, "preprocess", "fg_mode", p.fg_mode);
    get_to(j, "preprocess", "per_volume_percentiles", p.per_volume_percentiles);
    if (p.fg_mode != "label" && p.fg_mode != "above_p_low")
        fail("preprocess.fg_mode must be \"label\" or \"above_p_low\"");
    for (double s : p.target_spacing)
        if (!(s > 0.0)) fail("preprocess.target_spacing_mm must be > 0");
}

void parse_augment(const json& j, AugmentConfig& a) {
    check_keys(j, "augment",
               {"rotation_deg", "scale_range", "elastic_alpha_range", "elastic_sigma_range",
                "gamma_range", "mirror_axes", "p_rotate", "p_scale", "p_elastic", "p_gamma",
                "p_mirror"});
    get_to(j, "augment", "rotation_deg", a.rotation_deg);
    if (j.contains("scale_range")) {
        const auto r = j.at("scale_range").get<std::array<double, 2>>();
        a.scale_min = r[0];
        a.scale_max = r[1];
    }
    if (j.contains("elastic_alpha_range")) {
        const auto r = j.at("elastic_alpha_range").get<std::array<double, 2>>();
        a.elastic_alpha_min = r[0];
        a.elastic_alpha_max = r[1];
    }
    if (j.contains("elastic_sigma_range")) {
        const auto r = j.at("elastic_sigma_range").get<std::array<double, 2>>();
        a.elastic_sigma_min = r[0];
        a.elastic_sigma_max = r[1];
    }
    if (j.contains("gamma_range")) {
        const auto r = j.at("gamma_range").get<std::array<double, 2>>();
        a.gamma_min = r[0];
        a.gamma_max = r[1];
    }
    get_to(j, "augment", "mirror_axes", a.mirror_axes);
    get_to(j, "augment", "p_rotate", a.p_rotate);
    get_to(j, "augment", "p_scale", a.p_scale);
    get_to(j, "augment", "p_elastic", a.p_elastic);
    get_to(j, "augment", "p_gamma", a.p_gamma);
    get_to(j, "augment", "p_mirror", a.p_mirror);
    a.validate();
}

void parse_net(const json& j, UNetConfig& n) {
    check_keys(j, "net",
               {"levels", "base_channels", "max_channels", "lrelu_slope", "norm_eps",
                "min_bottleneck_extent"});
    get_to(j, "net", "levels", n.levels);
    get_to(j, "net", "base_channels", n.base_channels);
    get_to(j, "net", "max_channels", n.max_channels);
    get_to(j, "net", "lrelu_slope", n.lrelu_slope);
    get_to(j, "net", "norm_eps", n.norm_eps);
    get_to(j, "net", "min_bottleneck_extent", n.min_bottleneck_extent);
    n.validate();
}

void parse_train(const json& j, TrainParams& t) {
    check_keys(j, "train",
               {"epochs", "iterations_per_epoch", "batch_size", "patch", "fg_oversample_prob",
                "seed", "initial_lr", "lr_drop_factor", "lr_drop_patience", "stop_patience",
                "val_fraction", "augment"});
    get_to(j, "train", "epochs", t.epochs);
    get_to(j, "train", "iterations_per_epoch", t.iterations_per_epoch);
    get_to(j, "train", "batch_size", t.batch_size);
    get_to(j, "train", "patch", t.patch);
    get_to(j, "train", "fg_oversample_prob", t.fg_oversample_prob);
    get_to(j, "train", "seed", t.seed);
    get_to(j, "train", "initial_lr", t.initial_lr);
    get_to(j, "train", "lr_drop_factor", t.lr_drop_factor);
    get_to(j, "train", "lr_drop_patience", t.lr_drop_patience);
    get_to(j, "train", "stop_patience", t.stop_patience);
    get_to(j, "train", "val_fraction", t.val_fraction);
    get_to(j, "train", "augment", t.augment);
    if (t.epochs < 1 || t.iterations_per_epoch < 1 || t.batch_size < 1)
        fail("train: epochs, iterations_per_epoch and batch_size must be >= 1");
    if (t.fg_oversample_prob < 0.0 || t.fg_oversample_prob > 1.0)
        fail("train.fg_oversample_prob must be in [0,1]");
    for (int p : t.patch)
        if (p < 1) fail("train.patch must be positive");
}

void parse_loss(const json& j, LossConfig& l) {
    check_keys(j, "loss",
               {"gamma", "dice_weight_kidney", "dice_weight_tumor", "ce_weights",
                "layer_weights", "smooth_eps", "clamp_floor", "plain_dice"});
    get_to(j, "loss", "gamma", l.gamma);
    get_to(j, "loss", "dice_weight_kidney", l.dice_weight_kidney);
    get_to(j, "loss", "dice_weight_tumor", l.dice_weight_tumor);
    get_to(j, "loss", "ce_weights", l.ce_weights);
    if (j.contains("layer_weights"))
        l.layer_weights = j.at("layer_weights").get<std::vector<double>>();
    get_to(j, "loss", "smooth_eps", l.smooth_eps);
    get_to(j, "loss", "clamp_floor", l.clamp_floor);
    get_to(j, "loss", "plain_dice", l.plain_dice);
    l.validate();
}

void parse_infer(const json& j, InferParams& i) {
    check_keys(j, "infer", {"sigma_scale", "mirror_axes", "noise_std", "noise_repeats"});
    get_to(j, "infer", "sigma_scale", i.sigma_scale);
    get_to(j, "infer", "mirror_axes", i.mirror_axes);
    get_to(j, "infer", "noise_std", i.noise_std);
    get_to(j, "infer", "noise_repeats", i.noise_repeats);
    if (i.noise_std < 0.0 || i.noise_repeats < 0)
        fail("infer: noise_std and noise_repeats must be >= 0");
}

void parse_postprocess(const json& j, PostprocessConfig& p) {
    check_keys(j, "postprocess", {"connectivity", "second_kidney_ratio"});
    get_to(j, "postprocess", "connectivity", p.connectivity);
    get_to(j, "postprocess", "second_kidney_ratio", p.second_kidney_ratio);
    if (p.connectivity != 6 && p.connectivity != 26)
        fail("postprocess.connectivity must be 6 or 26");
    if (p.second_kidney_ratio < 0.0 || p.second_kidney_ratio > 1.0)
        fail("postprocess.second_kidney_ratio must be in [0,1]");
}

void parse_phantom(const json& j, PhantomSpec& p) {
    check_keys(j, "phantom",
               {"shape", "spacing_mm", "kidney_count", "kidney_semiaxes_min",
                "kidney_semiaxes_max", "tumors_per_kidney", "tumor_radius_range",
                "tumor_placement", "bg_mean", "bg_std", "kidney_mean", "kidney_std",
                "tumor_mean", "tumor_std", "noise_std", "seed"});
    get_to(j, "phantom", "shape", p.shape);
    get_to(j, "phantom", "spacing_mm", p.spacing);
    get_to(j, "phantom", "kidney_count", p.kidney_count);
    get_to(j, "phantom", "kidney_semiaxes_min", p.kidney_semiaxes_min);
    get_to(j, "phantom", "kidney_semiaxes_max", p.kidney_semiaxes_max);
    if (j.contains("tumors_per_kidney")) {
        const auto r = j.at("tumors_per_kidney").get<std::array<int, 2>>();
        p.tumors_per_kidney_min = r[0];
        p.tumors_per_kidney_max = r[1];
    }
    if (j.contains("tumor_radius_range")) {
        const auto r = j.at("tumor_radius_range").get<std::array<double, 2>>();
        p.tumor_radius_min = r[0];
        p.tumor_radius_max = r[1];
    }
    get_to(j, "phantom", "tumor_placement", p.tumor_placement);
    get_to(j, "phantom", "bg_mean", p.bg_mean);
    get_to(j, "phantom", "bg_std", p.bg_std);
    get_to(j, "phantom", "kidney_mean", p.kidney_mean);
    get_to(j, "phantom", "kidney_std", p.kidney_std);
    get_to(j, "phantom", "tumor_mean", p.tumor_mean);
    get_to(j, "phantom", "tumor_std", p.tumor_std);
    get_to(j, "phantom", "noise_std", p.noise_std);
    get_to(j, "phantom", "seed", p.seed);
    p.validate();
}

} // namespace

PipelineConfig load_config(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) fail("cannot open " + path.string());
    json j;
    try {
        in >> j;
    } catch (const json::exception& e) {
        fail(path.string() + " is not valid JSON: " + e.what());
    }
    check_keys(j, "",
               {"schema_version", "preprocess", "augment", "net", "train", "loss", "infer",
                "postprocess", "phantom"});
    if (!j.contains("schema_version")) fail("missing mandatory key \"schema_version\"");
    PipelineConfig cfg;
    cfg.schema_version = j.at("schema_version").get<int>();
    if (cfg.schema_version != 1)
        fail("unsupported schema_version " + std::to_string(cfg.schema_version));
    if (j.contains("preprocess")) parse_preprocess(j.at("preprocess"), cfg.preprocess);
    if (j.contains("augment")) parse_augment(j.at("augment"), cfg.augment);
    if (j.contains("net")) parse_net(j.at("net"), cfg.net);
    if (j.contains("train")) parse_train(j.at("train"), cfg.train);
    if (j.contains("loss")) parse_loss(j.at("loss"), cfg.loss);
    if (j.contains("infer")) parse_infer(j.at("infer"), cfg.infer);
    if (j.contains("postprocess")) parse_postprocess(j.at("postprocess"), cfg.postprocess);
    if (j.contains("phantom")) parse_phantom(j.at("phantom"), cfg.phantom);
    return cfg;
}

void apply_profile(PipelineConfig& cfg, const std::string& profile) {
    if (profile == "desk") {
        cfg.net.levels = 3;
        cfg.net.base_channels = 8;
        cfg.net.min_bottleneck_extent = 1;
        cfg.train.patch = {32, 32, 32};
        cfg.train.batch_size = 2;
        cfg.train.iterations_per_epoch = 100;
    } else if (profile == "paper") {
        cfg.net.levels = 6;
        cfg.net.base_channels = 30;
        cfg.net.max_channels = 320;
        cfg.net.min_bottleneck_extent = 8;
        cfg.train.patch = {48, 192, 192};
        cfg.train.batch_size = 8;
        cfg.train.iterations_per_epoch = 250;
        cfg.train.initial_lr = 3e-4;
    } else {
        fail("unknown profile \"" + profile + "\" (expected desk or paper)");
    }
}

} // namespace voxseg
