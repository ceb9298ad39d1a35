// voxseg: batch pipeline for volumetric kidney/tumor segmentation.
// Subcommands: phantom gen, preprocess, train, infer, postprocess, evaluate.

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "json.hpp"

#include "voxseg/augment.hpp"
#include "voxseg/config.hpp"
#include "voxseg/infer.hpp"
#include "voxseg/loss.hpp"
#include "voxseg/metrics.hpp"
#include "voxseg/parallel.hpp"
#include "voxseg/phantom.hpp"
#include "voxseg/postprocess.hpp"
#include "voxseg/preprocess.hpp"
#include "voxseg/rng.hpp"
#include "voxseg/train.hpp"
#include "voxseg/unet.hpp"
#include "voxseg/volume.hpp"

namespace fs = std::filesystem;
using namespace voxseg;

namespace {

std::uint64_t fnv1a(const std::string& s) {
    std::uint64_t h = 1469598103934665603ULL;
    for (const char c : s) {
        h ^= std::uint8_t(c);
        h *= 1099511628211ULL;
    }
    return h;
}

std::string case_name(int i) {
    char buf[16];
    std::snprintf(buf, sizeof(buf), "case_%03d", i);
    return buf;
}

/// Collects case ids by stripping `suffix + ".mvol.json"` from filenames.
std::vector<std::string> list_cases(const fs::path& dir, const std::string& suffix) {
    std::vector<std::string> ids;
    const std::string tail = suffix + ".mvol.json";
    if (!fs::is_directory(dir)) throw std::runtime_error("directory not found: " + dir.string());
    for (const auto& entry : fs::directory_iterator(dir)) {
        const std::string name = entry.path().filename().string();
        if (name.size() > tail.size() &&
            name.compare(name.size() - tail.size(), tail.size(), tail) == 0)
            ids.push_back(name.substr(0, name.size() - tail.size()));
    }
    std::sort(ids.begin(), ids.end());
    if (ids.empty())
        throw std::runtime_error("no *" + tail + " files in " + dir.string());
    return ids;
}

int cmd_phantom_gen(const std::string& config_path, const std::string& out_dir, int count) {
    const PipelineConfig cfg = load_config(config_path);
    fs::create_directories(out_dir);
    nlohmann::json manifest;
    manifest["cases"] = nlohmann::json::array();
    for (int i = 0; i < count; ++i) {
        PhantomSpec spec = cfg.phantom;
        spec.seed = derive_seed(cfg.phantom.seed, std::uint64_t(i));
        const auto [vol, mask] = generate_phantom(spec);
        const std::string id = case_name(i);
        write_volume(vol, fs::path(out_dir) / (id + "_img"));
        write_volume(mask, fs::path(out_dir) / (id + "_seg"));
        manifest["cases"].push_back({{"id", id}, {"seed", spec.seed}});
    }
    manifest["base_seed"] = cfg.phantom.seed;
    manifest["count"] = count;
    std::ofstream mf(fs::path(out_dir) / "manifest.json", std::ios::trunc);
    mf << manifest.dump(2) << '\n';
    std::cout << "generated " << count << " phantom cases in " << out_dir << "\n";
    return 0;
}

int cmd_preprocess(const std::string& config_path, const std::string& in_dir,
                   const std::string& out_dir, const std::string& stats_out) {
    const PipelineConfig cfg = load_config(config_path);
    const auto ids = list_cases(in_dir, "_img");
    std::vector<Volume> images;
    std::vector<LabelMask> masks;
    for (const auto& id : ids) {
        images.push_back(read_intensity(fs::path(in_dir) / (id + "_img")));
        masks.push_back(read_labels(fs::path(in_dir) / (id + "_seg")));
    }
    std::vector<const Volume*> vptrs;
    std::vector<const LabelMask*> mptrs;
    for (std::size_t i = 0; i < images.size(); ++i) {
        vptrs.push_back(&images[i]);
        mptrs.push_back(&masks[i]);
    }
    const ForegroundMode mode = cfg.preprocess.fg_mode == "label" ? ForegroundMode::kLabeled
                                                                  : ForegroundMode::kAbovePLow;
    const PreprocessStats stats = compute_stats(vptrs, mptrs, mode);
    save_stats(stats, stats_out);

    fs::create_directories(out_dir);
    for (std::size_t i = 0; i < images.size(); ++i) {
        Volume v = resample(images[i], cfg.preprocess.target_spacing);
        PreprocessStats s = stats;
        if (cfg.preprocess.per_volume_percentiles) {
            s.p_low = percentile(v.data, 0.5);
            s.p_high = percentile(v.data, 99.5);
        }
        v = clip_and_normalize(v, s);
        const LabelMask m = resample_labels(masks[i], cfg.preprocess.target_spacing);
        write_volume(v, fs::path(out_dir) / (ids[i] + "_img"));
        write_volume(m, fs::path(out_dir) / (ids[i] + "_seg"));
    }
    std::cout << "preprocessed " << images.size() << " cases; stats in " << stats_out << "\n";
    return 0;
}

int cmd_train(const std::string& config_path, const std::string& data_dir,
              const std::string& stats_path, const std::string& ckpt_out,
              const std::string& history_out, const std::string& profile, bool no_mss,
              bool plain_dice) {
    PipelineConfig cfg = load_config(config_path);
    if (!profile.empty()) apply_profile(cfg, profile);
    load_stats(stats_path); // data must come from `preprocess`; fail early if not

    Dataset all = load_dataset(data_dir, cfg.train.patch);
    Dataset trainset, valset;
    const int val_n = int(std::lround(cfg.train.val_fraction * double(all.cases.size())));
    for (std::size_t i = 0; i < all.cases.size(); ++i) {
        if (int(all.cases.size() - i) <= val_n)
            valset.cases.push_back(std::move(all.cases[i]));
        else
            trainset.cases.push_back(std::move(all.cases[i]));
    }

    TrainOptions opt;
    opt.net = cfg.net;
    opt.params = cfg.train;
    opt.loss = cfg.loss;
    opt.loss.plain_dice = opt.loss.plain_dice || plain_dice;
    opt.augment = cfg.augment;
    opt.mss = !no_mss;

    TrainResult result = train(opt, trainset, valset);
    CheckpointMeta meta;
    meta.patch = cfg.train.patch;
    meta.target_spacing = cfg.preprocess.target_spacing;
    meta.per_volume_percentiles = cfg.preprocess.per_volume_percentiles;
    meta.sigma_scale = cfg.infer.sigma_scale;
    meta.noise_std = cfg.infer.noise_std;
    meta.noise_repeats = cfg.infer.noise_repeats;
    save_checkpoint(result.net, meta, ckpt_out);
    write_history_csv(result.history, history_out);
    std::cout << "trained " << result.history.size() << " epochs; final loss "
              << result.history.back().train_loss << "; checkpoint " << ckpt_out << "\n";
    return 0;
}

int cmd_infer(const std::string& ckpt_path, const std::string& in_dir,
              const std::string& stats_path, const std::string& out_dir, const std::string& tta,
              bool save_probs) {
    if (tta != "mirror" && tta != "none")
        throw std::runtime_error("--tta must be mirror or none");
    auto [net, meta] = load_checkpoint(ckpt_path);
    const PreprocessStats stats = load_stats(stats_path);
    const auto ids = list_cases(in_dir, "_img");
    fs::create_directories(out_dir);

    TtaPolicy policy;
    if (tta == "mirror") {
        policy.mirror_axes = {true, true, true};
        policy.noise_std = meta.noise_std;
        policy.noise_repeats = meta.noise_repeats;
    }
    const PatchPredictor predictor = make_predictor(net);

    for (const auto& id : ids) {
        Volume v = read_intensity(fs::path(in_dir) / (id + "_img"));
        v = resample(v, meta.target_spacing);
        PreprocessStats s = stats;
        if (meta.per_volume_percentiles) {
            s.p_low = percentile(v.data, 0.5);
            s.p_high = percentile(v.data, 99.5);
        }
        v = clip_and_normalize(v, s);
        const std::array<int, 3> original = v.geo.shape;
        const Volume padded = reflect_pad(v, meta.patch);
        const PatchGrid grid = make_grid(padded.geo.shape, meta.patch);
        ProbMap probs = predict_volume(predictor, padded, grid, policy, meta.sigma_scale,
                                       derive_seed(0x1f3a, fnv1a(id)));
        probs = crop(probs, original);
        const LabelMask pred = argmax_labels(probs);
        write_volume(pred, fs::path(out_dir) / (id + "_pred"));
        if (save_probs) write_volume(probs, fs::path(out_dir) / (id + "_prob"));
    }
    std::cout << "inferred " << ids.size() << " cases into " << out_dir << "\n";
    return 0;
}

int cmd_postprocess(const std::string& in_dir, const std::string& out_dir, int connectivity,
                    const std::string& audit_path) {
    PostprocessConfig cfg;
    cfg.connectivity = connectivity;
    const auto ids = list_cases(in_dir, "_pred");
    fs::create_directories(out_dir);
    nlohmann::json audit_all;
    for (const auto& id : ids) {
        const LabelMask m = read_labels(fs::path(in_dir) / (id + "_pred"));
        PostprocessAudit audit;
        const LabelMask cleaned = postprocess(m, cfg, &audit);
        write_volume(cleaned, fs::path(out_dir) / (id + "_pred"));
        if (!audit.kidney_found)
            std::cerr << "warning: " << id << ": no kidney component found, mask unchanged\n";
        nlohmann::json rec;
        rec["kidney_found"] = audit.kidney_found;
        rec["connectivity"] = cfg.connectivity;
        for (const char* key : {"kidneys", "tumors"}) {
            const auto& src = std::string(key) == "kidneys" ? audit.kidneys : audit.tumors;
            nlohmann::json list = nlohmann::json::array();
            for (const auto& d : src)
                list.push_back({{"voxels", d.voxels}, {"kept", d.kept}, {"reason", d.reason}});
            rec[key] = list;
        }
        audit_all[id] = rec;
    }
    if (!audit_path.empty()) {
        std::ofstream out(audit_path, std::ios::trunc);
        out << audit_all.dump(2) << '\n';
    }
    std::cout << "postprocessed " << ids.size() << " cases into " << out_dir << "\n";
    return 0;
}

int cmd_evaluate(const std::string& pred_dir, const std::string& truth_dir,
                 const std::string& report_out, const std::string& boxplot_out) {
    const auto ids = list_cases(pred_dir, "_pred");
    std::vector<CaseReport> reports;
    for (const auto& id : ids) {
        const LabelMask pred = read_labels(fs::path(pred_dir) / (id + "_pred"));
        const LabelMask truth = read_labels(fs::path(truth_dir) / (id + "_seg"));
        reports.push_back(evaluate_case(pred, truth, id));
    }
    write_report_csv(reports, report_out);
    fs::path summary = report_out;
    summary.replace_extension(".summary.json");
    write_summary_json(evaluate_cohort(reports), summary);
    if (!boxplot_out.empty()) write_boxplot_svg(reports, boxplot_out);

    const CohortSummary s = evaluate_cohort(reports);
    std::cout << "evaluated " << reports.size() << " cases: mean kidney dice "
              << s.kidney[0].second.mean << ", mean tumor dice " << s.tumor[0].second.mean
              << "\n";
    return 0;
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"volumetric kidney/tumor segmentation pipeline"};
    app.require_subcommand(1);
    int threads = 0;
    app.add_option("--threads", threads, "cap worker threads (default: hardware)");

    // phantom gen
    auto* phantom = app.add_subcommand("phantom", "synthetic dataset tools");
    phantom->require_subcommand(1);
    auto* gen = phantom->add_subcommand("gen", "generate ground-truthed phantom cases");
    std::string g_config, g_out;
    int g_count = 10;
    gen->add_option("--config", g_config, "pipeline config JSON")->required();
    gen->add_option("--out", g_out, "output directory")->required();
    gen->add_option("--count", g_count, "number of cases")->required();

    auto* prep = app.add_subcommand("preprocess", "fit stats, normalize and resample");
    std::string p_config, p_in, p_out, p_stats;
    prep->add_option("--config", p_config)->required();
    prep->add_option("--in", p_in)->required();
    prep->add_option("--out", p_out)->required();
    prep->add_option("--stats-out", p_stats)->required();

    auto* tr = app.add_subcommand("train", "train the segmentation network");
    std::string t_config, t_data, t_stats, t_ckpt, t_hist, t_profile;
    bool t_no_mss = false, t_plain_dice = false;
    tr->add_option("--config", t_config)->required();
    tr->add_option("--data", t_data)->required();
    tr->add_option("--stats", t_stats)->required();
    tr->add_option("--checkpoint-out", t_ckpt)->required();
    tr->add_option("--history-out", t_hist)->required();
    tr->add_option("--profile", t_profile, "desk or paper");
    tr->add_flag("--no-mss", t_no_mss, "supervise only the top head (classic baseline)");
    tr->add_flag("--plain-dice", t_plain_dice, "1-SD instead of the exp-log transform");

    auto* inf = app.add_subcommand("infer", "sliding-window prediction");
    std::string i_ckpt, i_in, i_stats, i_out, i_tta = "mirror";
    bool i_save_probs = false;
    inf->add_option("--checkpoint", i_ckpt)->required();
    inf->add_option("--in", i_in)->required();
    inf->add_option("--stats", i_stats)->required();
    inf->add_option("--out", i_out)->required();
    inf->add_option("--tta", i_tta, "mirror or none");
    inf->add_flag("--save-probs", i_save_probs);

    auto* post = app.add_subcommand("postprocess", "connected-component filtering");
    std::string pp_in, pp_out, pp_audit;
    int pp_conn = 26;
    post->add_option("--in", pp_in)->required();
    post->add_option("--out", pp_out)->required();
    post->add_option("--connectivity", pp_conn)->check(CLI::IsMember({6, 26}));
    post->add_option("--audit", pp_audit, "per-case decision log (JSON)");

    auto* ev = app.add_subcommand("evaluate", "per-case metrics and cohort summary");
    std::string e_pred, e_truth, e_report, e_boxplot;
    ev->add_option("--pred", e_pred)->required();
    ev->add_option("--truth", e_truth)->required();
    ev->add_option("--report-out", e_report)->required();
    ev->add_option("--boxplot-out", e_boxplot, "SVG box plot");

    CLI11_PARSE(app, argc, argv);
    if (threads > 0) par::set_max_threads(threads);

    try {
        if (gen->parsed()) return cmd_phantom_gen(g_config, g_out, g_count);
        if (prep->parsed()) return cmd_preprocess(p_config, p_in, p_out, p_stats);
        if (tr->parsed())
            return cmd_train(t_config, t_data, t_stats, t_ckpt, t_hist, t_profile, t_no_mss,
                             t_plain_dice);
        if (inf->parsed()) return cmd_infer(i_ckpt, i_in, i_stats, i_out, i_tta, i_save_probs);
        if (post->parsed()) return cmd_postprocess(pp_in, pp_out, pp_conn, pp_audit);
        if (ev->parsed()) return cmd_evaluate(e_pred, e_truth, e_report, e_boxplot);
        std::cerr << "error: no subcommand given\n";
        return 1;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
}
