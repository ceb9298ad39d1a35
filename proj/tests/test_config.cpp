#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <filesystem>
#include <fstream>

#include "voxseg/config.hpp"

using namespace voxseg;
namespace fs = std::filesystem;

namespace {

fs::path write_config(const std::string& name, const std::string& body) {
    const fs::path dir = fs::temp_directory_path() / "voxseg_test_config";
    fs::create_directories(dir);
    const fs::path p = dir / name;
    std::ofstream out(p, std::ios::trunc);
    out << body;
    return p;
}

} // namespace

TEST_CASE("minimal config: schema_version only, defaults everywhere") {
    const auto p = write_config("minimal.json", R"({"schema_version": 1})");
    const PipelineConfig cfg = load_config(p);
    CHECK(cfg.net.levels == 3);
    CHECK(cfg.loss.gamma == 0.3);
    CHECK(cfg.loss.ce_weights == std::array<double, 3>{0.28, 0.28, 0.44});
    CHECK(cfg.loss.layer_weights == std::vector<double>{0.4, 0.2, 0.2, 0.1, 0.1});
    CHECK(cfg.train.initial_lr == 3e-4);
    CHECK(cfg.train.lr_drop_factor == 0.2);
    CHECK(cfg.train.lr_drop_patience == 30);
    CHECK(cfg.train.stop_patience == 50);
    CHECK(cfg.postprocess.connectivity == 26);
    CHECK(cfg.postprocess.second_kidney_ratio == 0.1);
}

TEST_CASE("schema_version is mandatory") {
    const auto p = write_config("nover.json", R"({"net": {"levels": 3}})");
    CHECK_THROWS_WITH_AS(load_config(p), doctest::Contains("schema_version"),
                         std::runtime_error);
}

TEST_CASE("unknown keys are rejected with their path") {
    const auto p =
        write_config("unknown.json", R"({"schema_version": 1, "net": {"levls": 4}})");
    CHECK_THROWS_WITH_AS(load_config(p), doctest::Contains("net.levls"), std::runtime_error);
    const auto q = write_config("unknown2.json", R"({"schema_version": 1, "nett": {}})");
    CHECK_THROWS_WITH_AS(load_config(q), doctest::Contains("nett"), std::runtime_error);
}

TEST_CASE("bad values are rejected with the offending key") {
    const auto p = write_config("badval.json",
                                R"({"schema_version": 1, "train": {"batch_size": "two"}})");
    CHECK_THROWS_WITH_AS(load_config(p), doctest::Contains("train.batch_size"),
                         std::runtime_error);
    const auto q = write_config("badval2.json",
                                R"({"schema_version": 1, "postprocess": {"connectivity": 18}})");
    CHECK_THROWS_AS(load_config(q), std::runtime_error);
}

TEST_CASE("block values are read through to the module configs") {
    const auto p = write_config("full.json", R"({
        "schema_version": 1,
        "preprocess": {"target_spacing_mm": [2.0, 1.0, 1.0], "fg_mode": "above_p_low"},
        "augment": {"rotation_deg": 10.0, "p_mirror": 0.25},
        "net": {"levels": 4, "base_channels": 16},
        "train": {"epochs": 7, "patch": [16, 32, 32], "seed": 99},
        "loss": {"gamma": 0.5, "layer_weights": [0.6, 0.4]},
        "infer": {"sigma_scale": 0.2, "noise_repeats": 1},
        "postprocess": {"connectivity": 6, "second_kidney_ratio": 0.2},
        "phantom": {"kidney_count": 1, "noise_std": 4.0}
    })");
    const PipelineConfig cfg = load_config(p);
    CHECK(cfg.preprocess.target_spacing[0] == 2.0);
    CHECK(cfg.preprocess.fg_mode == "above_p_low");
    CHECK(cfg.augment.rotation_deg == 10.0);
    CHECK(cfg.augment.p_mirror == 0.25);
    CHECK(cfg.net.levels == 4);
    CHECK(cfg.net.base_channels == 16);
    CHECK(cfg.train.epochs == 7);
    CHECK(cfg.train.patch == std::array<int, 3>{16, 32, 32});
    CHECK(cfg.train.seed == 99);
    CHECK(cfg.loss.gamma == 0.5);
    CHECK(cfg.loss.layer_weights == std::vector<double>{0.6, 0.4});
    CHECK(cfg.infer.sigma_scale == 0.2);
    CHECK(cfg.infer.noise_repeats == 1);
    CHECK(cfg.postprocess.connectivity == 6);
    CHECK(cfg.phantom.kidney_count == 1);
}

TEST_CASE("profiles: desk and paper set the documented geometry") {
    PipelineConfig cfg;
    apply_profile(cfg, "desk");
    CHECK(cfg.net.levels == 3);
    CHECK(cfg.net.base_channels == 8);
    CHECK(cfg.train.patch == std::array<int, 3>{32, 32, 32});
    CHECK(cfg.train.batch_size == 2);
    CHECK(cfg.train.iterations_per_epoch == 100);

    apply_profile(cfg, "paper");
    CHECK(cfg.net.levels == 6);
    CHECK(cfg.net.base_channels == 30);
    CHECK(cfg.net.max_channels == 320);
    CHECK(cfg.net.min_bottleneck_extent == 8);
    CHECK(cfg.train.patch == std::array<int, 3>{48, 192, 192});
    CHECK(cfg.train.batch_size == 8);
    CHECK(cfg.train.iterations_per_epoch == 250);
    CHECK(cfg.train.initial_lr == 3e-4);

    CHECK_THROWS_AS(apply_profile(cfg, "laptop"), std::runtime_error);
}

TEST_CASE("paper profile network constructs (weights exist for all six levels)") {
    PipelineConfig cfg;
    apply_profile(cfg, "paper");
    UNet<float> net(cfg.net, 1);
    CHECK(net.param_count() > 1000000);
    CHECK(net.config().num_heads() == 5);
}
