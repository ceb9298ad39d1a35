#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <string>

#include "voxseg/augment.hpp"
#include "voxseg/loss.hpp"
#include "voxseg/phantom.hpp"
#include "voxseg/postprocess.hpp"
#include "voxseg/unet.hpp"

namespace voxseg {

struct PreprocessParams {
    std::array<double, 3> target_spacing{1, 1, 1};
    std::string fg_mode = "label"; // "label" | "above_p_low"
    bool per_volume_percentiles = false;
};

struct TrainParams {
    int epochs = 60;
    int iterations_per_epoch = 250;
    int batch_size = 2;
    std::array<int, 3> patch{32, 32, 32};
    double fg_oversample_prob = 1.0 / 3.0;
    std::uint64_t seed = 1;
    double initial_lr = 3e-4;
    double lr_drop_factor = 0.2;
    int lr_drop_patience = 30;
    int stop_patience = 50;
    double val_fraction = 0.0;
    bool augment = true;
};

struct InferParams {
    double sigma_scale = 0.125;
    std::array<bool, 3> mirror_axes{true, true, true};
    double noise_std = 0.01;
    int noise_repeats = 0;
};

/// One JSON document with per-module blocks; schema_version is mandatory and
/// unknown keys are rejected with their full path.
struct PipelineConfig {
    int schema_version = 1;
    PreprocessParams preprocess;
    AugmentConfig augment;
    UNetConfig net;
    TrainParams train;
    LossConfig loss;
    InferParams infer;
    PostprocessConfig postprocess;
    PhantomSpec phantom;
};

PipelineConfig load_config(const std::filesystem::path& path);

/// "desk" (small end-to-end runs) or "paper" (full-scale geometry).
void apply_profile(PipelineConfig& cfg, const std::string& profile);

} // namespace voxseg
