#pragma once

#include <filesystem>
#include <limits>
#include <string>
#include <vector>

#include "voxseg/config.hpp"
#include "voxseg/unet.hpp"
#include "voxseg/volume.hpp"

namespace voxseg {

struct TrainCase {
    std::string id;
    Volume image;
    LabelMask labels;
    std::vector<std::int64_t> fg_indices; // voxels with label != 0
};

struct Dataset {
    std::vector<TrainCase> cases;
};

/// Loads <case>_img.mvol.json / <case>_seg.mvol.json pairs from a directory,
/// sorted by case id. Volumes smaller than min_shape are reflect-padded.
Dataset load_dataset(const std::filesystem::path& dir, const std::array<int, 3>& min_shape);

struct EpochRecord {
    int epoch = 0;
    double train_loss = 0;
    double val_loss = std::numeric_limits<double>::quiet_NaN();
    double mean_dice = std::numeric_limits<double>::quiet_NaN();
    double lr = 0;
};

struct TrainResult {
    UNet<float> net;
    std::vector<EpochRecord> history;
};

struct TrainOptions {
    UNetConfig net;
    TrainParams params;
    LossConfig loss;     // layer_weights are derived per head count, see below
    AugmentConfig augment;
    bool mss = true;     // false: only the top head is supervised
};

/// Per-head loss weights: the configured list truncated to the head count and
/// renormalized to sum 1; without deep supervision the top head gets weight 1.
std::vector<double> derive_layer_weights(int heads, const std::vector<double>& configured,
                                         bool mss);

/// Patch-based training: per iteration sample a batch (foreground-forced with
/// the configured probability), augment, forward, multiscale loss, backward,
/// Adam; per epoch record the mean loss and run the lr schedule.
TrainResult train(const TrainOptions& opt, const Dataset& data, const Dataset& val);

void write_history_csv(const std::vector<EpochRecord>& history,
                       const std::filesystem::path& path);

} // namespace voxseg
