#pragma once

#include <filesystem>
#include <span>
#include <vector>

#include "voxseg/volume.hpp"

namespace voxseg {

/// Intensity statistics fitted once on the training set and frozen for
/// validation/test/inference.
struct PreprocessStats {
    double p_low = 0.0;    // 0.5th percentile of pooled intensities
    double p_high = 0.0;   // 99.5th percentile
    double fg_mean = 0.0;  // mean of clipped foreground intensities
    double fg_std = 0.0;   // population std of same
};

enum class ForegroundMode {
    kLabeled,    // voxels with ground-truth label != 0 (default)
    kAbovePLow,  // all voxels above p_low
};

/// Percentile of a sample by linear interpolation between order statistics,
/// with sample i at percentile (i + 0.5) / N. Sorts a copy.
double percentile(std::span<const float> values, double q);

PreprocessStats compute_stats(const std::vector<const Volume*>& volumes,
                              const std::vector<const LabelMask*>& fg_masks,
                              ForegroundMode mode = ForegroundMode::kLabeled);

/// x -> (clamp(x, p_low, p_high) - fg_mean) / fg_std, geometry unchanged.
Volume clip_and_normalize(const Volume& v, const PreprocessStats& s);

/// Trilinear resampling onto target spacing. Output shape =
/// round(shape * spacing / target), min 1 per axis; origin preserved;
/// out-of-bounds samples clamp to the edge.
Volume resample(const Volume& v, const std::array<double, 3>& target_spacing);

/// Nearest-neighbor variant for label masks.
LabelMask resample_labels(const LabelMask& m, const std::array<double, 3>& target_spacing);

void save_stats(const PreprocessStats& s, const std::filesystem::path& path);
PreprocessStats load_stats(const std::filesystem::path& path);

} // namespace voxseg
