#pragma once

#include <array>
#include <cstdint>
#include <functional>
#include <vector>

#include "voxseg/tensor.hpp"
#include "voxseg/unet.hpp"
#include "voxseg/volume.hpp"

namespace voxseg {

/// Half-overlap tiling of a volume: origins at multiples of patch/2 per axis,
/// the final origin clamped so the last patch ends exactly at the boundary.
struct PatchGrid {
    std::array<int, 3> patch{};
    std::array<int, 3> stride{};
    std::vector<std::array<int, 3>> origins; // lexicographically sorted
};

PatchGrid make_grid(const std::array<int, 3>& volume_shape, const std::array<int, 3>& patch_shape);

/// Separable Gaussian patch weights, sigma = sigma_scale * axis length,
/// peak 1 at the patch center, floor-clamped at 1e-3. Row-major (d, h, w).
std::vector<float> gaussian_weights(const std::array<int, 3>& patch_shape, double sigma_scale);

struct TtaPolicy {
    std::array<bool, 3> mirror_axes{false, false, false}; // z, y, x
    double noise_std = 0.0;
    int noise_repeats = 0;
};

/// Maps a (1, 1, d, h, w) normalized patch to (1, 3, d, h, w) probabilities.
using PatchPredictor = std::function<Tensor5<float>(const Tensor5<float>&)>;

PatchPredictor make_predictor(const UNet<float>& net);

/// Gaussian-weighted aggregation of per-patch predictions over the grid with
/// mirror / noise test-time augmentation. `prediction_count`, when given, is
/// filled with the number of aggregated predictions per voxel.
ProbMap predict_volume(const PatchPredictor& predict, const Volume& v, const PatchGrid& grid,
                       const TtaPolicy& tta, double sigma_scale, std::uint64_t seed,
                       std::vector<int>* prediction_count = nullptr);

/// Per-voxel argmax; ties break toward the lower class ID.
LabelMask argmax_labels(const ProbMap& p);

/// Reflective padding up to at least min_shape per axis (no-op when already
/// large enough). Used before tiling volumes smaller than the patch.
Volume reflect_pad(const Volume& v, const std::array<int, 3>& min_shape);

/// Crops a prob map back to the leading `shape` region (inverse of the pad).
ProbMap crop(const ProbMap& p, const std::array<int, 3>& shape);

} // namespace voxseg
