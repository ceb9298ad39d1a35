#pragma once

#include <array>
#include <cstdint>
#include <utility>

#include "voxseg/rng.hpp"
#include "voxseg/volume.hpp"

namespace voxseg {

struct AugmentConfig {
    double rotation_deg = 15.0;  // per-axis range, degrees, drawn in [-r, r]
    double scale_min = 0.85;
    double scale_max = 1.25;
    double elastic_alpha_min = 0.0;   // displacement magnitude, voxels
    double elastic_alpha_max = 200.0;
    double elastic_sigma_min = 9.0;   // smoothing extent, voxels
    double elastic_sigma_max = 13.0;
    double gamma_min = 0.7;
    double gamma_max = 1.5;
    std::array<bool, 3> mirror_axes{true, true, true}; // z, y, x
    double p_rotate = 0.2;
    double p_scale = 0.2;
    double p_elastic = 0.2;
    double p_gamma = 0.2;
    double p_mirror = 0.5; // per axis

    void validate() const; // throws on ill-ordered ranges / bad probabilities
};

/// One concrete draw from the config; applying it is deterministic.
struct SampledAugment {
    bool rotate = false;
    std::array<double, 3> angles_deg{0, 0, 0}; // about z, y, x
    bool scale = false;
    double scale_factor = 1.0;
    bool elastic = false;
    double alpha = 0.0;
    double sigma = 1.0;
    std::uint64_t elastic_seed = 0;
    bool gamma = false;
    double gamma_value = 1.0;
    std::array<bool, 3> mirror{false, false, false};
};

/// Rotation about the volume center, image trilinear / labels nearest.
/// Out-of-field image voxels take the input minimum, labels 0.
std::pair<Volume, LabelMask> rotate(const Volume& v, const LabelMask& m,
                                    const std::array<double, 3>& angles_deg);

/// Zoom about the center by `factor`, resampled back onto the original grid.
std::pair<Volume, LabelMask> scale(const Volume& v, const LabelMask& m, double factor);

/// Random smooth displacement field: Gaussian-smoothed white noise scaled by
/// alpha, identical field for image and labels.
std::pair<Volume, LabelMask> elastic_deform(const Volume& v, const LabelMask& m,
                                            double alpha, double sigma, std::uint64_t seed);

/// Rescale to [0,1] by the volume's min/max, apply x^gamma, rescale back.
Volume gamma_correct(const Volume& v, double gamma);

std::pair<Volume, LabelMask> mirror(const Volume& v, const LabelMask& m,
                                    const std::array<bool, 3>& axes);

SampledAugment sample_augmentation(const AugmentConfig& cfg, Rng& rng);

/// Applies a sampled draw: rotate/scale/elastic fused into one resampling
/// pass, then gamma, then mirror.
std::pair<Volume, LabelMask> apply_augmentation(const SampledAugment& aug, const Volume& v,
                                                const LabelMask& m);

/// Raw displacement field used by elastic_deform, exposed for bound checks:
/// three per-axis fields, each |value| <= alpha.
std::array<std::vector<float>, 3> elastic_displacement_field(const Geometry& geo, double alpha,
                                                             double sigma, std::uint64_t seed);

} // namespace voxseg
