#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <utility>

#include "voxseg/volume.hpp"

namespace voxseg {

/// Synthetic CT-like case: ellipsoidal kidneys at bilateral offsets, spherical
/// tumors embedded in or attached to a kidney, exact labels by construction.
struct PhantomSpec {
    std::array<int, 3> shape{32, 64, 64};      // (z, y, x)
    std::array<double, 3> spacing{1, 1, 1};    // mm
    int kidney_count = 2;                      // 1 or 2
    std::array<double, 3> kidney_semiaxes_min{6, 8, 7};
    std::array<double, 3> kidney_semiaxes_max{9, 12, 10};
    int tumors_per_kidney_min = 0;
    int tumors_per_kidney_max = 2;
    double tumor_radius_min = 3.5;
    double tumor_radius_max = 6.0;
    std::string tumor_placement = "mixed"; // "embedded" | "attached" | "mixed"
    double bg_mean = -50, bg_std = 20;
    double kidney_mean = 120, kidney_std = 15;
    double tumor_mean = 60, tumor_std = 15;
    double noise_std = 0.0; // extra scanner noise on top of per-class spread
    std::uint64_t seed = 1;

    void validate() const; // geometry fits, intensity distributions separated
};

std::pair<Volume, LabelMask> generate_phantom(const PhantomSpec& spec);

} // namespace voxseg
