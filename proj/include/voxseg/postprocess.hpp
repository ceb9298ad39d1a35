#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include "voxseg/volume.hpp"

namespace voxseg {

struct ComponentRecord {
    int id = 0;              // 1-based, dense
    std::uint8_t cls = 0;
    std::int64_t voxels = 0;
    std::array<int, 3> bbox_lo{}, bbox_hi{}; // inclusive
};

struct ComponentLabeling {
    std::vector<int> ids; // per voxel, 0 = not in any component of the class
    std::vector<ComponentRecord> components;
};

/// Maximal connected sets of voxels of one class under 6- or 26-connectivity.
/// Component IDs follow first-voxel scan order, so labeling is deterministic.
ComponentLabeling connected_components(const LabelMask& m, int class_id, int connectivity);

struct PostprocessConfig {
    int connectivity = 26;            // components and tumor-kidney adjacency
    double second_kidney_ratio = 0.1; // keep 2nd kidney iff >= ratio * largest
};

struct ComponentDecision {
    std::int64_t voxels = 0;
    bool kept = false;
    std::string reason;
};

struct PostprocessAudit {
    bool kidney_found = true;
    std::vector<ComponentDecision> kidneys, tumors;
};

/// Keeps the largest kidney component, plus the second-largest when it is at
/// least `second_kidney_ratio` of the largest; other kidney voxels become
/// background. No kidney at all leaves the mask unchanged.
LabelMask filter_kidneys(const LabelMask& m, const PostprocessConfig& cfg = {},
                         PostprocessAudit* audit = nullptr);

/// Keeps tumor components adjacent to a retained kidney voxel; removes the rest.
LabelMask filter_tumors(const LabelMask& m, const PostprocessConfig& cfg = {},
                        PostprocessAudit* audit = nullptr);

/// filter_tumors(filter_kidneys(m)); idempotent.
LabelMask postprocess(const LabelMask& m, const PostprocessConfig& cfg = {},
                      PostprocessAudit* audit = nullptr);

} // namespace voxseg
