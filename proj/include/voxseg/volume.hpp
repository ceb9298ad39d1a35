#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <string>
#include <variant>
#include <vector>

namespace voxseg {

// Axis order is (depth, height, width) = (z, y, x) everywhere in this
// codebase; sizes quoted as WxHxD at the CLI boundary are transposed once
// on entry and never again.
struct Geometry {
    std::array<int, 3> shape{0, 0, 0};        // voxels, (z, y, x)
    std::array<double, 3> spacing{1, 1, 1};   // mm per voxel
    std::array<double, 3> origin{0, 0, 0};    // mm

    std::int64_t voxel_count() const {
        return static_cast<std::int64_t>(shape[0]) * shape[1] * shape[2];
    }
    std::int64_t index_of(int z, int y, int x) const {
        return (static_cast<std::int64_t>(z) * shape[1] + y) * shape[2] + x;
    }
    bool contains(int z, int y, int x) const {
        return z >= 0 && z < shape[0] && y >= 0 && y < shape[1] && x >= 0 && x < shape[2];
    }
    bool operator==(const Geometry&) const = default;
};

/// Dense 3D scalar field, z-major, float32 semantics.
struct Volume {
    Geometry geo;
    std::vector<float> data;

    float at(int z, int y, int x) const { return data[geo.index_of(z, y, x)]; }
    float& at(int z, int y, int x) { return data[geo.index_of(z, y, x)]; }
};

/// 3D field of class IDs: 0 = background, 1 = kidney, 2 = tumor.
struct LabelMask {
    Geometry geo;
    std::vector<std::uint8_t> data;

    std::uint8_t at(int z, int y, int x) const { return data[geo.index_of(z, y, x)]; }
    std::uint8_t& at(int z, int y, int x) { return data[geo.index_of(z, y, x)]; }
};

inline constexpr int kNumClasses = 3;

/// Per-voxel class probabilities, channel-outermost: data[c][z][y][x].
struct ProbMap {
    Geometry geo;
    int channels = kNumClasses;
    std::vector<float> data;

    float at(int c, int z, int y, int x) const {
        return data[c * geo.voxel_count() + geo.index_of(z, y, x)];
    }
    float& at(int c, int z, int y, int x) {
        return data[c * geo.voxel_count() + geo.index_of(z, y, x)];
    }
};

using AnyVolume = std::variant<Volume, LabelMask, ProbMap>;

/// Throws std::runtime_error describing the first violated invariant.
void validate(const Volume& v);
void validate(const LabelMask& m);
void validate(const ProbMap& p);

/// Reads a .mvol.json header + raw payload pair. `path` may be the header
/// path or the bare base path (".mvol.json" is appended).
AnyVolume read_volume(const std::filesystem::path& path);

Volume read_intensity(const std::filesystem::path& path);
LabelMask read_labels(const std::filesystem::path& path);
ProbMap read_probmap(const std::filesystem::path& path);

/// Writes header + payload. Validates first; round-trips bit-exactly.
void write_volume(const Volume& v, const std::filesystem::path& path);
void write_volume(const LabelMask& m, const std::filesystem::path& path);
void write_volume(const ProbMap& p, const std::filesystem::path& path);

/// World position (mm) of a voxel center: origin + index * spacing.
std::array<double, 3> voxel_to_world(const Geometry& geo, const std::array<int, 3>& index);

} // namespace voxseg
