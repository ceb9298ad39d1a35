#include "voxseg/preprocess.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <stdexcept>

#include "json.hpp"

#include "voxseg/parallel.hpp"

namespace voxseg {

double percentile(std::span<const float> values, double q) {
    if (values.empty()) throw std::runtime_error("percentile: empty sample");
    std::vector<float> sorted(values.begin(), values.end());
    std::sort(sorted.begin(), sorted.end());
    const auto n = static_cast<double>(sorted.size());
    double rank = q / 100.0 * n - 0.5;
    rank = std::clamp(rank, 0.0, n - 1.0);
    const auto lo = static_cast<std::size_t>(rank);
    const double frac = rank - static_cast<double>(lo);
    if (frac == 0.0 || lo + 1 >= sorted.size()) return sorted[lo];
    return sorted[lo] + frac * (double(sorted[lo + 1]) - double(sorted[lo]));
}

PreprocessStats compute_stats(const std::vector<const Volume*>& volumes,
                              const std::vector<const LabelMask*>& fg_masks,
                              ForegroundMode mode) {
    if (volumes.empty()) throw std::runtime_error("compute_stats: no volumes");
    if (mode == ForegroundMode::kLabeled && fg_masks.size() != volumes.size())
        throw std::runtime_error("compute_stats: mask count does not match volume count");

    // gather-then-sort: identical result regardless of any parallel split
    std::vector<float> pooled;
    std::size_t total = 0;
    for (const Volume* v : volumes) total += v->data.size();
    pooled.reserve(total);
    for (const Volume* v : volumes) pooled.insert(pooled.end(), v->data.begin(), v->data.end());

    PreprocessStats s;
    s.p_low = percentile(pooled, 0.5);
    s.p_high = percentile(pooled, 99.5);

    double sum = 0.0, sum_sq = 0.0;
    std::int64_t count = 0;
    for (std::size_t i = 0; i < volumes.size(); ++i) {
        const Volume& v = *volumes[i];
        for (std::int64_t j = 0; j < std::ssize(v.data); ++j) {
            const bool fg = mode == ForegroundMode::kLabeled
                                ? fg_masks[i]->data[static_cast<std::size_t>(j)] != 0
                                : v.data[static_cast<std::size_t>(j)] > s.p_low;
            if (!fg) continue;
            const double x = std::clamp(double(v.data[static_cast<std::size_t>(j)]), s.p_low, s.p_high);
            sum += x;
            sum_sq += x * x;
            ++count;
        }
    }
    if (count == 0) throw std::runtime_error("compute_stats: no foreground voxels in any volume");
    s.fg_mean = sum / double(count);
    const double var = std::max(0.0, sum_sq / double(count) - s.fg_mean * s.fg_mean);
    s.fg_std = std::sqrt(var);
    return s;
}

Volume clip_and_normalize(const Volume& v, const PreprocessStats& s) {
    if (!(s.fg_std > 0.0))
        throw std::runtime_error("clip_and_normalize: fg_std must be > 0");
    Volume out;
    out.geo = v.geo;
    out.data.resize(v.data.size());
    const float lo = float(s.p_low), hi = float(s.p_high);
    const float mean = float(s.fg_mean), inv_std = float(1.0 / s.fg_std);
    for (std::size_t i = 0; i < v.data.size(); ++i)
        out.data[i] = (std::clamp(v.data[i], lo, hi) - mean) * inv_std;
    return out;
}

namespace {

Geometry resampled_geometry(const Geometry& in, const std::array<double, 3>& target) {
    for (double t : target)
        if (!(t > 0.0)) throw std::runtime_error("resample: target spacing must be > 0");
    Geometry out = in;
    for (int a = 0; a < 3; ++a) {
        const double extent = double(in.shape[a]) * in.spacing[a];
        out.shape[a] = std::max(1, int(std::llround(extent / target[a])));
        out.spacing[a] = target[a];
    }
    return out;
}

} // namespace

Volume resample(const Volume& v, const std::array<double, 3>& target_spacing) {
    const Geometry out_geo = resampled_geometry(v.geo, target_spacing);
    if (out_geo.shape == v.geo.shape && out_geo.spacing == v.geo.spacing) return v;

    Volume out;
    out.geo = out_geo;
    out.data.resize(static_cast<std::size_t>(out_geo.voxel_count()));

    const auto& in_shape = v.geo.shape;
    const double rz = target_spacing[0] / v.geo.spacing[0];
    const double ry = target_spacing[1] / v.geo.spacing[1];
    const double rx = target_spacing[2] / v.geo.spacing[2];

    par::parallel_for(out_geo.shape[0], [&](std::int64_t z) {
        const double sz = double(z) * rz;
        const int z0 = std::clamp(int(std::floor(sz)), 0, in_shape[0] - 1);
        const int z1 = std::min(z0 + 1, in_shape[0] - 1);
        const double fz = std::clamp(sz - double(z0), 0.0, 1.0);
        for (int y = 0; y < out_geo.shape[1]; ++y) {
            const double sy = double(y) * ry;
            const int y0 = std::clamp(int(std::floor(sy)), 0, in_shape[1] - 1);
            const int y1 = std::min(y0 + 1, in_shape[1] - 1);
            const double fy = std::clamp(sy - double(y0), 0.0, 1.0);
            for (int x = 0; x < out_geo.shape[2]; ++x) {
                const double sx = double(x) * rx;
                const int x0 = std::clamp(int(std::floor(sx)), 0, in_shape[2] - 1);
                const int x1 = std::min(x0 + 1, in_shape[2] - 1);
                const double fx = std::clamp(sx - double(x0), 0.0, 1.0);

                const double c000 = v.at(z0, y0, x0), c001 = v.at(z0, y0, x1);
                const double c010 = v.at(z0, y1, x0), c011 = v.at(z0, y1, x1);
                const double c100 = v.at(z1, y0, x0), c101 = v.at(z1, y0, x1);
                const double c110 = v.at(z1, y1, x0), c111 = v.at(z1, y1, x1);

                const double c00 = c000 + fx * (c001 - c000);
                const double c01 = c010 + fx * (c011 - c010);
                const double c10 = c100 + fx * (c101 - c100);
                const double c11 = c110 + fx * (c111 - c110);
                const double c0 = c00 + fy * (c01 - c00);
                const double c1 = c10 + fy * (c11 - c10);
                out.at(int(z), y, x) = float(c0 + fz * (c1 - c0));
            }
        }
    });
    return out;
}

LabelMask resample_labels(const LabelMask& m, const std::array<double, 3>& target_spacing) {
    const Geometry out_geo = resampled_geometry(m.geo, target_spacing);
    if (out_geo.shape == m.geo.shape && out_geo.spacing == m.geo.spacing) return m;

    LabelMask out;
    out.geo = out_geo;
    out.data.resize(static_cast<std::size_t>(out_geo.voxel_count()));

    const double rz = target_spacing[0] / m.geo.spacing[0];
    const double ry = target_spacing[1] / m.geo.spacing[1];
    const double rx = target_spacing[2] / m.geo.spacing[2];

    par::parallel_for(out_geo.shape[0], [&](std::int64_t z) {
        const int zi = std::clamp(int(std::llround(double(z) * rz)), 0, m.geo.shape[0] - 1);
        for (int y = 0; y < out_geo.shape[1]; ++y) {
            const int yi = std::clamp(int(std::llround(double(y) * ry)), 0, m.geo.shape[1] - 1);
            for (int x = 0; x < out_geo.shape[2]; ++x) {
                const int xi = std::clamp(int(std::llround(double(x) * rx)), 0, m.geo.shape[2] - 1);
                out.at(int(z), y, x) = m.at(zi, yi, xi);
            }
        }
    });
    return out;
}

void save_stats(const PreprocessStats& s, const std::filesystem::path& path) {
    nlohmann::json j;
    j["p_low"] = s.p_low;
    j["p_high"] = s.p_high;
    j["fg_mean"] = s.fg_mean;
    j["fg_std"] = s.fg_std;
    std::ofstream out(path, std::ios::trunc);
    if (!out) throw std::runtime_error("cannot write stats file " + path.string());
    out << j.dump(2) << '\n';
}

PreprocessStats load_stats(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot open stats file " + path.string());
    nlohmann::json j;
    try {
        in >> j;
        PreprocessStats s;
        s.p_low = j.at("p_low").get<double>();
        s.p_high = j.at("p_high").get<double>();
        s.fg_mean = j.at("fg_mean").get<double>();
        s.fg_std = j.at("fg_std").get<double>();
        if (s.p_low > s.p_high || s.fg_std < 0.0)
            throw std::runtime_error("stats file " + path.string() + " violates invariants");
        return s;
    } catch (const nlohmann::json::exception& e) {
        throw std::runtime_error("stats file " + path.string() + ": " + e.what());
    }
}

} // namespace voxseg
