#include "voxseg/augment.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

#include "voxseg/parallel.hpp"

namespace voxseg {

namespace {

constexpr double kPi = 3.14159265358979323846;

using Mat3 = std::array<double, 9>; // row-major, acts on (z, y, x) columns

Mat3 mat_mul(const Mat3& a, const Mat3& b) {
    Mat3 c{};
    for (int i = 0; i < 3; ++i)
        for (int j = 0; j < 3; ++j) {
            double s = 0.0;
            for (int k = 0; k < 3; ++k) s += a[i * 3 + k] * b[k * 3 + j];
            c[i * 3 + j] = s;
        }
    return c;
}

Mat3 transpose(const Mat3& a) {
    return {a[0], a[3], a[6], a[1], a[4], a[7], a[2], a[5], a[8]};
}

// Rotations of (z,y,x) coordinate vectors about each axis.
Mat3 rot_z(double t) {
    const double c = std::cos(t), s = std::sin(t);
    return {1, 0, 0, 0, c, -s, 0, s, c};
}
Mat3 rot_y(double t) {
    const double c = std::cos(t), s = std::sin(t);
    return {c, 0, s, 0, 1, 0, -s, 0, c};
}
Mat3 rot_x(double t) {
    const double c = std::cos(t), s = std::sin(t);
    return {c, -s, 0, s, c, 0, 0, 0, 1};
}

Mat3 rotation_forward(const std::array<double, 3>& angles_deg) {
    const double az = angles_deg[0] * kPi / 180.0;
    const double ay = angles_deg[1] * kPi / 180.0;
    const double ax = angles_deg[2] * kPi / 180.0;
    return mat_mul(rot_z(az), mat_mul(rot_y(ay), rot_x(ax)));
}

struct WarpSpec {
    Mat3 inverse{1, 0, 0, 0, 1, 0, 0, 0, 1}; // source = center + inverse*(out-center) + disp
    bool identity_affine = true;
    const std::array<std::vector<float>, 3>* disp = nullptr;
};

float volume_min(const Volume& v) {
    float m = v.data[0];
    for (const float x : v.data) m = std::min(m, x);
    return m;
}

std::pair<Volume, LabelMask> warp_pair(const Volume& v, const LabelMask& m, const WarpSpec& spec) {
    if (v.geo != m.geo) throw std::runtime_error("augment: image/label geometry mismatch");
    Volume out_v;
    out_v.geo = v.geo;
    out_v.data.resize(v.data.size());
    LabelMask out_m;
    out_m.geo = m.geo;
    out_m.data.resize(m.data.size());

    const auto& shape = v.geo.shape;
    const double cz = (shape[0] - 1) * 0.5;
    const double cy = (shape[1] - 1) * 0.5;
    const double cx = (shape[2] - 1) * 0.5;
    const Mat3& A = spec.inverse;
    const float fill = volume_min(v);

    par::parallel_for(shape[0], [&](std::int64_t z) {
        for (int y = 0; y < shape[1]; ++y) {
            for (int x = 0; x < shape[2]; ++x) {
                double sz, sy, sx;
                if (spec.identity_affine) {
                    sz = double(z);
                    sy = double(y);
                    sx = double(x);
                } else {
                    const double dz = double(z) - cz, dy = double(y) - cy, dx = double(x) - cx;
                    sz = cz + A[0] * dz + A[1] * dy + A[2] * dx;
                    sy = cy + A[3] * dz + A[4] * dy + A[5] * dx;
                    sx = cx + A[6] * dz + A[7] * dy + A[8] * dx;
                }
                if (spec.disp) {
                    const std::size_t i = static_cast<std::size_t>(v.geo.index_of(int(z), y, x));
                    sz += (*spec.disp)[0][i];
                    sy += (*spec.disp)[1][i];
                    sx += (*spec.disp)[2][i];
                }

                const std::size_t oi = static_cast<std::size_t>(v.geo.index_of(int(z), y, x));
                // tolerate ~ulp drift onto the boundary (exact 90-degree
                // rotations land there), then clamp into the valid box
                constexpr double kEdge = 1e-6;
                const bool inside = sz >= -kEdge && sz <= shape[0] - 1 + kEdge && sy >= -kEdge &&
                                    sy <= shape[1] - 1 + kEdge && sx >= -kEdge &&
                                    sx <= shape[2] - 1 + kEdge;
                if (!inside) {
                    out_v.data[oi] = fill;
                    out_m.data[oi] = 0;
                    continue;
                }
                sz = std::clamp(sz, 0.0, double(shape[0] - 1));
                sy = std::clamp(sy, 0.0, double(shape[1] - 1));
                sx = std::clamp(sx, 0.0, double(shape[2] - 1));
                const int z0 = std::min(int(sz), shape[0] - 1), z1 = std::min(z0 + 1, shape[0] - 1);
                const int y0 = std::min(int(sy), shape[1] - 1), y1 = std::min(y0 + 1, shape[1] - 1);
                const int x0 = std::min(int(sx), shape[2] - 1), x1 = std::min(x0 + 1, shape[2] - 1);
                const double fz = sz - z0, fy = sy - y0, fx = sx - x0;

                const double c00 = v.at(z0, y0, x0) + fx * (v.at(z0, y0, x1) - v.at(z0, y0, x0));
                const double c01 = v.at(z0, y1, x0) + fx * (v.at(z0, y1, x1) - v.at(z0, y1, x0));
                const double c10 = v.at(z1, y0, x0) + fx * (v.at(z1, y0, x1) - v.at(z1, y0, x0));
                const double c11 = v.at(z1, y1, x0) + fx * (v.at(z1, y1, x1) - v.at(z1, y1, x0));
                const double c0 = c00 + fy * (c01 - c00);
                const double c1 = c10 + fy * (c11 - c10);
                out_v.data[oi] = float(c0 + fz * (c1 - c0));

                const int nz = std::clamp(int(std::llround(sz)), 0, shape[0] - 1);
                const int ny = std::clamp(int(std::llround(sy)), 0, shape[1] - 1);
                const int nx = std::clamp(int(std::llround(sx)), 0, shape[2] - 1);
                out_m.data[oi] = m.at(nz, ny, nx);
            }
        }
    });
    return {std::move(out_v), std::move(out_m)};
}

// Separable Gaussian smoothing with edge-clamped borders, kernel radius 3*sigma.
void gaussian_smooth_inplace(std::vector<float>& f, const Geometry& geo, double sigma) {
    if (sigma <= 0.0) return;
    const int radius = std::max(1, int(std::ceil(3.0 * sigma)));
    std::vector<double> kernel(static_cast<std::size_t>(2 * radius + 1));
    double ksum = 0.0;
    for (int i = -radius; i <= radius; ++i) {
        const double k = std::exp(-0.5 * double(i) * double(i) / (sigma * sigma));
        kernel[static_cast<std::size_t>(i + radius)] = k;
        ksum += k;
    }
    for (auto& k : kernel) k /= ksum;

    const auto& s = geo.shape;
    std::vector<float> tmp(f.size());
    const auto pass = [&](int axis, const std::vector<float>& src, std::vector<float>& dst) {
        const int n = s[axis];
        par::parallel_for(geo.voxel_count() / n, [&](std::int64_t line) {
            // decompose line id into the two fixed axes
            int idx[3];
            std::int64_t rest = line;
            for (int a = 2; a >= 0; --a) {
                if (a == axis) continue;
                idx[a] = int(rest % s[a]);
                rest /= s[a];
            }
            for (int i = 0; i < n; ++i) {
                idx[axis] = i;
                double acc = 0.0;
                for (int k = -radius; k <= radius; ++k) {
                    int j[3] = {idx[0], idx[1], idx[2]};
                    j[axis] = std::clamp(i + k, 0, n - 1);
                    acc += kernel[static_cast<std::size_t>(k + radius)] *
                           src[static_cast<std::size_t>(geo.index_of(j[0], j[1], j[2]))];
                }
                dst[static_cast<std::size_t>(geo.index_of(idx[0], idx[1], idx[2]))] = float(acc);
            }
        });
    };
    pass(0, f, tmp);
    pass(1, tmp, f);
    pass(2, f, tmp);
    f.swap(tmp);
}

} // namespace

void AugmentConfig::validate() const {
    if (rotation_deg < 0.0) throw std::runtime_error("augment config: rotation_deg < 0");
    if (scale_min > scale_max || scale_min <= 0.0)
        throw std::runtime_error("augment config: bad scale range");
    if (elastic_alpha_min > elastic_alpha_max || elastic_alpha_min < 0.0)
        throw std::runtime_error("augment config: bad elastic alpha range");
    if (elastic_sigma_min > elastic_sigma_max || elastic_sigma_min <= 0.0)
        throw std::runtime_error("augment config: bad elastic sigma range");
    if (gamma_min > gamma_max || gamma_min <= 0.0)
        throw std::runtime_error("augment config: gamma range must be > 0");
    for (double p : {p_rotate, p_scale, p_elastic, p_gamma, p_mirror})
        if (p < 0.0 || p > 1.0) throw std::runtime_error("augment config: probability outside [0,1]");
}

std::array<std::vector<float>, 3> elastic_displacement_field(const Geometry& geo, double alpha,
                                                             double sigma, std::uint64_t seed) {
    std::array<std::vector<float>, 3> disp;
    Rng rng(seed);
    const auto n = static_cast<std::size_t>(geo.voxel_count());
    for (auto& d : disp) {
        d.resize(n);
        for (auto& x : d) x = float(rng.uniform(-1.0, 1.0));
        gaussian_smooth_inplace(d, geo, sigma);
        for (auto& x : d) x = float(double(x) * alpha);
    }
    return disp;
}

std::pair<Volume, LabelMask> rotate(const Volume& v, const LabelMask& m,
                                    const std::array<double, 3>& angles_deg) {
    for (double a : angles_deg)
        if (!std::isfinite(a)) throw std::runtime_error("rotate: non-finite angle");
    WarpSpec spec;
    spec.inverse = transpose(rotation_forward(angles_deg));
    spec.identity_affine = angles_deg == std::array<double, 3>{0, 0, 0};
    return warp_pair(v, m, spec);
}

std::pair<Volume, LabelMask> scale(const Volume& v, const LabelMask& m, double factor) {
    if (!(factor > 0.0)) throw std::runtime_error("scale: factor must be > 0");
    WarpSpec spec;
    const double inv = 1.0 / factor;
    spec.inverse = {inv, 0, 0, 0, inv, 0, 0, 0, inv};
    spec.identity_affine = factor == 1.0;
    return warp_pair(v, m, spec);
}

std::pair<Volume, LabelMask> elastic_deform(const Volume& v, const LabelMask& m, double alpha,
                                            double sigma, std::uint64_t seed) {
    if (alpha == 0.0) return {v, m};
    const auto disp = elastic_displacement_field(v.geo, alpha, sigma, seed);
    WarpSpec spec;
    spec.disp = &disp;
    return warp_pair(v, m, spec);
}

Volume gamma_correct(const Volume& v, double gamma) {
    if (!(gamma > 0.0)) throw std::runtime_error("gamma_correct: gamma must be > 0");
    if (gamma == 1.0) return v;
    float lo = v.data[0], hi = v.data[0];
    for (const float x : v.data) {
        lo = std::min(lo, x);
        hi = std::max(hi, x);
    }
    if (lo == hi) return v;
    Volume out;
    out.geo = v.geo;
    out.data.resize(v.data.size());
    const double range = double(hi) - double(lo);
    for (std::size_t i = 0; i < v.data.size(); ++i) {
        const double xn = (double(v.data[i]) - lo) / range;
        out.data[i] = float(std::pow(xn, gamma) * range + lo);
    }
    return out;
}

std::pair<Volume, LabelMask> mirror(const Volume& v, const LabelMask& m,
                                    const std::array<bool, 3>& axes) {
    if (v.geo != m.geo) throw std::runtime_error("mirror: image/label geometry mismatch");
    Volume out_v;
    out_v.geo = v.geo;
    out_v.data.resize(v.data.size());
    LabelMask out_m;
    out_m.geo = m.geo;
    out_m.data.resize(m.data.size());
    const auto& s = v.geo.shape;
    for (int z = 0; z < s[0]; ++z) {
        const int zi = axes[0] ? s[0] - 1 - z : z;
        for (int y = 0; y < s[1]; ++y) {
            const int yi = axes[1] ? s[1] - 1 - y : y;
            for (int x = 0; x < s[2]; ++x) {
                const int xi = axes[2] ? s[2] - 1 - x : x;
                out_v.at(z, y, x) = v.at(zi, yi, xi);
                out_m.at(z, y, x) = m.at(zi, yi, xi);
            }
        }
    }
    return {std::move(out_v), std::move(out_m)};
}

SampledAugment sample_augmentation(const AugmentConfig& cfg, Rng& rng) {
    cfg.validate();
    SampledAugment a;
    a.rotate = rng.bernoulli(cfg.p_rotate);
    if (a.rotate)
        for (auto& ang : a.angles_deg) ang = rng.uniform(-cfg.rotation_deg, cfg.rotation_deg);
    a.scale = rng.bernoulli(cfg.p_scale);
    if (a.scale) a.scale_factor = rng.uniform(cfg.scale_min, cfg.scale_max);
    a.elastic = rng.bernoulli(cfg.p_elastic);
    if (a.elastic) {
        a.alpha = rng.uniform(cfg.elastic_alpha_min, cfg.elastic_alpha_max);
        a.sigma = rng.uniform(cfg.elastic_sigma_min, cfg.elastic_sigma_max);
        a.elastic_seed = rng.next_u64();
    }
    a.gamma = rng.bernoulli(cfg.p_gamma);
    if (a.gamma) a.gamma_value = rng.uniform(cfg.gamma_min, cfg.gamma_max);
    for (int ax = 0; ax < 3; ++ax)
        if (cfg.mirror_axes[static_cast<std::size_t>(ax)])
            a.mirror[static_cast<std::size_t>(ax)] = rng.bernoulli(cfg.p_mirror);
    return a;
}

std::pair<Volume, LabelMask> apply_augmentation(const SampledAugment& aug, const Volume& v,
                                                const LabelMask& m) {
    std::pair<Volume, LabelMask> cur{v, m};
    const bool spatial = aug.rotate || aug.scale || (aug.elastic && aug.alpha != 0.0);
    if (spatial) {
        WarpSpec spec;
        Mat3 inv{1, 0, 0, 0, 1, 0, 0, 0, 1};
        if (aug.rotate) inv = transpose(rotation_forward(aug.angles_deg));
        if (aug.scale) {
            const double s = 1.0 / aug.scale_factor;
            for (auto& e : inv) e *= s;
        }
        spec.inverse = inv;
        spec.identity_affine = !aug.rotate && !aug.scale;
        std::array<std::vector<float>, 3> disp;
        if (aug.elastic && aug.alpha != 0.0) {
            disp = elastic_displacement_field(v.geo, aug.alpha, aug.sigma, aug.elastic_seed);
            spec.disp = &disp;
        }
        cur = warp_pair(cur.first, cur.second, spec);
    }
    if (aug.gamma) cur.first = gamma_correct(cur.first, aug.gamma_value);
    if (aug.mirror[0] || aug.mirror[1] || aug.mirror[2])
        cur = mirror(cur.first, cur.second, aug.mirror);
    return cur;
}

} // namespace voxseg
