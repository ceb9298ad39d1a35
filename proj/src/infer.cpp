#include "voxseg/infer.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

#include "voxseg/rng.hpp"

namespace voxseg {

PatchGrid make_grid(const std::array<int, 3>& volume_shape,
                    const std::array<int, 3>& patch_shape) {
    PatchGrid g;
    g.patch = patch_shape;
    std::array<std::vector<int>, 3> axis_origins;
    for (int a = 0; a < 3; ++a) {
        if (patch_shape[a] < 1 || volume_shape[a] < 1)
            throw std::runtime_error("make_grid: non-positive shape");
        if (patch_shape[a] > volume_shape[a])
            throw std::runtime_error("make_grid: patch exceeds volume on axis " +
                                     std::to_string(a) + "; pad the volume first");
        g.stride[a] = std::max(1, patch_shape[a] / 2);
        const int last = volume_shape[a] - patch_shape[a];
        for (int o = 0; o < last; o += g.stride[a]) axis_origins[a].push_back(o);
        axis_origins[a].push_back(last);
    }
    for (int z : axis_origins[0])
        for (int y : axis_origins[1])
            for (int x : axis_origins[2]) g.origins.push_back({z, y, x});
    return g;
}

std::vector<float> gaussian_weights(const std::array<int, 3>& patch_shape, double sigma_scale) {
    std::array<std::vector<double>, 3> axis;
    for (int a = 0; a < 3; ++a) {
        const int n = patch_shape[a];
        const double c = (n - 1) * 0.5;
        const double sigma = sigma_scale * n;
        axis[a].resize(static_cast<std::size_t>(n));
        for (int i = 0; i < n; ++i) {
            const double d = i - c;
            axis[a][static_cast<std::size_t>(i)] =
                sigma > 0.0 ? std::exp(-d * d / (2.0 * sigma * sigma)) : 1.0;
        }
    }
    std::vector<float> w(static_cast<std::size_t>(patch_shape[0]) * patch_shape[1] * patch_shape[2]);
    std::size_t i = 0;
    for (int z = 0; z < patch_shape[0]; ++z)
        for (int y = 0; y < patch_shape[1]; ++y)
            for (int x = 0; x < patch_shape[2]; ++x)
                w[i++] = float(std::max(1e-3, axis[0][static_cast<std::size_t>(z)] *
                                                  axis[1][static_cast<std::size_t>(y)] *
                                                  axis[2][static_cast<std::size_t>(x)]));
    return w;
}

PatchPredictor make_predictor(const UNet<float>& net) {
    return [&net](const Tensor5<float>& x) { return net.forward_eval_top(x); };
}

namespace {

template <typename T>
Tensor5<T> mirror_tensor(const Tensor5<T>& t, const std::array<bool, 3>& axes) {
    if (!axes[0] && !axes[1] && !axes[2]) return t;
    Tensor5<T> out(t.n, t.c, t.d, t.h, t.w);
    for (int n = 0; n < t.n; ++n)
        for (int c = 0; c < t.c; ++c)
            for (int z = 0; z < t.d; ++z) {
                const int zi = axes[0] ? t.d - 1 - z : z;
                for (int y = 0; y < t.h; ++y) {
                    const int yi = axes[1] ? t.h - 1 - y : y;
                    const T* src = t.row(n, c, zi, yi);
                    T* dst = out.row(n, c, z, y);
                    if (axes[2])
                        for (int x = 0; x < t.w; ++x) dst[x] = src[t.w - 1 - x];
                    else
                        std::copy_n(src, t.w, dst);
                }
            }
    return out;
}

std::vector<std::array<bool, 3>> mirror_variants(const std::array<bool, 3>& enabled) {
    std::vector<std::array<bool, 3>> out;
    for (int mask = 0; mask < 8; ++mask) {
        const std::array<bool, 3> v{bool(mask & 1), bool(mask & 2), bool(mask & 4)};
        bool ok = true;
        for (int a = 0; a < 3; ++a)
            if (v[static_cast<std::size_t>(a)] && !enabled[static_cast<std::size_t>(a)]) ok = false;
        if (ok) out.push_back(v);
    }
    return out;
}

} // namespace

ProbMap predict_volume(const PatchPredictor& predict, const Volume& v, const PatchGrid& grid,
                       const TtaPolicy& tta, double sigma_scale, std::uint64_t seed,
                       std::vector<int>* prediction_count) {
    if (tta.noise_std < 0.0) throw std::runtime_error("predict_volume: negative noise std");
    for (int a = 0; a < 3; ++a)
        if (grid.patch[a] > v.geo.shape[a])
            throw std::runtime_error("predict_volume: grid patch exceeds volume");

    const std::int64_t vox = v.geo.voxel_count();
    std::vector<double> acc_prob(static_cast<std::size_t>(kNumClasses * vox), 0.0);
    std::vector<double> acc_w(static_cast<std::size_t>(vox), 0.0);
    if (prediction_count) prediction_count->assign(static_cast<std::size_t>(vox), 0);

    const std::vector<float> weights = gaussian_weights(grid.patch, sigma_scale);
    const auto variants = mirror_variants(tta.mirror_axes);
    const int passes = 1 + std::max(0, tta.noise_repeats);
    const auto [pd, ph, pw] = grid.patch;

    for (std::size_t oi = 0; oi < grid.origins.size(); ++oi) {
        const auto& org = grid.origins[oi];
        Tensor5<float> patch(1, 1, pd, ph, pw);
        for (int z = 0; z < pd; ++z)
            for (int y = 0; y < ph; ++y)
                std::copy_n(&v.data[static_cast<std::size_t>(
                                v.geo.index_of(org[0] + z, org[1] + y, org[2]))],
                            pw, patch.row(0, 0, z, y));

        for (std::size_t vi = 0; vi < variants.size(); ++vi) {
            const Tensor5<float> mirrored = mirror_tensor(patch, variants[vi]);
            for (int pass = 0; pass < passes; ++pass) {
                Tensor5<float> input = mirrored;
                if (pass > 0) {
                    Rng noise(derive_seed(seed, (oi * 8 + vi) * 64 + std::uint64_t(pass)));
                    for (auto& x : input.v) x += float(noise.normal(0.0, tta.noise_std));
                }
                Tensor5<float> probs = predict(input);
                if (probs.c != kNumClasses || probs.d != pd || probs.h != ph || probs.w != pw)
                    throw std::runtime_error("predict_volume: predictor returned " +
                                             probs.dims_str());
                const Tensor5<float> unmirrored = mirror_tensor(probs, variants[vi]);

                std::size_t li = 0;
                for (int z = 0; z < pd; ++z)
                    for (int y = 0; y < ph; ++y) {
                        const std::int64_t gbase =
                            v.geo.index_of(org[0] + z, org[1] + y, org[2]);
                        for (int x = 0; x < pw; ++x, ++li) {
                            const double w = double(weights[li]);
                            const auto gi = static_cast<std::size_t>(gbase + x);
                            for (int c = 0; c < kNumClasses; ++c)
                                acc_prob[static_cast<std::size_t>(c) * static_cast<std::size_t>(vox) + gi] +=
                                    w * double(unmirrored.at(0, c, z, y, x));
                            acc_w[gi] += w;
                            if (prediction_count) ++(*prediction_count)[gi];
                        }
                    }
            }
        }
    }

    ProbMap out;
    out.geo = v.geo;
    out.channels = kNumClasses;
    out.data.resize(static_cast<std::size_t>(kNumClasses * vox));
    for (std::int64_t i = 0; i < vox; ++i) {
        const auto gi = static_cast<std::size_t>(i);
        if (!(acc_w[gi] > 0.0))
            throw std::runtime_error("predict_volume: uncovered voxel (grid does not cover volume)");
        for (int c = 0; c < kNumClasses; ++c) {
            const double p = acc_prob[static_cast<std::size_t>(c) * static_cast<std::size_t>(vox) + gi] / acc_w[gi];
            out.data[static_cast<std::size_t>(c) * static_cast<std::size_t>(vox) + gi] =
                float(std::clamp(p, 0.0, 1.0));
        }
    }
    return out;
}

LabelMask argmax_labels(const ProbMap& p) {
    LabelMask out;
    out.geo = p.geo;
    const std::int64_t vox = p.geo.voxel_count();
    out.data.resize(static_cast<std::size_t>(vox));
    for (std::int64_t i = 0; i < vox; ++i) {
        int best = 0;
        float best_p = p.data[static_cast<std::size_t>(i)];
        for (int c = 1; c < p.channels; ++c) {
            const float pc = p.data[static_cast<std::size_t>(std::int64_t(c) * vox + i)];
            if (pc > best_p) {
                best_p = pc;
                best = c;
            }
        }
        out.data[static_cast<std::size_t>(i)] = std::uint8_t(best);
    }
    return out;
}

Volume reflect_pad(const Volume& v, const std::array<int, 3>& min_shape) {
    std::array<int, 3> target = v.geo.shape;
    bool need = false;
    for (int a = 0; a < 3; ++a)
        if (target[a] < min_shape[a]) {
            target[a] = min_shape[a];
            need = true;
        }
    if (!need) return v;
    Volume out;
    out.geo = v.geo;
    out.geo.shape = target;
    out.data.resize(static_cast<std::size_t>(out.geo.voxel_count()));
    const auto reflect = [](int i, int n) {
        // reflect without repeating the border sample (n >= 1)
        if (n == 1) return 0;
        const int period = 2 * (n - 1);
        int j = i % period;
        if (j < 0) j += period;
        return j < n ? j : period - j;
    };
    for (int z = 0; z < target[0]; ++z) {
        const int zi = reflect(z, v.geo.shape[0]);
        for (int y = 0; y < target[1]; ++y) {
            const int yi = reflect(y, v.geo.shape[1]);
            for (int x = 0; x < target[2]; ++x)
                out.at(z, y, x) = v.at(zi, yi, reflect(x, v.geo.shape[2]));
        }
    }
    return out;
}

ProbMap crop(const ProbMap& p, const std::array<int, 3>& shape) {
    if (shape == p.geo.shape) return p;
    for (int a = 0; a < 3; ++a)
        if (shape[a] > p.geo.shape[a]) throw std::runtime_error("crop: target exceeds source");
    ProbMap out;
    out.geo = p.geo;
    out.geo.shape = shape;
    out.channels = p.channels;
    const std::int64_t vox = out.geo.voxel_count();
    out.data.resize(static_cast<std::size_t>(p.channels * vox));
    for (int c = 0; c < p.channels; ++c)
        for (int z = 0; z < shape[0]; ++z)
            for (int y = 0; y < shape[1]; ++y)
                for (int x = 0; x < shape[2]; ++x)
                    out.data[static_cast<std::size_t>(std::int64_t(c) * vox +
                                                      out.geo.index_of(z, y, x))] =
                        p.at(c, z, y, x);
    return out;
}

} // namespace voxseg
