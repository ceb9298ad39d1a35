#pragma once

#include <cmath>
#include <stdexcept>
#include <vector>

#include "voxseg/parallel.hpp"
#include "voxseg/tensor.hpp"

// 3D network primitives. Kernels are stored conv-layout (out_c, in_c, kd, kh, kw)
// in a Tensor5; transposed convolution runs the same kernel in the adjoint
// direction, so conv3d(stride 2) and transposed_conv3d are exact adjoints.
// Every parallel loop writes disjoint outputs computed in a fixed order, so
// results do not depend on the thread count.

namespace voxseg {

template <typename T>
struct ConvDims {
    int out_d, out_h, out_w;
};

template <typename T>
ConvDims<T> conv_output_dims(const Tensor5<T>& x, int k, int stride) {
    if (k % 2 == 0 || k < 1) throw std::runtime_error("conv3d: kernel size must be odd");
    if (stride == 1) return {x.d, x.h, x.w};
    if (stride == 2) return {(x.d + 1) / 2, (x.h + 1) / 2, (x.w + 1) / 2};
    throw std::runtime_error("conv3d: stride must be 1 or 2");
}

/// Cross-correlation with "same" padding (stride 1) or half padding (stride 2,
/// output = ceil(input/2) per axis). kernel dims (out_c, in_c, k, k, k).
template <typename T>
Tensor5<T> conv3d(const Tensor5<T>& x, const Tensor5<T>& kernel, const std::vector<T>& bias,
                  int stride) {
    const int oc = kernel.n, ic = kernel.c, k = kernel.d;
    if (kernel.h != k || kernel.w != k)
        throw std::runtime_error("conv3d: kernel must be cubic, got " + kernel.dims_str());
    if (x.c != ic)
        throw std::runtime_error("conv3d: input channels " + std::to_string(x.c) +
                                 " != kernel in_c " + std::to_string(ic));
    if (!bias.empty() && std::ssize(bias) != oc)
        throw std::runtime_error("conv3d: bias size mismatch");
    const auto od = conv_output_dims(x, k, stride);
    const int r = k / 2;

    Tensor5<T> out(x.n, oc, od.out_d, od.out_h, od.out_w);
    par::parallel_for(std::int64_t(x.n) * oc * od.out_d, [&](std::int64_t job) {
        const int zo = int(job % od.out_d);
        const int o = int((job / od.out_d) % oc);
        const int in = int(job / od.out_d / oc);
        // accumulate into a per-thread scratch plane: no aliasing with x, so
        // the inner FMA loops vectorize
        static thread_local std::vector<T> scratch;
        const std::int64_t plane_n = std::int64_t(od.out_h) * od.out_w;
        scratch.assign(static_cast<std::size_t>(plane_n),
                       bias.empty() ? T(0) : bias[static_cast<std::size_t>(o)]);
        T* __restrict plane = scratch.data();

        for (int i = 0; i < ic; ++i) {
            for (int kz = 0; kz < k; ++kz) {
                const int zi = zo * stride + kz - r;
                if (zi < 0 || zi >= x.d) continue;

                if (stride == 1 && k == 3 && x.h >= 4 && x.w >= 8) {
                    // fused 3x3 in-plane path over the flattened (y, x) plane:
                    // one long vector loop applies all nine taps, then the few
                    // cells whose flat reads wrapped across a row boundary are
                    // corrected. Wrapped reads stay inside the plane, so this
                    // is pure arithmetic repair, never out-of-bounds access.
                    const T* __restrict w9 = kernel.row(o, i, kz, 0);
                    const T* __restrict xp = x.row(in, i, zi, 0);
                    const int w = od.out_w, hgt = od.out_h;
                    const std::int64_t hw = std::int64_t(hgt) * w;
                    const T w0 = w9[0], w1 = w9[1], w2 = w9[2], w3 = w9[3], w4 = w9[4],
                            w5 = w9[5], w6 = w9[6], w7 = w9[7], w8 = w9[8];
                    for (std::int64_t p = w + 1; p <= hw - w - 2; ++p)
                        plane[p] += w0 * xp[p - w - 1] + w1 * xp[p - w] + w2 * xp[p - w + 1] +
                                    w3 * xp[p - 1] + w4 * xp[p] + w5 * xp[p + 1] +
                                    w6 * xp[p + w - 1] + w7 * xp[p + w] + w8 * xp[p + w + 1];
                    // remove the wrapped kx=0 / kx=2 contributions on interior
                    // rows' border columns
                    for (int yo = 2; yo <= hgt - 2; ++yo) {
                        const std::int64_t p0 = std::int64_t(yo) * w;
                        plane[p0] -=
                            w0 * xp[p0 - w - 1] + w3 * xp[p0 - 1] + w6 * xp[p0 + w - 1];
                    }
                    for (int yo = 1; yo <= hgt - 3; ++yo) {
                        const std::int64_t p1 = std::int64_t(yo) * w + w - 1;
                        plane[p1] -=
                            w2 * xp[p1 - w + 1] + w5 * xp[p1 + 1] + w8 * xp[p1 + w + 1];
                    }
                    // cells the bulk loop skipped, plus the top/bottom rows,
                    // accumulate directly per tap
                    const auto cell = [&](int yo, int xo) {
                        T acc(0);
                        for (int ky = 0; ky < 3; ++ky) {
                            const int yi = yo + ky - 1;
                            if (yi < 0 || yi >= hgt) continue;
                            for (int kx = 0; kx < 3; ++kx) {
                                const int xi = xo + kx - 1;
                                if (xi < 0 || xi >= w) continue;
                                acc += w9[ky * 3 + kx] * xp[std::int64_t(yi) * w + xi];
                            }
                        }
                        plane[std::int64_t(yo) * w + xo] += acc;
                    };
                    cell(1, 0);
                    cell(hgt - 2, w - 1);
                    for (int xo = 0; xo < w; ++xo) {
                        cell(0, xo);
                        cell(hgt - 1, xo);
                    }
                    continue;
                }

                for (int ky = 0; ky < k; ++ky) {
                    // valid output-y range so that yi = yo*stride + ky - r is in bounds
                    int yo_lo = 0, yo_hi = od.out_h - 1;
                    while (yo_lo <= yo_hi && yo_lo * stride + ky - r < 0) ++yo_lo;
                    while (yo_hi >= yo_lo && yo_hi * stride + ky - r >= x.h) --yo_hi;
                    for (int kx = 0; kx < k; ++kx) {
                        const T wgt = kernel.at(o, i, kz, ky, kx);
                        int xo_lo = 0, xo_hi = od.out_w - 1;
                        while (xo_lo <= xo_hi && xo_lo * stride + kx - r < 0) ++xo_lo;
                        while (xo_hi >= xo_lo && xo_hi * stride + kx - r >= x.w) --xo_hi;
                        for (int yo = yo_lo; yo <= yo_hi; ++yo) {
                            const int yi = yo * stride + ky - r;
                            const T* __restrict xrow = x.row(in, i, zi, yi) + (kx - r);
                            T* __restrict orow = plane + std::int64_t(yo) * od.out_w;
                            if (stride == 1) {
                                for (int xo = xo_lo; xo <= xo_hi; ++xo)
                                    orow[xo] += wgt * xrow[xo];
                            } else {
                                for (int xo = xo_lo; xo <= xo_hi; ++xo)
                                    orow[xo] += wgt * xrow[2 * xo];
                            }
                        }
                    }
                }
            }
        }
        std::copy_n(plane, plane_n, out.row(in, o, zo, 0));
    });
    return out;
}

/// Adjoint application of a conv-layout kernel: maps a tensor with out_c
/// channels onto in_dims with in_c channels. Used as transposed-convolution
/// forward and as conv3d's input gradient.
template <typename T>
Tensor5<T> conv3d_adjoint(const Tensor5<T>& y, const Tensor5<T>& kernel, int in_d, int in_h,
                          int in_w, int stride, const std::vector<T>& bias_in = {}) {
    const int oc = kernel.n, ic = kernel.c, k = kernel.d;
    if (y.c != oc)
        throw std::runtime_error("conv3d_adjoint: channels " + std::to_string(y.c) +
                                 " != kernel out_c " + std::to_string(oc));
    const int r = k / 2;
    if (stride == 1) {
        // adjoint of a stride-1 "same" correlation is the correlation with
        // the spatially flipped, channel-transposed kernel; reuses the fused
        // forward path
        if (in_d != y.d || in_h != y.h || in_w != y.w)
            throw std::runtime_error("conv3d_adjoint: stride-1 dims must match");
        Tensor5<T> flipped(ic, oc, k, k, k);
        for (int o = 0; o < oc; ++o)
            for (int i = 0; i < ic; ++i)
                for (int kz = 0; kz < k; ++kz)
                    for (int ky = 0; ky < k; ++ky)
                        for (int kx = 0; kx < k; ++kx)
                            flipped.at(i, o, kz, ky, kx) =
                                kernel.at(o, i, k - 1 - kz, k - 1 - ky, k - 1 - kx);
        return conv3d(y, flipped, bias_in, 1);
    }
    Tensor5<T> out(y.n, ic, in_d, in_h, in_w);
    par::parallel_for(std::int64_t(y.n) * ic * in_d, [&](std::int64_t job) {
        const int zi = int(job % in_d);
        const int i = int((job / in_d) % ic);
        const int in = int(job / in_d / ic);
        static thread_local std::vector<T> scratch;
        const std::int64_t plane_n = std::int64_t(in_h) * in_w;
        scratch.assign(static_cast<std::size_t>(plane_n),
                       bias_in.empty() ? T(0) : bias_in[static_cast<std::size_t>(i)]);
        T* __restrict plane = scratch.data();

        for (int o = 0; o < oc; ++o) {
            for (int kz = 0; kz < k; ++kz) {
                // zi = zo*stride + kz - r  =>  zo = (zi - kz + r) / stride
                const int znum = zi - kz + r;
                if (znum < 0 || znum % stride != 0) continue;
                const int zo = znum / stride;
                if (zo >= y.d) continue;
                for (int ky = 0; ky < k; ++ky) {
                    const int yoff = ky - r;
                    int yo_lo = 0, yo_hi = y.h - 1;
                    while (yo_lo <= yo_hi && yo_lo * stride + yoff < 0) ++yo_lo;
                    while (yo_hi >= yo_lo && yo_hi * stride + yoff >= in_h) --yo_hi;
                    for (int kx = 0; kx < k; ++kx) {
                        const T wgt = kernel.at(o, i, kz, ky, kx);
                        const int xoff = kx - r;
                        int xo_lo = 0, xo_hi = y.w - 1;
                        while (xo_lo <= xo_hi && xo_lo * stride + xoff < 0) ++xo_lo;
                        while (xo_hi >= xo_lo && xo_hi * stride + xoff >= in_w) --xo_hi;
                        for (int yo = yo_lo; yo <= yo_hi; ++yo) {
                            const int yi = yo * stride + yoff;
                            const T* __restrict yrow = y.row(in, o, zo, yo);
                            T* __restrict orow = plane + std::int64_t(yi) * in_w;
                            if (stride == 1) {
                                T* __restrict osh = orow + xoff;
                                for (int xo = xo_lo; xo <= xo_hi; ++xo)
                                    osh[xo] += wgt * yrow[xo];
                            } else {
                                for (int xo = xo_lo; xo <= xo_hi; ++xo)
                                    orow[2 * xo + xoff] += wgt * yrow[xo];
                            }
                        }
                    }
                }
            }
        }
        std::copy_n(plane, plane_n, out.row(in, i, zi, 0));
    });
    return out;
}

/// Transposed convolution, stride 2: spatial dims exactly double.
/// kernel conv-layout (out_c, in_c, k, k, k); input has out_c channels,
/// output has in_c channels and bias of size in_c.
template <typename T>
Tensor5<T> transposed_conv3d(const Tensor5<T>& x, const Tensor5<T>& kernel,
                             const std::vector<T>& bias) {
    if (!bias.empty() && std::ssize(bias) != kernel.c)
        throw std::runtime_error("transposed_conv3d: bias size mismatch");
    return conv3d_adjoint(x, kernel, 2 * x.d, 2 * x.h, 2 * x.w, 2, bias);
}

/// dL/dkernel for conv3d: x is the forward input, g the output gradient.
/// Row dot products accumulate into eight independent lanes so the reduction
/// vectorizes without reordering scalar sums (order is fixed, so results are
/// identical on every run and thread count).
template <typename T>
Tensor5<T> conv3d_weight_grad(const Tensor5<T>& x, const Tensor5<T>& g, int k, int stride) {
    const int oc = g.c, ic = x.c, r = k / 2;
    Tensor5<T> dw(oc, ic, k, k, k);
    par::parallel_for(std::int64_t(oc) * ic, [&](std::int64_t job) {
        const int i = int(job % ic);
        const int o = int(job / ic);
        if (stride == 1 && k == 3 && g.w >= 10) {
            // fused x-taps over the flattened row span of each (kz, ky) pair:
            // one vector pass accumulates all three kx lanes, then the few
            // row-boundary-wrapped products are subtracted again
            for (int kz = 0; kz < 3; ++kz)
                for (int ky = 0; ky < 3; ++ky) {
                    T l0[32] = {}, l1[32] = {}, l2[32] = {};
                    T t0(0), t1(0), t2(0);
                    const int w = g.w;
                    for (int in = 0; in < g.n; ++in)
                        for (int zo = 0; zo < g.d; ++zo) {
                            const int zi = zo + kz - 1;
                            if (zi < 0 || zi >= x.d) continue;
                            const int ylo = std::max(0, 1 - ky);
                            const int yhi = std::min(g.h - 1, x.h - ky);
                            if (ylo > yhi) continue;
                            const T* __restrict gs = g.row(in, o, zo, ylo);
                            const T* __restrict xs = x.row(in, i, zi, ylo + ky - 1);
                            const std::int64_t len = std::int64_t(yhi - ylo + 1) * w;
                            // 32 independent accumulator lanes hide FMA latency
                            const auto dot_lanes = [](const T* __restrict a,
                                                      const T* __restrict b, std::int64_t m,
                                                      T* __restrict lanes, T& tail) {
                                std::int64_t p = 0;
                                const std::int64_t m32 = m & ~std::int64_t(31);
                                for (; p < m32; p += 32)
                                    for (int l = 0; l < 32; ++l)
                                        lanes[l] += a[p + l] * b[p + l];
                                for (; p < m; ++p) tail += a[p] * b[p];
                            };
                            // kx = 0: sum over p in [1, len-1] of g[p] * x[p-1]
                            dot_lanes(gs + 1, xs, len - 1, l0, t0);
                            // kx = 1: sum over p in [0, len-1] of g[p] * x[p]
                            dot_lanes(gs, xs, len, l1, t1);
                            // kx = 2: sum over p in [0, len-2] of g[p] * x[p+1]
                            dot_lanes(gs, xs + 1, len - 1, l2, t2);
                            // subtract the row-boundary wraps
                            for (std::int64_t row = w; row < len; row += w) {
                                t0 -= gs[row] * xs[row - 1];
                                t2 -= gs[row - 1] * xs[row];
                            }
                        }
                    const auto reduce = [](const T* l, T tail) {
                        T s[8];
                        for (int j = 0; j < 8; ++j)
                            s[j] = ((l[j] + l[j + 8]) + (l[j + 16] + l[j + 24]));
                        return (((s[0] + s[1]) + (s[2] + s[3])) +
                                ((s[4] + s[5]) + (s[6] + s[7]))) +
                               tail;
                    };
                    dw.at(o, i, kz, ky, 0) = reduce(l0, t0);
                    dw.at(o, i, kz, ky, 1) = reduce(l1, t1);
                    dw.at(o, i, kz, ky, 2) = reduce(l2, t2);
                }
            return;
        }
        for (int kz = 0; kz < k; ++kz)
            for (int ky = 0; ky < k; ++ky)
                for (int kx = 0; kx < k; ++kx) {
                    T lanes[8] = {T(0), T(0), T(0), T(0), T(0), T(0), T(0), T(0)};
                    T tail(0);
                    for (int in = 0; in < g.n; ++in)
                        for (int zo = 0; zo < g.d; ++zo) {
                            const int zi = zo * stride + kz - r;
                            if (zi < 0 || zi >= x.d) continue;
                            for (int yo = 0; yo < g.h; ++yo) {
                                const int yi = yo * stride + ky - r;
                                if (yi < 0 || yi >= x.h) continue;
                                const T* __restrict grow = g.row(in, o, zo, yo);
                                const T* __restrict xrow = x.row(in, i, zi, yi) + (kx - r);
                                int xo_lo = 0, xo_hi = g.w - 1;
                                while (xo_lo <= xo_hi && xo_lo * stride + kx - r < 0) ++xo_lo;
                                while (xo_hi >= xo_lo && xo_hi * stride + kx - r >= x.w) --xo_hi;
                                if (stride == 1) {
                                    int xo = xo_lo;
                                    for (; xo + 8 <= xo_hi + 1; xo += 8)
                                        for (int l = 0; l < 8; ++l)
                                            lanes[l] += grow[xo + l] * xrow[xo + l];
                                    for (; xo <= xo_hi; ++xo) tail += grow[xo] * xrow[xo];
                                } else {
                                    for (int xo = xo_lo; xo <= xo_hi; ++xo)
                                        tail += grow[xo] * xrow[2 * xo];
                                }
                            }
                        }
                    const T acc = (((lanes[0] + lanes[1]) + (lanes[2] + lanes[3])) +
                                   ((lanes[4] + lanes[5]) + (lanes[6] + lanes[7]))) +
                                  tail;
                    dw.at(o, i, kz, ky, kx) = acc;
                }
    });
    return dw;
}

/// dL/dbias: sum of g over batch and spatial dims per channel.
template <typename T>
std::vector<T> channel_sum(const Tensor5<T>& g) {
    std::vector<T> db(static_cast<std::size_t>(g.c), T(0));
    par::parallel_for(g.c, [&](std::int64_t c) {
        T acc(0);
        for (int in = 0; in < g.n; ++in) {
            const T* p = g.row(in, int(c), 0, 0);
            const std::int64_t sp = g.spatial();
            for (std::int64_t j = 0; j < sp; ++j) acc += p[j];
        }
        db[static_cast<std::size_t>(c)] = acc;
    });
    return db;
}

template <typename T>
struct InstanceNormCache {
    std::vector<T> mean;    // per (n, c)
    std::vector<T> inv_std; // per (n, c)
};

/// Per-(sample, channel) normalization over spatial axes with affine params.
template <typename T>
Tensor5<T> instance_norm(const Tensor5<T>& x, const std::vector<T>& scale,
                         const std::vector<T>& shift, T eps, InstanceNormCache<T>* cache) {
    if (std::ssize(scale) != x.c || std::ssize(shift) != x.c)
        throw std::runtime_error("instance_norm: affine size mismatch");
    Tensor5<T> out(x.n, x.c, x.d, x.h, x.w);
    if (cache) {
        cache->mean.assign(static_cast<std::size_t>(x.n) * x.c, T(0));
        cache->inv_std.assign(static_cast<std::size_t>(x.n) * x.c, T(0));
    }
    const std::int64_t sp = x.spatial();
    par::parallel_for(std::int64_t(x.n) * x.c, [&](std::int64_t job) {
        const int c = int(job % x.c);
        const int in = int(job / x.c);
        const T* px = x.row(in, c, 0, 0);
        double sum = 0.0, sum_sq = 0.0;
        for (std::int64_t j = 0; j < sp; ++j) {
            const double v = double(px[j]);
            sum += v;
            sum_sq += v * v;
        }
        const double mean = sum / double(sp);
        const double var = std::max(0.0, sum_sq / double(sp) - mean * mean);
        const double inv_std = 1.0 / std::sqrt(var + double(eps));
        if (cache) {
            cache->mean[static_cast<std::size_t>(job)] = T(mean);
            cache->inv_std[static_cast<std::size_t>(job)] = T(inv_std);
        }
        const T a = T(double(scale[static_cast<std::size_t>(c)]) * inv_std);
        const T b = T(double(shift[static_cast<std::size_t>(c)]) - double(scale[static_cast<std::size_t>(c)]) * inv_std * mean);
        T* po = out.row(in, c, 0, 0);
        for (std::int64_t j = 0; j < sp; ++j) po[j] = a * px[j] + b;
    });
    return out;
}

template <typename T>
Tensor5<T> instance_norm_backward(const Tensor5<T>& x, const InstanceNormCache<T>& cache,
                                  const std::vector<T>& scale, const Tensor5<T>& g,
                                  std::vector<T>& dscale, std::vector<T>& dshift) {
    Tensor5<T> dx(x.n, x.c, x.d, x.h, x.w);
    const std::int64_t sp = x.spatial();
    std::vector<double> dsc(static_cast<std::size_t>(x.c), 0.0), dsh(static_cast<std::size_t>(x.c), 0.0);
    // per-channel affine grads are reduced over batch serially per channel
    par::parallel_for(x.c, [&](std::int64_t cj) {
        const int c = int(cj);
        double acc_sc = 0.0, acc_sh = 0.0;
        for (int in = 0; in < x.n; ++in) {
            const std::size_t key = static_cast<std::size_t>(std::int64_t(in) * x.c + c);
            const T mean = cache.mean[key], inv_std = cache.inv_std[key];
            const T* px = x.row(in, c, 0, 0);
            const T* pg = g.row(in, c, 0, 0);
            for (std::int64_t j = 0; j < sp; ++j) {
                const double xhat = double(px[j] - mean) * double(inv_std);
                acc_sc += double(pg[j]) * xhat;
                acc_sh += double(pg[j]);
            }
        }
        dsc[static_cast<std::size_t>(c)] = acc_sc;
        dsh[static_cast<std::size_t>(c)] = acc_sh;
    });
    for (int c = 0; c < x.c; ++c) {
        dscale[static_cast<std::size_t>(c)] += T(dsc[static_cast<std::size_t>(c)]);
        dshift[static_cast<std::size_t>(c)] += T(dsh[static_cast<std::size_t>(c)]);
    }
    par::parallel_for(std::int64_t(x.n) * x.c, [&](std::int64_t job) {
        const int c = int(job % x.c);
        const int in = int(job / x.c);
        const std::size_t key = static_cast<std::size_t>(job);
        const T mean = cache.mean[key], inv_std = cache.inv_std[key];
        const T* px = x.row(in, c, 0, 0);
        const T* pg = g.row(in, c, 0, 0);
        double g_mean = 0.0, gx_mean = 0.0;
        for (std::int64_t j = 0; j < sp; ++j) {
            const double xhat = double(px[j] - mean) * double(inv_std);
            g_mean += double(pg[j]);
            gx_mean += double(pg[j]) * xhat;
        }
        g_mean /= double(sp);
        gx_mean /= double(sp);
        const double a = double(scale[static_cast<std::size_t>(c)]) * double(inv_std);
        T* pdx = dx.row(in, c, 0, 0);
        for (std::int64_t j = 0; j < sp; ++j) {
            const double xhat = double(px[j] - mean) * double(inv_std);
            pdx[j] = T(a * (double(pg[j]) - g_mean - xhat * gx_mean));
        }
    });
    return dx;
}

template <typename T>
Tensor5<T> leaky_relu(const Tensor5<T>& x, T slope) {
    Tensor5<T> out(x.n, x.c, x.d, x.h, x.w);
    par::parallel_for(x.n, [&](std::int64_t in) {
        const std::int64_t per = x.size() / x.n;
        const T* px = x.v.data() + in * per;
        T* po = out.v.data() + in * per;
        for (std::int64_t j = 0; j < per; ++j) po[j] = px[j] >= T(0) ? px[j] : slope * px[j];
    });
    return out;
}

template <typename T>
Tensor5<T> leaky_relu_backward(const Tensor5<T>& x, const Tensor5<T>& g, T slope) {
    Tensor5<T> dx(x.n, x.c, x.d, x.h, x.w);
    par::parallel_for(x.n, [&](std::int64_t in) {
        const std::int64_t per = x.size() / x.n;
        const T* px = x.v.data() + in * per;
        const T* pg = g.v.data() + in * per;
        T* po = dx.v.data() + in * per;
        for (std::int64_t j = 0; j < per; ++j) po[j] = px[j] >= T(0) ? pg[j] : slope * pg[j];
    });
    return dx;
}

/// Channel softmax (numerically shifted by the per-voxel max).
template <typename T>
Tensor5<T> softmax_channels(const Tensor5<T>& z) {
    if (z.c > 8) throw std::runtime_error("softmax_channels: more than 8 channels");
    Tensor5<T> out(z.n, z.c, z.d, z.h, z.w);
    par::parallel_for(std::int64_t(z.n) * z.d, [&](std::int64_t job) {
        const int zd = int(job % z.d);
        const int in = int(job / z.d);
        const int nc = z.c;
        const T* rows[8];
        T* orows[8];
        for (int y = 0; y < z.h; ++y) {
            for (int c = 0; c < nc; ++c) {
                rows[c] = z.row(in, c, zd, y);
                orows[c] = out.row(in, c, zd, y);
            }
            for (int x = 0; x < z.w; ++x) {
                T m = rows[0][x];
                for (int c = 1; c < nc; ++c) m = std::max(m, rows[c][x]);
                double e[8], sum = 0.0;
                for (int c = 0; c < nc; ++c) {
                    e[c] = std::exp(double(rows[c][x] - m));
                    sum += e[c];
                }
                for (int c = 0; c < nc; ++c) orows[c][x] = T(e[c] / sum);
            }
        }
    });
    return out;
}

/// dL/dlogits from dL/dprobs for a channel softmax.
template <typename T>
Tensor5<T> softmax_backward(const Tensor5<T>& probs, const Tensor5<T>& dprobs) {
    Tensor5<T> dz(probs.n, probs.c, probs.d, probs.h, probs.w);
    par::parallel_for(std::int64_t(probs.n) * probs.d, [&](std::int64_t job) {
        const int zd = int(job % probs.d);
        const int in = int(job / probs.d);
        const int nc = probs.c;
        const T* prow[8];
        const T* grow[8];
        T* orow[8];
        for (int y = 0; y < probs.h; ++y) {
            for (int c = 0; c < nc; ++c) {
                prow[c] = probs.row(in, c, zd, y);
                grow[c] = dprobs.row(in, c, zd, y);
                orow[c] = dz.row(in, c, zd, y);
            }
            for (int x = 0; x < probs.w; ++x) {
                double dot = 0.0;
                for (int c = 0; c < nc; ++c) dot += double(prow[c][x]) * double(grow[c][x]);
                for (int c = 0; c < nc; ++c)
                    orow[c][x] = T(double(prow[c][x]) * (double(grow[c][x]) - dot));
            }
        }
    });
    return dz;
}

} // namespace voxseg
