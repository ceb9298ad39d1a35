#pragma once

#include <array>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

namespace voxseg {

/// Dense 5-axis array (batch, channel, depth, height, width), w fastest.
template <typename T>
struct Tensor5 {
    int n = 0, c = 0, d = 0, h = 0, w = 0;
    std::vector<T> v;

    Tensor5() = default;
    Tensor5(int n_, int c_, int d_, int h_, int w_) : n(n_), c(c_), d(d_), h(h_), w(w_) {
        if (n < 1 || c < 1 || d < 1 || h < 1 || w < 1)
            throw std::runtime_error("Tensor5: all dims must be >= 1");
        v.assign(size(), T(0));
    }

    std::int64_t size() const {
        return std::int64_t(n) * c * d * h * w;
    }
    std::int64_t spatial() const { return std::int64_t(d) * h * w; }

    std::int64_t index(int in, int ic, int iz, int iy, int ix) const {
        return ((((std::int64_t(in) * c + ic) * d + iz) * h + iy) * w) + ix;
    }
    T at(int in, int ic, int iz, int iy, int ix) const { return v[index(in, ic, iz, iy, ix)]; }
    T& at(int in, int ic, int iz, int iy, int ix) { return v[index(in, ic, iz, iy, ix)]; }

    /// Pointer to the contiguous w-row at (n, c, z, y).
    T* row(int in, int ic, int iz, int iy) { return v.data() + index(in, ic, iz, iy, 0); }
    const T* row(int in, int ic, int iz, int iy) const {
        return v.data() + index(in, ic, iz, iy, 0);
    }

    bool same_dims(const Tensor5& o) const {
        return n == o.n && c == o.c && d == o.d && h == o.h && w == o.w;
    }
    std::string dims_str() const {
        return "(" + std::to_string(n) + "," + std::to_string(c) + "," + std::to_string(d) + "," +
               std::to_string(h) + "," + std::to_string(w) + ")";
    }

    void zero() { std::fill(v.begin(), v.end(), T(0)); }

    template <typename U>
    Tensor5<U> cast() const {
        Tensor5<U> out(n, c, d, h, w);
        for (std::int64_t i = 0; i < size(); ++i) out.v[static_cast<std::size_t>(i)] = U(v[static_cast<std::size_t>(i)]);
        return out;
    }
};

/// Batch of label grids (batch, depth, height, width), one class ID per voxel.
struct LabelBatch {
    int n = 0, d = 0, h = 0, w = 0;
    std::vector<std::uint8_t> v;

    LabelBatch() = default;
    LabelBatch(int n_, int d_, int h_, int w_) : n(n_), d(d_), h(h_), w(w_) {
        v.assign(static_cast<std::size_t>(size()), 0);
    }
    std::int64_t size() const { return std::int64_t(n) * d * h * w; }
    std::int64_t spatial() const { return std::int64_t(d) * h * w; }
    std::int64_t index(int in, int iz, int iy, int ix) const {
        return (((std::int64_t(in) * d + iz) * h + iy) * w) + ix;
    }
    std::uint8_t at(int in, int iz, int iy, int ix) const { return v[static_cast<std::size_t>(index(in, iz, iy, ix))]; }
    std::uint8_t& at(int in, int iz, int iy, int ix) { return v[static_cast<std::size_t>(index(in, iz, iy, ix))]; }
};

template <typename T>
Tensor5<T> concat_channels(const Tensor5<T>& a, const Tensor5<T>& b) {
    if (a.n != b.n || a.d != b.d || a.h != b.h || a.w != b.w)
        throw std::runtime_error("concat_channels: dims mismatch " + a.dims_str() + " vs " +
                                 b.dims_str());
    Tensor5<T> out(a.n, a.c + b.c, a.d, a.h, a.w);
    const std::int64_t sp = a.spatial();
    for (int in = 0; in < a.n; ++in) {
        std::copy_n(a.v.data() + std::int64_t(in) * a.c * sp, std::int64_t(a.c) * sp,
                    out.v.data() + std::int64_t(in) * out.c * sp);
        std::copy_n(b.v.data() + std::int64_t(in) * b.c * sp, std::int64_t(b.c) * sp,
                    out.v.data() + std::int64_t(in) * out.c * sp + std::int64_t(a.c) * sp);
    }
    return out;
}

/// Splits a channel-concatenated gradient back into the two operands' shapes.
template <typename T>
void split_channels(const Tensor5<T>& cat, Tensor5<T>& a, Tensor5<T>& b) {
    const std::int64_t sp = cat.spatial();
    for (int in = 0; in < cat.n; ++in) {
        std::copy_n(cat.v.data() + std::int64_t(in) * cat.c * sp, std::int64_t(a.c) * sp,
                    a.v.data() + std::int64_t(in) * a.c * sp);
        std::copy_n(cat.v.data() + std::int64_t(in) * cat.c * sp + std::int64_t(a.c) * sp,
                    std::int64_t(b.c) * sp, b.v.data() + std::int64_t(in) * b.c * sp);
    }
}

} // namespace voxseg
