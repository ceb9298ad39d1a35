#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cmath>

#include "voxseg/ops.hpp"
#include "voxseg/rng.hpp"

using namespace voxseg;

namespace {

template <typename T>
Tensor5<T> random_tensor(int n, int c, int d, int h, int w, Rng& rng) {
    Tensor5<T> t(n, c, d, h, w);
    for (auto& x : t.v) x = T(rng.uniform(-1, 1));
    return t;
}

/// Direct six-loop convolution reference, zero padding, no tricks.
template <typename T>
Tensor5<T> conv3d_naive(const Tensor5<T>& x, const Tensor5<T>& k, const std::vector<T>& bias,
                        int stride) {
    const int r = k.d / 2;
    const int od = (x.d + stride - 1) / stride;
    const int oh = (x.h + stride - 1) / stride;
    const int ow = (x.w + stride - 1) / stride;
    Tensor5<T> out(x.n, k.n, od, oh, ow);
    for (int n = 0; n < x.n; ++n)
        for (int o = 0; o < k.n; ++o)
            for (int z = 0; z < od; ++z)
                for (int y = 0; y < oh; ++y)
                    for (int xx = 0; xx < ow; ++xx) {
                        double acc = bias.empty() ? 0.0 : double(bias[std::size_t(o)]);
                        for (int i = 0; i < x.c; ++i)
                            for (int kz = 0; kz < k.d; ++kz)
                                for (int ky = 0; ky < k.d; ++ky)
                                    for (int kx = 0; kx < k.d; ++kx) {
                                        const int zi = z * stride + kz - r;
                                        const int yi = y * stride + ky - r;
                                        const int xi = xx * stride + kx - r;
                                        if (zi < 0 || zi >= x.d || yi < 0 || yi >= x.h ||
                                            xi < 0 || xi >= x.w)
                                            continue;
                                        acc += double(k.at(o, i, kz, ky, kx)) *
                                               double(x.at(n, i, zi, yi, xi));
                                    }
                        out.at(n, o, z, y, xx) = T(acc);
                    }
    return out;
}

template <typename T>
double inner(const Tensor5<T>& a, const Tensor5<T>& b) {
    double s = 0.0;
    for (std::int64_t i = 0; i < a.size(); ++i)
        s += double(a.v[std::size_t(i)]) * double(b.v[std::size_t(i)]);
    return s;
}

} // namespace

TEST_CASE("conv3d: 1x1x1 identity kernel with zero bias is a no-op") {
    Rng rng(1);
    auto x = random_tensor<float>(2, 1, 3, 4, 5, rng);
    Tensor5<float> k(1, 1, 1, 1, 1);
    k.v[0] = 1.0f;
    const auto y = conv3d(x, k, {0.0f}, 1);
    CHECK(y.v == x.v);
}

TEST_CASE("conv3d: all-ones 3^3 kernel on constant 1 gives 27 in the interior") {
    Tensor5<float> x(1, 1, 5, 5, 5);
    std::fill(x.v.begin(), x.v.end(), 1.0f);
    Tensor5<float> k(1, 1, 3, 3, 3);
    std::fill(k.v.begin(), k.v.end(), 1.0f);
    const auto y = conv3d(x, k, {0.0f}, 1);
    CHECK(y.at(0, 0, 2, 2, 2) == doctest::Approx(27.0f));
    CHECK(y.at(0, 0, 0, 0, 0) == doctest::Approx(8.0f)); // corner sees 2x2x2
}

TEST_CASE("conv3d matches the naive reference on random cases") {
    Rng rng(2);
    for (const int stride : {1, 2}) {
        for (int trial = 0; trial < 4; ++trial) {
            const int n = 1 + int(rng.uniform_index(2));
            const int ic = 1 + int(rng.uniform_index(3));
            const int oc = 1 + int(rng.uniform_index(3));
            const int d = 2 + int(rng.uniform_index(5));
            const int h = 2 + int(rng.uniform_index(5));
            const int w = 2 + int(rng.uniform_index(5));
            auto x = random_tensor<float>(n, ic, d, h, w, rng);
            auto k = random_tensor<float>(oc, ic, 3, 3, 3, rng);
            std::vector<float> bias(static_cast<std::size_t>(oc));
            for (auto& b : bias) b = float(rng.uniform(-1, 1));
            const auto got = conv3d(x, k, bias, stride);
            const auto want = conv3d_naive(x, k, bias, stride);
            REQUIRE(got.same_dims(want));
            for (std::int64_t i = 0; i < got.size(); ++i)
                CHECK(got.v[std::size_t(i)] ==
                      doctest::Approx(want.v[std::size_t(i)]).epsilon(1e-5));
        }
    }
}

TEST_CASE("conv3d stride 2 halves each spatial axis (ceil)") {
    Rng rng(3);
    auto x = random_tensor<float>(1, 1, 7, 8, 9, rng);
    auto k = random_tensor<float>(2, 1, 3, 3, 3, rng);
    const auto y = conv3d(x, k, {}, 2);
    CHECK(y.d == 4);
    CHECK(y.h == 4);
    CHECK(y.w == 5);
}

TEST_CASE("conv3d rejects even kernels and channel mismatches") {
    Tensor5<float> x(1, 2, 4, 4, 4), k_even(1, 2, 2, 2, 2), k_badc(1, 3, 3, 3, 3);
    CHECK_THROWS_AS(conv3d(x, k_even, {}, 1), std::runtime_error);
    CHECK_THROWS_AS(conv3d(x, k_badc, {}, 1), std::runtime_error);
}

TEST_CASE("transposed_conv3d doubles spatial dims and broadcasts bias on zero input") {
    Tensor5<float> x(1, 3, 4, 4, 4); // zeros
    Rng rng(4);
    auto k = random_tensor<float>(3, 2, 3, 3, 3, rng); // conv layout: 2 -> 3 channels
    const std::vector<float> bias{0.5f, -1.5f};
    const auto y = transposed_conv3d(x, k, bias);
    CHECK(y.c == 2);
    CHECK(y.d == 8);
    CHECK(y.h == 8);
    CHECK(y.w == 8);
    for (int z = 0; z < 8; ++z) CHECK(y.at(0, 0, z, 3, 5) == 0.5f);
    CHECK(y.at(0, 1, 0, 0, 0) == -1.5f);
}

TEST_CASE("adjoint identity: <conv(x), y> == <x, transposed_conv(y)> within 1e-6") {
    Rng rng(5);
    for (int trial = 0; trial < 8; ++trial) {
        const int ic = 1 + int(rng.uniform_index(3));
        const int oc = 1 + int(rng.uniform_index(3));
        const int d = 2 * (1 + int(rng.uniform_index(3)));
        const int h = 2 * (1 + int(rng.uniform_index(3)));
        const int w = 2 * (1 + int(rng.uniform_index(3)));
        auto x = random_tensor<double>(1, ic, d, h, w, rng);
        auto k = random_tensor<double>(oc, ic, 3, 3, 3, rng);
        auto cx = conv3d(x, k, {}, 2);
        auto y = random_tensor<double>(1, oc, cx.d, cx.h, cx.w, rng);
        auto ty = conv3d_adjoint(y, k, d, h, w, 2);
        CHECK(inner(cx, y) == doctest::Approx(inner(x, ty)).epsilon(1e-6));
    }
}

TEST_CASE("conv3d backward matches finite differences (weights, bias, input)") {
    Rng rng(6);
    auto x = random_tensor<double>(1, 2, 4, 4, 4, rng);
    auto k = random_tensor<double>(2, 2, 3, 3, 3, rng);
    std::vector<double> bias{0.1, -0.2};
    for (const int stride : {1, 2}) {
        const auto y0 = conv3d(x, k, bias, stride);
        // L = sum(y * w_rand), dL/dy = w_rand
        auto w_rand = random_tensor<double>(y0.n, y0.c, y0.d, y0.h, y0.w, rng);
        const auto dw = conv3d_weight_grad(x, w_rand, 3, stride);
        const auto db = channel_sum(w_rand);
        const auto dx = conv3d_adjoint(w_rand, k, x.d, x.h, x.w, stride);

        const double h = 1e-6;
        for (int probe = 0; probe < 20; ++probe) {
            const auto i = rng.uniform_index(std::uint64_t(k.size()));
            auto kp = k, km = k;
            kp.v[std::size_t(i)] += h;
            km.v[std::size_t(i)] -= h;
            const double fd =
                (inner(conv3d(x, kp, bias, stride), w_rand) -
                 inner(conv3d(x, km, bias, stride), w_rand)) /
                (2 * h);
            CHECK(dw.v[std::size_t(i)] == doctest::Approx(fd).epsilon(1e-5));
        }
        for (int probe = 0; probe < 10; ++probe) {
            const auto i = rng.uniform_index(std::uint64_t(x.size()));
            auto xp = x, xm = x;
            xp.v[std::size_t(i)] += h;
            xm.v[std::size_t(i)] -= h;
            const double fd =
                (inner(conv3d(xp, k, bias, stride), w_rand) -
                 inner(conv3d(xm, k, bias, stride), w_rand)) /
                (2 * h);
            CHECK(dx.v[std::size_t(i)] == doctest::Approx(fd).epsilon(1e-5));
        }
        auto bp = bias;
        bp[0] += h;
        auto bm = bias;
        bm[0] -= h;
        const double fdb = (inner(conv3d(x, k, bp, stride), w_rand) -
                            inner(conv3d(x, k, bm, stride), w_rand)) /
                           (2 * h);
        CHECK(db[0] == doctest::Approx(fdb).epsilon(1e-5));
    }
}

TEST_CASE("instance_norm: constant channel maps to shift everywhere") {
    Tensor5<float> x(2, 2, 3, 3, 3);
    std::fill(x.v.begin(), x.v.end(), 4.0f);
    const std::vector<float> scale{2.0f, 3.0f}, shift{-1.0f, 0.5f};
    const auto y = instance_norm(x, scale, shift, 1e-5f, (InstanceNormCache<float>*)nullptr);
    for (int n = 0; n < 2; ++n)
        for (int c = 0; c < 2; ++c)
            CHECK(y.at(n, c, 1, 1, 1) == doctest::Approx(shift[std::size_t(c)]).epsilon(1e-4));
}

TEST_CASE("instance_norm: output stats are shift/scale^2 for unit affine") {
    Rng rng(7);
    auto x = random_tensor<float>(2, 3, 4, 4, 4, rng);
    const std::vector<float> scale{1, 1, 1}, shift{0, 0, 0};
    const auto y = instance_norm(x, scale, shift, 1e-6f, (InstanceNormCache<float>*)nullptr);
    for (int n = 0; n < 2; ++n)
        for (int c = 0; c < 3; ++c) {
            double mean = 0, var = 0;
            const std::int64_t sp = y.spatial();
            const float* p = y.row(n, c, 0, 0);
            for (std::int64_t i = 0; i < sp; ++i) mean += p[i];
            mean /= double(sp);
            for (std::int64_t i = 0; i < sp; ++i) var += (p[i] - mean) * (p[i] - mean);
            var /= double(sp);
            CHECK(mean == doctest::Approx(0.0).epsilon(1e-5));
            CHECK(var == doctest::Approx(1.0).epsilon(1e-3));
        }
}

TEST_CASE("instance_norm backward matches finite differences") {
    Rng rng(8);
    auto x = random_tensor<double>(2, 2, 3, 3, 3, rng);
    const std::vector<double> scale{1.3, 0.7}, shift{0.2, -0.4};
    const double eps = 1e-5;
    auto w_rand = random_tensor<double>(2, 2, 3, 3, 3, rng);

    InstanceNormCache<double> cache;
    instance_norm(x, scale, shift, eps, &cache);
    std::vector<double> dscale(2, 0.0), dshift(2, 0.0);
    const auto dx = instance_norm_backward(x, cache, scale, w_rand, dscale, dshift);

    const auto loss = [&](const Tensor5<double>& xx, const std::vector<double>& sc,
                          const std::vector<double>& sh) {
        return inner(instance_norm(xx, sc, sh, eps, (InstanceNormCache<double>*)nullptr), w_rand);
    };
    const double h = 1e-6;
    for (int probe = 0; probe < 25; ++probe) {
        const auto i = rng.uniform_index(std::uint64_t(x.size()));
        auto xp = x, xm = x;
        xp.v[std::size_t(i)] += h;
        xm.v[std::size_t(i)] -= h;
        const double fd = (loss(xp, scale, shift) - loss(xm, scale, shift)) / (2 * h);
        CHECK(dx.v[std::size_t(i)] == doctest::Approx(fd).epsilon(1e-5));
    }
    for (int c = 0; c < 2; ++c) {
        auto sp = scale, sm = scale;
        sp[std::size_t(c)] += h;
        sm[std::size_t(c)] -= h;
        CHECK(dscale[std::size_t(c)] ==
              doctest::Approx((loss(x, sp, shift) - loss(x, sm, shift)) / (2 * h)).epsilon(1e-6));
        auto hp = shift, hm = shift;
        hp[std::size_t(c)] += h;
        hm[std::size_t(c)] -= h;
        CHECK(dshift[std::size_t(c)] ==
              doctest::Approx((loss(x, scale, hp) - loss(x, scale, hm)) / (2 * h)).epsilon(1e-6));
    }
}

TEST_CASE("leaky_relu: slope 0 is relu; -2 with slope 0.01 gives -0.02; oracle") {
    Tensor5<float> x(1, 1, 1, 1, 4);
    x.v = {-2.0f, -0.5f, 0.0f, 3.0f};
    const auto relu = leaky_relu(x, 0.0f);
    CHECK(relu.v == std::vector<float>{0.0f, 0.0f, 0.0f, 3.0f});
    const auto lrelu = leaky_relu(x, 0.01f);
    CHECK(lrelu.v[0] == doctest::Approx(-0.02f));

    Rng rng(9);
    auto r = random_tensor<float>(2, 3, 2, 2, 2, rng);
    const auto y = leaky_relu(r, 0.1f);
    for (std::int64_t i = 0; i < r.size(); ++i) {
        const float xv = r.v[std::size_t(i)];
        CHECK(y.v[std::size_t(i)] == (xv >= 0 ? xv : 0.1f * xv));
    }
}

TEST_CASE("softmax heads: per-voxel sums are 1 and backward matches FD") {
    Rng rng(10);
    auto z = random_tensor<double>(1, 3, 2, 2, 2, rng);
    const auto p = softmax_channels(z);
    for (int zz = 0; zz < 2; ++zz)
        for (int y = 0; y < 2; ++y)
            for (int x = 0; x < 2; ++x) {
                double s = 0;
                for (int c = 0; c < 3; ++c) s += p.at(0, c, zz, y, x);
                CHECK(s == doctest::Approx(1.0).epsilon(1e-9));
            }

    auto w_rand = random_tensor<double>(1, 3, 2, 2, 2, rng);
    const auto dz = softmax_backward(p, w_rand);
    const double h = 1e-7;
    for (int probe = 0; probe < 20; ++probe) {
        const auto i = rng.uniform_index(std::uint64_t(z.size()));
        auto zp = z, zm = z;
        zp.v[std::size_t(i)] += h;
        zm.v[std::size_t(i)] -= h;
        const double fd =
            (inner(softmax_channels(zp), w_rand) - inner(softmax_channels(zm), w_rand)) / (2 * h);
        CHECK(dz.v[std::size_t(i)] == doctest::Approx(fd).epsilon(1e-4));
    }
}
