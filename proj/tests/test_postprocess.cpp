#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <algorithm>
#include <functional>
#include <vector>

#include "voxseg/postprocess.hpp"
#include "voxseg/rng.hpp"

using namespace voxseg;

namespace {

LabelMask blank(const std::array<int, 3>& shape) {
    LabelMask m;
    m.geo.shape = shape;
    m.data.assign(static_cast<std::size_t>(m.geo.voxel_count()), 0);
    return m;
}

/// Independent flood-fill oracle: repeatedly grows a component from the first
/// unvisited voxel of the class with a plain frontier sweep.
std::vector<std::vector<std::int64_t>> flood_fill_oracle(const LabelMask& m, int cls,
                                                         int connectivity) {
    const auto& s = m.geo.shape;
    std::vector<char> seen(m.data.size(), 0);
    std::vector<std::vector<std::int64_t>> components;
    for (std::int64_t start = 0; start < std::ssize(m.data); ++start) {
        if (m.data[static_cast<std::size_t>(start)] != cls || seen[static_cast<std::size_t>(start)]) continue;
        std::vector<std::int64_t> comp, frontier{start};
        seen[static_cast<std::size_t>(start)] = 1;
        while (!frontier.empty()) {
            std::vector<std::int64_t> next;
            for (const std::int64_t cur : frontier) {
                comp.push_back(cur);
                const int cz = int(cur / (std::int64_t(s[1]) * s[2]));
                const int cy = int(cur / s[2] % s[1]);
                const int cx = int(cur % s[2]);
                for (int dz = -1; dz <= 1; ++dz)
                    for (int dy = -1; dy <= 1; ++dy)
                        for (int dx = -1; dx <= 1; ++dx) {
                            if (!dz && !dy && !dx) continue;
                            if (connectivity == 6 && std::abs(dz) + std::abs(dy) + std::abs(dx) != 1)
                                continue;
                            const int nz = cz + dz, ny = cy + dy, nx = cx + dx;
                            if (!m.geo.contains(nz, ny, nx)) continue;
                            const std::int64_t ni = m.geo.index_of(nz, ny, nx);
                            if (m.data[static_cast<std::size_t>(ni)] == cls && !seen[static_cast<std::size_t>(ni)]) {
                                seen[static_cast<std::size_t>(ni)] = 1;
                                next.push_back(ni);
                            }
                        }
            }
            frontier.swap(next);
        }
        std::sort(comp.begin(), comp.end());
        components.push_back(std::move(comp));
    }
    return components;
}

std::vector<std::vector<std::int64_t>> partition_of(const ComponentLabeling& cc) {
    std::vector<std::vector<std::int64_t>> out(cc.components.size());
    for (std::int64_t i = 0; i < std::ssize(cc.ids); ++i)
        if (cc.ids[static_cast<std::size_t>(i)] != 0)
            out[static_cast<std::size_t>(cc.ids[static_cast<std::size_t>(i)] - 1)].push_back(i);
    for (auto& comp : out) std::sort(comp.begin(), comp.end());
    std::sort(out.begin(), out.end());
    return out;
}

LabelMask random_mask(const std::array<int, 3>& shape, double fg_fraction, Rng& rng) {
    LabelMask m = blank(shape);
    for (auto& b : m.data)
        if (rng.bernoulli(fg_fraction)) b = std::uint8_t(1 + rng.uniform_index(2));
    return m;
}

} // namespace

TEST_CASE("single voxel forms one component of size 1") {
    LabelMask m = blank({3, 3, 3});
    m.at(1, 1, 1) = 1;
    const auto cc = connected_components(m, 1, 26);
    REQUIRE(cc.components.size() == 1);
    CHECK(cc.components[0].voxels == 1);
    CHECK(cc.components[0].cls == 1);
}

TEST_CASE("corner-touching voxels: 2 components under 6, 1 under 26") {
    LabelMask m = blank({2, 2, 2});
    m.at(0, 0, 0) = 1;
    m.at(1, 1, 1) = 1;
    CHECK(connected_components(m, 1, 6).components.size() == 2);
    CHECK(connected_components(m, 1, 26).components.size() == 1);
    CHECK_THROWS_AS(connected_components(m, 1, 18), std::runtime_error);
}

TEST_CASE("connected components match the flood-fill oracle on 30 random 20^3 masks") {
    Rng rng(404);
    for (int trial = 0; trial < 30; ++trial) {
        const LabelMask m = random_mask({20, 20, 20}, 0.18, rng);
        for (const int conn : {6, 26})
            for (const int cls : {1, 2}) {
                const auto got = partition_of(connected_components(m, cls, conn));
                auto want = flood_fill_oracle(m, cls, conn);
                std::sort(want.begin(), want.end());
                REQUIRE(got == want);
            }
    }
}

TEST_CASE("exhaustive 3^3 masks with up to 6 foreground voxels match the oracle") {
    // all 27-choose-k voxel subsets, k <= 6, as single-class masks
    std::vector<int> subset;
    std::int64_t tested = 0;
    const auto run = [&](const std::vector<int>& voxels) {
        LabelMask m = blank({3, 3, 3});
        for (int v : voxels) m.data[static_cast<std::size_t>(v)] = 1;
        for (const int conn : {6, 26}) {
            const auto got = partition_of(connected_components(m, 1, conn));
            auto want = flood_fill_oracle(m, 1, conn);
            std::sort(want.begin(), want.end());
            if (got != want) {
                REQUIRE(got == want); // report the failing mask loudly
            }
        }
        ++tested;
    };
    const std::function<void(int, int)> recurse = [&](int next, int remaining) {
        run(subset);
        if (remaining == 0) return;
        for (int v = next; v < 27; ++v) {
            subset.push_back(v);
            recurse(v + 1, remaining - 1);
            subset.pop_back();
        }
    };
    recurse(0, 6);
    // sum of 27-choose-k for k = 0..6
    CHECK(tested == 397594);
}

TEST_CASE("filter_kidneys keeps at most two components by the size rule") {
    // sizes 100, 90, 5 -> keep 100 and 90
    LabelMask m = blank({3, 40, 40});
    for (int i = 0; i < 100; ++i) m.at(0, i / 40, i % 40) = 1;
    for (int i = 0; i < 90; ++i) m.at(2, 20 + i / 40, i % 40) = 1;
    m.at(2, 0, 0) = m.at(2, 0, 1) = m.at(2, 0, 2) = m.at(2, 0, 3) = m.at(2, 0, 4) = 1;
    PostprocessAudit audit;
    const LabelMask f = filter_kidneys(m, {}, &audit);
    std::int64_t remaining = 0;
    for (auto b : f.data) remaining += b == 1;
    CHECK(remaining == 190);
    CHECK(connected_components(f, 1, 26).components.size() == 2);
    REQUIRE(audit.kidneys.size() == 3);
    // audit entries follow component discovery order; check by size
    for (const auto& d : audit.kidneys) {
        if (d.voxels >= 90)
            CHECK(d.kept);
        else
            CHECK_FALSE(d.kept);
    }
}

TEST_CASE("filter_kidneys drops a second component below 10% of the largest") {
    LabelMask m = blank({3, 40, 40});
    for (int i = 0; i < 100; ++i) m.at(0, i / 40, i % 40) = 1;
    for (int i = 0; i < 6; ++i) m.at(2, 30, i) = 1; // 6 < 10% of 100
    const LabelMask f = filter_kidneys(m);
    std::int64_t remaining = 0;
    for (auto b : f.data) remaining += b == 1;
    CHECK(remaining == 100);
}

TEST_CASE("filter_kidneys: no kidney found leaves the mask unchanged") {
    LabelMask m = blank({4, 4, 4});
    m.at(1, 1, 1) = 2;
    PostprocessAudit audit;
    const LabelMask f = filter_kidneys(m, {}, &audit);
    CHECK(f.data == m.data);
    CHECK_FALSE(audit.kidney_found);
}

TEST_CASE("filter_tumors: embedded kept, isolated removed, diagonal-touching kept") {
    LabelMask m = blank({5, 12, 12});
    // kidney block
    for (int z = 1; z < 4; ++z)
        for (int y = 1; y < 5; ++y)
            for (int x = 1; x < 5; ++x) m.at(z, y, x) = 1;
    m.at(2, 2, 2) = 2;     // embedded tumor
    m.at(4, 5, 5) = 2;     // diagonal-touching at a corner of the block
    m.at(0, 10, 10) = 2;   // isolated blob
    const LabelMask f = filter_tumors(m);
    CHECK(f.at(2, 2, 2) == 2);
    CHECK(f.at(4, 5, 5) == 2);
    CHECK(f.at(0, 10, 10) == 0);

    // under 6-connectivity the diagonal contact no longer counts
    PostprocessConfig c6;
    c6.connectivity = 6;
    const LabelMask f6 = filter_tumors(m, c6);
    CHECK(f6.at(4, 5, 5) == 0);
    CHECK(f6.at(2, 2, 2) == 2);
}

TEST_CASE("postprocess: two kidneys, attached tumor kept, floating tumor removed") {
    LabelMask m = blank({8, 16, 32});
    // left kidney
    for (int z = 2; z < 6; ++z)
        for (int y = 4; y < 10; ++y)
            for (int x = 4; x < 10; ++x) m.at(z, y, x) = 1;
    // right kidney
    for (int z = 2; z < 6; ++z)
        for (int y = 4; y < 10; ++y)
            for (int x = 20; x < 26; ++x) m.at(z, y, x) = 1;
    // tumor attached to the left kidney face
    for (int z = 3; z < 5; ++z)
        for (int y = 5; y < 8; ++y)
            for (int x = 10; x < 12; ++x) m.at(z, y, x) = 2;
    // floating tumor far from both
    m.at(7, 14, 15) = 2;
    m.at(7, 14, 16) = 2;

    PostprocessAudit audit;
    const LabelMask f = postprocess(m, {}, &audit);
    CHECK(f.at(3, 5, 10) == 2);
    CHECK(f.at(7, 14, 15) == 0);
    CHECK(f.at(7, 14, 16) == 0);
    // everything else intact
    std::int64_t kidney_voxels = 0;
    for (auto b : f.data) kidney_voxels += b == 1;
    CHECK(kidney_voxels == 2 * 4 * 6 * 6);

    // already-clean mask is a fixed point
    const LabelMask again = postprocess(f);
    CHECK(again.data == f.data);
}

TEST_CASE("postprocess is idempotent and never adds foreground on random masks") {
    Rng rng(777);
    for (int trial = 0; trial < 50; ++trial) {
        const LabelMask m = random_mask({10, 12, 14}, 0.15, rng);
        const LabelMask once = postprocess(m);
        const LabelMask twice = postprocess(once);
        CHECK(once.data == twice.data);
        for (std::size_t i = 0; i < m.data.size(); ++i) {
            // only foreground -> background changes are allowed
            if (m.data[i] == 0) CHECK(once.data[i] == 0);
            if (once.data[i] != 0) CHECK(once.data[i] == m.data[i]);
        }
        // contract: at most two kidney components, all tumors adjacent to one
        const auto kidneys = connected_components(once, 1, 26);
        CHECK(kidneys.components.size() <= 2);
    }
}
