#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cstdio>
#include <filesystem>
#include <fstream>

#include "voxseg/rng.hpp"
#include "voxseg/volume.hpp"

using namespace voxseg;
namespace fs = std::filesystem;

namespace {

fs::path temp_dir() {
    const fs::path dir = fs::temp_directory_path() / "voxseg_test_volume";
    fs::create_directories(dir);
    return dir;
}

Volume make_volume(const std::array<int, 3>& shape, Rng& rng) {
    Volume v;
    v.geo.shape = shape;
    v.geo.spacing = {rng.uniform(0.2, 4.0), rng.uniform(0.2, 4.0), rng.uniform(0.2, 4.0)};
    v.geo.origin = {rng.uniform(-50, 50), rng.uniform(-50, 50), rng.uniform(-50, 50)};
    v.data.resize(static_cast<std::size_t>(v.geo.voxel_count()));
    for (auto& x : v.data) x = float(rng.uniform(-1000, 1000));
    return v;
}

} // namespace

TEST_CASE("read_volume length arithmetic: 2x2x2 header reads 8 voxels") {
    const auto dir = temp_dir();
    Volume v;
    v.geo.shape = {2, 2, 2};
    v.data = {1, 2, 3, 4, 5, 6, 7, 8};
    write_volume(v, dir / "tiny");
    const Volume r = read_intensity(dir / "tiny");
    CHECK(r.data.size() == 8);
    CHECK(r.data == v.data);
}

TEST_CASE("spacing [3.0, 0.7816, 0.7816] survives a round trip exactly") {
    const auto dir = temp_dir();
    Volume v;
    v.geo.shape = {1, 1, 1};
    v.geo.spacing = {3.0, 0.7816, 0.7816};
    v.data = {0.0f};
    write_volume(v, dir / "spacing");
    const Volume r = read_intensity(dir / "spacing");
    CHECK(r.geo.spacing[0] == 3.0);
    CHECK(r.geo.spacing[1] == 0.7816);
    CHECK(r.geo.spacing[2] == 0.7816);
}

TEST_CASE("payload length mismatch is an error") {
    const auto dir = temp_dir();
    Volume v;
    v.geo.shape = {2, 2, 2};
    v.data.assign(8, 1.0f);
    write_volume(v, dir / "short");
    // truncate the payload to 7 floats
    fs::resize_file(dir / "short.mvol.raw", 7 * sizeof(float));
    CHECK_THROWS_WITH_AS(read_volume(dir / "short"), doctest::Contains("bytes"),
                         std::runtime_error);
}

TEST_CASE("label values outside {0,1,2} are rejected on read") {
    const auto dir = temp_dir();
    LabelMask m;
    m.geo.shape = {1, 1, 4};
    m.data = {0, 1, 2, 1};
    write_volume(m, dir / "labels");
    {
        std::ofstream raw(dir / "labels.mvol.raw", std::ios::binary | std::ios::trunc);
        const std::uint8_t bytes[4] = {0, 1, 3, 1};
        raw.write(reinterpret_cast<const char*>(bytes), 4);
    }
    CHECK_THROWS_AS(read_volume(dir / "labels"), std::runtime_error);
}

TEST_CASE("non-finite intensities are rejected") {
    Volume v;
    v.geo.shape = {1, 1, 2};
    v.data = {1.0f, std::numeric_limits<float>::infinity()};
    CHECK_THROWS_AS(validate(v), std::runtime_error);
}

TEST_CASE("empty-shape volume is rejected") {
    Volume v;
    v.geo.shape = {0, 2, 2};
    CHECK_THROWS_AS(validate(v), std::runtime_error);
}

TEST_CASE("prob map with channel sum != 1 fails validation") {
    ProbMap p;
    p.geo.shape = {1, 1, 1};
    p.data = {0.5f, 0.3f, 0.1f}; // sums to 0.9
    CHECK_THROWS_AS(validate(p), std::runtime_error);
    p.data = {0.5f, 0.3f, 0.2f};
    CHECK_NOTHROW(validate(p));
}

TEST_CASE("round trip is bit-exact for 100 random volumes") {
    const auto dir = temp_dir();
    Rng rng(42);
    for (int i = 0; i < 100; ++i) {
        const std::array<int, 3> shape{1 + int(rng.uniform_index(6)),
                                       1 + int(rng.uniform_index(6)),
                                       1 + int(rng.uniform_index(6))};
        const Volume v = make_volume(shape, rng);
        write_volume(v, dir / "roundtrip");
        const Volume r = read_intensity(dir / "roundtrip");
        REQUIRE(r.geo == v.geo);
        REQUIRE(r.data.size() == v.data.size());
        for (std::size_t j = 0; j < v.data.size(); ++j) {
            // compare representations, not values, to pin bit-exactness
            REQUIRE(std::memcmp(&r.data[j], &v.data[j], sizeof(float)) == 0);
        }
    }
}

TEST_CASE("label mask round trip preserves bytes") {
    const auto dir = temp_dir();
    Rng rng(7);
    LabelMask m;
    m.geo.shape = {4, 5, 6};
    m.data.resize(120);
    for (auto& b : m.data) b = std::uint8_t(rng.uniform_index(3));
    write_volume(m, dir / "mask");
    const LabelMask r = read_labels(dir / "mask");
    CHECK(r.data == m.data);
}

TEST_CASE("voxel_to_world: paper spacing on z step") {
    Geometry g;
    g.shape = {4, 4, 4};
    g.spacing = {3.0, 0.7816, 0.7816};
    const auto w = voxel_to_world(g, {1, 0, 0});
    CHECK(w[0] == doctest::Approx(3.0).epsilon(1e-12));
    CHECK(w[1] == 0.0);
    CHECK(w[2] == 0.0);
}

TEST_CASE("voxel_to_world: zero index is the origin, unit spacing is identity") {
    Geometry g;
    g.shape = {5, 5, 5};
    g.origin = {1.5, -2.0, 7.0};
    CHECK(voxel_to_world(g, {0, 0, 0}) == g.origin);
    g.origin = {0, 0, 0};
    const auto w = voxel_to_world(g, {2, 3, 4});
    CHECK(w == std::array<double, 3>{2, 3, 4});
}

TEST_CASE("voxel_to_world rejects out-of-range indices") {
    Geometry g;
    g.shape = {2, 2, 2};
    CHECK_THROWS_AS(voxel_to_world(g, {2, 0, 0}), std::runtime_error);
    CHECK_THROWS_AS(voxel_to_world(g, {0, -1, 0}), std::runtime_error);
}

TEST_CASE("voxel_to_world is affine: differences equal index delta times spacing") {
    Rng rng(11);
    for (int trial = 0; trial < 50; ++trial) {
        Geometry g;
        g.shape = {8, 8, 8};
        g.spacing = {rng.uniform(0.1, 5.0), rng.uniform(0.1, 5.0), rng.uniform(0.1, 5.0)};
        g.origin = {rng.uniform(-100, 100), rng.uniform(-100, 100), rng.uniform(-100, 100)};
        const std::array<int, 3> a{int(rng.uniform_index(8)), int(rng.uniform_index(8)),
                                   int(rng.uniform_index(8))};
        const std::array<int, 3> b{int(rng.uniform_index(8)), int(rng.uniform_index(8)),
                                   int(rng.uniform_index(8))};
        const auto wa = voxel_to_world(g, a), wb = voxel_to_world(g, b);
        for (int ax = 0; ax < 3; ++ax) {
            const double expect = (a[ax] - b[ax]) * g.spacing[ax];
            CHECK(wa[ax] - wb[ax] == doctest::Approx(expect).epsilon(1e-12));
        }
    }
}
