#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cmath>

#include "voxseg/phantom.hpp"
#include "voxseg/postprocess.hpp"

using namespace voxseg;

TEST_CASE("noise-free single kidney: exact labels and exact class means") {
    PhantomSpec spec;
    spec.kidney_count = 1;
    spec.tumors_per_kidney_min = spec.tumors_per_kidney_max = 0;
    spec.bg_std = spec.kidney_std = spec.tumor_std = 0.0;
    spec.noise_std = 0.0;
    spec.seed = 3;
    const auto [vol, mask] = generate_phantom(spec);
    validate(vol);
    validate(mask);
    std::int64_t kidney = 0;
    for (std::size_t i = 0; i < mask.data.size(); ++i) {
        if (mask.data[i] == 1) {
            ++kidney;
            CHECK(vol.data[i] == float(spec.kidney_mean));
        } else {
            REQUIRE(mask.data[i] == 0);
            CHECK(vol.data[i] == float(spec.bg_mean));
        }
    }
    CHECK(kidney > 500); // an actual kidney-sized blob exists
}

TEST_CASE("fixed seed reproduces the identical pair; different seeds differ") {
    PhantomSpec spec;
    spec.seed = 17;
    const auto a = generate_phantom(spec);
    const auto b = generate_phantom(spec);
    CHECK(a.first.data == b.first.data);
    CHECK(a.second.data == b.second.data);
    spec.seed = 18;
    const auto c = generate_phantom(spec);
    CHECK(a.second.data != c.second.data);
}

TEST_CASE("generated labels pass postprocess unchanged across many seeds") {
    for (std::uint64_t seed = 1; seed <= 40; ++seed) {
        PhantomSpec spec;
        spec.seed = seed;
        spec.tumors_per_kidney_min = 1; // force tumors so adjacency is exercised
        spec.tumors_per_kidney_max = 2;
        const auto [vol, mask] = generate_phantom(spec);
        const LabelMask cleaned = postprocess(mask);
        REQUIRE(cleaned.data == mask.data);
        // at most two kidney components by construction
        CHECK(connected_components(mask, 1, 26).components.size() <= 2);
    }
}

TEST_CASE("attached tumors are 26-adjacent to a kidney component") {
    PhantomSpec spec;
    spec.tumor_placement = "attached";
    spec.tumors_per_kidney_min = spec.tumors_per_kidney_max = 1;
    spec.seed = 5;
    const auto [vol, mask] = generate_phantom(spec);
    // removing unattached tumors must remove nothing
    const LabelMask filtered = filter_tumors(mask);
    CHECK(filtered.data == mask.data);
    std::int64_t tumor = 0;
    for (auto b : mask.data) tumor += b == 2;
    CHECK(tumor > 0);
}

TEST_CASE("class volume fractions stay within 20% of the analytic solids") {
    PhantomSpec spec;
    spec.kidney_count = 2;
    spec.tumors_per_kidney_min = spec.tumors_per_kidney_max = 0;
    spec.bg_std = spec.kidney_std = spec.tumor_std = spec.noise_std = 0.0;
    // freeze the semi-axes so the analytic volume is known
    spec.kidney_semiaxes_min = spec.kidney_semiaxes_max = {6, 9, 8};
    spec.seed = 11;
    const auto [vol, mask] = generate_phantom(spec);
    std::int64_t kidney = 0;
    for (auto b : mask.data) kidney += b == 1;
    const double analytic = 2.0 * 4.0 / 3.0 * 3.14159265358979 * 6 * 9 * 8;
    CHECK(double(kidney) > 0.8 * analytic);
    CHECK(double(kidney) < 1.2 * analytic);
}

TEST_CASE("phantom spec validation rejects inseparable intensities and bad geometry") {
    PhantomSpec spec;
    spec.kidney_mean = spec.bg_mean; // zero gap
    CHECK_THROWS_AS(spec.validate(), std::runtime_error);

    PhantomSpec big;
    big.kidney_semiaxes_min = big.kidney_semiaxes_max = {40, 40, 40};
    CHECK_THROWS_AS(big.validate(), std::runtime_error);

    PhantomSpec bad_count;
    bad_count.kidney_count = 3;
    CHECK_THROWS_AS(bad_count.validate(), std::runtime_error);
}
