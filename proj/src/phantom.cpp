#include "voxseg/phantom.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <vector>

#include "voxseg/rng.hpp"

namespace voxseg {

namespace {

struct Ellipsoid {
    std::array<double, 3> center;
    std::array<double, 3> semi;
    double rho(double z, double y, double x) const {
        const double dz = (z - center[0]) / semi[0];
        const double dy = (y - center[1]) / semi[1];
        const double dx = (x - center[2]) / semi[2];
        return std::sqrt(dz * dz + dy * dy + dx * dx);
    }
};

struct Sphere {
    std::array<double, 3> center;
    double radius;
    bool contains(double z, double y, double x) const {
        const double dz = z - center[0], dy = y - center[1], dx = x - center[2];
        return dz * dz + dy * dy + dx * dx <= radius * radius;
    }
};

} // namespace

void PhantomSpec::validate() const {
    if (kidney_count < 1 || kidney_count > 2)
        throw std::runtime_error("phantom spec: kidney_count must be 1 or 2");
    if (tumors_per_kidney_min < 0 || tumors_per_kidney_max > 2 ||
        tumors_per_kidney_min > tumors_per_kidney_max)
        throw std::runtime_error("phantom spec: tumors per kidney must be within 0..2");
    if (tumor_radius_min > tumor_radius_max || tumor_radius_min <= 0.0)
        throw std::runtime_error("phantom spec: bad tumor radius range");
    if (tumor_placement != "embedded" && tumor_placement != "attached" &&
        tumor_placement != "mixed")
        throw std::runtime_error("phantom spec: tumor_placement must be embedded|attached|mixed");
    for (int a = 0; a < 3; ++a) {
        if (shape[a] < 8) throw std::runtime_error("phantom spec: volume too small");
        if (kidney_semiaxes_min[a] > kidney_semiaxes_max[a] || kidney_semiaxes_min[a] <= 0.0)
            throw std::runtime_error("phantom spec: bad kidney semi-axis range");
        if (kidney_semiaxes_max[a] * 2.0 + 2.0 > shape[a])
            throw std::runtime_error("phantom spec: kidney does not fit the volume on axis " +
                                     std::to_string(a));
    }
    // classes must be separable: mean gaps at least twice the pooled spread
    const double spread = std::sqrt((bg_std * bg_std + kidney_std * kidney_std +
                                     tumor_std * tumor_std) / 3.0 + noise_std * noise_std);
    const double gap = std::min(std::abs(kidney_mean - bg_mean),
                                std::min(std::abs(tumor_mean - bg_mean),
                                         std::abs(kidney_mean - tumor_mean)));
    if (spread > 0.0 && gap < 2.0 * spread)
        throw std::runtime_error("phantom spec: class intensity distributions overlap too much");
}

std::pair<Volume, LabelMask> generate_phantom(const PhantomSpec& spec) {
    spec.validate();
    Rng rng(spec.seed);
    const auto& s = spec.shape;

    std::vector<Ellipsoid> kidneys;
    for (int k = 0; k < spec.kidney_count; ++k) {
        Ellipsoid e;
        for (int a = 0; a < 3; ++a)
            e.semi[a] = rng.uniform(spec.kidney_semiaxes_min[a], spec.kidney_semiaxes_max[a]);
        // bilateral placement along x, jittered but clamped so the ellipsoid fits
        const double fx = spec.kidney_count == 1 ? 0.5 : (k == 0 ? 0.28 : 0.72);
        std::array<double, 3> c{s[0] * 0.5 + rng.uniform(-1.5, 1.5),
                                s[1] * 0.5 + rng.uniform(-3.0, 3.0),
                                s[2] * fx + rng.uniform(-2.0, 2.0)};
        for (int a = 0; a < 3; ++a)
            c[a] = std::clamp(c[a], e.semi[a] + 1.0, double(s[a]) - e.semi[a] - 2.0);
        e.center = c;
        kidneys.push_back(e);
    }

    std::vector<Sphere> tumors;
    for (std::size_t k = 0; k < kidneys.size(); ++k) {
        const Ellipsoid& e = kidneys[k];
        const int count = spec.tumors_per_kidney_min +
                          int(rng.uniform_index(std::uint64_t(
                              spec.tumors_per_kidney_max - spec.tumors_per_kidney_min + 1)));
        for (int t = 0; t < count; ++t) {
            const bool embedded = spec.tumor_placement == "embedded" ||
                                  (spec.tumor_placement == "mixed" && rng.bernoulli(0.5));
            const double min_semi = std::min({e.semi[0], e.semi[1], e.semi[2]});
            bool placed = false;
            for (int attempt = 0; attempt < 64 && !placed; ++attempt) {
                const double radius = rng.uniform(spec.tumor_radius_min, spec.tumor_radius_max);
                // random direction from the kidney center
                double uz = rng.normal(), uy = rng.normal(), ux = rng.normal();
                const double norm = std::sqrt(uz * uz + uy * uy + ux * ux);
                if (norm < 1e-9) continue;
                uz /= norm;
                uy /= norm;
                ux /= norm;
                Sphere sp;
                sp.radius = radius;
                if (embedded) {
                    // keep the sphere inside: rho(center) + r/min_semi <= 1
                    const double max_rho = 1.0 - radius / min_semi;
                    if (max_rho <= 0.05) continue;
                    const double rho = rng.uniform(0.0, max_rho * 0.9);
                    sp.center = {e.center[0] + rho * uz * e.semi[0],
                                 e.center[1] + rho * uy * e.semi[1],
                                 e.center[2] + rho * ux * e.semi[2]};
                } else {
                    // surface point along u, sphere pushed outward leaving a
                    // ~1.5 voxel overlap so the components stay adjacent
                    sp.center = {e.center[0] + uz * (e.semi[0] + radius - 1.5),
                                 e.center[1] + uy * (e.semi[1] + radius - 1.5),
                                 e.center[2] + ux * (e.semi[2] + radius - 1.5)};
                }
                bool inside = true;
                for (int a = 0; a < 3; ++a)
                    if (sp.center[a] - radius < 1.0 || sp.center[a] + radius > s[a] - 2.0)
                        inside = false;
                // keep tumors from bridging to the other kidney
                for (std::size_t other = 0; inside && other < kidneys.size(); ++other)
                    if (other != k && kidneys[other].rho(sp.center[0], sp.center[1],
                                                         sp.center[2]) < 1.5)
                        inside = false;
                if (!inside) continue;
                tumors.push_back(sp);
                placed = true;
            }
            if (!placed && count > 0)
                throw std::runtime_error("phantom: tumor placement failed after bounded retries");
        }
    }

    Volume vol;
    vol.geo.shape = s;
    vol.geo.spacing = spec.spacing;
    vol.data.resize(static_cast<std::size_t>(vol.geo.voxel_count()));
    LabelMask mask;
    mask.geo = vol.geo;
    mask.data.resize(vol.data.size());

    const double stds[3] = {std::sqrt(spec.bg_std * spec.bg_std + spec.noise_std * spec.noise_std),
                            std::sqrt(spec.kidney_std * spec.kidney_std +
                                      spec.noise_std * spec.noise_std),
                            std::sqrt(spec.tumor_std * spec.tumor_std +
                                      spec.noise_std * spec.noise_std)};
    const double means[3] = {spec.bg_mean, spec.kidney_mean, spec.tumor_mean};

    std::size_t i = 0;
    for (int z = 0; z < s[0]; ++z)
        for (int y = 0; y < s[1]; ++y)
            for (int x = 0; x < s[2]; ++x, ++i) {
                int label = 0;
                for (const auto& e : kidneys)
                    if (e.rho(z, y, x) <= 1.0) {
                        label = 1;
                        break;
                    }
                for (const auto& t : tumors)
                    if (t.contains(z, y, x)) {
                        label = 2;
                        break;
                    }
                mask.data[i] = std::uint8_t(label);
                const double sd = stds[label];
                vol.data[i] = float(sd > 0.0 ? rng.normal(means[label], sd) : means[label]);
            }
    return {std::move(vol), std::move(mask)};
}

} // namespace voxseg
