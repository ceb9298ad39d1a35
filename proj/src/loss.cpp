#include "voxseg/loss.hpp"

namespace voxseg {

namespace {

inline int source_index(int j, int factor, int limit) {
    return std::min(factor * j + (factor - 1) / 2, limit - 1);
}

} // namespace

LabelMask downsample_labels(const LabelMask& m, int factor) {
    if (factor < 1) throw std::runtime_error("downsample_labels: factor must be >= 1");
    if (factor == 1) return m;
    LabelMask out;
    out.geo = m.geo;
    for (int a = 0; a < 3; ++a) {
        out.geo.shape[a] = (m.geo.shape[a] + factor - 1) / factor;
        out.geo.spacing[a] = m.geo.spacing[a] * factor;
    }
    out.data.resize(static_cast<std::size_t>(out.geo.voxel_count()));
    for (int z = 0; z < out.geo.shape[0]; ++z) {
        const int zi = source_index(z, factor, m.geo.shape[0]);
        for (int y = 0; y < out.geo.shape[1]; ++y) {
            const int yi = source_index(y, factor, m.geo.shape[1]);
            for (int x = 0; x < out.geo.shape[2]; ++x)
                out.at(z, y, x) = m.at(zi, yi, source_index(x, factor, m.geo.shape[2]));
        }
    }
    return out;
}

LabelBatch downsample_labels(const LabelBatch& b, int factor) {
    if (factor < 1) throw std::runtime_error("downsample_labels: factor must be >= 1");
    if (factor == 1) return b;
    LabelBatch out(b.n, (b.d + factor - 1) / factor, (b.h + factor - 1) / factor,
                   (b.w + factor - 1) / factor);
    for (int in = 0; in < b.n; ++in)
        for (int z = 0; z < out.d; ++z) {
            const int zi = source_index(z, factor, b.d);
            for (int y = 0; y < out.h; ++y) {
                const int yi = source_index(y, factor, b.h);
                for (int x = 0; x < out.w; ++x)
                    out.at(in, z, y, x) = b.at(in, zi, yi, source_index(x, factor, b.w));
            }
        }
    return out;
}

} // namespace voxseg
