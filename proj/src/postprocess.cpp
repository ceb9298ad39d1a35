#include "voxseg/postprocess.hpp"

#include <algorithm>
#include <stdexcept>

namespace voxseg {

namespace {

std::vector<std::array<int, 3>> neighbor_offsets(int connectivity) {
    std::vector<std::array<int, 3>> out;
    if (connectivity == 6) {
        out = {{1, 0, 0}, {-1, 0, 0}, {0, 1, 0}, {0, -1, 0}, {0, 0, 1}, {0, 0, -1}};
    } else if (connectivity == 26) {
        for (int dz = -1; dz <= 1; ++dz)
            for (int dy = -1; dy <= 1; ++dy)
                for (int dx = -1; dx <= 1; ++dx)
                    if (dz || dy || dx) out.push_back({dz, dy, dx});
    } else {
        throw std::runtime_error("connectivity must be 6 or 26, got " +
                                 std::to_string(connectivity));
    }
    return out;
}

} // namespace

ComponentLabeling connected_components(const LabelMask& m, int class_id, int connectivity) {
    if (class_id != 1 && class_id != 2)
        throw std::runtime_error("connected_components: class_id must be 1 or 2");
    const auto offsets = neighbor_offsets(connectivity);
    const auto& s = m.geo.shape;

    ComponentLabeling out;
    out.ids.assign(static_cast<std::size_t>(m.geo.voxel_count()), 0);
    std::vector<std::int64_t> stack;

    for (int z = 0; z < s[0]; ++z)
        for (int y = 0; y < s[1]; ++y)
            for (int x = 0; x < s[2]; ++x) {
                const std::int64_t start = m.geo.index_of(z, y, x);
                if (m.data[static_cast<std::size_t>(start)] != class_id ||
                    out.ids[static_cast<std::size_t>(start)] != 0)
                    continue;
                ComponentRecord rec;
                rec.id = int(out.components.size()) + 1;
                rec.cls = std::uint8_t(class_id);
                rec.bbox_lo = {z, y, x};
                rec.bbox_hi = {z, y, x};
                stack.clear();
                stack.push_back(start);
                out.ids[static_cast<std::size_t>(start)] = rec.id;
                while (!stack.empty()) {
                    const std::int64_t cur = stack.back();
                    stack.pop_back();
                    ++rec.voxels;
                    const int cz = int(cur / (std::int64_t(s[1]) * s[2]));
                    const int cy = int(cur / s[2] % s[1]);
                    const int cx = int(cur % s[2]);
                    rec.bbox_lo = {std::min(rec.bbox_lo[0], cz), std::min(rec.bbox_lo[1], cy),
                                   std::min(rec.bbox_lo[2], cx)};
                    rec.bbox_hi = {std::max(rec.bbox_hi[0], cz), std::max(rec.bbox_hi[1], cy),
                                   std::max(rec.bbox_hi[2], cx)};
                    for (const auto& o : offsets) {
                        const int nz = cz + o[0], ny = cy + o[1], nx = cx + o[2];
                        if (!m.geo.contains(nz, ny, nx)) continue;
                        const std::int64_t ni = m.geo.index_of(nz, ny, nx);
                        if (m.data[static_cast<std::size_t>(ni)] == class_id &&
                            out.ids[static_cast<std::size_t>(ni)] == 0) {
                            out.ids[static_cast<std::size_t>(ni)] = rec.id;
                            stack.push_back(ni);
                        }
                    }
                }
                out.components.push_back(rec);
            }
    return out;
}

LabelMask filter_kidneys(const LabelMask& m, const PostprocessConfig& cfg,
                         PostprocessAudit* audit) {
    const ComponentLabeling cc = connected_components(m, 1, cfg.connectivity);
    if (cc.components.empty()) {
        if (audit) audit->kidney_found = false;
        return m;
    }
    // order by size descending, first-found wins ties
    std::vector<int> order(cc.components.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = int(i);
    std::stable_sort(order.begin(), order.end(), [&](int a, int b) {
        return cc.components[static_cast<std::size_t>(a)].voxels >
               cc.components[static_cast<std::size_t>(b)].voxels;
    });
    const std::int64_t largest = cc.components[static_cast<std::size_t>(order[0])].voxels;

    std::vector<bool> keep(cc.components.size() + 1, false);
    std::vector<ComponentDecision> decisions(cc.components.size());
    for (std::size_t rank = 0; rank < order.size(); ++rank) {
        const auto& rec = cc.components[static_cast<std::size_t>(order[rank])];
        ComponentDecision d;
        d.voxels = rec.voxels;
        if (rank == 0) {
            d.kept = true;
            d.reason = "largest kidney component";
        } else if (rank == 1 && double(rec.voxels) >= cfg.second_kidney_ratio * double(largest)) {
            d.kept = true;
            d.reason = "second kidney component above size ratio";
        } else if (rank == 1) {
            d.reason = "second component below size ratio (single-kidney case)";
        } else {
            d.reason = "beyond two kidney components";
        }
        keep[static_cast<std::size_t>(rec.id)] = d.kept;
        decisions[static_cast<std::size_t>(order[rank])] = d;
    }
    if (audit) {
        audit->kidney_found = true;
        audit->kidneys = decisions;
    }

    LabelMask out = m;
    for (std::size_t i = 0; i < out.data.size(); ++i)
        if (out.data[i] == 1 && !keep[static_cast<std::size_t>(cc.ids[i])]) out.data[i] = 0;
    return out;
}

LabelMask filter_tumors(const LabelMask& m, const PostprocessConfig& cfg,
                        PostprocessAudit* audit) {
    const ComponentLabeling cc = connected_components(m, 2, cfg.connectivity);
    if (cc.components.empty()) return m;
    const auto offsets = neighbor_offsets(cfg.connectivity);
    const auto& s = m.geo.shape;

    std::vector<bool> touches(cc.components.size() + 1, false);
    for (int z = 0; z < s[0]; ++z)
        for (int y = 0; y < s[1]; ++y)
            for (int x = 0; x < s[2]; ++x) {
                const int id = cc.ids[static_cast<std::size_t>(m.geo.index_of(z, y, x))];
                if (id == 0 || touches[static_cast<std::size_t>(id)]) continue;
                for (const auto& o : offsets) {
                    const int nz = z + o[0], ny = y + o[1], nx = x + o[2];
                    if (m.geo.contains(nz, ny, nx) && m.at(nz, ny, nx) == 1) {
                        touches[static_cast<std::size_t>(id)] = true;
                        break;
                    }
                }
            }

    if (audit) {
        audit->tumors.clear();
        for (const auto& rec : cc.components) {
            ComponentDecision d;
            d.voxels = rec.voxels;
            d.kept = touches[static_cast<std::size_t>(rec.id)];
            d.reason = d.kept ? "adjacent to retained kidney" : "not attached to any kidney";
            audit->tumors.push_back(d);
        }
    }

    LabelMask out = m;
    for (std::size_t i = 0; i < out.data.size(); ++i)
        if (out.data[i] == 2 && !touches[static_cast<std::size_t>(cc.ids[i])]) out.data[i] = 0;
    return out;
}

LabelMask postprocess(const LabelMask& m, const PostprocessConfig& cfg, PostprocessAudit* audit) {
    return filter_tumors(filter_kidneys(m, cfg, audit), cfg, audit);
}

} // namespace voxseg
