#include "voxseg/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <stdexcept>

#include "json.hpp"

namespace voxseg {

ConfusionCounts confusion(const LabelMask& pred, const LabelMask& truth, int class_id) {
    if (pred.geo != truth.geo)
        throw std::runtime_error("confusion: prediction and truth geometry differ");
    ConfusionCounts c;
    for (std::size_t i = 0; i < pred.data.size(); ++i) {
        const bool p = pred.data[i] == class_id;
        const bool t = truth.data[i] == class_id;
        if (p && t)
            ++c.tp;
        else if (p)
            ++c.fp;
        else if (t)
            ++c.fn;
        else
            ++c.tn;
    }
    return c;
}

double dice(const ConfusionCounts& c) {
    const std::int64_t den = 2 * c.tp + c.fp + c.fn;
    return den == 0 ? 1.0 : 2.0 * double(c.tp) / double(den);
}

double jaccard(const ConfusionCounts& c) {
    const std::int64_t den = c.tp + c.fp + c.fn;
    return den == 0 ? 1.0 : double(c.tp) / double(den);
}

double accuracy(const ConfusionCounts& c) {
    return double(c.tp + c.tn) / double(c.total());
}

double precision(const ConfusionCounts& c) {
    if (c.tp + c.fp == 0) return c.fn == 0 ? 1.0 : 0.0;
    return double(c.tp) / double(c.tp + c.fp);
}

double recall(const ConfusionCounts& c) {
    if (c.tp + c.fn == 0) return c.fp == 0 ? 1.0 : 0.0;
    return double(c.tp) / double(c.tp + c.fn);
}

std::vector<std::array<int, 3>> surface_voxels(const LabelMask& m, int class_id) {
    std::vector<std::array<int, 3>> out;
    const auto& s = m.geo.shape;
    static constexpr std::array<std::array<int, 3>, 6> kFaces{
        {{1, 0, 0}, {-1, 0, 0}, {0, 1, 0}, {0, -1, 0}, {0, 0, 1}, {0, 0, -1}}};
    for (int z = 0; z < s[0]; ++z)
        for (int y = 0; y < s[1]; ++y)
            for (int x = 0; x < s[2]; ++x) {
                if (m.at(z, y, x) != class_id) continue;
                for (const auto& o : kFaces) {
                    const int nz = z + o[0], ny = y + o[1], nx = x + o[2];
                    if (!m.geo.contains(nz, ny, nx) || m.at(nz, ny, nx) != class_id) {
                        out.push_back({z, y, x});
                        break;
                    }
                }
            }
    return out;
}

namespace {

// Small static kd-tree over 3D points; nearest-neighbor queries return exact
// squared distances, so results match a brute-force max-min bit for bit.
class KdTree {
public:
    explicit KdTree(std::vector<std::array<double, 3>> pts) : pts_(std::move(pts)) {
        idx_.resize(pts_.size());
        for (std::size_t i = 0; i < idx_.size(); ++i) idx_[i] = int(i);
        build(0, int(idx_.size()), 0);
    }

    double nearest_sq(const std::array<double, 3>& q) const {
        double best = std::numeric_limits<double>::infinity();
        search(0, int(idx_.size()), 0, q, best);
        return best;
    }

private:
    void build(int lo, int hi, int axis) {
        if (hi - lo <= 1) return;
        const int mid = (lo + hi) / 2;
        std::nth_element(idx_.begin() + lo, idx_.begin() + mid, idx_.begin() + hi,
                         [&](int a, int b) {
                             return pts_[static_cast<std::size_t>(a)][static_cast<std::size_t>(axis)] <
                                    pts_[static_cast<std::size_t>(b)][static_cast<std::size_t>(axis)];
                         });
        build(lo, mid, (axis + 1) % 3);
        build(mid + 1, hi, (axis + 1) % 3);
    }

    void search(int lo, int hi, int axis, const std::array<double, 3>& q, double& best) const {
        if (hi <= lo) return;
        const int mid = (lo + hi) / 2;
        const auto& p = pts_[static_cast<std::size_t>(idx_[static_cast<std::size_t>(mid)])];
        const double dz = q[0] - p[0], dy = q[1] - p[1], dx = q[2] - p[2];
        const double d2 = dz * dz + dy * dy + dx * dx;
        best = std::min(best, d2);
        const double delta = q[static_cast<std::size_t>(axis)] - p[static_cast<std::size_t>(axis)];
        const int next = (axis + 1) % 3;
        if (delta < 0) {
            search(lo, mid, next, q, best);
            if (delta * delta <= best) search(mid + 1, hi, next, q, best);
        } else {
            search(mid + 1, hi, next, q, best);
            if (delta * delta <= best) search(lo, mid, next, q, best);
        }
    }

    std::vector<std::array<double, 3>> pts_;
    std::vector<int> idx_;
};

std::vector<std::array<double, 3>> to_mm(const std::vector<std::array<int, 3>>& v,
                                         const std::array<double, 3>& sp) {
    std::vector<std::array<double, 3>> out(v.size());
    for (std::size_t i = 0; i < v.size(); ++i)
        out[i] = {v[i][0] * sp[0], v[i][1] * sp[1], v[i][2] * sp[2]};
    return out;
}

double directed_hausdorff_sq(const std::vector<std::array<double, 3>>& from, const KdTree& to) {
    double worst = 0.0;
    for (const auto& p : from) worst = std::max(worst, to.nearest_sq(p));
    return worst;
}

} // namespace

double hausdorff_mm(const std::vector<std::array<int, 3>>& a,
                    const std::vector<std::array<int, 3>>& b,
                    const std::array<double, 3>& spacing_mm) {
    if (a.empty() || b.empty())
        throw std::runtime_error("hausdorff_mm: undefined for an empty voxel set");
    const auto pa = to_mm(a, spacing_mm);
    const auto pb = to_mm(b, spacing_mm);
    const KdTree ta(pa), tb(pb);
    return std::sqrt(std::max(directed_hausdorff_sq(pa, tb), directed_hausdorff_sq(pb, ta)));
}

namespace {

ClassMetrics class_metrics(const LabelMask& pred, const LabelMask& truth, int class_id) {
    ClassMetrics m;
    const ConfusionCounts c = confusion(pred, truth, class_id);
    m.dice = dice(c);
    m.jaccard = jaccard(c);
    m.accuracy = accuracy(c);
    m.precision = precision(c);
    m.recall = recall(c);
    const auto sp = surface_voxels(pred, class_id);
    const auto st = surface_voxels(truth, class_id);
    if (!sp.empty() && !st.empty()) {
        m.hausdorff_mm = hausdorff_mm(sp, st, pred.geo.spacing);
        m.hausdorff_defined = true;
    }
    return m;
}

double quantile(std::vector<double> v, double q) {
    std::sort(v.begin(), v.end());
    const double n = double(v.size());
    double rank = std::clamp(q * n - 0.5, 0.0, n - 1.0);
    const auto lo = static_cast<std::size_t>(rank);
    const double frac = rank - double(lo);
    if (frac == 0.0 || lo + 1 >= v.size()) return v[lo];
    return v[lo] + frac * (v[lo + 1] - v[lo]);
}

MetricSummary summarize(const std::vector<double>& values) {
    MetricSummary s;
    if (values.empty()) return s;
    s.n = int(values.size());
    double sum = 0.0;
    s.min = s.max = values[0];
    for (double v : values) {
        sum += v;
        s.min = std::min(s.min, v);
        s.max = std::max(s.max, v);
    }
    s.mean = sum / double(values.size());
    s.median = quantile(values, 0.5);
    s.q1 = quantile(values, 0.25);
    s.q3 = quantile(values, 0.75);
    return s;
}

constexpr std::array<const char*, 6> kMetricNames{"dice",      "jaccard", "accuracy",
                                                  "precision", "recall",  "hausdorff_mm"};

double metric_value(const ClassMetrics& m, int which) {
    switch (which) {
        case 0: return m.dice;
        case 1: return m.jaccard;
        case 2: return m.accuracy;
        case 3: return m.precision;
        case 4: return m.recall;
        default: return m.hausdorff_mm;
    }
}

} // namespace

CaseReport evaluate_case(const LabelMask& pred, const LabelMask& truth,
                         const std::string& case_id) {
    CaseReport r;
    r.case_id = case_id;
    r.kidney = class_metrics(pred, truth, 1);
    r.tumor = class_metrics(pred, truth, 2);
    return r;
}

CohortSummary evaluate_cohort(const std::vector<CaseReport>& reports) {
    CohortSummary out;
    out.cases = int(reports.size());
    for (int cls = 0; cls < 2; ++cls) {
        auto& dest = cls == 0 ? out.kidney : out.tumor;
        for (int mi = 0; mi < 6; ++mi) {
            std::vector<double> values;
            for (const auto& r : reports) {
                const ClassMetrics& m = cls == 0 ? r.kidney : r.tumor;
                if (mi == 5 && !m.hausdorff_defined) continue;
                values.push_back(metric_value(m, mi));
            }
            dest.emplace_back(kMetricNames[static_cast<std::size_t>(mi)], summarize(values));
        }
    }
    for (const auto& r : reports) {
        out.kidney_hausdorff_defined += r.kidney.hausdorff_defined ? 1 : 0;
        out.tumor_hausdorff_defined += r.tumor.hausdorff_defined ? 1 : 0;
    }
    return out;
}

void write_report_csv(const std::vector<CaseReport>& reports, const std::filesystem::path& path) {
    std::ofstream out(path, std::ios::trunc);
    if (!out) throw std::runtime_error("cannot write report " + path.string());
    out << "case";
    for (const char* cls : {"kidney", "tumor"})
        for (const char* m : kMetricNames) out << ',' << cls << '_' << m;
    out << '\n';
    out.precision(9);
    for (const auto& r : reports) {
        out << r.case_id;
        for (const ClassMetrics* m : {&r.kidney, &r.tumor}) {
            out << ',' << m->dice << ',' << m->jaccard << ',' << m->accuracy << ','
                << m->precision << ',' << m->recall << ',';
            if (m->hausdorff_defined)
                out << m->hausdorff_mm;
            else
                out << "nan";
        }
        out << '\n';
    }
}

void write_summary_json(const CohortSummary& s, const std::filesystem::path& path) {
    nlohmann::json j;
    j["cases"] = s.cases;
    j["kidney_hausdorff_defined"] = s.kidney_hausdorff_defined;
    j["tumor_hausdorff_defined"] = s.tumor_hausdorff_defined;
    for (int cls = 0; cls < 2; ++cls) {
        const auto& src = cls == 0 ? s.kidney : s.tumor;
        nlohmann::json block;
        for (const auto& [name, m] : src) {
            block[name] = {{"mean", m.mean}, {"median", m.median}, {"q1", m.q1},
                           {"q3", m.q3},     {"min", m.min},       {"max", m.max},
                           {"n", m.n}};
        }
        j[cls == 0 ? "kidney" : "tumor"] = block;
    }
    std::ofstream out(path, std::ios::trunc);
    if (!out) throw std::runtime_error("cannot write summary " + path.string());
    out << j.dump(2) << '\n';
}

void write_boxplot_svg(const std::vector<CaseReport>& reports, const std::filesystem::path& path) {
    const int box_w = 36, gap = 24, group_gap = 60, plot_h = 260, top = 30, left = 50;
    const int width = left + 2 * (5 * (box_w + gap)) + group_gap + 40;
    const int height = plot_h + top + 60;

    std::ofstream out(path, std::ios::trunc);
    if (!out) throw std::runtime_error("cannot write boxplot " + path.string());
    out << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << width << "\" height=\""
        << height << "\">\n";
    const auto ypos = [&](double v) { return top + plot_h - v * plot_h; };
    for (int tick = 0; tick <= 4; ++tick) {
        const double v = tick * 0.25;
        out << "<line x1=\"" << left - 6 << "\" y1=\"" << ypos(v) << "\" x2=\"" << width - 20
            << "\" y2=\"" << ypos(v) << "\" stroke=\"#ddd\"/>\n"
            << "<text x=\"8\" y=\"" << ypos(v) + 4 << "\" font-size=\"11\">" << v << "</text>\n";
    }
    int x = left;
    for (int cls = 0; cls < 2; ++cls) {
        out << "<text x=\"" << x << "\" y=\"" << top - 10 << "\" font-size=\"13\">"
            << (cls == 0 ? "kidney" : "tumor") << "</text>\n";
        for (int mi = 0; mi < 5; ++mi) {
            std::vector<double> values;
            for (const auto& r : reports)
                values.push_back(metric_value(cls == 0 ? r.kidney : r.tumor, mi));
            const MetricSummary s = summarize(values);
            const char* color = cls == 0 ? "#b03030" : "#308030";
            out << "<line x1=\"" << x + box_w / 2 << "\" y1=\"" << ypos(s.min) << "\" x2=\""
                << x + box_w / 2 << "\" y2=\"" << ypos(s.max) << "\" stroke=\"" << color
                << "\"/>\n";
            out << "<rect x=\"" << x << "\" y=\"" << ypos(s.q3) << "\" width=\"" << box_w
                << "\" height=\"" << std::max(1.0, ypos(s.q1) - ypos(s.q3))
                << "\" fill=\"none\" stroke=\"" << color << "\"/>\n";
            out << "<line x1=\"" << x << "\" y1=\"" << ypos(s.median) << "\" x2=\"" << x + box_w
                << "\" y2=\"" << ypos(s.median) << "\" stroke=\"" << color
                << "\" stroke-width=\"2\"/>\n";
            out << "<text x=\"" << x << "\" y=\"" << top + plot_h + 16
                << "\" font-size=\"10\" transform=\"rotate(30 " << x << ' ' << top + plot_h + 16
                << ")\">" << kMetricNames[static_cast<std::size_t>(mi)] << "</text>\n";
            x += box_w + gap;
        }
        x += group_gap;
    }
    out << "</svg>\n";
}

} // namespace voxseg
