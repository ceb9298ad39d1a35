#include "voxseg/train.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <map>
#include <stdexcept>

#include "voxseg/augment.hpp"
#include "voxseg/infer.hpp"
#include "voxseg/loss.hpp"
#include "voxseg/metrics.hpp"
#include "voxseg/optim.hpp"
#include "voxseg/rng.hpp"

namespace voxseg {

namespace {

LabelMask reflect_pad_labels(const LabelMask& m, const std::array<int, 3>& min_shape) {
    // same reflection rule as reflect_pad for volumes
    std::array<int, 3> target = m.geo.shape;
    bool need = false;
    for (int a = 0; a < 3; ++a)
        if (target[a] < min_shape[a]) {
            target[a] = min_shape[a];
            need = true;
        }
    if (!need) return m;
    LabelMask out;
    out.geo = m.geo;
    out.geo.shape = target;
    out.data.resize(static_cast<std::size_t>(out.geo.voxel_count()));
    const auto reflect = [](int i, int n) {
        if (n == 1) return 0;
        const int period = 2 * (n - 1);
        int j = i % period;
        if (j < 0) j += period;
        return j < n ? j : period - j;
    };
    for (int z = 0; z < target[0]; ++z)
        for (int y = 0; y < target[1]; ++y)
            for (int x = 0; x < target[2]; ++x)
                out.at(z, y, x) = m.at(reflect(z, m.geo.shape[0]), reflect(y, m.geo.shape[1]),
                                       reflect(x, m.geo.shape[2]));
    return out;
}

struct PatchPair {
    Volume image;
    LabelMask labels;
};

PatchPair extract_patch(const TrainCase& tc, const std::array<int, 3>& origin,
                        const std::array<int, 3>& patch) {
    PatchPair out;
    out.image.geo.shape = patch;
    out.image.geo.spacing = tc.image.geo.spacing;
    out.image.data.resize(static_cast<std::size_t>(out.image.geo.voxel_count()));
    out.labels.geo = out.image.geo;
    out.labels.data.resize(out.image.data.size());
    std::size_t i = 0;
    for (int z = 0; z < patch[0]; ++z)
        for (int y = 0; y < patch[1]; ++y) {
            const std::int64_t base =
                tc.image.geo.index_of(origin[0] + z, origin[1] + y, origin[2]);
            for (int x = 0; x < patch[2]; ++x, ++i) {
                out.image.data[i] = tc.image.data[static_cast<std::size_t>(base + x)];
                out.labels.data[i] = tc.labels.data[static_cast<std::size_t>(base + x)];
            }
        }
    return out;
}

std::array<int, 3> sample_origin(const TrainCase& tc, const std::array<int, 3>& patch,
                                 double fg_prob, Rng& rng) {
    const auto& shape = tc.image.geo.shape;
    std::array<int, 3> origin{};
    const bool force_fg = !tc.fg_indices.empty() && rng.bernoulli(fg_prob);
    if (force_fg) {
        const std::int64_t flat =
            tc.fg_indices[static_cast<std::size_t>(rng.uniform_index(tc.fg_indices.size()))];
        const std::array<int, 3> pos{int(flat / (std::int64_t(shape[1]) * shape[2])),
                                     int(flat / shape[2] % shape[1]), int(flat % shape[2])};
        for (int a = 0; a < 3; ++a) {
            const int offset = int(rng.uniform_index(std::uint64_t(patch[a])));
            origin[a] = std::clamp(pos[a] - offset, 0, shape[a] - patch[a]);
        }
    } else {
        for (int a = 0; a < 3; ++a)
            origin[a] = int(rng.uniform_index(std::uint64_t(shape[a] - patch[a] + 1)));
    }
    return origin;
}

/// Loss on the center patch of each case, plus mean hard Dice of the top head.
std::pair<double, double> validate_cases(const UNet<float>& net, const Dataset& val,
                                         const std::array<int, 3>& patch, const LossConfig& lc) {
    double loss_sum = 0.0, dice_sum = 0.0;
    int dice_n = 0;
    for (const auto& tc : val.cases) {
        std::array<int, 3> origin{};
        for (int a = 0; a < 3; ++a) origin[a] = (tc.image.geo.shape[a] - patch[a]) / 2;
        const PatchPair pp = extract_patch(tc, origin, patch);
        Tensor5<float> x(1, 1, patch[0], patch[1], patch[2]);
        std::copy(pp.image.data.begin(), pp.image.data.end(), x.v.begin());
        LabelBatch lb(1, patch[0], patch[1], patch[2]);
        std::copy(pp.labels.data.begin(), pp.labels.data.end(), lb.v.begin());

        Tensor5<float> probs = net.forward_eval_top(x);
        LossConfig top_only = lc;
        top_only.layer_weights = {1.0};
        const std::vector<Tensor5<float>> heads{probs};
        loss_sum += multiscale_loss(heads, lb, top_only, false).total;

        LabelMask pred;
        pred.geo = pp.labels.geo;
        pred.data.resize(pp.labels.data.size());
        for (std::size_t i = 0; i < pred.data.size(); ++i) {
            int best = 0;
            float bp = probs.v[i];
            for (int c = 1; c < kNumClasses; ++c) {
                const float pc = probs.v[static_cast<std::size_t>(c) * pred.data.size() + i];
                if (pc > bp) {
                    bp = pc;
                    best = c;
                }
            }
            pred.data[i] = std::uint8_t(best);
        }
        for (int cls = 1; cls < kNumClasses; ++cls) {
            dice_sum += dice(confusion(pred, pp.labels, cls));
            ++dice_n;
        }
    }
    const double n = double(std::max<std::size_t>(1, val.cases.size()));
    return {loss_sum / n, dice_n ? dice_sum / dice_n : 0.0};
}

} // namespace

Dataset load_dataset(const std::filesystem::path& dir, const std::array<int, 3>& min_shape) {
    namespace fs = std::filesystem;
    if (!fs::is_directory(dir)) throw std::runtime_error("dataset directory not found: " + dir.string());
    std::map<std::string, std::pair<fs::path, fs::path>> pairs;
    for (const auto& entry : fs::directory_iterator(dir)) {
        const std::string name = entry.path().filename().string();
        const auto strip = [&](const std::string& suffix) -> std::string {
            if (name.size() > suffix.size() &&
                name.compare(name.size() - suffix.size(), suffix.size(), suffix) == 0)
                return name.substr(0, name.size() - suffix.size());
            return {};
        };
        if (const std::string id = strip("_img.mvol.json"); !id.empty())
            pairs[id].first = entry.path();
        else if (const std::string id2 = strip("_seg.mvol.json"); !id2.empty())
            pairs[id2].second = entry.path();
    }
    Dataset ds;
    for (const auto& [id, files] : pairs) {
        if (files.first.empty() || files.second.empty())
            throw std::runtime_error("dataset: case " + id + " is missing its image or labels");
        TrainCase tc;
        tc.id = id;
        tc.image = read_intensity(files.first);
        tc.labels = read_labels(files.second);
        if (tc.image.geo != tc.labels.geo)
            throw std::runtime_error("dataset: case " + id + " image/label geometry mismatch");
        tc.image = reflect_pad(tc.image, min_shape);
        tc.labels = reflect_pad_labels(tc.labels, min_shape);
        for (std::int64_t i = 0; i < std::ssize(tc.labels.data); ++i)
            if (tc.labels.data[static_cast<std::size_t>(i)] != 0) tc.fg_indices.push_back(i);
        ds.cases.push_back(std::move(tc));
    }
    if (ds.cases.empty()) throw std::runtime_error("dataset: no cases found in " + dir.string());
    return ds;
}

std::vector<double> derive_layer_weights(int heads, const std::vector<double>& configured,
                                         bool mss) {
    if (heads < 1) throw std::runtime_error("derive_layer_weights: no heads");
    std::vector<double> w(static_cast<std::size_t>(heads), 0.0);
    if (!mss) {
        w[0] = 1.0;
        return w;
    }
    if (std::ssize(configured) < heads)
        throw std::runtime_error("loss.layer_weights has fewer entries than supervision heads");
    double sum = 0.0;
    for (int i = 0; i < heads; ++i) sum += configured[static_cast<std::size_t>(i)];
    if (!(sum > 0.0)) throw std::runtime_error("loss.layer_weights sum to zero");
    const bool truncated = std::ssize(configured) != heads;
    for (int i = 0; i < heads; ++i)
        w[static_cast<std::size_t>(i)] =
            truncated ? configured[static_cast<std::size_t>(i)] / sum
                      : configured[static_cast<std::size_t>(i)];
    return w;
}

TrainResult train(const TrainOptions& opt, const Dataset& data, const Dataset& val) {
    if (data.cases.empty()) throw std::runtime_error("train: empty dataset");
    const auto& patch = opt.params.patch;
    for (const auto& tc : data.cases)
        for (int a = 0; a < 3; ++a)
            if (tc.image.geo.shape[a] < patch[a])
                throw std::runtime_error("train: case " + tc.id + " smaller than the patch");
    const int f = 1 << (opt.net.levels - 1);
    for (int a = 0; a < 3; ++a)
        if (patch[a] % f != 0)
            throw std::runtime_error("train: patch axes must be divisible by 2^(levels-1) = " +
                                     std::to_string(f));

    LossConfig loss_cfg = opt.loss;
    loss_cfg.layer_weights =
        derive_layer_weights(opt.net.levels - 1, opt.loss.layer_weights, opt.mss);
    loss_cfg.validate();

    TrainResult result{UNet<float>(opt.net, opt.params.seed), {}};
    UNet<float>& net = result.net;
    UNetParams<float> grads = net.make_grads();
    auto pviews = net.views();
    auto gviews = UNet<float>::views_of(grads, opt.net);

    Adam<float> adam(net.param_count());
    std::vector<Adam<float>::Span> spans(pviews.size());
    for (std::size_t i = 0; i < pviews.size(); ++i)
        spans[i] = {pviews[i].data, gviews[i].data, pviews[i].size};

    LrSchedule schedule({opt.params.initial_lr, opt.params.lr_drop_factor,
                         opt.params.lr_drop_patience, opt.params.stop_patience});
    Rng rng(derive_seed(opt.params.seed, 0x7261696e));

    const int nb = opt.params.batch_size;
    double lr = opt.params.initial_lr;
    for (int epoch = 0; epoch < opt.params.epochs; ++epoch) {
        double loss_sum = 0.0;
        for (int iter = 0; iter < opt.params.iterations_per_epoch; ++iter) {
            Tensor5<float> x(nb, 1, patch[0], patch[1], patch[2]);
            LabelBatch lb(nb, patch[0], patch[1], patch[2]);
            for (int b = 0; b < nb; ++b) {
                const TrainCase& tc =
                    data.cases[static_cast<std::size_t>(rng.uniform_index(data.cases.size()))];
                const auto origin =
                    sample_origin(tc, patch, opt.params.fg_oversample_prob, rng);
                PatchPair pp = extract_patch(tc, origin, patch);
                if (opt.params.augment) {
                    const SampledAugment aug = sample_augmentation(opt.augment, rng);
                    auto warped = apply_augmentation(aug, pp.image, pp.labels);
                    pp.image = std::move(warped.first);
                    pp.labels = std::move(warped.second);
                }
                std::copy(pp.image.data.begin(), pp.image.data.end(),
                          x.v.begin() + std::int64_t(b) * x.spatial());
                std::copy(pp.labels.data.begin(), pp.labels.data.end(),
                          lb.v.begin() + std::int64_t(b) * lb.spatial());
            }

            UNetTrace<float> trace = net.forward(x, true);
            MultiscaleLoss<float> ml = multiscale_loss(trace.head_probs, lb, loss_cfg, true);
            for (auto& gv : gviews) std::fill_n(gv.data, gv.size, 0.0f);
            net.backward(trace, ml.logit_grads, grads);
            adam.step(spans, lr);
            loss_sum += ml.total;
        }

        EpochRecord rec;
        rec.epoch = epoch;
        rec.train_loss = loss_sum / opt.params.iterations_per_epoch;
        rec.lr = lr;
        if (!val.cases.empty()) {
            const auto [vl, vd] = validate_cases(net, val, patch, loss_cfg);
            rec.val_loss = vl;
            rec.mean_dice = vd;
        }
        result.history.push_back(rec);

        const auto sched = schedule.observe(rec.train_loss);
        lr = sched.lr;
        if (sched.stop) break;
    }
    return result;
}

void write_history_csv(const std::vector<EpochRecord>& history,
                       const std::filesystem::path& path) {
    std::ofstream out(path, std::ios::trunc);
    if (!out) throw std::runtime_error("cannot write history " + path.string());
    out << "epoch,train_loss,val_loss,mean_dice,lr\n";
    out.precision(10);
    for (const auto& r : history)
        out << r.epoch << ',' << r.train_loss << ',' << r.val_loss << ',' << r.mean_dice << ','
            << r.lr << '\n';
    out.flush();
}

} // namespace voxseg
