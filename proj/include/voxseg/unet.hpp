#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "voxseg/ops.hpp"
#include "voxseg/rng.hpp"
#include "voxseg/tensor.hpp"
#include "voxseg/volume.hpp"

// Encoder-decoder 3D segmentation network with strided-convolution
// downsampling, transposed-convolution upsampling, instance normalization,
// and one softmax prediction head per decoder level ("deep supervision").
// Level l runs at channels min(base * 2^l, max_channels); each level is two
// conv(3)+norm+lrelu blocks; skip tensors are concatenated ahead of the
// decoder blocks. Heads are 1x1x1 convs to num_classes.

namespace voxseg {

struct UNetConfig {
    int levels = 3; // including the bottleneck; levels-1 supervision heads
    int base_channels = 8;
    int max_channels = 320;
    int in_channels = 1;
    int num_classes = kNumClasses;
    double lrelu_slope = 0.01;
    double norm_eps = 1e-5;
    int min_bottleneck_extent = 1; // paper profile raises this to 8

    void validate() const {
        if (levels < 2) throw std::runtime_error("unet config: levels must be >= 2");
        if (base_channels < 1) throw std::runtime_error("unet config: base_channels must be >= 1");
        if (max_channels < base_channels)
            throw std::runtime_error("unet config: max_channels < base_channels");
        if (in_channels < 1 || num_classes < 2)
            throw std::runtime_error("unet config: bad channel counts");
        if (min_bottleneck_extent < 1)
            throw std::runtime_error("unet config: min_bottleneck_extent must be >= 1");
    }
    int channels_at(int level) const {
        std::int64_t c = base_channels;
        for (int l = 0; l < level; ++l) c *= 2;
        return int(std::min<std::int64_t>(c, max_channels));
    }
    int num_heads() const { return levels - 1; }
    int downsample_factor() const { return 1 << (levels - 1); }
};

template <typename T>
struct ConvLayer {
    Tensor5<T> w; // (out_c, in_c, k, k, k) conv layout
    std::vector<T> b;
    int stride = 1;
};

template <typename T>
struct ConvBlock {
    ConvLayer<T> conv;
    std::vector<T> scale, shift; // instance-norm affine
};

template <typename T>
struct UNetParams {
    struct Encoder {
        ConvBlock<T> b1, b2;
        ConvLayer<T> down;
    };
    struct Decoder {
        ConvLayer<T> up;   // kernel (c_deep, c_level, 3,3,3), adjoint direction
        ConvBlock<T> b1, b2;
        ConvLayer<T> head; // 1x1x1 to num_classes
    };
    std::vector<Encoder> enc; // levels-1 entries, level 0 first
    ConvBlock<T> mid1, mid2;  // bottleneck
    std::vector<Decoder> dec; // levels-1 entries, index 0 = finest
};

template <typename T>
struct ParamView {
    std::string name;
    T* data;
    std::vector<int> dims;
    std::int64_t size;
};

template <typename T>
struct BlockCache {
    Tensor5<T> in, pre_norm, pre_act;
    InstanceNormCache<T> norm;
};

template <typename T>
struct UNetTrace {
    std::vector<Tensor5<T>> head_probs;  // finest first; eval mode: only entry 0
    std::vector<Tensor5<T>> head_logits;
    bool has_cache = false;

    struct EncCache {
        BlockCache<T> b1, b2;
    };
    std::vector<EncCache> enc;
    std::vector<Tensor5<T>> skips; // encoder outputs (down inputs / concat inputs)
    BlockCache<T> mid1, mid2;
    struct DecCache {
        Tensor5<T> up_in;
        BlockCache<T> b1, b2;
        Tensor5<T> out;
    };
    std::vector<DecCache> dec;
};

namespace detail {

template <typename T>
void add_inplace(Tensor5<T>& a, const Tensor5<T>& b) {
    for (std::int64_t i = 0; i < a.size(); ++i) a.v[static_cast<std::size_t>(i)] += b.v[static_cast<std::size_t>(i)];
}

template <typename T>
void add_inplace(std::vector<T>& a, const std::vector<T>& b) {
    for (std::size_t i = 0; i < a.size(); ++i) a[i] += b[i];
}

template <typename T>
Tensor5<T> block_forward(const ConvBlock<T>& blk, Tensor5<T> x, T slope, T eps,
                         BlockCache<T>* cache) {
    Tensor5<T> y = conv3d(x, blk.conv.w, blk.conv.b, blk.conv.stride);
    InstanceNormCache<T> nc;
    Tensor5<T> z = instance_norm(y, blk.scale, blk.shift, eps, cache ? &nc : nullptr);
    Tensor5<T> a = leaky_relu(z, slope);
    if (cache) {
        cache->in = std::move(x);
        cache->pre_norm = std::move(y);
        cache->pre_act = std::move(z);
        cache->norm = std::move(nc);
    }
    return a;
}

/// Returns dL/d(block input); accumulates parameter grads into gblk.
template <typename T>
Tensor5<T> block_backward(const ConvBlock<T>& blk, ConvBlock<T>& gblk, const BlockCache<T>& c,
                          const Tensor5<T>& g_out, T slope) {
    Tensor5<T> g_act = leaky_relu_backward(c.pre_act, g_out, slope);
    Tensor5<T> g_norm =
        instance_norm_backward(c.pre_norm, c.norm, blk.scale, g_act, gblk.scale, gblk.shift);
    add_inplace(gblk.conv.w, conv3d_weight_grad(c.in, g_norm, blk.conv.w.d, blk.conv.stride));
    add_inplace(gblk.conv.b, channel_sum(g_norm));
    return conv3d_adjoint(g_norm, blk.conv.w, c.in.d, c.in.h, c.in.w, blk.conv.stride);
}

} // namespace detail

template <typename T>
class UNet {
public:
    UNet(const UNetConfig& cfg, std::uint64_t seed) : cfg_(cfg) {
        cfg_.validate();
        build_shapes(params_);
        Rng rng(seed);
        for (auto& view : views()) {
            if (view.name.ends_with(".w")) {
                // He-style fan-in init; for up kernels the fan-in is the
                // adjoint-direction input channel count (dims[0]).
                const std::int64_t fan_in = view.dims.size() == 5
                                                ? std::int64_t(view.dims[0]) * view.dims[2] *
                                                      view.dims[3] * view.dims[4]
                                                : view.size;
                const bool is_forward_conv = view.name.find(".up.") == std::string::npos;
                const std::int64_t fin = is_forward_conv && view.dims.size() == 5
                                             ? std::int64_t(view.dims[1]) * view.dims[2] *
                                                   view.dims[3] * view.dims[4]
                                             : fan_in;
                const double std_dev = std::sqrt(2.0 / double(fin));
                for (std::int64_t i = 0; i < view.size; ++i)
                    view.data[i] = T(rng.normal(0.0, std_dev));
            } else if (view.name.ends_with(".scale")) {
                std::fill_n(view.data, view.size, T(1));
            } else {
                std::fill_n(view.data, view.size, T(0));
            }
        }
    }

    const UNetConfig& config() const { return cfg_; }
    UNetParams<T>& params() { return params_; }
    const UNetParams<T>& params() const { return params_; }

    /// Zero-valued gradient buffers with the same shapes as the parameters.
    UNetParams<T> make_grads() const {
        UNetParams<T> g;
        build_shapes(g);
        return g;
    }

    std::vector<ParamView<T>> views() { return views_of(params_, cfg_); }

    static std::vector<ParamView<T>> views_of(UNetParams<T>& p, const UNetConfig& cfg) {
        std::vector<ParamView<T>> out;
        auto add_tensor = [&](const std::string& name, Tensor5<T>& t) {
            out.push_back({name, t.v.data(), {t.n, t.c, t.d, t.h, t.w}, t.size()});
        };
        auto add_vec = [&](const std::string& name, std::vector<T>& v) {
            out.push_back({name, v.data(), {int(v.size())}, std::int64_t(v.size())});
        };
        auto add_block = [&](const std::string& name, ConvBlock<T>& b) {
            add_tensor(name + ".conv.w", b.conv.w);
            add_vec(name + ".conv.b", b.conv.b);
            add_vec(name + ".norm.scale", b.scale);
            add_vec(name + ".norm.shift", b.shift);
        };
        for (int l = 0; l < cfg.levels - 1; ++l) {
            const std::string base = "enc" + std::to_string(l);
            add_block(base + ".b1", p.enc[static_cast<std::size_t>(l)].b1);
            add_block(base + ".b2", p.enc[static_cast<std::size_t>(l)].b2);
            add_tensor(base + ".down.w", p.enc[static_cast<std::size_t>(l)].down.w);
            add_vec(base + ".down.b", p.enc[static_cast<std::size_t>(l)].down.b);
        }
        add_block("mid1", p.mid1);
        add_block("mid2", p.mid2);
        for (int l = 0; l < cfg.levels - 1; ++l) {
            const std::string base = "dec" + std::to_string(l);
            auto& d = p.dec[static_cast<std::size_t>(l)];
            add_tensor(base + ".up.w", d.up.w);
            add_vec(base + ".up.b", d.up.b);
            add_block(base + ".b1", d.b1);
            add_block(base + ".b2", d.b2);
            add_tensor(base + ".head.w", d.head.w);
            add_vec(base + ".head.b", d.head.b);
        }
        return out;
    }

    std::int64_t param_count() const {
        std::int64_t n = 0;
        for (const auto& v : const_cast<UNet*>(this)->views()) n += v.size;
        return n;
    }

    /// Forward pass. Train mode caches activations for backward and computes
    /// every supervision head; eval mode computes only the top head.
    UNetTrace<T> forward(const Tensor5<T>& x, bool train_mode) const {
        if (x.c != cfg_.in_channels)
            throw std::runtime_error("unet forward: input has " + std::to_string(x.c) +
                                     " channels, expected " + std::to_string(cfg_.in_channels));
        const int f = cfg_.downsample_factor();
        if (x.d % f != 0 || x.h % f != 0 || x.w % f != 0)
            throw std::runtime_error("unet forward: input dims " + x.dims_str() +
                                     " must be divisible by " + std::to_string(f));
        if (std::min({x.d, x.h, x.w}) / f < cfg_.min_bottleneck_extent)
            throw std::runtime_error("unet forward: deepest feature map smaller than " +
                                     std::to_string(cfg_.min_bottleneck_extent) + " per axis");

        UNetTrace<T> tr;
        tr.has_cache = train_mode;
        const int L = cfg_.levels;
        tr.head_probs.resize(static_cast<std::size_t>(L - 1));
        tr.head_logits.resize(static_cast<std::size_t>(L - 1));
        if (train_mode) {
            tr.enc.resize(static_cast<std::size_t>(L - 1));
            tr.dec.resize(static_cast<std::size_t>(L - 1));
        }
        tr.skips.resize(static_cast<std::size_t>(L - 1));

        const T slope = T(cfg_.lrelu_slope), eps = T(cfg_.norm_eps);
        Tensor5<T> feat = x;
        for (int l = 0; l < L - 1; ++l) {
            auto& e = params_.enc[static_cast<std::size_t>(l)];
            Tensor5<T> c1 = detail::block_forward(e.b1, std::move(feat), slope, eps,
                                                  train_mode ? &tr.enc[static_cast<std::size_t>(l)].b1 : nullptr);
            Tensor5<T> c2 = detail::block_forward(e.b2, std::move(c1), slope, eps,
                                                  train_mode ? &tr.enc[static_cast<std::size_t>(l)].b2 : nullptr);
            feat = conv3d(c2, e.down.w, e.down.b, 2);
            tr.skips[static_cast<std::size_t>(l)] = std::move(c2);
        }
        feat = detail::block_forward(params_.mid1, std::move(feat), slope, eps,
                                     train_mode ? &tr.mid1 : nullptr);
        feat = detail::block_forward(params_.mid2, std::move(feat), slope, eps,
                                     train_mode ? &tr.mid2 : nullptr);

        for (int l = L - 2; l >= 0; --l) {
            auto& dlayer = params_.dec[static_cast<std::size_t>(l)];
            Tensor5<T> up = transposed_conv3d(feat, dlayer.up.w, dlayer.up.b);
            if (train_mode) tr.dec[static_cast<std::size_t>(l)].up_in = std::move(feat);
            Tensor5<T> cat = concat_channels(tr.skips[static_cast<std::size_t>(l)], up);
            Tensor5<T> d1 = detail::block_forward(dlayer.b1, std::move(cat), slope, eps,
                                                  train_mode ? &tr.dec[static_cast<std::size_t>(l)].b1 : nullptr);
            feat = detail::block_forward(dlayer.b2, std::move(d1), slope, eps,
                                         train_mode ? &tr.dec[static_cast<std::size_t>(l)].b2 : nullptr);
            if (train_mode) tr.dec[static_cast<std::size_t>(l)].out = feat;
            if (train_mode || l == 0) {
                Tensor5<T> logits = conv3d(feat, dlayer.head.w, dlayer.head.b, 1);
                tr.head_probs[static_cast<std::size_t>(l)] = softmax_channels(logits);
                tr.head_logits[static_cast<std::size_t>(l)] = std::move(logits);
            }
        }
        if (!train_mode) tr.skips.clear();
        return tr;
    }

    Tensor5<T> forward_eval_top(const Tensor5<T>& x) const {
        return std::move(forward(x, false).head_probs[0]);
    }

    /// Accumulates dLoss/dparams into `grads` from per-head logit gradients
    /// (finest head first; entries may be fewer than heads only if zero-padded
    /// by the caller). Requires a train-mode trace.
    void backward(const UNetTrace<T>& trace, const std::vector<Tensor5<T>>& logit_grads,
                  UNetParams<T>& grads) const {
        if (!trace.has_cache)
            throw std::runtime_error("unet backward: trace has no cached activations");
        if (std::ssize(logit_grads) != cfg_.levels - 1)
            throw std::runtime_error("unet backward: need one logit gradient per head");
        const T slope = T(cfg_.lrelu_slope);
        const int L = cfg_.levels;

        std::vector<Tensor5<T>> g_skip(static_cast<std::size_t>(L - 1));
        Tensor5<T> g_from_finer;
        for (int l = 0; l < L - 1; ++l) {
            auto& dl = params_.dec[static_cast<std::size_t>(l)];
            auto& gd = grads.dec[static_cast<std::size_t>(l)];
            const auto& cache = trace.dec[static_cast<std::size_t>(l)];
            const auto& seed = logit_grads[static_cast<std::size_t>(l)];

            detail::add_inplace(gd.head.w, conv3d_weight_grad(cache.out, seed, 1, 1));
            detail::add_inplace(gd.head.b, channel_sum(seed));
            Tensor5<T> g_d2 =
                conv3d_adjoint(seed, dl.head.w, cache.out.d, cache.out.h, cache.out.w, 1);
            if (l > 0) detail::add_inplace(g_d2, g_from_finer);

            Tensor5<T> g_d1 = detail::block_backward(dl.b2, gd.b2, cache.b2, g_d2, slope);
            Tensor5<T> g_cat = detail::block_backward(dl.b1, gd.b1, cache.b1, g_d1, slope);

            const auto& skip = trace.skips[static_cast<std::size_t>(l)];
            Tensor5<T> gs(skip.n, skip.c, skip.d, skip.h, skip.w);
            Tensor5<T> g_up(skip.n, skip.c, skip.d, skip.h, skip.w);
            split_channels(g_cat, gs, g_up);
            g_skip[static_cast<std::size_t>(l)] = std::move(gs);

            detail::add_inplace(gd.up.w, conv3d_weight_grad(g_up, cache.up_in, dl.up.w.d, 2));
            detail::add_inplace(gd.up.b, channel_sum(g_up));
            g_from_finer = conv3d(g_up, dl.up.w, {}, 2);
        }

        Tensor5<T> g = detail::block_backward(params_.mid2, grads.mid2, trace.mid2, g_from_finer, slope);
        g = detail::block_backward(params_.mid1, grads.mid1, trace.mid1, g, slope);

        for (int l = L - 2; l >= 0; --l) {
            auto& e = params_.enc[static_cast<std::size_t>(l)];
            auto& ge = grads.enc[static_cast<std::size_t>(l)];
            const auto& skip = trace.skips[static_cast<std::size_t>(l)];
            detail::add_inplace(ge.down.w, conv3d_weight_grad(skip, g, e.down.w.d, 2));
            detail::add_inplace(ge.down.b, channel_sum(g));
            Tensor5<T> g_c2 = conv3d_adjoint(g, e.down.w, skip.d, skip.h, skip.w, 2);
            detail::add_inplace(g_c2, g_skip[static_cast<std::size_t>(l)]);
            Tensor5<T> g_c1 = detail::block_backward(e.b2, ge.b2, trace.enc[static_cast<std::size_t>(l)].b2, g_c2, slope);
            g = detail::block_backward(e.b1, ge.b1, trace.enc[static_cast<std::size_t>(l)].b1, g_c1, slope);
        }
    }

private:
    void build_shapes(UNetParams<T>& p) const {
        const int L = cfg_.levels;
        p.enc.assign(static_cast<std::size_t>(L - 1), {});
        p.dec.assign(static_cast<std::size_t>(L - 1), {});
        auto make_block = [&](ConvBlock<T>& b, int in_c, int out_c, int k) {
            b.conv.w = Tensor5<T>(out_c, in_c, k, k, k);
            b.conv.b.assign(static_cast<std::size_t>(out_c), T(0));
            b.conv.stride = 1;
            b.scale.assign(static_cast<std::size_t>(out_c), T(0));
            b.shift.assign(static_cast<std::size_t>(out_c), T(0));
        };
        for (int l = 0; l < L - 1; ++l) {
            const int c = cfg_.channels_at(l);
            const int c_in = l == 0 ? cfg_.in_channels : cfg_.channels_at(l);
            const int c_next = cfg_.channels_at(l + 1);
            auto& e = p.enc[static_cast<std::size_t>(l)];
            make_block(e.b1, c_in, c, 3);
            make_block(e.b2, c, c, 3);
            e.down.w = Tensor5<T>(c_next, c, 3, 3, 3);
            e.down.b.assign(static_cast<std::size_t>(c_next), T(0));
            e.down.stride = 2;
        }
        const int c_mid = cfg_.channels_at(L - 1);
        make_block(p.mid1, c_mid, c_mid, 3);
        make_block(p.mid2, c_mid, c_mid, 3);
        for (int l = 0; l < L - 1; ++l) {
            const int c = cfg_.channels_at(l);
            const int c_deep = cfg_.channels_at(l + 1);
            auto& d = p.dec[static_cast<std::size_t>(l)];
            d.up.w = Tensor5<T>(c_deep, c, 3, 3, 3);
            d.up.b.assign(static_cast<std::size_t>(c), T(0));
            d.up.stride = 2;
            make_block(d.b1, 2 * c, c, 3);
            make_block(d.b2, c, c, 3);
            d.head.w = Tensor5<T>(cfg_.num_classes, c, 1, 1, 1);
            d.head.b.assign(static_cast<std::size_t>(cfg_.num_classes), T(0));
            d.head.stride = 1;
        }
    }

    UNetConfig cfg_;
    UNetParams<T> params_;
};

/// Pipeline settings that must travel with the weights so `infer` can run
/// from a checkpoint plus the preprocessing stats alone.
struct CheckpointMeta {
    std::array<int, 3> patch{32, 32, 32};            // (z, y, x)
    std::array<double, 3> target_spacing{1, 1, 1};   // mm
    bool per_volume_percentiles = false;             // clip by each input's own percentiles
    double sigma_scale = 0.125;                      // patch-weight sigma / axis length
    double noise_std = 0.01;                         // noise TTA, used when repeats > 0
    int noise_repeats = 0;
};

/// Checkpoint: versioned header with the architecture config and meta, then
/// name -> dims -> raw little-endian float32 blocks per parameter.
void save_checkpoint(UNet<float>& net, const CheckpointMeta& meta,
                     const std::filesystem::path& path);
std::pair<UNet<float>, CheckpointMeta> load_checkpoint(const std::filesystem::path& path);

} // namespace voxseg
