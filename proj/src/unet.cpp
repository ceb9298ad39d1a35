#include "voxseg/unet.hpp"

#include <cstring>
#include <fstream>

#include "json.hpp"

namespace voxseg {

namespace {

constexpr char kMagic[8] = {'V', 'X', 'S', 'G', 'C', 'K', 'P', 'T'};
constexpr std::uint32_t kVersion = 1;

void write_u32(std::ofstream& out, std::uint32_t v) {
    out.write(reinterpret_cast<const char*>(&v), sizeof(v));
}

std::uint32_t read_u32(std::ifstream& in) {
    std::uint32_t v = 0;
    in.read(reinterpret_cast<char*>(&v), sizeof(v));
    return v;
}

} // namespace

void save_checkpoint(UNet<float>& net, const CheckpointMeta& meta,
                     const std::filesystem::path& path) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw std::runtime_error("cannot open checkpoint for writing: " + path.string());
    out.write(kMagic, sizeof(kMagic));
    write_u32(out, kVersion);

    const UNetConfig& c = net.config();
    nlohmann::json j;
    j["levels"] = c.levels;
    j["base_channels"] = c.base_channels;
    j["max_channels"] = c.max_channels;
    j["in_channels"] = c.in_channels;
    j["num_classes"] = c.num_classes;
    j["lrelu_slope"] = c.lrelu_slope;
    j["norm_eps"] = c.norm_eps;
    j["min_bottleneck_extent"] = c.min_bottleneck_extent;
    j["patch"] = meta.patch;
    j["target_spacing"] = meta.target_spacing;
    j["per_volume_percentiles"] = meta.per_volume_percentiles;
    j["sigma_scale"] = meta.sigma_scale;
    j["noise_std"] = meta.noise_std;
    j["noise_repeats"] = meta.noise_repeats;
    const std::string cfg_str = j.dump();
    write_u32(out, std::uint32_t(cfg_str.size()));
    out.write(cfg_str.data(), std::streamsize(cfg_str.size()));

    const auto views = net.views();
    write_u32(out, std::uint32_t(views.size()));
    for (const auto& v : views) {
        write_u32(out, std::uint32_t(v.name.size()));
        out.write(v.name.data(), std::streamsize(v.name.size()));
        write_u32(out, std::uint32_t(v.dims.size()));
        for (int d : v.dims) write_u32(out, std::uint32_t(d));
        out.write(reinterpret_cast<const char*>(v.data),
                  std::streamsize(v.size * std::int64_t(sizeof(float))));
    }
    if (!out) throw std::runtime_error("short write on checkpoint " + path.string());
}

std::pair<UNet<float>, CheckpointMeta> load_checkpoint(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("cannot open checkpoint " + path.string());
    char magic[8];
    in.read(magic, sizeof(magic));
    if (!in || std::memcmp(magic, kMagic, sizeof(kMagic)) != 0)
        throw std::runtime_error("checkpoint " + path.string() + ": bad magic");
    const std::uint32_t version = read_u32(in);
    if (version != kVersion)
        throw std::runtime_error("checkpoint " + path.string() + ": unsupported version " +
                                 std::to_string(version));

    const std::uint32_t cfg_len = read_u32(in);
    std::string cfg_str(cfg_len, '\0');
    in.read(cfg_str.data(), cfg_len);
    nlohmann::json j;
    try {
        j = nlohmann::json::parse(cfg_str);
    } catch (const nlohmann::json::exception& e) {
        throw std::runtime_error("checkpoint " + path.string() + ": bad config block: " + e.what());
    }
    UNetConfig cfg;
    cfg.levels = j.at("levels").get<int>();
    cfg.base_channels = j.at("base_channels").get<int>();
    cfg.max_channels = j.at("max_channels").get<int>();
    cfg.in_channels = j.at("in_channels").get<int>();
    cfg.num_classes = j.at("num_classes").get<int>();
    cfg.lrelu_slope = j.at("lrelu_slope").get<double>();
    cfg.norm_eps = j.at("norm_eps").get<double>();
    cfg.min_bottleneck_extent = j.value("min_bottleneck_extent", 1);
    CheckpointMeta meta;
    if (j.contains("patch")) meta.patch = j.at("patch").get<std::array<int, 3>>();
    if (j.contains("target_spacing"))
        meta.target_spacing = j.at("target_spacing").get<std::array<double, 3>>();
    meta.per_volume_percentiles = j.value("per_volume_percentiles", false);
    meta.sigma_scale = j.value("sigma_scale", 0.125);
    meta.noise_std = j.value("noise_std", 0.01);
    meta.noise_repeats = j.value("noise_repeats", 0);

    UNet<float> net(cfg, 0);
    const std::uint32_t count = read_u32(in);
    auto views = net.views();
    if (count != views.size())
        throw std::runtime_error("checkpoint " + path.string() + ": has " + std::to_string(count) +
                                 " parameter blocks, architecture expects " +
                                 std::to_string(views.size()));
    for (auto& v : views) {
        const std::uint32_t name_len = read_u32(in);
        std::string name(name_len, '\0');
        in.read(name.data(), name_len);
        if (name != v.name)
            throw std::runtime_error("checkpoint " + path.string() + ": block \"" + name +
                                     "\" where \"" + v.name + "\" expected");
        const std::uint32_t ndims = read_u32(in);
        std::vector<int> dims(ndims);
        for (auto& d : dims) d = int(read_u32(in));
        if (dims != v.dims)
            throw std::runtime_error("checkpoint " + path.string() + ": shape mismatch for " +
                                     v.name);
        in.read(reinterpret_cast<char*>(v.data),
                std::streamsize(v.size * std::int64_t(sizeof(float))));
        if (!in) throw std::runtime_error("checkpoint " + path.string() + ": truncated");
    }
    return {std::move(net), meta};
}

} // namespace voxseg
