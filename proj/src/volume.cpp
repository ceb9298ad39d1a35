#include "voxseg/volume.hpp"

#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <stdexcept>

#include "json.hpp"

static_assert(std::endian::native == std::endian::little,
              "payloads are raw little-endian; big-endian hosts are not supported");

namespace voxseg {

using nlohmann::json;
namespace fs = std::filesystem;

namespace {

[[noreturn]] void fail(const std::string& msg) { throw std::runtime_error(msg); }

void check_geometry(const Geometry& g, const std::string& what) {
    for (int a = 0; a < 3; ++a) {
        if (g.shape[a] < 1)
            fail(what + ": shape component " + std::to_string(a) + " is " +
                 std::to_string(g.shape[a]) + ", must be >= 1");
        if (!(g.spacing[a] > 0.0) || !std::isfinite(g.spacing[a]))
            fail(what + ": spacing component " + std::to_string(a) + " must be > 0");
        if (!std::isfinite(g.origin[a]))
            fail(what + ": origin component " + std::to_string(a) + " is not finite");
    }
}

fs::path header_path(const fs::path& path) {
    std::string s = path.string();
    const std::string suffix = ".mvol.json";
    if (s.size() >= suffix.size() && s.compare(s.size() - suffix.size(), suffix.size(), suffix) == 0)
        return path;
    return fs::path(s + suffix);
}

std::vector<std::uint8_t> read_payload(const fs::path& file, std::size_t expected_bytes) {
    std::ifstream in(file, std::ios::binary);
    if (!in) fail("cannot open payload " + file.string());
    in.seekg(0, std::ios::end);
    const auto bytes = static_cast<std::size_t>(in.tellg());
    if (bytes != expected_bytes)
        fail("payload " + file.string() + " has " + std::to_string(bytes) +
             " bytes, header implies " + std::to_string(expected_bytes));
    in.seekg(0);
    std::vector<std::uint8_t> buf(bytes);
    in.read(reinterpret_cast<char*>(buf.data()), static_cast<std::streamsize>(bytes));
    if (!in) fail("short read on payload " + file.string());
    return buf;
}

void write_payload(const fs::path& file, const void* ptr, std::size_t bytes) {
    std::ofstream out(file, std::ios::binary | std::ios::trunc);
    if (!out) fail("cannot open payload for writing: " + file.string());
    out.write(reinterpret_cast<const char*>(ptr), static_cast<std::streamsize>(bytes));
    if (!out) fail("short write on payload " + file.string());
}

json geometry_header(const Geometry& g, const std::string& kind, const std::string& payload) {
    json j;
    j["shape"] = g.shape;
    j["spacing_mm"] = g.spacing;
    j["origin_mm"] = g.origin;
    j["kind"] = kind;
    j["payload"] = payload;
    return j;
}

void write_header(const fs::path& file, const json& j) {
    std::ofstream out(file, std::ios::trunc);
    if (!out) fail("cannot open header for writing: " + file.string());
    out << j.dump(2) << '\n';
    if (!out) fail("short write on header " + file.string());
}

std::string payload_name(const fs::path& header) {
    std::string stem = header.filename().string();
    const std::string suffix = ".json";
    stem.resize(stem.size() - suffix.size());
    return stem + ".raw"; // e.g. case_000_img.mvol.raw
}

Geometry parse_geometry(const json& j, const fs::path& file) {
    Geometry g;
    try {
        const auto shape = j.at("shape");
        const auto spacing = j.at("spacing_mm");
        const auto origin = j.at("origin_mm");
        if (!shape.is_array() || shape.size() != 3 || !spacing.is_array() ||
            spacing.size() != 3 || !origin.is_array() || origin.size() != 3)
            fail("header " + file.string() + ": shape/spacing_mm/origin_mm must be arrays of 3");
        for (int a = 0; a < 3; ++a) {
            g.shape[a] = shape[a].get<int>();
            g.spacing[a] = spacing[a].get<double>();
            g.origin[a] = origin[a].get<double>();
        }
    } catch (const json::exception& e) {
        fail("header " + file.string() + ": " + e.what());
    }
    check_geometry(g, "header " + file.string());
    return g;
}

} // namespace

void validate(const Volume& v) {
    check_geometry(v.geo, "Volume");
    if (std::ssize(v.data) != v.geo.voxel_count())
        fail("Volume: data length " + std::to_string(v.data.size()) + " != shape product " +
             std::to_string(v.geo.voxel_count()));
    for (const float x : v.data)
        if (!std::isfinite(x)) fail("Volume: non-finite voxel value");
}

void validate(const LabelMask& m) {
    check_geometry(m.geo, "LabelMask");
    if (std::ssize(m.data) != m.geo.voxel_count())
        fail("LabelMask: data length " + std::to_string(m.data.size()) + " != shape product " +
             std::to_string(m.geo.voxel_count()));
    for (const std::uint8_t v : m.data)
        if (v > 2) fail("LabelMask: label value " + std::to_string(int(v)) + " outside {0,1,2}");
}

void validate(const ProbMap& p) {
    check_geometry(p.geo, "ProbMap");
    if (p.channels != kNumClasses)
        fail("ProbMap: channel count " + std::to_string(p.channels) + " != 3");
    const std::int64_t n = p.geo.voxel_count();
    if (std::ssize(p.data) != n * p.channels)
        fail("ProbMap: data length " + std::to_string(p.data.size()) + " != channels * voxels");
    for (const float x : p.data)
        if (!(x >= 0.0f && x <= 1.0f)) fail("ProbMap: probability outside [0,1]");
    for (std::int64_t i = 0; i < n; ++i) {
        double s = 0.0;
        for (int c = 0; c < p.channels; ++c) s += p.data[c * n + i];
        if (std::abs(s - 1.0) > 1e-5)
            fail("ProbMap: channel sum " + std::to_string(s) + " at voxel " + std::to_string(i));
    }
}

AnyVolume read_volume(const fs::path& path) {
    const fs::path hpath = header_path(path);
    std::ifstream in(hpath);
    if (!in) fail("cannot open header " + hpath.string());
    json j;
    try {
        in >> j;
    } catch (const json::exception& e) {
        fail("header " + hpath.string() + " is not valid JSON: " + e.what());
    }
    const Geometry geo = parse_geometry(j, hpath);
    const std::string kind = j.value("kind", "");
    const fs::path payload = hpath.parent_path() / j.value("payload", payload_name(hpath));
    const std::size_t n = static_cast<std::size_t>(geo.voxel_count());

    if (kind == "intensity") {
        Volume v;
        v.geo = geo;
        const auto buf = read_payload(payload, n * sizeof(float));
        v.data.resize(n);
        std::memcpy(v.data.data(), buf.data(), buf.size());
        validate(v);
        return v;
    }
    if (kind == "label") {
        LabelMask m;
        m.geo = geo;
        const auto buf = read_payload(payload, n);
        m.data.assign(buf.begin(), buf.end());
        validate(m);
        return m;
    }
    if (kind == "prob") {
        ProbMap p;
        p.geo = geo;
        p.channels = j.value("channels", 0);
        if (p.channels != kNumClasses)
            fail("header " + hpath.string() + ": channels must be 3 for kind=prob");
        const auto buf = read_payload(payload, n * p.channels * sizeof(float));
        p.data.resize(n * p.channels);
        std::memcpy(p.data.data(), buf.data(), buf.size());
        validate(p);
        return p;
    }
    fail("header " + hpath.string() + ": unknown kind \"" + kind + "\"");
}

Volume read_intensity(const fs::path& path) {
    AnyVolume any = read_volume(path);
    if (auto* v = std::get_if<Volume>(&any)) return std::move(*v);
    fail(path.string() + " is not an intensity volume");
}

LabelMask read_labels(const fs::path& path) {
    AnyVolume any = read_volume(path);
    if (auto* m = std::get_if<LabelMask>(&any)) return std::move(*m);
    fail(path.string() + " is not a label mask");
}

ProbMap read_probmap(const fs::path& path) {
    AnyVolume any = read_volume(path);
    if (auto* p = std::get_if<ProbMap>(&any)) return std::move(*p);
    fail(path.string() + " is not a probability map");
}

void write_volume(const Volume& v, const fs::path& path) {
    validate(v);
    const fs::path hpath = header_path(path);
    const std::string payload = payload_name(hpath);
    write_header(hpath, geometry_header(v.geo, "intensity", payload));
    write_payload(hpath.parent_path() / payload, v.data.data(), v.data.size() * sizeof(float));
}

void write_volume(const LabelMask& m, const fs::path& path) {
    validate(m);
    const fs::path hpath = header_path(path);
    const std::string payload = payload_name(hpath);
    write_header(hpath, geometry_header(m.geo, "label", payload));
    write_payload(hpath.parent_path() / payload, m.data.data(), m.data.size());
}

void write_volume(const ProbMap& p, const fs::path& path) {
    validate(p);
    const fs::path hpath = header_path(path);
    const std::string payload = payload_name(hpath);
    json j = geometry_header(p.geo, "prob", payload);
    j["channels"] = p.channels;
    write_header(hpath, j);
    write_payload(hpath.parent_path() / payload, p.data.data(), p.data.size() * sizeof(float));
}

std::array<double, 3> voxel_to_world(const Geometry& geo, const std::array<int, 3>& index) {
    if (!geo.contains(index[0], index[1], index[2]))
        fail("voxel_to_world: index (" + std::to_string(index[0]) + "," +
             std::to_string(index[1]) + "," + std::to_string(index[2]) + ") outside shape");
    return {geo.origin[0] + index[0] * geo.spacing[0],
            geo.origin[1] + index[1] * geo.spacing[1],
            geo.origin[2] + index[2] * geo.spacing[2]};
}

} // namespace voxseg
