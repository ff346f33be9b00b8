#include "pointseq/scene.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <sstream>

#include <nlohmann/json.hpp>

#include "pointseq/errors.hpp"
#include "pointseq/rng.hpp"
#include "pointseq/util.hpp"

namespace pointseq {

namespace {

constexpr double kAmplitude = 0.9;     // peak intensity of a rendered disc
constexpr double kFalloffEdge = 1.1;   // rendered footprint, in units of radius
constexpr int kPlacementAttempts = 10000;

// Radial profile: parabolic cap with value 5/9 at u = 1, so the rendered
// edge sits exactly at intensity 0.5 and every interior mask pixel stays at
// or above it regardless of noise. Outside, a quadratic ramp to zero at
// kFalloffEdge; the short tail cannot push past 0.5 even where the tails of
// two minimally separated discs overlap and the noise is maximal.
double radial_profile(double u) {
    if (u <= 1.0) return 1.0 - (4.0 / 9.0) * u * u;
    if (u >= kFalloffEdge) return 0.0;
    double s = 1.0 - (u - 1.0) / (kFalloffEdge - 1.0);
    return (5.0 / 9.0) * s * s;
}

double quantize_intensity(double v) {
    v = std::clamp(v, 0.0, 1.0);
    return std::round(v * 65535.0) / 65535.0;
}

Mask disc_mask(int w, int h, const Point& c, double r) {
    Mask m(w, h);
    int x0 = std::max(0, static_cast<int>(std::floor(c.x - r)));
    int x1 = std::min(w - 1, static_cast<int>(std::ceil(c.x + r)));
    int y0 = std::max(0, static_cast<int>(std::floor(c.y - r)));
    int y1 = std::min(h - 1, static_cast<int>(std::ceil(c.y + r)));
    double r2 = r * r;
    for (int y = y0; y <= y1; ++y)
        for (int x = x0; x <= x1; ++x) {
            double dx = x - c.x, dy = y - c.y;
            if (dx * dx + dy * dy <= r2) m.set(x, y);
        }
    return m;
}

void validate(const SceneConfig& c) {
    if (c.w < 16 || c.h < 16) throw ConfigError("scene dimensions must be at least 16");
    if (c.min_sep <= 0.0) throw ConfigError("min_sep must be positive");
    if (c.radius_lo < 1.0 || c.radius_hi < c.radius_lo)
        throw ConfigError("radius range must satisfy 1 <= lo <= hi");
    if (c.count_lo < 0 || c.count_hi < c.count_lo)
        throw ConfigError("count range must satisfy 0 <= lo <= hi");
    if (c.noise < 0.0 || c.noise > 1.0) throw ConfigError("noise level must be in [0,1]");
    if (c.radius_hi * 2.0 >= std::min(c.w, c.h) - 1)
        throw ConfigError("radius too large for scene dimensions");
}

} // namespace

Scene generate_scene(const SceneConfig& config, uint64_t seed) {
    validate(config);
    Rng rng(mix_seed(seed, 0x5ce7e5ull));

    Scene s;
    s.w = config.w;
    s.h = config.h;
    s.seed = seed;

    int count = config.count_lo +
                static_cast<int>(rng.uniform_int(static_cast<uint64_t>(config.count_hi - config.count_lo + 1)));

    int attempts = 0;
    while (static_cast<int>(s.instances.size()) < count) {
        double r = rng.uniform(config.radius_lo, config.radius_hi);
        Point c{rng.uniform(r, config.w - 1 - r), rng.uniform(r, config.h - 1 - r)};
        bool ok = true;
        for (const auto& inst : s.instances) {
            double need = std::max(config.min_sep, inst.radius + r + 1.0);
            if (distance(c, inst.centroid) < need) {
                ok = false;
                break;
            }
        }
        if (!ok) {
            if (++attempts > kPlacementAttempts)
                throw PlacementError("could not place " + std::to_string(count) + " instances with min_sep " +
                                     format_double(config.min_sep) + " after " +
                                     std::to_string(kPlacementAttempts) + " attempts");
            continue;
        }
        s.instances.push_back(Instance{c, r, disc_mask(s.w, s.h, c, r)});
    }

    s.intensity.assign(static_cast<size_t>(s.w) * s.h, 0.0);
    for (const auto& inst : s.instances) {
        double reach = inst.radius * kFalloffEdge;
        int x0 = std::max(0, static_cast<int>(std::floor(inst.centroid.x - reach)));
        int x1 = std::min(s.w - 1, static_cast<int>(std::ceil(inst.centroid.x + reach)));
        int y0 = std::max(0, static_cast<int>(std::floor(inst.centroid.y - reach)));
        int y1 = std::min(s.h - 1, static_cast<int>(std::ceil(inst.centroid.y + reach)));
        for (int y = y0; y <= y1; ++y)
            for (int x = x0; x <= x1; ++x) {
                double d = std::hypot(x - inst.centroid.x, y - inst.centroid.y);
                s.intensity[static_cast<size_t>(y) * s.w + x] +=
                    kAmplitude * radial_profile(d / inst.radius);
            }
    }
    for (auto& v : s.intensity) v = quantize_intensity(v + rng.uniform() * config.noise);
    return s;
}

Mask foreground_mask(const Scene& scene) {
    Mask m(scene.w, scene.h);
    for (const auto& inst : scene.instances)
        for (size_t i = 0; i < m.bits.size(); ++i) m.bits[i] |= inst.mask.bits[i];
    return m;
}

// ---------------------------------------------------------------- file io
//
// Versioned text format, LF line endings, trailing checksum line covering
// every preceding byte:
//
//   pointseq scene v1
//   seed <u64>
//   size <w> <h>
//   instances <n>
//   instance <cx> <cy> <radius>      (n times, followed by its mask line)
//   mask <run lengths>               (alternating 0/1 runs, starting with 0s)
//   intensity
//   <h base64 rows of little-endian uint16 samples>
//   checksum <16 hex digits>

namespace {

const std::string kMagic = "pointseq scene v1";

std::vector<int> rle_encode(const Mask& m) {
    std::vector<int> runs;
    uint8_t cur = 0;
    int len = 0;
    for (uint8_t b : m.bits) {
        if (b == cur) {
            ++len;
        } else {
            runs.push_back(len);
            cur = b;
            len = 1;
        }
    }
    runs.push_back(len);
    return runs;
}

Mask rle_decode(const std::vector<long long>& runs, int w, int h) {
    Mask m(w, h);
    size_t pos = 0;
    uint8_t cur = 0;
    for (long long run : runs) {
        if (run < 0 || pos + static_cast<size_t>(run) > m.bits.size())
            throw IoError("mask run lengths exceed raster size");
        for (long long i = 0; i < run; ++i) m.bits[pos++] = cur;
        cur ^= 1;
    }
    if (pos != m.bits.size()) throw IoError("mask run lengths do not cover raster");
    return m;
}

std::vector<std::string_view> split_ws(std::string_view s) {
    std::vector<std::string_view> out;
    size_t i = 0;
    while (i < s.size()) {
        while (i < s.size() && s[i] == ' ') ++i;
        size_t j = i;
        while (j < s.size() && s[j] != ' ') ++j;
        if (j > i) out.push_back(s.substr(i, j - i));
        i = j;
    }
    return out;
}

// Line cursor over a fully loaded file; EOF is a truncation error.
struct LineReader {
    std::string_view text;
    size_t pos = 0;

    std::string_view next() {
        if (pos >= text.size()) throw FileTruncatedError("unexpected end of scene file");
        size_t nl = text.find('\n', pos);
        if (nl == std::string_view::npos) throw FileTruncatedError("scene file missing final newline");
        std::string_view line = text.substr(pos, nl - pos);
        pos = nl + 1;
        return line;
    }
};

} // namespace

void save_scene(const Scene& scene, const std::string& path) {
    std::string buf;
    buf += kMagic;
    buf += "\nseed " + std::to_string(scene.seed);
    buf += "\nsize " + std::to_string(scene.w) + " " + std::to_string(scene.h);
    buf += "\ninstances " + std::to_string(scene.instances.size());
    for (const auto& inst : scene.instances) {
        buf += "\ninstance " + format_double(inst.centroid.x) + " " + format_double(inst.centroid.y) +
               " " + format_double(inst.radius);
        buf += "\nmask";
        for (int run : rle_encode(inst.mask)) buf += " " + std::to_string(run);
    }
    buf += "\nintensity";
    std::vector<unsigned char> row(static_cast<size_t>(scene.w) * 2);
    for (int y = 0; y < scene.h; ++y) {
        for (int x = 0; x < scene.w; ++x) {
            auto v = static_cast<uint16_t>(std::lround(scene.at(x, y) * 65535.0));
            row[static_cast<size_t>(x) * 2] = static_cast<unsigned char>(v & 0xff);
            row[static_cast<size_t>(x) * 2 + 1] = static_cast<unsigned char>(v >> 8);
        }
        buf += "\n" + base64_encode(row.data(), row.size());
    }
    buf += "\n";
    buf += "checksum " + hex64(fnv1a64(buf)) + "\n";

    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoError("cannot open for writing: " + path);
    out.write(buf.data(), static_cast<std::streamsize>(buf.size()));
    if (!out) throw IoError("write failed: " + path);
}

Scene load_scene(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open for reading: " + path);
    std::stringstream ss;
    ss << in.rdbuf();
    std::string text = ss.str();

    LineReader r{text};
    std::string_view magic = r.next();
    if (magic != kMagic) {
        if (magic.starts_with("pointseq scene "))
            throw FileVersionError("unsupported scene file version: '" + std::string(magic) + "'");
        throw IoError("not a scene file: " + path);
    }

    size_t checksum_at = text.rfind("checksum ");
    if (checksum_at == std::string::npos || checksum_at + 9 + 16 + 1 > text.size())
        throw FileTruncatedError("scene file missing checksum line");
    uint64_t stored = 0;
    for (size_t i = 0; i < 16; ++i) {
        char c = text[checksum_at + 9 + i];
        int d = (c >= '0' && c <= '9') ? c - '0' : (c >= 'a' && c <= 'f') ? c - 'a' + 10 : -1;
        if (d < 0) throw FileTruncatedError("scene file checksum malformed");
        stored = (stored << 4) | static_cast<uint64_t>(d);
    }
    if (fnv1a64(std::string_view(text).substr(0, checksum_at)) != stored)
        throw FileChecksumError("scene file checksum mismatch: " + path);

    Scene s;
    auto fields = split_ws(r.next());
    if (fields.size() != 2 || fields[0] != "seed") throw IoError("expected seed line");
    s.seed = parse_uint(fields[1]);
    fields = split_ws(r.next());
    if (fields.size() != 3 || fields[0] != "size") throw IoError("expected size line");
    s.w = static_cast<int>(parse_int(fields[1]));
    s.h = static_cast<int>(parse_int(fields[2]));
    if (s.w <= 0 || s.h <= 0) throw IoError("non-positive scene dimensions");
    fields = split_ws(r.next());
    if (fields.size() != 2 || fields[0] != "instances") throw IoError("expected instances line");
    auto n = parse_int(fields[1]);
    for (long long i = 0; i < n; ++i) {
        fields = split_ws(r.next());
        if (fields.size() != 4 || fields[0] != "instance") throw IoError("expected instance line");
        Instance inst;
        inst.centroid = {parse_double(fields[1]), parse_double(fields[2])};
        inst.radius = parse_double(fields[3]);
        fields = split_ws(r.next());
        if (fields.empty() || fields[0] != "mask") throw IoError("expected mask line");
        std::vector<long long> runs;
        for (size_t j = 1; j < fields.size(); ++j) runs.push_back(parse_int(fields[j]));
        inst.mask = rle_decode(runs, s.w, s.h);
        s.instances.push_back(std::move(inst));
    }
    if (r.next() != "intensity") throw IoError("expected intensity marker");
    s.intensity.assign(static_cast<size_t>(s.w) * s.h, 0.0);
    for (int y = 0; y < s.h; ++y) {
        auto bytes = base64_decode(r.next());
        if (bytes.size() != static_cast<size_t>(s.w) * 2)
            throw IoError("intensity row has wrong length");
        for (int x = 0; x < s.w; ++x) {
            uint16_t v = static_cast<uint16_t>(bytes[static_cast<size_t>(x) * 2]) |
                         static_cast<uint16_t>(bytes[static_cast<size_t>(x) * 2 + 1]) << 8;
            s.intensity[static_cast<size_t>(y) * s.w + x] = v / 65535.0;
        }
    }
    return s;
}

// ---------------------------------------------------------------- manifest

std::vector<std::string> Manifest::files_for(const std::string& split) const {
    std::vector<std::string> out;
    for (const auto& e : entries)
        if (e.split == split) out.push_back(e.file);
    return out;
}

void save_manifest(const Manifest& m, const std::string& path) {
    nlohmann::json j;
    j["format"] = "pointseq-manifest";
    j["version"] = 1;
    j["seed"] = m.seed;
    auto& arr = j["scenes"] = nlohmann::json::array();
    for (const auto& e : m.entries) arr.push_back({{"file", e.file}, {"split", e.split}});
    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoError("cannot open for writing: " + path);
    out << j.dump(2) << "\n";
}

Manifest load_manifest(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open for reading: " + path);
    nlohmann::json j;
    try {
        in >> j;
    } catch (const nlohmann::json::exception& e) {
        throw IoError("malformed manifest " + path + ": " + e.what());
    }
    if (j.value("format", "") != "pointseq-manifest") throw IoError("not a manifest file: " + path);
    if (j.value("version", 0) != 1) throw FileVersionError("unsupported manifest version in " + path);
    Manifest m;
    m.seed = j.value("seed", 0ull);
    for (const auto& e : j.at("scenes"))
        m.entries.push_back({e.at("file").get<std::string>(), e.at("split").get<std::string>()});
    return m;
}

} // namespace pointseq
