#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "pointseq/geometry.hpp"

namespace pointseq {

struct SceneConfig {
    int w = 64;
    int h = 64;
    int count_lo = 1;
    int count_hi = 8;
    double radius_lo = 3.0;
    double radius_hi = 5.0;
    double min_sep = 8.0;
    double noise = 0.05;
};

struct Instance {
    Point centroid;
    double radius = 0.0;
    Mask mask;
    bool operator==(const Instance&) const = default;
};

struct Scene {
    int w = 0;
    int h = 0;
    uint64_t seed = 0;
    std::vector<double> intensity; // row-major, values on the 1/65535 lattice
    std::vector<Instance> instances;

    double at(int x, int y) const { return intensity[static_cast<size_t>(y) * w + x]; }
    bool operator==(const Scene&) const = default;
};

// Pure function of (config, seed). Instances are discs rendered with a radial
// falloff profile; pairwise centroid distance is kept >= max(min_sep,
// r_i + r_j + 1) so instance masks never touch. Throws PlacementError when
// rejection sampling exceeds its attempt cap.
Scene generate_scene(const SceneConfig& config, uint64_t seed);

// Pixel-wise union of all instance masks.
Mask foreground_mask(const Scene& scene);

void save_scene(const Scene& scene, const std::string& path);
Scene load_scene(const std::string& path);

// Dataset index: scene files plus their train/val split tags.
struct ManifestEntry {
    std::string file;
    std::string split;
    bool operator==(const ManifestEntry&) const = default;
};

struct Manifest {
    uint64_t seed = 0;
    std::vector<ManifestEntry> entries;

    std::vector<std::string> files_for(const std::string& split) const;
    bool operator==(const Manifest&) const = default;
};

void save_manifest(const Manifest& m, const std::string& path);
Manifest load_manifest(const std::string& path);

} // namespace pointseq
