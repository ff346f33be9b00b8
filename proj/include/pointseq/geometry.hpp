#pragma once

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <vector>

namespace pointseq {

struct Point {
    double x = 0.0;
    double y = 0.0;
    bool operator==(const Point&) const = default;
};

inline double distance(const Point& a, const Point& b) {
    return std::hypot(a.x - b.x, a.y - b.y);
}

// Binary raster, row-major, one byte per pixel.
struct Mask {
    int w = 0;
    int h = 0;
    std::vector<uint8_t> bits;

    Mask() = default;
    Mask(int w_, int h_) : w(w_), h(h_), bits(static_cast<size_t>(w_) * static_cast<size_t>(h_), 0) {}

    bool get(int x, int y) const { return bits[static_cast<size_t>(y) * w + x] != 0; }
    void set(int x, int y, bool v = true) { bits[static_cast<size_t>(y) * w + x] = v ? 1 : 0; }

    size_t count() const {
        size_t n = 0;
        for (uint8_t b : bits) n += b;
        return n;
    }
    bool any() const {
        for (uint8_t b : bits)
            if (b) return true;
        return false;
    }
    bool operator==(const Mask&) const = default;
};

size_t mask_intersection(const Mask& a, const Mask& b);
size_t mask_union(const Mask& a, const Mask& b);

// Intersection over union; both empty -> 0.
double mask_iou(const Mask& a, const Mask& b);

} // namespace pointseq
