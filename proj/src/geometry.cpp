#include "pointseq/geometry.hpp"

#include "pointseq/errors.hpp"

namespace pointseq {

static void require_same_shape(const Mask& a, const Mask& b) {
    if (a.w != b.w || a.h != b.h) throw ConfigError("mask shapes differ");
}

size_t mask_intersection(const Mask& a, const Mask& b) {
    require_same_shape(a, b);
    size_t n = 0;
    for (size_t i = 0; i < a.bits.size(); ++i) n += a.bits[i] & b.bits[i];
    return n;
}

size_t mask_union(const Mask& a, const Mask& b) {
    require_same_shape(a, b);
    size_t n = 0;
    for (size_t i = 0; i < a.bits.size(); ++i) n += a.bits[i] | b.bits[i];
    return n;
}

double mask_iou(const Mask& a, const Mask& b) {
    size_t u = mask_union(a, b);
    if (u == 0) return 0.0;
    return static_cast<double>(mask_intersection(a, b)) / static_cast<double>(u);
}

} // namespace pointseq
