#pragma once

#include <cstdint>
#include <string>

#include "pointseq/util.hpp"

namespace pointseq {

// Fixed id layout, in assignment order: coordinate bins 0..K-1 (shared by the
// x and y axes), then LBRACK, SEP, RBRACK, BOS, EOS, then L latent ids.
// Checkpoints embed layout_hash() so this layout is load-bearing.
struct Vocabulary {
    int k = 64;
    int l = 4;

    int lbrack() const { return k; }
    int sep() const { return k + 1; }
    int rbrack() const { return k + 2; }
    int bos() const { return k + 3; }
    int eos() const { return k + 4; }
    int latent(int i) const { return k + 5 + i; }
    int size() const { return k + 5 + l; }

    bool valid_id(int id) const { return id >= 0 && id < size(); }
    bool is_coord(int id) const { return id >= 0 && id < k; }
    bool is_latent(int id) const { return id >= k + 5 && id < size(); }
    bool is_structural(int id) const {
        return id == lbrack() || id == sep() || id == rbrack() || id == bos() || id == eos();
    }

    uint64_t layout_hash() const {
        std::string desc = "coords[0," + std::to_string(k) + ") lbrack sep rbrack bos eos latents[" +
                           std::to_string(k + 5) + "," + std::to_string(size()) + ")";
        return fnv1a64(desc);
    }

    bool operator==(const Vocabulary&) const = default;
};

} // namespace pointseq
