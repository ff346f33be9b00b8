#include "pointseq/tokenizer.hpp"

#include <algorithm>
#include <cmath>

#include "pointseq/errors.hpp"

namespace pointseq {

const char* format_violation_name(FormatViolation v) {
    switch (v) {
        case FormatViolation::invalid_id: return "invalid vocabulary id";
        case FormatViolation::missing_bos: return "sequence must start with BOS";
        case FormatViolation::latent_outside_prefix: return "latent token outside the BOS prefix";
        case FormatViolation::expected_pair_start: return "expected '[' to open a pair";
        case FormatViolation::expected_x_coordinate: return "expected x coordinate token";
        case FormatViolation::expected_separator: return "expected separator between x and y";
        case FormatViolation::expected_y_coordinate: return "expected y coordinate token";
        case FormatViolation::expected_pair_end: return "expected ']' to close the pair";
        case FormatViolation::expected_pair_or_end: return "expected separator or EOS after a pair";
        case FormatViolation::missing_eos: return "sequence ended without EOS";
        case FormatViolation::trailing_tokens: return "tokens after EOS";
    }
    return "unknown violation";
}

std::string FormatError::describe() const {
    return std::string(format_violation_name(kind)) + " at index " + std::to_string(index);
}

int quantize(double x_norm, int k) {
    if (k < 2) throw ConfigError("quantize requires at least 2 bins");
    if (!(x_norm >= 0.0 && x_norm <= 1.0))
        throw ConfigError("quantize input outside [0,1]: " + format_double(x_norm));
    int best = 0;
    double best_dist = std::abs(x_norm - 0.5 / k);
    for (int i = 1; i < k; ++i) {
        double dist = std::abs(x_norm - (i + 0.5) / k);
        if (dist < best_dist) {
            best = i;
            best_dist = dist;
        }
    }
    return best;
}

double dequantize(int i, int k) {
    if (k < 2) throw ConfigError("dequantize requires at least 2 bins");
    if (i < 0 || i >= k) throw ConfigError("bin index out of range: " + std::to_string(i));
    return (i + 0.5) / k;
}

std::vector<Point> raster_sort(std::vector<Point> points, int w, int h, int k) {
    std::vector<std::pair<int, int>> bins(points.size());
    for (size_t i = 0; i < points.size(); ++i)
        bins[i] = {quantize(points[i].y / h, k), quantize(points[i].x / w, k)};
    std::vector<size_t> order(points.size());
    for (size_t i = 0; i < order.size(); ++i) order[i] = i;
    std::stable_sort(order.begin(), order.end(),
                     [&](size_t a, size_t b) { return bins[a] < bins[b]; });
    std::vector<Point> out;
    out.reserve(points.size());
    for (size_t i : order) out.push_back(points[i]);
    return out;
}

TokenSequence encode_points(const std::vector<Point>& points, int w, int h, int k) {
    Vocabulary vocab{k, 0};
    auto sorted = raster_sort(points, w, h, k);
    TokenSequence seq;
    seq.ids.reserve(2 + sorted.size() * 6);
    seq.ids.push_back(vocab.bos());
    for (size_t i = 0; i < sorted.size(); ++i) {
        if (i > 0) seq.ids.push_back(vocab.sep());
        seq.ids.push_back(vocab.lbrack());
        seq.ids.push_back(quantize(sorted[i].x / w, k));
        seq.ids.push_back(vocab.sep());
        seq.ids.push_back(quantize(sorted[i].y / h, k));
        seq.ids.push_back(vocab.rbrack());
    }
    seq.ids.push_back(vocab.eos());
    return seq;
}

ParseResult parse_sequence(const TokenSequence& seq, const Vocabulary& vocab, int w, int h) {
    enum class State {
        bos,
        prefix,        // latent run or first pair or EOS
        x_coord,
        separator,
        y_coord,
        pair_end,
        pair_or_end,   // SEP before next pair, or EOS
        pair_start,    // after an inter-pair SEP: LBRACK only
        done,
    };

    ParsedDetections out;
    State state = State::bos;
    size_t span_begin = 0;
    int tx = 0;

    for (size_t i = 0; i < seq.ids.size(); ++i) {
        int id = seq.ids[i];
        if (!vocab.valid_id(id)) return FormatError{i, FormatViolation::invalid_id};
        if (vocab.is_latent(id) && state != State::prefix)
            return FormatError{i, FormatViolation::latent_outside_prefix};

        switch (state) {
            case State::bos:
                if (id != vocab.bos()) return FormatError{i, FormatViolation::missing_bos};
                state = State::prefix;
                break;
            case State::prefix:
                if (vocab.is_latent(id)) break; // stay in prefix
                [[fallthrough]];
            case State::pair_or_end:
                if (id == vocab.eos()) {
                    state = State::done;
                    break;
                }
                if (state == State::prefix) {
                    if (id != vocab.lbrack()) return FormatError{i, FormatViolation::expected_pair_start};
                } else {
                    if (id != vocab.sep()) return FormatError{i, FormatViolation::expected_pair_or_end};
                    state = State::pair_start;
                    break;
                }
                span_begin = i;
                state = State::x_coord;
                break;
            case State::pair_start:
                if (id != vocab.lbrack()) return FormatError{i, FormatViolation::expected_pair_start};
                span_begin = i;
                state = State::x_coord;
                break;
            case State::x_coord:
                if (!vocab.is_coord(id)) return FormatError{i, FormatViolation::expected_x_coordinate};
                tx = id;
                state = State::separator;
                break;
            case State::separator:
                if (id != vocab.sep()) return FormatError{i, FormatViolation::expected_separator};
                state = State::y_coord;
                break;
            case State::y_coord:
                if (!vocab.is_coord(id)) return FormatError{i, FormatViolation::expected_y_coordinate};
                out.points.push_back({dequantize(tx, vocab.k) * w, dequantize(id, vocab.k) * h});
                state = State::pair_end;
                break;
            case State::pair_end:
                if (id != vocab.rbrack()) return FormatError{i, FormatViolation::expected_pair_end};
                out.token_spans.push_back({span_begin, i + 1});
                state = State::pair_or_end;
                break;
            case State::done:
                return FormatError{i, FormatViolation::trailing_tokens};
        }
    }
    if (state != State::done) return FormatError{seq.ids.size(), FormatViolation::missing_eos};
    return out;
}

} // namespace pointseq
