#pragma once

#include <cstddef>
#include <string>
#include <variant>
#include <vector>

#include "pointseq/geometry.hpp"
#include "pointseq/vocab.hpp"

namespace pointseq {

struct TokenSequence {
    std::vector<int> ids;
    // Empty, or one entry per id (log-probability under the producing policy).
    std::vector<double> logprobs;
    bool operator==(const TokenSequence&) const = default;
};

enum class FormatViolation {
    invalid_id,
    missing_bos,
    latent_outside_prefix,
    expected_pair_start,   // LBRACK or EOS legal here
    expected_x_coordinate,
    expected_separator,
    expected_y_coordinate,
    expected_pair_end,
    expected_pair_or_end,  // after a closed pair: SEP or EOS legal here
    missing_eos,
    trailing_tokens,
};

const char* format_violation_name(FormatViolation v);

struct FormatError {
    size_t index = 0;
    FormatViolation kind = FormatViolation::missing_bos;
    std::string describe() const;
    bool operator==(const FormatError&) const = default;
};

// Half-open token index range [begin, end) of one point's LBRACK..RBRACK run.
struct TokenSpan {
    size_t begin = 0;
    size_t end = 0;
    bool operator==(const TokenSpan&) const = default;
};

struct ParsedDetections {
    std::vector<Point> points;
    std::vector<TokenSpan> token_spans;
    bool operator==(const ParsedDetections&) const = default;
};

using ParseResult = std::variant<ParsedDetections, FormatError>;

// Nearest bin center (i+0.5)/k; exact ties resolve to the lower index.
int quantize(double x_norm, int k);

double dequantize(int i, int k);

// Stable sort by quantized (y bin, x bin).
std::vector<Point> raster_sort(std::vector<Point> points, int w, int h, int k);

// Raster-sorts, then emits BOS ( LBRACK x SEP y RBRACK (SEP ...)* )? EOS.
// Output length is 2 + 5n + max(n-1, 0).
TokenSequence encode_points(const std::vector<Point>& points, int w, int h, int k);

// Accepts exactly the encode_points grammar, with an optional contiguous run
// of latent ids immediately after BOS (skipped). Accepted pairs dequantize to
// bin-center pixel coordinates.
ParseResult parse_sequence(const TokenSequence& seq, const Vocabulary& vocab, int w, int h);

} // namespace pointseq
