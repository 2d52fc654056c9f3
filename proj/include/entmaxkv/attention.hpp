#pragma once

#include "entmaxkv/entmax.hpp"
#include "entmaxkv/paged_cache.hpp"
#include "entmaxkv/selection.hpp"

#include <optional>
#include <span>
#include <vector>

namespace entmaxkv {

/// Probability transform applied to attention scores.
struct Transform {
    enum class Kind { softmax, entmax };

    Kind kind = Kind::softmax;
    Alpha alpha = Alpha::three_halves(); // entmax only

    static Transform softmax() { return {Kind::softmax, Alpha::three_halves()}; }
    static Transform entmax(Alpha a) { return {Kind::entmax, a}; }

    bool is_entmax() const noexcept { return kind == Kind::entmax; }
};

/// Attention output over an evaluated token set. dist.probs, scores and
/// tokens are aligned: dist.probs[i] belongs to token tokens[i].
struct AttentionOutput {
    Transform transform;
    std::vector<double> output;
    AttentionDist dist;
    std::vector<std::size_t> tokens;
    std::vector<double> scores;
};

AttentionDist apply_transform(std::span<const double> scores, const Transform &transform,
                              std::optional<double> warm_start = std::nullopt);

/// sum_j probs[j] * v_{tokens[j]}.
std::vector<double> weighted_values(const PagedKvCache &cache, std::span<const std::size_t> tokens,
                                    std::span<const double> probs);

/// Scores every cached token and applies the transform once.
AttentionOutput full_attention(std::span<const double> query, const PagedKvCache &cache,
                               const Transform &transform);

/// Scores only the selected tokens and applies the transform to that
/// restricted vector. Unselected tokens get probability zero. For entmax the
/// selector's tau_hat (if any) warm-starts the exact threshold solve.
AttentionOutput sparse_attention(std::span<const double> query, const PagedKvCache &cache,
                                 const SelectionResult &selection, const Transform &transform);

struct Truncation {
    AttentionOutput result;
    double delta = 0.0;
};

/// Drops everything outside `keep` from a full distribution and rescales the
/// rest by 1/(1 - delta). `keep` must be sorted and unique.
Truncation truncate_renormalize(const AttentionOutput &full, std::span<const std::size_t> keep,
                                const PagedKvCache &cache);

} // namespace entmaxkv
