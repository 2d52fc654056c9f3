#include "entmaxkv/attention.hpp"

#include "entmaxkv/page_scoring.hpp"

#include <algorithm>
#include <numeric>
#include <stdexcept>

namespace entmaxkv {

AttentionDist apply_transform(std::span<const double> scores, const Transform &transform,
                              std::optional<double> warm_start) {
    if (transform.is_entmax()) return entmax(scores, transform.alpha, warm_start);
    return softmax(scores);
}

std::vector<double> weighted_values(const PagedKvCache &cache, std::span<const std::size_t> tokens,
                                    std::span<const double> probs) {
    if (tokens.size() != probs.size()) throw std::invalid_argument("token/probability count mismatch");
    std::vector<double> out(cache.config().value_dim, 0.0);
    for (std::size_t i = 0; i < tokens.size(); ++i) {
        if (probs[i] == 0.0) continue;
        const auto v = cache.value(tokens[i]);
        for (std::size_t c = 0; c < out.size(); ++c) out[c] += probs[i] * v[c];
    }
    return out;
}

namespace {

AttentionOutput attend(std::span<const double> query, const PagedKvCache &cache,
                       std::vector<std::size_t> tokens, const Transform &transform,
                       std::optional<double> warm_start) {
    if (query.size() != cache.config().head_dim) throw std::invalid_argument("query dimension mismatch");
    AttentionOutput out;
    out.transform = transform;
    out.scores.reserve(tokens.size());
    for (std::size_t j : tokens) out.scores.push_back(token_score(query, cache.key(j)));
    out.dist = apply_transform(out.scores, transform, warm_start);
    out.output = weighted_values(cache, tokens, out.dist.probs);
    out.tokens = std::move(tokens);
    return out;
}

} // namespace

AttentionOutput full_attention(std::span<const double> query, const PagedKvCache &cache,
                               const Transform &transform) {
    if (cache.empty()) throw std::invalid_argument("full attention over an empty cache");
    std::vector<std::size_t> tokens(cache.size());
    std::iota(tokens.begin(), tokens.end(), std::size_t{0});
    return attend(query, cache, std::move(tokens), transform, std::nullopt);
}

AttentionOutput sparse_attention(std::span<const double> query, const PagedKvCache &cache,
                                 const SelectionResult &selection, const Transform &transform) {
    if (selection.tokens.empty()) throw std::invalid_argument("sparse attention with an empty selection");
    const auto warm = transform.is_entmax() ? selection.tau_hat : std::nullopt;
    return attend(query, cache, selection.tokens, transform, warm);
}

Truncation truncate_renormalize(const AttentionOutput &full, std::span<const std::size_t> keep,
                                const PagedKvCache &cache) {
    const auto &probs = full.dist.probs;
    if (probs.size() != full.tokens.size()) throw std::invalid_argument("malformed attention output");
    if (!std::is_sorted(keep.begin(), keep.end())) throw std::invalid_argument("keep set must be sorted");

    Truncation t;
    std::vector<bool> kept(probs.size(), false);
    for (std::size_t idx : keep) {
        // keep holds token ids; map them onto positions in the full output.
        const auto it = std::lower_bound(full.tokens.begin(), full.tokens.end(), idx);
        if (it == full.tokens.end() || *it != idx) throw std::invalid_argument("keep set outside the evaluated tokens");
        kept[static_cast<std::size_t>(it - full.tokens.begin())] = true;
    }
    for (std::size_t i = 0; i < probs.size(); ++i) {
        if (!kept[i]) t.delta += probs[i];
    }
    const double remaining = 1.0 - t.delta;
    if (!(remaining > 0.0)) throw std::invalid_argument("degenerate truncation");

    AttentionOutput &r = t.result;
    r.transform = full.transform;
    r.dist.tau = full.dist.tau;
    for (std::size_t i = 0; i < probs.size(); ++i) {
        if (!kept[i]) continue;
        r.tokens.push_back(full.tokens[i]);
        r.scores.push_back(i < full.scores.size() ? full.scores[i] : 0.0);
        const double p = probs[i] / remaining;
        if (p > 0.0) r.dist.support.push_back(r.dist.probs.size());
        r.dist.probs.push_back(p);
    }
    r.output = weighted_values(cache, r.tokens, r.dist.probs);
    return t;
}

} // namespace entmaxkv
