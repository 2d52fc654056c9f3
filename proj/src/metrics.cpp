#include "entmaxkv/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <vector>

namespace entmaxkv {

namespace {

constexpr double kZeroNorm = 1e-12;

double l2(std::span<const double> v) {
    double s = 0.0;
    for (double x : v) s += x * x;
    return std::sqrt(s);
}

} // namespace

std::string_view to_string(SupportReference ref) {
    switch (ref) {
    case SupportReference::entmax_full: return "entmax";
    case SupportReference::entmax_of_softmax_scores: return "entmax-of-scores";
    }
    return "unknown";
}

std::size_t metadata_fields_for(SelectorKind kind) noexcept {
    switch (kind) {
    case SelectorKind::all: return 0;
    case SelectorKind::topk:
    case SelectorKind::conservative_box: return kBoxMetadataFields;
    case SelectorKind::gaussian: return kGaussianMetadataFields;
    }
    return 0;
}

double max_value_norm(const PagedKvCache &cache) {
    double b = 0.0;
    for (std::size_t j = 0; j < cache.size(); ++j) b = std::max(b, l2(cache.value(j)));
    return b;
}

ApproxReport evaluate_step(const AttentionOutput &full, const AttentionOutput &sparse,
                           const SelectionResult &selection, const PagedKvCache &cache,
                           const EvaluateOptions &options) {
    if (full.transform.kind != sparse.transform.kind ||
        (full.transform.is_entmax() && full.transform.alpha.value() != sparse.transform.alpha.value())) {
        throw std::invalid_argument("full and sparse outputs use different transforms");
    }
    const std::size_t n = cache.size();
    if (full.tokens.size() != n || full.dist.probs.size() != n) {
        throw std::invalid_argument("full output must cover the whole cache");
    }

    ApproxReport r;
    std::vector<bool> kept(n, false);
    for (std::size_t j : sparse.tokens) {
        if (j >= n) throw std::invalid_argument("sparse token outside the cache");
        kept[j] = true;
    }
    for (std::size_t j = 0; j < n; ++j) {
        if (!kept[j]) r.delta += full.dist.probs[j];
    }

    std::vector<std::size_t> support;
    if (full.transform.is_entmax()) {
        support = full.dist.support;
        r.support_reference = SupportReference::entmax_full;
    } else {
        support = entmax(full.scores, options.rho_alpha).support;
        r.support_reference = SupportReference::entmax_of_softmax_scores;
    }
    r.support_size = support.size();
    if (!support.empty()) {
        const auto hits = std::count_if(support.begin(), support.end(), [&](std::size_t j) { return kept[j]; });
        r.rho = static_cast<double>(hits) / static_cast<double>(support.size());
    }

    std::vector<double> diff(full.output.size());
    for (std::size_t c = 0; c < diff.size(); ++c) diff[c] = full.output[c] - sparse.output[c];
    const double err = l2(diff);
    const double norm = l2(full.output);
    if (norm < kZeroNorm) {
        r.rel_error = err < kZeroNorm ? 0.0 : err;
        r.rel_error_is_absolute = err >= kZeroNorm;
    } else {
        r.rel_error = err / norm;
    }
    r.bound_slack = 2.0 * max_value_norm(cache) * r.delta - err;
    r.coverage = static_cast<double>(sparse.tokens.size()) / static_cast<double>(n);
    r.kv_bytes_full = cache.traffic_bytes(n, 0, options.bytes_per_real);
    r.kv_bytes_sparse =
        cache.traffic_bytes(sparse.tokens.size(), metadata_fields_for(selection.kind), options.bytes_per_real);
    return r;
}

AdvantageTerms advantage_decomposition(const AttentionDist &full_softmax, const AttentionDist &full_entmax,
                                       std::span<const std::size_t> drop) {
    const std::size_t n = full_softmax.probs.size();
    if (full_entmax.probs.size() != n) throw std::invalid_argument("distribution length mismatch");
    AdvantageTerms t;
    for (std::size_t i : drop) {
        if (i >= n) throw std::invalid_argument("drop index out of range");
        if (full_entmax.probs[i] > 0.0) t.support_miss += full_softmax.probs[i] - full_entmax.probs[i];
        else t.tail += full_softmax.probs[i];
    }
    return t;
}

} // namespace entmaxkv
