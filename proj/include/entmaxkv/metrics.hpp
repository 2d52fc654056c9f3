#pragma once

#include "entmaxkv/attention.hpp"
#include "entmaxkv/entmax.hpp"
#include "entmaxkv/paged_cache.hpp"
#include "entmaxkv/selection.hpp"

#include <cstddef>
#include <optional>
#include <span>
#include <string_view>

namespace entmaxkv {

/// Which distribution defined the support used for rho.
enum class SupportReference { entmax_full, entmax_of_softmax_scores };

std::string_view to_string(SupportReference ref);

/// Approximation quality of one sparse decode step against the full-cache oracle.
struct ApproxReport {
    double delta = 0.0;        // dropped full-distribution mass
    double rho = 1.0;          // support retention
    double rel_error = 0.0;    // ||o - o~|| / ||o||
    bool rel_error_is_absolute = false; // ||o|| ~ 0: rel_error holds ||o - o~||
    double bound_slack = 0.0;  // 2 B delta - ||o - o~||
    double coverage = 1.0;     // |C_tok| / n
    std::size_t support_size = 0;
    std::size_t kv_bytes_sparse = 0; // KV reads plus selector metadata reads
    std::size_t kv_bytes_full = 0;
    SupportReference support_reference = SupportReference::entmax_full;
};

struct EvaluateOptions {
    /// Alpha for the reference entmax support when the runs are softmax.
    Alpha rho_alpha = Alpha::three_halves();
    std::size_t bytes_per_real = kDefaultBytesPerReal;
};

/// Metadata vectors per page charged for a selector.
std::size_t metadata_fields_for(SelectorKind kind) noexcept;

/// max_j ||v_j||_2 over the whole cache.
double max_value_norm(const PagedKvCache &cache);

ApproxReport evaluate_step(const AttentionOutput &full, const AttentionOutput &sparse,
                           const SelectionResult &selection, const PagedKvCache &cache,
                           const EvaluateOptions &options = {});

struct AdvantageTerms {
    double support_miss = 0.0;
    double tail = 0.0;
};

/// Splits delta_softmax - delta_entmax over `drop` into the part on the entmax
/// support and the softmax mass outside it (always >= 0).
AdvantageTerms advantage_decomposition(const AttentionDist &full_softmax, const AttentionDist &full_entmax,
                                       std::span<const std::size_t> drop);

} // namespace entmaxkv
