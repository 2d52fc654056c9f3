#pragma once

#include "entmaxkv/paged_cache.hpp"

#include <span>
#include <vector>

namespace entmaxkv {

/// Query-aware scores for every page, computed from metadata only.
struct PageScores {
    std::vector<double> box;    // deterministic per-page score upper bound
    std::vector<double> mu;     // Gaussian score mean
    std::vector<double> sigma2; // Gaussian score variance (diagonal), >= 0

    std::size_t size() const noexcept { return box.size(); }
};

/// q^T k / sqrt(d).
double token_score(std::span<const double> query, std::span<const double> key);

/// (1/sqrt(d)) sum_i max(q_i k_min[i], q_i k_max[i]). Never below the score
/// of any key inside the page box.
double box_bound(std::span<const double> query, const PageMetadata &page);

struct GaussianMoments {
    double mu = 0.0;
    double sigma2 = 0.0;
};

/// mu = q^T k_avg / sqrt(d), sigma2 = (1/d) sum_i q_i^2 k_std[i]^2.
/// Cross-coordinate covariance is ignored.
GaussianMoments gaussian_moments(std::span<const double> query, const PageMetadata &page);

PageScores score_pages(std::span<const double> query, const PagedKvCache &cache);

/// Box bounds only; the top-k path does not need the moments.
std::vector<double> box_scores(std::span<const double> query, const PagedKvCache &cache);

} // namespace entmaxkv
