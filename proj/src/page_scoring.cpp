#include "entmaxkv/page_scoring.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace entmaxkv {

namespace {

void check_dim(std::span<const double> query, std::size_t dim) {
    if (query.size() != dim || dim == 0) throw std::invalid_argument("query/page dimension mismatch");
}

} // namespace

double token_score(std::span<const double> query, std::span<const double> key) {
    check_dim(query, key.size());
    double dot = 0.0;
    for (std::size_t i = 0; i < query.size(); ++i) dot += query[i] * key[i];
    return dot / std::sqrt(static_cast<double>(query.size()));
}

double box_bound(std::span<const double> query, const PageMetadata &page) {
    check_dim(query, page.k_min.size());
    double sum = 0.0;
    for (std::size_t i = 0; i < query.size(); ++i) {
        sum += std::max(query[i] * page.k_min[i], query[i] * page.k_max[i]);
    }
    return sum / std::sqrt(static_cast<double>(query.size()));
}

GaussianMoments gaussian_moments(std::span<const double> query, const PageMetadata &page) {
    check_dim(query, page.k_avg.size());
    double dot = 0.0, var = 0.0;
    for (std::size_t i = 0; i < query.size(); ++i) {
        dot += query[i] * page.k_avg[i];
        const double qs = query[i] * page.k_std[i];
        var += qs * qs;
    }
    const double d = static_cast<double>(query.size());
    return {dot / std::sqrt(d), var / d};
}

PageScores score_pages(std::span<const double> query, const PagedKvCache &cache) {
    PageScores out;
    const std::size_t m = cache.num_pages();
    out.box.reserve(m);
    out.mu.reserve(m);
    out.sigma2.reserve(m);
    for (const PageMetadata &page : cache.pages()) {
        out.box.push_back(box_bound(query, page));
        const GaussianMoments g = gaussian_moments(query, page);
        out.mu.push_back(g.mu);
        out.sigma2.push_back(g.sigma2);
    }
    return out;
}

std::vector<double> box_scores(std::span<const double> query, const PagedKvCache &cache) {
    std::vector<double> out;
    out.reserve(cache.num_pages());
    for (const PageMetadata &page : cache.pages()) out.push_back(box_bound(query, page));
    return out;
}

} // namespace entmaxkv
