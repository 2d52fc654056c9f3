#include "entmaxkv/selection.hpp"

#include "entmaxkv/normal.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

namespace entmaxkv {

namespace {

int closed_form_beta(const Alpha &alpha) {
    const auto beta = alpha.integer_beta();
    if (!beta || *beta < 1 || *beta > 3) {
        throw std::invalid_argument("no closed form for alpha outside {4/3, 3/2, 2}");
    }
    return *beta;
}

std::size_t argmax_lowest(std::span<const double> xs) {
    std::size_t best = 0;
    for (std::size_t i = 1; i < xs.size(); ++i) {
        if (xs[i] > xs[best]) best = i;
    }
    return best;
}

} // namespace

void GaussianSelectorConfig::validate() const {
    closed_form_beta(alpha);
    if (!(q_page > 0.0 && q_page < 1.0)) throw std::invalid_argument("q_page must lie in (0, 1)");
    if (!(delta_margin >= 0.0)) throw std::invalid_argument("delta_margin must be >= 0");
    if (!(tolerance > 0.0) || max_iterations < 1) throw std::invalid_argument("bad solver settings");
}

SelectionResult make_selection(const PagedKvCache &cache, std::vector<std::size_t> pages,
                               SelectorKind kind) {
    std::sort(pages.begin(), pages.end());
    pages.erase(std::unique(pages.begin(), pages.end()), pages.end());
    SelectionResult out;
    out.kind = kind;
    for (std::size_t p : pages) {
        const TokenRange r = cache.page_tokens(p);
        for (std::size_t j = r.begin; j < r.end; ++j) out.tokens.push_back(j);
    }
    out.pages = std::move(pages);
    return out;
}

SelectionResult select_all(const PagedKvCache &cache) {
    std::vector<std::size_t> pages(cache.num_pages());
    std::iota(pages.begin(), pages.end(), std::size_t{0});
    return make_selection(cache, std::move(pages), SelectorKind::all);
}

SelectionResult select_topk(const PagedKvCache &cache, std::span<const double> box, std::size_t k) {
    if (k < 1) throw std::invalid_argument("top-k budget must be >= 1");
    if (box.size() != cache.num_pages()) throw std::invalid_argument("page score count mismatch");
    std::vector<std::size_t> order(box.size());
    std::iota(order.begin(), order.end(), std::size_t{0});
    const std::size_t keep = std::min(k, order.size());
    auto by_score = [&](std::size_t x, std::size_t y) {
        return box[x] > box[y] || (box[x] == box[y] && x < y);
    };
    std::partial_sort(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(keep), order.end(),
                      by_score);
    order.resize(keep);
    SelectionResult out = make_selection(cache, std::move(order), SelectorKind::topk);
    out.page_scores.assign(box.begin(), box.end());
    return out;
}

double expected_entmax_mass(double mu, double sigma, double tau, const Alpha &alpha) {
    const int beta = closed_form_beta(alpha);
    if (!(sigma >= 0.0)) throw std::invalid_argument("sigma must be >= 0");
    const double a = alpha.scale();
    const double my = a * mu - tau;
    if (sigma == 0.0) return alpha.power(my);
    const double sy = a * sigma;
    const double t = my / sy;
    const double cdf = normal::cdf(t);
    const double pdf = normal::pdf(t);
    double m = 0.0;
    switch (beta) {
    case 1: m = my * cdf + sy * pdf; break;
    case 2: m = (my * my + sy * sy) * cdf + my * sy * pdf; break;
    case 3: m = (my * my * my + 3.0 * my * sy * sy) * cdf + (my * my * sy + 2.0 * sy * sy * sy) * pdf; break;
    }
    // Far in the lower tail the two terms cancel; the true value is positive but tiny.
    return std::max(m, 0.0);
}

double expected_entmax_mass_derivative(double mu, double sigma, double tau, const Alpha &alpha) {
    const int beta = closed_form_beta(alpha);
    const double a = alpha.scale();
    const double my = a * mu - tau;
    if (sigma == 0.0) {
        if (my <= 0.0) return 0.0;
        return beta == 1 ? -1.0 : -beta * std::pow(my, beta - 1);
    }
    const double sy = a * sigma;
    const double t = my / sy;
    const double cdf = normal::cdf(t);
    const double pdf = normal::pdf(t);
    switch (beta) {
    case 1: return -cdf;
    case 2: return -2.0 * std::max(0.0, my * cdf + sy * pdf);
    default: return -3.0 * std::max(0.0, (my * my + sy * sy) * cdf + my * sy * pdf);
    }
}

double solve_distributional_tau(std::span<const PageGaussian> pages, const Alpha &alpha,
                                double tolerance, int max_iterations) {
    closed_form_beta(alpha);
    if (pages.empty()) throw std::invalid_argument("distributional threshold needs at least one page");
    for (const PageGaussian &pg : pages) {
        if (pg.count < 1) throw std::invalid_argument("page count must be >= 1");
        if (!(pg.sigma >= 0.0) || !std::isfinite(pg.mu) || !std::isfinite(pg.sigma)) {
            throw std::invalid_argument("page moments must be finite with sigma >= 0");
        }
    }
    const double a = alpha.scale();
    auto mass = [&](double tau) {
        double total = 0.0;
        for (const PageGaussian &pg : pages) {
            total += static_cast<double>(pg.count) * expected_entmax_mass(pg.mu, pg.sigma, tau, alpha);
        }
        return total;
    };
    auto slope = [&](double tau) {
        double total = 0.0;
        for (const PageGaussian &pg : pages) {
            total += static_cast<double>(pg.count) * expected_entmax_mass_derivative(pg.mu, pg.sigma, tau, alpha);
        }
        return total;
    };

    double top_mu = -std::numeric_limits<double>::infinity();
    double top_tail = -std::numeric_limits<double>::infinity();
    for (const PageGaussian &pg : pages) {
        top_mu = std::max(top_mu, pg.mu);
        top_tail = std::max(top_tail, pg.mu + 6.0 * pg.sigma);
    }
    // Jensen: E[(Y)_+^beta] >= (E[Y])_+^beta, so the top-mu page alone gives
    // mass >= 1 at a*mu - 1.
    double lo = a * top_mu - 1.0;
    double hi = a * top_tail;
    double mass_lo = mass(lo);
    double mass_hi = mass(hi);
    for (int i = 0; i < 64 && mass_hi > 1.0; ++i) {
        hi += std::max(1.0, std::abs(hi));
        mass_hi = mass(hi);
    }
    for (int i = 0; i < 64 && mass_lo < 1.0; ++i) {
        lo -= std::max(1.0, std::abs(lo));
        mass_lo = mass(lo);
    }
    if (!(mass_lo >= 1.0 && mass_hi <= 1.0)) {
        throw BracketError("distributional threshold bracket failed", mass_lo, mass_hi);
    }
    if (mass_lo - 1.0 < tolerance) return lo;
    if (1.0 - mass_hi < tolerance) return hi;

    double tau = 0.5 * (lo + hi);
    double residual = std::numeric_limits<double>::infinity();
    for (int it = 0; it < max_iterations; ++it) {
        residual = mass(tau) - 1.0;
        if (std::abs(residual) < tolerance) return tau;
        if (residual > 0.0) lo = tau;
        else hi = tau;
        if (hi - lo <= 4.0 * std::numeric_limits<double>::epsilon() * std::max({1.0, std::abs(lo), std::abs(hi)})) {
            return tau;
        }
        const double df = slope(tau);
        double next = df != 0.0 ? tau - residual / df : std::numeric_limits<double>::quiet_NaN();
        if (!(next > lo && next < hi)) next = 0.5 * (lo + hi);
        tau = next;
    }
    throw SolverError("distributional threshold did not converge", residual);
}

double gaussian_page_max(double mu, double sigma, std::size_t count, double q_page) {
    if (!(q_page > 0.0 && q_page < 1.0)) throw std::invalid_argument("q_page must lie in (0, 1)");
    if (count < 1) throw std::invalid_argument("page count must be >= 1");
    if (!(sigma >= 0.0)) throw std::invalid_argument("sigma must be >= 0");
    if (sigma == 0.0) return mu;
    return mu + sigma * normal::quantile(std::pow(q_page, 1.0 / static_cast<double>(count)));
}

SelectionResult select_gaussian(const PagedKvCache &cache, const PageScores &scores,
                                const GaussianSelectorConfig &config) {
    config.validate();
    const std::size_t m = cache.num_pages();
    if (m == 0) throw std::invalid_argument("cannot select from an empty cache");
    if (scores.mu.size() != m || scores.sigma2.size() != m) {
        throw std::invalid_argument("page score count mismatch");
    }
    std::vector<PageGaussian> pages(m);
    for (std::size_t p = 0; p < m; ++p) {
        pages[p] = {scores.mu[p], std::sqrt(std::max(0.0, scores.sigma2[p])), cache.page(p).token_count};
    }
    const double tau_hat = solve_distributional_tau(pages, config.alpha, config.tolerance, config.max_iterations);

    const double a = config.alpha.scale();
    std::vector<double> page_max(m);
    std::vector<std::size_t> chosen;
    for (std::size_t p = 0; p < m; ++p) {
        page_max[p] = gaussian_page_max(pages[p].mu, pages[p].sigma, pages[p].count, config.q_page);
        if (a * page_max[p] > tau_hat - config.delta_margin) chosen.push_back(p);
    }
    bool fallback = false;
    if (chosen.empty()) {
        chosen.push_back(argmax_lowest(scores.mu));
        fallback = true;
    }
    SelectionResult out = make_selection(cache, std::move(chosen), SelectorKind::gaussian);
    out.tau_hat = tau_hat;
    out.page_scores = std::move(page_max);
    out.margin = config.delta_margin;
    out.fallback = fallback;
    return out;
}

SelectionResult conservative_box_select(const PagedKvCache &cache, std::span<const double> box,
                                        double tau_lower, const Alpha &alpha) {
    if (box.size() != cache.num_pages()) throw std::invalid_argument("page score count mismatch");
    std::vector<std::size_t> chosen;
    for (std::size_t p = 0; p < box.size(); ++p) {
        if (alpha.scale() * box[p] > tau_lower) chosen.push_back(p);
    }
    bool fallback = false;
    if (chosen.empty() && !box.empty()) {
        chosen.push_back(argmax_lowest(box));
        fallback = true;
    }
    SelectionResult out = make_selection(cache, std::move(chosen), SelectorKind::conservative_box);
    out.page_scores.assign(box.begin(), box.end());
    out.fallback = fallback;
    return out;
}

} // namespace entmaxkv
