#pragma once

#include "entmaxkv/entmax.hpp"
#include "entmaxkv/page_scoring.hpp"
#include "entmaxkv/paged_cache.hpp"

#include <cstddef>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace entmaxkv {

enum class SelectorKind { all, topk, gaussian, conservative_box };

/// Candidate pages for one query and the tokens they imply.
struct SelectionResult {
    SelectorKind kind = SelectorKind::all;
    std::vector<std::size_t> pages;  // C_page, ascending page order
    std::vector<std::size_t> tokens; // C_tok, ascending, no duplicates
    std::optional<double> tau_hat;   // Gaussian selector only
    std::vector<double> page_scores; // the per-page scores the rule compared
    double margin = 0.0;
    bool fallback = false;           // empty candidate set replaced by top-1 mu

    std::size_t num_tokens() const noexcept { return tokens.size(); }
};

struct GaussianSelectorConfig {
    Alpha alpha = Alpha::three_halves();
    double q_page = 0.99;
    double delta_margin = 0.0;
    double tolerance = 1e-10;
    int max_iterations = 200;

    void validate() const;
};

/// Per-page Gaussian summary used by the distributional threshold.
struct PageGaussian {
    double mu = 0.0;
    double sigma = 0.0;
    std::size_t count = 1;
};

/// Root bracketing failed; carries the masses at both ends.
class BracketError : public std::runtime_error {
public:
    BracketError(const std::string &what, double mass_lo, double mass_hi)
        : std::runtime_error(what), mass_lo_(mass_lo), mass_hi_(mass_hi) {}
    double mass_lo() const noexcept { return mass_lo_; }
    double mass_hi() const noexcept { return mass_hi_; }

private:
    double mass_lo_;
    double mass_hi_;
};

/// Expands page indices into their token set.
SelectionResult make_selection(const PagedKvCache &cache, std::vector<std::size_t> pages,
                               SelectorKind kind);

/// Every page.
SelectionResult select_all(const PagedKvCache &cache);

/// The min(k, M) pages with the largest box scores; ties go to the lower index.
SelectionResult select_topk(const PagedKvCache &cache, std::span<const double> box, std::size_t k);

/// E[(aS - tau)_+^beta] for S ~ N(mu, sigma^2) and integer beta in {1, 2, 3}.
/// sigma = 0 gives the point-mass value. Other alpha throw "no closed form".
double expected_entmax_mass(double mu, double sigma, double tau, const Alpha &alpha);

/// d/dtau of expected_entmax_mass.
double expected_entmax_mass_derivative(double mu, double sigma, double tau, const Alpha &alpha);

/// Solves sum_p count_p * E[g(S_p; tau)] = 1 by bracketing, bisection and a
/// safeguarded Newton polish.
double solve_distributional_tau(std::span<const PageGaussian> pages, const Alpha &alpha,
                                double tolerance = 1e-10, int max_iterations = 200);

/// mu + sigma * Phi^{-1}(q_page^(1/count)): a q_page-confidence estimate of the
/// largest of `count` draws.
double gaussian_page_max(double mu, double sigma, std::size_t count, double q_page);

/// Pages whose estimated maximum clears the estimated threshold:
/// (alpha-1) * page_max > tau_hat - margin. Falls back to the page with the
/// largest mu when nothing clears it.
SelectionResult select_gaussian(const PagedKvCache &cache, const PageScores &scores,
                                const GaussianSelectorConfig &config);

/// Pages with (alpha-1) * box > tau_lower. When tau_lower is at most the true
/// entmax threshold, no support token is dropped.
SelectionResult conservative_box_select(const PagedKvCache &cache, std::span<const double> box,
                                        double tau_lower, const Alpha &alpha);

} // namespace entmaxkv
