#pragma once

#include <cstddef>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace entmaxkv {

/// Raised when an iterative solver fails to meet its tolerance within the
/// iteration cap. Carries the last residual so callers can report it.
class SolverError : public std::runtime_error {
public:
    SolverError(const std::string &what, double residual)
        : std::runtime_error(what), residual_(residual) {}

    double residual() const noexcept { return residual_; }

private:
    double residual_;
};

/// Entmax exponent alpha > 1, with the derived scale a = alpha - 1 and
/// exponent beta = 1 / (alpha - 1).
///
/// beta is snapped to the nearest integer when it is within 1e-9 of one, so
/// that alpha = 4/3 (which is not representable exactly) still takes the
/// integer-power and closed-form paths.
class Alpha {
public:
    explicit Alpha(double value);

    static Alpha sparsemax() { return Alpha(2.0); }
    static Alpha three_halves() { return Alpha(1.5); }
    static Alpha four_thirds() { return Alpha(4.0 / 3.0); }

    double value() const noexcept { return value_; }
    double scale() const noexcept { return scale_; }
    double beta() const noexcept { return beta_; }
    std::optional<int> integer_beta() const noexcept { return integer_beta_; }
    bool is_sparsemax() const noexcept { return integer_beta_ == 1; }

    /// [x]_+^beta, exactly zero for x <= 0.
    double power(double x) const noexcept;

private:
    double value_;
    double scale_;
    double beta_;
    std::optional<int> integer_beta_;
};

/// Raw attention scores for one query, with a record of whether the
/// 1/sqrt(d) scaling was already applied.
struct ScoreVector {
    std::vector<double> values;
    bool scaled = false;

    std::size_t size() const noexcept { return values.size(); }
};

/// A probability distribution over n positions. For entmax, tau is the
/// threshold; for softmax it holds the log-normalizer log(sum exp(s)).
struct AttentionDist {
    std::vector<double> probs;
    double tau = 0.0;
    std::vector<std::size_t> support;
};

AttentionDist softmax(std::span<const double> scores);

/// alpha-entmax with exact zeros below the threshold. The optional warm start
/// seeds the threshold search (ignored when it falls outside the bracket).
AttentionDist entmax(std::span<const double> scores, const Alpha &alpha,
                     std::optional<double> warm_start = std::nullopt);

/// Solves sum_i [(alpha-1) s_i - tau]_+^beta = 1 for tau.
///
/// alpha = 2 uses the exact sort-based sparsemax threshold. Other alpha use
/// bisection on [a*max(s) - 1, a*max(s)] down to width 1e-8, then safeguarded
/// Halley steps to a residual of 1e-12 (cap: 100 iterations).
double solve_entmax_threshold(std::span<const double> scores, const Alpha &alpha,
                              std::optional<double> warm_start = std::nullopt);

/// Residual sum_i [(alpha-1) s_i - tau]_+^beta - 1.
double entmax_residual(std::span<const double> scores, const Alpha &alpha, double tau);

std::vector<std::size_t> support_of(const AttentionDist &dist);

} // namespace entmaxkv
