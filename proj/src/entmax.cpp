#include "entmaxkv/entmax.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <limits>
#include <numeric>

namespace entmaxkv {

namespace {

constexpr double kBisectionWidth = 1e-8;
constexpr double kResidualTol = 1e-12;
constexpr int kIterationCap = 100;

void validate_scores(std::span<const double> scores) {
    if (scores.empty()) throw std::invalid_argument("empty scores");
    for (double s : scores) {
        if (!std::isfinite(s)) throw std::invalid_argument("non-finite score");
    }
}

double sparsemax_threshold(std::span<const double> scores) {
    std::vector<double> sorted(scores.begin(), scores.end());
    std::sort(sorted.begin(), sorted.end(), std::greater<>());
    double cumsum = 0.0;
    double support_sum = sorted[0];
    std::size_t support_size = 1;
    for (std::size_t k = 0; k < sorted.size(); ++k) {
        cumsum += sorted[k];
        const double kk = static_cast<double>(k + 1);
        if (1.0 + kk * sorted[k] > cumsum) {
            support_sum = cumsum;
            support_size = k + 1;
        } else {
            break;
        }
    }
    return (support_sum - 1.0) / static_cast<double>(support_size);
}

struct Derivs {
    double f;   // residual
    double df;  // d residual / d tau
    double d2f; // second derivative
};

Derivs residual_derivs(std::span<const double> scores, const Alpha &alpha, double tau) {
    const double a = alpha.scale();
    const double beta = alpha.beta();
    double sum = 0.0, sum1 = 0.0, sum2 = 0.0;
    for (double s : scores) {
        const double x = a * s - tau;
        if (x <= 0.0) continue;
        const double p = alpha.power(x);
        sum += p;
        sum1 += p / x;
        sum2 += p / (x * x);
    }
    return {sum - 1.0, -beta * sum1, beta * (beta - 1.0) * sum2};
}

} // namespace

Alpha::Alpha(double value) : value_(value) {
    if (!(value > 1.0) || !std::isfinite(value)) {
        throw std::invalid_argument("alpha must be finite and > 1");
    }
    scale_ = value - 1.0;
    beta_ = 1.0 / scale_;
    const double rounded = std::round(beta_);
    if (std::abs(beta_ - rounded) < 1e-9 && rounded >= 1.0 && rounded <= 64.0) {
        beta_ = rounded;
        integer_beta_ = static_cast<int>(rounded);
    }
}

double Alpha::power(double x) const noexcept {
    if (x <= 0.0) return 0.0;
    if (integer_beta_) {
        switch (*integer_beta_) {
        case 1: return x;
        case 2: return x * x;
        case 3: return x * x * x;
        default: break;
        }
    }
    return std::pow(x, beta_);
}

AttentionDist softmax(std::span<const double> scores) {
    validate_scores(scores);
    const double m = *std::max_element(scores.begin(), scores.end());
    AttentionDist dist;
    dist.probs.resize(scores.size());
    double sum = 0.0;
    for (std::size_t i = 0; i < scores.size(); ++i) {
        dist.probs[i] = std::exp(scores[i] - m);
        sum += dist.probs[i];
    }
    for (double &p : dist.probs) p /= sum;
    dist.tau = m + std::log(sum);
    dist.support.resize(scores.size());
    std::iota(dist.support.begin(), dist.support.end(), std::size_t{0});
    return dist;
}

double entmax_residual(std::span<const double> scores, const Alpha &alpha, double tau) {
    double sum = 0.0;
    for (double s : scores) sum += alpha.power(alpha.scale() * s - tau);
    return sum - 1.0;
}

double solve_entmax_threshold(std::span<const double> scores, const Alpha &alpha,
                              std::optional<double> warm_start) {
    validate_scores(scores);
    const double a = alpha.scale();
    const double top = a * *std::max_element(scores.begin(), scores.end());
    if (scores.size() == 1) return top - 1.0;
    if (alpha.is_sparsemax()) return sparsemax_threshold(scores);

    // residual(lo) >= 0 because the max term alone contributes 1.
    double lo = top - 1.0;
    double hi = top;
    int iterations = 0;
    double tau;
    if (warm_start && *warm_start > lo && *warm_start < hi) {
        tau = *warm_start;
    } else {
        while (hi - lo > kBisectionWidth && iterations < kIterationCap) {
            const double mid = 0.5 * (lo + hi);
            if (entmax_residual(scores, alpha, mid) > 0.0) lo = mid;
            else hi = mid;
            ++iterations;
        }
        tau = 0.5 * (lo + hi);
    }

    double last = std::numeric_limits<double>::infinity();
    for (; iterations < kIterationCap; ++iterations) {
        const Derivs d = residual_derivs(scores, alpha, tau);
        last = d.f;
        if (std::abs(d.f) < kResidualTol) return tau;
        if (d.f > 0.0) lo = tau;
        else hi = tau;
        // Bracket collapsed to adjacent doubles: the residual is at rounding level.
        if (hi - lo <= 4.0 * std::numeric_limits<double>::epsilon() * std::max({1.0, std::abs(lo), std::abs(hi)})) {
            return tau;
        }

        double next = std::numeric_limits<double>::quiet_NaN();
        if (d.df != 0.0) {
            const double denom = 2.0 * d.df * d.df - d.f * d.d2f;
            if (denom != 0.0 && std::isfinite(d.d2f)) next = tau - 2.0 * d.f * d.df / denom;
            if (!(next > lo && next < hi)) next = tau - d.f / d.df;
        }
        if (!(next > lo && next < hi)) next = 0.5 * (lo + hi);
        tau = next;
    }
    throw SolverError("entmax threshold did not converge", last);
}

AttentionDist entmax(std::span<const double> scores, const Alpha &alpha,
                     std::optional<double> warm_start) {
    validate_scores(scores);
    AttentionDist dist;
    dist.tau = solve_entmax_threshold(scores, alpha, warm_start);
    dist.probs.resize(scores.size());
    if (scores.size() == 1) {
        dist.probs[0] = 1.0;
        dist.support = {0};
        return dist;
    }
    double sum = 0.0;
    for (std::size_t i = 0; i < scores.size(); ++i) {
        dist.probs[i] = alpha.power(alpha.scale() * scores[i] - dist.tau);
        sum += dist.probs[i];
    }
    for (std::size_t i = 0; i < scores.size(); ++i) {
        if (dist.probs[i] > 0.0) {
            dist.probs[i] /= sum;
            dist.support.push_back(i);
        }
    }
    return dist;
}

std::vector<std::size_t> support_of(const AttentionDist &dist) {
    std::vector<std::size_t> out;
    for (std::size_t i = 0; i < dist.probs.size(); ++i) {
        if (dist.probs[i] > 0.0) out.push_back(i);
    }
    return out;
}

} // namespace entmaxkv
