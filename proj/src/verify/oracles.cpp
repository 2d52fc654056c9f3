#include "entmaxkv/verify/oracles.hpp"

#include <boost/multiprecision/cpp_dec_float.hpp>

#include <algorithm>
#include <cmath>
#include <functional>
#include <numeric>
#include <stdexcept>

namespace entmaxkv::verify {

namespace {

using real = long double;

real pow_beta(real x, real beta) {
    if (x <= 0) return 0;
    const real r = std::round(beta);
    if (std::abs(beta - r) < 1e-12L) {
        real p = 1;
        for (int i = 0; i < static_cast<int>(r); ++i) p *= x;
        return p;
    }
    return std::pow(x, beta);
}

// Solves sum_{i<k} (x_i - tau)^beta = 1 with every x_i - tau > 0, x sorted
// descending.
real prefix_threshold(const std::vector<real> &x, std::size_t k, real beta) {
    real s1 = 0, s2 = 0;
    for (std::size_t i = 0; i < k; ++i) {
        s1 += x[i];
        s2 += x[i] * x[i];
    }
    const real kk = static_cast<real>(k);
    if (std::abs(beta - 1) < 1e-12L) return (s1 - 1) / kk;
    if (std::abs(beta - 2) < 1e-12L) {
        // k tau^2 - 2 s1 tau + s2 - 1 = 0; the smaller root lies below x_{k-1}.
        const real disc = s1 * s1 - kk * (s2 - 1);
        return (s1 - std::sqrt(std::max<real>(disc, 0))) / kk;
    }
    real lo = x[0] - 1, hi = x[k - 1];
    for (int it = 0; it < 400 && hi - lo > 0; ++it) {
        const real mid = 0.5L * (lo + hi);
        if (mid == lo || mid == hi) break;
        real sum = 0;
        for (std::size_t i = 0; i < k; ++i) sum += pow_beta(x[i] - mid, beta);
        if (sum > 1) lo = mid;
        else hi = mid;
    }
    return 0.5L * (lo + hi);
}

} // namespace

std::vector<double> prefix_entmax(std::span<const double> scores, const Alpha &alpha) {
    if (scores.empty()) throw std::invalid_argument("empty scores");
    const real a = static_cast<real>(alpha.value()) - 1;
    const real beta = 1 / a;
    std::vector<real> x(scores.size());
    for (std::size_t i = 0; i < scores.size(); ++i) x[i] = a * static_cast<real>(scores[i]);
    std::vector<real> sorted = x;
    std::sort(sorted.begin(), sorted.end(), std::greater<>());

    real tau = sorted[0] - 1;
    for (std::size_t k = 1; k <= sorted.size(); ++k) {
        const real t = prefix_threshold(sorted, k, beta);
        const bool inside = t < sorted[k - 1];
        const bool excludes_next = k == sorted.size() || t >= sorted[k];
        if (inside && excludes_next) {
            tau = t;
            break;
        }
    }
    std::vector<double> p(scores.size());
    for (std::size_t i = 0; i < scores.size(); ++i) p[i] = static_cast<double>(pow_beta(x[i] - tau, beta));
    return p;
}

double bisection_threshold(std::span<const double> scores, const Alpha &alpha, double width) {
    const real a = static_cast<real>(alpha.value()) - 1;
    const real beta = 1 / a;
    real top = a * static_cast<real>(*std::max_element(scores.begin(), scores.end()));
    real lo = top - 1, hi = top;
    while (hi - lo > width) {
        const real mid = 0.5L * (lo + hi);
        if (mid == lo || mid == hi) break;
        real sum = 0;
        for (double s : scores) sum += pow_beta(a * static_cast<real>(s) - mid, beta);
        if (sum > 1) lo = mid;
        else hi = mid;
    }
    return static_cast<double>(0.5L * (lo + hi));
}

std::vector<double> softmax_multiprecision(std::span<const double> scores) {
    using mp = boost::multiprecision::cpp_dec_float_50;
    std::vector<mp> e(scores.size());
    mp sum = 0;
    for (std::size_t i = 0; i < scores.size(); ++i) {
        e[i] = boost::multiprecision::exp(mp(scores[i]));
        sum += e[i];
    }
    std::vector<double> out(scores.size());
    for (std::size_t i = 0; i < scores.size(); ++i) out[i] = static_cast<double>(e[i] / sum);
    return out;
}

MonteCarloEstimate mc_entmax_mass(double mu, double sigma, double tau, const Alpha &alpha,
                                  std::span<const double> std_normals) {
    const double a = alpha.value() - 1.0;
    const double beta = 1.0 / a;
    const long br = std::lround(beta);
    const bool int_beta = std::abs(beta - static_cast<double>(br)) < 1e-9;
    double sum = 0.0, sum_sq = 0.0;
    for (double z : std_normals) {
        const double y = a * (mu + sigma * z) - tau;
        if (y <= 0.0) continue;
        double g;
        if (int_beta && br == 1) g = y;
        else if (int_beta && br == 2) g = y * y;
        else if (int_beta && br == 3) g = y * y * y;
        else g = std::pow(y, beta);
        sum += g;
        sum_sq += g * g;
    }
    const double n = static_cast<double>(std_normals.size());
    const double mean = sum / n;
    const double var = std::max(0.0, sum_sq / n - mean * mean) * n / (n - 1.0);
    return {mean, std::sqrt(var / n)};
}

} // namespace entmaxkv::verify
