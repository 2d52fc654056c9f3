#pragma once

namespace entmaxkv::normal {

/// Standard normal density.
double pdf(double x) noexcept;

/// Standard normal CDF, via 0.5 * erfc(-x / sqrt(2)).
double cdf(double x) noexcept;

/// Inverse standard normal CDF on (0, 1).
///
/// Acklam's rational approximation (relative error ~1.15e-9) followed by one
/// Newton step against cdf(). Throws std::domain_error outside (0, 1).
double quantile(double p);

} // namespace entmaxkv::normal
