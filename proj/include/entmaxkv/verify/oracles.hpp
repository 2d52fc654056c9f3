#pragma once

// Reference computations used only to check the library. None of them call
// into the threshold solvers or closed forms they are checked against.

#include "entmaxkv/entmax.hpp"

#include <span>
#include <vector>

namespace entmaxkv::verify {

/// alpha-entmax by support enumeration: for each sorted prefix, solve the
/// normalization with the support fixed to that prefix (closed form for
/// beta = 1, 2; long-double bisection otherwise) and keep the prefix whose
/// threshold is consistent with it.
std::vector<double> prefix_entmax(std::span<const double> scores, const Alpha &alpha);

/// Threshold by plain long-double bisection on the full residual.
double bisection_threshold(std::span<const double> scores, const Alpha &alpha, double width = 1e-14);

/// Softmax evaluated in 50-digit decimal arithmetic, rounded to double.
std::vector<double> softmax_multiprecision(std::span<const double> scores);

struct MonteCarloEstimate {
    double mean = 0.0;
    double std_error = 0.0;
};

/// Sample mean of [(a S - tau)_+]^beta with S = mu + sigma * z over the given
/// standard normal draws.
MonteCarloEstimate mc_entmax_mass(double mu, double sigma, double tau, const Alpha &alpha,
                                  std::span<const double> std_normals);

} // namespace entmaxkv::verify
