#pragma once

// Randomized property checks over the library, parameterized by instance
// count so `bench selftest` can run them small and the acceptance suite can
// run them at full size.

#include <cstddef>
#include <cstdint>
#include <string>
#include <vector>

namespace entmaxkv::verify {

struct CheckResult {
    std::string name;
    bool passed = false;
    std::string detail;
};

/// Entmax vs prefix enumeration, n <= 24, alpha in {4/3, 3/2, 2}; max entry error <= 1e-10.
CheckResult check_entmax_oracle(std::size_t vectors, std::uint64_t seed);

/// ||o - o~|| <= 2 B delta (slack >= -1e-9) on random truncations, and the
/// two-token opposite-values instance reaches equality within 1e-12.
CheckResult check_truncation_bound(std::size_t instances, std::uint64_t seed);

/// Kept pages cover the entmax support: delta == 0 exactly and the sparse
/// output matches the full output within 1e-10.
CheckResult check_exact_sparse(std::size_t instances, std::uint64_t seed);

/// Box bound >= every token score in its page; zero violations allowed.
CheckResult check_box_soundness(std::size_t pairs, std::uint64_t seed);

/// Conservative box selection at tau_lower <= tau keeps every support token.
CheckResult check_superset(std::size_t instances, std::uint64_t seed);

/// Closed-form truncated Gaussian mass vs Monte Carlo within 5 standard
/// errors, for each closed-form alpha.
CheckResult check_closed_form_mc(std::size_t triples_per_alpha, std::size_t samples, std::uint64_t seed);

/// Median |tau_hat - tau_exact| < 0.1 over seeded Gaussian workloads of
/// 8 pages x 128 tokens.
CheckResult check_distributional_tau(std::size_t workloads, std::uint64_t seed, double alpha = 1.5);

/// Small-count versions of every check above.
std::vector<CheckResult> run_selftest(std::uint64_t seed = 0);

} // namespace entmaxkv::verify
