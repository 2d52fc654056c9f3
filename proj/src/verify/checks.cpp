#include "entmaxkv/verify/checks.hpp"

#include "entmaxkv/attention.hpp"
#include "entmaxkv/bench.hpp"
#include "entmaxkv/page_scoring.hpp"
#include "entmaxkv/selection.hpp"
#include "entmaxkv/verify/oracles.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <limits>
#include <sstream>

namespace entmaxkv::verify {

namespace {

using bench::Rng;

const std::array<Alpha, 3> kClosedFormAlphas = {Alpha::four_thirds(), Alpha::three_halves(), Alpha::sparsemax()};

std::size_t pick(Rng &rng, std::size_t lo, std::size_t hi) {
    return lo + static_cast<std::size_t>(rng.bits() % (hi - lo + 1));
}

Alpha any_alpha(Rng &rng) {
    static const std::array<double, 6> values = {4.0 / 3.0, 1.5, 2.0, 1.25, 1.75, 3.0};
    return Alpha(values[pick(rng, 0, values.size() - 1)]);
}

struct Instance {
    PagedKvCache cache;
    std::vector<double> query;
};

// Random cache with per-instance key and value scales so supports range from
// singletons to most of the cache.
Instance random_instance(Rng &rng, std::size_t max_n, std::size_t max_page, std::size_t max_d) {
    const std::size_t n = pick(rng, 1, max_n);
    const std::size_t d = pick(rng, 1, max_d);
    const std::size_t dv = pick(rng, 1, 8);
    const std::size_t page = pick(rng, 1, max_page);
    Instance inst{PagedKvCache(CacheConfig{d, dv, page}), std::vector<double>(d)};
    const double qscale = rng.uniform(0.2, 6.0);
    for (double &q : inst.query) q = qscale * rng.normal();
    const double vscale = rng.uniform(0.1, 10.0);
    std::vector<double> key(d), value(dv);
    for (std::size_t j = 0; j < n; ++j) {
        for (double &k : key) k = rng.normal();
        for (double &v : value) v = vscale * rng.normal();
        inst.cache.append(key, value);
    }
    return inst;
}

double l2_diff(std::span<const double> a, std::span<const double> b) {
    double s = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) s += (a[i] - b[i]) * (a[i] - b[i]);
    return std::sqrt(s);
}

std::string fmt(double x) {
    std::ostringstream os;
    os.precision(4);
    os << x;
    return os.str();
}

} // namespace

CheckResult check_entmax_oracle(std::size_t vectors, std::uint64_t seed) {
    Rng rng(seed);
    double worst = 0.0;
    for (std::size_t t = 0; t < vectors; ++t) {
        const Alpha alpha = kClosedFormAlphas[t % 3];
        const std::size_t n = pick(rng, 1, 24);
        const double scale = rng.uniform(0.25, 6.0);
        std::vector<double> s(n);
        for (double &x : s) x = rng.uniform(-scale, scale);
        const auto got = entmax(s, alpha).probs;
        const auto want = prefix_entmax(s, alpha);
        for (std::size_t i = 0; i < n; ++i) worst = std::max(worst, std::abs(got[i] - want[i]));
    }
    return {"entmax matches prefix-enumeration oracle", worst <= 1e-10,
            std::to_string(vectors) + " vectors, max |diff| = " + fmt(worst)};
}

CheckResult check_truncation_bound(std::size_t instances, std::uint64_t seed) {
    Rng rng(seed);
    double min_slack = std::numeric_limits<double>::infinity();
    std::size_t evaluated = 0;
    for (std::size_t t = 0; t < instances; ++t) {
        Instance inst = random_instance(rng, 64, 8, 8);
        const Transform tr = rng.uniform() < 0.5 ? Transform::softmax() : Transform::entmax(any_alpha(rng));
        const AttentionOutput full = full_attention(inst.query, inst.cache, tr);
        const double keep_prob = rng.uniform(0.05, 0.95);
        const std::size_t anchor = static_cast<std::size_t>(
            std::max_element(full.dist.probs.begin(), full.dist.probs.end()) - full.dist.probs.begin());
        std::vector<std::size_t> keep;
        for (std::size_t j = 0; j < inst.cache.size(); ++j) {
            if (j == anchor || rng.uniform() < keep_prob) keep.push_back(j);
        }
        const Truncation trunc = truncate_renormalize(full, keep, inst.cache);
        const double err = l2_diff(full.output, trunc.result.output);
        min_slack = std::min(min_slack, 2.0 * max_value_norm(inst.cache) * trunc.delta - err);
        ++evaluated;
    }

    // Two tokens with p = (1 - delta, delta) and values B u, -B u; keep the first.
    const double bound_b = 3.0, delta = 0.2;
    PagedKvCache two(CacheConfig{1, 2, 2});
    const double u0 = 0.6, u1 = 0.8;
    two.append(std::vector<double>{0.0}, std::vector<double>{bound_b * u0, bound_b * u1});
    two.append(std::vector<double>{0.0}, std::vector<double>{-bound_b * u0, -bound_b * u1});
    AttentionOutput full;
    full.transform = Transform::softmax();
    full.tokens = {0, 1};
    full.scores = {0.0, 0.0};
    full.dist.probs = {1.0 - delta, delta};
    full.dist.support = {0, 1};
    full.output = weighted_values(two, full.tokens, full.dist.probs);
    const std::vector<std::size_t> keep = {0};
    const Truncation tight = truncate_renormalize(full, keep, two);
    const double gap = std::abs(l2_diff(full.output, tight.result.output) - 2.0 * bound_b * delta);

    const bool ok = min_slack >= -1e-9 && gap <= 1e-12;
    return {"truncation error <= 2 B delta, tight on opposite values", ok,
            std::to_string(evaluated) + " instances, min slack = " + fmt(min_slack) + ", tightness gap = " + fmt(gap)};
}

CheckResult check_exact_sparse(std::size_t instances, std::uint64_t seed) {
    Rng rng(seed);
    double worst = 0.0;
    std::size_t nonzero_delta = 0;
    for (std::size_t t = 0; t < instances; ++t) {
        Instance inst = random_instance(rng, 256, 16, 16);
        const Transform tr = Transform::entmax(any_alpha(rng));
        const AttentionOutput full = full_attention(inst.query, inst.cache, tr);
        std::vector<std::size_t> pages;
        const std::size_t page_size = inst.cache.config().page_size;
        for (std::size_t j : full.dist.support) pages.push_back(j / page_size);
        const double extra = rng.uniform(0.0, 0.5);
        for (std::size_t p = 0; p < inst.cache.num_pages(); ++p) {
            if (rng.uniform() < extra) pages.push_back(p);
        }
        const SelectionResult sel = make_selection(inst.cache, pages, SelectorKind::all);
        const AttentionOutput sparse = sparse_attention(inst.query, inst.cache, sel, tr);
        const ApproxReport report = evaluate_step(full, sparse, sel, inst.cache);
        if (report.delta != 0.0) ++nonzero_delta;
        for (std::size_t c = 0; c < full.output.size(); ++c) {
            worst = std::max(worst, std::abs(full.output[c] - sparse.output[c]));
        }
    }
    return {"support-covering selection is exact", nonzero_delta == 0 && worst <= 1e-10,
            std::to_string(instances) + " instances, nonzero delta = " + std::to_string(nonzero_delta) +
                ", max |o - o~| = " + fmt(worst)};
}

CheckResult check_box_soundness(std::size_t pairs, std::uint64_t seed) {
    Rng rng(seed);
    std::size_t violations = 0;
    for (std::size_t t = 0; t < pairs; ++t) {
        const std::size_t d = pick(rng, 1, 64);
        const std::size_t count = pick(rng, 1, 32);
        std::vector<double> keys(count * d), query(d);
        const double kscale = rng.uniform(0.1, 10.0);
        for (double &k : keys) k = kscale * rng.normal();
        for (double &q : query) q = rng.normal();
        const PageMetadata meta = PageMetadata::from_keys(keys, d);
        const double bound = box_bound(query, meta);
        for (std::size_t j = 0; j < count; ++j) {
            if (token_score(query, std::span<const double>(keys).subspan(j * d, d)) > bound) ++violations;
        }
    }
    return {"box bound dominates every token score", violations == 0,
            std::to_string(pairs) + " pairs, violations = " + std::to_string(violations)};
}

CheckResult check_superset(std::size_t instances, std::uint64_t seed) {
    Rng rng(seed);
    std::size_t violations = 0;
    for (std::size_t t = 0; t < instances; ++t) {
        Instance inst = random_instance(rng, 512, 32, 16);
        const Alpha alpha = any_alpha(rng);
        const AttentionOutput full = full_attention(inst.query, inst.cache, Transform::entmax(alpha));
        const double tau_lower = full.dist.tau - (rng.uniform() < 0.5 ? 0.0 : rng.uniform(0.0, 1.0));
        const SelectionResult sel =
            conservative_box_select(inst.cache, box_scores(inst.query, inst.cache), tau_lower, alpha);
        for (std::size_t j : full.dist.support) {
            if (!std::binary_search(sel.tokens.begin(), sel.tokens.end(), j)) ++violations;
        }
    }
    return {"conservative box selection keeps the whole support", violations == 0,
            std::to_string(instances) + " instances, dropped support tokens = " + std::to_string(violations)};
}

CheckResult check_closed_form_mc(std::size_t triples_per_alpha, std::size_t samples, std::uint64_t seed) {
    Rng rng(seed);
    std::vector<double> z(samples);
    for (double &x : z) x = rng.normal();
    double worst_z = 0.0;
    std::size_t failures = 0;
    for (const Alpha &alpha : kClosedFormAlphas) {
        for (std::size_t t = 0; t < triples_per_alpha; ++t) {
            const double mu = rng.uniform(-2.0, 2.0);
            const double sigma = rng.uniform(0.1, 2.0);
            // Truncation point at mu + sigma * cut keeps plenty of samples on both sides.
            const double cut = rng.uniform(-2.0, 2.0);
            const double tau = alpha.scale() * (mu + sigma * cut);
            const double closed = expected_entmax_mass(mu, sigma, tau, alpha);
            const MonteCarloEstimate mc = mc_entmax_mass(mu, sigma, tau, alpha, z);
            const double zscore = std::abs(closed - mc.mean) / mc.std_error;
            worst_z = std::max(worst_z, zscore);
            if (zscore > 5.0) ++failures;
        }
    }
    return {"closed-form truncated moments match Monte Carlo", failures == 0,
            std::to_string(3 * triples_per_alpha) + " triples x " + std::to_string(samples) +
                " samples, worst |z| = " + fmt(worst_z)};
}

CheckResult check_distributional_tau(std::size_t workloads, std::uint64_t seed, double alpha_value) {
    bench::BenchConfig config;
    config.seed = seed;
    config.page_size = 128;
    config.workload = bench::WorkloadKind::gaussian;
    const Alpha alpha(alpha_value);
    std::vector<double> errors;
    for (std::size_t w = 0; w < workloads; ++w) {
        const bench::Workload work = bench::generate_workload(config, 1024, w, 0);
        const PageScores scores = score_pages(work.query, work.cache);
        std::vector<PageGaussian> pages;
        for (std::size_t p = 0; p < work.cache.num_pages(); ++p) {
            pages.push_back({scores.mu[p], std::sqrt(scores.sigma2[p]), work.cache.page(p).token_count});
        }
        const double tau_hat = solve_distributional_tau(pages, alpha);
        std::vector<double> exact_scores;
        for (std::size_t j = 0; j < work.cache.size(); ++j) exact_scores.push_back(token_score(work.query, work.cache.key(j)));
        errors.push_back(std::abs(tau_hat - solve_entmax_threshold(exact_scores, alpha)));
    }
    std::sort(errors.begin(), errors.end());
    const double med = errors.size() % 2 ? errors[errors.size() / 2]
                                         : 0.5 * (errors[errors.size() / 2 - 1] + errors[errors.size() / 2]);
    return {"distributional threshold tracks the exact threshold", med < 0.1,
            std::to_string(workloads) + " workloads (8 x 128), median |tau_hat - tau| = " + fmt(med) +
                ", max = " + fmt(errors.back())};
}

std::vector<CheckResult> run_selftest(std::uint64_t seed) {
    return {
        check_entmax_oracle(200, seed + 1),
        check_truncation_bound(2000, seed + 2),
        check_exact_sparse(300, seed + 3),
        check_box_soundness(1000, seed + 4),
        check_superset(300, seed + 5),
        check_closed_form_mc(3, 200000, seed + 6),
        check_distributional_tau(15, seed + 7),
    };
}

} // namespace entmaxkv::verify
