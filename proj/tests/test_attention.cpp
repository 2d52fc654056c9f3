#include "entmaxkv/attention.hpp"
#include "test_util.hpp"

#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>

using namespace entmaxkv;
using testutil::distance;
using testutil::normal_vector;
using testutil::random_cache;

namespace {

const Transform kTransforms[] = {Transform::softmax(), Transform::entmax(Alpha::three_halves()),
                                 Transform::entmax(Alpha::sparsemax()), Transform::entmax(Alpha(1.25))};

std::vector<std::size_t> random_keep(bench::Rng &rng, std::size_t n) {
    std::vector<std::size_t> keep;
    for (std::size_t j = 0; j < n; ++j) {
        if (rng.uniform() < 0.5) keep.push_back(j);
    }
    if (keep.empty()) keep.push_back(rng.bits() % n);
    return keep;
}

} // namespace

TEST(FullAttention, SingleTokenReturnsItsValue) {
    PagedKvCache cache({3, 2, 16});
    cache.append(std::vector<double>{1, 2, 3}, std::vector<double>{-4.0, 0.5});
    for (const auto &t : kTransforms) {
        const auto out = full_attention(std::vector<double>{0.3, 0.1, -2}, cache, t);
        EXPECT_EQ(out.output, (std::vector<double>{-4.0, 0.5}));
    }
}

TEST(FullAttention, AlignedQuerySaturatesOnOneValue) {
    PagedKvCache cache({4, 2, 2});
    for (std::size_t j = 0; j < 4; ++j) {
        std::vector<double> k(4, 0.0);
        k[j] = 1.0;
        cache.append(k, std::vector<double>{static_cast<double>(j), 1.0});
    }
    double prev_err = INFINITY;
    for (double c : {0.5, 1.0, 2.0, 8.0}) {
        const std::vector<double> q = {0, 0, 0, c};
        const auto out = full_attention(q, cache, Transform::entmax(Alpha::sparsemax()));
        const double err = distance(out.output, {3.0, 1.0});
        EXPECT_LE(err, prev_err);
        prev_err = err;
    }
    EXPECT_EQ(prev_err, 0.0);
}

TEST(FullAttention, OutputIsWeightedValueSum) {
    bench::Rng rng(41);
    const auto cache = random_cache(rng, 256, 16, 8, 16);
    const auto q = normal_vector(rng, 16);
    for (const auto &t : kTransforms) {
        const auto out = full_attention(q, cache, t);
        ASSERT_EQ(out.tokens.size(), 256u);
        std::vector<double> o(8, 0.0);
        for (std::size_t j = 0; j < 256; ++j) {
            EXPECT_DOUBLE_EQ(out.scores[j], token_score(q, cache.key(j)));
            for (std::size_t c = 0; c < 8; ++c) o[c] += out.dist.probs[j] * cache.value(j)[c];
        }
        EXPECT_LT(distance(o, out.output), 1e-10);
    }
}

TEST(FullAttention, Errors) {
    PagedKvCache cache({2, 2, 4});
    EXPECT_THROW(full_attention(std::vector<double>{1, 1}, cache, Transform::softmax()), std::invalid_argument);
    cache.append(std::vector<double>{1, 1}, std::vector<double>{1, 1});
    EXPECT_THROW(full_attention(std::vector<double>{1}, cache, Transform::softmax()), std::invalid_argument);
}

TEST(SparseAttention, AllPagesEqualsFull) {
    bench::Rng rng(42);
    const auto cache = random_cache(rng, 256, 16, 8, 16);
    const auto q = normal_vector(rng, 16);
    for (const auto &t : kTransforms) {
        const auto full = full_attention(q, cache, t);
        const auto sparse = sparse_attention(q, cache, select_all(cache), t);
        EXPECT_EQ(sparse.output, full.output);
        EXPECT_EQ(sparse.dist.probs, full.dist.probs);
    }
}

TEST(SparseAttention, EmptySelectionIsAnError) {
    bench::Rng rng(43);
    const auto cache = random_cache(rng, 8, 2, 2, 4);
    EXPECT_THROW(sparse_attention(std::vector<double>{1, 1}, cache, SelectionResult{}, Transform::softmax()),
                 std::invalid_argument);
}

TEST(SparseAttention, DominantKeyPageMatchesFullEntmax) {
    bench::Rng rng(44);
    auto cache = PagedKvCache({8, 4, 16});
    const auto q = normal_vector(rng, 8);
    const double qn = testutil::norm(q);
    for (std::size_t j = 0; j < 128; ++j) {
        auto k = normal_vector(rng, 8, 0.3);
        if (j == 70) {
            for (std::size_t i = 0; i < 8; ++i) k[i] = 20.0 * q[i] / qn;
        }
        cache.append(k, normal_vector(rng, 4));
    }
    const auto t = Transform::entmax(Alpha::sparsemax());
    const auto full = full_attention(q, cache, t);
    ASSERT_EQ(full.dist.support, std::vector<std::size_t>{70});
    const auto sel = make_selection(cache, {70 / 16}, SelectorKind::topk);
    const auto sparse = sparse_attention(q, cache, sel, t);
    EXPECT_LT(distance(sparse.output, full.output), 1e-10);
}

TEST(SparseAttention, StrictSoftmaxTruncationChangesOutput) {
    bench::Rng rng(45);
    const auto cache = random_cache(rng, 64, 8, 4, 16);
    const auto q = normal_vector(rng, 8);
    const auto full = full_attention(q, cache, Transform::softmax());
    const auto sel = make_selection(cache, {0, 2}, SelectorKind::topk);
    const auto sparse = sparse_attention(q, cache, sel, Transform::softmax());
    EXPECT_GT(distance(sparse.output, full.output), 0.0);
    const auto trunc = truncate_renormalize(full, sel.tokens, cache);
    EXPECT_GT(trunc.delta, 0.0);
}

TEST(SparseAttention, WarmStartDoesNotChangeResult) {
    bench::Rng rng(46);
    const auto cache = random_cache(rng, 512, 8, 4, 16);
    const auto q = normal_vector(rng, 8);
    const auto t = Transform::entmax(Alpha::three_halves());
    auto sel = make_selection(cache, {1, 4, 9, 20}, SelectorKind::gaussian);
    const auto cold = sparse_attention(q, cache, sel, t);
    sel.tau_hat = cold.dist.tau + 0.05;
    const auto warm = sparse_attention(q, cache, sel, t);
    EXPECT_NEAR(warm.dist.tau, cold.dist.tau, 1e-11);
    EXPECT_LT(distance(warm.output, cold.output), 1e-10);
}

TEST(Truncation, KeepAllIsIdentity) {
    bench::Rng rng(47);
    const auto cache = random_cache(rng, 40, 4, 3, 8);
    const auto full = full_attention(normal_vector(rng, 4), cache, Transform::softmax());
    std::vector<std::size_t> all(40);
    for (std::size_t j = 0; j < 40; ++j) all[j] = j;
    const auto t = truncate_renormalize(full, all, cache);
    EXPECT_EQ(t.delta, 0.0);
    EXPECT_EQ(t.result.output, full.output);
}

TEST(Truncation, TwoTokenConstructionIsTight) {
    const double B = 3.0, delta = 0.2;
    const std::vector<double> u = {0.6, 0.8};
    PagedKvCache cache({1, 2, 2});
    // Sparsemax over scores (s0, s1) with s0 - s1 = 1 - 2 delta gives (1 - delta, delta).
    cache.append(std::vector<double>{1.0 - 2.0 * delta}, std::vector<double>{B * u[0], B * u[1]});
    cache.append(std::vector<double>{0.0}, std::vector<double>{-B * u[0], -B * u[1]});
    const auto full = full_attention(std::vector<double>{1.0}, cache, Transform::entmax(Alpha::sparsemax()));
    ASSERT_NEAR(full.dist.probs[1], delta, 1e-15);
    const std::vector<std::size_t> keep = {0};
    const auto t = truncate_renormalize(full, keep, cache);
    EXPECT_NEAR(t.delta, delta, 1e-15);
    EXPECT_NEAR(distance(full.output, t.result.output), 2.0 * B * delta, 1e-12);
}

TEST(Truncation, BoundHoldsOnRandomInstances) {
    bench::Rng rng(48);
    for (int trial = 0; trial < 2000; ++trial) {
        const std::size_t n = 1 + rng.bits() % 64;
        const auto cache = random_cache(rng, n, 4, 3, 1 + rng.bits() % 16);
        const auto &t = kTransforms[trial % 4];
        const auto full = full_attention(normal_vector(rng, 4, rng.uniform(0.1, 6.0)), cache, t);
        const auto keep = random_keep(rng, n);
        double kept_mass = 0.0;
        for (std::size_t j : keep) kept_mass += full.dist.probs[j];
        if (kept_mass <= 0.0) continue;
        const auto tr = truncate_renormalize(full, keep, cache);
        double B = 0.0;
        for (std::size_t j = 0; j < n; ++j) B = std::max(B, testutil::norm({cache.value(j).begin(), cache.value(j).end()}));
        ASSERT_LE(distance(full.output, tr.result.output), 2.0 * B * tr.delta + 1e-9);
    }
}

TEST(Truncation, DegenerateIsAnError) {
    PagedKvCache cache({1, 1, 2});
    cache.append(std::vector<double>{5.0}, std::vector<double>{1.0});
    cache.append(std::vector<double>{0.0}, std::vector<double>{1.0});
    const auto full = full_attention(std::vector<double>{1.0}, cache, Transform::entmax(Alpha::sparsemax()));
    ASSERT_EQ(full.dist.probs[1], 0.0);
    const std::vector<std::size_t> keep = {1};
    try {
        truncate_renormalize(full, keep, cache);
        FAIL();
    } catch (const std::invalid_argument &e) {
        EXPECT_STREQ(e.what(), "degenerate truncation");
    }
}

TEST(Truncation, SoftmaxRenormalizationEqualsRestrictedSoftmax) {
    bench::Rng rng(49);
    for (int trial = 0; trial < 200; ++trial) {
        const auto cache = random_cache(rng, 96, 8, 4, 8);
        const auto q = normal_vector(rng, 8, 2.0);
        const auto full = full_attention(q, cache, Transform::softmax());
        std::vector<std::size_t> pages;
        for (std::size_t p = 0; p < cache.num_pages(); ++p) {
            if (rng.uniform() < 0.4) pages.push_back(p);
        }
        if (pages.empty()) pages.push_back(0);
        const auto sel = make_selection(cache, pages, SelectorKind::topk);
        const auto sparse = sparse_attention(q, cache, sel, Transform::softmax());
        const auto tr = truncate_renormalize(full, sel.tokens, cache);
        ASSERT_LT(distance(sparse.output, tr.result.output), 1e-10);
        for (std::size_t i = 0; i < sel.tokens.size(); ++i) {
            ASSERT_NEAR(sparse.dist.probs[i], tr.result.dist.probs[i], 1e-12);
        }
    }
}

TEST(Truncation, EntmaxRestrictionConsistencyWhenSupportCovered) {
    bench::Rng rng(50);
    for (int trial = 0; trial < 500; ++trial) {
        const Transform t = kTransforms[1 + trial % 3];
        const auto cache = random_cache(rng, 16 + rng.bits() % 200, 8, 4, 1 + rng.bits() % 16);
        const auto q = normal_vector(rng, 8, rng.uniform(0.5, 5.0));
        const auto full = full_attention(q, cache, t);
        std::vector<std::size_t> pages;
        for (std::size_t p = 0; p < cache.num_pages(); ++p) {
            const auto r = cache.page_tokens(p);
            bool has_support = false;
            for (std::size_t j = r.begin; j < r.end; ++j) has_support |= full.dist.probs[j] > 0.0;
            if (has_support || rng.uniform() < 0.2) pages.push_back(p);
        }
        const auto sel = make_selection(cache, pages, SelectorKind::topk);
        const auto sparse = sparse_attention(q, cache, sel, t);
        const auto tr = truncate_renormalize(full, sel.tokens, cache);
        ASSERT_EQ(tr.delta, 0.0);
        ASSERT_LT(distance(sparse.output, full.output), 1e-10);
        for (std::size_t i = 0; i < sel.tokens.size(); ++i) {
            ASSERT_NEAR(sparse.dist.probs[i], full.dist.probs[sel.tokens[i]], 1e-10);
            ASSERT_NEAR(sparse.dist.probs[i], tr.result.dist.probs[i], 1e-10);
        }
    }
}
