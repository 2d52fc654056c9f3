#include "entmaxkv/metrics.hpp"
#include "test_util.hpp"

#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>

using namespace entmaxkv;
using testutil::normal_vector;
using testutil::random_cache;

TEST(EvaluateStep, FullCoverage) {
    bench::Rng rng(61);
    const auto cache = random_cache(rng, 128, 8, 4, 16);
    const auto q = normal_vector(rng, 8);
    for (const auto &t : {Transform::softmax(), Transform::entmax(Alpha(1.5))}) {
        const auto full = full_attention(q, cache, t);
        const auto sel = select_all(cache);
        const auto r = evaluate_step(full, sparse_attention(q, cache, sel, t), sel, cache);
        EXPECT_EQ(r.delta, 0.0);
        EXPECT_EQ(r.rho, 1.0);
        EXPECT_EQ(r.rel_error, 0.0);
        EXPECT_EQ(r.coverage, 1.0);
        EXPECT_EQ(r.kv_bytes_sparse, r.kv_bytes_full);
        EXPECT_EQ(r.kv_bytes_full, 128u * 12 * 2);
    }
}

TEST(EvaluateStep, SupportCoveredEntmaxIsExact) {
    bench::Rng rng(62);
    for (int trial = 0; trial < 200; ++trial) {
        const auto cache = random_cache(rng, 256, 8, 4, 16);
        const auto q = normal_vector(rng, 8, 3.0);
        const auto t = Transform::entmax(Alpha::sparsemax());
        const auto full = full_attention(q, cache, t);
        std::vector<std::size_t> pages;
        for (std::size_t j : full.dist.support) pages.push_back(j / 16);
        pages.erase(std::unique(pages.begin(), pages.end()), pages.end());
        const auto sel = make_selection(cache, pages, SelectorKind::topk);
        const auto r = evaluate_step(full, sparse_attention(q, cache, sel, t), sel, cache);
        ASSERT_EQ(r.delta, 0.0);
        ASSERT_EQ(r.rho, 1.0);
        ASSERT_LE(r.rel_error, 1e-9);
        ASSERT_GE(r.bound_slack, -1e-9);
        ASSERT_EQ(r.support_reference, SupportReference::entmax_full);
    }
}

TEST(EvaluateStep, SoftmaxRhoUsesEntmaxSupportOfSameScores) {
    bench::Rng rng(63);
    const auto cache = random_cache(rng, 256, 8, 4, 16);
    const auto q = normal_vector(rng, 8, 3.0);
    const auto full = full_attention(q, cache, Transform::softmax());
    const auto sel = make_selection(cache, {0, 3}, SelectorKind::topk);
    EvaluateOptions opts;
    opts.rho_alpha = Alpha::sparsemax();
    const auto r = evaluate_step(full, sparse_attention(q, cache, sel, Transform::softmax()), sel, cache, opts);
    const auto support = entmax(full.scores, Alpha::sparsemax()).support;
    const auto hits = std::count_if(support.begin(), support.end(), [](std::size_t j) { return j < 16 || (j >= 48 && j < 64); });
    EXPECT_EQ(r.support_reference, SupportReference::entmax_of_softmax_scores);
    EXPECT_EQ(r.support_size, support.size());
    EXPECT_DOUBLE_EQ(r.rho, static_cast<double>(hits) / static_cast<double>(support.size()));
    EXPECT_GT(r.delta, 0.0);
    EXPECT_GE(r.bound_slack, -1e-9);
    EXPECT_EQ(to_string(r.support_reference), "entmax-of-scores");
}

TEST(EvaluateStep, TrafficCountersAndCoverage) {
    bench::Rng rng(64);
    const auto cache = random_cache(rng, 160, 8, 4, 16);
    const auto q = normal_vector(rng, 8);
    const auto t = Transform::entmax(Alpha(1.5));
    const auto full = full_attention(q, cache, t);
    const auto sel = make_selection(cache, {2, 5}, SelectorKind::topk);
    const auto r = evaluate_step(full, sparse_attention(q, cache, sel, t), sel, cache);
    EXPECT_EQ(r.coverage, 0.2);
    EXPECT_EQ(r.kv_bytes_full, 160u * 12 * 2);
    EXPECT_EQ(r.kv_bytes_sparse, 32u * 12 * 2 + 10u * kBoxMetadataFields * 8 * 2);
    EXPECT_EQ(metadata_fields_for(SelectorKind::all), 0u);
    EXPECT_EQ(metadata_fields_for(SelectorKind::gaussian), kGaussianMetadataFields);
}

TEST(EvaluateStep, TransformMismatchIsAnError) {
    bench::Rng rng(65);
    const auto cache = random_cache(rng, 32, 4, 2, 16);
    const auto q = normal_vector(rng, 4);
    const auto sel = select_all(cache);
    const auto a = full_attention(q, cache, Transform::softmax());
    const auto b = full_attention(q, cache, Transform::entmax(Alpha(1.5)));
    const auto c = full_attention(q, cache, Transform::entmax(Alpha(2.0)));
    EXPECT_THROW(evaluate_step(a, b, sel, cache), std::invalid_argument);
    EXPECT_THROW(evaluate_step(b, c, sel, cache), std::invalid_argument);
}

TEST(EvaluateStep, ZeroNormOutputConvention) {
    PagedKvCache cache({1, 1, 1});
    cache.append(std::vector<double>{1.0}, std::vector<double>{1.0});
    cache.append(std::vector<double>{1.0}, std::vector<double>{-1.0});
    const std::vector<double> q = {1.0};
    const auto t = Transform::softmax();
    const auto full = full_attention(q, cache, t);
    ASSERT_LT(std::abs(full.output[0]), 1e-12);
    const auto sel = make_selection(cache, {0}, SelectorKind::topk);
    const auto r = evaluate_step(full, sparse_attention(q, cache, sel, t), sel, cache);
    EXPECT_TRUE(r.rel_error_is_absolute);
    EXPECT_NEAR(r.rel_error, 1.0, 1e-12);
    const auto all = select_all(cache);
    const auto r2 = evaluate_step(full, sparse_attention(q, cache, all, t), all, cache);
    EXPECT_FALSE(r2.rel_error_is_absolute);
    EXPECT_EQ(r2.rel_error, 0.0);
}

// A low-mass support token is dropped: rho falls, the output barely moves.
TEST(EvaluateStep, RhoAndErrorDecouple) {
    PagedKvCache cache({1, 2, 1});
    cache.append(std::vector<double>{1.0}, std::vector<double>{1.0, 0.0});
    cache.append(std::vector<double>{1.0}, std::vector<double>{0.0, 1.0});
    cache.append(std::vector<double>{0.5 + 1e-4}, std::vector<double>{0.5, 0.5});
    const std::vector<double> q = {1.0};
    const auto t = Transform::entmax(Alpha::sparsemax());
    const auto full = full_attention(q, cache, t);
    ASSERT_EQ(full.dist.support.size(), 3u);
    const auto sel = make_selection(cache, {0, 1}, SelectorKind::topk);
    const auto r = evaluate_step(full, sparse_attention(q, cache, sel, t), sel, cache);
    EXPECT_NEAR(r.rho, 2.0 / 3.0, 1e-15);
    EXPECT_GT(r.delta, 0.0);
    EXPECT_LT(r.rel_error, 1e-3);
}

TEST(Advantage, Examples) {
    const std::vector<double> s = {2.0, 1.5, 0.0, -1.0};
    const auto sm = softmax(s);
    const auto ent = entmax(s, Alpha::sparsemax());
    const auto none = advantage_decomposition(sm, ent, std::vector<std::size_t>{});
    EXPECT_EQ(none.support_miss, 0.0);
    EXPECT_EQ(none.tail, 0.0);
    const std::vector<std::size_t> drop = {2, 3};
    const auto t = advantage_decomposition(sm, ent, drop);
    EXPECT_EQ(t.support_miss, 0.0);
    EXPECT_DOUBLE_EQ(t.tail, sm.probs[2] + sm.probs[3]);
    AttentionDist short_dist;
    short_dist.probs = {1.0};
    EXPECT_THROW(advantage_decomposition(sm, short_dist, drop), std::invalid_argument);
}

TEST(Advantage, IdentityAndNonnegativeTail) {
    bench::Rng rng(66);
    for (int trial = 0; trial < 2000; ++trial) {
        const std::size_t n = 1 + rng.bits() % 128;
        const auto s = normal_vector(rng, n, rng.uniform(0.1, 5.0));
        const auto sm = softmax(s);
        const auto ent = entmax(s, trial % 2 ? Alpha(1.5) : Alpha(2.0));
        std::vector<std::size_t> drop;
        for (std::size_t i = 0; i < n; ++i) {
            if (rng.uniform() < 0.5) drop.push_back(i);
        }
        double d_sm = 0.0, d_ent = 0.0;
        for (std::size_t i : drop) {
            d_sm += sm.probs[i];
            d_ent += ent.probs[i];
        }
        const auto t = advantage_decomposition(sm, ent, drop);
        ASSERT_NEAR(d_sm - d_ent, t.support_miss + t.tail, 1e-10);
        ASSERT_GE(t.tail, 0.0);
    }
}

TEST(MaxValueNorm, Basic) {
    PagedKvCache cache({1, 2, 4});
    cache.append(std::vector<double>{0.0}, std::vector<double>{3.0, 4.0});
    cache.append(std::vector<double>{0.0}, std::vector<double>{1.0, 1.0});
    EXPECT_EQ(max_value_norm(cache), 5.0);
}
