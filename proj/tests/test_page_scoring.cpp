#include "entmaxkv/page_scoring.hpp"
#include "test_util.hpp"

#include <gtest/gtest.h>

#include <cmath>

using namespace entmaxkv;
using testutil::normal_vector;
using testutil::random_cache;

TEST(BoxBound, SingleTokenPageIsExactScore) {
    const std::vector<double> k = {0.3, -1.2, 2.5, 0.0};
    const auto page = PageMetadata::from_keys(k, 4);
    const std::vector<double> q(4, 1.0);
    EXPECT_DOUBLE_EQ(box_bound(q, page), token_score(q, k));
    EXPECT_DOUBLE_EQ(token_score(q, k), (0.3 - 1.2 + 2.5) / 2.0);
}

TEST(BoxBound, MixedSignsTakeCoordinateMax) {
    const std::vector<double> keys = {-1, -1, 1, 1};
    const auto page = PageMetadata::from_keys(keys, 2);
    EXPECT_DOUBLE_EQ(box_bound(std::vector<double>{1, -1}, page), std::sqrt(2.0));
}

TEST(BoxBound, DimensionMismatch) {
    const auto page = PageMetadata::from_keys(std::vector<double>{1, 2}, 2);
    EXPECT_THROW(box_bound(std::vector<double>{1, 2, 3}, page), std::invalid_argument);
    EXPECT_THROW(gaussian_moments(std::vector<double>{1}, page), std::invalid_argument);
    EXPECT_THROW(token_score(std::vector<double>{1}, std::vector<double>{1, 2}), std::invalid_argument);
}

TEST(BoxBound, UpperBoundsEveryTokenScore) {
    bench::Rng rng(31);
    for (int t = 0; t < 10000; ++t) {
        const std::size_t d = 1 + rng.bits() % 16;
        const auto keys = normal_vector(rng, 16 * d, rng.uniform(0.1, 5.0));
        const auto page = PageMetadata::from_keys(keys, d);
        const auto q = normal_vector(rng, d, rng.uniform(0.1, 5.0));
        const double bound = box_bound(q, page);
        for (std::size_t j = 0; j < 16; ++j) {
            ASSERT_GE(bound, token_score(q, std::span<const double>(keys).subspan(j * d, d)));
        }
    }
}

TEST(GaussianMoments, SingleTokenAndZeroQuery) {
    const std::vector<double> k = {0.5, 1.5, -2.0};
    const auto page = PageMetadata::from_keys(k, 3);
    const std::vector<double> q = {1.0, -2.0, 0.25};
    const auto m = gaussian_moments(q, page);
    EXPECT_DOUBLE_EQ(m.mu, token_score(q, k));
    EXPECT_EQ(m.sigma2, 0.0);
    const auto z = gaussian_moments(std::vector<double>(3, 0.0), page);
    EXPECT_EQ(z.mu, 0.0);
    EXPECT_EQ(z.sigma2, 0.0);
}

TEST(GaussianMoments, MatchEmpiricalScoreMoments) {
    bench::Rng rng(32);
    const std::size_t d = 64, count = 1024;
    const auto keys = normal_vector(rng, count * d);
    const auto page = PageMetadata::from_keys(keys, d);
    auto q = normal_vector(rng, d);
    const double qn = testutil::norm(q);
    for (double &x : q) x /= qn;
    const auto m = gaussian_moments(q, page);

    std::vector<double> s(count);
    for (std::size_t j = 0; j < count; ++j) s[j] = token_score(q, std::span<const double>(keys).subspan(j * d, d));
    double mean = 0.0;
    for (double x : s) mean += x;
    mean /= count;
    double var = 0.0, m4 = 0.0;
    for (double x : s) {
        var += (x - mean) * (x - mean);
        m4 += std::pow(x - mean, 4);
    }
    var /= count - 1;
    m4 /= count;
    const double se_mean = std::sqrt(var / count);
    const double se_var = std::sqrt((m4 - var * var) / count);
    EXPECT_LT(std::abs(mean - m.mu), 5 * se_mean);
    EXPECT_LT(std::abs(var - m.sigma2), 5 * se_var);
}

TEST(PageScoring, PositiveScaling) {
    bench::Rng rng(33);
    const auto cache = random_cache(rng, 64, 8, 2, 16);
    const auto q = normal_vector(rng, 8);
    for (double c : {0.0, 0.5, 2.0, 10.0}) {
        std::vector<double> cq(q);
        for (double &x : cq) x *= c;
        for (std::size_t p = 0; p < cache.num_pages(); ++p) {
            const auto &page = cache.page(p);
            EXPECT_NEAR(box_bound(cq, page), c * box_bound(q, page), 1e-12 * (1 + c));
            const auto a = gaussian_moments(q, page);
            const auto b = gaussian_moments(cq, page);
            EXPECT_NEAR(b.mu, c * a.mu, 1e-12 * (1 + c));
            EXPECT_NEAR(b.sigma2, c * c * a.sigma2, 1e-12 * (1 + c * c));
        }
    }
}

TEST(PageScoring, ScorePagesAgreesWithPerPageCalls) {
    bench::Rng rng(34);
    const auto cache = random_cache(rng, 100, 8, 2, 16);
    const auto q = normal_vector(rng, 8);
    const auto scores = score_pages(q, cache);
    const auto box = box_scores(q, cache);
    ASSERT_EQ(scores.size(), cache.num_pages());
    for (std::size_t p = 0; p < cache.num_pages(); ++p) {
        EXPECT_EQ(scores.box[p], box[p]);
        EXPECT_EQ(scores.box[p], box_bound(q, cache.page(p)));
        EXPECT_EQ(scores.mu[p], gaussian_moments(q, cache.page(p)).mu);
        EXPECT_GE(scores.sigma2[p], 0.0);
    }
}
