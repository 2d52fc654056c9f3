#pragma once

#include "entmaxkv/bench.hpp"
#include "entmaxkv/paged_cache.hpp"

#include <cmath>
#include <vector>

namespace testutil {

inline std::vector<double> normal_vector(entmaxkv::bench::Rng &rng, std::size_t n, double scale = 1.0) {
    std::vector<double> v(n);
    for (double &x : v) x = scale * rng.normal();
    return v;
}

inline entmaxkv::PagedKvCache random_cache(entmaxkv::bench::Rng &rng, std::size_t n, std::size_t d,
                                           std::size_t dv, std::size_t page_size) {
    entmaxkv::PagedKvCache cache({d, dv, page_size});
    for (std::size_t j = 0; j < n; ++j) cache.append(normal_vector(rng, d), normal_vector(rng, dv));
    return cache;
}

inline double norm(const std::vector<double> &v) {
    double s = 0.0;
    for (double x : v) s += x * x;
    return std::sqrt(s);
}

inline double distance(const std::vector<double> &a, const std::vector<double> &b) {
    double s = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) s += (a[i] - b[i]) * (a[i] - b[i]);
    return std::sqrt(s);
}

} // namespace testutil
