#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <span>
#include <vector>

namespace entmaxkv {

struct CacheConfig {
    std::size_t head_dim = 64;   // d
    std::size_t value_dim = 64;  // d_v
    std::size_t page_size = 16;  // P

    void validate() const;
};

/// Per-page key summary. k_min/k_max bound every owned key coordinate-wise;
/// k_avg/m2 are first and second coordinate moments and
/// k_std = sqrt(max(0, m2 - k_avg^2)).
struct PageMetadata {
    std::vector<double> k_min;
    std::vector<double> k_max;
    std::vector<double> k_avg;
    std::vector<double> m2;
    std::vector<double> k_std;
    std::size_t token_count = 0;

    /// Builds metadata from scratch over `count` keys stored row-major.
    static PageMetadata from_keys(std::span<const double> keys, std::size_t dim);
};

/// Half-open token range [begin, end).
struct TokenRange {
    std::size_t begin = 0;
    std::size_t end = 0;

    std::size_t size() const noexcept { return end - begin; }
    bool operator==(const TokenRange &) const = default;
};

/// Bytes-per-real used by the traffic counter; 2 emulates 16-bit KV storage.
inline constexpr std::size_t kDefaultBytesPerReal = 2;

/// Number of d-length metadata vectors read per page by each scoring path.
inline constexpr std::size_t kBoxMetadataFields = 2;      // k_min, k_max
inline constexpr std::size_t kGaussianMetadataFields = 2; // k_avg, k_std

/// Key/value store partitioned into fixed-size pages. Page metadata is kept
/// up to date on append; rebuild() recomputes it from the stored keys.
///
/// Single writer. Reading a snapshot between appends is safe.
class PagedKvCache {
public:
    explicit PagedKvCache(CacheConfig config);

    const CacheConfig &config() const noexcept { return config_; }
    std::size_t size() const noexcept { return n_; }
    bool empty() const noexcept { return n_ == 0; }
    std::size_t num_pages() const noexcept { return pages_.size(); }

    void append(std::span<const double> key, std::span<const double> value);

    std::span<const double> key(std::size_t j) const;
    std::span<const double> value(std::size_t j) const;
    std::span<const double> keys() const noexcept { return keys_; }
    std::span<const double> values() const noexcept { return values_; }

    const PageMetadata &page(std::size_t p) const;
    std::span<const PageMetadata> pages() const noexcept { return pages_; }
    TokenRange page_tokens(std::size_t p) const;

    /// Recomputes every page's metadata from the stored keys.
    void rebuild();

    /// Bytes moved when reading `tokens` keys+values, plus
    /// `metadata_fields` d-length vectors for each of the M pages.
    std::size_t traffic_bytes(std::size_t tokens, std::size_t metadata_fields = 0,
                              std::size_t bytes_per_real = kDefaultBytesPerReal) const;

    /// Flat little-endian binary: "EKV1", d, d_v, P, n (u64), keys, values (f64).
    void save(const std::filesystem::path &path) const;
    static PagedKvCache load(const std::filesystem::path &path);

private:
    CacheConfig config_;
    std::size_t n_ = 0;
    std::vector<double> keys_;
    std::vector<double> values_;
    std::vector<PageMetadata> pages_;
    // Running sums for the last page so moments update in O(d).
    std::vector<double> last_sum_;
    std::vector<double> last_sum_sq_;
};

} // namespace entmaxkv
