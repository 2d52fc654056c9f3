#include "entmaxkv/paged_cache.hpp"

#include <algorithm>
#include <array>
#include <bit>
#include <cmath>
#include <fstream>
#include <stdexcept>
#include <string>

namespace entmaxkv {

namespace {

constexpr std::array<char, 4> kMagic = {'E', 'K', 'V', '1'};

void finish_moments(PageMetadata &meta, std::span<const double> sum, std::span<const double> sum_sq) {
    const double count = static_cast<double>(meta.token_count);
    for (std::size_t i = 0; i < sum.size(); ++i) {
        meta.k_avg[i] = sum[i] / count;
        meta.m2[i] = sum_sq[i] / count;
        meta.k_std[i] = std::sqrt(std::max(0.0, meta.m2[i] - meta.k_avg[i] * meta.k_avg[i]));
    }
}

void write_u64(std::ostream &out, std::uint64_t v) {
    std::array<char, 8> bytes{};
    for (int b = 0; b < 8; ++b) bytes[b] = static_cast<char>((v >> (8 * b)) & 0xffu);
    out.write(bytes.data(), bytes.size());
}

std::uint64_t read_u64(std::istream &in) {
    std::array<unsigned char, 8> bytes{};
    in.read(reinterpret_cast<char *>(bytes.data()), bytes.size());
    if (!in) throw std::runtime_error("truncated cache file");
    std::uint64_t v = 0;
    for (int b = 0; b < 8; ++b) v |= static_cast<std::uint64_t>(bytes[b]) << (8 * b);
    return v;
}

} // namespace

void CacheConfig::validate() const {
    if (head_dim < 1 || value_dim < 1 || page_size < 1) {
        throw std::invalid_argument("cache dimensions and page size must be >= 1");
    }
}

PageMetadata PageMetadata::from_keys(std::span<const double> keys, std::size_t dim) {
    if (dim == 0 || keys.empty() || keys.size() % dim != 0) {
        throw std::invalid_argument("page keys must be a nonempty multiple of the head dimension");
    }
    PageMetadata meta;
    meta.token_count = keys.size() / dim;
    meta.k_min.assign(keys.begin(), keys.begin() + dim);
    meta.k_max = meta.k_min;
    meta.k_avg.resize(dim);
    meta.m2.resize(dim);
    meta.k_std.resize(dim);
    std::vector<double> sum(dim, 0.0), sum_sq(dim, 0.0);
    for (std::size_t t = 0; t < meta.token_count; ++t) {
        for (std::size_t i = 0; i < dim; ++i) {
            const double k = keys[t * dim + i];
            meta.k_min[i] = std::min(meta.k_min[i], k);
            meta.k_max[i] = std::max(meta.k_max[i], k);
            sum[i] += k;
            sum_sq[i] += k * k;
        }
    }
    finish_moments(meta, sum, sum_sq);
    return meta;
}

PagedKvCache::PagedKvCache(CacheConfig config) : config_(config) { config_.validate(); }

void PagedKvCache::append(std::span<const double> key, std::span<const double> value) {
    const std::size_t d = config_.head_dim;
    if (key.size() != d || value.size() != config_.value_dim) {
        throw std::invalid_argument("append: key/value dimension mismatch");
    }
    keys_.insert(keys_.end(), key.begin(), key.end());
    values_.insert(values_.end(), value.begin(), value.end());

    if (n_ % config_.page_size == 0) {
        PageMetadata meta;
        meta.k_min.assign(key.begin(), key.end());
        meta.k_max = meta.k_min;
        meta.k_avg.resize(d);
        meta.m2.resize(d);
        meta.k_std.resize(d);
        pages_.push_back(std::move(meta));
        last_sum_.assign(d, 0.0);
        last_sum_sq_.assign(d, 0.0);
    }
    PageMetadata &meta = pages_.back();
    for (std::size_t i = 0; i < d; ++i) {
        meta.k_min[i] = std::min(meta.k_min[i], key[i]);
        meta.k_max[i] = std::max(meta.k_max[i], key[i]);
        last_sum_[i] += key[i];
        last_sum_sq_[i] += key[i] * key[i];
    }
    ++meta.token_count;
    finish_moments(meta, last_sum_, last_sum_sq_);
    ++n_;
}

std::span<const double> PagedKvCache::key(std::size_t j) const {
    if (j >= n_) throw std::out_of_range("token index out of range");
    return std::span<const double>(keys_).subspan(j * config_.head_dim, config_.head_dim);
}

std::span<const double> PagedKvCache::value(std::size_t j) const {
    if (j >= n_) throw std::out_of_range("token index out of range");
    return std::span<const double>(values_).subspan(j * config_.value_dim, config_.value_dim);
}

const PageMetadata &PagedKvCache::page(std::size_t p) const {
    if (p >= pages_.size()) throw std::out_of_range("page index out of range");
    return pages_[p];
}

TokenRange PagedKvCache::page_tokens(std::size_t p) const {
    if (p >= pages_.size()) throw std::out_of_range("page index out of range");
    const std::size_t begin = p * config_.page_size;
    return {begin, std::min(begin + config_.page_size, n_)};
}

void PagedKvCache::rebuild() {
    const std::size_t d = config_.head_dim;
    for (std::size_t p = 0; p < pages_.size(); ++p) {
        const TokenRange r = page_tokens(p);
        pages_[p] = PageMetadata::from_keys(
            std::span<const double>(keys_).subspan(r.begin * d, r.size() * d), d);
    }
    if (!pages_.empty()) {
        const TokenRange r = page_tokens(pages_.size() - 1);
        last_sum_.assign(d, 0.0);
        last_sum_sq_.assign(d, 0.0);
        for (std::size_t j = r.begin; j < r.end; ++j) {
            for (std::size_t i = 0; i < d; ++i) {
                const double k = keys_[j * d + i];
                last_sum_[i] += k;
                last_sum_sq_[i] += k * k;
            }
        }
    }
}

std::size_t PagedKvCache::traffic_bytes(std::size_t tokens, std::size_t metadata_fields,
                                        std::size_t bytes_per_real) const {
    const std::size_t kv = tokens * (config_.head_dim + config_.value_dim) * bytes_per_real;
    const std::size_t meta = pages_.size() * metadata_fields * config_.head_dim * bytes_per_real;
    return kv + meta;
}

void PagedKvCache::save(const std::filesystem::path &path) const {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error("cannot open " + path.string() + " for writing");
    out.write(kMagic.data(), kMagic.size());
    write_u64(out, config_.head_dim);
    write_u64(out, config_.value_dim);
    write_u64(out, config_.page_size);
    write_u64(out, n_);
    for (double k : keys_) write_u64(out, std::bit_cast<std::uint64_t>(k));
    for (double v : values_) write_u64(out, std::bit_cast<std::uint64_t>(v));
    if (!out) throw std::runtime_error("write failed: " + path.string());
}

PagedKvCache PagedKvCache::load(const std::filesystem::path &path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("cannot open " + path.string());
    std::array<char, 4> magic{};
    in.read(magic.data(), magic.size());
    if (!in || magic != kMagic) throw std::runtime_error("bad cache magic in " + path.string());
    CacheConfig config;
    config.head_dim = read_u64(in);
    config.value_dim = read_u64(in);
    config.page_size = read_u64(in);
    const std::size_t n = read_u64(in);
    PagedKvCache cache(config);
    cache.keys_.resize(n * config.head_dim);
    cache.values_.resize(n * config.value_dim);
    for (double &k : cache.keys_) k = std::bit_cast<double>(read_u64(in));
    for (double &v : cache.values_) v = std::bit_cast<double>(read_u64(in));
    cache.n_ = n;
    const std::size_t pages = (n + config.page_size - 1) / config.page_size;
    cache.pages_.resize(pages);
    cache.rebuild();
    return cache;
}

} // namespace entmaxkv
