#pragma once

#include "entmaxkv/attention.hpp"
#include "entmaxkv/entmax.hpp"
#include "entmaxkv/metrics.hpp"
#include "entmaxkv/paged_cache.hpp"
#include "entmaxkv/selection.hpp"

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <random>
#include <string>
#include <string_view>
#include <vector>

namespace entmaxkv::bench {

/// Seeded generator used for every workload.
///
/// std::mt19937_64 (fully specified by the standard) provides the bits;
/// uniforms take the top 53 bits, normals use the Marsaglia polar method.
/// Sequences are therefore identical across conforming standard libraries.
class Rng {
public:
    explicit Rng(std::uint64_t seed) : engine_(seed) {}

    double uniform();                      // [0, 1)
    double uniform(double lo, double hi);  // [lo, hi)
    double normal();
    std::uint64_t bits() { return engine_(); }

private:
    std::mt19937_64 engine_;
    double spare_ = 0.0;
    bool has_spare_ = false;
};

/// splitmix64 finalizer; derives independent stream seeds.
std::uint64_t mix_seed(std::uint64_t seed, std::uint64_t a, std::uint64_t b = 0, std::uint64_t c = 0);

enum class Method { full_softmax, full_entmax, topk_softmax, topk_entmax, gaussian_entmax };
enum class WorkloadKind { gaussian, planted_key, anisotropic };
enum class OutputFormat { csv, json };

std::string_view to_string(Method m);
std::string_view to_string(WorkloadKind w);
Method parse_method(std::string_view s);
WorkloadKind parse_workload(std::string_view s);
OutputFormat parse_format(std::string_view s);

bool is_sparse(Method m) noexcept;
bool uses_entmax(Method m) noexcept;

/// A page budget: an integer k of pages, or a fraction of the cache's pages.
struct Budget {
    bool is_ratio = false;
    double value = 1.0;

    std::size_t pages_for(std::size_t num_pages) const;
    std::string label() const;
    static Budget parse(std::string_view s);
    static Budget ratio(double v);
};

struct BenchConfig {
    std::uint64_t seed = 0;
    std::size_t d = 64;
    std::size_t dv = 64;
    std::size_t page_size = 16;
    std::vector<std::size_t> ns = {4096};
    std::size_t heads = 8;
    std::vector<Method> methods = {Method::topk_entmax};
    double alpha = 1.5;
    std::vector<Budget> budgets = {Budget{true, 0.25}};
    WorkloadKind workload = WorkloadKind::gaussian;
    double q_page = 0.99;
    double delta_margin = 0.0;
    std::size_t trials = 1;
    std::size_t warmup_iters = 1;
    std::size_t timed_iters = 3;
    std::size_t bytes_per_real = kDefaultBytesPerReal;
    double alignment = 20.0;              // planted key norm factor c
    std::vector<double> depths = {0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9};
    std::filesystem::path output;
    OutputFormat format = OutputFormat::csv;

    void validate() const;
};

/// One decode-step workload for a single head.
struct Workload {
    PagedKvCache cache;
    std::vector<double> query;
    std::vector<std::size_t> planted; // planted_key only
};

/// Deterministic in (config.seed, n, trial, head, depth). Planted keys are
/// c * q / ||q|| at position floor(depth * (n - 1)).
Workload generate_workload(const BenchConfig &config, std::size_t n, std::size_t trial,
                           std::size_t head, double depth = 0.5);

struct BenchRecord {
    Method method = Method::full_entmax;
    double alpha = 1.5;
    std::size_t n = 0;
    std::size_t d = 0;
    std::size_t dv = 0;
    std::size_t page_size = 0;
    std::size_t budget_tokens = 0;
    double coverage = 0.0;
    std::uint64_t seed = 0;
    std::size_t trial = 0;
    double delta_mean = 0.0;
    double delta_p95 = 0.0;
    double rho_mean = 0.0;
    double rel_err_mean = 0.0;
    double rel_err_p95 = 0.0;
    double bound_slack_min = 0.0;
    std::size_t kv_bytes_sparse = 0;
    std::size_t kv_bytes_full = 0;
    double time_us_median = 0.0;
    // Not part of the CSV schema.
    double support_size_mean = 0.0;
    std::size_t kv_token_bytes_sparse = 0;
    bool rel_err_flagged = false;
};

inline constexpr std::string_view kCsvHeader =
    "method,alpha,n,d,dv,page_size,budget_tokens,coverage,seed,trial,delta_mean,delta_p95,rho_mean,"
    "rel_err_mean,rel_err_p95,bound_slack_min,kv_bytes_sparse,kv_bytes_full,time_us_median";

/// One decode step for one head with every per-step metric.
struct StepResult {
    SelectionResult selection;
    AttentionOutput full;
    AttentionOutput sparse;
    ApproxReport report;
};

StepResult run_step(const Workload &work, Method method, const Budget &budget, const BenchConfig &config);

/// Runs every (n, method, budget, trial) combination. Records come back in
/// (n, method, budget, trial) order.
std::vector<BenchRecord> run_sweep(const BenchConfig &config);

void write_csv(std::ostream &out, const std::vector<BenchRecord> &records);
void write_json(std::ostream &out, const std::vector<BenchRecord> &records);
void write_records(const BenchConfig &config, const std::vector<BenchRecord> &records);

/// Planted-key retrieval proxy: a step counts when the value vector nearest
/// (by cosine) to the attention output is the planted one.
struct RetrievalRow {
    Method method = Method::topk_entmax;
    std::size_t n = 0;
    std::string budget;
    double depth = 0.0;
    std::size_t trials = 0;
    std::size_t retrieved = 0;

    double rate() const noexcept { return trials ? static_cast<double>(retrieved) / static_cast<double>(trials) : 0.0; }
};

std::size_t nearest_value_by_cosine(const PagedKvCache &cache, std::span<const double> output);

std::vector<RetrievalRow> planted_retrieval(const BenchConfig &config);

void write_retrieval_csv(std::ostream &out, const std::vector<RetrievalRow> &rows);

BenchConfig load_config(const std::filesystem::path &path);

} // namespace entmaxkv::bench
