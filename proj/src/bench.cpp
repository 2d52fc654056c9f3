#include "entmaxkv/bench.hpp"

#include "entmaxkv/page_scoring.hpp"

#include <json.hpp>

#include <algorithm>
#include <bit>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <map>
#include <numeric>
#include <ostream>
#include <stdexcept>
#include <tuple>

namespace entmaxkv::bench {

using nlohmann::json;

double Rng::uniform() { return static_cast<double>(engine_() >> 11) * 0x1.0p-53; }

double Rng::uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

double Rng::normal() {
    if (has_spare_) {
        has_spare_ = false;
        return spare_;
    }
    double u, v, s;
    do {
        u = 2.0 * uniform() - 1.0;
        v = 2.0 * uniform() - 1.0;
        s = u * u + v * v;
    } while (s >= 1.0 || s == 0.0);
    const double f = std::sqrt(-2.0 * std::log(s) / s);
    spare_ = v * f;
    has_spare_ = true;
    return u * f;
}

std::uint64_t mix_seed(std::uint64_t seed, std::uint64_t a, std::uint64_t b, std::uint64_t c) {
    auto splitmix = [](std::uint64_t x) {
        x += 0x9e3779b97f4a7c15ULL;
        x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
        x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
        return x ^ (x >> 31);
    };
    std::uint64_t h = splitmix(seed);
    h = splitmix(h ^ a);
    h = splitmix(h ^ b);
    return splitmix(h ^ c);
}

std::string_view to_string(Method m) {
    switch (m) {
    case Method::full_softmax: return "full_softmax";
    case Method::full_entmax: return "full_entmax";
    case Method::topk_softmax: return "topk_softmax";
    case Method::topk_entmax: return "topk_entmax";
    case Method::gaussian_entmax: return "gaussian_entmax";
    }
    return "unknown";
}

std::string_view to_string(WorkloadKind w) {
    switch (w) {
    case WorkloadKind::gaussian: return "gaussian";
    case WorkloadKind::planted_key: return "planted_key";
    case WorkloadKind::anisotropic: return "anisotropic";
    }
    return "unknown";
}

Method parse_method(std::string_view s) {
    for (Method m : {Method::full_softmax, Method::full_entmax, Method::topk_softmax, Method::topk_entmax,
                     Method::gaussian_entmax}) {
        if (to_string(m) == s) return m;
    }
    throw std::invalid_argument("unknown method: " + std::string(s));
}

WorkloadKind parse_workload(std::string_view s) {
    for (WorkloadKind w : {WorkloadKind::gaussian, WorkloadKind::planted_key, WorkloadKind::anisotropic}) {
        if (to_string(w) == s) return w;
    }
    throw std::invalid_argument("unknown workload: " + std::string(s));
}

OutputFormat parse_format(std::string_view s) {
    if (s == "csv") return OutputFormat::csv;
    if (s == "json") return OutputFormat::json;
    throw std::invalid_argument("unknown format: " + std::string(s));
}

bool is_sparse(Method m) noexcept { return m != Method::full_softmax && m != Method::full_entmax; }

bool uses_entmax(Method m) noexcept { return m != Method::full_softmax && m != Method::topk_softmax; }

namespace {

bool is_topk(Method m) noexcept { return m == Method::topk_softmax || m == Method::topk_entmax; }

std::string format_double(double x, int precision = 10) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.*g", precision, x);
    return buf;
}

double mean(const std::vector<double> &xs) {
    return xs.empty() ? 0.0 : std::accumulate(xs.begin(), xs.end(), 0.0) / static_cast<double>(xs.size());
}

// Nearest-rank percentile.
double percentile(std::vector<double> xs, double q) {
    if (xs.empty()) return 0.0;
    std::sort(xs.begin(), xs.end());
    const auto rank = static_cast<std::size_t>(std::ceil(q * static_cast<double>(xs.size())));
    return xs[std::clamp<std::size_t>(rank, 1, xs.size()) - 1];
}

double median(std::vector<double> xs) {
    if (xs.empty()) return 0.0;
    std::sort(xs.begin(), xs.end());
    const std::size_t mid = xs.size() / 2;
    return xs.size() % 2 ? xs[mid] : 0.5 * (xs[mid - 1] + xs[mid]);
}

Transform transform_for(Method m, const BenchConfig &config) {
    return uses_entmax(m) ? Transform::entmax(Alpha(config.alpha)) : Transform::softmax();
}

SelectionResult select_for(const Workload &work, Method method, const Budget &budget, const BenchConfig &config) {
    const PagedKvCache &cache = work.cache;
    switch (method) {
    case Method::full_softmax:
    case Method::full_entmax: return select_all(cache);
    case Method::topk_softmax:
    case Method::topk_entmax:
        return select_topk(cache, box_scores(work.query, cache), budget.pages_for(cache.num_pages()));
    case Method::gaussian_entmax: {
        GaussianSelectorConfig g;
        g.alpha = Alpha(config.alpha);
        g.q_page = config.q_page;
        g.delta_margin = config.delta_margin;
        return select_gaussian(cache, score_pages(work.query, cache), g);
    }
    }
    throw std::logic_error("unhandled method");
}

// Selection plus attention over the candidates: the timed decode path.
AttentionOutput decode(const Workload &work, Method method, const Budget &budget, const BenchConfig &config,
                       SelectionResult *selection_out = nullptr) {
    const Transform transform = transform_for(method, config);
    if (!is_sparse(method)) {
        if (selection_out) *selection_out = select_all(work.cache);
        return full_attention(work.query, work.cache, transform);
    }
    SelectionResult sel = select_for(work, method, budget, config);
    AttentionOutput out = sparse_attention(work.query, work.cache, sel, transform);
    if (selection_out) *selection_out = std::move(sel);
    return out;
}

StepResult step_with_oracle(const Workload &work, Method method, const Budget &budget, const BenchConfig &config,
                            const AttentionOutput &full) {
    StepResult r;
    r.full = full;
    r.sparse = decode(work, method, budget, config, &r.selection);
    EvaluateOptions opts;
    opts.rho_alpha = Alpha(config.alpha);
    opts.bytes_per_real = config.bytes_per_real;
    r.report = evaluate_step(r.full, r.sparse, r.selection, work.cache, opts);
    return r;
}

std::vector<double> time_decode(const Workload &work, Method method, const Budget &budget,
                                const BenchConfig &config) {
    using clock = std::chrono::steady_clock;
    volatile double sink = 0.0;
    for (std::size_t i = 0; i < config.warmup_iters; ++i) sink = sink + decode(work, method, budget, config).output[0];
    std::vector<double> times;
    times.reserve(config.timed_iters);
    for (std::size_t i = 0; i < config.timed_iters; ++i) {
        const auto start = clock::now();
        const AttentionOutput out = decode(work, method, budget, config);
        // Reading the result fences the measured work.
        sink = sink + out.output[0];
        const auto stop = clock::now();
        times.push_back(std::chrono::duration<double, std::micro>(stop - start).count());
    }
    return times;
}

struct Accumulator {
    std::vector<double> delta, rho, rel_err, slack, coverage, support, times;
    std::size_t bytes_sparse = 0, bytes_full = 0, token_bytes = 0, tokens = 0;
    bool flagged = false;
};

} // namespace

std::size_t Budget::pages_for(std::size_t num_pages) const {
    if (!is_ratio) return static_cast<std::size_t>(value);
    const auto k = static_cast<std::size_t>(std::llround(value * static_cast<double>(num_pages)));
    return std::max<std::size_t>(1, k);
}

Budget Budget::ratio(double v) {
    if (!(v > 0.0 && v <= 1.0)) throw std::invalid_argument("coverage budget must lie in (0, 1]");
    return {true, v};
}

std::string Budget::label() const {
    return is_ratio ? format_double(value, 6) : std::to_string(static_cast<std::size_t>(value));
}

Budget Budget::parse(std::string_view s) {
    const std::string str(s);
    std::size_t pos = 0;
    if (str.find_first_of(".eE") != std::string::npos) {
        const double v = std::stod(str, &pos);
        if (pos != str.size()) throw std::invalid_argument("bad budget: " + str);
        return ratio(v);
    }
    const long long k = std::stoll(str, &pos);
    if (pos != str.size() || k < 1) throw std::invalid_argument("page budget must be an integer >= 1: " + str);
    return {false, static_cast<double>(k)};
}

void BenchConfig::validate() const {
    CacheConfig{d, dv, page_size}.validate();
    if (ns.empty()) throw std::invalid_argument("at least one n is required");
    for (std::size_t n : ns) {
        if (n < 1) throw std::invalid_argument("n must be >= 1");
    }
    if (heads < 1 || trials < 1 || timed_iters < 1) throw std::invalid_argument("heads, trials and timed_iters must be >= 1");
    if (methods.empty()) throw std::invalid_argument("at least one method is required");
    bool any_entmax = false, any_topk = false, any_gaussian = false;
    for (Method m : methods) {
        any_entmax |= uses_entmax(m);
        any_topk |= is_topk(m);
        any_gaussian |= m == Method::gaussian_entmax;
    }
    if (any_entmax) Alpha{alpha};
    if (any_topk && budgets.empty()) throw std::invalid_argument("sparse methods need at least one budget");
    if (any_gaussian) {
        GaussianSelectorConfig g;
        g.alpha = Alpha(alpha);
        g.q_page = q_page;
        g.delta_margin = delta_margin;
        g.validate();
    }
    if (!(alignment >= 0.0)) throw std::invalid_argument("alignment must be >= 0");
    for (double depth : depths) {
        if (!(depth >= 0.0 && depth <= 1.0)) throw std::invalid_argument("depths must lie in [0, 1]");
    }
}

Workload generate_workload(const BenchConfig &config, std::size_t n, std::size_t trial, std::size_t head,
                           double depth) {
    Rng rng(mix_seed(config.seed, n, trial, head));
    const std::size_t d = config.d, dv = config.dv;
    Workload w{PagedKvCache(CacheConfig{d, dv, config.page_size}), std::vector<double>(d), {}};
    for (double &q : w.query) q = rng.normal();

    std::vector<double> scale(d, 1.0);
    if (config.workload == WorkloadKind::anisotropic) {
        for (double &s : scale) s = std::exp(rng.uniform(std::log(0.1), std::log(10.0)));
    }
    std::vector<double> keys(n * d), values(n * dv);
    for (std::size_t i = 0; i < keys.size(); ++i) keys[i] = scale[i % d] * rng.normal();
    for (double &v : values) v = rng.normal();

    if (config.workload == WorkloadKind::planted_key) {
        double norm = 0.0;
        for (double q : w.query) norm += q * q;
        norm = std::sqrt(norm);
        const auto pos = static_cast<std::size_t>(std::floor(depth * static_cast<double>(n - 1)));
        for (std::size_t i = 0; i < d; ++i) keys[pos * d + i] = config.alignment * w.query[i] / norm;
        w.planted.push_back(pos);
    }
    for (std::size_t j = 0; j < n; ++j) {
        w.cache.append(std::span<const double>(keys).subspan(j * d, d),
                       std::span<const double>(values).subspan(j * dv, dv));
    }
    return w;
}

StepResult run_step(const Workload &work, Method method, const Budget &budget, const BenchConfig &config) {
    const AttentionOutput full = full_attention(work.query, work.cache, transform_for(method, config));
    return step_with_oracle(work, method, budget, config, full);
}

std::vector<BenchRecord> run_sweep(const BenchConfig &config) {
    config.validate();
    // Keyed by (n index, method index, budget index, trial).
    std::map<std::tuple<std::size_t, std::size_t, std::size_t, std::size_t>, BenchRecord> records;
    for (std::size_t ni = 0; ni < config.ns.size(); ++ni) {
        const std::size_t n = config.ns[ni];
        // Budgets per method; non-top-k methods run once with a placeholder.
        std::vector<std::pair<Method, std::vector<Budget>>> plan;
        for (Method m : config.methods) {
            plan.emplace_back(m, is_topk(m) ? config.budgets : std::vector<Budget>{Budget{}});
        }
        for (std::size_t trial = 0; trial < config.trials; ++trial) {
            std::map<std::pair<std::size_t, std::size_t>, Accumulator> acc;
            for (std::size_t head = 0; head < config.heads; ++head) {
                const Workload work = generate_workload(config, n, trial, head);
                std::optional<AttentionOutput> full_sm, full_ent;
                for (std::size_t mi = 0; mi < plan.size(); ++mi) {
                    const Method method = plan[mi].first;
                    auto &oracle = uses_entmax(method) ? full_ent : full_sm;
                    if (!oracle) oracle = full_attention(work.query, work.cache, transform_for(method, config));
                    for (std::size_t bi = 0; bi < plan[mi].second.size(); ++bi) {
                        const Budget &budget = plan[mi].second[bi];
                        const StepResult step = step_with_oracle(work, method, budget, config, *oracle);
                        Accumulator &a = acc[{mi, bi}];
                        const ApproxReport &r = step.report;
                        a.delta.push_back(r.delta);
                        a.rho.push_back(r.rho);
                        a.rel_err.push_back(r.rel_error);
                        a.slack.push_back(r.bound_slack);
                        a.coverage.push_back(r.coverage);
                        a.support.push_back(static_cast<double>(r.support_size));
                        a.bytes_sparse += r.kv_bytes_sparse;
                        a.bytes_full += r.kv_bytes_full;
                        a.token_bytes += work.cache.traffic_bytes(step.selection.num_tokens(), 0, config.bytes_per_real);
                        a.tokens += step.selection.num_tokens();
                        a.flagged |= r.rel_error_is_absolute;
                        const auto t = time_decode(work, method, budget, config);
                        a.times.insert(a.times.end(), t.begin(), t.end());
                    }
                }
            }
            for (auto &[key, a] : acc) {
                const Method method = plan[key.first].first;
                const Budget &budget = plan[key.first].second[key.second];
                BenchRecord rec;
                rec.method = method;
                rec.alpha = uses_entmax(method) ? config.alpha : 1.0;
                rec.n = n;
                rec.d = config.d;
                rec.dv = config.dv;
                rec.page_size = config.page_size;
                const std::size_t pages = (n + config.page_size - 1) / config.page_size;
                if (is_topk(method)) {
                    rec.budget_tokens = std::min(std::min(budget.pages_for(pages), pages) * config.page_size, n);
                } else if (method == Method::gaussian_entmax) {
                    rec.budget_tokens = (a.tokens + config.heads / 2) / config.heads;
                } else {
                    rec.budget_tokens = n;
                }
                rec.coverage = mean(a.coverage);
                rec.seed = config.seed;
                rec.trial = trial;
                rec.delta_mean = mean(a.delta);
                rec.delta_p95 = percentile(a.delta, 0.95);
                rec.rho_mean = mean(a.rho);
                rec.rel_err_mean = mean(a.rel_err);
                rec.rel_err_p95 = percentile(a.rel_err, 0.95);
                rec.bound_slack_min = *std::min_element(a.slack.begin(), a.slack.end());
                rec.kv_bytes_sparse = a.bytes_sparse;
                rec.kv_bytes_full = a.bytes_full;
                rec.time_us_median = median(a.times);
                rec.support_size_mean = mean(a.support);
                rec.kv_token_bytes_sparse = a.token_bytes;
                rec.rel_err_flagged = a.flagged;
                records.emplace(std::tuple{ni, key.first, key.second, trial}, rec);
            }
        }
    }
    std::vector<BenchRecord> ordered;
    ordered.reserve(records.size());
    for (auto &[key, rec] : records) ordered.push_back(std::move(rec));
    return ordered;
}

void write_csv(std::ostream &out, const std::vector<BenchRecord> &records) {
    out << kCsvHeader << '\n';
    for (const BenchRecord &r : records) {
        out << to_string(r.method) << ',' << format_double(r.alpha, 6) << ',' << r.n << ',' << r.d << ',' << r.dv
            << ',' << r.page_size << ',' << r.budget_tokens << ',' << format_double(r.coverage) << ',' << r.seed
            << ',' << r.trial << ',' << format_double(r.delta_mean) << ',' << format_double(r.delta_p95) << ','
            << format_double(r.rho_mean) << ',' << format_double(r.rel_err_mean) << ','
            << format_double(r.rel_err_p95) << ',' << format_double(r.bound_slack_min) << ',' << r.kv_bytes_sparse
            << ',' << r.kv_bytes_full << ',' << format_double(r.time_us_median, 8) << '\n';
    }
}

void write_json(std::ostream &out, const std::vector<BenchRecord> &records) {
    json arr = json::array();
    for (const BenchRecord &r : records) {
        arr.push_back({{"method", to_string(r.method)},
                       {"alpha", r.alpha},
                       {"n", r.n},
                       {"d", r.d},
                       {"dv", r.dv},
                       {"page_size", r.page_size},
                       {"budget_tokens", r.budget_tokens},
                       {"coverage", r.coverage},
                       {"seed", r.seed},
                       {"trial", r.trial},
                       {"delta_mean", r.delta_mean},
                       {"delta_p95", r.delta_p95},
                       {"rho_mean", r.rho_mean},
                       {"rel_err_mean", r.rel_err_mean},
                       {"rel_err_p95", r.rel_err_p95},
                       {"bound_slack_min", r.bound_slack_min},
                       {"kv_bytes_sparse", r.kv_bytes_sparse},
                       {"kv_bytes_full", r.kv_bytes_full},
                       {"time_us_median", r.time_us_median}});
    }
    out << arr.dump(2) << '\n';
}

void write_records(const BenchConfig &config, const std::vector<BenchRecord> &records) {
    std::ofstream out(config.output);
    if (!out) throw std::runtime_error("cannot open output file: " + config.output.string());
    if (config.format == OutputFormat::json) write_json(out, records);
    else write_csv(out, records);
    if (!out) throw std::runtime_error("write failed: " + config.output.string());
}

std::size_t nearest_value_by_cosine(const PagedKvCache &cache, std::span<const double> output) {
    double out_norm = 0.0;
    for (double x : output) out_norm += x * x;
    out_norm = std::sqrt(out_norm);
    std::size_t best = 0;
    double best_cos = -std::numeric_limits<double>::infinity();
    for (std::size_t j = 0; j < cache.size(); ++j) {
        const auto v = cache.value(j);
        double dot = 0.0, vn = 0.0;
        for (std::size_t c = 0; c < v.size(); ++c) {
            dot += v[c] * output[c];
            vn += v[c] * v[c];
        }
        const double denom = std::sqrt(vn) * out_norm;
        const double cos = denom > 0.0 ? dot / denom : -std::numeric_limits<double>::infinity();
        if (cos > best_cos) {
            best_cos = cos;
            best = j;
        }
    }
    return best;
}

std::vector<RetrievalRow> planted_retrieval(const BenchConfig &config) {
    BenchConfig cfg = config;
    cfg.workload = WorkloadKind::planted_key;
    cfg.validate();
    std::vector<RetrievalRow> rows;
    for (std::size_t n : cfg.ns) {
        for (Method method : cfg.methods) {
            const auto budgets = is_topk(method) ? cfg.budgets : std::vector<Budget>{Budget{}};
            for (const Budget &budget : budgets) {
                for (double depth : cfg.depths) {
                    RetrievalRow row;
                    row.method = method;
                    row.n = n;
                    row.budget = is_topk(method) ? budget.label() : (is_sparse(method) ? "adaptive" : "full");
                    row.depth = depth;
                    for (std::size_t trial = 0; trial < cfg.trials; ++trial) {
                        const Workload work = generate_workload(cfg, n, trial, 0, depth);
                        const AttentionOutput out = decode(work, method, budget, cfg);
                        ++row.trials;
                        if (nearest_value_by_cosine(work.cache, out.output) == work.planted.front()) ++row.retrieved;
                    }
                    rows.push_back(row);
                }
            }
        }
    }
    return rows;
}

void write_retrieval_csv(std::ostream &out, const std::vector<RetrievalRow> &rows) {
    out << "method,n,budget,depth,trials,retrieved,rate\n";
    for (const RetrievalRow &r : rows) {
        out << to_string(r.method) << ',' << r.n << ',' << r.budget << ',' << format_double(r.depth, 6) << ','
            << r.trials << ',' << r.retrieved << ',' << format_double(r.rate(), 6) << '\n';
    }
}

namespace {

template <typename T>
std::vector<T> as_list(const json &j) {
    if (j.is_array()) return j.get<std::vector<T>>();
    return {j.get<T>()};
}

} // namespace

BenchConfig load_config(const std::filesystem::path &path) {
    std::ifstream in(path);
    if (!in) throw std::invalid_argument("cannot open config: " + path.string());
    json j;
    try {
        j = json::parse(in);
    } catch (const json::exception &e) {
        throw std::invalid_argument("bad config JSON in " + path.string() + ": " + e.what());
    }
    BenchConfig c;
    try {
        if (j.contains("seed")) c.seed = j.at("seed").get<std::uint64_t>();
        if (j.contains("d")) c.d = j.at("d").get<std::size_t>();
        if (j.contains("dv")) c.dv = j.at("dv").get<std::size_t>();
        if (j.contains("page_size")) c.page_size = j.at("page_size").get<std::size_t>();
        if (j.contains("n")) c.ns = as_list<std::size_t>(j.at("n"));
        if (j.contains("heads")) c.heads = j.at("heads").get<std::size_t>();
        const char *method_key = j.contains("methods") ? "methods" : "method";
        if (j.contains(method_key)) {
            c.methods.clear();
            for (const auto &s : as_list<std::string>(j.at(method_key))) c.methods.push_back(parse_method(s));
        }
        if (j.contains("alpha")) c.alpha = j.at("alpha").get<double>();
        if (j.contains("budgets")) {
            c.budgets.clear();
            for (const json &b : j.at("budgets")) {
                if (b.is_number_integer()) c.budgets.push_back(Budget{false, static_cast<double>(b.get<long long>())});
                else if (b.is_number()) c.budgets.push_back(Budget::ratio(b.get<double>()));
                else c.budgets.push_back(Budget::parse(b.get<std::string>()));
            }
        }
        if (j.contains("workload")) c.workload = parse_workload(j.at("workload").get<std::string>());
        if (j.contains("q_page")) c.q_page = j.at("q_page").get<double>();
        if (j.contains("delta_margin")) c.delta_margin = j.at("delta_margin").get<double>();
        if (j.contains("trials")) c.trials = j.at("trials").get<std::size_t>();
        if (j.contains("warmup_iters")) c.warmup_iters = j.at("warmup_iters").get<std::size_t>();
        if (j.contains("timed_iters")) c.timed_iters = j.at("timed_iters").get<std::size_t>();
        if (j.contains("bytes_per_real")) c.bytes_per_real = j.at("bytes_per_real").get<std::size_t>();
        if (j.contains("alignment")) c.alignment = j.at("alignment").get<double>();
        if (j.contains("depths")) c.depths = as_list<double>(j.at("depths"));
        if (j.contains("output")) c.output = j.at("output").get<std::string>();
        if (j.contains("format")) c.format = parse_format(j.at("format").get<std::string>());
    } catch (const json::exception &e) {
        throw std::invalid_argument("bad config field in " + path.string() + ": " + e.what());
    }
    c.validate();
    return c;
}

} // namespace entmaxkv::bench
