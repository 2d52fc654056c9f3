// bench: sweep, planted-key retrieval and self-test driver.
//
// Exit codes: 0 success, 1 config error, 2 runtime error, 3 selftest failure.

#include "entmaxkv/bench.hpp"
#include "entmaxkv/verify/checks.hpp"

#include <CLI11.hpp>

#include <fstream>
#include <iostream>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

namespace {

using namespace entmaxkv::bench;

constexpr int kExitConfig = 1;
constexpr int kExitRuntime = 2;
constexpr int kExitSelftest = 3;

std::vector<std::string> split(const std::vector<std::string> &items) {
    std::vector<std::string> out;
    for (const std::string &item : items) {
        std::stringstream ss(item);
        std::string tok;
        while (std::getline(ss, tok, ',')) {
            if (!tok.empty()) out.push_back(tok);
        }
    }
    return out;
}

struct SweepArgs {
    std::vector<std::string> methods{"topk_entmax"};
    std::vector<std::string> ns{"4096"};
    std::vector<std::string> budgets{"0.25"};
    std::vector<std::string> depths;
    std::uint64_t seed = 0;
    std::string out;
    std::string format = "csv";
    std::string workload = "gaussian";
    double alpha = 1.5;
    std::size_t trials = 1;
    std::size_t heads = 8;
    std::size_t d = 64;
    std::size_t dv = 64;
    std::size_t page_size = 16;
    double q_page = 0.99;
    double delta_margin = 0.0;
    double alignment = 20.0;
    std::size_t warmup = 1;
    std::size_t timed = 3;
    std::size_t bytes_per_real = 2;
};

void add_common(CLI::App *cmd, SweepArgs &a) {
    cmd->add_option("--method", a.methods, "Method(s): full_softmax, full_entmax, topk_softmax, topk_entmax, gaussian_entmax");
    cmd->add_option("--n", a.ns, "Cache length(s), comma separated");
    cmd->add_option("--budget", a.budgets, "Page budgets: integer k or coverage ratio in (0, 1]");
    cmd->add_option("--seed", a.seed, "Base seed");
    cmd->add_option("--out", a.out, "Output file (stdout when omitted)");
    cmd->add_option("--format", a.format, "csv or json");
    cmd->add_option("--workload", a.workload, "gaussian, planted_key or anisotropic");
    cmd->add_option("--alpha", a.alpha, "Entmax alpha");
    cmd->add_option("--trials", a.trials, "Trials per configuration");
    cmd->add_option("--heads", a.heads, "Heads per decode step");
    cmd->add_option("--d", a.d, "Key dimension");
    cmd->add_option("--dv", a.dv, "Value dimension");
    cmd->add_option("--page-size", a.page_size, "Tokens per page");
    cmd->add_option("--q-page", a.q_page, "Gaussian selector page-max confidence");
    cmd->add_option("--delta-margin", a.delta_margin, "Gaussian selector threshold margin");
    cmd->add_option("--alignment", a.alignment, "Planted key norm factor");
    cmd->add_option("--depths", a.depths, "Planted depth ratios");
    cmd->add_option("--warmup", a.warmup, "Warm-up iterations per timing");
    cmd->add_option("--timed-iters", a.timed, "Timed iterations per timing");
    cmd->add_option("--bytes-per-real", a.bytes_per_real, "Bytes per stored real in the traffic model");
}

BenchConfig to_config(const SweepArgs &a) {
    BenchConfig c;
    c.methods.clear();
    for (const auto &m : split(a.methods)) c.methods.push_back(parse_method(m));
    c.ns.clear();
    for (const auto &n : split(a.ns)) c.ns.push_back(std::stoull(n));
    c.budgets.clear();
    for (const auto &b : split(a.budgets)) c.budgets.push_back(Budget::parse(b));
    if (!a.depths.empty()) {
        c.depths.clear();
        for (const auto &d : split(a.depths)) c.depths.push_back(std::stod(d));
    }
    c.seed = a.seed;
    c.output = a.out;
    c.format = parse_format(a.format);
    c.workload = parse_workload(a.workload);
    c.alpha = a.alpha;
    c.trials = a.trials;
    c.heads = a.heads;
    c.d = a.d;
    c.dv = a.dv;
    c.page_size = a.page_size;
    c.q_page = a.q_page;
    c.delta_margin = a.delta_margin;
    c.alignment = a.alignment;
    c.warmup_iters = a.warmup;
    c.timed_iters = a.timed;
    c.bytes_per_real = a.bytes_per_real;
    c.validate();
    return c;
}

void emit(const BenchConfig &config, const std::vector<BenchRecord> &records) {
    if (config.output.empty()) {
        if (config.format == OutputFormat::json) write_json(std::cout, records);
        else write_csv(std::cout, records);
    } else {
        write_records(config, records);
    }
}

int selftest() {
    bool ok = true;
    for (const auto &r : entmaxkv::verify::run_selftest()) {
        std::cout << (r.passed ? "[PASS] " : "[FAIL] ") << r.name << " -- " << r.detail << '\n';
        ok &= r.passed;
    }
    return ok ? 0 : kExitSelftest;
}

} // namespace

int main(int argc, char **argv) {
    CLI::App app{"Sparse entmax decoding benchmark harness"};
    app.require_subcommand(1);

    std::string config_path;
    auto *run = app.add_subcommand("run", "Run a sweep described by a JSON config");
    run->add_option("--config", config_path, "JSON config path")->required();

    SweepArgs sweep_args;
    auto *sweep = app.add_subcommand("sweep", "Run a method/budget sweep");
    add_common(sweep, sweep_args);

    SweepArgs planted_args;
    planted_args.methods = {"topk_entmax"};
    planted_args.ns = {"1024"};
    planted_args.budgets = {"1"};
    planted_args.trials = 10;
    auto *planted = app.add_subcommand("planted", "Planted-key retrieval accuracy table");
    add_common(planted, planted_args);

    app.add_subcommand("selftest", "Run the quick oracle/property suite");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError &e) {
        const int code = app.exit(e);
        return code == 0 ? 0 : kExitConfig;
    }

    if (app.got_subcommand("selftest")) return selftest();

    BenchConfig config;
    try {
        if (*run) config = load_config(config_path);
        else if (*sweep) config = to_config(sweep_args);
        else config = to_config(planted_args);
    } catch (const std::exception &e) {
        std::cerr << "config error: " << e.what() << '\n';
        return kExitConfig;
    }

    try {
        if (*planted) {
            const auto rows = planted_retrieval(config);
            if (config.output.empty()) {
                write_retrieval_csv(std::cout, rows);
            } else {
                std::ofstream out(config.output);
                if (!out) throw std::runtime_error("cannot open output file: " + config.output.string());
                write_retrieval_csv(out, rows);
            }
        } else {
            emit(config, run_sweep(config));
        }
    } catch (const std::exception &e) {
        std::cerr << "error: " << e.what() << '\n';
        return kExitRuntime;
    }
    return 0;
}
