#include <cstdint>
#include <filesystem>
#include <iomanip>
#include <iostream>
#include <map>
#include <optional>
#include <string>

#include <CLI11.hpp>

#include "bdvar/bdvar.hpp"

namespace fs = std::filesystem;

namespace {

int cmd_run(const std::string& config, const std::optional<std::uint64_t>& seed,
            const std::optional<fs::path>& out) {
    const bdvar::RunOutcome o = bdvar::run_config_file(config, out, seed);
    if (!o.record) {
        std::cerr << "error: " << o.error << "\n";
        return o.exit_code;
    }
    const auto& r = *o.record;
    std::cout << r.experiment_id << " (" << r.kind << ", seed " << r.seed << ", " << bdvar::thread_count()
              << " threads)\n";
    for (const auto& q : r.quantities) {
        std::cout << "  " << q.name << " = " << bdvar::detail::g17(q.value);
        if (q.std_error > 0.0) std::cout << " +/- " << bdvar::detail::fmt(q.std_error);
        std::cout << "\n";
    }
    for (const auto& c : r.checks)
        std::cout << "  [" << (c.passed ? "pass" : "FAIL") << "] " << c.name << ": " << c.detail << "\n";
    std::cout << "wrote " << o.json_path.string() << " and " << o.csv_path.string() << "\n";
    return o.exit_code;
}

int cmd_reproduce(const std::string& dir, const std::optional<std::uint64_t>& seed, const std::optional<fs::path>& out) {
    const bdvar::SuiteSummary s = bdvar::reproduce_all(dir, out.value_or("results"), &std::cout, seed);
    if (s.entries.empty()) {
        std::cerr << "error: no *.json configs in '" << dir << "'\n";
        return bdvar::kExitError;
    }
    // Per-criterion table; configs without a criterion are grouped under 0.
    std::map<int, std::pair<std::size_t, std::string>> table;
    std::size_t pass = 0;
    for (const auto& e : s.entries) {
        auto& [n_failed, names] = table[e.criterion];
        pass += e.exit_code == bdvar::kExitPass;
        if (e.exit_code != bdvar::kExitPass) {
            ++n_failed;
            names += " " + e.file;
        }
    }
    std::cout << "\n";
    for (const auto& [c, row] : table) {
        if (c == 0) std::cout << "no criterion  ";
        else std::cout << "criterion " << std::setw(2) << c << "  ";
        std::cout << (row.first == 0 ? "PASS" : "FAIL");
        if (row.first) std::cout << " " << row.second;
        std::cout << "\n";
    }
    std::cout << pass << " of " << s.entries.size() << " experiments passed\n";
    return s.all_passed() ? bdvar::kExitPass : bdvar::kExitViolation;
}

int cmd_plot(const std::string& record, const std::string& series, const std::optional<fs::path>& out) {
    const bdvar::RunRecord r = bdvar::record_from_json(bdvar::read_json_file(record));
    const fs::path dir = out.value_or(fs::path(record).parent_path().empty() ? fs::path(".") : fs::path(record).parent_path());
    const fs::path written = bdvar::emit_plot_data(r, series, dir);
    std::cout << "wrote " << written.string() << "\n";
    return bdvar::kExitPass;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Monte Carlo and quadrature experiments for variational Wiener-space inequalities"};
    app.require_subcommand(1);
    std::optional<std::uint64_t> seed;
    std::optional<std::string> out;
    std::optional<unsigned> threads;
    app.add_option("--threads", threads,
                   std::string("worker threads (default: $") + bdvar::kThreadEnvVar + " or hardware concurrency)");

    auto* run = app.add_subcommand("run", "run one experiment config");
    std::string config;
    run->add_option("config", config, "experiment config (JSON)")->required()->check(CLI::ExistingFile);
    run->add_option("--seed", seed, "override the config seed");
    run->add_option("--out", out, "output directory");

    auto* rep = app.add_subcommand("reproduce-all", "run every config in a directory");
    std::string dir;
    rep->add_option("dir", dir, "directory of experiment configs")->required()->check(CLI::ExistingDirectory);
    rep->add_option("--seed", seed, "override every config seed");
    rep->add_option("--out", out, "output directory");

    auto* plot = app.add_subcommand("plot-data", "export one series of a run record as CSV");
    std::string record, series;
    plot->add_option("record", record, "run record (JSON)")->required()->check(CLI::ExistingFile);
    plot->add_option("--series", series, "series name, e.g. optimizer-trace, lambda-scan, g-curve, G-curve")
        ->required();
    plot->add_option("--out", out, "output directory (default: next to the record)");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int rc = app.exit(e);
        return rc == 0 ? 0 : bdvar::kExitError;
    }

    try {
        if (threads) bdvar::set_thread_count(*threads);
        std::optional<fs::path> out_dir;
        if (out) out_dir = fs::path(*out);
        if (*run) return cmd_run(config, seed, out_dir);
        if (*rep) return cmd_reproduce(dir, seed, out_dir);
        return cmd_plot(record, series, out_dir);
    } catch (const bdvar::Error& e) {
        std::cerr << "error: " << e.what() << "\n";
        return bdvar::kExitError;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return bdvar::kExitError;
    }
}
