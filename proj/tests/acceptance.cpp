// Runs the pinned acceptance configs and prints one verdict line per criterion.

#include <algorithm>
#include <chrono>
#include <cstdio>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "bdvar/experiment.hpp"

using namespace bdvar;
namespace fs = std::filesystem;

namespace {

struct Outcome {
    std::string id;
    int criterion = 0;
    bool passed = false;
    double seconds = 0.0;
    std::string payload;
    std::string detail;
};

// Wall-clock budgets per criterion in seconds; zero means none.
const std::map<int, double> kBudget = {{1, 30.0}, {2, 120.0}, {3, 120.0}, {4, 5.0}, {5, 60.0},
                                       {6, 0.0},  {7, 60.0},  {8, 60.0},  {9, 10.0}, {10, 30.0}};

const std::map<int, std::string> kTitle = {
    {1, "linear terminal functional: lower side and optimized drift"},
    {2, "quadratic terminal functional: lower side and optimized drift"},
    {3, "random simple drifts never exceed the lower side"},
    {4, "transform composition identities on the grid"},
    {5, "Girsanov reweighting and moment bounds"},
    {6, "Clark-Ocone drift attains the lower side"},
    {7, "log-partition concavity scan and joint concavity hypothesis"},
    {8, "Brascamp-Lieb inequality on Wiener space"},
    {9, "double-well infima against closed forms"},
    {10, "one-dimensional certification, Bass map and moment inequality"},
    {11, "payload is independent of the thread count"},
};

std::vector<fs::path> configs(const fs::path& dir) {
    std::vector<fs::path> files;
    for (const auto& e : fs::directory_iterator(dir))
        if (e.is_regular_file() && e.path().extension() == ".json") files.push_back(e.path());
    std::sort(files.begin(), files.end());
    return files;
}

std::vector<Outcome> run_suite(const std::vector<fs::path>& files) {
    std::vector<Outcome> out;
    for (const auto& f : files) {
        Outcome o;
        o.id = f.stem().string();
        const auto t0 = std::chrono::steady_clock::now();
        try {
            const json cfg = read_json_file(f);
            o.criterion = cfg.value("criterion", 0);
            const RunRecord r = run_experiment(cfg);
            o.passed = r.passed();
            o.payload = payload_json(r).dump();
            for (const auto& c : r.checks)
                if (!c.passed) o.detail += " [" + c.name + ": " + c.detail + "]";
        } catch (const std::exception& e) {
            o.detail = std::string(" [error: ") + e.what() + "]";
        }
        o.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
        std::printf("  %-36s %-4s %7.2fs%s\n", o.id.c_str(), o.passed ? "ok" : "FAIL", o.seconds, o.detail.c_str());
        std::fflush(stdout);
        out.push_back(std::move(o));
    }
    return out;
}

}  // namespace

int main() {
    const fs::path dir = fs::path(BDVAR_SOURCE_DIR) / "configs" / "acceptance";
    const std::vector<fs::path> files = configs(dir);
    if (files.empty()) {
        std::printf("no acceptance configs found in %s\n", dir.string().c_str());
        return 2;
    }

    const unsigned first_threads = thread_count();
    std::printf("first pass with %u thread(s)\n", first_threads);
    const std::vector<Outcome> first = run_suite(files);

    std::map<int, std::vector<const Outcome*>> by_criterion;
    for (const auto& o : first) by_criterion[o.criterion].push_back(&o);

    bool all_ok = true;
    std::vector<std::string> lines;
    for (int c = 1; c <= 10; ++c) {
        const auto it = by_criterion.find(c);
        bool ok = it != by_criterion.end();
        double seconds = 0.0;
        std::string why = ok ? "" : " (no configs)";
        if (ok) {
            for (const Outcome* o : it->second) {
                seconds += o->seconds;
                if (!o->passed) {
                    ok = false;
                    why += " " + o->id + " failed;";
                }
            }
        }
        const double budget = kBudget.at(c);
        if (budget > 0.0 && seconds > budget) {
            ok = false;
            why += " over budget (" + detail::fmt(seconds) + "s > " + detail::fmt(budget) + "s)";
        }
        char buf[512];
        std::snprintf(buf, sizeof buf, "criterion %2d %s  %s  %.2fs%s", c, ok ? "PASS" : "FAIL", kTitle.at(c).c_str(),
                      seconds, why.c_str());
        lines.emplace_back(buf);
        all_ok = all_ok && ok;
    }

    // Rerun with a different worker count and compare payloads byte for byte.
    const unsigned second_threads = first_threads == 1 ? 4 : 1;
    std::printf("second pass with %u thread(s)\n", second_threads);
    set_thread_count(second_threads);
    const std::vector<Outcome> second = run_suite(files);
    bool same = second.size() == first.size();
    std::string why;
    for (std::size_t i = 0; same && i < first.size(); ++i) {
        if (first[i].payload.empty() || first[i].payload != second[i].payload) {
            same = false;
            why = " " + first[i].id + " differs";
        }
    }
    char buf[512];
    std::snprintf(buf, sizeof buf, "criterion 11 %s  %s  (%u vs %u threads)%s", same ? "PASS" : "FAIL",
                  kTitle.at(11).c_str(), first_threads, second_threads, why.c_str());
    lines.emplace_back(buf);
    all_ok = all_ok && same;

    std::printf("\n");
    for (const auto& l : lines) std::printf("%s\n", l.c_str());
    return all_ok ? 0 : 1;
}
