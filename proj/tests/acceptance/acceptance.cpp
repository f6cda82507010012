// SPDX-License-Identifier: Apache-2.0
//
// Acceptance checks. One PASS/FAIL line per criterion; exit status is nonzero
// if any criterion fails.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <memory>
#include <random>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include <fmt/format.h>
#include <spdlog/sinks/null_sink.h>
#include <spdlog/spdlog.h>

#include "delift/cli.hpp"
#include "delift/matrix_io.hpp"
#include "delift/pipeline.hpp"
#include "delift/random.hpp"
#include "delift/submodular.hpp"
#include "delift/synthetic.hpp"
#include "delift/utility.hpp"

using namespace delift;

namespace {

// Tolerances and limits.
constexpr double kPmiTolerance = 1e-9;
constexpr double kSubmodularSlack = 1e-12;
constexpr double kReductionRelTol = 1e-9;
constexpr double kWorkedExampleTol = 1e-6;  // float32 kernel storage
constexpr double kMeanRatioFloor = 0.95;
constexpr double kLimitPmiSec = 10;
constexpr double kLimitSubmodularSec = 30;
constexpr double kLimitBoundSec = 60;
constexpr double kLimitLazySec = 30;
constexpr double kLimitEndToEndSec = 120;

struct Outcome {
    bool pass = false;
    std::string detail;
};

class Scratch {
public:
    Scratch() {
        std::random_device rd;
        path_ = std::filesystem::temp_directory_path() / fmt::format("delift-acceptance-{}", rd());
        std::filesystem::create_directories(path_);
    }
    ~Scratch() {
        std::error_code ec;
        std::filesystem::remove_all(path_, ec);
    }
    std::filesystem::path operator/(const std::string& name) const { return path_ / name; }

private:
    std::filesystem::path path_;
};

std::string slurp(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    std::ostringstream buf;
    buf << in.rdbuf();
    return buf.str();
}

std::shared_ptr<Matrix> kernel_from_rows(const std::vector<std::vector<float>>& rows) {
    std::vector<std::string> r, c;
    std::vector<float> v;
    for (std::size_t i = 0; i < rows.size(); ++i) {
        r.push_back(fmt::format("r{}", i));
        v.insert(v.end(), rows[i].begin(), rows[i].end());
    }
    for (std::size_t j = 0; j < (rows.empty() ? 0 : rows[0].size()); ++j) c.push_back(fmt::format("col{}", j));
    MatrixMeta meta;
    meta.kernel = true;
    return std::make_shared<Matrix>(r, c, v, meta);
}

std::shared_ptr<Matrix> random_kernel(std::mt19937_64& rng, std::size_t rows, std::size_t cols) {
    std::uniform_real_distribution<float> u(0.0f, 1.0f);
    std::vector<std::vector<float>> v(rows, std::vector<float>(cols));
    for (auto& row : v) {
        for (auto& x : row) x = uniform_index(rng, 5) == 0 ? 0.0f : u(rng);
    }
    return kernel_from_rows(v);
}

ObjectiveSpec random_spec(ObjectiveKind kind, std::mt19937_64& rng, std::size_t rows, std::size_t cols,
                          std::size_t extra) {
    std::uniform_real_distribution<double> w(0.0, 2.0);
    ObjectiveSpec s;
    s.kind = kind;
    s.eta = w(rng);
    s.nu = w(rng);
    s.kernel_dd = random_kernel(rng, rows, cols);
    if (kind == ObjectiveKind::flmi) s.kernel_td = random_kernel(rng, extra, cols);
    if (kind == ObjectiveKind::flcg) s.kernel_de = random_kernel(rng, rows, extra);
    return s;
}

constexpr ObjectiveKind kKinds[] = {ObjectiveKind::fl, ObjectiveKind::flmi, ObjectiveKind::flcg};

double seconds_since(std::chrono::steady_clock::time_point t0) {
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

Outcome pmi_identity() {
    const auto corpus = make_clustered_corpus(50, 3, 2024);
    const Dataset d(corpus.samples, DatasetRole::candidates);
    const auto scorer = make_scorer(ScorerConfig{});
    const PromptTemplate tmpl;
    std::mt19937_64 rng(7);
    const auto t0 = std::chrono::steady_clock::now();
    std::size_t passed = 0;
    double worst = 0.0;
    for (int p = 0; p < 100; ++p) {
        const Sample& target = d[uniform_index(rng, d.size())];
        const Sample& cand = d[uniform_index(rng, d.size())];
        const PmiReport r = pmi_identity_check(*scorer, tmpl, target, cand, kPmiTolerance);
        worst = std::max(worst, r.abs_diff);
        if (r.pass && r.abs_diff <= kPmiTolerance) ++passed;
    }
    const double secs = seconds_since(t0);
    return {passed == 100 && secs < kLimitPmiSec,
            fmt::format("{}/100 pairs within {:g}, max |diff| {:.3g}, {:.2f} s (limit {:g} s)", passed, kPmiTolerance,
                        worst, secs, kLimitPmiSec)};
}

Outcome submodularity() {
    std::mt19937_64 rng(11);
    const auto t0 = std::chrono::steady_clock::now();
    std::size_t failures = 0;
    std::size_t total = 0;
    for (auto kind : kKinds) {
        for (int t = 0; t < 1000; ++t) {
            const std::size_t rows = 1 + uniform_index(rng, 30);
            const std::size_t cols = 2 + uniform_index(rng, 29);
            const auto spec = random_spec(kind, rng, rows, cols, 1 + uniform_index(rng, 30));
            const std::size_t d = uniform_index(rng, cols);
            std::vector<std::size_t> a, b;
            for (std::size_t j = 0; j < cols; ++j) {
                if (j == d) continue;
                const auto r = uniform_index(rng, 3);
                if (r == 0) a.push_back(j);
                if (r <= 1) b.push_back(j);
            }
            auto plus = [d](std::vector<std::size_t> s) {
                s.push_back(d);
                return s;
            };
            const double fa = objective_value(spec, a);
            const double fb = objective_value(spec, b);
            const double gain_a = objective_value(spec, plus(a)) - fa;
            const double gain_b = objective_value(spec, plus(b)) - fb;
            ++total;
            if (gain_a < gain_b - kSubmodularSlack || fa > fb) ++failures;
        }
    }
    const double secs = seconds_since(t0);
    return {failures == 0 && secs < kLimitSubmodularSec,
            fmt::format("{}/{} triples (1000 per objective) satisfy diminishing returns and monotonicity, {:.2f} s",
                        total - failures, total, secs)};
}

Outcome greedy_bound() {
    std::mt19937_64 rng(13);
    const double factor = 1.0 - std::exp(-1.0);
    const auto t0 = std::chrono::steady_clock::now();
    std::size_t violations = 0;
    std::size_t count = 0;
    double ratio_sum = 0.0;
    double worst = 1.0;
    for (auto kind : kKinds) {
        for (int t = 0; t < 200; ++t) {
            const std::size_t n = 2 + uniform_index(rng, 11);
            const std::size_t k = 1 + uniform_index(rng, std::min<std::size_t>(4, n));
            const auto spec = random_spec(kind, rng, 1 + uniform_index(rng, 12), n, 1 + uniform_index(rng, 6));
            const double greedy = greedy_select(spec, k).value();
            const double opt = brute_force_select(spec, k).value;
            if (greedy < factor * opt) ++violations;
            const double ratio = opt > 0.0 ? greedy / opt : 1.0;
            ratio_sum += ratio;
            worst = std::min(worst, ratio);
            ++count;
        }
    }
    const double mean = ratio_sum / static_cast<double>(count);
    const double secs = seconds_since(t0);
    return {violations == 0 && mean >= kMeanRatioFloor && secs < kLimitBoundSec,
            fmt::format("{} instances (200 per objective), {} below 1-1/e, mean ratio {:.4f}, worst {:.4f}, {:.2f} s",
                        count, violations, mean, worst, secs)};
}

Outcome lazy_equals_naive() {
    std::mt19937_64 rng(17);
    const auto t0 = std::chrono::steady_clock::now();
    std::size_t mismatches = 0;
    std::size_t count = 0;
    for (auto kind : kKinds) {
        for (int t = 0; t < 200; ++t) {
            const auto spec = random_spec(kind, rng, 20, 20, 1 + uniform_index(rng, 20));
            if (!(lazy_greedy_select(spec, 6) == greedy_select(spec, 6))) ++mismatches;
            ++count;
        }
    }
    const double secs = seconds_since(t0);
    return {mismatches == 0 && secs < kLimitLazySec,
            fmt::format("{}/{} instances identical in order, gains and values, {:.2f} s", count - mismatches, count,
                        secs)};
}

Outcome reduction_exactness() {
    std::mt19937_64 rng(19);
    std::size_t bad = 0;
    double worst = 0.0;
    for (int t = 0; t < 1000; ++t) {
        const auto kind = t % 2 == 0 ? ObjectiveKind::flcg : ObjectiveKind::flmi;
        const std::size_t n = 2 + uniform_index(rng, 20);
        const auto spec = random_spec(kind, rng, 1 + uniform_index(rng, 20), n, 1 + uniform_index(rng, 10));
        std::vector<std::size_t> a;
        for (std::size_t j = 0; j < n; ++j) {
            if (uniform_index(rng, 2)) a.push_back(j);
        }
        const double direct = objective_value(spec, a);
        const double reduced = reduce_to_fl(spec).value(a);
        const double rel = std::abs(direct - reduced) / std::max(1.0, std::abs(direct));
        worst = std::max(worst, rel);
        if (rel > kReductionRelTol) ++bad;
    }
    // FLCG with an empty D_E is FL, bit for bit.
    std::size_t empty_mismatch = 0;
    for (int t = 0; t < 200; ++t) {
        ObjectiveSpec fl;
        fl.kernel_dd = random_kernel(rng, 1 + uniform_index(rng, 15), 2 + uniform_index(rng, 15));
        ObjectiveSpec cg = fl;
        cg.kind = ObjectiveKind::flcg;
        cg.nu = 1.0;
        cg.kernel_de = std::make_shared<Matrix>(fl.kernel_dd->row_ids(), std::vector<std::string>{}, MatrixMeta{});
        std::vector<std::size_t> a;
        for (std::size_t j = 0; j < fl.candidate_count(); ++j) {
            if (uniform_index(rng, 2)) a.push_back(j);
        }
        if (objective_value(cg, a) != objective_value(fl, a)) ++empty_mismatch;
        if (reduce_to_fl(cg).by_column != reduce_to_fl(fl).by_column) ++empty_mismatch;
        if (greedy_select(cg, 3) != greedy_select(fl, 3)) ++empty_mismatch;
    }
    return {bad == 0 && empty_mismatch == 0,
            fmt::format("1000 pairs, max rel err {:.3g} (tol {:g}); FLCG with empty D_E == FL: {}", worst,
                        kReductionRelTol, empty_mismatch == 0 ? "exact" : "MISMATCH")};
}

Outcome worked_examples() {
    const auto k1 = kernel_from_rows({{1.0f, 0.9f, 0.1f}, {0.9f, 1.0f, 0.1f}, {0.1f, 0.1f, 1.0f}});
    ObjectiveSpec fl;
    fl.kernel_dd = k1;
    ObjectiveSpec flmi;  // default eta
    flmi.kind = ObjectiveKind::flmi;
    flmi.kernel_dd = k1;
    flmi.kernel_td = kernel_from_rows({{0.0f, 0.8f, 0.0f}, {0.0f, 0.7f, 0.2f}});
    ObjectiveSpec flcg;  // default nu
    flcg.kind = ObjectiveKind::flcg;
    flcg.kernel_dd = k1;
    flcg.kernel_de = kernel_from_rows({{0.95f}, {0.9f}, {0.0f}});

    // Oracles on the float32-stored entries, summed in double.
    const double fl_02 = 1.0 + double{0.9f} + 1.0;
    const double flmi_1 = double{0.9f} + 1.0 + double{0.1f} + double{0.8f};
    const double flcg_2 = 0.0 + 0.0 + 1.0;

    const double got_fl = objective_value(fl, std::vector<std::string>{"col0", "col2"});
    const double got_mi = objective_value(flmi, std::vector<std::string>{"col1"});
    const double got_cg = objective_value(flcg, std::vector<std::string>{"col2"});
    const auto g = greedy_select(fl, 2);

    const bool defaults = flmi.eta == 1.0 && flcg.nu == 1.0;
    const bool exact = got_fl == fl_02 && got_mi == flmi_1 && got_cg == flcg_2;
    const bool pinned = std::abs(got_fl - 2.9) <= kWorkedExampleTol && std::abs(got_mi - 2.8) <= kWorkedExampleTol &&
                        std::abs(got_cg - 1.0) <= kWorkedExampleTol;
    const bool greedy_ok = g.chosen == std::vector<std::size_t>{0, 2} &&
                           std::abs(g.cumulative[0] - 2.0) <= kWorkedExampleTol &&
                           std::abs(g.cumulative[1] - 2.9) <= kWorkedExampleTol;
    return {defaults && exact && pinned && greedy_ok,
            fmt::format("FL{{col0,col2}}={:.9f} FLMI{{col1}}={:.9f} FLCG{{col2}}={:.9f} greedy=[col{}, col{}] "
                        "eta={:g} nu={:g}",
                        got_fl, got_mi, got_cg, g.chosen.size() > 0 ? g.chosen[0] : 99,
                        g.chosen.size() > 1 ? g.chosen[1] : 99, flmi.eta, flcg.nu)};
}

Outcome determinism() {
    Scratch dir;
    const auto data = dir / "d.jsonl";
    save_dataset(data, make_clustered_corpus(24, 3, 5).samples);
    struct RunDir {
        std::string name;
        std::string workers;
    };
    const std::vector<RunDir> runs = {{"a", "1"}, {"b", "1"}, {"c", "8"}};
    std::ostringstream sink;
    for (const auto& r : runs) {
        const std::string out = (dir / r.name).string();
        if (cli::dispatch({"score", "--data", data.string(), "--out", out, "--workers", r.workers}, sink, sink) != 0 ||
            cli::dispatch({"select", "--data", data.string(), "--out", out, "--workers", r.workers}, sink, sink) !=
                0) {
            return {false, "score/select failed: " + sink.str()};
        }
    }
    const std::vector<std::string> files = {"utility_dd.dkm", "kernel_dd.dkm", "selection.json", "selected.jsonl"};
    std::size_t identical = 0;
    for (const auto& f : files) {
        const std::string ref = slurp(dir / "a" / f);
        if (!ref.empty() && ref == slurp(dir / "b" / f) && ref == slurp(dir / "c" / f)) ++identical;
    }
    return {identical == files.size(),
            fmt::format("{}/{} artifacts byte-identical across 2 runs with 1 worker and 1 run with 8", identical,
                        files.size())};
}

Outcome defaults() {
    const StageConfig c;
    const UtilityOptions u;
    const bool budget = c.budget_fraction == 0.30 && kDefaultBudgetFraction == 0.30 && budget_to_k(0.30, 10) == 3;
    const bool dist = c.distance == DistanceKind::euclid_len_norm && u.distance == DistanceKind::euclid_len_norm;
    const bool weights = c.eta == 1.0 && c.nu == 1.0;
    const bool stages = stage_objective(Stage::instruction) == ObjectiveKind::fl &&
                        stage_objective(Stage::task) == ObjectiveKind::flmi &&
                        stage_objective(Stage::continual) == ObjectiveKind::flcg;

    // The CLI with no tuning flags must land on the same defaults.
    Scratch dir;
    save_dataset(dir / "d.jsonl", make_clustered_corpus(10, 2, 3).samples);
    std::ostringstream sink;
    bool cli_ok = cli::dispatch({"select", "--data", (dir / "d.jsonl").string(), "--out", (dir / "o").string()}, sink,
                                sink) == 0;
    if (cli_ok) {
        const Selection s = Selection::from_json(slurp(dir / "o" / "selection.json"));
        cli_ok = s.budget_fraction == 0.30 && s.budget_k == 3 && s.objective == "FL" && s.eta == 1.0 && s.nu == 1.0 &&
                 s.config.value("distance", "") == "euclid";
    }
    return {budget && dist && weights && stages && cli_ok,
            fmt::format("budget 0.30: {}, euclid (sqrt T): {}, eta=nu=1: {}, stage map: {}, CLI defaults: {}",
                        budget, dist, weights, stages, cli_ok)};
}

struct EndToEnd {
    Outcome coverage;
    Outcome sweep_nesting;
};

EndToEnd end_to_end() {
    Scratch dir;
    const auto corpus = make_clustered_corpus(120, 3, 42);
    const auto near_dups = std::count(corpus.near_duplicate.begin(), corpus.near_duplicate.end(), 1);
    StageConfig cfg;
    cfg.data = dir / "d.jsonl";
    cfg.out_dir = dir / "out";
    save_dataset(cfg.data, corpus.samples);

    const auto t0 = std::chrono::steady_clock::now();
    const auto scorer = make_scorer(cfg.scorer);
    const StageResult r = run_stage(cfg, *scorer);
    const double secs = seconds_since(t0);

    const Dataset d = load_dataset(cfg.data, DatasetRole::candidates);
    std::set<int> clusters;
    for (const auto& id : r.selection.chosen_ids) clusters.insert(corpus.cluster[d.index_of(id)]);

    const PreparedStage prepared = prepare_stage(cfg, *scorer);
    const double delift_value = r.trace.value();
    int wins = 0;
    double best_random = 0.0;
    for (std::uint64_t seed = 0; seed < 20; ++seed) {
        const Selection rnd = random_baseline(d, cfg.budget_fraction, seed, &prepared.spec);
        const double v = rnd.cumulative_values.empty() ? 0.0 : rnd.cumulative_values.back();
        best_random = std::max(best_random, v);
        if (delift_value > v) ++wins;
    }
    EndToEnd out;
    out.coverage = {clusters.size() == 3 && wins >= 19 && secs < kLimitEndToEndSec && r.selection.budget_k == 36,
                    fmt::format("k={} of {} ({} near-duplicate ids), clusters covered {}/3, FL {:.4f} beats random in "
                                "{}/20 seeds (best random {:.4f}), {:.2f} s",
                                r.selection.budget_k, d.size(), near_dups,
                                clusters.size(), delift_value, wins, best_random, secs)};

    const std::vector<double> fractions = {0.05, 0.15, 0.30, 0.50, 1.00};
    const auto rows = sweep(prepared, fractions);
    bool nested = rows.size() == fractions.size();
    std::string ks;
    for (std::size_t i = 0; i < rows.size(); ++i) {
        ks += fmt::format("{}{}:{:.4f}", i ? " " : "", rows[i].k, rows[i].objective_value);
        if (i == 0) continue;
        nested = nested && rows[i].k >= rows[i - 1].k &&
                 std::equal(rows[i - 1].ids.begin(), rows[i - 1].ids.end(), rows[i].ids.begin()) &&
                 rows[i].objective_value >= rows[i - 1].objective_value;
    }
    nested = nested && rows[2].ids == r.selection.chosen_ids;
    out.sweep_nesting = {nested, "k:value " + ks};
    return out;
}

}  // namespace

int main() {
    spdlog::set_default_logger(spdlog::null_logger_mt("acceptance"));

    std::vector<std::pair<std::string, std::function<Outcome()>>> checks = {
        {"PMI identity on 100 n-gram pairs", pmi_identity},
        {"submodularity and monotonicity", submodularity},
        {"greedy within 1-1/e of the optimum", greedy_bound},
        {"lazy greedy equals naive greedy", lazy_equals_naive},
        {"reduction to facility location", reduction_exactness},
        {"worked-example pins", worked_examples},
        {"score+select determinism", determinism},
        {"defaults", defaults},
    };
    std::vector<std::pair<std::string, Outcome>> results;
    for (const auto& [name, fn] : checks) {
        try {
            results.emplace_back(name, fn());
        } catch (const std::exception& e) {
            results.emplace_back(name, Outcome{false, std::string("exception: ") + e.what()});
        }
    }
    try {
        const EndToEnd e2e = end_to_end();
        results.emplace_back("end-to-end: 120 samples, 3 clusters, FL at 30% vs random", e2e.coverage);
        results.emplace_back("budget sweep nesting", e2e.sweep_nesting);
    } catch (const std::exception& e) {
        results.emplace_back("end-to-end: 120 samples, 3 clusters, FL at 30% vs random",
                             Outcome{false, std::string("exception: ") + e.what()});
        results.emplace_back("budget sweep nesting", Outcome{false, "not run"});
    }

    int failed = 0;
    for (std::size_t i = 0; i < results.size(); ++i) {
        const auto& [name, o] = results[i];
        std::cout << fmt::format("[{}] {:>2}. {}: {}\n", o.pass ? "PASS" : "FAIL", i + 1, name, o.detail);
        failed += o.pass ? 0 : 1;
    }
    std::cout << fmt::format("{}/{} criteria passed\n", results.size() - static_cast<std::size_t>(failed),
                             results.size());
    return failed == 0 ? 0 : 1;
}
