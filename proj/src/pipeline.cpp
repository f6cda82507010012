// SPDX-License-Identifier: Apache-2.0

#include "delift/pipeline.hpp"

#include <cmath>
#include <fstream>
#include <numeric>
#include <random>
#include <set>
#include <sstream>

#include <fmt/format.h>
#include <spdlog/spdlog.h>

#include "delift/hashing.hpp"
#include "delift/matrix_io.hpp"
#include "delift/random.hpp"
#include "delift/utility.hpp"

namespace delift {

std::string_view stage_name(Stage stage) {
    switch (stage) {
        case Stage::instruction: return "instruction";
        case Stage::task: return "task";
        case Stage::continual: return "continual";
    }
    return "?";
}

Stage parse_stage(std::string_view name) {
    if (name == "instruction") return Stage::instruction;
    if (name == "task") return Stage::task;
    if (name == "continual") return Stage::continual;
    throw std::invalid_argument(fmt::format("unknown stage \"{}\" (expected instruction, task or continual)", name));
}

ObjectiveKind stage_objective(Stage stage) {
    switch (stage) {
        case Stage::instruction: return ObjectiveKind::fl;
        case Stage::task: return ObjectiveKind::flmi;
        case Stage::continual: return ObjectiveKind::flcg;
    }
    throw std::invalid_argument("unknown stage");
}

std::size_t budget_to_k(double fraction, std::size_t n) {
    if (!(fraction > 0.0 && fraction <= 1.0)) {
        throw std::invalid_argument(fmt::format("budget fraction must be in (0, 1], got {}", fraction));
    }
    const double x = fraction * static_cast<double>(n);
    const double nearest = std::round(x);
    const double k = std::abs(x - nearest) <= 1e-9 * std::max(1.0, x) ? nearest : std::ceil(x);
    return std::min(n, static_cast<std::size_t>(k));
}

std::unique_ptr<Scorer> make_scorer(const ScorerConfig& config) {
    if (config.kind == ScorerKind::remote) return std::make_unique<RemoteScorer>(config.remote);
    std::string corpus;
    if (!config.corpus.empty()) {
        std::ifstream in(config.corpus, std::ios::binary);
        if (!in) throw std::invalid_argument(fmt::format("cannot open corpus file {}", config.corpus.string()));
        std::ostringstream buf;
        buf << in.rdbuf();
        corpus = buf.str();
    }
    return std::make_unique<NgramScorer>(ngram_build(corpus, config.ngram));
}

std::string Selection::to_json() const {
    nlohmann::ordered_json j;
    j["objective"] = objective;
    j["stage"] = stage;
    j["eta"] = eta;
    j["nu"] = nu;
    j["budget_fraction"] = budget_fraction;
    j["budget_k"] = budget_k;
    j["chosen_ids"] = chosen_ids;
    j["gains"] = gains;
    j["cumulative_values"] = cumulative_values;
    j["kernel_hashes"] = kernel_hashes;
    j["config"] = config;
    return j.dump(2) + "\n";
}

Selection Selection::from_json(std::string_view text) {
    const auto j = nlohmann::ordered_json::parse(text);
    Selection s;
    s.objective = j.at("objective").get<std::string>();
    s.stage = j.value("stage", "");
    s.eta = j.at("eta").get<double>();
    s.nu = j.at("nu").get<double>();
    s.budget_fraction = j.at("budget_fraction").get<double>();
    s.budget_k = j.at("budget_k").get<std::size_t>();
    s.chosen_ids = j.at("chosen_ids").get<std::vector<std::string>>();
    s.gains = j.at("gains").get<std::vector<double>>();
    s.cumulative_values = j.at("cumulative_values").get<std::vector<double>>();
    s.kernel_hashes = j.at("kernel_hashes").get<std::map<std::string, std::string>>();
    s.config = j.value("config", nlohmann::ordered_json::object());
    return s;
}

LoadedDatasets load_stage_datasets(const StageConfig& config) {
    if (config.data.empty()) throw RoleError("no candidate dataset D given (--data)", DatasetRole::candidates);
    LoadedDatasets out{load_dataset(config.data, DatasetRole::candidates), std::nullopt, std::nullopt};
    if (!config.target.empty()) out.targets = load_dataset(config.target, DatasetRole::targets);
    if (!config.existing.empty()) out.existing = load_dataset(config.existing, DatasetRole::existing);
    return out;
}

namespace {

struct KernelRequest {
    std::string tag;
    const Dataset* rows;
    const Dataset* cols;
};

bool kernel_matches(const Matrix& m, const KernelRequest& req, const MatrixMeta& expected) {
    return m.meta().same_provenance(expected) && m.row_ids() == req.rows->ids() && m.col_ids() == req.cols->ids() &&
           m.meta().row_data_hash == req.rows->content_hash() && m.meta().col_data_hash == req.cols->content_hash();
}

MatrixMeta expected_kernel_meta(const StageConfig& config, const Scorer& scorer) {
    MatrixMeta meta;
    meta.distance = config.distance;
    meta.kernel = true;
    meta.scorer_hash = scorer.descriptor().hash;
    meta.template_hash = config.prompt.hash();
    return meta;
}

std::pair<std::shared_ptr<const Matrix>, KernelFiles> ensure_kernel(const StageConfig& config, const Scorer& scorer,
                                                                    const KernelRequest& req) {
    const MatrixMeta expected = expected_kernel_meta(config, scorer);
    const std::string key = sha256_hex(fmt::format("{}|{}|{}|{}|{}|{}", req.tag, req.rows->content_hash(),
                                                   req.cols->content_hash(), expected.scorer_hash,
                                                   expected.template_hash, distance_name(config.distance)));
    const auto cache_dir = config.out_dir / "cache";
    std::filesystem::create_directories(cache_dir);
    const std::string stem = fmt::format("{}-{}", req.tag, key.substr(0, 16));
    KernelFiles files{cache_dir / (stem + ".utility.dkm"), cache_dir / (stem + ".kernel.dkm")};

    if (std::filesystem::exists(files.kernel)) {
        try {
            auto cached = std::make_shared<Matrix>(load_matrix(files.kernel));
            if (kernel_matches(*cached, req, expected)) {
                spdlog::info("kernel {}: reusing cached {}", req.tag, files.kernel.string());
                return {cached, files};
            }
            spdlog::warn("kernel {}: cached file does not match configuration; recomputing", req.tag);
        } catch (const std::exception& e) {
            spdlog::warn("kernel {}: unreadable cache ({}); recomputing", req.tag, e.what());
        }
    }

    spdlog::info("kernel {}: scoring {} targets x {} candidates ({} scorer calls)", req.tag, req.rows->size(),
                 req.cols->size(), req.rows->size() * (req.cols->size() + 1));
    UtilityOptions options;
    options.distance = config.distance;
    options.workers = config.workers;
    options.checkpoint = cache_dir / (stem + ".partial.dkm");
    std::size_t last_reported = 0;
    options.progress = [&](std::size_t done, std::size_t total) {
        if (done == total || done >= last_reported + std::max<std::size_t>(1, total / 10)) {
            spdlog::info("kernel {}: {}/{} rows", req.tag, done, total);
            last_reported = done;
        }
    };
    const Matrix utility = compute_utility_matrix(scorer, config.prompt, *req.rows, *req.cols, options);
    save_matrix(utility, files.utility);
    auto kernel = std::make_shared<Matrix>(kernel_from_utility(utility));
    save_matrix(*kernel, files.kernel);
    return {kernel, files};
}

std::shared_ptr<const Matrix> load_supplied_kernel(const StageConfig& config, const Scorer& scorer,
                                                   const Dataset& candidates) {
    auto m = std::make_shared<Matrix>(load_matrix(config.matrix));
    const MatrixMeta expected = expected_kernel_meta(config, scorer);
    const KernelRequest req{"dd", &candidates, &candidates};
    if (!m->meta().kernel) {
        spdlog::warn("{} is an unclamped utility matrix; clamping it", config.matrix.string());
        auto clamped = std::make_shared<Matrix>(kernel_from_utility(*m));
        m = clamped;
    }
    if (!kernel_matches(*m, req, expected)) {
        throw StaleCacheError(fmt::format(
            "{} was computed with a different scorer, template, distance or dataset than requested "
            "(scorer {} vs {}, template {} vs {}, distance {} vs {})",
            config.matrix.string(), m->meta().scorer_hash.substr(0, 12), expected.scorer_hash.substr(0, 12),
            m->meta().template_hash.substr(0, 12), expected.template_hash.substr(0, 12),
            distance_name(m->meta().distance), distance_name(expected.distance)));
    }
    return m;
}

}  // namespace

std::map<std::string, KernelFiles> score_datasets(const StageConfig& config, const Scorer& scorer) {
    const LoadedDatasets ds = load_stage_datasets(config);
    if (ds.candidates.empty()) throw DatasetError(fmt::format("candidate dataset {} is empty", config.data.string()));
    std::map<std::string, KernelFiles> files;
    files["dd"] = ensure_kernel(config, scorer, {"dd", &ds.candidates, &ds.candidates}).second;
    if (ds.targets) files["td"] = ensure_kernel(config, scorer, {"td", &*ds.targets, &ds.candidates}).second;
    if (ds.existing) files["de"] = ensure_kernel(config, scorer, {"de", &ds.candidates, &*ds.existing}).second;
    return files;
}

PreparedStage prepare_stage(const StageConfig& config, const Scorer& scorer) {
    const ObjectiveKind objective = stage_objective(config.stage);
    std::set<DatasetRole> have;
    if (!config.data.empty()) have.insert(DatasetRole::candidates);
    if (!config.target.empty()) have.insert(DatasetRole::targets);
    if (!config.existing.empty()) have.insert(DatasetRole::existing);
    validate_pair_roles(objective, have);

    PreparedStage out{load_stage_datasets(config), {}, {}, {}, {}};
    std::filesystem::create_directories(config.out_dir);
    const Dataset& d = out.datasets.candidates;
    if (d.empty()) throw DatasetError(fmt::format("candidate dataset {} is empty", config.data.string()));
    if (out.datasets.existing) {
        const std::size_t overlap = overlap_count(d, *out.datasets.existing);
        if (overlap > 0) spdlog::info("{} ids appear in both D and D_E", overlap);
    }
    if (scorer.descriptor().kind == ScorerKind::remote) {
        probe_repeatability(scorer, build_prompt(config.prompt, std::nullopt, d[0].input), d[0].output);
    }

    out.spec.kind = objective;
    out.spec.eta = config.eta;
    out.spec.nu = config.nu;
    if (!config.matrix.empty()) {
        out.spec.kernel_dd = load_supplied_kernel(config, scorer, d);
        out.files["dd"] = KernelFiles{{}, config.matrix};
    } else {
        auto [kernel, files] = ensure_kernel(config, scorer, {"dd", &d, &d});
        out.spec.kernel_dd = kernel;
        out.files["dd"] = files;
    }
    if (objective == ObjectiveKind::flmi) {
        auto [kernel, files] = ensure_kernel(config, scorer, {"td", &*out.datasets.targets, &d});
        out.spec.kernel_td = kernel;
        out.files["td"] = files;
    }
    if (objective == ObjectiveKind::flcg) {
        auto [kernel, files] = ensure_kernel(config, scorer, {"de", &d, &*out.datasets.existing});
        out.spec.kernel_de = kernel;
        out.files["de"] = files;
    }
    out.spec.validate();
    for (const auto& [tag, files] : out.files) out.kernel_hashes[tag] = matrix_file_hash(files.kernel);

    auto& snap = out.config_snapshot;
    snap["stage"] = stage_name(config.stage);
    snap["objective"] = objective_name(objective);
    snap["distance"] = distance_name(config.distance);
    snap["length_normalization"] = config.distance == DistanceKind::euclid_len_norm ? "sqrt_T" : "none";
    snap["scorer"] = nlohmann::ordered_json::parse(scorer.descriptor().params_json);
    snap["scorer_hash"] = scorer.descriptor().hash;
    snap["template_hash"] = config.prompt.hash();
    snap["datasets"]["D"] = d.content_hash();
    if (out.datasets.targets) snap["datasets"]["D_T"] = out.datasets.targets->content_hash();
    if (out.datasets.existing) snap["datasets"]["D_E"] = out.datasets.existing->content_hash();
    return out;
}

void write_filtered(const Dataset& candidates, const std::vector<std::string>& chosen_ids,
                    const std::filesystem::path& path) {
    std::vector<char> keep(candidates.size(), 0);
    for (const auto& id : chosen_ids) {
        const std::size_t i = candidates.index_of(id);
        if (i == Dataset::npos) throw std::invalid_argument(fmt::format("unknown id \"{}\" in selection", id));
        keep[i] = 1;
    }
    std::vector<Sample> samples;
    for (std::size_t i = 0; i < candidates.size(); ++i) {
        if (keep[i]) samples.push_back(candidates[i]);
    }
    save_dataset(path, samples);
}

namespace {

void write_text(const std::filesystem::path& path, const std::string& text) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw std::runtime_error(fmt::format("cannot write {}", path.string()));
    out << text;
    if (!out) throw std::runtime_error(fmt::format("write failed for {}", path.string()));
}

}  // namespace

StageResult run_stage(const StageConfig& config, const Scorer& scorer) {
    const PreparedStage prepared = prepare_stage(config, scorer);
    const Dataset& d = prepared.datasets.candidates;
    const std::size_t k = budget_to_k(config.budget_fraction, d.size());

    StageResult result;
    result.trace = lazy_greedy_select(prepared.spec, k);

    Selection& sel = result.selection;
    sel.objective = objective_name(prepared.spec.kind);
    sel.stage = stage_name(config.stage);
    sel.eta = config.eta;
    sel.nu = config.nu;
    sel.budget_fraction = config.budget_fraction;
    sel.budget_k = k;
    for (std::size_t j : result.trace.chosen) sel.chosen_ids.push_back(d[j].id);
    sel.gains = result.trace.gains;
    sel.cumulative_values = result.trace.cumulative;
    sel.kernel_hashes = prepared.kernel_hashes;
    sel.config = prepared.config_snapshot;

    result.selection_path = config.out_dir / "selection.json";
    result.filtered_path = config.out_dir / "selected.jsonl";
    write_text(result.selection_path, sel.to_json());
    write_filtered(d, sel.chosen_ids, result.filtered_path);
    spdlog::info("{} selected {} of {} samples (objective {} = {:.6f})", sel.stage, k, d.size(), sel.objective,
                 result.trace.value());
    return result;
}

StageResult run_stage(const StageConfig& config) {
    const auto scorer = make_scorer(config.scorer);
    return run_stage(config, *scorer);
}

Selection random_baseline(const Dataset& candidates, double fraction, std::uint64_t seed, const ObjectiveSpec* spec) {
    const std::size_t n = candidates.size();
    const std::size_t k = budget_to_k(fraction, n);
    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::mt19937_64 rng(seed);
    for (std::size_t t = 0; t < k; ++t) std::swap(order[t], order[t + uniform_index(rng, n - t)]);

    Selection sel;
    sel.objective = "random";
    sel.stage = "";
    sel.budget_fraction = fraction;
    sel.budget_k = k;
    for (std::size_t t = 0; t < k; ++t) sel.chosen_ids.push_back(candidates[order[t]].id);
    sel.config["seed"] = seed;
    sel.config["dataset"] = candidates.content_hash();
    if (spec) {
        const FlReduction reduction = reduce_to_fl(*spec);
        SelectionState state(reduction);
        for (std::size_t t = 0; t < k; ++t) {
            sel.gains.push_back(state.add(order[t]));
            sel.cumulative_values.push_back(state.value());
        }
        sel.config["evaluated_objective"] = objective_name(spec->kind);
        sel.eta = spec->eta;
        sel.nu = spec->nu;
    }
    return sel;
}

std::string ids_hash(const std::vector<std::string>& ids) {
    std::string joined;
    for (const auto& id : ids) {
        joined += id;
        joined += '\n';
    }
    return sha256_hex(joined);
}

std::vector<SweepRow> sweep(const PreparedStage& prepared, const std::vector<double>& fractions) {
    const Dataset& d = prepared.datasets.candidates;
    std::size_t k_max = 0;
    for (double f : fractions) k_max = std::max(k_max, budget_to_k(f, d.size()));
    const GreedyResult trace = lazy_greedy_select(prepared.spec, k_max);

    std::vector<SweepRow> rows;
    for (double f : fractions) {
        SweepRow row;
        row.fraction = f;
        row.k = budget_to_k(f, d.size());
        row.objective_value = row.k == 0 ? 0.0 : trace.cumulative[row.k - 1];
        for (std::size_t t = 0; t < row.k; ++t) row.ids.push_back(d[trace.chosen[t]].id);
        row.ids_hash = ids_hash(row.ids);
        rows.push_back(std::move(row));
    }
    return rows;
}

std::string sweep_csv(const std::vector<SweepRow>& rows) {
    std::string out = "fraction,k,objective_value,ids_hash\n";
    for (const auto& r : rows) out += fmt::format("{},{},{},{}\n", r.fraction, r.k, r.objective_value, r.ids_hash);
    return out;
}

}  // namespace delift
