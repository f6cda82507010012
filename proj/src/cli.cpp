// SPDX-License-Identifier: Apache-2.0

#include "delift/cli.hpp"

#include <algorithm>
#include <cstdlib>
#include <fstream>
#include <iostream>
#include <random>
#include <sstream>

#include <CLI11.hpp>
#include <fmt/format.h>
#include <fmt/ostream.h>
#include <nlohmann/json.hpp>
#include <spdlog/spdlog.h>

#include "delift/matrix_io.hpp"
#include "delift/pipeline.hpp"
#include "delift/random.hpp"
#include "delift/synthetic.hpp"
#include "delift/utility.hpp"

namespace delift::cli {
namespace {

constexpr const char* kAuthEnv = "DELIFT_API_KEY";

struct CliConfig {
    std::string config_file;
    std::string stage = "instruction";
    std::string data;
    std::string target;
    std::string existing;
    double budget_fraction = kDefaultBudgetFraction;
    double eta = 1.0;
    double nu = 1.0;
    std::string distance = "euclid";
    std::string scorer = "ngram";
    std::string endpoint;
    std::string model;
    std::string template_file;
    std::string corpus;
    int ngram_order = 3;
    double ngram_alpha = 0.1;
    std::vector<double> ngram_lambdas = {0.7, 0.2, 0.1};
    int max_in_flight = 8;
    int workers = 1;
    std::string out = "delift_out";
    std::uint64_t seed = 0;
    std::string matrix;
    std::vector<double> fractions = {0.05, 0.15, 0.30, 0.50, 1.00};
    std::size_t pairs = 100;
    std::size_t triples = 200;
    double tolerance = 1e-9;
    std::string selection;
    std::string file;
    std::string verbosity = "info";
};

class UsageError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

void add_scorer_flags(CLI::App* cmd, CliConfig& c) {
    cmd->add_option("--scorer", c.scorer, "Scorer backend")->check(CLI::IsMember({"ngram", "remote"}));
    cmd->add_option("--endpoint", c.endpoint, "Completions endpoint URL (remote scorer)");
    cmd->add_option("--model", c.model, "Model name sent to the endpoint (remote scorer)");
    cmd->add_option("--max-in-flight", c.max_in_flight, "Concurrent remote requests")->check(CLI::PositiveNumber);
    cmd->add_option("--corpus", c.corpus, "Base corpus for the n-gram scorer (raw text file)");
    cmd->add_option("--ngram-order", c.ngram_order, "n-gram order")->check(CLI::Range(1, kNgramMaxOrder));
    cmd->add_option("--ngram-alpha", c.ngram_alpha, "Add-alpha smoothing")->check(CLI::PositiveNumber);
    cmd->add_option("--ngram-lambdas", c.ngram_lambdas, "Interpolation weights, highest order first")
        ->delimiter(',');
    cmd->add_option("--template-file", c.template_file, "Prompt template JSON {with_context, without_context}");
    cmd->add_option("--distance", c.distance, "Utility distance")->check(CLI::IsMember({"euclid", "kl"}));
    cmd->add_option("--workers", c.workers, "Parallel workers")->check(CLI::PositiveNumber);
}

void add_stage_flags(CLI::App* cmd, CliConfig& c, bool with_stage) {
    if (with_stage) {
        cmd->add_option("--stage", c.stage, "Fine-tuning stage")
            ->check(CLI::IsMember({"instruction", "task", "continual"}));
        cmd->add_option("--budget-fraction", c.budget_fraction, "Fraction of D to keep")
            ->check(CLI::Range(0.0, 1.0));
        cmd->add_option("--eta", c.eta, "FLMI target-alignment weight")->check(CLI::NonNegativeNumber);
        cmd->add_option("--nu", c.nu, "FLCG existing-data weight")->check(CLI::NonNegativeNumber);
        cmd->add_option("--matrix", c.matrix, "Reuse a precomputed D x D kernel file");
    }
    cmd->add_option("--data", c.data, "Candidate dataset D (JSONL)");
    cmd->add_option("--target", c.target, "Target dataset D_T (JSONL)");
    cmd->add_option("--existing", c.existing, "Existing dataset D_E (JSONL)");
    cmd->add_option("--out", c.out, "Output directory");
    add_scorer_flags(cmd, c);
}

void add_common(CLI::App* cmd, CliConfig& c) {
    cmd->add_option("--config", c.config_file, "JSON file with flag values (flags win)");
    cmd->add_option("-v,--verbosity", c.verbosity, "Log level")
        ->check(CLI::IsMember({"trace", "debug", "info", "warn", "error", "off"}));
}

// Fills options the user did not pass on the command line from the JSON config file.
void apply_config_file(CLI::App* cmd, const std::string& path) {
    std::ifstream in(path);
    if (!in) throw UsageError(fmt::format("cannot open config file {}", path));
    nlohmann::json j;
    try {
        j = nlohmann::json::parse(in);
    } catch (const nlohmann::json::exception& e) {
        throw UsageError(fmt::format("config file {}: {}", path, e.what()));
    }
    if (!j.is_object()) throw UsageError(fmt::format("config file {} must hold a JSON object", path));
    for (const auto& [key, value] : j.items()) {
        CLI::Option* opt = cmd->get_option_no_throw("--" + key);
        if (opt == nullptr) {
            spdlog::warn("config file {}: ignoring unknown key \"{}\"", path, key);
            continue;
        }
        if (opt->count() > 0) continue;
        auto as_text = [](const nlohmann::json& v) { return v.is_string() ? v.get<std::string>() : v.dump(); };
        if (value.is_array()) {
            for (const auto& v : value) opt->add_result(as_text(v));
        } else {
            opt->add_result(as_text(value));
        }
        try {
            opt->run_callback();
        } catch (const CLI::Error& e) {
            throw UsageError(fmt::format("config file {}: key \"{}\": {}", path, key, e.what()));
        }
    }
}

StageConfig to_stage_config(const CliConfig& c) {
    StageConfig s;
    s.stage = parse_stage(c.stage);
    s.budget_fraction = c.budget_fraction;
    s.eta = c.eta;
    s.nu = c.nu;
    s.distance = parse_distance(c.distance);
    s.scorer.kind = c.scorer == "remote" ? ScorerKind::remote : ScorerKind::ngram;
    s.scorer.ngram.order = c.ngram_order;
    s.scorer.ngram.alpha = c.ngram_alpha;
    s.scorer.ngram.lambdas = c.ngram_lambdas;
    s.scorer.corpus = c.corpus;
    s.scorer.remote.endpoint = c.endpoint;
    s.scorer.remote.model = c.model;
    s.scorer.remote.max_in_flight = c.max_in_flight;
    if (const char* token = std::getenv(kAuthEnv)) s.scorer.remote.auth_token = token;
    if (s.scorer.kind == ScorerKind::remote && c.endpoint.empty()) {
        throw UsageError("--scorer remote requires --endpoint");
    }
    if (!c.template_file.empty()) s.prompt = PromptTemplate::load(c.template_file);
    s.data = c.data;
    s.target = c.target;
    s.existing = c.existing;
    s.matrix = c.matrix;
    s.out_dir = c.out;
    s.workers = c.workers;
    return s;
}

void write_text(const std::filesystem::path& path, const std::string& text) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw std::runtime_error(fmt::format("cannot write {}", path.string()));
    out << text;
}

int run_score(const CliConfig& c, std::ostream& out) {
    const StageConfig config = to_stage_config(c);
    if (config.data.empty()) throw UsageError("score requires --data");
    std::filesystem::create_directories(config.out_dir);
    const auto scorer = make_scorer(config.scorer);
    const auto files = score_datasets(config, *scorer);
    for (const auto& [tag, f] : files) {
        // Stable names next to the cache so `select --matrix` can point at them.
        for (const auto& [src, kind] : {std::pair{f.utility, "utility"}, std::pair{f.kernel, "kernel"}}) {
            const auto dst = config.out_dir / fmt::format("{}_{}.dkm", kind, tag);
            std::filesystem::copy_file(src, dst, std::filesystem::copy_options::overwrite_existing);
            std::filesystem::copy_file(sidecar_path(src), sidecar_path(dst),
                                       std::filesystem::copy_options::overwrite_existing);
            fmt::print(out, "{} {}: {}\n", kind, tag, dst.string());
        }
    }
    return kExitOk;
}

int run_select(const CliConfig& c, std::ostream& out) {
    const StageConfig config = to_stage_config(c);
    const auto scorer = make_scorer(config.scorer);
    const StageResult result = run_stage(config, *scorer);
    fmt::print(out, "selected {} samples ({} objective {:.6f})\n", result.selection.chosen_ids.size(),
               result.selection.objective, result.trace.value());
    fmt::print(out, "selection: {}\nfiltered dataset: {}\n", result.selection_path.string(),
               result.filtered_path.string());
    return kExitOk;
}

int run_random(const CliConfig& c, std::ostream& out) {
    if (c.data.empty()) throw UsageError("random requires --data");
    const Dataset d = load_dataset(c.data, DatasetRole::candidates);
    ObjectiveSpec spec;
    const ObjectiveSpec* eval = nullptr;
    if (!c.matrix.empty()) {
        auto m = std::make_shared<Matrix>(load_matrix(c.matrix));
        if (m->col_ids() != d.ids()) {
            throw std::runtime_error(fmt::format("{} columns do not match the ids of {}", c.matrix, c.data));
        }
        spec.kernel_dd = m->meta().kernel ? m : std::make_shared<Matrix>(kernel_from_utility(*m));
        eval = &spec;
    }
    const Selection sel = random_baseline(d, c.budget_fraction, c.seed, eval);
    std::filesystem::create_directories(c.out);
    const auto sel_path = std::filesystem::path(c.out) / "random_selection.json";
    const auto filtered = std::filesystem::path(c.out) / "random_selected.jsonl";
    write_text(sel_path, sel.to_json());
    write_filtered(d, sel.chosen_ids, filtered);
    fmt::print(out, "random baseline: {} of {} samples (seed {})\nselection: {}\nfiltered dataset: {}\n",
               sel.chosen_ids.size(), d.size(), c.seed, sel_path.string(), filtered.string());
    return kExitOk;
}

int run_sweep(const CliConfig& c, std::ostream& out) {
    const StageConfig config = to_stage_config(c);
    for (double f : c.fractions) {
        if (!(f > 0.0 && f <= 1.0)) throw UsageError(fmt::format("sweep fraction {} is outside (0, 1]", f));
    }
    const auto scorer = make_scorer(config.scorer);
    const PreparedStage prepared = prepare_stage(config, *scorer);
    const std::string csv = sweep_csv(sweep(prepared, c.fractions));
    const auto path = config.out_dir / "sweep.csv";
    write_text(path, csv);
    out << csv;
    fmt::print(out, "sweep: {}\n", path.string());
    return kExitOk;
}

// Random nonnegative kernels; checks diminishing returns and monotonicity for every objective kind.
std::size_t submodularity_spot_checks(std::size_t triples, std::uint64_t seed, const Matrix* real_kernel,
                                      std::ostream& out) {
    std::mt19937_64 rng(seed ^ 0x5eedULL);
    auto uniform01 = [&] { return static_cast<float>(uniform_index(rng, 1'000'000)) / 1e6f; };
    std::size_t failures = 0;
    for (std::size_t t = 0; t < triples; ++t) {
        const std::size_t rows = 1 + uniform_index(rng, 12);
        const std::size_t cols = 2 + uniform_index(rng, 11);
        auto make = [&](std::size_t r, std::size_t c_) {
            std::vector<std::string> rid(r), cid(c_);
            for (std::size_t i = 0; i < r; ++i) rid[i] = fmt::format("r{}", i);
            for (std::size_t j = 0; j < c_; ++j) cid[j] = fmt::format("c{}", j);
            std::vector<float> v(r * c_);
            for (float& x : v) x = uniform01();
            MatrixMeta meta;
            meta.kernel = true;
            return std::make_shared<Matrix>(rid, cid, std::move(v), meta);
        };
        ObjectiveSpec spec;
        spec.kind = static_cast<ObjectiveKind>(t % 3);
        if (real_kernel && t % 2 == 0) {
            spec.kind = ObjectiveKind::fl;
            spec.kernel_dd = std::make_shared<Matrix>(*real_kernel);
        } else {
            spec.kernel_dd = make(rows, cols);
            spec.kernel_td = make(1 + uniform_index(rng, 5), cols);
            spec.kernel_de = make(rows, 1 + uniform_index(rng, 5));
        }
        const std::size_t n = spec.candidate_count();
        if (n < 2) continue;
        const std::size_t d = uniform_index(rng, n);
        std::vector<std::size_t> a;
        std::vector<std::size_t> b;
        for (std::size_t j = 0; j < n; ++j) {
            if (j == d) continue;
            const std::size_t r = uniform_index(rng, 3);
            if (r == 0) a.push_back(j);
            if (r <= 1) b.push_back(j);
        }
        auto with = [](std::vector<std::size_t> s, std::size_t x) {
            s.push_back(x);
            return s;
        };
        const double fa = objective_value(spec, a);
        const double fb = objective_value(spec, b);
        const double gain_a = objective_value(spec, with(a, d)) - fa;
        const double gain_b = objective_value(spec, with(b, d)) - fb;
        if (fa > fb + 1e-12 || gain_a < gain_b - 1e-12) ++failures;
    }
    fmt::print(out, "submodularity/monotonicity: {}/{} pass\n", triples - failures, triples);
    return failures;
}

int run_verify(const CliConfig& c, std::ostream& out) {
    StageConfig config = to_stage_config(c);
    const auto scorer = make_scorer(config.scorer);
    if (scorer->descriptor().kind == ScorerKind::remote) {
        spdlog::warn("the identity check assumes a deterministic scorer; remote results may vary");
    }
    std::vector<Sample> samples;
    if (c.data.empty()) {
        samples = make_clustered_corpus(50, 3, c.seed).samples;
    } else {
        samples = load_dataset(c.data, DatasetRole::candidates).samples();
    }
    if (samples.empty()) throw std::runtime_error("verify needs at least one sample");

    std::mt19937_64 rng(c.seed);
    std::size_t passes = 0;
    double worst = 0.0;
    for (std::size_t p = 0; p < c.pairs; ++p) {
        const auto& target = samples[uniform_index(rng, samples.size())];
        const auto& cand = samples[uniform_index(rng, samples.size())];
        const PmiReport r = pmi_identity_check(*scorer, config.prompt, target, cand, c.tolerance);
        worst = std::max(worst, r.abs_diff);
        if (r.pass) {
            ++passes;
        } else {
            fmt::print(out, "FAIL pair ({}, {}): uf_kl={:.12g} pmi_sum={:.12g} diff={:.3g}\n", target.id, cand.id,
                       r.uf_kl, r.pmi_sum, r.abs_diff);
        }
    }
    fmt::print(out, "pmi identity: {}/{} pass (max |diff| {:.3g}, tolerance {:.3g})\n", passes, c.pairs, worst,
               c.tolerance);

    std::optional<Matrix> real;
    if (!c.matrix.empty()) real = kernel_from_utility(load_matrix(c.matrix));
    const std::size_t sub_failures = submodularity_spot_checks(c.triples, c.seed, real ? &*real : nullptr, out);
    const bool ok = passes == c.pairs && sub_failures == 0;
    fmt::print(out, "verify: {}\n", ok ? "PASS" : "FAIL");
    return ok ? kExitOk : kExitRuntime;
}

nlohmann::ordered_json matrix_info(const std::filesystem::path& path) {
    const Matrix m = load_matrix(path);
    nlohmann::ordered_json j;
    j["file"] = path.string();
    j["type"] = "matrix";
    j["rows"] = m.rows();
    j["cols"] = m.cols();
    j["kernel"] = m.meta().kernel;
    j["distance"] = distance_name(m.meta().distance);
    j["scorer_hash"] = m.meta().scorer_hash;
    j["template_hash"] = m.meta().template_hash;
    j["row_data_hash"] = m.meta().row_data_hash;
    j["col_data_hash"] = m.meta().col_data_hash;
    j["created_at"] = m.meta().created_at;
    j["payload_sha256"] = matrix_file_hash(path);
    if (!m.values().empty()) {
        const auto [lo, hi] = std::minmax_element(m.values().begin(), m.values().end());
        double sum = 0.0;
        std::size_t positive = 0;
        for (float v : m.values()) {
            sum += v;
            if (v > 0.0f) ++positive;
        }
        j["min"] = *lo;
        j["max"] = *hi;
        j["mean"] = sum / static_cast<double>(m.values().size());
        j["positive_fraction"] = static_cast<double>(positive) / static_cast<double>(m.values().size());
    }
    return j;
}

int run_info(const CliConfig& c, std::ostream& out) {
    std::string path = !c.file.empty() ? c.file : !c.matrix.empty() ? c.matrix : c.selection;
    if (path.empty()) throw UsageError("info needs a file (positional, --matrix or --selection)");
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error(fmt::format("cannot open {}", path));
    char magic[4] = {};
    in.read(magic, 4);
    if (in.gcount() == 4 && std::equal(magic, magic + 4, kMatrixMagic)) {
        out << matrix_info(path).dump(2) << "\n";
        return kExitOk;
    }
    in.seekg(0);
    std::ostringstream buf;
    buf << in.rdbuf();
    const Selection sel = Selection::from_json(buf.str());
    nlohmann::ordered_json j = nlohmann::ordered_json::parse(sel.to_json());
    j["file"] = path;
    j["type"] = "selection";
    j["count"] = sel.chosen_ids.size();
    j["final_value"] = sel.cumulative_values.empty() ? 0.0 : sel.cumulative_values.back();
    out << j.dump(2) << "\n";
    return kExitOk;
}

}  // namespace

int dispatch(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
    CliConfig c;
    CLI::App app{"Model-aware data subset selection for fine-tuning", "delift"};
    app.require_subcommand(1);
    app.option_defaults()->always_capture_default();

    auto* score = app.add_subcommand("score", "Compute utility matrices and kernels");
    add_stage_flags(score, c, false);
    add_common(score, c);

    auto* select = app.add_subcommand("select", "Select a subset for a fine-tuning stage");
    add_stage_flags(select, c, true);
    add_common(select, c);

    auto* random = app.add_subcommand("random", "Uniform random baseline selection");
    random->add_option("--data", c.data, "Candidate dataset D (JSONL)");
    random->add_option("--budget-fraction", c.budget_fraction, "Fraction of D to keep")->check(CLI::Range(0.0, 1.0));
    random->add_option("--seed", c.seed, "RNG seed");
    random->add_option("--matrix", c.matrix, "Kernel used to report FL values of the random pick");
    random->add_option("--out", c.out, "Output directory");
    add_common(random, c);

    auto* sweep_cmd = app.add_subcommand("sweep", "Objective value across budget fractions");
    add_stage_flags(sweep_cmd, c, true);
    sweep_cmd->add_option("--fractions", c.fractions, "Budget fractions")->delimiter(',');
    add_common(sweep_cmd, c);

    auto* verify = app.add_subcommand("verify", "Check the KL/PMI identity and submodularity");
    verify->add_option("--data", c.data, "Dataset to draw pairs from (default: synthetic, 50 samples)");
    verify->add_option("--pairs", c.pairs, "Number of (target, candidate) pairs");
    verify->add_option("--triples", c.triples, "Submodularity spot checks");
    verify->add_option("--tolerance", c.tolerance, "Identity tolerance");
    verify->add_option("--seed", c.seed, "RNG seed");
    verify->add_option("--matrix", c.matrix, "Also spot-check this kernel");
    add_scorer_flags(verify, c);
    add_common(verify, c);

    auto* info = app.add_subcommand("info", "Describe a matrix or selection file as JSON");
    info->add_option("file", c.file, "Matrix (.dkm) or selection JSON");
    info->add_option("--matrix", c.matrix, "Matrix file");
    info->add_option("--selection", c.selection, "Selection file");
    add_common(info, c);

    std::vector<std::string> reversed(args.rbegin(), args.rend());
    CLI::App* active = nullptr;
    try {
        app.parse(reversed);
        active = app.get_subcommands().front();
        if (!c.config_file.empty()) apply_config_file(active, c.config_file);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e, out, err);
        return code == 0 ? kExitOk : kExitUsage;
    } catch (const UsageError& e) {
        fmt::print(err, "error: {}\n", e.what());
        return kExitUsage;
    }

    spdlog::set_level(spdlog::level::from_str(c.verbosity));
    const std::string name = active->get_name();
    try {
        if (name == "score") return run_score(c, out);
        if (name == "select") return run_select(c, out);
        if (name == "random") return run_random(c, out);
        if (name == "sweep") return run_sweep(c, out);
        if (name == "verify") return run_verify(c, out);
        if (name == "info") return run_info(c, out);
    } catch (const UsageError& e) {
        fmt::print(err, "error: {}\n{}", e.what(), active->help());
        return kExitUsage;
    } catch (const RoleError& e) {
        fmt::print(err, "error: {}\n", e.what());
        return kExitUsage;
    } catch (const std::exception& e) {
        fmt::print(err, "error: {}\n", e.what());
        return kExitRuntime;
    }
    return kExitUsage;
}

}  // namespace delift::cli
