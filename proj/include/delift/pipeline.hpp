// SPDX-License-Identifier: Apache-2.0
//
// Stage-level orchestration: stage -> objective mapping, budgets, kernel
// caching, selection outputs, budget sweeps and the random baseline.

#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <memory>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "delift/dataset.hpp"
#include "delift/matrix.hpp"
#include "delift/ngram_scorer.hpp"
#include "delift/remote_scorer.hpp"
#include "delift/scorer.hpp"
#include "delift/submodular.hpp"

namespace delift {

enum class Stage { instruction, task, continual };

std::string_view stage_name(Stage stage);
Stage parse_stage(std::string_view name);
/// instruction -> FL, task -> FLMI, continual -> FLCG.
ObjectiveKind stage_objective(Stage stage);

inline constexpr double kDefaultBudgetFraction = 0.3;

/// ceil(fraction * n), capped at n. Products within 1e-9 of an integer are
/// not rounded up (0.3 * 10 is 3, not 4). Throws std::invalid_argument unless 0 < fraction <= 1.
std::size_t budget_to_k(double fraction, std::size_t n);

struct ScorerConfig {
    ScorerKind kind = ScorerKind::ngram;
    NgramConfig ngram;
    std::filesystem::path corpus;  // n-gram base corpus; empty path = empty corpus
    RemoteConfig remote;
};

std::unique_ptr<Scorer> make_scorer(const ScorerConfig& config);

struct StageConfig {
    Stage stage = Stage::instruction;
    double budget_fraction = kDefaultBudgetFraction;
    double eta = 1.0;
    double nu = 1.0;
    DistanceKind distance = DistanceKind::euclid_len_norm;
    ScorerConfig scorer;
    PromptTemplate prompt;
    std::filesystem::path data;      // D
    std::filesystem::path target;    // D_T
    std::filesystem::path existing;  // D_E
    std::filesystem::path matrix;    // precomputed D x D kernel to reuse
    std::filesystem::path out_dir = "delift_out";
    int workers = 1;
};

/// Cached kernel is inconsistent with the requested configuration.
class StaleCacheError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

struct Selection {
    std::string objective;  // FL | FLMI | FLCG | random
    std::string stage;
    double eta = 1.0;
    double nu = 1.0;
    double budget_fraction = kDefaultBudgetFraction;
    std::size_t budget_k = 0;
    std::vector<std::string> chosen_ids;
    std::vector<double> gains;
    std::vector<double> cumulative_values;
    std::map<std::string, std::string> kernel_hashes;
    nlohmann::ordered_json config = nlohmann::ordered_json::object();

    /// Deterministic serialization (no timestamps, no paths).
    std::string to_json() const;
    static Selection from_json(std::string_view text);
};

struct LoadedDatasets {
    Dataset candidates;
    std::optional<Dataset> targets;
    std::optional<Dataset> existing;
};

LoadedDatasets load_stage_datasets(const StageConfig& config);

struct KernelFiles {
    std::filesystem::path utility;
    std::filesystem::path kernel;
};

/// Everything selection needs: datasets, the objective and kernel file hashes.
struct PreparedStage {
    LoadedDatasets datasets;
    ObjectiveSpec spec;
    std::map<std::string, KernelFiles> files;  // keyed "dd", "td", "de"
    std::map<std::string, std::string> kernel_hashes;
    nlohmann::ordered_json config_snapshot;
};

/// Computes (or reuses from out_dir/cache) the D x D kernel, plus D_T x D and
/// D x D_E when those datasets are configured. Keyed "dd", "td", "de".
std::map<std::string, KernelFiles> score_datasets(const StageConfig& config, const Scorer& scorer);

/// Loads datasets, validates roles and computes or loads cached kernels.
PreparedStage prepare_stage(const StageConfig& config, const Scorer& scorer);

struct StageResult {
    Selection selection;
    GreedyResult trace;
    std::filesystem::path selection_path;
    std::filesystem::path filtered_path;
};

/// Runs lazy greedy at k = budget_to_k and writes selection.json and selected.jsonl to out_dir.
StageResult run_stage(const StageConfig& config, const Scorer& scorer);
StageResult run_stage(const StageConfig& config);

/// Seeded uniform sample without replacement, ids in draw order. When `spec`
/// is given, gains and cumulative values are evaluated on its objective.
Selection random_baseline(const Dataset& candidates, double fraction, std::uint64_t seed,
                          const ObjectiveSpec* spec = nullptr);

struct SweepRow {
    double fraction = 0.0;
    std::size_t k = 0;
    double objective_value = 0.0;
    std::string ids_hash;
    std::vector<std::string> ids;
};

/// One greedy run at the largest budget; each fraction takes a prefix.
std::vector<SweepRow> sweep(const PreparedStage& prepared, const std::vector<double>& fractions);
std::string sweep_csv(const std::vector<SweepRow>& rows);

/// SHA-256 of the newline-joined ids.
std::string ids_hash(const std::vector<std::string>& ids);

/// Writes filtered JSONL containing the chosen samples in original file order.
void write_filtered(const Dataset& candidates, const std::vector<std::string>& chosen_ids,
                    const std::filesystem::path& path);

}  // namespace delift
