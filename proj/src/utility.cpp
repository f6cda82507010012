// SPDX-License-Identifier: Apache-2.0

#include "delift/utility.hpp"

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cmath>
#include <condition_variable>
#include <mutex>
#include <optional>
#include <thread>
#include <vector>

#include <fmt/format.h>
#include <spdlog/spdlog.h>

#include "delift/matrix_io.hpp"

namespace delift {

double distance(DistanceKind kind, const TokenProbVector& probs) {
    if (probs.probs.empty()) throw std::invalid_argument("distance of an empty probability vector");
    double acc = 0.0;
    switch (kind) {
        case DistanceKind::euclid_len_norm:
            for (double p : probs.probs) {
                const double e = 1.0 - clamp_prob(p);
                acc += e * e;
            }
            return std::sqrt(acc / static_cast<double>(probs.probs.size()));
        case DistanceKind::kl:
            for (double p : probs.probs) acc -= std::log(clamp_prob(p));
            return acc;
    }
    throw std::invalid_argument("unknown distance kind");
}

UtilityReport utility_from_probs(DistanceKind kind, const TokenProbVector& baseline,
                                 const TokenProbVector& conditioned) {
    if (baseline.token_count() != conditioned.token_count()) {
        throw std::invalid_argument(fmt::format("token count mismatch: baseline {} vs conditioned {}",
                                                baseline.token_count(), conditioned.token_count()));
    }
    UtilityReport r;
    r.baseline = distance(kind, baseline);
    r.conditioned = distance(kind, conditioned);
    r.uf_value = r.baseline - r.conditioned;
    return r;
}

UtilityReport utility_pair(const Scorer& scorer, const PromptTemplate& tmpl, const Sample& target,
                           const Sample& candidate, DistanceKind kind) {
    const auto base = score_target(scorer, tmpl, std::nullopt, target.input, target.output);
    const auto cond =
        score_target(scorer, tmpl, Example{candidate.input, candidate.output}, target.input, target.output);
    return utility_from_probs(kind, base, cond);
}

namespace {

MatrixMeta utility_meta(const Scorer& scorer, const PromptTemplate& tmpl, DistanceKind kind, const Dataset& targets,
                        const Dataset& candidates) {
    MatrixMeta meta;
    meta.distance = kind;
    meta.kernel = false;
    meta.scorer_hash = scorer.descriptor().hash;
    meta.scorer_descriptor = scorer.descriptor().params_json;
    meta.template_hash = tmpl.hash();
    meta.row_data_hash = targets.content_hash();
    meta.col_data_hash = candidates.content_hash();
    return meta;
}

// Rows already completed by an earlier interrupted run, if the checkpoint matches.
std::size_t resume_rows(const std::filesystem::path& checkpoint, const MatrixMeta& meta, const Dataset& targets,
                        const Dataset& candidates, Matrix& out) {
    if (checkpoint.empty() || !std::filesystem::exists(checkpoint)) return 0;
    Matrix partial;
    try {
        partial = load_matrix(checkpoint);
    } catch (const std::exception& e) {
        spdlog::warn("ignoring unreadable checkpoint {}: {}", checkpoint.string(), e.what());
        return 0;
    }
    const auto target_ids = targets.ids();
    const bool prefix = partial.rows() <= target_ids.size() &&
                        std::equal(partial.row_ids().begin(), partial.row_ids().end(), target_ids.begin());
    if (!partial.meta().same_provenance(meta) || partial.meta().row_data_hash != meta.row_data_hash ||
        partial.meta().col_data_hash != meta.col_data_hash ||
        partial.col_ids() != candidates.ids() || !prefix) {
        spdlog::warn("checkpoint {} does not match this computation; starting over", checkpoint.string());
        return 0;
    }
    for (std::size_t i = 0; i < partial.rows(); ++i) {
        std::copy(partial.row(i).begin(), partial.row(i).end(), out.row(i).begin());
    }
    spdlog::info("resuming utility matrix at row {}/{}", partial.rows(), targets.size());
    return partial.rows();
}

void flush_checkpoint(const std::filesystem::path& checkpoint, const Matrix& full, std::size_t rows) {
    const auto& ids = full.row_ids();
    std::vector<std::string> row_ids(ids.begin(), ids.begin() + static_cast<std::ptrdiff_t>(rows));
    std::vector<float> values(full.values().begin(),
                              full.values().begin() + static_cast<std::ptrdiff_t>(rows * full.cols()));
    save_matrix(Matrix(std::move(row_ids), full.col_ids(), std::move(values), full.meta()), checkpoint);
}

struct CellFailure {
    std::size_t row;
    std::size_t col;
    std::string message;
};

}  // namespace

Matrix compute_utility_matrix(const Scorer& scorer, const PromptTemplate& tmpl, const Dataset& targets,
                              const Dataset& candidates, const UtilityOptions& options) {
    if (targets.empty() || candidates.empty()) {
        throw std::invalid_argument("utility matrix needs nonempty target and candidate datasets");
    }
    const DistanceKind kind = options.distance;
    Matrix out(targets.ids(), candidates.ids(), utility_meta(scorer, tmpl, kind, targets, candidates));
    const std::size_t n_rows = targets.size();
    const std::size_t n_cols = candidates.size();

    const std::size_t start = resume_rows(options.checkpoint, out.meta(), targets, candidates, out);

    std::atomic<std::size_t> next_row{start};
    std::atomic<bool> abort{false};
    std::mutex mu;
    std::condition_variable cv;
    std::vector<char> done(n_rows, 0);
    std::optional<CellFailure> failure;
    std::size_t running = 0;

    auto compute_row = [&](std::size_t i) {
        const Sample& target = targets[i];
        auto row = out.row(i);
        std::size_t j = 0;
        try {
            double base_d = 0.0;
            if (options.reuse_baseline) {
                base_d = distance(kind, score_target(scorer, tmpl, std::nullopt, target.input, target.output));
            }
            for (; j < n_cols && !abort.load(std::memory_order_relaxed); ++j) {
                const Sample& cand = candidates[j];
                const auto cond =
                    score_target(scorer, tmpl, Example{cand.input, cand.output}, target.input, target.output);
                if (!options.reuse_baseline) {
                    base_d = distance(kind, score_target(scorer, tmpl, std::nullopt, target.input, target.output));
                }
                row[j] = static_cast<float>(base_d - distance(kind, cond));
            }
        } catch (const std::exception& e) {
            std::lock_guard lock(mu);
            if (!failure || i < failure->row) failure = CellFailure{i, std::min(j, n_cols - 1), e.what()};
            abort = true;
        }
    };

    const int workers = std::max(1, options.workers);
    std::vector<std::thread> pool;
    running = static_cast<std::size_t>(workers);
    for (int w = 0; w < workers; ++w) {
        pool.emplace_back([&] {
            for (;;) {
                if (abort.load()) break;
                const std::size_t i = next_row.fetch_add(1);
                if (i >= n_rows) break;
                compute_row(i);
                std::lock_guard lock(mu);
                if (!abort.load()) done[i] = 1;
                cv.notify_all();
            }
            std::lock_guard lock(mu);
            --running;
            cv.notify_all();
        });
    }

    std::size_t prefix = start;
    std::size_t flushed = start;
    auto last_flush = std::chrono::steady_clock::now();
    {
        std::unique_lock lock(mu);
        for (;;) {
            cv.wait(lock, [&] { return running == 0 || (prefix < n_rows && done[prefix]); });
            while (prefix < n_rows && done[prefix]) ++prefix;
            if (options.progress) options.progress(prefix, n_rows);
            const auto now = std::chrono::steady_clock::now();
            if (!options.checkpoint.empty() && prefix > flushed && prefix < n_rows &&
                now - last_flush > std::chrono::seconds(2)) {
                flush_checkpoint(options.checkpoint, out, prefix);
                flushed = prefix;
                last_flush = now;
            }
            if (running == 0) break;
        }
    }
    for (auto& t : pool) t.join();

    if (failure) {
        if (!options.checkpoint.empty() && prefix > flushed) flush_checkpoint(options.checkpoint, out, prefix);
        throw UtilityCellError(fmt::format("utility cell (i={}, j={}) target \"{}\" candidate \"{}\" failed: {}",
                                           failure->row, failure->col, targets[failure->row].id,
                                           candidates[failure->col].id, failure->message),
                               failure->row, failure->col);
    }
    if (!options.checkpoint.empty()) {
        std::error_code ec;
        std::filesystem::remove(options.checkpoint, ec);
        std::filesystem::remove(sidecar_path(options.checkpoint), ec);
    }
    out.check_finite();
    return out;
}

Matrix kernel_from_utility(const Matrix& utility) {
    std::vector<float> values(utility.values());
    for (float& v : values) v = v > 0.0f ? v : 0.0f;
    MatrixMeta meta = utility.meta();
    meta.kernel = true;
    return Matrix(utility.row_ids(), utility.col_ids(), std::move(values), std::move(meta));
}

PmiReport pmi_from_probs(const TokenProbVector& baseline, const TokenProbVector& conditioned, double tolerance) {
    PmiReport r;
    r.uf_kl = utility_from_probs(DistanceKind::kl, baseline, conditioned).uf_value;
    for (std::size_t t = 0; t < baseline.token_count(); ++t) {
        r.pmi_sum += std::log(clamp_prob(conditioned.probs[t]) / clamp_prob(baseline.probs[t]));
    }
    r.abs_diff = std::abs(r.uf_kl - r.pmi_sum);
    r.pass = r.abs_diff <= tolerance;
    return r;
}

PmiReport pmi_identity_check(const Scorer& scorer, const PromptTemplate& tmpl, const Sample& target,
                             const Sample& candidate, double tolerance) {
    const auto base = score_target(scorer, tmpl, std::nullopt, target.input, target.output);
    const auto cond =
        score_target(scorer, tmpl, Example{candidate.input, candidate.output}, target.input, target.output);
    return pmi_from_probs(base, cond, tolerance);
}

}  // namespace delift
