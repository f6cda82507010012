// SPDX-License-Identifier: Apache-2.0
//
// Pairwise in-context utility: how much supplying candidate j as an example
// moves target i's teacher-forced token probabilities toward the all-ones
// ground truth.
//
//   UF_ij = d(GT_i, p(y_i | x_i)) - d(GT_i, p(y_i | x_i, x_j, y_j))

#pragma once

#include <cstddef>
#include <filesystem>
#include <functional>
#include <stdexcept>
#include <string>

#include "delift/dataset.hpp"
#include "delift/matrix.hpp"
#include "delift/scorer.hpp"

namespace delift {

/// euclid: ||1 - p||_2 / sqrt(T), in [0, 1].  kl: -sum_t ln p_t.
/// Throws std::invalid_argument on an empty vector.
double distance(DistanceKind kind, const TokenProbVector& probs);

struct UtilityReport {
    double uf_value = 0.0;
    double baseline = 0.0;     // d(GT_i, p(y_i | x_i))
    double conditioned = 0.0;  // d(GT_i, p(y_i | x_i, x_j, y_j))
};

UtilityReport utility_from_probs(DistanceKind kind, const TokenProbVector& baseline,
                                 const TokenProbVector& conditioned);

UtilityReport utility_pair(const Scorer& scorer, const PromptTemplate& tmpl, const Sample& target,
                           const Sample& candidate, DistanceKind kind);

class UtilityCellError : public std::runtime_error {
public:
    UtilityCellError(const std::string& what, std::size_t row, std::size_t col)
        : std::runtime_error(what), row_(row), col_(col) {}
    std::size_t row() const noexcept { return row_; }
    std::size_t col() const noexcept { return col_; }

private:
    std::size_t row_;
    std::size_t col_;
};

struct UtilityOptions {
    DistanceKind distance = DistanceKind::euclid_len_norm;
    int workers = 1;
    /// Score each row's baseline once and reuse it; false rescores it per cell.
    bool reuse_baseline = true;
    /// When set, completed row prefixes are flushed here and a rerun resumes from them.
    std::filesystem::path checkpoint;
    std::function<void(std::size_t rows_done, std::size_t rows_total)> progress;
};

/// Rows are targets, columns candidates. Bit-identical for any worker count.
Matrix compute_utility_matrix(const Scorer& scorer, const PromptTemplate& tmpl, const Dataset& targets,
                              const Dataset& candidates, const UtilityOptions& options = {});

/// s_ij = max(UF_ij, 0); sets the kernel flag.
Matrix kernel_from_utility(const Matrix& utility);

struct PmiReport {
    double uf_kl = 0.0;
    double pmi_sum = 0.0;
    double abs_diff = 0.0;
    bool pass = false;
};

/// KL utility versus the summed per-token log ratio ln(conditioned_t / baseline_t).
PmiReport pmi_from_probs(const TokenProbVector& baseline, const TokenProbVector& conditioned, double tolerance);

PmiReport pmi_identity_check(const Scorer& scorer, const PromptTemplate& tmpl, const Sample& target,
                             const Sample& candidate, double tolerance = 1e-9);

}  // namespace delift
