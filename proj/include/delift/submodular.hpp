// SPDX-License-Identifier: Apache-2.0
//
// Facility-location objectives over a nonnegative kernel and cardinality-
// constrained greedy maximization.
//
//   FL(A)   = sum_i max_{j in A} s_ij
//   FLMI(A) = FL(A) + eta * sum_{j in A} max_{i in D_T} s'_ij
//   FLCG(A) = sum_i max(max_{j in A} s_ij - nu * max_{k in D_E} s_ik, 0)
//
// A max over an empty set is 0, so f(empty) = 0 for all three.

#pragma once

#include <cstddef>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "delift/dataset.hpp"
#include "delift/matrix.hpp"

namespace delift {

struct ObjectiveSpec {
    ObjectiveKind kind = ObjectiveKind::fl;
    double eta = 1.0;
    double nu = 1.0;
    std::shared_ptr<const Matrix> kernel_dd;  // rows: covered points i in D, cols: candidates j in D
    std::shared_ptr<const Matrix> kernel_td;  // rows: D_T, cols: candidates (FLMI)
    std::shared_ptr<const Matrix> kernel_de;  // rows: D (as kernel_dd), cols: D_E (FLCG)

    /// Throws std::invalid_argument on missing/misshapen/negative kernels or negative weights.
    void validate() const;
    std::size_t candidate_count() const { return kernel_dd ? kernel_dd->cols() : 0; }
};

/// Direct evaluation of the objective definition. Duplicate indices count once.
double objective_value(const ObjectiveSpec& spec, std::span<const std::size_t> subset);
/// Same, addressing candidates by column id; throws on an unknown id.
double objective_value(const ObjectiveSpec& spec, const std::vector<std::string>& subset_ids);

/// Every objective expressed as FL on a (possibly transformed) kernel plus a
/// modular per-candidate bonus:  f(A) = sum_i max_{j in A} t_ij + sum_{j in A} bonus_j.
struct FlReduction {
    std::size_t rows = 0;
    std::size_t cols = 0;
    std::vector<double> by_column;  // t_ij stored at [j * rows + i]
    std::vector<double> bonus;

    double at(std::size_t i, std::size_t j) const { return by_column[j * rows + i]; }
    double value(std::span<const std::size_t> subset) const;
};

FlReduction reduce_to_fl(const ObjectiveSpec& spec);

/// Chosen set plus per-row running maxima; gains are O(rows).
class SelectionState {
public:
    explicit SelectionState(const FlReduction& reduction);

    /// f(A + d) - f(A). Throws std::invalid_argument if d is already chosen or out of range.
    double marginal_gain(std::size_t d) const;
    /// Adds d and returns its gain.
    double add(std::size_t d);

    const std::vector<std::size_t>& chosen() const noexcept { return chosen_; }
    const std::vector<double>& cur_max() const noexcept { return cur_max_; }
    double value() const noexcept { return value_; }
    bool contains(std::size_t d) const { return d < in_set_.size() && in_set_[d]; }

private:
    double gain_unchecked(std::size_t d) const;

    const FlReduction* reduction_;
    std::vector<std::size_t> chosen_;
    std::vector<double> cur_max_;
    std::vector<char> in_set_;
    double value_ = 0.0;
};

double marginal_gain(const SelectionState& state, std::size_t d);

/// Pick order with each step's marginal gain and running objective value.
struct GreedyResult {
    std::vector<std::size_t> chosen;
    std::vector<double> gains;
    std::vector<double> cumulative;

    double value() const { return cumulative.empty() ? 0.0 : cumulative.back(); }
    bool operator==(const GreedyResult&) const = default;
};

/// Plain greedy: every step evaluates all remaining candidates; ties go to the
/// smallest index. k > n is truncated with a warning.
GreedyResult greedy_select(const ObjectiveSpec& spec, std::size_t k, int workers = 1);

/// Lazy greedy over stale upper bounds. Same output as greedy_select.
GreedyResult lazy_greedy_select(const ObjectiveSpec& spec, std::size_t k);

struct BruteForceResult {
    std::vector<std::size_t> best;
    double value = 0.0;
};

inline constexpr double kBruteForceLimit = 1e6;

/// Exact maximizer over all size-k subsets; ties go to the lexicographically
/// smallest index set. Throws std::length_error when C(n, k) > 1e6.
BruteForceResult brute_force_select(const ObjectiveSpec& spec, std::size_t k);

}  // namespace delift
