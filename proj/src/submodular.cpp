// SPDX-License-Identifier: Apache-2.0

#include "delift/submodular.hpp"

#include <algorithm>
#include <queue>
#include <stdexcept>
#include <thread>
#include <unordered_map>

#include <fmt/format.h>
#include <spdlog/spdlog.h>

namespace delift {
namespace {

void require_nonnegative(const Matrix& m, std::string_view name) {
    for (std::size_t k = 0; k < m.values().size(); ++k) {
        if (!(m.values()[k] >= 0.0f)) {
            throw std::invalid_argument(fmt::format("{} has a negative or non-finite entry at ({}, {})", name,
                                                    k / m.cols(), k % m.cols()));
        }
    }
}

// max_{k in D_E} s_ik for each row of kernel_dd; 0 when D_E is empty or absent.
std::vector<double> existing_coverage(const ObjectiveSpec& spec) {
    std::vector<double> c(spec.kernel_dd->rows(), 0.0);
    if (!spec.kernel_de) return c;
    for (std::size_t i = 0; i < c.size(); ++i) {
        for (float v : spec.kernel_de->row(i)) c[i] = std::max(c[i], static_cast<double>(v));
    }
    return c;
}

std::size_t clamp_budget(std::size_t k, std::size_t n) {
    if (k > n) {
        spdlog::warn("budget {} exceeds the {} available candidates; truncating", k, n);
        return n;
    }
    return k;
}

}  // namespace

void ObjectiveSpec::validate() const {
    if (!kernel_dd) throw std::invalid_argument("objective needs the D x D kernel");
    if (!(eta >= 0.0) || !(nu >= 0.0)) throw std::invalid_argument("eta and nu must be nonnegative");
    require_nonnegative(*kernel_dd, "kernel D x D");
    if (kind == ObjectiveKind::flmi) {
        if (!kernel_td) throw std::invalid_argument("FLMI needs the D_T x D kernel");
        if (kernel_td->cols() != kernel_dd->cols()) {
            throw std::invalid_argument(fmt::format("D_T kernel has {} columns, D kernel has {}", kernel_td->cols(),
                                                    kernel_dd->cols()));
        }
        require_nonnegative(*kernel_td, "kernel D_T x D");
    }
    if (kind == ObjectiveKind::flcg) {
        if (!kernel_de) throw std::invalid_argument("FLCG needs the D x D_E kernel");
        if (kernel_de->rows() != kernel_dd->rows()) {
            throw std::invalid_argument(fmt::format("D_E kernel has {} rows, D kernel has {}", kernel_de->rows(),
                                                    kernel_dd->rows()));
        }
        require_nonnegative(*kernel_de, "kernel D x D_E");
    }
}

namespace {

double evaluate(const ObjectiveSpec& spec, std::span<const std::size_t> subset) {
    const Matrix& s = *spec.kernel_dd;
    std::vector<char> member(s.cols(), 0);
    for (std::size_t j : subset) {
        if (j >= s.cols()) throw std::out_of_range(fmt::format("candidate index {} out of range", j));
        member[j] = 1;
    }
    std::vector<std::size_t> cols;
    for (std::size_t j = 0; j < member.size(); ++j) {
        if (member[j]) cols.push_back(j);
    }
    if (cols.empty()) return 0.0;

    const std::vector<double> coverage =
        spec.kind == ObjectiveKind::flcg ? existing_coverage(spec) : std::vector<double>(s.rows(), 0.0);
    double total = 0.0;
    for (std::size_t i = 0; i < s.rows(); ++i) {
        double best = 0.0;
        for (std::size_t j : cols) best = std::max(best, static_cast<double>(s(i, j)));
        if (spec.kind == ObjectiveKind::flcg) {
            total += std::max(best - spec.nu * coverage[i], 0.0);
        } else {
            total += best;
        }
    }
    if (spec.kind == ObjectiveKind::flmi) {
        const Matrix& t = *spec.kernel_td;
        for (std::size_t j : cols) {
            double best = 0.0;
            for (std::size_t i = 0; i < t.rows(); ++i) best = std::max(best, static_cast<double>(t(i, j)));
            total += spec.eta * best;
        }
    }
    return total;
}

}  // namespace

double objective_value(const ObjectiveSpec& spec, std::span<const std::size_t> subset) {
    spec.validate();
    return evaluate(spec, subset);
}

double objective_value(const ObjectiveSpec& spec, const std::vector<std::string>& subset_ids) {
    if (!spec.kernel_dd) throw std::invalid_argument("objective needs the D x D kernel");
    const auto& ids = spec.kernel_dd->col_ids();
    std::unordered_map<std::string_view, std::size_t> index;
    for (std::size_t j = 0; j < ids.size(); ++j) index.emplace(ids[j], j);
    std::vector<std::size_t> subset;
    for (const auto& id : subset_ids) {
        auto it = index.find(id);
        if (it == index.end()) throw std::invalid_argument(fmt::format("unknown candidate id \"{}\"", id));
        subset.push_back(it->second);
    }
    return objective_value(spec, subset);
}

double FlReduction::value(std::span<const std::size_t> subset) const {
    std::vector<char> member(cols, 0);
    for (std::size_t j : subset) member.at(j) = 1;
    double total = 0.0;
    for (std::size_t i = 0; i < rows; ++i) {
        double best = 0.0;
        for (std::size_t j = 0; j < cols; ++j) {
            if (member[j]) best = std::max(best, at(i, j));
        }
        total += best;
    }
    for (std::size_t j = 0; j < cols; ++j) {
        if (member[j]) total += bonus[j];
    }
    return total;
}

FlReduction reduce_to_fl(const ObjectiveSpec& spec) {
    spec.validate();
    const Matrix& s = *spec.kernel_dd;
    FlReduction r;
    r.rows = s.rows();
    r.cols = s.cols();
    r.by_column.resize(r.rows * r.cols);
    r.bonus.assign(r.cols, 0.0);

    const std::vector<double> coverage =
        spec.kind == ObjectiveKind::flcg ? existing_coverage(spec) : std::vector<double>(r.rows, 0.0);
    for (std::size_t i = 0; i < r.rows; ++i) {
        for (std::size_t j = 0; j < r.cols; ++j) {
            const double v = static_cast<double>(s(i, j));
            r.by_column[j * r.rows + i] =
                spec.kind == ObjectiveKind::flcg ? std::max(v - spec.nu * coverage[i], 0.0) : v;
        }
    }
    if (spec.kind == ObjectiveKind::flmi) {
        const Matrix& t = *spec.kernel_td;
        for (std::size_t j = 0; j < r.cols; ++j) {
            double best = 0.0;
            for (std::size_t i = 0; i < t.rows(); ++i) best = std::max(best, static_cast<double>(t(i, j)));
            r.bonus[j] = spec.eta * best;
        }
    }
    return r;
}

SelectionState::SelectionState(const FlReduction& reduction)
    : reduction_(&reduction), cur_max_(reduction.rows, 0.0), in_set_(reduction.cols, 0) {}

double SelectionState::gain_unchecked(std::size_t d) const {
    const std::size_t rows = reduction_->rows;
    const double* column = reduction_->by_column.data() + d * rows;
    double gain = 0.0;
    for (std::size_t i = 0; i < rows; ++i) {
        const double delta = column[i] - cur_max_[i];
        if (delta > 0.0) gain += delta;
    }
    return gain + reduction_->bonus[d];
}

double SelectionState::marginal_gain(std::size_t d) const {
    if (d >= reduction_->cols) throw std::invalid_argument(fmt::format("candidate index {} out of range", d));
    if (in_set_[d]) throw std::invalid_argument(fmt::format("candidate {} is already chosen", d));
    return gain_unchecked(d);
}

double SelectionState::add(std::size_t d) {
    const double gain = marginal_gain(d);
    const std::size_t rows = reduction_->rows;
    const double* column = reduction_->by_column.data() + d * rows;
    for (std::size_t i = 0; i < rows; ++i) cur_max_[i] = std::max(cur_max_[i], column[i]);
    in_set_[d] = 1;
    chosen_.push_back(d);
    value_ += gain;
    return gain;
}

double marginal_gain(const SelectionState& state, std::size_t d) { return state.marginal_gain(d); }

GreedyResult greedy_select(const ObjectiveSpec& spec, std::size_t k, int workers) {
    const FlReduction reduction = reduce_to_fl(spec);
    const std::size_t n = reduction.cols;
    k = clamp_budget(k, n);
    SelectionState state(reduction);
    GreedyResult result;
    std::vector<double> gains(n, 0.0);
    const auto n_threads = static_cast<std::size_t>(std::clamp(workers, 1, 256));

    for (std::size_t step = 0; step < k; ++step) {
        auto evaluate = [&](std::size_t lo, std::size_t hi) {
            for (std::size_t d = lo; d < hi; ++d) {
                if (!state.contains(d)) gains[d] = state.marginal_gain(d);
            }
        };
        if (n_threads == 1 || n < 2 * n_threads) {
            evaluate(0, n);
        } else {
            std::vector<std::thread> pool;
            const std::size_t chunk = (n + n_threads - 1) / n_threads;
            for (std::size_t lo = 0; lo < n; lo += chunk) pool.emplace_back(evaluate, lo, std::min(n, lo + chunk));
            for (auto& t : pool) t.join();
        }
        // Strict comparison in index order keeps the smallest index among ties.
        std::size_t best = n;
        for (std::size_t d = 0; d < n; ++d) {
            if (state.contains(d)) continue;
            if (best == n || gains[d] > gains[best]) best = d;
        }
        const double gain = state.add(best);
        result.chosen.push_back(best);
        result.gains.push_back(gain);
        result.cumulative.push_back(state.value());
    }
    return result;
}

GreedyResult lazy_greedy_select(const ObjectiveSpec& spec, std::size_t k) {
    const FlReduction reduction = reduce_to_fl(spec);
    const std::size_t n = reduction.cols;
    k = clamp_budget(k, n);
    SelectionState state(reduction);
    GreedyResult result;

    struct Entry {
        double bound;
        std::size_t index;
        std::size_t step;  // step at which bound was computed
    };
    // Top = largest bound, then smallest index: the same order the naive argmax uses.
    auto lower_priority = [](const Entry& a, const Entry& b) {
        if (a.bound != b.bound) return a.bound < b.bound;
        return a.index > b.index;
    };
    std::priority_queue<Entry, std::vector<Entry>, decltype(lower_priority)> heap(lower_priority);
    for (std::size_t d = 0; d < n && k > 0; ++d) heap.push({state.marginal_gain(d), d, 0});

    for (std::size_t step = 0; step < k; ++step) {
        for (;;) {
            Entry top = heap.top();
            heap.pop();
            if (top.step == step) {
                // Fresh bound that dominates every stale bound: it is the argmax.
                const double gain = state.add(top.index);
                result.chosen.push_back(top.index);
                result.gains.push_back(gain);
                result.cumulative.push_back(state.value());
                break;
            }
            top.bound = state.marginal_gain(top.index);
            top.step = step;
            heap.push(top);
        }
    }
    return result;
}

BruteForceResult brute_force_select(const ObjectiveSpec& spec, std::size_t k) {
    spec.validate();
    const std::size_t n = spec.candidate_count();
    if (k > n) throw std::invalid_argument(fmt::format("budget {} exceeds {} candidates", k, n));
    double combos = 1.0;
    for (std::size_t t = 0; t < k; ++t) combos = combos * static_cast<double>(n - t) / static_cast<double>(t + 1);
    if (combos > kBruteForceLimit) {
        throw std::length_error(fmt::format("C({}, {}) = {:.0f} subsets exceeds the brute-force limit", n, k, combos));
    }

    BruteForceResult best;
    std::vector<std::size_t> subset(k);
    for (std::size_t t = 0; t < k; ++t) subset[t] = t;
    bool first = true;
    for (;;) {
        const double v = evaluate(spec, subset);
        if (first || v > best.value) {
            best.value = v;
            best.best = subset;
            first = false;
        }
        // Next combination in lexicographic order.
        std::size_t t = k;
        while (t > 0 && subset[t - 1] == n - k + t - 1) --t;
        if (t == 0) break;
        ++subset[t - 1];
        for (std::size_t u = t; u < k; ++u) subset[u] = subset[u - 1] + 1;
    }
    return best;
}

}  // namespace delift
