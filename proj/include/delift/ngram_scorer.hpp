// SPDX-License-Identifier: Apache-2.0
//
// Deterministic byte-level interpolated n-gram model used as an offline
// stand-in for an LLM. Counts from the scored prompt prefix are added on top
// of the base corpus counts, so an in-context example shifts the
// probabilities of the target that follows it.
//
//   P(b | h) = sum_m lambda_m * (c(ctx_m . b) + alpha) / (c(ctx_m) + alpha * 256)
//
// where ctx_m is the last m-1 bytes of h and c() counts base + online n-grams.

#pragma once

#include <cstdint>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "delift/scorer.hpp"

namespace delift {

struct NgramConfig {
    int order = 3;
    double alpha = 0.1;
    /// Weights for orders (order, order-1, ..., 1).
    std::vector<double> lambdas = {0.7, 0.2, 0.1};
};

inline constexpr int kNgramMaxOrder = 7;
inline constexpr int kAlphabetSize = 256;

class NgramScorer final : public Scorer {
public:
    using CountTable = std::unordered_map<std::uint64_t, std::uint32_t>;

    /// Throws std::invalid_argument on order outside [1, 7], alpha <= 0, or bad lambdas.
    NgramScorer(std::string_view base_corpus, NgramConfig config);

    TokenProbVector score(std::string_view prompt, std::string_view target) const override;
    const ScorerDescriptor& descriptor() const override { return descriptor_; }

    /// Probability of `next` after `history`, recounting the history's n-grams
    /// from scratch. Unclamped.
    double probability(std::string_view history, unsigned char next) const;

    const NgramConfig& config() const noexcept { return config_; }

private:
    struct Online {
        CountTable grams;
        CountTable contexts;
    };

    double mix(std::string_view history, unsigned char next, const Online& online) const;
    void add_ngrams_ending_at(std::string_view text, std::size_t pos, Online& online) const;

    NgramConfig config_;
    CountTable base_grams_;
    CountTable base_contexts_;
    ScorerDescriptor descriptor_;
};

/// Builds the scorer; an empty corpus leaves the base counts empty (uniform base) and logs a warning.
NgramScorer ngram_build(std::string_view base_corpus, const NgramConfig& config = {});

}  // namespace delift
