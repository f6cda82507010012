// SPDX-License-Identifier: Apache-2.0
//
// Seeded generator for topic-clustered instruction/response pairs with
// near-duplicates. Used by `delift verify` and the acceptance suite.

#pragma once

#include <cstddef>
#include <cstdint>
#include <vector>

#include "delift/dataset.hpp"

namespace delift {

struct SyntheticCorpus {
    std::vector<Sample> samples;
    std::vector<std::size_t> cluster;  // topic index per sample
    std::vector<char> near_duplicate;  // 1 when the sample is an edit of an earlier one
};

/// `near_duplicate_fraction` of the samples are one-word edits of an earlier
/// sample from the same cluster. Clusters are assigned round-robin.
SyntheticCorpus make_clustered_corpus(std::size_t n, std::size_t clusters, std::uint64_t seed,
                                      double near_duplicate_fraction = 0.25);

}  // namespace delift
