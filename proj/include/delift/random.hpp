// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstddef>
#include <cstdint>
#include <random>

namespace delift {

/// Uniform draw in [0, bound) by rejection. std distributions are
/// implementation-defined, this is reproducible across standard libraries.
inline std::size_t uniform_index(std::mt19937_64& rng, std::size_t bound) {
    const std::uint64_t limit = UINT64_MAX - UINT64_MAX % bound;
    std::uint64_t v;
    do {
        v = rng();
    } while (v >= limit);
    return static_cast<std::size_t>(v % bound);
}

}  // namespace delift
