// SPDX-License-Identifier: Apache-2.0

#include "delift/matrix.hpp"

#include <cmath>
#include <stdexcept>

#include <fmt/format.h>

namespace delift {

std::string_view distance_name(DistanceKind kind) {
    switch (kind) {
        case DistanceKind::euclid_len_norm: return "euclid";
        case DistanceKind::kl: return "kl";
    }
    return "?";
}

DistanceKind parse_distance(std::string_view name) {
    if (name == "euclid" || name == "euclid_len_norm" || name == "l2") return DistanceKind::euclid_len_norm;
    if (name == "kl") return DistanceKind::kl;
    throw std::invalid_argument(fmt::format("unknown distance \"{}\" (expected euclid or kl)", name));
}

Matrix::Matrix(std::vector<std::string> row_ids, std::vector<std::string> col_ids, MatrixMeta meta)
    : row_ids_(std::move(row_ids)), col_ids_(std::move(col_ids)), meta_(std::move(meta)) {
    values_.assign(row_ids_.size() * col_ids_.size(), 0.0f);
}

Matrix::Matrix(std::vector<std::string> row_ids, std::vector<std::string> col_ids, std::vector<float> values,
               MatrixMeta meta)
    : row_ids_(std::move(row_ids)), col_ids_(std::move(col_ids)), values_(std::move(values)),
      meta_(std::move(meta)) {
    if (values_.size() != row_ids_.size() * col_ids_.size()) {
        throw std::invalid_argument(fmt::format("matrix payload has {} values, expected {}x{}", values_.size(),
                                                row_ids_.size(), col_ids_.size()));
    }
    check_finite();
}

void Matrix::check_finite() const {
    for (std::size_t k = 0; k < values_.size(); ++k) {
        if (!std::isfinite(values_[k])) {
            throw std::domain_error(
                fmt::format("non-finite matrix entry at ({}, {})", k / cols(), k % cols()));
        }
    }
}

}  // namespace delift
