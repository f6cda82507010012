// SPDX-License-Identifier: Apache-2.0
//
// Dense row-major float32 matrix with row/column ids and provenance metadata.
// Rows are targets, columns are in-context candidates.

#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

namespace delift {

enum class DistanceKind : std::uint8_t {
    euclid_len_norm = 0,
    kl = 1,
};

std::string_view distance_name(DistanceKind kind);
DistanceKind parse_distance(std::string_view name);

struct MatrixMeta {
    DistanceKind distance = DistanceKind::euclid_len_norm;
    bool kernel = false;  // entries clamped to >= 0
    std::string scorer_hash;
    std::string template_hash;
    std::string scorer_descriptor;  // human-readable JSON of the scorer parameters
    std::string row_data_hash;      // content hashes of the row and column datasets
    std::string col_data_hash;
    std::string created_at;         // informational only, never hashed

    bool same_provenance(const MatrixMeta& other) const {
        return distance == other.distance && kernel == other.kernel &&
               scorer_hash == other.scorer_hash && template_hash == other.template_hash;
    }
};

class Matrix {
public:
    Matrix() = default;
    Matrix(std::vector<std::string> row_ids, std::vector<std::string> col_ids, MatrixMeta meta = {});
    /// Takes ownership of `values`; validates shape and finiteness.
    Matrix(std::vector<std::string> row_ids, std::vector<std::string> col_ids, std::vector<float> values,
           MatrixMeta meta);

    std::size_t rows() const noexcept { return row_ids_.size(); }
    std::size_t cols() const noexcept { return col_ids_.size(); }

    float operator()(std::size_t i, std::size_t j) const { return values_[i * cols() + j]; }
    float& operator()(std::size_t i, std::size_t j) { return values_[i * cols() + j]; }

    std::span<const float> row(std::size_t i) const { return {values_.data() + i * cols(), cols()}; }
    std::span<float> row(std::size_t i) { return {values_.data() + i * cols(), cols()}; }

    const std::vector<float>& values() const noexcept { return values_; }
    const std::vector<std::string>& row_ids() const noexcept { return row_ids_; }
    const std::vector<std::string>& col_ids() const noexcept { return col_ids_; }

    const MatrixMeta& meta() const noexcept { return meta_; }
    MatrixMeta& meta() noexcept { return meta_; }

    /// Throws if any entry is NaN or infinite.
    void check_finite() const;

private:
    std::vector<std::string> row_ids_;
    std::vector<std::string> col_ids_;
    std::vector<float> values_;
    MatrixMeta meta_;
};

}  // namespace delift
