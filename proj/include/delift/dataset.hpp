// SPDX-License-Identifier: Apache-2.0
//
// Samples, datasets and JSON Lines ingestion.

#pragma once

#include <cstddef>
#include <filesystem>
#include <set>
#include <stdexcept>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

namespace delift {

/// Raised for malformed or inconsistent dataset files. `line()` is 1-based, 0 when not tied to a line.
class DatasetError : public std::runtime_error {
public:
    DatasetError(const std::string& what, std::size_t line = 0)
        : std::runtime_error(what), line_(line) {}
    std::size_t line() const noexcept { return line_; }

private:
    std::size_t line_;
};

struct Sample {
    std::string id;
    std::string input;
    std::string output;

    bool operator==(const Sample&) const = default;
};

/// The three roles a dataset can play in selection.
enum class DatasetRole {
    candidates,  // D
    targets,     // D_T
    existing,    // D_E
};

std::string_view role_name(DatasetRole role);

class Dataset {
public:
    Dataset() = default;
    /// Validates ids (non-empty, unique) and outputs (non-empty).
    Dataset(std::vector<Sample> samples, DatasetRole role);

    const std::vector<Sample>& samples() const noexcept { return samples_; }
    DatasetRole role() const noexcept { return role_; }
    std::size_t size() const noexcept { return samples_.size(); }
    bool empty() const noexcept { return samples_.empty(); }
    const Sample& operator[](std::size_t i) const { return samples_[i]; }

    std::vector<std::string> ids() const;
    /// Position of `id` in file order, or npos.
    std::size_t index_of(std::string_view id) const;

    /// SHA-256 over the canonical JSONL serialization (role excluded).
    std::string content_hash() const;

    static constexpr std::size_t npos = static_cast<std::size_t>(-1);

private:
    std::vector<Sample> samples_;
    DatasetRole role_ = DatasetRole::candidates;
    std::unordered_map<std::string, std::size_t> index_;
};

/// Parses one JSONL document. `source` only labels error messages.
Dataset parse_dataset(std::string_view text, DatasetRole role, std::string_view source = "<memory>");
Dataset load_dataset(const std::filesystem::path& path, DatasetRole role);

/// One compact JSON object per line, fields in id/input/output order.
std::string serialize_dataset(const std::vector<Sample>& samples);
void save_dataset(const std::filesystem::path& path, const std::vector<Sample>& samples);

/// Number of ids present in both datasets.
std::size_t overlap_count(const Dataset& a, const Dataset& b);

enum class ObjectiveKind { fl, flmi, flcg };

std::string_view objective_name(ObjectiveKind kind);
ObjectiveKind parse_objective(std::string_view name);

/// FL needs D; FLMI needs D and D_T; FLCG needs D and D_E. Throws RoleError naming the absent dataset.
void validate_pair_roles(ObjectiveKind objective, const std::set<DatasetRole>& have);

class RoleError : public std::runtime_error {
public:
    RoleError(const std::string& what, DatasetRole missing)
        : std::runtime_error(what), missing_(missing) {}
    DatasetRole missing() const noexcept { return missing_; }

private:
    DatasetRole missing_;
};

}  // namespace delift
