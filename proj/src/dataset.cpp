// SPDX-License-Identifier: Apache-2.0

#include "delift/dataset.hpp"

#include <fstream>
#include <sstream>

#include <fmt/format.h>
#include <nlohmann/json.hpp>
#include <spdlog/spdlog.h>

#include "delift/hashing.hpp"

namespace delift {

std::string_view role_name(DatasetRole role) {
    switch (role) {
        case DatasetRole::candidates: return "D";
        case DatasetRole::targets: return "D_T";
        case DatasetRole::existing: return "D_E";
    }
    return "?";
}

Dataset::Dataset(std::vector<Sample> samples, DatasetRole role)
    : samples_(std::move(samples)), role_(role) {
    index_.reserve(samples_.size());
    for (std::size_t i = 0; i < samples_.size(); ++i) {
        const Sample& s = samples_[i];
        if (s.id.empty()) {
            throw DatasetError(fmt::format("sample {} has an empty id", i + 1), i + 1);
        }
        if (s.output.empty()) {
            throw DatasetError(fmt::format("sample \"{}\" has an empty output", s.id), i + 1);
        }
        if (!index_.emplace(s.id, i).second) {
            throw DatasetError(fmt::format("duplicate id \"{}\"", s.id), i + 1);
        }
    }
}

std::vector<std::string> Dataset::ids() const {
    std::vector<std::string> out;
    out.reserve(samples_.size());
    for (const auto& s : samples_) out.push_back(s.id);
    return out;
}

std::size_t Dataset::index_of(std::string_view id) const {
    auto it = index_.find(std::string(id));
    return it == index_.end() ? npos : it->second;
}

std::string Dataset::content_hash() const { return sha256_hex(serialize_dataset(samples_)); }

namespace {

std::string required_string(const nlohmann::json& obj, const char* key, std::string_view source,
                            std::size_t line) {
    auto it = obj.find(key);
    if (it == obj.end()) {
        throw DatasetError(fmt::format("{}:{}: missing field \"{}\"", source, line, key), line);
    }
    if (!it->is_string()) {
        throw DatasetError(fmt::format("{}:{}: field \"{}\" must be a string", source, line, key), line);
    }
    return it->get<std::string>();
}

}  // namespace

Dataset parse_dataset(std::string_view text, DatasetRole role, std::string_view source) {
    std::vector<Sample> samples;
    std::unordered_map<std::string, std::size_t> first_seen;
    std::size_t line_no = 0;
    std::size_t pos = 0;
    while (pos < text.size()) {
        std::size_t end = text.find('\n', pos);
        if (end == std::string_view::npos) end = text.size();
        std::string_view line = text.substr(pos, end - pos);
        pos = end + 1;
        ++line_no;
        if (!line.empty() && line.back() == '\r') line.remove_suffix(1);
        if (line.find_first_not_of(" \t") == std::string_view::npos) continue;

        nlohmann::json obj;
        try {
            obj = nlohmann::json::parse(line);
        } catch (const nlohmann::json::parse_error& e) {
            throw DatasetError(fmt::format("{}:{}: malformed JSON: {}", source, line_no, e.what()), line_no);
        }
        if (!obj.is_object()) {
            throw DatasetError(fmt::format("{}:{}: record must be a JSON object", source, line_no), line_no);
        }
        Sample s;
        s.id = required_string(obj, "id", source, line_no);
        s.input = required_string(obj, "input", source, line_no);
        s.output = required_string(obj, "output", source, line_no);
        for (const auto& [key, _] : obj.items()) {
            if (key != "id" && key != "input" && key != "output") {
                spdlog::warn("{}:{}: ignoring unknown field \"{}\"", source, line_no, key);
            }
        }
        if (s.id.empty()) {
            throw DatasetError(fmt::format("{}:{}: empty id", source, line_no), line_no);
        }
        if (s.output.empty()) {
            throw DatasetError(fmt::format("{}:{}: empty output for id \"{}\"", source, line_no, s.id), line_no);
        }
        if (auto [it, fresh] = first_seen.emplace(s.id, line_no); !fresh) {
            throw DatasetError(fmt::format("{}:{}: duplicate id \"{}\" (first seen on line {})", source,
                                           line_no, s.id, it->second),
                               line_no);
        }
        samples.push_back(std::move(s));
    }
    return Dataset(std::move(samples), role);
}

Dataset load_dataset(const std::filesystem::path& path, DatasetRole role) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw DatasetError(fmt::format("cannot open dataset file {}", path.string()));
    std::ostringstream buf;
    buf << in.rdbuf();
    return parse_dataset(buf.str(), role, path.string());
}

std::string serialize_dataset(const std::vector<Sample>& samples) {
    std::string out;
    for (const auto& s : samples) {
        nlohmann::ordered_json obj;
        obj["id"] = s.id;
        obj["input"] = s.input;
        obj["output"] = s.output;
        out += obj.dump();
        out += '\n';
    }
    return out;
}

void save_dataset(const std::filesystem::path& path, const std::vector<Sample>& samples) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw DatasetError(fmt::format("cannot write dataset file {}", path.string()));
    out << serialize_dataset(samples);
    if (!out) throw DatasetError(fmt::format("write failed for {}", path.string()));
}

std::size_t overlap_count(const Dataset& a, const Dataset& b) {
    std::size_t n = 0;
    for (const auto& s : a.samples()) {
        if (b.index_of(s.id) != Dataset::npos) ++n;
    }
    return n;
}

std::string_view objective_name(ObjectiveKind kind) {
    switch (kind) {
        case ObjectiveKind::fl: return "FL";
        case ObjectiveKind::flmi: return "FLMI";
        case ObjectiveKind::flcg: return "FLCG";
    }
    return "?";
}

ObjectiveKind parse_objective(std::string_view name) {
    if (name == "FL" || name == "fl") return ObjectiveKind::fl;
    if (name == "FLMI" || name == "flmi") return ObjectiveKind::flmi;
    if (name == "FLCG" || name == "flcg") return ObjectiveKind::flcg;
    throw std::invalid_argument(fmt::format("unknown objective \"{}\"", name));
}

void validate_pair_roles(ObjectiveKind objective, const std::set<DatasetRole>& have) {
    auto require = [&](DatasetRole role, std::string_view flag) {
        if (!have.contains(role)) {
            throw RoleError(fmt::format("{} requires dataset {} ({}), which was not provided",
                                        objective_name(objective), role_name(role), flag),
                            role);
        }
    };
    require(DatasetRole::candidates, "--data");
    if (objective == ObjectiveKind::flmi) require(DatasetRole::targets, "--target");
    if (objective == ObjectiveKind::flcg) require(DatasetRole::existing, "--existing");
}

}  // namespace delift
