// SPDX-License-Identifier: Apache-2.0

#include "delift/scorer.hpp"

#include <algorithm>
#include <fstream>
#include <sstream>
#include <stdexcept>

#include <fmt/format.h>
#include <nlohmann/json.hpp>

#include "delift/hashing.hpp"

namespace delift {

double clamp_prob(double p) noexcept {
    if (!(p >= kProbEpsilon)) return kProbEpsilon;  // also catches NaN
    return std::min(p, 1.0);
}

std::string PromptTemplate::to_json() const {
    nlohmann::ordered_json j;
    j["with_context"] = with_context;
    j["without_context"] = without_context;
    return j.dump();
}

std::string PromptTemplate::hash() const { return sha256_hex(to_json()); }

PromptTemplate PromptTemplate::from_json(std::string_view json) {
    PromptTemplate t;
    try {
        auto j = nlohmann::json::parse(json);
        t.with_context = j.at("with_context").get<std::string>();
        t.without_context = j.at("without_context").get<std::string>();
    } catch (const nlohmann::json::exception& e) {
        throw std::invalid_argument(fmt::format("invalid prompt template: {}", e.what()));
    }
    if (t.without_context.find("{x_i}") == std::string::npos ||
        t.with_context.find("{x_i}") == std::string::npos) {
        throw std::invalid_argument("prompt template patterns must contain {x_i}");
    }
    return t;
}

PromptTemplate PromptTemplate::load(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::invalid_argument(fmt::format("cannot open template file {}", path.string()));
    std::ostringstream buf;
    buf << in.rdbuf();
    return from_json(buf.str());
}

namespace {

// Single pass over the pattern so text inserted for one placeholder is never rescanned.
std::string render(std::string_view pattern, std::string_view xj, std::string_view yj, std::string_view xi) {
    std::string out;
    out.reserve(pattern.size() + xj.size() + yj.size() + xi.size());
    std::size_t pos = 0;
    while (pos < pattern.size()) {
        if (pattern[pos] == '{') {
            auto rest = pattern.substr(pos);
            if (rest.starts_with("{x_j}")) { out += xj; pos += 5; continue; }
            if (rest.starts_with("{y_j}")) { out += yj; pos += 5; continue; }
            if (rest.starts_with("{x_i}")) { out += xi; pos += 5; continue; }
        }
        out.push_back(pattern[pos++]);
    }
    return out;
}

}  // namespace

std::string build_prompt(const PromptTemplate& tmpl, const std::optional<Example>& context, std::string_view x) {
    if (context) return render(tmpl.with_context, context->input, context->output, x);
    return render(tmpl.without_context, {}, {}, x);
}

ScorerDescriptor make_descriptor(ScorerKind kind, std::string params_json) {
    ScorerDescriptor d;
    d.kind = kind;
    d.params_json = std::move(params_json);
    d.hash = sha256_hex(std::string(kind == ScorerKind::ngram ? "ngram:" : "remote:") + d.params_json);
    return d;
}

TokenProbVector score_target(const Scorer& scorer, const PromptTemplate& tmpl,
                             const std::optional<Example>& context, std::string_view x, std::string_view y) {
    if (y.empty()) throw std::invalid_argument("cannot score an empty target sequence");
    return scorer.score(build_prompt(tmpl, context, x), y);
}

}  // namespace delift
