// SPDX-License-Identifier: Apache-2.0
//
// Teacher-forced scoring of target sequences, with and without a single
// in-context example.

#pragma once

#include <cstddef>
#include <filesystem>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

namespace delift {

/// Probabilities are clamped into [kProbEpsilon, 1] before any log or norm.
inline constexpr double kProbEpsilon = 1e-12;

double clamp_prob(double p) noexcept;

/// p(y_t | prompt, y_<t) for each target token t, already clamped.
struct TokenProbVector {
    std::vector<double> probs;

    std::size_t token_count() const noexcept { return probs.size(); }
    bool operator==(const TokenProbVector&) const = default;
};

/// An in-context example (x_j, y_j).
struct Example {
    std::string_view input;
    std::string_view output;
};

/// Placeholders: {x_j} {y_j} in `with_context`, {x_i} in both patterns. The
/// target is appended directly after the rendered prompt.
struct PromptTemplate {
    std::string with_context = "{x_j}\n{y_j}\n\n{x_i}\n";
    std::string without_context = "{x_i}\n";

    std::string hash() const;
    std::string to_json() const;

    static PromptTemplate from_json(std::string_view json);
    static PromptTemplate load(const std::filesystem::path& path);
};

std::string build_prompt(const PromptTemplate& tmpl, const std::optional<Example>& context, std::string_view x);

enum class ScorerKind { ngram, remote };

struct ScorerDescriptor {
    ScorerKind kind = ScorerKind::ngram;
    std::string params_json;  // canonical JSON of every scoring-relevant parameter
    std::string hash;         // SHA-256 of kind + params_json
};

ScorerDescriptor make_descriptor(ScorerKind kind, std::string params_json);

class Scorer {
public:
    virtual ~Scorer() = default;

    /// Probabilities of each token of `target` when it directly follows `prompt`.
    virtual TokenProbVector score(std::string_view prompt, std::string_view target) const = 0;
    virtual const ScorerDescriptor& descriptor() const = 0;
};

/// Renders the prompt for (context, x) and scores y after it. Throws std::invalid_argument on empty y.
TokenProbVector score_target(const Scorer& scorer, const PromptTemplate& tmpl,
                             const std::optional<Example>& context, std::string_view x, std::string_view y);

}  // namespace delift
