// SPDX-License-Identifier: Apache-2.0
//
// Client for completions-style inference servers that echo prompt token
// log-probabilities. The scored text is prompt + target; target token
// probabilities are recovered by aligning returned token spans against the
// target's character range.

#pragma once

#include <chrono>
#include <memory>
#include <semaphore>
#include <stdexcept>
#include <string>
#include <string_view>

#include "delift/scorer.hpp"

namespace delift {

struct RemoteConfig {
    std::string endpoint;  // e.g. http://localhost:8000/v1/completions
    std::string model;
    std::string auth_token;  // sent as "Authorization: Bearer <token>" when non-empty
    int max_in_flight = 8;
    int max_attempts = 5;
    std::chrono::milliseconds initial_backoff{250};
    std::chrono::milliseconds max_backoff{8000};
    std::chrono::seconds timeout{120};
};

class TransportError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

class AlignmentError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Request body for scoring `text` (prompt followed by target).
std::string remote_request_body(std::string_view model, std::string_view text);

/// Extracts target-token probabilities from a completions response whose
/// echoed tokens cover prompt + target. Throws AlignmentError when the
/// returned spans do not tile the target exactly.
TokenProbVector parse_remote_response(std::string_view response_json, std::string_view prompt,
                                      std::string_view target);

class RemoteScorer final : public Scorer {
public:
    explicit RemoteScorer(RemoteConfig config);
    ~RemoteScorer() override;

    TokenProbVector score(std::string_view prompt, std::string_view target) const override;
    const ScorerDescriptor& descriptor() const override { return descriptor_; }

    const RemoteConfig& config() const noexcept { return config_; }

private:
    std::string post_with_retry(const std::string& body) const;

    RemoteConfig config_;
    std::string scheme_host_port_;
    std::string path_;
    ScorerDescriptor descriptor_;
    mutable std::counting_semaphore<1024> in_flight_;
};

/// remote_score as a free function: renders nothing, scores `target` after `prompt`.
TokenProbVector remote_score(const RemoteConfig& config, std::string_view prompt, std::string_view target);

/// Scores the same input twice and reports whether results are bit-identical.
/// Non-repeatable scorers only produce a warning.
bool probe_repeatability(const Scorer& scorer, std::string_view prompt, std::string_view target);

}  // namespace delift
