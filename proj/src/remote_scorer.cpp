// SPDX-License-Identifier: Apache-2.0

#include "delift/remote_scorer.hpp"

#include <algorithm>
#include <cmath>
#include <optional>
#include <thread>
#include <vector>

#include <fmt/format.h>
#include <httplib.h>
#include <nlohmann/json.hpp>
#include <spdlog/spdlog.h>

namespace delift {
namespace {

struct ReturnedToken {
    std::string text;
    std::size_t offset;
    std::optional<double> logprob;
};

std::vector<ReturnedToken> extract_tokens(const nlohmann::json& j) {
    const nlohmann::json* lp = nullptr;
    if (j.contains("choices") && j["choices"].is_array() && !j["choices"].empty()) {
        lp = &j["choices"][0].at("logprobs");
    } else if (j.contains("logprobs")) {
        lp = &j["logprobs"];
    }
    if (lp == nullptr || !lp->is_object()) throw AlignmentError("response carries no logprobs object");

    const auto& tokens = lp->at("tokens");
    const auto& logprobs = lp->at("token_logprobs");
    if (!tokens.is_array() || !logprobs.is_array() || tokens.size() != logprobs.size()) {
        throw AlignmentError("tokens and token_logprobs must be arrays of equal length");
    }
    const nlohmann::json* offsets = nullptr;
    if (lp->contains("text_offset") && (*lp)["text_offset"].is_array()) {
        offsets = &(*lp)["text_offset"];
        if (offsets->size() != tokens.size()) throw AlignmentError("text_offset length differs from tokens");
    }

    std::vector<ReturnedToken> out;
    out.reserve(tokens.size());
    std::size_t cursor = 0;
    for (std::size_t k = 0; k < tokens.size(); ++k) {
        ReturnedToken tok;
        tok.text = tokens[k].get<std::string>();
        tok.offset = offsets ? (*offsets)[k].get<std::size_t>() : cursor;
        if (!logprobs[k].is_null()) tok.logprob = logprobs[k].get<double>();
        cursor = tok.offset + tok.text.size();
        out.push_back(std::move(tok));
    }
    return out;
}

}  // namespace

std::string remote_request_body(std::string_view model, std::string_view text) {
    nlohmann::ordered_json body;
    body["prompt"] = text;
    body["max_new_tokens"] = 0;
    body["echo"] = true;
    body["logprobs"] = true;
    body["model"] = model;
    return body.dump();
}

TokenProbVector parse_remote_response(std::string_view response_json, std::string_view prompt,
                                      std::string_view target) {
    nlohmann::json j;
    try {
        j = nlohmann::json::parse(response_json);
    } catch (const nlohmann::json::parse_error& e) {
        throw AlignmentError(fmt::format("response is not valid JSON: {}", e.what()));
    }
    std::vector<ReturnedToken> tokens;
    try {
        tokens = extract_tokens(j);
    } catch (const nlohmann::json::exception& e) {
        throw AlignmentError(fmt::format("unexpected response schema: {}", e.what()));
    }

    const std::size_t begin = prompt.size();
    const std::size_t end = begin + target.size();
    TokenProbVector out;
    std::size_t cursor = begin;
    for (const auto& tok : tokens) {
        const std::size_t tok_end = tok.offset + tok.text.size();
        if (tok_end <= begin) continue;
        if (tok.offset >= end) {
            if (tok.text.empty()) continue;
            throw AlignmentError(fmt::format("token \"{}\" lies past the end of the target", tok.text));
        }
        if (tok.offset < begin) {
            throw AlignmentError(fmt::format("token \"{}\" straddles the prompt/target boundary", tok.text));
        }
        if (tok.offset != cursor) {
            throw AlignmentError(fmt::format("gap or overlap in returned tokens at offset {}", tok.offset));
        }
        if (tok_end > end || target.substr(tok.offset - begin, tok.text.size()) != tok.text) {
            throw AlignmentError(fmt::format("token \"{}\" at offset {} does not match the target text", tok.text,
                                             tok.offset));
        }
        if (!tok.logprob) throw AlignmentError(fmt::format("target token at offset {} has no logprob", tok.offset));
        if (tok.text.empty()) continue;
        out.probs.push_back(clamp_prob(std::exp(*tok.logprob)));
        cursor = tok_end;
    }
    if (cursor != end) {
        throw AlignmentError(fmt::format("returned tokens cover {} of {} target bytes", cursor - begin, target.size()));
    }
    return out;
}

RemoteScorer::RemoteScorer(RemoteConfig config)
    : config_(std::move(config)), in_flight_(std::clamp(config_.max_in_flight, 1, 1024)) {
    const auto scheme_end = config_.endpoint.find("://");
    if (config_.endpoint.empty() || scheme_end == std::string::npos) {
        throw std::invalid_argument(fmt::format("invalid endpoint URL \"{}\"", config_.endpoint));
    }
    const auto path_start = config_.endpoint.find('/', scheme_end + 3);
    scheme_host_port_ = config_.endpoint.substr(0, path_start);
    path_ = path_start == std::string::npos ? "/" : config_.endpoint.substr(path_start);
    if (config_.max_attempts < 1) config_.max_attempts = 1;

    nlohmann::ordered_json params;
    params["kind"] = "remote";
    params["endpoint"] = config_.endpoint;
    params["model"] = config_.model;
    descriptor_ = make_descriptor(ScorerKind::remote, params.dump());
}

RemoteScorer::~RemoteScorer() = default;

std::string RemoteScorer::post_with_retry(const std::string& body) const {
    std::string last_error;
    auto backoff = config_.initial_backoff;
    for (int attempt = 1; attempt <= config_.max_attempts; ++attempt) {
        httplib::Client client(scheme_host_port_);
        client.set_connection_timeout(config_.timeout);
        client.set_read_timeout(config_.timeout);
        client.set_write_timeout(config_.timeout);
        httplib::Headers headers;
        if (!config_.auth_token.empty()) headers.emplace("Authorization", "Bearer " + config_.auth_token);

        auto res = client.Post(path_, headers, body, "application/json");
        bool retryable = true;
        if (!res) {
            last_error = fmt::format("transport error: {}", httplib::to_string(res.error()));
        } else if (res->status == 200) {
            return res->body;
        } else {
            last_error = fmt::format("HTTP {}: {}", res->status, res->body.substr(0, 200));
            retryable = res->status == 429 || res->status >= 500;
        }
        if (!retryable || attempt == config_.max_attempts) break;
        spdlog::warn("remote scorer attempt {}/{} failed ({}); retrying in {} ms", attempt, config_.max_attempts,
                     last_error, backoff.count());
        std::this_thread::sleep_for(backoff);
        backoff = std::min(backoff * 2, config_.max_backoff);
    }
    throw TransportError(fmt::format("{} {} failed: {}", scheme_host_port_, path_, last_error));
}

TokenProbVector RemoteScorer::score(std::string_view prompt, std::string_view target) const {
    std::string text;
    text.reserve(prompt.size() + target.size());
    text.append(prompt);
    text.append(target);
    const std::string body = remote_request_body(config_.model, text);

    std::string response;
    in_flight_.acquire();
    try {
        response = post_with_retry(body);
    } catch (...) {
        in_flight_.release();
        throw;
    }
    in_flight_.release();
    return parse_remote_response(response, prompt, target);
}

TokenProbVector remote_score(const RemoteConfig& config, std::string_view prompt, std::string_view target) {
    return RemoteScorer(config).score(prompt, target);
}

bool probe_repeatability(const Scorer& scorer, std::string_view prompt, std::string_view target) {
    const auto first = scorer.score(prompt, target);
    const auto second = scorer.score(prompt, target);
    if (first != second) {
        spdlog::warn("scorer {} is not repeatable: identical requests returned different probabilities",
                     scorer.descriptor().hash.substr(0, 12));
        return false;
    }
    return true;
}

}  // namespace delift
