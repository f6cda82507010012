// SPDX-License-Identifier: Apache-2.0

#include "delift/ngram_scorer.hpp"

#include <cmath>
#include <numeric>
#include <stdexcept>

#include <fmt/format.h>
#include <nlohmann/json.hpp>
#include <spdlog/spdlog.h>

#include "delift/hashing.hpp"

namespace delift {
namespace {

// Top byte holds the length so grams of different lengths never collide.
std::uint64_t pack(std::string_view bytes) {
    std::uint64_t key = static_cast<std::uint64_t>(bytes.size()) << 56;
    for (std::size_t k = 0; k < bytes.size(); ++k) {
        key |= static_cast<std::uint64_t>(static_cast<unsigned char>(bytes[k])) << (8 * k);
    }
    return key;
}

std::uint64_t pack_with(std::uint64_t context_key, unsigned char next) {
    const std::uint64_t len = context_key >> 56;
    const std::uint64_t body = context_key & ((std::uint64_t{1} << 56) - 1);
    return ((len + 1) << 56) | body | (static_cast<std::uint64_t>(next) << (8 * len));
}

std::uint32_t lookup(const NgramScorer::CountTable& table, std::uint64_t key) {
    auto it = table.find(key);
    return it == table.end() ? 0u : it->second;
}

void validate(const NgramConfig& c) {
    if (c.order < 1 || c.order > kNgramMaxOrder) {
        throw std::invalid_argument(fmt::format("n-gram order must be in [1, {}], got {}", kNgramMaxOrder, c.order));
    }
    if (!(c.alpha > 0.0)) throw std::invalid_argument("n-gram smoothing alpha must be > 0");
    if (c.lambdas.size() != static_cast<std::size_t>(c.order)) {
        throw std::invalid_argument(
            fmt::format("expected {} interpolation weights, got {}", c.order, c.lambdas.size()));
    }
    for (double l : c.lambdas) {
        if (!(l >= 0.0)) throw std::invalid_argument("interpolation weights must be nonnegative");
    }
    const double sum = std::accumulate(c.lambdas.begin(), c.lambdas.end(), 0.0);
    if (std::abs(sum - 1.0) > 1e-9) {
        throw std::invalid_argument(fmt::format("interpolation weights must sum to 1, got {}", sum));
    }
}

}  // namespace

NgramScorer::NgramScorer(std::string_view base_corpus, NgramConfig config) : config_(std::move(config)) {
    validate(config_);
    const auto order = static_cast<std::size_t>(config_.order);
    for (std::size_t pos = 0; pos < base_corpus.size(); ++pos) {
        for (std::size_t m = 1; m <= order && m <= pos + 1; ++m) {
            auto gram = base_corpus.substr(pos + 1 - m, m);
            ++base_grams_[pack(gram)];
            ++base_contexts_[pack(gram.substr(0, m - 1))];
        }
    }

    nlohmann::ordered_json params;
    params["kind"] = "ngram";
    params["order"] = config_.order;
    params["alpha"] = config_.alpha;
    params["lambdas"] = config_.lambdas;
    params["alphabet"] = kAlphabetSize;
    params["online_prompt_counts"] = true;
    params["corpus_sha256"] = sha256_hex(base_corpus);
    params["corpus_bytes"] = base_corpus.size();
    descriptor_ = make_descriptor(ScorerKind::ngram, params.dump());
}

void NgramScorer::add_ngrams_ending_at(std::string_view text, std::size_t pos, Online& online) const {
    const auto order = static_cast<std::size_t>(config_.order);
    for (std::size_t m = 1; m <= order && m <= pos + 1; ++m) {
        auto gram = text.substr(pos + 1 - m, m);
        ++online.grams[pack(gram)];
        ++online.contexts[pack(gram.substr(0, m - 1))];
    }
}

double NgramScorer::mix(std::string_view history, unsigned char next, const Online& online) const {
    const double alpha = config_.alpha;
    const double denom_smooth = alpha * kAlphabetSize;
    double p = 0.0;
    for (int m = config_.order; m >= 1; --m) {
        // Short histories use the longest context available.
        const std::size_t ctx_len = std::min<std::size_t>(static_cast<std::size_t>(m - 1), history.size());
        const std::uint64_t ctx = pack(history.substr(history.size() - ctx_len));
        const std::uint64_t gram = pack_with(ctx, next);
        const double c_gram = double(lookup(base_grams_, gram)) + double(lookup(online.grams, gram));
        const double c_ctx = double(lookup(base_contexts_, ctx)) + double(lookup(online.contexts, ctx));
        p += config_.lambdas[static_cast<std::size_t>(config_.order - m)] * (c_gram + alpha) / (c_ctx + denom_smooth);
    }
    return p;
}

double NgramScorer::probability(std::string_view history, unsigned char next) const {
    Online online;
    for (std::size_t pos = 0; pos < history.size(); ++pos) add_ngrams_ending_at(history, pos, online);
    return mix(history, next, online);
}

TokenProbVector NgramScorer::score(std::string_view prompt, std::string_view target) const {
    std::string text;
    text.reserve(prompt.size() + target.size());
    text.append(prompt);
    text.append(target);
    const std::string_view view(text);

    Online online;
    online.grams.reserve(4 * text.size());
    online.contexts.reserve(4 * text.size());
    for (std::size_t pos = 0; pos < prompt.size(); ++pos) add_ngrams_ending_at(view, pos, online);

    TokenProbVector out;
    out.probs.reserve(target.size());
    for (std::size_t t = 0; t < target.size(); ++t) {
        const std::size_t pos = prompt.size() + t;
        out.probs.push_back(clamp_prob(mix(view.substr(0, pos), static_cast<unsigned char>(view[pos]), online)));
        add_ngrams_ending_at(view, pos, online);
    }
    return out;
}

NgramScorer ngram_build(std::string_view base_corpus, const NgramConfig& config) {
    if (base_corpus.empty() && config.order > 1) {
        spdlog::warn("n-gram base corpus is empty; base distribution falls back to uniform, "
                     "only in-prompt counts inform the model");
    }
    return NgramScorer(base_corpus, config);
}

}  // namespace delift
