// SPDX-License-Identifier: Apache-2.0

#include "delift/synthetic.hpp"

#include <array>
#include <random>
#include <string>
#include <string_view>

#include <fmt/format.h>

#include "delift/random.hpp"

namespace delift {
namespace {

struct Topic {
    std::string_view name;
    std::array<std::string_view, 16> words;
};

constexpr std::array<Topic, 4> kTopics = {{
    {"cooking",
     {"simmer", "garlic", "saucepan", "olive", "oven", "knead", "dough", "basil", "roast", "onion", "butter",
      "skillet", "pepper", "broth", "whisk", "flour"}},
    {"astronomy",
     {"orbit", "galaxy", "nebula", "comet", "telescope", "planet", "gravity", "stellar", "eclipse", "quasar",
      "asteroid", "redshift", "lunar", "solar", "cosmic", "pulsar"}},
    {"programming",
     {"compiler", "pointer", "function", "variable", "recursion", "thread", "mutex", "array", "iterator",
      "template", "lambda", "syntax", "debugger", "kernel", "buffer", "stack"}},
    {"gardening",
     {"mulch", "compost", "seedling", "prune", "trellis", "perennial", "soil", "fertilizer", "sprout", "hedge",
      "tulip", "watering", "greenhouse", "root", "shrub", "bloom"}},
}};

constexpr std::array<std::string_view, 4> kQuestionForms = {
    "Explain how {} relates to {} in {}.",
    "Describe the role of {} and {} for {}.",
    "What should a beginner know about {} and {} in {}?",
    "Give a short note on {} with {} in {}.",
};

constexpr std::array<std::string_view, 6> kGlue = {"with", "and", "then", "before", "after", "near"};

std::size_t draw(std::mt19937_64& rng, std::size_t bound) { return uniform_index(rng, bound); }

std::string_view topic_word(const Topic& t, std::mt19937_64& rng) { return t.words[draw(rng, t.words.size())]; }

Sample fresh_sample(std::size_t index, const Topic& topic, std::string_view topic_label, std::mt19937_64& rng) {
    Sample s;
    s.id = fmt::format("s{:04d}", index);
    const auto w1 = topic_word(topic, rng);
    const auto w2 = topic_word(topic, rng);
    s.input = fmt::format(fmt::runtime(kQuestionForms[draw(rng, kQuestionForms.size())]), w1, w2, topic_label);
    std::string out = fmt::format("In {}, {} works {} {}", topic_label, w1, kGlue[draw(rng, kGlue.size())], w2);
    const std::size_t extra = 4 + draw(rng, 5);
    for (std::size_t k = 0; k < extra; ++k) {
        out += ' ';
        out += kGlue[draw(rng, kGlue.size())];
        out += ' ';
        out += topic_word(topic, rng);
    }
    out += '.';
    s.output = std::move(out);
    return s;
}

// Replaces one topic word in the output with another from the same topic.
Sample near_duplicate(std::size_t index, const Sample& source, const Topic& topic, std::mt19937_64& rng) {
    Sample s = source;
    s.id = fmt::format("s{:04d}", index);
    for (std::size_t attempt = 0; attempt < 8; ++attempt) {
        const auto from = topic.words[draw(rng, topic.words.size())];
        const auto pos = s.output.find(from);
        if (pos == std::string::npos) continue;
        s.output.replace(pos, from.size(), topic_word(topic, rng));
        break;
    }
    return s;
}

}  // namespace

SyntheticCorpus make_clustered_corpus(std::size_t n, std::size_t clusters, std::uint64_t seed,
                                      double near_duplicate_fraction) {
    if (clusters == 0) clusters = 1;
    std::mt19937_64 rng(seed);
    SyntheticCorpus corpus;
    std::vector<std::vector<std::size_t>> members(clusters);
    const auto dup_threshold = static_cast<std::uint64_t>(near_duplicate_fraction * 1'000'000.0);
    for (std::size_t i = 0; i < n; ++i) {
        const std::size_t c = i % clusters;
        const Topic& topic = kTopics[c % kTopics.size()];
        const std::string label = c < kTopics.size() ? std::string(topic.name)
                                                     : fmt::format("{} {}", topic.name, c / kTopics.size());
        const bool dup = !members[c].empty() && draw(rng, 1'000'000) < dup_threshold;
        if (dup) {
            const auto& src = corpus.samples[members[c][draw(rng, members[c].size())]];
            corpus.samples.push_back(near_duplicate(i, src, topic, rng));
        } else {
            corpus.samples.push_back(fresh_sample(i, topic, label, rng));
        }
        corpus.cluster.push_back(c);
        corpus.near_duplicate.push_back(dup ? 1 : 0);
        members[c].push_back(i);
    }
    return corpus;
}

}  // namespace delift
