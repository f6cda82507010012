// SPDX-License-Identifier: Apache-2.0

#include <doctest.h>

#include <cmath>
#include <random>

#include "delift/matrix_io.hpp"
#include "delift/ngram_scorer.hpp"
#include "delift/synthetic.hpp"
#include "delift/utility.hpp"
#include "test_util.hpp"

using namespace delift;
using delift::testing::CountingScorer;
using delift::testing::FixedScorer;
using delift::testing::TempDir;

namespace {

TokenProbVector tpv(std::vector<double> p) { return TokenProbVector{std::move(p)}; }

Dataset small_dataset(std::size_t n, std::uint64_t seed = 5) {
    return Dataset(make_clustered_corpus(n, 3, seed).samples, DatasetRole::candidates);
}

const NgramScorer& shared_model() {
    static const NgramScorer m = ngram_build("plants need water and light. stars are far away. code compiles.", {});
    return m;
}

// Fails on any prompt that contains `needle`.
class PoisonScorer final : public Scorer {
public:
    PoisonScorer(const Scorer& inner, std::string needle) : inner_(inner), needle_(std::move(needle)) {}
    TokenProbVector score(std::string_view prompt, std::string_view target) const override {
        if (prompt.find(needle_) != std::string_view::npos) throw std::runtime_error("scorer exploded");
        return inner_.score(prompt, target);
    }
    const ScorerDescriptor& descriptor() const override { return inner_.descriptor(); }

private:
    const Scorer& inner_;
    std::string needle_;
};

}  // namespace

TEST_CASE("distance examples") {
    CHECK(distance(DistanceKind::euclid_len_norm, tpv({1, 1, 1})) == 0.0);
    CHECK(distance(DistanceKind::euclid_len_norm, tpv({0.5, 0.5})) == doctest::Approx(0.5).epsilon(1e-15));
    CHECK(distance(DistanceKind::kl, tpv({0.5})) == doctest::Approx(std::log(2.0)).epsilon(1e-15));
    CHECK(distance(DistanceKind::kl, tpv({0.5})) == doctest::Approx(0.6931).epsilon(1e-4));
    CHECK(distance(DistanceKind::kl, tpv({0.5, 0.25})) == doctest::Approx(std::log(2.0) + std::log(4.0)));
    CHECK(distance(DistanceKind::kl, tpv({0.5, 0.25})) == doctest::Approx(2.0794).epsilon(1e-4));
    CHECK(distance(DistanceKind::kl, tpv({1, 1})) == 0.0);
    CHECK_THROWS_AS(distance(DistanceKind::kl, tpv({})), std::invalid_argument);
}

TEST_CASE("distance bounds on random vectors") {
    std::mt19937_64 rng(3);
    std::uniform_real_distribution<double> u(0.0, 1.0);
    for (int trial = 0; trial < 200; ++trial) {
        std::vector<double> p(1 + rng() % 20);
        for (double& x : p) x = u(rng);
        const double e = distance(DistanceKind::euclid_len_norm, tpv(p));
        CHECK(e >= 0.0);
        CHECK(e <= 1.0);
        CHECK(distance(DistanceKind::kl, tpv(p)) >= 0.0);
    }
    // Zero probabilities are clamped rather than producing infinities.
    CHECK(std::isfinite(distance(DistanceKind::kl, tpv({0.0}))));
    CHECK(distance(DistanceKind::euclid_len_norm, tpv({0.0})) == doctest::Approx(1.0));
}

TEST_CASE("utility from probabilities") {
    const auto r = utility_from_probs(DistanceKind::kl, tpv({0.5, 0.25}), tpv({0.8, 0.5}));
    const double oracle = (-std::log(0.5) - std::log(0.25)) - (-std::log(0.8) - std::log(0.5));
    CHECK(r.uf_value == doctest::Approx(oracle).epsilon(1e-14));
    CHECK(r.uf_value == doctest::Approx(1.1632).epsilon(1e-4));
    CHECK(r.uf_value == r.baseline - r.conditioned);

    CHECK(utility_from_probs(DistanceKind::euclid_len_norm, tpv({0.3, 0.7}), tpv({0.3, 0.7})).uf_value == 0.0);
    CHECK(utility_from_probs(DistanceKind::euclid_len_norm, tpv({0.6, 0.7}), tpv({0.5, 0.6})).uf_value < 0.0);
    CHECK(utility_from_probs(DistanceKind::kl, tpv({0.6, 0.7}), tpv({0.5, 0.6})).uf_value < 0.0);
    CHECK_THROWS_AS(utility_from_probs(DistanceKind::kl, tpv({0.5}), tpv({0.5, 0.5})), std::invalid_argument);
}

TEST_CASE("pmi identity: worked example and equality case") {
    const auto r = pmi_from_probs(tpv({0.5, 0.25}), tpv({0.8, 0.5}), 1e-9);
    CHECK(r.pmi_sum == doctest::Approx(std::log(1.6) + std::log(2.0)).epsilon(1e-14));
    CHECK(r.uf_kl == doctest::Approx(1.1632).epsilon(1e-4));
    CHECK(r.pass);
    const auto same = pmi_from_probs(tpv({0.3, 0.9}), tpv({0.3, 0.9}), 1e-9);
    CHECK(same.uf_kl == 0.0);
    CHECK(same.pmi_sum == 0.0);
    CHECK(same.pass);
}

TEST_CASE("pmi identity holds for n-gram scored pairs") {
    const Dataset d = small_dataset(12);
    const PromptTemplate t;
    for (std::size_t i = 0; i < d.size(); ++i) {
        for (std::size_t j = 0; j < d.size(); j += 3) {
            const auto r = pmi_identity_check(shared_model(), t, d[i], d[j]);
            CHECK(r.pass);
            CHECK(r.abs_diff <= 1e-9);
        }
    }
}

TEST_CASE("utility_pair uses the two template renderings") {
    const PromptTemplate t;
    const Sample target{"t", "Q", "ab"};
    const Sample cand{"c", "Qc", "Ac"};
    FixedScorer s(tpv({0.5, 0.25}), tpv({0.8, 0.5}), build_prompt(t, std::nullopt, target.input));
    const auto r = utility_pair(s, t, target, cand, DistanceKind::kl);
    CHECK(r.uf_value == doctest::Approx(1.1632).epsilon(1e-4));
}

TEST_CASE("utility matrix: shape, call count and cell-wise oracle") {
    const Dataset d = small_dataset(7);
    const PromptTemplate t;
    CountingScorer counter(shared_model());
    const Matrix u = compute_utility_matrix(counter, t, d, d);
    CHECK(u.rows() == 7);
    CHECK(u.cols() == 7);
    CHECK(counter.calls() == 7 + 7 * 7);
    CHECK(u.row_ids() == d.ids());
    CHECK(u.col_ids() == d.ids());
    CHECK_FALSE(u.meta().kernel);
    CHECK(u.meta().scorer_hash == shared_model().descriptor().hash);
    CHECK(u.meta().template_hash == t.hash());
    CHECK(u.meta().row_data_hash == d.content_hash());
    CHECK(u.meta().col_data_hash == d.content_hash());
    for (std::size_t i = 0; i < d.size(); ++i) {
        for (std::size_t j = 0; j < d.size(); ++j) {
            const auto r = utility_pair(shared_model(), t, d[i], d[j], DistanceKind::euclid_len_norm);
            CHECK(u(i, j) == static_cast<float>(r.uf_value));
        }
    }
}

TEST_CASE("utility matrix: baseline reuse, worker count and distance kinds") {
    const Dataset targets(make_clustered_corpus(9, 3, 21).samples, DatasetRole::targets);
    const Dataset cands = small_dataset(11, 22);
    const PromptTemplate t;
    for (DistanceKind kind : {DistanceKind::euclid_len_norm, DistanceKind::kl}) {
        UtilityOptions base;
        base.distance = kind;
        const Matrix reference = compute_utility_matrix(shared_model(), t, targets, cands, base);
        CHECK(reference.rows() == 9);
        CHECK(reference.cols() == 11);
        CHECK(reference.meta().distance == kind);

        UtilityOptions no_reuse = base;
        no_reuse.reuse_baseline = false;
        CountingScorer counter(shared_model());
        CHECK(compute_utility_matrix(counter, t, targets, cands, no_reuse).values() == reference.values());
        CHECK(counter.calls() == 2 * 9 * 11);

        UtilityOptions many = base;
        many.workers = 8;
        CHECK(compute_utility_matrix(shared_model(), t, targets, cands, many).values() == reference.values());
    }
}

TEST_CASE("1x1 matrix with identical behavior is zero") {
    const PromptTemplate t;
    const Sample s{"only", "q", "abc"};
    FixedScorer f(tpv({0.4, 0.4, 0.4}), tpv({0.4, 0.4, 0.4}), build_prompt(t, std::nullopt, s.input));
    const Dataset d({s}, DatasetRole::candidates);
    const Matrix u = compute_utility_matrix(f, t, d, d);
    REQUIRE(u.values().size() == 1);
    CHECK(u(0, 0) == 0.0f);
}

TEST_CASE("utility matrix rejects empty datasets") {
    const Dataset d = small_dataset(3);
    const Dataset empty(std::vector<Sample>{}, DatasetRole::targets);
    CHECK_THROWS_AS(compute_utility_matrix(shared_model(), PromptTemplate{}, empty, d), std::invalid_argument);
}

TEST_CASE("kernel clamps negatives and is idempotent") {
    MatrixMeta meta;
    const Matrix u({"r"}, {"a", "b", "c"}, std::vector<float>{-0.5f, 0.3f, -0.0f}, meta);
    const Matrix k = kernel_from_utility(u);
    CHECK(k.meta().kernel);
    CHECK(k(0, 0) == 0.0f);
    CHECK_FALSE(std::signbit(k(0, 0)));
    CHECK(k(0, 1) == 0.3f);
    CHECK_FALSE(std::signbit(k(0, 2)));
    CHECK(kernel_from_utility(k).values() == k.values());

    std::mt19937_64 rng(9);
    std::normal_distribution<float> nd(0.0f, 1.0f);
    std::vector<float> v(64);
    for (float& x : v) x = nd(rng);
    const Matrix r(std::vector<std::string>(8, "x"), std::vector<std::string>(8, "y"), v, meta);
    const Matrix rk = kernel_from_utility(r);
    for (std::size_t idx = 0; idx < v.size(); ++idx) CHECK(rk.values()[idx] == std::max(v[idx], 0.0f));
    CHECK(kernel_from_utility(rk).values() == rk.values());
}

TEST_CASE("cell failure names the pair and keeps a resumable checkpoint") {
    const Dataset d = small_dataset(6);
    const PromptTemplate t;
    // Row 3 is the first row whose conditioned prompts fail: the candidate text
    // only shows up in prompts as context, and the target text of row 3 as x_i.
    const std::string needle = d[3].input + "\n";
    PoisonScorer poison(shared_model(), "\n\n" + needle);
    TempDir dir;
    UtilityOptions opts;
    opts.checkpoint = dir / "ckpt.dkm";
    try {
        compute_utility_matrix(poison, t, d, d, opts);
        FAIL("expected a cell failure");
    } catch (const UtilityCellError& e) {
        CHECK(e.row() == 3);
        CHECK(e.col() == 0);
        CHECK(std::string(e.what()).find("i=3, j=0") != std::string::npos);
        CHECK(std::string(e.what()).find(d[3].id) != std::string::npos);
    }
    REQUIRE(std::filesystem::exists(opts.checkpoint));
    CHECK(load_matrix(opts.checkpoint).rows() == 3);

    CountingScorer counter(shared_model());
    const Matrix resumed = compute_utility_matrix(counter, t, d, d, opts);
    CHECK(counter.calls() == 3 + 3 * 6);
    CHECK(resumed.values() == compute_utility_matrix(shared_model(), t, d, d).values());
    CHECK_FALSE(std::filesystem::exists(opts.checkpoint));
    CHECK_FALSE(std::filesystem::exists(sidecar_path(opts.checkpoint)));
}

TEST_CASE("checkpoint from a different computation is ignored") {
    const Dataset d = small_dataset(4);
    const PromptTemplate t;
    TempDir dir;
    UtilityOptions opts;
    opts.checkpoint = dir / "ckpt.dkm";
    MatrixMeta other;
    other.scorer_hash = "not-this-scorer";
    save_matrix(Matrix({d[0].id}, d.ids(), std::vector<float>(4, 9.0f), other), opts.checkpoint);
    CountingScorer counter(shared_model());
    const Matrix u = compute_utility_matrix(counter, t, d, d, opts);
    CHECK(counter.calls() == 4 + 16);
    CHECK(u(0, 0) != 9.0f);
}
