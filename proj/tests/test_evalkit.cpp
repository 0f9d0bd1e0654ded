#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cctype>
#include <cmath>
#include <map>
#include <set>
#include <sstream>
#include <thread>

#include <httplib.h>
#include <json.hpp>

#include "prag/error.hpp"
#include "prag/evalkit.hpp"
#include "prag/rng.hpp"
#include "test_helpers.hpp"

using namespace prag;
using namespace prag::testing;

namespace {

// Naive re-implementations used as oracles.
double naive_distinct_n(const std::vector<std::string>& texts, size_t n) {
    std::set<std::vector<std::string>> distinct;
    size_t total = 0;
    for (const auto& t : texts) {
        auto toks = tokenize(t);
        if (toks.size() < n) continue;
        for (size_t i = 0; i + n <= toks.size(); ++i) {
            distinct.insert(std::vector<std::string>(toks.begin() + i, toks.begin() + i + n));
            ++total;
        }
    }
    return total == 0 ? 0.0 : double(distinct.size()) / double(total);
}

double naive_usr(const std::vector<std::string>& texts) {
    std::set<std::string> distinct;
    for (const auto& t : texts) {
        std::string norm;
        std::istringstream words(t);
        std::string w;
        while (words >> w) {
            for (auto& c : w) c = char(std::tolower((unsigned char)c));
            if (!norm.empty()) norm += ' ';
            norm += w;
        }
        distinct.insert(norm);
    }
    return double(distinct.size()) / double(texts.size());
}

double naive_entr(const std::vector<std::string>& texts, const std::vector<size_t>& orders) {
    std::vector<double> hs;
    for (size_t n : orders) {
        std::map<std::vector<std::string>, size_t> counts;
        size_t total = 0;
        for (const auto& t : texts) {
            auto toks = tokenize(t);
            if (toks.size() < n) continue;
            for (size_t i = 0; i + n <= toks.size(); ++i) {
                ++counts[std::vector<std::string>(toks.begin() + i, toks.begin() + i + n)];
                ++total;
            }
        }
        if (total == 0) continue;
        double h = 0;
        for (const auto& [g, c] : counts) {
            double p = double(c) / double(total);
            h -= p * std::log2(p);
        }
        hs.push_back(h);
    }
    if (hs.empty()) return 0.0;
    double prod = 1.0;
    for (double h : hs) prod *= h;
    if (prod <= 0.0) return 0.0;
    return std::pow(prod, 1.0 / double(hs.size()));
}

double naive_rmse(const std::vector<double>& p, const std::vector<double>& g) {
    double s = 0;
    for (size_t i = 0; i < p.size(); ++i) s += (p[i] - g[i]) * (p[i] - g[i]);
    return std::sqrt(s / double(p.size()));
}

}  // namespace

TEST_CASE("distinct_n worked examples") {
    CHECK(distinct_n({"a a a"}, 1) == doctest::Approx(1.0 / 3.0));
    CHECK(distinct_n({"a b a b"}, 2) == doctest::Approx(2.0 / 3.0));
    CHECK(distinct_n({"one two three"}, 1) == doctest::Approx(1.0));
    CHECK(distinct_n({"x"}, 5) == 0.0);  // no 5-grams at all
}

TEST_CASE("usr worked examples") {
    CHECK(usr({"x", "x", "y"}) == doctest::Approx(2.0 / 3.0));
    CHECK(usr({"same", "same", "same", "same"}) == doctest::Approx(0.25));
    CHECK(usr({"a", "b", "c"}) == doctest::Approx(1.0));
    CHECK(usr({"Hello  World", "hello world"}) == doctest::Approx(0.5));  // normalized equal
}

TEST_CASE("entr worked examples") {
    CHECK(entr({"a a a a"}, {1}) == 0.0);
    CHECK(entr({"a b"}, {1}) == doctest::Approx(1.0));
    CHECK(entr({"a b c d"}, {1}) == doctest::Approx(2.0));
    // orders without n-grams are skipped: one token has no bigrams
    CHECK(entr({"a b"}, {1, 5}) == doctest::Approx(1.0));
    // degenerate unigram distribution zeroes the geometric mean
    CHECK(entr({"a a a a"}, {1, 2}) == 0.0);
}

TEST_CASE("rmse worked examples") {
    CHECK(rmse({1.0, 2.0}, {1.0, 4.0}) == doctest::Approx(std::sqrt(2.0)).epsilon(1e-12));
    CHECK(rmse({3.0, 3.0}, {3.0, 3.0}) == 0.0);
    CHECK_THROWS_AS(rmse({1.0}, {1.0, 2.0}), Error);
}

TEST_CASE("metrics match naive oracles on 20 random corpora") {
    Rng rng(123);
    const char* words[] = {"a", "b", "c", "pool", "spa", "great", "bad", "x"};
    for (int corpus_idx = 0; corpus_idx < 20; ++corpus_idx) {
        std::vector<std::string> texts;
        size_t n_texts = 1 + rng.index(8);
        for (size_t t = 0; t < n_texts; ++t) {
            std::string text;
            for (size_t w = 0, n = 1 + rng.index(10); w < n; ++w) {
                text += words[rng.index(8)];
                text += ' ';
            }
            texts.push_back(text);
        }
        for (size_t n = 1; n <= 3; ++n)
            CHECK(distinct_n(texts, n) == doctest::Approx(naive_distinct_n(texts, n)).epsilon(1e-12));
        CHECK(usr(texts) == doctest::Approx(naive_usr(texts)).epsilon(1e-12));
        CHECK(entr(texts, {1, 2, 3}) ==
              doctest::Approx(naive_entr(texts, {1, 2, 3})).epsilon(1e-9));

        std::vector<double> preds, golds;
        for (size_t i = 0, n = 1 + rng.index(6); i < n; ++i) {
            preds.push_back(rng.uniform(1, 5));
            golds.push_back(rng.uniform(1, 5));
        }
        CHECK(rmse(preds, golds) == doctest::Approx(naive_rmse(preds, golds)).epsilon(1e-12));
    }
}

TEST_CASE("metrics are permutation invariant") {
    std::vector<std::string> texts{"a b c", "pool spa", "a b c d", "great bad"};
    std::vector<std::string> shuffled{"great bad", "a b c", "a b c d", "pool spa"};
    CHECK(distinct_n(texts, 1) == distinct_n(shuffled, 1));
    CHECK(distinct_n(texts, 2) == distinct_n(shuffled, 2));
    CHECK(usr(texts) == usr(shuffled));
    CHECK(entr(texts) == entr(shuffled));
}

TEST_CASE("overlap stub scorer computes content-token recall") {
    OverlapNliScorer scorer;
    CHECK(scorer.score("the pool was great", "the pool was great") == 1.0);
    CHECK(scorer.score("the pool was great", "pool") == 1.0);  // recall 1 >= 0.8
    CHECK(scorer.score("the pool was great", "garden patio") == 0.0);
    CHECK(scorer.score("pool spa", "pool garden") == doctest::Approx(0.5));
    CHECK(scorer.score("pool", "the of and") == 0.0);  // no content tokens
}

TEST_CASE("entail_ratio counts explanations entailing any same-item train review") {
    auto corpus = make_corpus({
        {"u1", "i1", 4.0, "the pool was great and heated"},
        {"u2", "i1", 2.0, "the garden patio was lovely"},
        {"u3", "i2", 5.0, "amazing pizza crust"},
    });
    OverlapNliScorer scorer;

    SUBCASE("verbatim copy counts as factual") {
        auto r = entail_ratio({{"i1", "the pool was great and heated"}}, corpus, scorer, 0.5,
                              EntailDirection::review_premise);
        CHECK(r.percent == 100.0);
        CHECK(r.factual == 1);
    }
    SUBCASE("zero-overlap text is not factual") {
        auto r = entail_ratio({{"i1", "screen keyboard battery"}}, corpus, scorer);
        CHECK(r.percent == 0.0);
    }
    SUBCASE("direction flag changes which side is the premise") {
        // hypothesis recall against premise: short explanation vs long review
        auto as_premise = entail_ratio({{"i1", "pool"}}, corpus, scorer, 0.5,
                                       EntailDirection::explanation_premise);
        // premise "pool" covers little of the long review-hypothesis
        CHECK(as_premise.percent == 0.0);
        auto as_hypothesis = entail_ratio({{"i1", "pool"}}, corpus, scorer, 0.5,
                                          EntailDirection::review_premise);
        CHECK(as_hypothesis.percent == 100.0);
    }
    SUBCASE("unknown item is a validation error") {
        CHECK_THROWS_AS(entail_ratio({{"i9", "pool"}}, corpus, scorer), Error);
    }
    SUBCASE("raising the threshold never increases the percentage") {
        std::vector<std::pair<std::string, std::string>> items{
            {"i1", "the pool was great"},
            {"i1", "garden patio"},
            {"i2", "pizza crust amazing"},
            {"i2", "bad service"},
        };
        double last = 200.0;
        for (double thr : {0.1, 0.3, 0.5, 0.8, 0.9, 1.0}) {
            auto r = entail_ratio(items, corpus, scorer, thr,
                                  EntailDirection::review_premise);
            CHECK(r.percent <= last);
            last = r.percent;
        }
    }
}

namespace {

class FailingScorer : public NliScorer {
public:
    const std::string& name() const override { return name_; }
    double score(const std::string&, const std::string& hypothesis) override {
        if (hypothesis.find("boom") != std::string::npos || fail_all)
            throw Error::backend("scorer offline");
        return 1.0;
    }
    bool fail_all = false;

private:
    std::string name_ = "failing";
};

}  // namespace

TEST_CASE("scorer failures exclude the explanation from the denominator") {
    auto corpus = make_corpus({{"u1", "i1", 4.0, "the pool was great"}});
    FailingScorer scorer;
    scorer.fail_all = true;
    auto r = entail_ratio({{"i1", "pool"}, {"i1", "spa"}}, corpus, scorer, 0.5,
                          EntailDirection::review_premise);
    CHECK(r.unevaluated == 2);
    CHECK(r.evaluated == 0);
    CHECK(r.percent == 0.0);
}

TEST_CASE("evaluate_run assembles all metrics") {
    auto corpus = make_corpus({
        {"u1", "i1", 4.0, "the pool was great and heated"},
        {"u2", "i1", 3.0, "fine spa day", Split::test},
        {"u3", "i1", 2.0, "cold pool water", Split::test},
    });
    OverlapNliScorer scorer;
    EvalConfig cfg;
    cfg.direction = EntailDirection::review_premise;

    std::vector<ExplanationRow> explanations{
        {"u2", "i1", "the pool was great"},
        {"u3", "i1", "the pool was great"},
    };
    std::vector<PredictionRow> predictions{{"u2", "i1", 3.5}, {"u3", "i1", 2.5}};

    auto report = evaluate_run(explanations, predictions, corpus, &scorer, cfg);
    REQUIRE(report.rmse_value.has_value());
    CHECK(*report.rmse_value == doctest::Approx(0.5));
    REQUIRE(report.usr_value.has_value());
    CHECK(*report.usr_value == doctest::Approx(0.5));
    CHECK(report.n_samples == 2);
    REQUIRE(report.entail_pct.has_value());
    CHECK(*report.entail_pct == 100.0);
    // identical explanations everywhere -> warning
    REQUIRE(!report.warnings.empty());
    CHECK(report.warnings[0].find("generic") != std::string::npos);

    SUBCASE("report serialization is deterministic") {
        auto again = evaluate_run(explanations, predictions, corpus, &scorer, cfg);
        CHECK(eval_report_json(report) == eval_report_json(again));
    }
    SUBCASE("rmse-only run with no explanations") {
        auto partial = evaluate_run({}, predictions, corpus, &scorer, cfg);
        CHECK(partial.rmse_value.has_value());
        CHECK_FALSE(partial.d1.has_value());
        CHECK_FALSE(partial.entail_pct.has_value());
    }
    SUBCASE("unmatched prediction pair is a validation error") {
        std::vector<PredictionRow> bad{{"u9", "i9", 3.0}};
        CHECK_THROWS_AS(evaluate_run({}, bad, corpus, &scorer, cfg), Error);
    }
}

TEST_CASE("explanations JSONL and predictions CSV round trip") {
    std::string jsonl =
        R"({"user":"u1","item":"i1","text":"nice pool"})"
        "\n"
        R"({"user":"u2","item":"i2","text":"bad food"})"
        "\n";
    auto rows = parse_explanations_jsonl(jsonl);
    REQUIRE(rows.size() == 2);
    CHECK(rows[1].text == "bad food");

    std::vector<PredictionRow> preds{{"u1", "i1", 3.25}, {"u2", "i2", 4.0}};
    auto parsed = parse_predictions_csv(predictions_csv(preds));
    REQUIRE(parsed.size() == 2);
    CHECK(parsed[0].user_id == "u1");
    CHECK(parsed[0].rhat == 3.25);
    CHECK(parsed[1].rhat == 4.0);

    CHECK_THROWS_AS(parse_predictions_csv("not,a\n"), Error);
    CHECK_THROWS_AS(parse_explanations_jsonl("{\"user\":\"u\"}\n"), Error);
}

TEST_CASE("http NLI scorer speaks the JSON protocol") {
    httplib::Server server;
    server.Post("/nli", [](const httplib::Request& req, httplib::Response& res) {
        auto body = nlohmann::json::parse(req.body);
        double p = body["premise"].get<std::string>() == body["hypothesis"].get<std::string>()
                       ? 0.95
                       : 0.05;
        nlohmann::json out;
        out["probability"] = p;
        res.set_content(out.dump(), "application/json");
    });
    int port = server.bind_to_any_port("127.0.0.1");
    auto worker = std::thread([&] { server.listen_after_bind(); });
    server.wait_until_ready();

    HttpNliScorer scorer("http://127.0.0.1:" + std::to_string(port));
    CHECK(scorer.score("same text", "same text") == doctest::Approx(0.95));
    CHECK(scorer.score("one", "other") == doctest::Approx(0.05));

    server.stop();
    worker.join();
}
