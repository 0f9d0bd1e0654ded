#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <algorithm>
#include <set>
#include <sstream>
#include <thread>

#include <httplib.h>
#include <json.hpp>

#include "prag/error.hpp"
#include "prag/explain.hpp"
#include "prag/rng.hpp"
#include "prag/train.hpp"
#include "test_helpers.hpp"

using namespace prag;
using namespace prag::testing;

namespace {

// Independent beam-1 grid search used as the oracle for constrained_decode:
// single hypothesis per constraint bank, expansions in (score desc, token asc)
// order, one open expansion plus forced keyword expansions, final preference
// (constraints, mean score, lexicographic).
struct OracleHyp {
    std::vector<std::string> tokens;
    double sum = 0.0;
    size_t bank = 0;
    bool alive = true;
};

std::string greedy_forced_oracle(ReaderModel& reader, const std::string& question,
                                 const std::string& context,
                                 const std::vector<std::string>& keywords) {
    auto vocab = reader.vocabulary(question, context);
    std::vector<std::string> usable;
    for (const auto& k : keywords)
        if (vocab.count(k)) usable.push_back(k);
    REQUIRE(!usable.empty());
    const std::string eos = reader.eos_token();

    std::vector<OracleHyp> banks(usable.size() + 1);
    for (auto& b : banks) b.alive = false;
    banks[0].alive = true;
    std::vector<OracleHyp> finished;

    for (size_t step = 0; step < reader.max_output_len(); ++step) {
        std::vector<OracleHyp> next(banks.size());
        for (auto& b : next) b.alive = false;
        for (const auto& hyp : banks) {
            if (!hyp.alive) continue;
            auto score_map = reader.score_next(question, context, hyp.tokens);
            std::vector<std::pair<std::string, double>> scores(score_map.begin(),
                                                               score_map.end());
            std::sort(scores.begin(), scores.end(), [](const auto& a, const auto& b) {
                if (a.second != b.second) return a.second > b.second;
                return a.first < b.first;
            });
            size_t taken = 0;
            for (const auto& [tok, sc] : scores) {
                bool is_new_kw = std::find(usable.begin(), usable.end(), tok) != usable.end() &&
                                 std::find(hyp.tokens.begin(), hyp.tokens.end(), tok) ==
                                     hyp.tokens.end();
                if (tok == eos) {
                    finished.push_back(hyp);
                    ++taken;
                    continue;
                }
                if (taken >= 1 && !is_new_kw) continue;
                OracleHyp ext = hyp;
                ext.tokens.push_back(tok);
                ext.sum += sc;
                if (is_new_kw) ext.bank = hyp.bank + 1;
                auto& slot = next[ext.bank];
                if (!slot.alive || ext.sum > slot.sum ||
                    (ext.sum == slot.sum && ext.tokens < slot.tokens)) {
                    slot = ext;
                    slot.alive = true;
                }
                if (taken < 1) ++taken;
            }
        }
        banks = std::move(next);
    }
    for (const auto& hyp : banks)
        if (hyp.alive) finished.push_back(hyp);

    const OracleHyp* best = nullptr;
    for (const auto& h : finished) {
        if (h.bank == 0 || h.tokens.empty()) continue;
        double mean = h.sum / double(h.tokens.size());
        if (!best) {
            best = &h;
            continue;
        }
        double bmean = best->sum / double(best->tokens.size());
        if (h.bank != best->bank ? h.bank > best->bank
                                 : (mean != bmean ? mean > bmean : h.tokens < best->tokens))
            best = &h;
    }
    REQUIRE(best != nullptr);
    std::string out;
    for (size_t i = 0; i < best->tokens.size(); ++i) {
        if (i) out += ' ';
        out += best->tokens[i];
    }
    return out;
}

}  // namespace

TEST_CASE("keyword training pairs come from each review's own text") {
    auto corpus = make_corpus({
        {"u1", "i1", 4.0, "great pool and hot sauna"},
        {"u2", "i1", 2.0, "the the the"},  // stopwords only -> dropped
        {"u3", "i2", 5.0, "amazing pizza crust"},
    });
    ToyHashEncoder enc(16, 0);
    auto store = embed_corpus(corpus, enc);
    auto stats = compute_tfidf_stats(corpus);
    auto set = build_keyword_training_pairs(corpus, store, stats, 5);
    CHECK(set.pairs.size() == 2);
    CHECK(set.dropped == 1);
    for (const auto& p : set.pairs) {
        auto toks = tokenize(corpus.record(p.review_id).text);
        std::set<std::string> token_set(toks.begin(), toks.end());
        for (const auto& k : p.keywords.keywords) CHECK(token_set.count(k) == 1);
    }
}

TEST_CASE("nearest-review estimator returns the source keywords for an exact match") {
    auto corpus = make_corpus({
        {"u1", "i1", 4.0, "great pool and hot sauna"},
        {"u2", "i2", 5.0, "amazing pizza crust"},
    });
    ToyHashEncoder enc(16, 0);
    auto store = embed_corpus(corpus, enc);
    auto stats = compute_tfidf_stats(corpus);
    auto est = NearestReviewKeywordEstimator::build(corpus, store, stats, 5);

    auto expected = top_k_tfidf("great pool and hot sauna", stats, 5);
    auto got = est.predict(store.vector_f64(0));
    CHECK(got.keywords == expected.keywords);
}

TEST_CASE("estimate_keywords uses the mean of query and retrieved evidence") {
    auto corpus = make_corpus({
        {"u1", "i1", 4.0, "great pool and hot sauna"},
        {"u2", "i2", 5.0, "amazing pizza crust"},
    });
    ToyHashEncoder enc(16, 0);
    auto store = embed_corpus(corpus, enc);
    auto stats = compute_tfidf_stats(corpus);
    auto est = NearestReviewKeywordEstimator::build(corpus, store, stats, 5);

    RetrievalResult retrieved;
    retrieved.evidence = {{0, 1.0}};
    // query equals review 0's embedding; mean of identical vectors is itself
    auto via_mean = estimate_keywords(est, store.vector_f64(0), retrieved, store, false);
    auto query_only = estimate_keywords(est, store.vector_f64(0), retrieved, store, true);
    CHECK(via_mean.keywords == query_only.keywords);
    CHECK(via_mean.keywords == top_k_tfidf("great pool and hot sauna", stats, 5).keywords);
}

TEST_CASE("estimator backend failure falls back to the baseline") {
    auto corpus = make_corpus({{"u1", "i1", 4.0, "great pool and hot sauna"}});
    ToyHashEncoder enc(16, 0);
    auto store = embed_corpus(corpus, enc);
    auto stats = compute_tfidf_stats(corpus);
    auto baseline = NearestReviewKeywordEstimator::build(corpus, store, stats, 5);

    HttpKeywordEstimator broken("http://127.0.0.1:1", 5);
    RetrievalResult retrieved;
    retrieved.evidence = {{0, 1.0}};
    bool used_fallback = false;
    auto kw = estimate_keywords(broken, store.vector_f64(0), retrieved, store, false, &baseline,
                                &used_fallback);
    CHECK(used_fallback);
    CHECK(!kw.empty());
}

TEST_CASE("select_prompt emits exactly the two prompt strings") {
    CHECK(select_prompt(1.3) == "what was great?");
    CHECK(select_prompt(-0.2) == "what was not good?");
    CHECK(select_prompt(0.0) == "what was great?");
    CHECK(select_prompt(1e-12) == "what was great?");
    CHECK(select_prompt(-1e-12) == "what was not good?");
}

TEST_CASE("constrained decode includes a keyword over the stub reader") {
    StubCopyReader reader;
    KeywordSet kw;
    kw.keywords = {"pool"};
    auto text = constrained_decode(reader, "what was great?", "the pool was heated", kw, 4);
    auto toks = tokenize(text);
    CHECK(std::find(toks.begin(), toks.end(), "pool") != toks.end());
}

TEST_CASE("constrained decode with beam 1 equals the greedy forced oracle") {
    StubCopyReader reader(8);
    std::vector<std::pair<std::string, std::vector<std::string>>> cases = {
        {"the pool was heated and the pool was clean", {"pool"}},
        {"room was small. pool was heated and clean.", {"clean", "room"}},
        {"great pizza with great crust and fine sauce", {"crust", "sauce"}},
        {"the trail to the summit was long but the scenery was great", {"scenery"}},
    };
    for (const auto& [context, kws] : cases) {
        KeywordSet kw;
        kw.keywords = kws;
        auto got = constrained_decode(reader, "what was great?", context, kw, 1);
        auto expected = greedy_forced_oracle(reader, "what was great?", context, kws);
        CHECK(got == expected);
    }
}

TEST_CASE("constrained decode rejects keywords outside the vocabulary") {
    StubCopyReader reader;
    KeywordSet kw;
    kw.keywords = {"zzzz"};
    try {
        constrained_decode(reader, "q", "the pool was heated", kw, 2);
        FAIL("expected constraint error");
    } catch (const Error& e) {
        CHECK(e.kind() == ErrorKind::constraint);
    }
}

TEST_CASE("constrained decode satisfies the constraint on 100 random cases") {
    Rng rng(77);
    const char* words[] = {"pool", "spa", "pizza", "crust", "screen", "plot",
                           "trail", "coffee", "engine", "garden", "water", "service"};
    StubCopyReader reader(10);
    for (int trial = 0; trial < 100; ++trial) {
        std::string context;
        std::vector<std::string> context_words;
        for (size_t i = 0, n = 4 + rng.index(10); i < n; ++i) {
            const char* w = words[rng.index(12)];
            context += w;
            context += ' ';
            context_words.push_back(w);
        }
        KeywordSet kw;
        kw.keywords = {context_words[rng.index(context_words.size())]};
        auto text = constrained_decode(reader, "what was great?", context, kw,
                                       1 + rng.index(4));
        auto toks = tokenize(text);
        CHECK(std::find(toks.begin(), toks.end(), kw.keywords[0]) != toks.end());
    }
}

TEST_CASE("split_sentences keeps punctuation and trims whitespace") {
    auto s = split_sentences("room was small. pool was heated and clean.  last one");
    REQUIRE(s.size() == 3);
    CHECK(s[0] == "room was small.");
    CHECK(s[1] == "pool was heated and clean.");
    CHECK(s[2] == "last one");
}

TEST_CASE("extractive reader picks the sentence with most keyword hits") {
    KeywordSet kw;
    kw.keywords = {"pool", "clean"};
    bool hit = false;
    auto text = extractive_read({"room was small. pool was heated and clean."}, kw, &hit);
    CHECK(text == "pool was heated and clean.");
    CHECK(hit);
}

TEST_CASE("extractive reader falls back to the first sentence of the top evidence") {
    KeywordSet kw;
    kw.keywords = {"nothing"};
    bool hit = true;
    auto text = extractive_read({"room was small. beds were soft.", "pool was heated."}, kw,
                                &hit);
    CHECK(text == "room was small.");
    CHECK_FALSE(hit);
}

TEST_CASE("extractive reader prefers the lower evidence rank on ties") {
    KeywordSet kw;
    kw.keywords = {"pool"};
    auto text = extractive_read({"the pool was fine.", "pool was heated."}, kw);
    CHECK(text == "the pool was fine.");
}

TEST_CASE("extractive output is always a verbatim substring of some evidence") {
    Rng rng(31);
    const char* words[] = {"pool", "spa", "pizza", "crust", "screen", "plot", "trail", "coffee"};
    for (int trial = 0; trial < 100; ++trial) {
        std::vector<std::string> evidence;
        for (size_t e = 0, ne = 1 + rng.index(3); e < ne; ++e) {
            std::string text;
            for (size_t s = 0, ns = 1 + rng.index(3); s < ns; ++s) {
                for (size_t w = 0, nw = 2 + rng.index(5); w < nw; ++w) {
                    text += words[rng.index(8)];
                    text += ' ';
                }
                text.back() = '.';
                text += ' ';
            }
            evidence.push_back(text);
        }
        KeywordSet kw;
        kw.keywords = {words[rng.index(8)], words[rng.index(8)]};
        auto out = extractive_read(evidence, kw);
        bool substring = false;
        for (const auto& e : evidence)
            if (e.find(out) != std::string::npos) substring = true;
        CHECK(substring);
    }
}

TEST_CASE("reader context respects the token budget in rank order") {
    std::vector<std::string> texts{"one two three", "four five", "six seven eight nine"};
    CHECK(build_reader_context(texts, 5) == "one two three four five");
    CHECK(build_reader_context(texts, 3) == "one two three");
    CHECK(build_reader_context(texts, 1) == "one two three");  // top text always kept
    CHECK(build_reader_context(texts, 100) == "one two three four five six seven eight nine");
}

TEST_CASE("explain composes the full pipeline deterministically") {
    auto inst = small_instance(5, 4, 16);
    TrainConfig tc;
    tc.epochs = 5;
    tc.batch_size = 8;
    tc.seed = 3;
    auto trained = train(inst.corpus, inst.store, tc);
    auto stats = compute_tfidf_stats(inst.corpus);
    auto est = NearestReviewKeywordEstimator::build(inst.corpus, inst.store, stats, 5);

    ExplainConfig cfg;
    cfg.marginalize.batch_size = 3;
    cfg.marginalize.seed = 1;

    auto a = explain(trained.model, inst.corpus, inst.store, est, nullptr, "u0", "i0", cfg);
    auto b = explain(trained.model, inst.corpus, inst.store, est, nullptr, "u0", "i0", cfg);
    CHECK(explanation_json(a) == explanation_json(b));

    CHECK(!a.text.empty());
    CHECK(!a.evidence.empty());
    CHECK(a.reader_name == "extractive");
    CHECK((a.polarity == "positive" || a.polarity == "negative"));
    if (a.adjustment < 0) {
        CHECK(a.polarity == "negative");
        CHECK(a.prompt == "what was not good?");
    } else {
        CHECK(a.polarity == "positive");
        CHECK(a.prompt == "what was great?");
    }
    // extractive text is verbatim from some evidence review
    bool substring = false;
    for (uint64_t id : a.evidence)
        if (inst.corpus.record(id).text.find(a.text) != std::string::npos) substring = true;
    CHECK(substring);
    CHECK(a.predicted_rating >= inst.corpus.rating_range().first);
    CHECK(a.predicted_rating <= inst.corpus.rating_range().second);
}

TEST_CASE("explain propagates missing evidence") {
    auto inst = small_instance(3, 3, 16);
    TrainConfig tc;
    tc.epochs = 1;
    tc.seed = 2;
    auto trained = train(inst.corpus, inst.store, tc);
    auto stats = compute_tfidf_stats(inst.corpus);
    auto est = NearestReviewKeywordEstimator::build(inst.corpus, inst.store, stats, 5);
    ExplainConfig cfg;
    CHECK_THROWS_WITH_AS(
        explain(trained.model, inst.corpus, inst.store, est, nullptr, "ghost", "phantom", cfg),
        "no evidence for pair", Error);
}

TEST_CASE("export_finetune_set writes deterministic constrained rows") {
    auto inst = small_instance(6, 4, 16);
    // carve out a test split; the store is keyed by review_id so it is reusable
    inst.corpus = split_corpus(inst.corpus, 0.7, 0.1, 0.2, 13, true);
    TrainConfig tc;
    tc.epochs = 3;
    tc.batch_size = 8;
    tc.seed = 9;
    auto trained = train(inst.corpus, inst.store, tc);
    auto stats = compute_tfidf_stats(inst.corpus);
    auto est = NearestReviewKeywordEstimator::build(inst.corpus, inst.store, stats, 5);
    StubCopyReader reader;

    ExplainConfig cfg;
    cfg.marginalize.batch_size = 3;

    std::ostringstream out1, out2;
    auto r1 = export_finetune_set(trained.model, inst.corpus, inst.store, est, &reader, cfg, 100,
                                  4, out1);
    auto r2 = export_finetune_set(trained.model, inst.corpus, inst.store, est, &reader, cfg, 100,
                                  4, out2);
    CHECK(out1.str() == out2.str());
    CHECK(r1.written == r2.written);
    CHECK(r1.written + r1.skipped <= 100);
    CHECK(r1.written > 0);

    // every row is schema-complete; constrained outputs carry >= 1 keyword
    std::istringstream lines(out1.str());
    std::string line;
    size_t rows = 0;
    while (std::getline(lines, line)) {
        auto row = nlohmann::json::parse(line);
        ++rows;
        REQUIRE(row.contains("question"));
        REQUIRE(row.contains("context"));
        REQUIRE(row.contains("keywords"));
        REQUIRE(row.contains("constrained_output"));
        CHECK(row["rephrased"].is_null());
        auto toks = tokenize(row["constrained_output"].get<std::string>());
        std::set<std::string> token_set(toks.begin(), toks.end());
        bool any = false;
        for (const auto& k : row["keywords"])
            if (token_set.count(k.get<std::string>())) any = true;
        CHECK(any);
    }
    CHECK(rows == r1.written);
}

TEST_CASE("http reader and estimator adapters speak the JSON protocol") {
    httplib::Server server;
    server.Post("/score", [](const httplib::Request& req, httplib::Response& res) {
        auto body = nlohmann::json::parse(req.body);
        nlohmann::json out;
        // tiny deterministic reader: always score "pool" highest, then eos
        out["scores"] = {{"pool", 2.0}, {"fine", 1.0}, {"</s>", 0.5}};
        if (!body["prefix"].empty()) out["scores"]["pool"] = 0.1;
        res.set_content(out.dump(), "application/json");
    });
    server.Post("/keywords", [](const httplib::Request& req, httplib::Response& res) {
        auto body = nlohmann::json::parse(req.body);
        nlohmann::json out;
        out["keywords"] = {"pool", "fine"};
        res.set_content(out.dump(), "application/json");
    });
    int port = server.bind_to_any_port("127.0.0.1");
    auto worker = std::thread([&] { server.listen_after_bind(); });
    server.wait_until_ready();
    std::string endpoint = "http://127.0.0.1:" + std::to_string(port);

    HttpReader reader(endpoint, 4);
    auto vocab = reader.vocabulary("q", "ctx");
    CHECK(vocab.count("pool") == 1);
    KeywordSet kw;
    kw.keywords = {"pool"};
    auto text = constrained_decode(reader, "q", "ctx", kw, 2);
    auto toks = tokenize(text);
    CHECK(std::find(toks.begin(), toks.end(), "pool") != toks.end());

    HttpKeywordEstimator est(endpoint, 5);
    auto got = est.predict({0.0, 1.0});
    CHECK(got.keywords == std::vector<std::string>{"pool", "fine"});

    server.stop();
    worker.join();
}
