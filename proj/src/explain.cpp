#include "prag/explain.hpp"

#include <algorithm>
#include <cmath>
#include <ostream>
#include <sstream>

#include <httplib.h>
#include <json.hpp>

#include "prag/error.hpp"
#include "prag/rng.hpp"

namespace prag {

using nlohmann::json;

KeywordTrainingSet build_keyword_training_pairs(const Corpus& corpus,
                                                const EmbeddingStore& store,
                                                const CorpusStats& stats, size_t k) {
    KeywordTrainingSet set;
    for (const auto& r : corpus.records()) {
        if (r.split != Split::train) continue;
        KeywordSet kw = top_k_tfidf(r.text, stats, k);
        if (kw.empty()) {
            ++set.dropped;
            continue;
        }
        const float* v = store.vector(r.review_id);
        set.pairs.push_back({r.review_id, {v, v + store.dim()}, std::move(kw)});
    }
    return set;
}

NearestReviewKeywordEstimator NearestReviewKeywordEstimator::build(const Corpus& corpus,
                                                                   const EmbeddingStore& store,
                                                                   const CorpusStats& stats,
                                                                   size_t k) {
    auto set = build_keyword_training_pairs(corpus, store, stats, k);
    if (set.pairs.empty())
        throw Error::validation("no keyword training pairs (train split has no content tokens)");
    NearestReviewKeywordEstimator est;
    est.k_ = k;
    for (auto& p : set.pairs) {
        est.ids_.push_back(p.review_id);
        est.embeddings_.emplace_back(p.embedding.begin(), p.embedding.end());
        est.keywords_.push_back(std::move(p.keywords));
    }
    return est;
}

KeywordSet NearestReviewKeywordEstimator::predict(const std::vector<double>& embedding) {
    if (embedding.size() != embeddings_.front().size())
        throw Error::validation("estimator input dimension mismatch");
    size_t best = 0;
    double best_cos = -2.0;
    for (size_t i = 0; i < embeddings_.size(); ++i) {
        double c = cosine(embedding, embeddings_[i]);
        if (c > best_cos || (c == best_cos && ids_[i] < ids_[best])) {
            best_cos = c;
            best = i;
        }
    }
    return keywords_[best];
}

HttpKeywordEstimator::HttpKeywordEstimator(std::string endpoint, size_t k)
    : endpoint_(std::move(endpoint)), k_(k) {
    if (endpoint_.empty()) throw Error::validation("http estimator needs an endpoint");
}

KeywordSet HttpKeywordEstimator::predict(const std::vector<double>& embedding) {
    httplib::Client client(endpoint_);
    client.set_connection_timeout(5);
    client.set_read_timeout(30);
    json req;
    req["embedding"] = embedding;
    req["k"] = k_;
    auto res = client.Post("/keywords", req.dump(), "application/json");
    if (!res || res->status != 200)
        throw Error::backend("keyword estimator endpoint unreachable: " + endpoint_);
    json body = json::parse(res->body, nullptr, false);
    if (body.is_discarded() || !body.contains("keywords"))
        throw Error::backend("keyword estimator returned malformed response");
    KeywordSet out;
    std::set<std::string> seen;
    for (const auto& t : body["keywords"]) {
        std::string tok = t.get<std::string>();
        if (tok.empty() || seen.count(tok)) continue;
        seen.insert(tok);
        out.keywords.push_back(tok);
        if (out.keywords.size() >= k_) break;
    }
    return out;
}

KeywordSet estimate_keywords(KeywordEstimator& estimator, const std::vector<double>& query,
                             const RetrievalResult& retrieved, const EmbeddingStore& store,
                             bool query_only, KeywordEstimator* fallback, bool* used_fallback) {
    if (used_fallback) *used_fallback = false;
    std::vector<double> input = query;
    if (!query_only && !retrieved.evidence.empty()) {
        for (const auto& s : retrieved.evidence) {
            const float* v = store.vector(s.review_id);
            for (size_t i = 0; i < input.size(); ++i) input[i] += static_cast<double>(v[i]);
        }
        const double inv = 1.0 / static_cast<double>(retrieved.evidence.size() + 1);
        for (double& v : input) v *= inv;
    }
    try {
        return estimator.predict(input);
    } catch (const Error& e) {
        if (e.kind() == ErrorKind::backend && fallback) {
            if (used_fallback) *used_fallback = true;
            return fallback->predict(input);
        }
        throw;
    }
}

std::string select_prompt(double adjustment) {
    return adjustment < 0.0 ? "what was not good?" : "what was great?";
}

std::set<std::string> StubCopyReader::vocabulary(const std::string&, const std::string& context) {
    std::set<std::string> vocab;
    for (auto& t : tokenize(context)) vocab.insert(std::move(t));
    vocab.insert(eos_token());
    return vocab;
}

std::map<std::string, double> StubCopyReader::score_next(const std::string&,
                                                         const std::string& context,
                                                         const std::vector<std::string>& prefix) {
    auto stream = tokenize(context);
    std::map<std::string, double> unigram;
    std::map<std::pair<std::string, std::string>, double> bigram;
    for (size_t i = 0; i < stream.size(); ++i) {
        unigram[stream[i]] += 1.0;
        if (i + 1 < stream.size()) bigram[{stream[i], stream[i + 1]}] += 1.0;
    }
    const double total = std::max<double>(1.0, static_cast<double>(stream.size()));

    std::map<std::string, double> scores;
    for (const auto& [tok, count] : unigram) {
        double s = 0.01 * count / total;
        if (!prefix.empty()) {
            auto it = bigram.find({prefix.back(), tok});
            if (it != bigram.end()) s = 1.0 + it->second;
        }
        scores[tok] = s;
    }
    scores[eos_token()] = 0.05;
    return scores;
}

HttpReader::HttpReader(std::string endpoint, size_t max_len)
    : endpoint_(std::move(endpoint)), max_len_(max_len) {
    if (endpoint_.empty()) throw Error::validation("http reader needs an endpoint");
}

std::set<std::string> HttpReader::vocabulary(const std::string& question,
                                             const std::string& context) {
    auto scores = score_next(question, context, {});
    std::set<std::string> vocab;
    for (const auto& [tok, s] : scores) vocab.insert(tok);
    vocab.insert(eos_token());
    return vocab;
}

std::map<std::string, double> HttpReader::score_next(const std::string& question,
                                                     const std::string& context,
                                                     const std::vector<std::string>& prefix) {
    httplib::Client client(endpoint_);
    client.set_connection_timeout(5);
    client.set_read_timeout(30);
    json req;
    req["question"] = question;
    req["context"] = context;
    req["prefix"] = prefix;
    auto res = client.Post("/score", req.dump(), "application/json");
    if (!res || res->status != 200)
        throw Error::backend("reader endpoint unreachable: " + endpoint_);
    json body = json::parse(res->body, nullptr, false);
    if (body.is_discarded() || !body.contains("scores") || !body["scores"].is_object())
        throw Error::backend("reader returned malformed response");
    std::map<std::string, double> scores;
    for (const auto& [tok, s] : body["scores"].items()) {
        double v = s.get<double>();
        if (!std::isfinite(v)) throw Error::backend("reader returned non-finite score");
        scores[tok] = v;
    }
    return scores;
}

namespace {

struct Hypothesis {
    std::vector<std::string> tokens;
    double sum_score = 0.0;
    uint32_t bank = 0;  // distinct keywords satisfied
    bool finished = false;

    double mean_score() const {
        return tokens.empty() ? -1e30 : sum_score / static_cast<double>(tokens.size());
    }
};

std::string join_tokens(const std::vector<std::string>& tokens) {
    std::string out;
    for (size_t i = 0; i < tokens.size(); ++i) {
        if (i) out += ' ';
        out += tokens[i];
    }
    return out;
}

// (score desc, token asc): deterministic expansion order
std::vector<std::pair<std::string, double>> ordered_scores(
    const std::map<std::string, double>& scores) {
    std::vector<std::pair<std::string, double>> v(scores.begin(), scores.end());
    std::sort(v.begin(), v.end(), [](const auto& a, const auto& b) {
        if (a.second != b.second) return a.second > b.second;
        return a.first < b.first;
    });
    return v;
}

bool better_live(const Hypothesis& a, const Hypothesis& b) {
    if (a.sum_score != b.sum_score) return a.sum_score > b.sum_score;
    return a.tokens < b.tokens;
}

}  // namespace

std::string constrained_decode(ReaderModel& reader, const std::string& question,
                               const std::string& context, const KeywordSet& keywords,
                               size_t beam_width) {
    if (keywords.empty()) throw Error::validation("constrained_decode requires keywords");
    if (beam_width < 1) throw Error::validation("beam width must be >= 1");

    auto vocab = reader.vocabulary(question, context);
    std::vector<std::string> usable_keywords;
    for (const auto& k : keywords.keywords)
        if (vocab.count(k)) usable_keywords.push_back(k);
    if (usable_keywords.empty())
        throw Error::constraint("no keyword is tokenizable in the reader vocabulary");

    const std::string eos = reader.eos_token();
    const size_t max_len = reader.max_output_len();
    const uint32_t max_bank = static_cast<uint32_t>(usable_keywords.size());

    // banks[b] holds live hypotheses with b distinct keywords
    std::vector<std::vector<Hypothesis>> banks(max_bank + 1);
    banks[0].push_back({});
    std::vector<Hypothesis> finished;

    for (size_t step = 0; step < max_len; ++step) {
        std::vector<std::vector<Hypothesis>> next(max_bank + 1);
        bool any_live = false;
        for (uint32_t b = 0; b <= max_bank; ++b) {
            for (const auto& hyp : banks[b]) {
                any_live = true;
                auto scores = ordered_scores(
                    reader.score_next(question, context, hyp.tokens));

                // open expansions: the top beam_width tokens, plus every
                // unsatisfied keyword as a forced expansion
                size_t taken = 0;
                for (const auto& [tok, sc] : scores) {
                    bool is_new_keyword =
                        std::find(usable_keywords.begin(), usable_keywords.end(), tok) !=
                            usable_keywords.end() &&
                        std::find(hyp.tokens.begin(), hyp.tokens.end(), tok) == hyp.tokens.end();
                    bool forced = is_new_keyword;
                    if (tok == eos) {
                        Hypothesis done = hyp;
                        done.finished = true;
                        finished.push_back(std::move(done));
                        ++taken;
                        continue;
                    }
                    if (taken >= beam_width && !forced) continue;
                    Hypothesis ext = hyp;
                    ext.tokens.push_back(tok);
                    ext.sum_score += sc;
                    if (is_new_keyword) ext.bank = hyp.bank + 1;
                    next[ext.bank].push_back(std::move(ext));
                    if (taken < beam_width) ++taken;
                }
            }
        }
        if (!any_live) break;
        for (uint32_t b = 0; b <= max_bank; ++b) {
            auto& bank = next[b];
            std::sort(bank.begin(), bank.end(), better_live);
            if (bank.size() > beam_width) bank.resize(beam_width);
        }
        banks = std::move(next);
    }
    // hypotheses alive at the length limit count as finished
    for (auto& bank : banks)
        for (auto& hyp : bank) finished.push_back(std::move(hyp));

    const Hypothesis* best = nullptr;
    for (const auto& hyp : finished) {
        if (hyp.bank == 0 || hyp.tokens.empty()) continue;
        if (!best) {
            best = &hyp;
            continue;
        }
        if (hyp.bank != best->bank) {
            if (hyp.bank > best->bank) best = &hyp;
        } else if (hyp.mean_score() != best->mean_score()) {
            if (hyp.mean_score() > best->mean_score()) best = &hyp;
        } else if (hyp.tokens < best->tokens) {
            best = &hyp;
        }
    }
    if (!best)
        throw Error::constraint("no constrained hypothesis finished");
    return join_tokens(best->tokens);
}

std::vector<std::string> split_sentences(const std::string& text) {
    std::vector<std::string> out;
    size_t start = 0;
    for (size_t i = 0; i < text.size(); ++i) {
        char c = text[i];
        if (c == '.' || c == '!' || c == '?') {
            bool at_end = i + 1 >= text.size();
            bool before_ws = !at_end && (text[i + 1] == ' ' || text[i + 1] == '\t' ||
                                         text[i + 1] == '\n' || text[i + 1] == '\r');
            if (at_end || before_ws) {
                out.push_back(text.substr(start, i - start + 1));
                start = i + 1;
            }
        }
    }
    if (start < text.size()) out.push_back(text.substr(start));

    std::vector<std::string> trimmed;
    for (auto& s : out) {
        size_t a = s.find_first_not_of(" \t\r\n");
        if (a == std::string::npos) continue;
        size_t b = s.find_last_not_of(" \t\r\n");
        trimmed.push_back(s.substr(a, b - a + 1));
    }
    return trimmed;
}

std::string extractive_read(const std::vector<std::string>& evidence_texts,
                            const KeywordSet& keywords, bool* keyword_hit) {
    if (evidence_texts.empty()) throw Error::validation("extractive reader needs evidence");
    if (keyword_hit) *keyword_hit = true;

    std::string best_sentence;
    long best_count = -1;
    size_t best_rank = 0, best_index = 0;
    std::string first_sentence;

    for (size_t rank = 0; rank < evidence_texts.size(); ++rank) {
        auto sentences = split_sentences(evidence_texts[rank]);
        for (size_t idx = 0; idx < sentences.size(); ++idx) {
            if (rank == 0 && idx == 0) first_sentence = sentences[idx];
            auto tokens = tokenize(sentences[idx]);
            std::set<std::string> token_set(tokens.begin(), tokens.end());
            long count = 0;
            for (const auto& k : keywords.keywords)
                if (token_set.count(k)) ++count;
            bool better = count > best_count ||
                          (count == best_count &&
                           (rank < best_rank || (rank == best_rank && idx < best_index)));
            if (better) {
                best_count = count;
                best_rank = rank;
                best_index = idx;
                best_sentence = sentences[idx];
            }
        }
    }
    if (best_count <= 0) {
        if (keyword_hit) *keyword_hit = false;
        if (first_sentence.empty())
            throw Error::validation("evidence contains no sentences");
        return first_sentence;
    }
    return best_sentence;
}

std::string build_reader_context(const std::vector<std::string>& evidence_texts,
                                 size_t token_budget) {
    std::string context;
    size_t used = 0;
    for (size_t i = 0; i < evidence_texts.size(); ++i) {
        size_t cost = tokenize(evidence_texts[i]).size();
        if (i > 0 && used + cost > token_budget) break;
        if (!context.empty()) context += ' ';
        context += evidence_texts[i];
        used += cost;
    }
    return context;
}

Explanation explain(const RetrieverModel& model, const Corpus& corpus,
                    const EmbeddingStore& store, KeywordEstimator& estimator,
                    ReaderModel* reader, const std::string& user_id, const std::string& item_id,
                    const ExplainConfig& cfg, KeywordEstimator* fallback_estimator) {
    ForwardOutput out = forward_pair(model, corpus, store, user_id, item_id);

    Explanation e;
    e.user_id = user_id;
    e.item_id = item_id;
    e.adjustment = out.adjustment;
    e.polarity = out.adjustment < 0.0 ? "negative" : "positive";
    e.prompt = select_prompt(out.adjustment);
    e.predicted_rating = clamp_rating(out.rhat, model.config());

    RetrievalResult retrieved =
        retrieve_with_query(model, corpus, store, user_id, item_id, out.query.values,
                            cfg.evidence_k, cfg.scope, cfg.marginalize);
    if (retrieved.evidence.empty())
        throw Error::runtime("no retrievable evidence for pair (empty candidate scope)");
    for (const auto& s : retrieved.evidence) e.evidence.push_back(s.review_id);

    e.keywords = estimate_keywords(estimator, out.query.values, retrieved, store,
                                   cfg.query_only_keywords, fallback_estimator, nullptr);

    std::vector<std::string> evidence_texts;
    for (uint64_t id : e.evidence) evidence_texts.push_back(corpus.record(id).text);

    if (reader) {
        std::string context = build_reader_context(evidence_texts, cfg.context_token_budget);
        try {
            e.text = constrained_decode(*reader, e.prompt, context, e.keywords, cfg.beam_width);
            e.reader_name = reader->name();
            e.keyword_hit = true;
            return e;
        } catch (const Error& err) {
            if (err.kind() != ErrorKind::constraint && err.kind() != ErrorKind::backend) throw;
            e.used_extractive_fallback = true;
        }
    }
    e.text = extractive_read(evidence_texts, e.keywords, &e.keyword_hit);
    e.reader_name = "extractive";
    return e;
}

std::string explanation_json(const Explanation& e) {
    json j;
    j["user"] = e.user_id;
    j["item"] = e.item_id;
    j["text"] = e.text;
    j["polarity"] = e.polarity;
    j["keywords"] = e.keywords.keywords;
    j["evidence"] = e.evidence;
    j["predicted_rating"] = e.predicted_rating;
    j["adjustment"] = e.adjustment;
    j["reader"] = e.reader_name;
    j["prompt"] = e.prompt;
    j["keyword_hit"] = e.keyword_hit;
    j["used_extractive_fallback"] = e.used_extractive_fallback;
    return j.dump();
}

ExportResult export_finetune_set(const RetrieverModel& model, const Corpus& corpus,
                                 const EmbeddingStore& store, KeywordEstimator& estimator,
                                 ReaderModel* reader, const ExplainConfig& cfg,
                                 uint64_t n_samples, uint64_t seed, std::ostream& out) {
    if (n_samples < 1) throw Error::validation("export needs n_samples >= 1");
    std::vector<uint64_t> test_ids = corpus.review_ids(Split::test);
    if (test_ids.empty()) throw Error::validation("no test pairs to export");

    Rng rng = Rng::substream(seed, "export");
    std::vector<uint64_t> sampled;
    if (n_samples >= test_ids.size()) {
        sampled = test_ids;
    } else {
        for (size_t idx : rng.sample_indices(test_ids.size(), n_samples))
            sampled.push_back(test_ids[idx]);
        std::sort(sampled.begin(), sampled.end());
    }

    ExportResult result;
    for (uint64_t id : sampled) {
        const ReviewRecord& rec = corpus.record(id);
        try {
            Explanation e = explain(model, corpus, store, estimator, reader, rec.user_id,
                                    rec.item_id, cfg);
            std::vector<std::string> evidence_texts;
            for (uint64_t ev : e.evidence) evidence_texts.push_back(corpus.record(ev).text);
            json row;
            row["question"] = e.prompt;
            row["context"] = build_reader_context(evidence_texts, cfg.context_token_budget);
            row["keywords"] = e.keywords.keywords;
            row["constrained_output"] = e.text;
            row["rephrased"] = nullptr;
            out << row.dump() << "\n";
            ++result.written;
        } catch (const Error&) {
            ++result.skipped;
        }
    }
    return result;
}

}  // namespace prag
