#pragma once

#include <cstdint>
#include <iosfwd>
#include <map>
#include <memory>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "prag/corpus.hpp"
#include "prag/encoder.hpp"
#include "prag/model.hpp"
#include "prag/retrieval.hpp"

namespace prag {

// Maps an embedding to informative keywords. predict returns at most k()
// nonempty lowercase tokens, no duplicates.
class KeywordEstimator {
public:
    virtual ~KeywordEstimator() = default;
    virtual size_t k() const = 0;
    virtual const std::string& name() const = 0;
    virtual KeywordSet predict(const std::vector<double>& embedding) = 0;
};

struct KeywordTrainingPair {
    uint64_t review_id;
    std::vector<float> embedding;
    KeywordSet keywords;
};

struct KeywordTrainingSet {
    std::vector<KeywordTrainingPair> pairs;
    uint64_t dropped = 0;  // train reviews with no content tokens
};

// One (embedding, top-k tf-idf keywords) pair per train review; reviews whose
// keyword set is empty are dropped and counted.
KeywordTrainingSet build_keyword_training_pairs(const Corpus& corpus,
                                                const EmbeddingStore& store,
                                                const CorpusStats& stats, size_t k = 5);

// Baseline estimator: nearest train-review embedding by cosine (ties to the
// lower review_id), returning that review's stored tf-idf keywords.
class NearestReviewKeywordEstimator : public KeywordEstimator {
public:
    static NearestReviewKeywordEstimator build(const Corpus& corpus, const EmbeddingStore& store,
                                               const CorpusStats& stats, size_t k = 5);
    size_t k() const override { return k_; }
    const std::string& name() const override { return name_; }
    KeywordSet predict(const std::vector<double>& embedding) override;

private:
    size_t k_ = 5;
    std::string name_ = "nearest-review";
    std::vector<uint64_t> ids_;  // ascending
    std::vector<std::vector<double>> embeddings_;
    std::vector<KeywordSet> keywords_;
};

// Adapter for an external estimator: POST <endpoint>/keywords with
// {"embedding": [...], "k": n} returning {"keywords": [...]}.
class HttpKeywordEstimator : public KeywordEstimator {
public:
    HttpKeywordEstimator(std::string endpoint, size_t k = 5);
    size_t k() const override { return k_; }
    const std::string& name() const override { return name_; }
    KeywordSet predict(const std::vector<double>& embedding) override;

private:
    std::string endpoint_;
    size_t k_;
    std::string name_ = "http-estimator";
};

// Mean of {query} ∪ {retrieved evidence embeddings} (query alone when
// query_only), fed to the estimator. Backend failures fall back to the
// supplied baseline; used_fallback reports it.
KeywordSet estimate_keywords(KeywordEstimator& estimator, const std::vector<double>& query,
                             const RetrievalResult& retrieved, const EmbeddingStore& store,
                             bool query_only = false, KeywordEstimator* fallback = nullptr,
                             bool* used_fallback = nullptr);

// adjustment > 0 or == 0 -> "what was great?", adjustment < 0 -> "what was not good?"
std::string select_prompt(double adjustment);

// Next-token scorer over a fixed per-context vocabulary. Scoring must be
// deterministic and finite for every vocabulary token.
class ReaderModel {
public:
    virtual ~ReaderModel() = default;
    virtual const std::string& name() const = 0;
    virtual std::string eos_token() const { return "</s>"; }
    virtual size_t max_output_len() const { return 16; }
    virtual std::set<std::string> vocabulary(const std::string& question,
                                             const std::string& context) = 0;
    virtual std::map<std::string, double> score_next(const std::string& question,
                                                     const std::string& context,
                                                     const std::vector<std::string>& prefix) = 0;
};

// Deterministic bigram copy-reader over the context token stream; continues
// the most frequent path through the context and stops where it runs out.
class StubCopyReader : public ReaderModel {
public:
    explicit StubCopyReader(size_t max_len = 16) : max_len_(max_len) {}
    const std::string& name() const override { return name_; }
    size_t max_output_len() const override { return max_len_; }
    std::set<std::string> vocabulary(const std::string& question,
                                     const std::string& context) override;
    std::map<std::string, double> score_next(const std::string& question,
                                             const std::string& context,
                                             const std::vector<std::string>& prefix) override;

private:
    size_t max_len_;
    std::string name_ = "stub-copy";
};

// Adapter for an external reader: POST <endpoint>/score with
// {"question","context","prefix"} returning {"scores": {token: score, ...}}.
class HttpReader : public ReaderModel {
public:
    HttpReader(std::string endpoint, size_t max_len = 16);
    const std::string& name() const override { return name_; }
    size_t max_output_len() const override { return max_len_; }
    std::set<std::string> vocabulary(const std::string& question,
                                     const std::string& context) override;
    std::map<std::string, double> score_next(const std::string& question,
                                             const std::string& context,
                                             const std::vector<std::string>& prefix) override;

private:
    std::string endpoint_;
    size_t max_len_;
    std::string name_ = "http-reader";
};

// Grid beam search with banks by number of distinct keywords satisfied. The
// final answer contains at least one keyword; among finished hypotheses the
// search prefers higher constraint count, then higher mean token score, then
// lexicographically smaller text. Throws a constraint error when no keyword is
// in the reader vocabulary or no constrained hypothesis finishes.
std::string constrained_decode(ReaderModel& reader, const std::string& question,
                               const std::string& context, const KeywordSet& keywords,
                               size_t beam_width);

// Sentence boundaries after . ! ? followed by whitespace (or end of text).
std::vector<std::string> split_sentences(const std::string& text);

// Deterministic extractive reader: the sentence covering the most distinct
// keywords wins; ties prefer lower evidence rank, then earlier sentence. With
// no keyword hit anywhere, the first sentence of the top-ranked evidence is
// returned and *keyword_hit is set false.
std::string extractive_read(const std::vector<std::string>& evidence_texts,
                            const KeywordSet& keywords, bool* keyword_hit = nullptr);

struct Explanation {
    std::string user_id;
    std::string item_id;
    std::string text;
    std::string polarity;  // "positive" | "negative"
    KeywordSet keywords;
    std::vector<uint64_t> evidence;
    double predicted_rating = 0.0;  // clamped to the corpus rating range
    double adjustment = 0.0;
    std::string reader_name;
    std::string prompt;
    bool keyword_hit = true;
    bool used_extractive_fallback = false;
};

struct ExplainConfig {
    size_t evidence_k = 5;
    RetrievalScope scope = RetrievalScope::item;
    MarginalizeConfig marginalize;
    size_t keyword_k = 5;
    bool query_only_keywords = false;
    size_t beam_width = 4;
    size_t context_token_budget = 128;
};

// Reader context: evidence texts concatenated in rank order, truncated at the
// token budget (never dropping the top-ranked text).
std::string build_reader_context(const std::vector<std::string>& evidence_texts,
                                 size_t token_budget);

// Full pipeline: forward -> rating/polarity -> marginalized retrieval ->
// keyword estimation -> prompt -> constrained decode with extractive fallback.
// reader == nullptr selects the extractive reader directly; fallback_estimator
// (when given) absorbs estimator backend failures.
Explanation explain(const RetrieverModel& model, const Corpus& corpus,
                    const EmbeddingStore& store, KeywordEstimator& estimator,
                    ReaderModel* reader, const std::string& user_id, const std::string& item_id,
                    const ExplainConfig& cfg, KeywordEstimator* fallback_estimator = nullptr);

std::string explanation_json(const Explanation& e);

struct ExportResult {
    uint64_t written = 0;
    uint64_t skipped = 0;
};

// JSONL rows {question, context, keywords, constrained_output, rephrased:null}
// over seeded-sampled test pairs, for offline rephrasing and external reader
// fine-tuning. Deterministic per seed.
ExportResult export_finetune_set(const RetrieverModel& model, const Corpus& corpus,
                                 const EmbeddingStore& store, KeywordEstimator& estimator,
                                 ReaderModel* reader, const ExplainConfig& cfg,
                                 uint64_t n_samples, uint64_t seed, std::ostream& out);

}  // namespace prag
