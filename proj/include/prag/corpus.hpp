#pragma once

#include <cstdint>
#include <iosfwd>
#include <map>
#include <optional>
#include <string>
#include <unordered_map>
#include <vector>

#include "prag/tokenize.hpp"

namespace prag {

enum class Split { train, val, test };

const char* split_name(Split s);
std::optional<Split> parse_split(const std::string& s);

struct ReviewRecord {
    uint64_t review_id = 0;
    std::string user_id;
    std::string item_id;
    double rating = 0.0;
    std::string text;
    Split split = Split::train;
};

struct CorpusMeta {
    uint64_t skipped_empty = 0;     // empty-text lines dropped at ingest
    uint64_t forced_to_train = 0;   // split reassignments for item coverage
    bool has_explicit_splits = false;
};

class Corpus {
public:
    Corpus() = default;

    const std::vector<ReviewRecord>& records() const { return records_; }
    const ReviewRecord& record(uint64_t review_id) const;
    std::pair<double, double> rating_range() const { return rating_range_; }
    const CorpusMeta& meta() const { return meta_; }
    CorpusMeta& meta() { return meta_; }

    // review ids per entity, ascending, across all splits
    const std::map<std::string, std::vector<uint64_t>>& user_index() const { return user_index_; }
    const std::map<std::string, std::vector<uint64_t>>& item_index() const { return item_index_; }

    std::vector<uint64_t> review_ids(Split split) const;
    std::vector<std::string> entity_ids(Split split, bool users) const;

    // Builder used by ingest/split/synth. Validates invariants.
    static Corpus from_records(std::vector<ReviewRecord> records,
                               std::pair<double, double> rating_range,
                               CorpusMeta meta = {});

private:
    std::vector<ReviewRecord> records_;
    std::map<std::string, std::vector<uint64_t>> user_index_;
    std::map<std::string, std::vector<uint64_t>> item_index_;
    std::pair<double, double> rating_range_{1.0, 5.0};
    CorpusMeta meta_;
};

struct CorpusStats {
    std::unordered_map<std::string, uint64_t> df;    // train-split document frequency
    std::unordered_map<std::string, double> idf;     // smoothed: ln((1+N)/(1+df))+1
    uint64_t n_docs = 0;
    double idf_unseen = 0.0;                         // ln(1+N)+1
};

struct KeywordSet {
    std::vector<std::string> keywords;  // descending tf-idf, ties lexicographic

    bool empty() const { return keywords.empty(); }
};

// One JSON object per line: {"user","item","rating","text"[,"split"]}.
// review_id is assigned 0..n-1 in input order. Empty-text lines are skipped
// and counted in meta. Malformed lines raise a validation error naming the
// line number.
Corpus ingest_jsonl(std::istream& in, std::pair<double, double> rating_range);

// Deterministic relabeling train/val/test. Every item with a val/test record
// keeps at least one train record; violating records are reassigned (counted
// in meta.forced_to_train).
Corpus split_corpus(const Corpus& corpus, double train_ratio, double val_ratio,
                    double test_ratio, uint64_t seed, bool override_existing = false);

CorpusStats compute_tfidf_stats(const Corpus& corpus,
                                const StopwordSet& stopwords = default_stopwords());

KeywordSet top_k_tfidf(const std::string& text, const CorpusStats& stats, size_t k,
                       const StopwordSet& stopwords = default_stopwords());

struct RelatedReviews {
    std::vector<uint64_t> user_history;  // ascending review_id, train split only
    std::vector<uint64_t> item_history;
};

RelatedReviews related_reviews(const Corpus& corpus, const std::string& user_id,
                               const std::string& item_id,
                               std::optional<uint64_t> exclude_review = std::nullopt,
                               size_t max_history = 20);

// Corpus directory persistence: <dir>/records.jsonl + <dir>/meta.json.
void save_corpus(const Corpus& corpus, const std::string& dir);
Corpus load_corpus(const std::string& dir);

}  // namespace prag
