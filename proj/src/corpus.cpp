#include "prag/corpus.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <istream>
#include <set>
#include <sstream>

#include <json.hpp>

#include "prag/error.hpp"
#include "prag/io.hpp"
#include "prag/rng.hpp"

namespace prag {

using nlohmann::json;

const char* split_name(Split s) {
    switch (s) {
        case Split::train: return "train";
        case Split::val: return "val";
        case Split::test: return "test";
    }
    return "train";
}

std::optional<Split> parse_split(const std::string& s) {
    if (s == "train") return Split::train;
    if (s == "val") return Split::val;
    if (s == "test") return Split::test;
    return std::nullopt;
}

const ReviewRecord& Corpus::record(uint64_t review_id) const {
    if (review_id >= records_.size())
        throw Error::validation("unknown review_id " + std::to_string(review_id));
    return records_[review_id];
}

std::vector<uint64_t> Corpus::review_ids(Split split) const {
    std::vector<uint64_t> out;
    for (const auto& r : records_)
        if (r.split == split) out.push_back(r.review_id);
    return out;
}

std::vector<std::string> Corpus::entity_ids(Split split, bool users) const {
    std::set<std::string> set;
    for (const auto& r : records_)
        if (r.split == split) set.insert(users ? r.user_id : r.item_id);
    return {set.begin(), set.end()};
}

Corpus Corpus::from_records(std::vector<ReviewRecord> records,
                            std::pair<double, double> rating_range, CorpusMeta meta) {
    Corpus c;
    c.rating_range_ = rating_range;
    c.meta_ = meta;

    std::set<std::tuple<std::string, std::string, Split>> seen_pairs;
    for (size_t i = 0; i < records.size(); ++i) {
        auto& r = records[i];
        if (r.review_id != i)
            throw Error::validation("review_id must be dense 0..n-1 in record order");
        if (r.rating < rating_range.first || r.rating > rating_range.second)
            throw Error::validation("rating out of range for review " + std::to_string(i) +
                                    " (user=" + r.user_id + ", item=" + r.item_id + ")");
        auto key = std::make_tuple(r.user_id, r.item_id, r.split);
        if (!seen_pairs.insert(key).second)
            throw Error::validation("duplicate user-item pair in split: user=" + r.user_id +
                                    " item=" + r.item_id + " split=" + split_name(r.split));
        c.user_index_[r.user_id].push_back(r.review_id);
        c.item_index_[r.item_id].push_back(r.review_id);
    }
    c.records_ = std::move(records);

    // Items reaching test must be covered by train (split_corpus repairs this;
    // explicitly-labeled input has to arrive consistent).
    std::set<std::string> train_items;
    for (const auto& r : c.records_)
        if (r.split == Split::train) train_items.insert(r.item_id);
    for (const auto& r : c.records_)
        if (r.split == Split::test && !train_items.count(r.item_id))
            throw Error::validation("item '" + r.item_id +
                                    "' appears in test but has no train record");
    return c;
}

Corpus ingest_jsonl(std::istream& in, std::pair<double, double> rating_range) {
    if (rating_range.first > rating_range.second)
        throw Error::validation("rating range inverted");
    std::vector<ReviewRecord> records;
    CorpusMeta meta;
    std::string line;
    size_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line.find_first_not_of(" \t") == std::string::npos) continue;

        json obj = json::parse(line, nullptr, false);
        if (obj.is_discarded() || !obj.is_object())
            throw Error::validation("malformed JSON at line " + std::to_string(line_no));

        std::vector<std::string> missing;
        for (const char* key : {"user", "item", "rating", "text"})
            if (!obj.contains(key)) missing.emplace_back(key);
        if (!missing.empty()) {
            std::string keys;
            for (size_t i = 0; i < missing.size(); ++i)
                keys += (i ? ", " : "") + missing[i];
            throw Error::validation("line " + std::to_string(line_no) +
                                    ": missing keys: " + keys);
        }
        if (!obj["rating"].is_number())
            throw Error::validation("line " + std::to_string(line_no) + ": rating not numeric");

        ReviewRecord r;
        r.user_id = obj["user"].get<std::string>();
        r.item_id = obj["item"].get<std::string>();
        r.rating = obj["rating"].get<double>();
        r.text = obj["text"].get<std::string>();
        if (obj.contains("split")) {
            auto s = parse_split(obj["split"].get<std::string>());
            if (!s)
                throw Error::validation("line " + std::to_string(line_no) +
                                        ": unknown split '" + obj["split"].get<std::string>() + "'");
            r.split = *s;
            meta.has_explicit_splits = true;
        }
        if (r.rating < rating_range.first || r.rating > rating_range.second)
            throw Error::validation("line " + std::to_string(line_no) + ": rating " +
                                    std::to_string(r.rating) + " outside range (user=" +
                                    r.user_id + ", item=" + r.item_id + ")");

        bool all_ws = r.text.find_first_not_of(" \t\r\n") == std::string::npos;
        if (all_ws) {
            ++meta.skipped_empty;
            continue;
        }
        r.review_id = records.size();
        records.push_back(std::move(r));
    }
    return Corpus::from_records(std::move(records), rating_range, meta);
}

Corpus split_corpus(const Corpus& corpus, double train_ratio, double val_ratio,
                    double test_ratio, uint64_t seed, bool override_existing) {
    if (std::abs(train_ratio + val_ratio + test_ratio - 1.0) > 1e-9)
        throw Error::validation("split ratios must sum to 1");
    if (train_ratio < 0 || val_ratio < 0 || test_ratio < 0)
        throw Error::validation("split ratios must be non-negative");
    if (corpus.meta().has_explicit_splits && !override_existing)
        throw Error::validation("corpus already has split labels (pass override to relabel)");

    const size_t n = corpus.records().size();
    if (n == 0) throw Error::validation("cannot split an empty corpus");

    std::vector<size_t> order(n);
    for (size_t i = 0; i < n; ++i) order[i] = i;
    Rng rng = Rng::substream(seed, "split");
    rng.shuffle(order);

    size_t n_val = static_cast<size_t>(std::floor(static_cast<double>(n) * val_ratio));
    size_t n_test = static_cast<size_t>(std::floor(static_cast<double>(n) * test_ratio));

    std::vector<ReviewRecord> records = corpus.records();
    for (size_t pos = 0; pos < n; ++pos) {
        Split s = Split::train;
        if (pos < n_test) s = Split::test;
        else if (pos < n_test + n_val) s = Split::val;
        records[order[pos]].split = s;
    }

    // Item coverage: any item with val/test records but no train record gets
    // its lowest-id non-train record reassigned to train.
    CorpusMeta meta = corpus.meta();
    meta.has_explicit_splits = true;
    meta.forced_to_train = 0;
    std::map<std::string, std::vector<uint64_t>> by_item;
    for (const auto& r : records) by_item[r.item_id].push_back(r.review_id);
    for (auto& [item, ids] : by_item) {
        bool has_train = false;
        for (uint64_t id : ids)
            if (records[id].split == Split::train) { has_train = true; break; }
        if (!has_train) {
            records[ids.front()].split = Split::train;
            ++meta.forced_to_train;
        }
    }
    return Corpus::from_records(std::move(records), corpus.rating_range(), meta);
}

CorpusStats compute_tfidf_stats(const Corpus& corpus, const StopwordSet& stopwords) {
    CorpusStats stats;
    for (const auto& r : corpus.records()) {
        if (r.split != Split::train) continue;
        ++stats.n_docs;
        std::set<std::string> distinct;
        for (auto& t : content_tokens(r.text, stopwords)) distinct.insert(std::move(t));
        for (const auto& t : distinct) ++stats.df[t];
    }
    if (stats.n_docs == 0) throw Error::validation("empty train split: no documents for tf-idf");
    const double n = static_cast<double>(stats.n_docs);
    for (const auto& [tok, df] : stats.df)
        stats.idf[tok] = std::log((1.0 + n) / (1.0 + static_cast<double>(df))) + 1.0;
    stats.idf_unseen = std::log(1.0 + n) + 1.0;
    return stats;
}

KeywordSet top_k_tfidf(const std::string& text, const CorpusStats& stats, size_t k,
                       const StopwordSet& stopwords) {
    if (k < 1) throw Error::validation("top_k_tfidf requires k >= 1");
    std::map<std::string, uint64_t> tf;  // ordered for deterministic ties
    for (auto& t : content_tokens(text, stopwords)) ++tf[t];

    std::vector<std::pair<std::string, double>> scored;
    scored.reserve(tf.size());
    for (const auto& [tok, count] : tf) {
        auto it = stats.idf.find(tok);
        double idf = it != stats.idf.end() ? it->second : stats.idf_unseen;
        scored.emplace_back(tok, static_cast<double>(count) * idf);
    }
    std::stable_sort(scored.begin(), scored.end(), [](const auto& a, const auto& b) {
        if (a.second != b.second) return a.second > b.second;
        return a.first < b.first;
    });

    KeywordSet out;
    for (size_t i = 0; i < scored.size() && i < k; ++i)
        out.keywords.push_back(scored[i].first);
    return out;
}

RelatedReviews related_reviews(const Corpus& corpus, const std::string& user_id,
                               const std::string& item_id,
                               std::optional<uint64_t> exclude_review, size_t max_history) {
    auto gather = [&](const std::map<std::string, std::vector<uint64_t>>& index,
                      const std::string& id) {
        std::vector<uint64_t> out;
        auto it = index.find(id);
        if (it == index.end()) return out;
        for (uint64_t rid : it->second) {
            if (exclude_review && rid == *exclude_review) continue;
            if (corpus.record(rid).split != Split::train) continue;
            out.push_back(rid);
        }
        std::sort(out.begin(), out.end());
        // keep the max_history most recent (highest ids), stay ascending
        if (out.size() > max_history)
            out.erase(out.begin(), out.end() - static_cast<ptrdiff_t>(max_history));
        return out;
    };
    return {gather(corpus.user_index(), user_id), gather(corpus.item_index(), item_id)};
}

void save_corpus(const Corpus& corpus, const std::string& dir) {
    std::ostringstream lines;
    for (const auto& r : corpus.records()) {
        json obj;
        obj["user"] = r.user_id;
        obj["item"] = r.item_id;
        obj["rating"] = r.rating;
        obj["text"] = r.text;
        obj["split"] = split_name(r.split);
        lines << obj.dump() << "\n";
    }
    json meta;
    meta["rating_range"] = {corpus.rating_range().first, corpus.rating_range().second};
    meta["n_records"] = corpus.records().size();
    meta["skipped_empty"] = corpus.meta().skipped_empty;
    meta["forced_to_train"] = corpus.meta().forced_to_train;
    meta["has_explicit_splits"] = corpus.meta().has_explicit_splits;
    write_text_file(dir + "/records.jsonl", lines.str());
    write_text_file(dir + "/meta.json", meta.dump(2) + "\n");
}

Corpus load_corpus(const std::string& dir) {
    if (!path_exists(dir + "/records.jsonl") || !path_exists(dir + "/meta.json"))
        throw Error::missing("corpus directory incomplete: " + dir);
    json meta = json::parse(read_text_file(dir + "/meta.json"));
    std::pair<double, double> range{meta["rating_range"][0].get<double>(),
                                    meta["rating_range"][1].get<double>()};
    std::istringstream in(read_text_file(dir + "/records.jsonl"));
    Corpus c = ingest_jsonl(in, range);
    CorpusMeta m = c.meta();
    m.skipped_empty = meta["skipped_empty"].get<uint64_t>();
    m.forced_to_train = meta["forced_to_train"].get<uint64_t>();
    m.has_explicit_splits = meta["has_explicit_splits"].get<bool>();
    c.meta() = m;
    return c;
}

}  // namespace prag
