#include "prag/retrieval.hpp"

#include <algorithm>
#include <set>

#include <json.hpp>

#include "prag/error.hpp"
#include "prag/rng.hpp"

namespace prag {

using nlohmann::json;

const char* scope_name(RetrievalScope s) {
    return s == RetrievalScope::item ? "item" : "global";
}

std::optional<RetrievalScope> parse_scope(const std::string& s) {
    if (s == "item") return RetrievalScope::item;
    if (s == "global") return RetrievalScope::global;
    return std::nullopt;
}

ForwardOutput forward_pair(const RetrieverModel& model, const Corpus& corpus,
                           const EmbeddingStore& store, const std::string& user_id,
                           const std::string& item_id) {
    auto related = related_reviews(corpus, user_id, item_id, std::nullopt,
                                   model.config().max_history);
    auto rows = RetrieverModel::make_rows(related.user_history, related.item_history);
    return model.forward(rows, user_id, item_id, store);
}

std::vector<double> marginalize(const LatentQuery& q, const std::vector<LatentQuery>& batch) {
    if (batch.empty()) throw Error::validation("marginalization batch is empty");
    std::vector<double> out = q.values;
    const double inv = 1.0 / static_cast<double>(batch.size());
    for (const auto& b : batch) {
        if (b.values.size() != out.size())
            throw Error::validation("marginalization batch dimension mismatch");
        for (size_t i = 0; i < out.size(); ++i) out[i] -= inv * b.values[i];
    }
    return out;
}

std::vector<LatentQuery> sample_marginalization_batch(const RetrieverModel& model,
                                                      const Corpus& corpus,
                                                      const EmbeddingStore& store,
                                                      const std::string& anchor_user,
                                                      const std::string& anchor_item,
                                                      TieAxis axis, uint32_t size,
                                                      uint64_t seed) {
    if (size < 1) throw Error::validation("marginalization batch size must be >= 1");
    const bool over_users = axis == TieAxis::user;
    std::vector<std::string> eligible;
    for (const auto& id : corpus.entity_ids(Split::train, over_users)) {
        const std::string& u = over_users ? id : anchor_user;
        const std::string& i = over_users ? anchor_item : id;
        auto related = related_reviews(corpus, u, i, std::nullopt, model.config().max_history);
        if (!related.user_history.empty() || !related.item_history.empty())
            eligible.push_back(id);
    }
    if (eligible.empty())
        throw Error::validation(std::string("no ") + (over_users ? "user" : "item") +
                                " on the marginalization axis has evidence");

    Rng rng = Rng::substream(seed, "marginalize");
    auto picks = rng.sample_indices(eligible.size(), size);

    std::vector<LatentQuery> batch;
    batch.reserve(size);
    for (size_t idx : picks) {
        const std::string& u = over_users ? eligible[idx] : anchor_user;
        const std::string& i = over_users ? anchor_item : eligible[idx];
        batch.push_back(forward_pair(model, corpus, store, u, i).query);
    }
    return batch;
}

std::vector<uint64_t> candidate_scope(const Corpus& corpus, const std::string& item_id,
                                      RetrievalScope scope) {
    if (scope == RetrievalScope::global) return corpus.review_ids(Split::train);
    std::vector<uint64_t> out;
    auto it = corpus.item_index().find(item_id);
    if (it == corpus.item_index().end()) return out;
    for (uint64_t id : it->second)
        if (corpus.record(id).split == Split::train) out.push_back(id);
    return out;
}

RetrievalResult retrieve_with_query(const RetrieverModel& model, const Corpus& corpus,
                                    const EmbeddingStore& store, const std::string& user_id,
                                    const std::string& item_id, std::vector<double> query,
                                    size_t k, RetrievalScope scope,
                                    const MarginalizeConfig& mcfg) {
    if (store.dim() != model.config().dim)
        throw Error::validation("store dim != checkpoint dim");
    RetrievalResult result;
    result.query_user = user_id;
    result.query_item = item_id;

    if (mcfg.enabled) {
        TieAxis axis = mcfg.axis.value_or(model.config().tie_axis);
        LatentQuery q{std::move(query), user_id, item_id};
        auto batch = sample_marginalization_batch(model, corpus, store, user_id, item_id, axis,
                                                  mcfg.batch_size, mcfg.seed);
        query = marginalize(q, batch);
        result.marginalized = true;
        result.batch_size = static_cast<uint32_t>(batch.size());
    }

    auto candidates = candidate_scope(corpus, item_id, scope);
    if (candidates.empty()) {
        result.empty_scope = true;
        return result;
    }
    result.evidence = cosine_topk(store, query, candidates, k);
    return result;
}

RetrievalResult retrieve(const RetrieverModel& model, const Corpus& corpus,
                         const EmbeddingStore& store, const std::string& user_id,
                         const std::string& item_id, size_t k, RetrievalScope scope,
                         const MarginalizeConfig& mcfg) {
    ForwardOutput out = forward_pair(model, corpus, store, user_id, item_id);
    return retrieve_with_query(model, corpus, store, user_id, item_id,
                               std::move(out.query.values), k, scope, mcfg);
}

std::string retrieval_result_json(const RetrievalResult& r) {
    json j;
    j["user"] = r.query_user;
    j["item"] = r.query_item;
    j["marginalized"] = r.marginalized;
    j["batch_size"] = r.batch_size;
    j["empty_scope"] = r.empty_scope;
    json ev = json::array();
    for (const auto& s : r.evidence) ev.push_back({{"review_id", s.review_id}, {"cosine", s.cosine}});
    j["evidence"] = ev;
    return j.dump(2) + "\n";
}

AgreementReport agreement_at_k(const RetrieverModel& model_a, const MarginalizeConfig& mcfg_a,
                               const RetrieverModel& model_b, const MarginalizeConfig& mcfg_b,
                               const Corpus& corpus, const EmbeddingStore& store,
                               const std::vector<std::pair<std::string, std::string>>& pairs,
                               size_t k, RetrievalScope scope, uint64_t seed) {
    if (pairs.empty()) throw Error::validation("agreement needs at least one pair");
    if (model_a.config().dim != model_b.config().dim)
        throw Error::validation("models disagree on embedding dim");

    AgreementReport report;
    double overlap_sum = 0.0;
    double random_sum = 0.0;
    uint64_t pair_index = 0;
    for (const auto& [user, item] : pairs) {
        ++pair_index;
        RetrievalResult ra, rb;
        try {
            ra = retrieve(model_a, corpus, store, user, item, k, scope, mcfg_a);
            rb = retrieve(model_b, corpus, store, user, item, k, scope, mcfg_b);
        } catch (const Error&) {
            ++report.skipped;
            continue;
        }
        if (ra.evidence.empty() || rb.evidence.empty()) {
            ++report.skipped;
            continue;
        }
        std::set<uint64_t> seen;
        for (const auto& s : ra.evidence) seen.insert(s.review_id);
        size_t overlap = 0;
        for (const auto& s : rb.evidence)
            if (seen.count(s.review_id)) ++overlap;
        overlap_sum += static_cast<double>(overlap);

        // random baseline: two independent k-subsets of the same scope
        auto candidates = candidate_scope(corpus, item, scope);
        size_t kk = std::min(k, candidates.size());
        Rng rng = Rng::substream(seed, "agreement", pair_index);
        auto pick_a = rng.sample_indices(candidates.size(), kk);
        auto pick_b = rng.sample_indices(candidates.size(), kk);
        std::set<size_t> sa(pick_a.begin(), pick_a.end());
        size_t roverlap = 0;
        for (size_t p : pick_b)
            if (sa.count(p)) ++roverlap;
        random_sum += static_cast<double>(roverlap);
        ++report.n_pairs;
    }
    if (report.n_pairs > 0) {
        report.mean = overlap_sum / static_cast<double>(report.n_pairs);
        report.random_baseline = random_sum / static_cast<double>(report.n_pairs);
    }
    return report;
}

std::string agreement_report_json(const AgreementReport& r) {
    json j;
    j["mean"] = r.mean;
    j["random_baseline"] = r.random_baseline;
    j["n_pairs"] = r.n_pairs;
    j["skipped"] = r.skipped;
    return j.dump(2) + "\n";
}

}  // namespace prag
