#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "prag/corpus.hpp"
#include "prag/encoder.hpp"
#include "prag/model.hpp"

namespace prag {

struct MarginalizeConfig {
    bool enabled = true;
    std::optional<TieAxis> axis;  // unset -> follow the model's tie axis
    uint32_t batch_size = 32;
    uint64_t seed = 0;
};

enum class RetrievalScope { item, global };

const char* scope_name(RetrievalScope s);
std::optional<RetrievalScope> parse_scope(const std::string& s);

struct RetrievalResult {
    std::string query_user;
    std::string query_item;
    std::vector<ScoredReview> evidence;  // descending cosine, review_id tie-break
    bool marginalized = false;
    uint32_t batch_size = 0;
    bool empty_scope = false;  // warning flag: candidate scope was empty
};

// Inference-time forward pass for a pair: histories from the train split, no
// leave-one-out exclusion. Throws "no evidence for pair" when both histories
// are empty.
ForwardOutput forward_pair(const RetrieverModel& model, const Corpus& corpus,
                           const EmbeddingStore& store, const std::string& user_id,
                           const std::string& item_id);

// Q' = Q - mean(batch). No renormalization; cosine ranking absorbs scale.
std::vector<double> marginalize(const LatentQuery& q, const std::vector<LatentQuery>& batch);

// axis=user: fix the anchor item, sample users with evidence and compute their
// queries; axis=item: symmetric over items for the anchor user. Sampling is
// uniform without replacement when enough entities exist, else with
// replacement. Deterministic per seed.
std::vector<LatentQuery> sample_marginalization_batch(const RetrieverModel& model,
                                                      const Corpus& corpus,
                                                      const EmbeddingStore& store,
                                                      const std::string& anchor_user,
                                                      const std::string& anchor_item,
                                                      TieAxis axis, uint32_t size,
                                                      uint64_t seed);

std::vector<uint64_t> candidate_scope(const Corpus& corpus, const std::string& item_id,
                                      RetrievalScope scope);

RetrievalResult retrieve(const RetrieverModel& model, const Corpus& corpus,
                         const EmbeddingStore& store, const std::string& user_id,
                         const std::string& item_id, size_t k, RetrievalScope scope,
                         const MarginalizeConfig& mcfg);

// Same ranking path with an externally supplied query vector.
RetrievalResult retrieve_with_query(const RetrieverModel& model, const Corpus& corpus,
                                    const EmbeddingStore& store, const std::string& user_id,
                                    const std::string& item_id, std::vector<double> query,
                                    size_t k, RetrievalScope scope,
                                    const MarginalizeConfig& mcfg);

std::string retrieval_result_json(const RetrievalResult& r);

struct AgreementReport {
    double mean = 0.0;
    double random_baseline = 0.0;
    uint64_t n_pairs = 0;
    uint64_t skipped = 0;
};

// Mean |top-k(a) ∩ top-k(b)| over pairs, each model retrieving with its own
// marginalization config, plus the seeded random-subset baseline over the same
// candidate scopes. Pairs without evidence are skipped and counted.
AgreementReport agreement_at_k(const RetrieverModel& model_a, const MarginalizeConfig& mcfg_a,
                               const RetrieverModel& model_b, const MarginalizeConfig& mcfg_b,
                               const Corpus& corpus, const EmbeddingStore& store,
                               const std::vector<std::pair<std::string, std::string>>& pairs,
                               size_t k, RetrievalScope scope, uint64_t seed);

std::string agreement_report_json(const AgreementReport& r);

}  // namespace prag
