#pragma once

#include <cstdint>
#include <memory>
#include <string>
#include <unordered_map>
#include <vector>

#include "prag/corpus.hpp"

namespace prag {

// Sentence-embedding backend. encode() must be pure: identical text yields
// bitwise-identical vectors within one process; output length dim(), finite.
class EncoderBackend {
public:
    virtual ~EncoderBackend() = default;
    virtual uint32_t dim() const = 0;
    virtual const std::string& name() const = 0;
    virtual std::vector<float> encode(const std::string& text) = 0;
};

// Deterministic hashing encoder standing in for a pretrained sentence model.
// Tokens are hashed (with the seed) to an index and a sign; the accumulated
// sign vector is L2-normalized. All-zero accumulation maps to e0.
class ToyHashEncoder : public EncoderBackend {
public:
    ToyHashEncoder(uint32_t dim, uint64_t seed);
    uint32_t dim() const override { return dim_; }
    const std::string& name() const override { return name_; }
    std::vector<float> encode(const std::string& text) override;

private:
    uint32_t dim_;
    uint64_t seed_;
    std::string name_;
};

// Adapter for an external encoder service. Protocol: POST <endpoint>/encode
// with {"texts": [...]} returning {"vectors": [[...], ...]}. Responses are
// cached by (backend name, text hash) so encode stays pure across calls.
class HttpEncoder : public EncoderBackend {
public:
    // endpoint like "http://127.0.0.1:8080"; empty -> read PRAG_ENCODER_ENDPOINT
    HttpEncoder(uint32_t dim, std::string endpoint, std::string name = "http");
    uint32_t dim() const override { return dim_; }
    const std::string& name() const override { return name_; }
    std::vector<float> encode(const std::string& text) override;

private:
    uint32_t dim_;
    std::string endpoint_;
    std::string name_;
    std::unordered_map<uint64_t, std::vector<float>> cache_;
};

std::vector<float> toy_hash_encode(const std::string& text, uint32_t dim, uint64_t seed);

// review_id -> d-dimensional f32 vector, plus cosine top-k scan.
class EmbeddingStore {
public:
    EmbeddingStore() = default;
    EmbeddingStore(uint32_t dim, std::string backend_name)
        : dim_(dim), backend_name_(std::move(backend_name)) {}

    uint32_t dim() const { return dim_; }
    const std::string& backend_name() const { return backend_name_; }
    size_t size() const { return ids_.size(); }
    const std::vector<uint64_t>& ids() const { return ids_; }  // ascending

    bool contains(uint64_t review_id) const { return index_.count(review_id) != 0; }
    const float* vector(uint64_t review_id) const;
    std::vector<double> vector_f64(uint64_t review_id) const;

    void put(uint64_t review_id, const std::vector<float>& v);

    void save(const std::string& path) const;
    static EmbeddingStore load(const std::string& path);

private:
    uint32_t dim_ = 0;
    std::string backend_name_;
    std::vector<uint64_t> ids_;
    std::vector<float> flat_;                        // ids_ order
    std::unordered_map<uint64_t, size_t> index_;     // review_id -> row
};

// One vector per record across all splits. A single encode failure aborts
// with the failing review_id.
EmbeddingStore embed_corpus(const Corpus& corpus, EncoderBackend& backend);

struct ScoredReview {
    uint64_t review_id;
    double cosine;
};

// Exact scan over the candidate set, descending cosine, ties broken by
// ascending review_id. Zero-norm query or candidate scores 0 for that pair.
std::vector<ScoredReview> cosine_topk(const EmbeddingStore& store,
                                      const std::vector<double>& query,
                                      const std::vector<uint64_t>& candidates, size_t k);

double cosine(const std::vector<double>& a, const std::vector<double>& b);

}  // namespace prag
