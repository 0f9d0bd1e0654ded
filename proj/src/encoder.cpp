#include "prag/encoder.hpp"

#include <algorithm>
#include <cmath>
#include <cstdlib>
#include <cstring>
#include <fstream>

#include <httplib.h>
#include <json.hpp>

#include "prag/error.hpp"
#include "prag/io.hpp"

namespace prag {

using nlohmann::json;

ToyHashEncoder::ToyHashEncoder(uint32_t dim, uint64_t seed) : dim_(dim), seed_(seed) {
    if (dim < 2) throw Error::validation("toy encoder requires dim >= 2");
    name_ = "toy-hash-d" + std::to_string(dim) + "-s" + std::to_string(seed);
}

std::vector<float> toy_hash_encode(const std::string& text, uint32_t dim, uint64_t seed) {
    if (dim < 2) throw Error::validation("toy_hash_encode requires dim >= 2");
    std::vector<double> acc(dim, 0.0);
    for (const auto& tok : tokenize(text)) {
        uint64_t h = fnv1a64(tok, 0x9e3779b97f4a7c15ull ^ seed);
        size_t idx = static_cast<size_t>(h % dim);
        double sign = (h >> 32) & 1 ? 1.0 : -1.0;
        acc[idx] += sign;
    }
    double norm = 0.0;
    for (double v : acc) norm += v * v;
    std::vector<float> out(dim, 0.0f);
    if (norm == 0.0) {
        out[0] = 1.0f;
    } else {
        norm = std::sqrt(norm);
        for (uint32_t i = 0; i < dim; ++i) out[i] = static_cast<float>(acc[i] / norm);
    }
    return out;
}

std::vector<float> ToyHashEncoder::encode(const std::string& text) {
    if (text.empty()) throw Error::validation("encode requires non-empty text");
    return toy_hash_encode(text, dim_, seed_);
}

HttpEncoder::HttpEncoder(uint32_t dim, std::string endpoint, std::string name)
    : dim_(dim), endpoint_(std::move(endpoint)), name_(std::move(name)) {
    if (endpoint_.empty()) {
        const char* env = std::getenv("PRAG_ENCODER_ENDPOINT");
        if (env) endpoint_ = env;
    }
    if (endpoint_.empty())
        throw Error::validation("http encoder needs an endpoint (PRAG_ENCODER_ENDPOINT)");
}

std::vector<float> HttpEncoder::encode(const std::string& text) {
    if (text.empty()) throw Error::validation("encode requires non-empty text");
    uint64_t key = fnv1a64(text, fnv1a64(name_));
    if (auto it = cache_.find(key); it != cache_.end()) return it->second;

    httplib::Client client(endpoint_);
    client.set_connection_timeout(5);
    client.set_read_timeout(30);
    json req;
    req["texts"] = {text};
    auto res = client.Post("/encode", req.dump(), "application/json");
    if (!res || res->status != 200)
        throw Error::backend("encoder endpoint unreachable or returned error: " + endpoint_);
    json body = json::parse(res->body, nullptr, false);
    if (body.is_discarded() || !body.contains("vectors") || body["vectors"].size() != 1)
        throw Error::backend("encoder endpoint returned malformed response");
    std::vector<float> v = body["vectors"][0].get<std::vector<float>>();
    if (v.size() != dim_)
        throw Error::backend("encoder returned dim " + std::to_string(v.size()) +
                             ", expected " + std::to_string(dim_));
    for (float x : v)
        if (!std::isfinite(x)) throw Error::backend("encoder returned non-finite value");
    cache_.emplace(key, v);
    return v;
}

const float* EmbeddingStore::vector(uint64_t review_id) const {
    auto it = index_.find(review_id);
    if (it == index_.end())
        throw Error::validation("review " + std::to_string(review_id) + " not in store");
    return flat_.data() + it->second * dim_;
}

std::vector<double> EmbeddingStore::vector_f64(uint64_t review_id) const {
    const float* p = vector(review_id);
    return {p, p + dim_};
}

void EmbeddingStore::put(uint64_t review_id, const std::vector<float>& v) {
    if (v.size() != dim_) throw Error::validation("vector length != store dim");
    for (float x : v)
        if (!std::isfinite(x)) throw Error::validation("non-finite embedding value");
    if (index_.count(review_id))
        throw Error::validation("duplicate review_id in store: " + std::to_string(review_id));
    index_[review_id] = ids_.size();
    ids_.push_back(review_id);
    flat_.insert(flat_.end(), v.begin(), v.end());
}

namespace {
constexpr char kStoreMagic[4] = {'P', 'R', 'G', 'E'};
constexpr uint32_t kStoreVersion = 1;
}  // namespace

void EmbeddingStore::save(const std::string& path) const {
    ensure_parent_dir(path);
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw Error::runtime("cannot write store: " + path);
    out.write(kStoreMagic, 4);
    put_u32(out, kStoreVersion);
    put_u32(out, dim_);
    put_u64(out, ids_.size());
    put_lp_string(out, backend_name_);

    // rows sorted by review_id for byte-stable output
    std::vector<uint64_t> sorted = ids_;
    std::sort(sorted.begin(), sorted.end());
    for (uint64_t id : sorted) {
        put_u64(out, id);
        const float* v = flat_.data() + index_.at(id) * dim_;
        out.write(reinterpret_cast<const char*>(v),
                  static_cast<std::streamsize>(sizeof(float) * dim_));
    }
    if (!out) throw Error::runtime("short write: " + path);
}

EmbeddingStore EmbeddingStore::load(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw Error::missing("cannot open store: " + path);
    char magic[4];
    in.read(magic, 4);
    if (!in || std::memcmp(magic, kStoreMagic, 4) != 0)
        throw Error::runtime("not an embedding store file: " + path);
    uint32_t version = get_u32(in);
    if (version != kStoreVersion)
        throw Error::runtime("unsupported store version " + std::to_string(version));
    uint32_t dim = get_u32(in);
    uint64_t count = get_u64(in);
    std::string backend = get_lp_string(in);

    EmbeddingStore store(dim, backend);
    std::vector<float> row(dim);
    for (uint64_t i = 0; i < count; ++i) {
        uint64_t id = get_u64(in);
        in.read(reinterpret_cast<char*>(row.data()),
                static_cast<std::streamsize>(sizeof(float) * dim));
        if (!in) throw Error::runtime("unexpected end of file (truncated or corrupt)");
        store.put(id, row);
    }
    return store;
}

EmbeddingStore embed_corpus(const Corpus& corpus, EncoderBackend& backend) {
    if (corpus.records().empty()) throw Error::validation("cannot embed an empty corpus");
    EmbeddingStore store(backend.dim(), backend.name());
    for (const auto& r : corpus.records()) {
        try {
            store.put(r.review_id, backend.encode(r.text));
        } catch (const Error& e) {
            if (e.kind() == ErrorKind::backend)
                throw Error::backend("encoding review " + std::to_string(r.review_id) +
                                     " failed: " + e.what());
            throw Error::runtime("encoding review " + std::to_string(r.review_id) +
                                 " failed: " + e.what());
        }
    }
    return store;
}

double cosine(const std::vector<double>& a, const std::vector<double>& b) {
    if (a.size() != b.size()) throw Error::validation("cosine: length mismatch");
    double dot = 0.0, na = 0.0, nb = 0.0;
    for (size_t i = 0; i < a.size(); ++i) {
        dot += a[i] * b[i];
        na += a[i] * a[i];
        nb += b[i] * b[i];
    }
    if (na == 0.0 || nb == 0.0) return 0.0;
    return dot / (std::sqrt(na) * std::sqrt(nb));
}

std::vector<ScoredReview> cosine_topk(const EmbeddingStore& store,
                                      const std::vector<double>& query,
                                      const std::vector<uint64_t>& candidates, size_t k) {
    if (query.size() != store.dim())
        throw Error::validation("query length != store dim");
    if (k < 1) throw Error::validation("cosine_topk requires k >= 1");

    double qnorm = 0.0;
    for (double v : query) qnorm += v * v;
    qnorm = std::sqrt(qnorm);

    std::vector<ScoredReview> scored;
    scored.reserve(candidates.size());
    for (uint64_t id : candidates) {
        const float* v = store.vector(id);
        double dot = 0.0, vn = 0.0;
        for (uint32_t i = 0; i < store.dim(); ++i) {
            dot += query[i] * static_cast<double>(v[i]);
            vn += static_cast<double>(v[i]) * static_cast<double>(v[i]);
        }
        double c = (qnorm == 0.0 || vn == 0.0) ? 0.0 : dot / (qnorm * std::sqrt(vn));
        scored.push_back({id, c});
    }
    std::sort(scored.begin(), scored.end(), [](const ScoredReview& a, const ScoredReview& b) {
        if (a.cosine != b.cosine) return a.cosine > b.cosine;
        return a.review_id < b.review_id;
    });
    if (scored.size() > k) scored.resize(k);
    return scored;
}

}  // namespace prag
