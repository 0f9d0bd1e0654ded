#pragma once

#include <cstdint>
#include <map>
#include <string>

#include "prag/corpus.hpp"
#include "prag/encoder.hpp"

namespace prag {

struct SynthConfig {
    uint32_t n_users = 40;
    uint32_t n_items = 20;
    uint32_t n_topics = 4;
    double noise = 0.1;  // embedding Gaussian noise sigma
    uint64_t seed = 0;
    uint32_t dim = 32;
    uint32_t reviews_per_user = 8;
    // Weight of the user-topic component mixed into each review embedding;
    // 0 reproduces pure item-topic centroids.
    double user_mix = 0.5;
    // Probability that a user's next review targets an item of their own
    // topic (selection bias); 0 samples items uniformly.
    double own_topic_bias = 0.6;
    double affinity = 0.0;  // rating bump when user and item topics match
    double bias_scale = 0.4;
    double rating_noise = 0.1;
    double mu = 3.0;
    bool clamp_ratings = true;
    double r_min = 1.0, r_max = 5.0;
    double train_ratio = 0.8, val_ratio = 0.1, test_ratio = 0.1;

    void validate() const;
};

struct SynthFixture {
    Corpus corpus;
    EmbeddingStore store;
    std::map<uint64_t, uint32_t> review_topic;  // ground-truth label = item topic
    std::map<std::string, uint32_t> user_topic;
    std::map<std::string, uint32_t> item_topic;
    std::map<std::string, double> user_bias;
    std::map<std::string, double> item_bias;

    std::string labels_json() const;
};

// Deterministic desk-scale corpus + store. Topics are assigned round-robin;
// review embedding = normalize(centroid(item topic) + user_mix * centroid(user
// topic)) + Gaussian noise, renormalized; rating = mu + b_u + b_i + affinity
// term + noise; text is a template carrying the topic's signature keywords.
SynthFixture generate_synthetic_fixture(const SynthConfig& cfg);

}  // namespace prag
