#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "prag/corpus.hpp"
#include "prag/encoder.hpp"
#include "prag/model.hpp"

namespace prag {

struct EpochLoss {
    uint32_t epoch;
    double l_retrieve;
    double l_rating;
    double total;
};

struct TrainMeta {
    uint64_t n_examples = 0;
    uint64_t degenerate_pairs = 0;  // pairs whose only evidence is the target itself
};

struct TrainResult {
    RetrieverModel model;
    std::vector<EpochLoss> history;
    TrainMeta meta;
};

// Joint training of the retriever and rating head: Adam over mean batch loss,
// leave-one-out histories, deterministic for a fixed seed. Aborts with
// epoch/step diagnostics if the loss goes non-finite.
TrainResult train(const Corpus& corpus, const EmbeddingStore& store, const TrainConfig& cfg);

std::string loss_history_csv(const std::vector<EpochLoss>& history);

struct GradCheckTensor {
    std::string name;
    double max_rel_err;
};

struct GradCheckReport {
    double max_rel_err = 0.0;
    std::vector<GradCheckTensor> per_tensor;
};

// Analytic gradients of the joint loss for one training example, keyed by
// tensor name.
std::map<std::string, Mat> analytic_gradients(const RetrieverModel& model, const Corpus& corpus,
                                              const EmbeddingStore& store, uint64_t review_id,
                                              double w_retrieve = 1.0, double w_rating = 1.0);

// Central finite differences (L(t+e) - L(t-e)) / 2e against the supplied
// analytic gradients; relative error per coordinate is
// |ga - gn| / max(|ga|, |gn|, 1e-8). Coordinates are sampled per tensor when
// the tensor is larger than samples_per_tensor.
GradCheckReport compare_with_finite_differences(RetrieverModel& model, const Corpus& corpus,
                                                const EmbeddingStore& store, uint64_t review_id,
                                                const std::map<std::string, Mat>& analytic,
                                                double epsilon, size_t samples_per_tensor,
                                                uint64_t seed, double w_retrieve = 1.0,
                                                double w_rating = 1.0);

GradCheckReport gradient_check(RetrieverModel& model, const Corpus& corpus,
                               const EmbeddingStore& store, uint64_t review_id, double epsilon,
                               size_t samples_per_tensor, uint64_t seed,
                               double w_retrieve = 1.0, double w_rating = 1.0);

}  // namespace prag
