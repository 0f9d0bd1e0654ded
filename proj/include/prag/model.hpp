#pragma once

#include <cstdint>
#include <map>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "prag/autodiff.hpp"
#include "prag/corpus.hpp"
#include "prag/encoder.hpp"

namespace prag {

enum class TieAxis : uint8_t { item = 0, user = 1 };

const char* tie_axis_name(TieAxis a);
std::optional<TieAxis> parse_tie_axis(const std::string& s);

struct TrainConfig {
    double learning_rate = 1e-3;
    uint32_t epochs = 50;
    uint32_t batch_size = 64;
    uint64_t seed = 0;
    TieAxis tie_axis = TieAxis::item;
    uint32_t d_h = 0;      // query-head hidden width; 0 -> d
    uint32_t kappa = 8;    // latent rating factors
    uint32_t heads = 4;    // attention heads
    uint32_t ffn = 0;      // feed-forward width; 0 -> 2d
    double w_retrieve = 1.0;
    double w_rating = 1.0;
    uint32_t max_history = 20;

    void validate() const;
};

struct ModelConfig {
    uint32_t dim = 0;  // d, matches the embedding store
    uint32_t heads = 4;
    uint32_t ffn = 0;
    uint32_t d_h = 0;
    uint32_t kappa = 8;
    uint32_t max_history = 20;
    TieAxis tie_axis = TieAxis::item;
    double mu = 0.0;  // frozen train-split mean rating
    double r_min = 1.0, r_max = 5.0;
    std::string backend_name;

    uint32_t ffn_width() const { return ffn == 0 ? 2 * dim : ffn; }
    uint32_t hidden_width() const { return d_h == 0 ? dim : d_h; }
    void validate() const;
};

class ParamStore {
public:
    Param& create(const std::string& name, size_t rows, size_t cols, bool trainable = true);
    Param* find(const std::string& name) const;
    Param& at(const std::string& name) const;
    const std::vector<std::unique_ptr<Param>>& all() const { return params_; }
    void zero_grads();

private:
    std::vector<std::unique_ptr<Param>> params_;
    std::map<std::string, Param*> by_name_;
};

// One input token: a history review plus which side it came from.
struct TokenRow {
    uint64_t review_id;
    int side;  // 0 = written by the user, 1 = written about the item

    bool operator<(const TokenRow& o) const {
        return review_id != o.review_id ? review_id < o.review_id : side < o.side;
    }
};

struct LatentQuery {
    std::vector<double> values;
    std::string user_id;
    std::string item_id;
};

struct ForwardOutput {
    LatentQuery query;
    double rhat = 0.0;       // un-clamped prediction
    double adjustment = 0.0; // dot(factor_mlp(Q), gamma[entity])
    std::vector<double> attention;  // per token row, sums to 1
    std::vector<TokenRow> rows;     // sorted evidence rows actually used
};

// References into a built training graph, for loss readout and backward().
struct JointGraph {
    Tape::Id q;
    Tape::Id rhat;
    Tape::Id adjustment;
    Tape::Id l_retrieve;
    Tape::Id l_rating;
    Tape::Id total;
};

class RetrieverModel {
public:
    RetrieverModel() = default;

    // Fresh model covering the given entities. Parameters are created in a
    // canonical order and initialized from substream(seed, "init"):
    // embeddings ~ N(0, 0.02^2), affine weights Xavier-uniform, biases zero,
    // layernorm gain one.
    static RetrieverModel init(const ModelConfig& cfg, const std::vector<std::string>& user_ids,
                               const std::vector<std::string>& item_ids, uint64_t seed);

    const ModelConfig& config() const { return cfg_; }
    ParamStore& params() { return params_; }
    const ParamStore& params() const { return params_; }

    bool has_user(const std::string& id) const { return v_user_.count(id) != 0; }
    bool has_item(const std::string& id) const { return v_item_.count(id) != 0; }

    // Sorted rows from the two histories; throws "no evidence for pair" when
    // both are empty.
    static std::vector<TokenRow> make_rows(const std::vector<uint64_t>& user_hist,
                                           const std::vector<uint64_t>& item_hist);

    // Full forward graph: token embedding assembly, two transformer blocks,
    // personalized attention pooling, query head. Returns (query id, weights id).
    std::pair<Tape::Id, Tape::Id> build_query_graph(Tape& tape,
                                                    const std::vector<TokenRow>& rows,
                                                    const std::string& user_id,
                                                    const std::string& item_id,
                                                    const EmbeddingStore& store) const;

    // Rating head on top of a query node: returns (rhat id, adjustment id).
    std::pair<Tape::Id, Tape::Id> build_rating_graph(Tape& tape, Tape::Id q,
                                                     const std::string& user_id,
                                                     const std::string& item_id) const;

    JointGraph build_joint_graph(Tape& tape, const std::vector<TokenRow>& rows,
                                 const std::string& user_id, const std::string& item_id,
                                 const EmbeddingStore& store,
                                 const std::vector<double>& target_embedding, double rating,
                                 double w_retrieve, double w_rating) const;

    ForwardOutput forward(const std::vector<TokenRow>& rows, const std::string& user_id,
                          const std::string& item_id, const EmbeddingStore& store) const;

    // Assembled token matrix H0 (for tests and introspection).
    Mat assemble_input(const std::vector<TokenRow>& rows, const std::string& user_id,
                       const std::string& item_id, const EmbeddingStore& store) const;

    void save(const std::string& path) const;
    static RetrieverModel load(const std::string& path);

    ModelConfig& mutable_config() { return cfg_; }

private:
    friend class Trainer;

    void create_params(const std::vector<std::string>& user_ids,
                       const std::vector<std::string>& item_ids);
    void wire_lookups();  // after load: map entity params by name prefix

    const Param* user_embedding(const std::string& id) const;  // cold fallback
    const Param* item_embedding(const std::string& id) const;

    ModelConfig cfg_;
    ParamStore params_;
    std::map<std::string, Param*> v_user_;
    std::map<std::string, Param*> v_item_;
    std::map<std::string, Param*> gamma_;      // keyed by tie-axis entity id
    std::map<std::string, Param*> beta_user_;
    std::map<std::string, Param*> beta_item_;
};

// Normalized ReLU attention over token rows. score_j = relu(w . [H_j; v_u; v_i] + b),
// weights = score / sum(score), uniform when every score is zero.
std::vector<double> personalized_attention(const Mat& h, const std::vector<double>& v_user,
                                           const std::vector<double>& v_item,
                                           const Mat& scorer_w, double scorer_b);

struct RatingBreakdown {
    double rhat;
    double adjustment;
};

// rhat = dot(factor_mlp(Q), gamma[entity]) + wide(Q) + beta_u + beta_i + mu.
// Unknown entities contribute beta = 0 and a zero gamma vector.
RatingBreakdown predict_rating(const RetrieverModel& model, const LatentQuery& q,
                               const std::string& user_id, const std::string& item_id);

struct JointLoss {
    double total;
    double l_retrieve;
    double l_rating;
};

// l_retrieve = ||q - target||^2, l_rating = (rhat - rating)^2.
JointLoss joint_loss(const std::vector<double>& q, const std::vector<double>& target,
                     double rhat, double rating, double w_retrieve = 1.0,
                     double w_rating = 1.0);

double clamp_rating(double r, const ModelConfig& cfg);

}  // namespace prag
