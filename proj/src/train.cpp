#include "prag/train.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <sstream>

#include "prag/error.hpp"
#include "prag/rng.hpp"

namespace prag {

namespace {

struct TrainExample {
    uint64_t review_id;
    std::string user_id;
    std::string item_id;
    double rating;
    std::vector<TokenRow> rows;
    std::vector<double> target;
};

std::vector<TrainExample> build_examples(const Corpus& corpus, const EmbeddingStore& store,
                                         uint32_t max_history, TrainMeta& meta) {
    std::vector<TrainExample> examples;
    for (const auto& rec : corpus.records()) {
        if (rec.split != Split::train) continue;
        if (!store.contains(rec.review_id))
            throw Error::validation("store is missing train review " +
                                    std::to_string(rec.review_id));
        TrainExample ex;
        ex.review_id = rec.review_id;
        ex.user_id = rec.user_id;
        ex.item_id = rec.item_id;
        ex.rating = rec.rating;
        auto related = related_reviews(corpus, rec.user_id, rec.item_id, rec.review_id,
                                       max_history);
        if (related.user_history.empty() && related.item_history.empty()) {
            // Sole evidence for this pair is the target itself; keep it so the
            // example still trains (counted, see meta).
            ex.rows = RetrieverModel::make_rows({rec.review_id}, {rec.review_id});
            ++meta.degenerate_pairs;
        } else {
            ex.rows = RetrieverModel::make_rows(related.user_history, related.item_history);
        }
        ex.target = store.vector_f64(rec.review_id);
        examples.push_back(std::move(ex));
    }
    meta.n_examples = examples.size();
    return examples;
}

void adam_step(ParamStore& params, double lr, uint64_t t) {
    constexpr double beta1 = 0.9, beta2 = 0.999, eps = 1e-8;
    const double bc1 = 1.0 - std::pow(beta1, static_cast<double>(t));
    const double bc2 = 1.0 - std::pow(beta2, static_cast<double>(t));
    for (auto& p : params.all()) {
        if (!p->trainable) continue;
        for (size_t i = 0; i < p->value.a.size(); ++i) {
            double g = p->grad.a[i];
            p->adam_m.a[i] = beta1 * p->adam_m.a[i] + (1.0 - beta1) * g;
            p->adam_v.a[i] = beta2 * p->adam_v.a[i] + (1.0 - beta2) * g * g;
            double mhat = p->adam_m.a[i] / bc1;
            double vhat = p->adam_v.a[i] / bc2;
            p->value.a[i] -= lr * mhat / (std::sqrt(vhat) + eps);
        }
    }
}

}  // namespace

TrainResult train(const Corpus& corpus, const EmbeddingStore& store, const TrainConfig& cfg) {
    cfg.validate();
    auto train_ids = corpus.review_ids(Split::train);
    if (train_ids.empty()) throw Error::validation("train split is empty");

    double mu = 0.0;
    for (uint64_t id : train_ids) mu += corpus.record(id).rating;
    mu /= static_cast<double>(train_ids.size());

    ModelConfig mcfg;
    mcfg.dim = store.dim();
    mcfg.heads = cfg.heads;
    mcfg.ffn = cfg.ffn;
    mcfg.d_h = cfg.d_h;
    mcfg.kappa = cfg.kappa;
    mcfg.max_history = cfg.max_history;
    mcfg.tie_axis = cfg.tie_axis;
    mcfg.mu = mu;
    mcfg.r_min = corpus.rating_range().first;
    mcfg.r_max = corpus.rating_range().second;
    mcfg.backend_name = store.backend_name();

    TrainResult result;
    result.model = RetrieverModel::init(mcfg, corpus.entity_ids(Split::train, true),
                                        corpus.entity_ids(Split::train, false), cfg.seed);
    RetrieverModel& model = result.model;

    auto examples = build_examples(corpus, store, cfg.max_history, result.meta);

    std::vector<size_t> order(examples.size());
    for (size_t i = 0; i < order.size(); ++i) order[i] = i;

    uint64_t adam_t = 0;
    for (uint32_t epoch = 0; epoch < cfg.epochs; ++epoch) {
        Rng shuffle_rng = Rng::substream(cfg.seed, "shuffle", epoch);
        shuffle_rng.shuffle(order);

        // per-example losses keyed by example index so epoch means do not
        // depend on the shuffle order
        std::vector<double> ex_ret(examples.size()), ex_rat(examples.size()),
            ex_total(examples.size());
        size_t pos = 0;
        uint32_t step = 0;
        while (pos < order.size()) {
            size_t batch_end = std::min(order.size(), pos + cfg.batch_size);
            size_t batch_n = batch_end - pos;
            model.params().zero_grads();
            for (size_t b = pos; b < batch_end; ++b) {
                const TrainExample& ex = examples[order[b]];
                Tape tape;
                JointGraph g = model.build_joint_graph(tape, ex.rows, ex.user_id, ex.item_id,
                                                       store, ex.target, ex.rating,
                                                       cfg.w_retrieve, cfg.w_rating);
                double total = tape.val(g.total)(0, 0);
                if (!std::isfinite(total))
                    throw Error::runtime("non-finite loss at epoch " + std::to_string(epoch) +
                                         " step " + std::to_string(step) + " review " +
                                         std::to_string(ex.review_id));
                ex_ret[order[b]] = tape.val(g.l_retrieve)(0, 0);
                ex_rat[order[b]] = tape.val(g.l_rating)(0, 0);
                ex_total[order[b]] = total;
                tape.backward(g.total);
            }
            // mean batch loss
            for (auto& p : model.params().all())
                for (double& g : p->grad.a) g /= static_cast<double>(batch_n);
            adam_step(model.params(), cfg.learning_rate, ++adam_t);
            pos = batch_end;
            ++step;
        }
        double n = static_cast<double>(examples.size());
        double sum_ret = 0.0, sum_rat = 0.0, sum_total = 0.0;
        for (size_t i = 0; i < examples.size(); ++i) {
            sum_ret += ex_ret[i];
            sum_rat += ex_rat[i];
            sum_total += ex_total[i];
        }
        result.history.push_back({epoch, sum_ret / n, sum_rat / n, sum_total / n});
    }
    return result;
}

std::string loss_history_csv(const std::vector<EpochLoss>& history) {
    std::ostringstream out;
    out << "epoch,l_retrieve,l_rating,total\n";
    char buf[128];
    for (const auto& e : history) {
        std::snprintf(buf, sizeof(buf), "%u,%.17g,%.17g,%.17g\n", e.epoch, e.l_retrieve,
                      e.l_rating, e.total);
        out << buf;
    }
    return out.str();
}

namespace {

struct ExampleInputs {
    std::vector<TokenRow> rows;
    std::string user_id, item_id;
    std::vector<double> target;
    double rating;
};

ExampleInputs example_inputs(const RetrieverModel& model, const Corpus& corpus,
                             const EmbeddingStore& store, uint64_t review_id) {
    const ReviewRecord& rec = corpus.record(review_id);
    if (rec.split != Split::train)
        throw Error::validation("gradient check example must come from the train split");
    auto related = related_reviews(corpus, rec.user_id, rec.item_id, rec.review_id,
                                   model.config().max_history);
    ExampleInputs in;
    if (related.user_history.empty() && related.item_history.empty())
        in.rows = RetrieverModel::make_rows({rec.review_id}, {rec.review_id});
    else
        in.rows = RetrieverModel::make_rows(related.user_history, related.item_history);
    in.user_id = rec.user_id;
    in.item_id = rec.item_id;
    in.target = store.vector_f64(rec.review_id);
    in.rating = rec.rating;
    return in;
}

double loss_at(const RetrieverModel& model, const ExampleInputs& in, const EmbeddingStore& store,
               double w_ret, double w_rat) {
    Tape tape;
    JointGraph g = model.build_joint_graph(tape, in.rows, in.user_id, in.item_id, store,
                                           in.target, in.rating, w_ret, w_rat);
    return tape.val(g.total)(0, 0);
}

}  // namespace

std::map<std::string, Mat> analytic_gradients(const RetrieverModel& model, const Corpus& corpus,
                                              const EmbeddingStore& store, uint64_t review_id,
                                              double w_retrieve, double w_rating) {
    ExampleInputs in = example_inputs(model, corpus, store, review_id);
    const_cast<RetrieverModel&>(model).params().zero_grads();
    Tape tape;
    JointGraph g = model.build_joint_graph(tape, in.rows, in.user_id, in.item_id, store,
                                           in.target, in.rating, w_retrieve, w_rating);
    tape.backward(g.total);
    std::map<std::string, Mat> out;
    for (const auto& p : model.params().all())
        if (p->trainable) out[p->name] = p->grad;
    return out;
}

GradCheckReport compare_with_finite_differences(RetrieverModel& model, const Corpus& corpus,
                                                const EmbeddingStore& store, uint64_t review_id,
                                                const std::map<std::string, Mat>& analytic,
                                                double epsilon, size_t samples_per_tensor,
                                                uint64_t seed, double w_retrieve,
                                                double w_rating) {
    if (epsilon <= 0) throw Error::validation("epsilon must be positive");
    ExampleInputs in = example_inputs(model, corpus, store, review_id);
    Rng rng = Rng::substream(seed, "gradcheck");

    GradCheckReport report;
    for (auto& p : model.params().all()) {
        if (!p->trainable) continue;
        auto it = analytic.find(p->name);
        if (it == analytic.end()) continue;
        const Mat& ga = it->second;

        std::vector<size_t> coords;
        if (p->value.a.size() <= samples_per_tensor) {
            coords.resize(p->value.a.size());
            for (size_t i = 0; i < coords.size(); ++i) coords[i] = i;
        } else {
            coords = rng.sample_indices(p->value.a.size(), samples_per_tensor);
            std::sort(coords.begin(), coords.end());
        }

        double tensor_err = 0.0;
        for (size_t c : coords) {
            double saved = p->value.a[c];
            p->value.a[c] = saved + epsilon;
            double lp = loss_at(model, in, store, w_retrieve, w_rating);
            p->value.a[c] = saved - epsilon;
            double lm = loss_at(model, in, store, w_retrieve, w_rating);
            p->value.a[c] = saved;
            double gn = (lp - lm) / (2.0 * epsilon);
            double g = ga.a[c];
            double denom = std::max({std::abs(g), std::abs(gn), 1e-8});
            tensor_err = std::max(tensor_err, std::abs(g - gn) / denom);
        }
        report.per_tensor.push_back({p->name, tensor_err});
        report.max_rel_err = std::max(report.max_rel_err, tensor_err);
    }
    return report;
}

GradCheckReport gradient_check(RetrieverModel& model, const Corpus& corpus,
                               const EmbeddingStore& store, uint64_t review_id, double epsilon,
                               size_t samples_per_tensor, uint64_t seed, double w_retrieve,
                               double w_rating) {
    auto ga = analytic_gradients(model, corpus, store, review_id, w_retrieve, w_rating);
    return compare_with_finite_differences(model, corpus, store, review_id, ga, epsilon,
                                           samples_per_tensor, seed, w_retrieve, w_rating);
}

}  // namespace prag
