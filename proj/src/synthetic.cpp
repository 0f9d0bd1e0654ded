#include "prag/synthetic.hpp"

#include <algorithm>
#include <cmath>

#include <json.hpp>

#include "prag/error.hpp"
#include "prag/rng.hpp"

namespace prag {

using nlohmann::json;

namespace {

const char* kTopicWords[8][4] = {
    {"pool", "spa", "sauna", "lounge"},
    {"pizza", "crust", "pasta", "sauce"},
    {"battery", "screen", "keyboard", "speaker"},
    {"plot", "acting", "soundtrack", "script"},
    {"trail", "summit", "scenery", "campsite"},
    {"coffee", "espresso", "pastry", "brunch"},
    {"engine", "brakes", "mileage", "interior"},
    {"garden", "patio", "fountain", "terrace"},
};

const char* kPositive[4] = {"great", "excellent", "wonderful", "fantastic"};
const char* kNegative[4] = {"bad", "poor", "disappointing", "mediocre"};

std::string entity_name(const char* prefix, uint32_t idx) {
    return std::string(prefix) + std::to_string(idx);
}

// Without replacement; a biased coin decides per slot whether to draw from the
// user's own-topic items or from the remaining pool.
std::vector<size_t> pick_items_for_user(const SynthConfig& cfg, const SynthFixture& fx,
                                        const std::string& user,
                                        const std::vector<std::string>& items, Rng& rng) {
    uint32_t ut = fx.user_topic.at(user);
    std::vector<size_t> own, other;
    for (size_t i = 0; i < items.size(); ++i)
        (fx.item_topic.at(items[i]) == ut ? own : other).push_back(i);
    std::vector<size_t> picks;
    for (uint32_t r = 0; r < cfg.reviews_per_user; ++r) {
        bool use_own = !own.empty() && (other.empty() || rng.unit() < cfg.own_topic_bias);
        auto& pool = use_own ? own : other;
        size_t at = rng.index(pool.size());
        picks.push_back(pool[at]);
        pool.erase(pool.begin() + static_cast<ptrdiff_t>(at));
    }
    std::sort(picks.begin(), picks.end());
    return picks;
}

}  // namespace

void SynthConfig::validate() const {
    if (n_topics < 2) throw Error::validation("synthetic fixture needs n_topics >= 2");
    if (n_topics > 8) throw Error::validation("synthetic fixture supports at most 8 topics");
    if (dim < n_topics) throw Error::validation("dim must be >= n_topics");
    if (n_users == 0 || n_items == 0) throw Error::validation("need users and items");
    if (reviews_per_user == 0 || reviews_per_user > n_items)
        throw Error::validation("reviews_per_user must be in [1, n_items]");
    if (noise < 0 || rating_noise < 0) throw Error::validation("noise must be >= 0");
    if (r_min > r_max) throw Error::validation("rating range inverted");
}

SynthFixture generate_synthetic_fixture(const SynthConfig& cfg) {
    cfg.validate();
    SynthFixture fx;
    Rng rng = Rng::substream(cfg.seed, "synth");

    std::vector<std::string> users, items;
    for (uint32_t u = 0; u < cfg.n_users; ++u) {
        users.push_back(entity_name("u", u));
        fx.user_topic[users.back()] = u % cfg.n_topics;
        fx.user_bias[users.back()] = rng.uniform(-cfg.bias_scale, cfg.bias_scale);
    }
    for (uint32_t i = 0; i < cfg.n_items; ++i) {
        items.push_back(entity_name("i", i));
        fx.item_topic[items.back()] = i % cfg.n_topics;
        fx.item_bias[items.back()] = rng.uniform(-cfg.bias_scale, cfg.bias_scale);
    }

    std::vector<ReviewRecord> records;
    fx.store = EmbeddingStore(cfg.dim, "synthetic-d" + std::to_string(cfg.dim));

    for (uint32_t u = 0; u < cfg.n_users; ++u) {
        auto picks = pick_items_for_user(cfg, fx, users[u], items, rng);
        for (size_t item_idx : picks) {
            const std::string& user = users[u];
            const std::string& item = items[item_idx];
            uint32_t ti = fx.item_topic[item];
            uint32_t tu = fx.user_topic[user];

            // blended unit direction + noise, renormalized
            std::vector<double> v(cfg.dim, 0.0);
            v[ti] += 1.0;
            v[tu] += cfg.user_mix;
            double norm = 0.0;
            for (double x : v) norm += x * x;
            norm = std::sqrt(norm);
            for (double& x : v) x /= norm;
            for (double& x : v) x += rng.normal(0.0, cfg.noise);
            norm = 0.0;
            for (double x : v) norm += x * x;
            norm = std::sqrt(norm);
            std::vector<float> emb(cfg.dim);
            for (uint32_t c = 0; c < cfg.dim; ++c)
                emb[c] = static_cast<float>(norm > 0 ? v[c] / norm : (c == 0 ? 1.0 : 0.0));

            double affinity_term =
                cfg.affinity == 0.0 ? 0.0
                                    : (ti == tu ? cfg.affinity : -cfg.affinity / 3.0);
            double rating = cfg.mu + fx.user_bias[user] + fx.item_bias[item] + affinity_term +
                            rng.normal(0.0, cfg.rating_noise);
            if (cfg.clamp_ratings) rating = std::min(cfg.r_max, std::max(cfg.r_min, rating));

            const char** words = kTopicWords[ti];
            const char** bank = rating >= cfg.mu ? kPositive : kNegative;
            const char* a0 = bank[rng.index(4)];
            const char* a1 = bank[rng.index(4)];
            const char* a2 = bank[rng.index(4)];
            size_t w0 = rng.index(4);
            size_t w1 = (w0 + 1 + rng.index(3)) % 4;
            size_t w2 = rng.index(4);
            std::string text = std::string("the ") + words[w0] + " was " + a0 + " and the " +
                               words[w1] + " felt " + a1 + ". overall the " + words[w2] +
                               " seemed " + a2 + ".";
            if (cfg.user_mix > 0.0) {
                const char* uw = kTopicWords[tu][rng.index(4)];
                text += std::string(" the ") + uw + " also stood out.";
            }

            ReviewRecord rec;
            rec.review_id = records.size();
            rec.user_id = user;
            rec.item_id = item;
            rec.rating = rating;
            rec.text = std::move(text);
            records.push_back(std::move(rec));
            fx.store.put(records.back().review_id, emb);
            fx.review_topic[records.back().review_id] = ti;
        }
    }

    Corpus unlabeled = Corpus::from_records(std::move(records), {cfg.r_min, cfg.r_max});
    fx.corpus = split_corpus(unlabeled, cfg.train_ratio, cfg.val_ratio, cfg.test_ratio, cfg.seed);
    return fx;
}

std::string SynthFixture::labels_json() const {
    json j;
    json rt;
    for (const auto& [id, topic] : review_topic) rt[std::to_string(id)] = topic;
    j["review_topic"] = rt;
    j["user_topic"] = user_topic;
    j["item_topic"] = item_topic;
    j["user_bias"] = user_bias;
    j["item_bias"] = item_bias;
    return j.dump(2) + "\n";
}

}  // namespace prag
