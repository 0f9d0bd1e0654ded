#include "prag/cli.hpp"

#include <algorithm>
#include <cctype>
#include <fstream>
#include <ostream>
#include <sstream>

#include <CLI11.hpp>
#include <json.hpp>

#include "prag/corpus.hpp"
#include "prag/encoder.hpp"
#include "prag/error.hpp"
#include "prag/evalkit.hpp"
#include "prag/explain.hpp"
#include "prag/io.hpp"
#include "prag/model.hpp"
#include "prag/retrieval.hpp"
#include "prag/synthetic.hpp"
#include "prag/train.hpp"

extern char** environ;

namespace prag {

using nlohmann::json;

namespace {

constexpr const char* kToolVersion = "0.1.0";

// Effective config = file < PRAG_* environment < flags.
struct RunContext {
    json cfg = json::object();
    uint64_t seed = 0;
    std::string out_dir = "out";
    std::ostream* stdout_stream = nullptr;

    const json* section(const std::string& name) const {
        auto it = cfg.find(name);
        return it != cfg.end() && it->is_object() ? &*it : nullptr;
    }

    template <typename T>
    T get(const std::string& section_name, const std::string& key, T fallback) const {
        const json* s = section(section_name);
        if (!s) return fallback;
        auto it = s->find(key);
        if (it == s->end() || it->is_null()) return fallback;
        return it->get<T>();
    }

    std::string path(const std::string& key, const std::string& default_name) const {
        std::string p = get<std::string>("paths", key, "");
        if (!p.empty()) return p;
        if (default_name.empty())
            throw Error::validation("config paths." + key + " is required");
        return out_dir + "/" + default_name;
    }

    std::pair<double, double> rating_range() const {
        auto it = cfg.find("rating_range");
        if (it == cfg.end() || !it->is_array() || it->size() != 2) return {1.0, 5.0};
        return {(*it)[0].get<double>(), (*it)[1].get<double>()};
    }
};

void apply_env_overrides(json& cfg) {
    for (char** ep = environ; ep && *ep; ++ep) {
        std::string entry(*ep);
        if (entry.rfind("PRAG_", 0) != 0) continue;
        size_t eq = entry.find('=');
        if (eq == std::string::npos) continue;
        std::string key = entry.substr(5, eq - 5);
        std::string value = entry.substr(eq + 1);
        if (key == "ENCODER_ENDPOINT") continue;  // consumed by HttpEncoder directly

        std::vector<std::string> path;
        size_t pos = 0;
        while (pos <= key.size()) {
            size_t sep = key.find("__", pos);
            std::string part = sep == std::string::npos ? key.substr(pos)
                                                        : key.substr(pos, sep - pos);
            std::transform(part.begin(), part.end(), part.begin(),
                           [](unsigned char c) { return std::tolower(c); });
            if (!part.empty()) path.push_back(part);
            if (sep == std::string::npos) break;
            pos = sep + 2;
        }
        if (path.empty()) continue;

        json parsed = json::parse(value, nullptr, false);
        json leaf = parsed.is_discarded() ? json(value) : parsed;
        json* node = &cfg;
        for (size_t i = 0; i + 1 < path.size(); ++i) {
            if (!node->contains(path[i]) || !(*node)[path[i]].is_object())
                (*node)[path[i]] = json::object();
            node = &(*node)[path[i]];
        }
        (*node)[path.back()] = leaf;
    }
}

void write_manifest(const std::string& artifact_path, const std::string& command,
                    const RunContext& ctx, bool artifact_is_dir = false) {
    json m;
    m["command"] = command;
    m["config_hash"] = to_hex(fnv1a64(ctx.cfg.dump()));
    m["seed"] = ctx.seed;
    m["versions"] = {{"tool", kToolVersion}, {"corpus", 1}, {"store", 1}, {"checkpoint", 1}};
    std::string path = artifact_is_dir ? artifact_path + "/manifest.json"
                                       : artifact_path + ".manifest.json";
    write_text_file(path, m.dump(2) + "\n");
}

TrainConfig train_config(const RunContext& ctx) {
    TrainConfig tc;
    tc.learning_rate = ctx.get<double>("train", "learning_rate", 1e-3);
    tc.epochs = ctx.get<uint32_t>("train", "epochs", 50);
    tc.batch_size = ctx.get<uint32_t>("train", "batch_size", 64);
    tc.seed = ctx.seed;
    auto axis = parse_tie_axis(ctx.get<std::string>("train", "tie_axis", "item"));
    if (!axis) throw Error::validation("train.tie_axis must be 'item' or 'user'");
    tc.tie_axis = *axis;
    tc.d_h = ctx.get<uint32_t>("train", "d_h", 0);
    tc.kappa = ctx.get<uint32_t>("train", "kappa", 8);
    tc.heads = ctx.get<uint32_t>("train", "heads", 4);
    tc.ffn = ctx.get<uint32_t>("train", "ffn", 0);
    tc.w_retrieve = ctx.get<double>("train", "w_retrieve", 1.0);
    tc.w_rating = ctx.get<double>("train", "w_rating", 1.0);
    tc.max_history = ctx.get<uint32_t>("train", "max_history", 20);
    return tc;
}

MarginalizeConfig marginalize_config(const RunContext& ctx) {
    MarginalizeConfig mc;
    mc.enabled = ctx.get<bool>("retrieval", "marginalize", true);
    std::string axis = ctx.get<std::string>("retrieval", "axis", "auto");
    if (axis != "auto") {
        auto a = parse_tie_axis(axis);
        if (!a) throw Error::validation("retrieval.axis must be 'auto', 'item' or 'user'");
        mc.axis = *a;
    }
    mc.batch_size = ctx.get<uint32_t>("retrieval", "batch_size", 32);
    mc.seed = ctx.seed;
    return mc;
}

ExplainConfig explain_config(const RunContext& ctx) {
    ExplainConfig ec;
    ec.evidence_k = ctx.get<size_t>("retrieval", "k", 5);
    auto scope = parse_scope(ctx.get<std::string>("retrieval", "scope", "item"));
    if (!scope) throw Error::validation("retrieval.scope must be 'item' or 'global'");
    ec.scope = *scope;
    ec.marginalize = marginalize_config(ctx);
    ec.keyword_k = ctx.get<size_t>("explain", "keyword_k", 5);
    ec.query_only_keywords = ctx.get<bool>("explain", "query_only", false);
    ec.beam_width = ctx.get<size_t>("explain", "beam_width", 4);
    ec.context_token_budget = ctx.get<size_t>("explain", "context_budget", 128);
    return ec;
}

std::unique_ptr<EncoderBackend> make_encoder(const RunContext& ctx) {
    std::string backend = ctx.get<std::string>("encoder", "backend", "toy");
    uint32_t dim = ctx.get<uint32_t>("encoder", "dim", 32);
    if (backend == "toy")
        return std::make_unique<ToyHashEncoder>(dim, ctx.get<uint64_t>("encoder", "encode_seed", 0));
    if (backend == "http")
        return std::make_unique<HttpEncoder>(dim, ctx.get<std::string>("encoder", "endpoint", ""));
    throw Error::validation("encoder.backend must be 'toy' or 'http'");
}

std::unique_ptr<ReaderModel> make_reader(const RunContext& ctx) {
    std::string reader = ctx.get<std::string>("explain", "reader", "extractive");
    size_t max_len = ctx.get<size_t>("explain", "max_output_len", 16);
    if (reader == "extractive") return nullptr;
    if (reader == "stub-copy") return std::make_unique<StubCopyReader>(max_len);
    if (reader == "http")
        return std::make_unique<HttpReader>(ctx.get<std::string>("explain", "endpoint", ""),
                                            max_len);
    throw Error::validation("explain.reader must be 'extractive', 'stub-copy' or 'http'");
}

const StopwordSet& stopwords_for(const RunContext& ctx, StopwordSet& storage) {
    std::string path = ctx.get<std::string>("paths", "stopwords", "");
    if (path.empty()) return default_stopwords();
    storage = load_stopwords(path);
    return storage;
}

std::vector<std::pair<std::string, std::string>> test_pairs(const Corpus& corpus,
                                                            size_t max_pairs) {
    std::vector<std::pair<std::string, std::string>> pairs;
    for (const auto& r : corpus.records())
        if (r.split == Split::test) pairs.emplace_back(r.user_id, r.item_id);
    if (max_pairs > 0 && pairs.size() > max_pairs) pairs.resize(max_pairs);
    return pairs;
}

int cmd_synth(RunContext& ctx) {
    SynthConfig sc;
    sc.n_users = ctx.get<uint32_t>("synth", "n_users", 40);
    sc.n_items = ctx.get<uint32_t>("synth", "n_items", 20);
    sc.n_topics = ctx.get<uint32_t>("synth", "n_topics", 4);
    sc.noise = ctx.get<double>("synth", "noise", 0.1);
    sc.seed = ctx.seed;
    sc.dim = ctx.get<uint32_t>("synth", "dim", 32);
    sc.reviews_per_user = ctx.get<uint32_t>("synth", "reviews_per_user", 8);
    sc.user_mix = ctx.get<double>("synth", "user_mix", 0.5);
    sc.own_topic_bias = ctx.get<double>("synth", "own_topic_bias", 0.6);
    sc.affinity = ctx.get<double>("synth", "affinity", 0.0);
    sc.bias_scale = ctx.get<double>("synth", "bias_scale", 0.4);
    sc.rating_noise = ctx.get<double>("synth", "rating_noise", 0.1);
    sc.mu = ctx.get<double>("synth", "mu", 3.0);
    sc.clamp_ratings = ctx.get<bool>("synth", "clamp_ratings", true);
    auto range = ctx.rating_range();
    sc.r_min = range.first;
    sc.r_max = range.second;

    SynthFixture fx = generate_synthetic_fixture(sc);
    std::string corpus_dir = ctx.path("corpus", "corpus");
    std::string store_path = ctx.path("store", "store.bin");
    save_corpus(fx.corpus, corpus_dir);
    fx.store.save(store_path);
    write_text_file(ctx.out_dir + "/labels.json", fx.labels_json());
    write_manifest(corpus_dir, "synth", ctx, true);
    write_manifest(store_path, "synth", ctx);

    json summary;
    summary["records"] = fx.corpus.records().size();
    summary["corpus"] = corpus_dir;
    summary["store"] = store_path;
    summary["labels"] = ctx.out_dir + "/labels.json";
    *ctx.stdout_stream << summary.dump(2) << "\n";
    return 0;
}

int cmd_ingest(RunContext& ctx) {
    std::string input = ctx.path("input", "");
    if (!path_exists(input)) throw Error::missing("input file not found: " + input);
    std::ifstream in(input, std::ios::binary);
    Corpus corpus = ingest_jsonl(in, ctx.rating_range());

    bool want_split = ctx.get<bool>("ingest", "split", true);
    if (want_split && !corpus.meta().has_explicit_splits) {
        double tr = 0.8, va = 0.1, te = 0.1;
        const json* s = ctx.section("ingest");
        if (s && s->contains("ratios") && (*s)["ratios"].is_array() &&
            (*s)["ratios"].size() == 3) {
            tr = (*s)["ratios"][0].get<double>();
            va = (*s)["ratios"][1].get<double>();
            te = (*s)["ratios"][2].get<double>();
        }
        corpus = split_corpus(corpus, tr, va, te, ctx.seed);
    }
    std::string corpus_dir = ctx.path("corpus", "corpus");
    save_corpus(corpus, corpus_dir);
    write_manifest(corpus_dir, "ingest", ctx, true);

    json summary;
    summary["records"] = corpus.records().size();
    summary["skipped_empty"] = corpus.meta().skipped_empty;
    summary["forced_to_train"] = corpus.meta().forced_to_train;
    summary["corpus"] = corpus_dir;
    *ctx.stdout_stream << summary.dump(2) << "\n";
    return 0;
}

int cmd_embed(RunContext& ctx) {
    Corpus corpus = load_corpus(ctx.path("corpus", "corpus"));
    auto backend = make_encoder(ctx);
    EmbeddingStore store = embed_corpus(corpus, *backend);
    std::string store_path = ctx.path("store", "store.bin");
    store.save(store_path);
    write_manifest(store_path, "embed", ctx);

    json summary;
    summary["vectors"] = store.size();
    summary["dim"] = store.dim();
    summary["backend"] = store.backend_name();
    summary["store"] = store_path;
    *ctx.stdout_stream << summary.dump(2) << "\n";
    return 0;
}

int cmd_train(RunContext& ctx) {
    Corpus corpus = load_corpus(ctx.path("corpus", "corpus"));
    EmbeddingStore store = EmbeddingStore::load(ctx.path("store", "store.bin"));
    TrainConfig tc = train_config(ctx);
    TrainResult result = train(corpus, store, tc);

    std::string ckpt_path = ctx.path("checkpoint", "model.ckpt");
    result.model.save(ckpt_path);
    write_text_file(ctx.out_dir + "/loss_history.csv", loss_history_csv(result.history));
    write_manifest(ckpt_path, "train", ctx);

    json summary;
    summary["checkpoint"] = ckpt_path;
    summary["epochs"] = result.history.size();
    summary["examples"] = result.meta.n_examples;
    summary["degenerate_pairs"] = result.meta.degenerate_pairs;
    if (!result.history.empty()) {
        summary["final_l_retrieve"] = result.history.back().l_retrieve;
        summary["final_l_rating"] = result.history.back().l_rating;
        summary["final_total"] = result.history.back().total;
    }
    *ctx.stdout_stream << summary.dump(2) << "\n";
    return 0;
}

int cmd_retrieve(RunContext& ctx, const std::string& user, const std::string& item) {
    if (user.empty() || item.empty())
        throw Error::validation("retrieve needs --user and --item");
    Corpus corpus = load_corpus(ctx.path("corpus", "corpus"));
    EmbeddingStore store = EmbeddingStore::load(ctx.path("store", "store.bin"));
    RetrieverModel model = RetrieverModel::load(ctx.path("checkpoint", "model.ckpt"));

    size_t k = ctx.get<size_t>("retrieval", "k", 5);
    auto scope = parse_scope(ctx.get<std::string>("retrieval", "scope", "item"));
    if (!scope) throw Error::validation("retrieval.scope must be 'item' or 'global'");
    RetrievalResult result =
        retrieve(model, corpus, store, user, item, k, *scope, marginalize_config(ctx));

    std::string out_path = ctx.out_dir + "/retrieval.json";
    write_text_file(out_path, retrieval_result_json(result));
    write_manifest(out_path, "retrieve", ctx);
    *ctx.stdout_stream << retrieval_result_json(result);
    return 0;
}

int cmd_explain(RunContext& ctx, const std::string& user, const std::string& item) {
    Corpus corpus = load_corpus(ctx.path("corpus", "corpus"));
    EmbeddingStore store = EmbeddingStore::load(ctx.path("store", "store.bin"));
    RetrieverModel model = RetrieverModel::load(ctx.path("checkpoint", "model.ckpt"));

    StopwordSet custom;
    const StopwordSet& stopwords = stopwords_for(ctx, custom);
    CorpusStats stats = compute_tfidf_stats(corpus, stopwords);
    ExplainConfig ec = explain_config(ctx);

    auto baseline = NearestReviewKeywordEstimator::build(corpus, store, stats, ec.keyword_k);
    std::unique_ptr<HttpKeywordEstimator> http_estimator;
    KeywordEstimator* estimator = &baseline;
    KeywordEstimator* fallback = nullptr;
    if (ctx.get<std::string>("explain", "estimator", "nearest") == "http") {
        http_estimator = std::make_unique<HttpKeywordEstimator>(
            ctx.get<std::string>("explain", "endpoint", ""), ec.keyword_k);
        estimator = http_estimator.get();
        fallback = &baseline;
    }
    auto reader = make_reader(ctx);

    if (!user.empty() || !item.empty()) {
        if (user.empty() || item.empty())
            throw Error::validation("explain needs both --user and --item (or neither)");
        Explanation e =
            explain(model, corpus, store, *estimator, reader.get(), user, item, ec, fallback);
        std::string out_path = ctx.out_dir + "/explanation.json";
        write_text_file(out_path, explanation_json(e) + "\n");
        write_manifest(out_path, "explain", ctx);
        *ctx.stdout_stream << explanation_json(e) << "\n";
        return 0;
    }

    auto pairs = test_pairs(corpus, ctx.get<size_t>("explain", "max_pairs", 0));
    if (pairs.empty()) throw Error::validation("corpus has no test pairs to explain");
    std::ostringstream lines;
    std::vector<PredictionRow> predictions;
    uint64_t skipped = 0;
    for (const auto& [u, i] : pairs) {
        try {
            Explanation e =
                explain(model, corpus, store, *estimator, reader.get(), u, i, ec, fallback);
            lines << explanation_json(e) << "\n";
            predictions.push_back({u, i, e.predicted_rating});
        } catch (const Error&) {
            ++skipped;
        }
    }
    std::string expl_path = ctx.path("explanations", "explanations.jsonl");
    std::string pred_path = ctx.path("predictions", "predictions.csv");
    write_text_file(expl_path, lines.str());
    write_text_file(pred_path, predictions_csv(predictions));
    write_manifest(expl_path, "explain", ctx);

    json summary;
    summary["explanations"] = expl_path;
    summary["predictions"] = pred_path;
    summary["written"] = predictions.size();
    summary["skipped"] = skipped;
    *ctx.stdout_stream << summary.dump(2) << "\n";
    return 0;
}

int cmd_evaluate(RunContext& ctx) {
    Corpus corpus = load_corpus(ctx.path("corpus", "corpus"));
    std::string expl_path = ctx.path("explanations", "explanations.jsonl");
    if (!path_exists(expl_path))
        throw Error::missing("explanations file not found: " + expl_path);
    auto explanations = parse_explanations_jsonl(read_text_file(expl_path));

    std::vector<PredictionRow> predictions;
    std::string pred_path = ctx.path("predictions", "predictions.csv");
    if (path_exists(pred_path)) predictions = parse_predictions_csv(read_text_file(pred_path));

    EvalConfig ec;
    ec.entail_threshold = ctx.get<double>("eval", "threshold", 0.5);
    std::string direction = ctx.get<std::string>("eval", "direction", "explanation_premise");
    if (direction == "explanation_premise") ec.direction = EntailDirection::explanation_premise;
    else if (direction == "review_premise") ec.direction = EntailDirection::review_premise;
    else throw Error::validation("eval.direction must be explanation_premise or review_premise");

    std::unique_ptr<NliScorer> scorer;
    std::string scorer_name = ctx.get<std::string>("eval", "scorer", "overlap");
    if (scorer_name == "overlap") scorer = std::make_unique<OverlapNliScorer>();
    else if (scorer_name == "http")
        scorer = std::make_unique<HttpNliScorer>(ctx.get<std::string>("eval", "endpoint", ""));
    else if (scorer_name != "none")
        throw Error::validation("eval.scorer must be 'overlap', 'http' or 'none'");

    EvalReport report = evaluate_run(explanations, predictions, corpus, scorer.get(), ec);
    std::string out_path = ctx.out_dir + "/eval_report.json";
    write_text_file(out_path, eval_report_json(report));
    write_manifest(out_path, "evaluate", ctx);
    *ctx.stdout_stream << eval_report_json(report);
    return 0;
}

int cmd_agreement(RunContext& ctx) {
    Corpus corpus = load_corpus(ctx.path("corpus", "corpus"));
    EmbeddingStore store = EmbeddingStore::load(ctx.path("store", "store.bin"));
    RetrieverModel model_a = RetrieverModel::load(ctx.path("checkpoint", "model.ckpt"));
    std::string b_path = ctx.get<std::string>("paths", "checkpoint_b", "");
    if (b_path.empty()) throw Error::validation("agreement needs paths.checkpoint_b");
    RetrieverModel model_b = RetrieverModel::load(b_path);

    size_t k = ctx.get<size_t>("agreement", "k", 5);
    auto scope = parse_scope(ctx.get<std::string>("agreement", "scope", "global"));
    if (!scope) throw Error::validation("agreement.scope must be 'item' or 'global'");
    auto pairs = test_pairs(corpus, ctx.get<size_t>("agreement", "max_pairs", 0));
    if (pairs.empty()) throw Error::validation("corpus has no test pairs");

    MarginalizeConfig mc = marginalize_config(ctx);
    AgreementReport report =
        agreement_at_k(model_a, mc, model_b, mc, corpus, store, pairs, k, *scope, ctx.seed);

    std::string out_path = ctx.out_dir + "/agreement.json";
    write_text_file(out_path, agreement_report_json(report));
    write_manifest(out_path, "agreement", ctx);
    *ctx.stdout_stream << agreement_report_json(report);
    return 0;
}

}  // namespace

int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
    CLI::App app{"retriever-reader engine for explainable recommendation"};
    app.require_subcommand(1);

    std::string config_path, out_dir, user, item;
    int64_t seed_flag = -1;

    auto add_common = [&](CLI::App* sub) {
        sub->add_option("--config", config_path, "JSON config file");
        sub->add_option("--seed", seed_flag, "override config seed");
        sub->add_option("--out", out_dir, "override output directory");
    };

    CLI::App* sub_ingest = app.add_subcommand("ingest", "ingest a JSONL review dataset");
    CLI::App* sub_embed = app.add_subcommand("embed", "embed every review");
    CLI::App* sub_train = app.add_subcommand("train", "train the retriever + rating head");
    CLI::App* sub_retrieve = app.add_subcommand("retrieve", "retrieve evidence for a pair");
    CLI::App* sub_explain = app.add_subcommand("explain", "generate explanations");
    CLI::App* sub_evaluate = app.add_subcommand("evaluate", "score explanations and ratings");
    CLI::App* sub_agreement = app.add_subcommand("agreement", "cross-retriever agreement");
    CLI::App* sub_synth = app.add_subcommand("synth", "generate the synthetic fixture");
    for (CLI::App* sub : {sub_ingest, sub_embed, sub_train, sub_retrieve, sub_explain,
                          sub_evaluate, sub_agreement, sub_synth})
        add_common(sub);
    sub_retrieve->add_option("--user", user, "user id");
    sub_retrieve->add_option("--item", item, "item id");
    sub_explain->add_option("--user", user, "user id");
    sub_explain->add_option("--item", item, "item id");

    std::vector<const char*> argv;
    argv.push_back("prag");
    for (const auto& a : args) argv.push_back(a.c_str());
    try {
        app.parse(static_cast<int>(argv.size()), argv.data());
    } catch (const CLI::CallForHelp& e) {
        out << app.help();
        return 0;
    } catch (const CLI::ParseError& e) {
        json j;
        j["error"] = {{"kind", "validation"}, {"message", e.what()}};
        err << j.dump() << "\n";
        return 3;
    }

    try {
        RunContext ctx;
        ctx.stdout_stream = &out;
        if (!config_path.empty()) {
            if (!path_exists(config_path))
                throw Error::missing("config file not found: " + config_path);
            ctx.cfg = json::parse(read_text_file(config_path), nullptr, false);
            if (ctx.cfg.is_discarded() || !ctx.cfg.is_object())
                throw Error::validation("config file is not a JSON object: " + config_path);
        }
        apply_env_overrides(ctx.cfg);
        if (seed_flag >= 0) ctx.cfg["seed"] = static_cast<uint64_t>(seed_flag);
        if (!out_dir.empty()) ctx.cfg["out"] = out_dir;
        ctx.seed = ctx.cfg.value("seed", 0ull);
        ctx.out_dir = ctx.cfg.value("out", std::string("out"));

        if (sub_ingest->parsed()) return cmd_ingest(ctx);
        if (sub_embed->parsed()) return cmd_embed(ctx);
        if (sub_train->parsed()) return cmd_train(ctx);
        if (sub_retrieve->parsed()) return cmd_retrieve(ctx, user, item);
        if (sub_explain->parsed()) return cmd_explain(ctx, user, item);
        if (sub_evaluate->parsed()) return cmd_evaluate(ctx);
        if (sub_agreement->parsed()) return cmd_agreement(ctx);
        if (sub_synth->parsed()) return cmd_synth(ctx);
        throw Error::validation("unknown subcommand");
    } catch (const Error& e) {
        json j;
        j["error"] = {{"kind", error_kind_name(e.kind())}, {"message", e.what()}};
        err << j.dump() << "\n";
        switch (e.kind()) {
            case ErrorKind::missing_artifact: return 2;
            case ErrorKind::validation: return 3;
            default: return 1;
        }
    } catch (const std::exception& e) {
        json j;
        j["error"] = {{"kind", "runtime"}, {"message", e.what()}};
        err << j.dump() << "\n";
        return 1;
    }
}

}  // namespace prag
