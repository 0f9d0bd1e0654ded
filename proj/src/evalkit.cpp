#include "prag/evalkit.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <cstdio>
#include <map>
#include <set>
#include <sstream>

#include <httplib.h>
#include <json.hpp>

#include "prag/error.hpp"

namespace prag {

using nlohmann::json;

double OverlapNliScorer::score(const std::string& premise, const std::string& hypothesis) {
    auto prem = content_tokens(premise);
    auto hyp = content_tokens(hypothesis);
    std::set<std::string> prem_set(prem.begin(), prem.end());
    std::set<std::string> hyp_set(hyp.begin(), hyp.end());
    if (hyp_set.empty()) return 0.0;
    size_t covered = 0;
    for (const auto& t : hyp_set)
        if (prem_set.count(t)) ++covered;
    double recall = static_cast<double>(covered) / static_cast<double>(hyp_set.size());
    return recall >= 0.8 ? 1.0 : recall;
}

HttpNliScorer::HttpNliScorer(std::string endpoint) : endpoint_(std::move(endpoint)) {
    if (endpoint_.empty()) throw Error::validation("http NLI scorer needs an endpoint");
}

double HttpNliScorer::score(const std::string& premise, const std::string& hypothesis) {
    httplib::Client client(endpoint_);
    client.set_connection_timeout(5);
    client.set_read_timeout(30);
    json req;
    req["premise"] = premise;
    req["hypothesis"] = hypothesis;
    auto res = client.Post("/nli", req.dump(), "application/json");
    if (!res || res->status != 200)
        throw Error::backend("NLI endpoint unreachable: " + endpoint_);
    json body = json::parse(res->body, nullptr, false);
    if (body.is_discarded() || !body.contains("probability"))
        throw Error::backend("NLI endpoint returned malformed response");
    double p = body["probability"].get<double>();
    if (!std::isfinite(p) || p < 0.0 || p > 1.0)
        throw Error::backend("NLI probability out of [0,1]");
    return p;
}

namespace {

std::vector<std::string> ngrams(const std::vector<std::string>& tokens, size_t n) {
    std::vector<std::string> out;
    if (tokens.size() < n) return out;
    for (size_t i = 0; i + n <= tokens.size(); ++i) {
        std::string g = tokens[i];
        for (size_t j = 1; j < n; ++j) {
            g += '\x1f';
            g += tokens[i + j];
        }
        out.push_back(std::move(g));
    }
    return out;
}

}  // namespace

double distinct_n(const std::vector<std::string>& texts, size_t n) {
    if (texts.empty()) throw Error::validation("distinct_n requires texts");
    if (n < 1) throw Error::validation("distinct_n requires n >= 1");
    std::set<std::string> distinct;
    uint64_t total = 0;
    for (const auto& text : texts) {
        for (auto& g : ngrams(tokenize(text), n)) {
            distinct.insert(std::move(g));
            ++total;
        }
    }
    if (total == 0) return 0.0;
    return static_cast<double>(distinct.size()) / static_cast<double>(total);
}

double usr(const std::vector<std::string>& texts) {
    if (texts.empty()) throw Error::validation("usr requires texts");
    std::set<std::string> distinct;
    for (const auto& text : texts) {
        std::string norm;
        bool in_ws = true;
        for (char c : text) {
            bool ws = c == ' ' || c == '\t' || c == '\n' || c == '\r';
            if (ws) {
                if (!in_ws) norm += ' ';
                in_ws = true;
            } else {
                norm += static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
                in_ws = false;
            }
        }
        while (!norm.empty() && norm.back() == ' ') norm.pop_back();
        distinct.insert(std::move(norm));
    }
    return static_cast<double>(distinct.size()) / static_cast<double>(texts.size());
}

double entr(const std::vector<std::string>& texts, const std::vector<size_t>& n_orders) {
    if (texts.empty()) throw Error::validation("entr requires texts");
    if (n_orders.empty()) throw Error::validation("entr requires at least one order");

    std::vector<std::vector<std::string>> tokenized;
    tokenized.reserve(texts.size());
    for (const auto& t : texts) tokenized.push_back(tokenize(t));

    std::vector<double> entropies;
    for (size_t n : n_orders) {
        std::map<std::string, uint64_t> counts;
        uint64_t total = 0;
        for (const auto& toks : tokenized)
            for (auto& g : ngrams(toks, n)) {
                ++counts[g];
                ++total;
            }
        if (total == 0) continue;  // order contributes no n-grams: skipped
        double h = 0.0;
        for (const auto& [g, c] : counts) {
            double p = static_cast<double>(c) / static_cast<double>(total);
            h -= p * std::log2(p);
        }
        entropies.push_back(h);
    }
    if (entropies.empty()) return 0.0;
    double log_sum = 0.0;
    for (double h : entropies) {
        if (h <= 0.0) return 0.0;  // geometric mean with a zero factor
        log_sum += std::log(h);
    }
    return std::exp(log_sum / static_cast<double>(entropies.size()));
}

EntailResult entail_ratio(const std::vector<std::pair<std::string, std::string>>& item_and_text,
                          const Corpus& corpus, NliScorer& scorer, double threshold,
                          EntailDirection direction) {
    EntailResult result;
    for (const auto& [item_id, text] : item_and_text) {
        auto it = corpus.item_index().find(item_id);
        std::vector<uint64_t> train_reviews;
        if (it != corpus.item_index().end())
            for (uint64_t id : it->second)
                if (corpus.record(id).split == Split::train) train_reviews.push_back(id);
        if (train_reviews.empty())
            throw Error::validation("item '" + item_id + "' has no train reviews to entail");

        bool factual = false;
        bool failed = false;
        for (uint64_t id : train_reviews) {
            const std::string& review = corpus.record(id).text;
            double p = 0.0;
            try {
                p = direction == EntailDirection::explanation_premise ? scorer.score(text, review)
                                                                      : scorer.score(review, text);
            } catch (const Error&) {
                failed = true;
                break;
            }
            if (p >= threshold) {
                factual = true;
                break;
            }
        }
        if (failed) {
            ++result.unevaluated;
            continue;
        }
        ++result.evaluated;
        if (factual) ++result.factual;
    }
    if (result.evaluated > 0)
        result.percent =
            100.0 * static_cast<double>(result.factual) / static_cast<double>(result.evaluated);
    return result;
}

double rmse(const std::vector<double>& predictions, const std::vector<double>& golds) {
    if (predictions.size() != golds.size())
        throw Error::validation("rmse length mismatch: " + std::to_string(predictions.size()) +
                                " vs " + std::to_string(golds.size()));
    if (predictions.empty()) throw Error::validation("rmse requires values");
    double sum = 0.0;
    for (size_t i = 0; i < predictions.size(); ++i) {
        double d = predictions[i] - golds[i];
        sum += d * d;
    }
    return std::sqrt(sum / static_cast<double>(predictions.size()));
}

EvalReport evaluate_run(const std::vector<ExplanationRow>& explanations,
                        const std::vector<PredictionRow>& predictions, const Corpus& corpus,
                        NliScorer* scorer, const EvalConfig& cfg) {
    EvalReport report;
    report.n_samples = explanations.empty() ? predictions.size() : explanations.size();

    if (!explanations.empty()) {
        std::vector<std::string> texts;
        texts.reserve(explanations.size());
        for (const auto& e : explanations) texts.push_back(e.text);
        report.d1 = distinct_n(texts, 1);
        report.d2 = distinct_n(texts, 2);
        report.entr_value = entr(texts, cfg.entr_orders);
        report.usr_value = usr(texts);
        if (texts.size() > 1 && usr(texts) * static_cast<double>(texts.size()) <= 1.0)
            report.warnings.push_back("generic output: every explanation is identical");

        if (scorer) {
            std::vector<std::pair<std::string, std::string>> pairs;
            pairs.reserve(explanations.size());
            for (const auto& e : explanations) pairs.emplace_back(e.item_id, e.text);
            EntailResult er =
                entail_ratio(pairs, corpus, *scorer, cfg.entail_threshold, cfg.direction);
            report.entail_pct = er.percent;
            report.entail_evaluated = er.evaluated;
            report.entail_factual = er.factual;
            report.entail_unevaluated = er.unevaluated;
            report.scorer_name = scorer->name();
        }
    }

    if (!predictions.empty()) {
        std::vector<double> preds, golds;
        for (const auto& p : predictions) {
            const auto& index = corpus.user_index();
            auto uit = index.find(p.user_id);
            std::optional<double> gold;
            if (uit != index.end()) {
                for (uint64_t id : uit->second) {
                    const auto& rec = corpus.record(id);
                    if (rec.item_id == p.item_id && rec.split == Split::test) {
                        gold = rec.rating;
                        break;
                    }
                }
            }
            if (!gold)
                throw Error::validation("no test record for pair (" + p.user_id + ", " +
                                        p.item_id + ")");
            preds.push_back(p.rhat);
            golds.push_back(*gold);
        }
        report.rmse_value = rmse(preds, golds);
    }
    return report;
}

std::string eval_report_json(const EvalReport& r) {
    json j;
    auto put = [&](const char* key, const std::optional<double>& v) {
        if (v) j[key] = *v; else j[key] = nullptr;
    };
    put("entail_pct", r.entail_pct);
    put("d1", r.d1);
    put("d2", r.d2);
    put("entr", r.entr_value);
    put("usr", r.usr_value);
    put("rmse", r.rmse_value);
    j["n_samples"] = r.n_samples;
    j["warnings"] = r.warnings;
    json meta;
    meta["scorer"] = r.scorer_name;
    meta["entail_evaluated"] = r.entail_evaluated;
    meta["entail_factual"] = r.entail_factual;
    meta["entail_unevaluated"] = r.entail_unevaluated;
    j["metadata"] = meta;
    return j.dump(2) + "\n";
}

std::vector<ExplanationRow> parse_explanations_jsonl(const std::string& content) {
    std::vector<ExplanationRow> out;
    std::istringstream in(content);
    std::string line;
    size_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
        json obj = json::parse(line, nullptr, false);
        if (obj.is_discarded() || !obj.contains("user") || !obj.contains("item") ||
            !obj.contains("text"))
            throw Error::validation("explanations line " + std::to_string(line_no) +
                                    ": expected {user, item, text}");
        out.push_back({obj["user"].get<std::string>(), obj["item"].get<std::string>(),
                       obj["text"].get<std::string>()});
    }
    return out;
}

std::vector<PredictionRow> parse_predictions_csv(const std::string& content) {
    std::vector<PredictionRow> out;
    std::istringstream in(content);
    std::string line;
    size_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line.empty()) continue;
        if (line_no == 1 && line == "user,item,r_hat") continue;
        size_t c1 = line.find(',');
        size_t c2 = c1 == std::string::npos ? std::string::npos : line.find(',', c1 + 1);
        if (c1 == std::string::npos || c2 == std::string::npos)
            throw Error::validation("predictions line " + std::to_string(line_no) +
                                    ": expected user,item,r_hat");
        PredictionRow row;
        row.user_id = line.substr(0, c1);
        row.item_id = line.substr(c1 + 1, c2 - c1 - 1);
        try {
            row.rhat = std::stod(line.substr(c2 + 1));
        } catch (const std::exception&) {
            throw Error::validation("predictions line " + std::to_string(line_no) +
                                    ": r_hat not numeric");
        }
        out.push_back(std::move(row));
    }
    return out;
}

std::string predictions_csv(const std::vector<PredictionRow>& rows) {
    std::ostringstream out;
    out << "user,item,r_hat\n";
    char buf[64];
    for (const auto& r : rows) {
        std::snprintf(buf, sizeof(buf), "%.17g", r.rhat);
        out << r.user_id << ',' << r.item_id << ',' << buf << "\n";
    }
    return out.str();
}

}  // namespace prag
