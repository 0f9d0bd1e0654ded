#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "prag/corpus.hpp"

namespace prag {

// Entailment probability scorer. score(premise, hypothesis) in [0,1],
// deterministic.
class NliScorer {
public:
    virtual ~NliScorer() = default;
    virtual const std::string& name() const = 0;
    virtual double score(const std::string& premise, const std::string& hypothesis) = 0;
};

// Test/desk stub: content-token recall of the hypothesis against the premise;
// recall >= 0.8 scores 1, otherwise the recall itself. Reported runs must name
// a real scorer.
class OverlapNliScorer : public NliScorer {
public:
    const std::string& name() const override { return name_; }
    double score(const std::string& premise, const std::string& hypothesis) override;

private:
    std::string name_ = "overlap-stub";
};

// Adapter for an external NLI service: POST <endpoint>/nli with
// {"premise","hypothesis"} returning {"probability": p}.
class HttpNliScorer : public NliScorer {
public:
    explicit HttpNliScorer(std::string endpoint);
    const std::string& name() const override { return name_; }
    double score(const std::string& premise, const std::string& hypothesis) override;

private:
    std::string endpoint_;
    std::string name_ = "http-nli";
};

// distinct n-grams / total n-grams over all texts; 0 when no n-grams exist.
double distinct_n(const std::vector<std::string>& texts, size_t n);

// distinct normalized texts (lowercased, whitespace-collapsed) / total texts.
double usr(const std::vector<std::string>& texts);

// Geometric mean over n_orders of the base-2 Shannon entropy of the pooled
// n-gram distribution. Orders with no n-grams are skipped; an included order
// with zero entropy makes the result 0.
double entr(const std::vector<std::string>& texts, const std::vector<size_t>& n_orders = {1, 2, 3});

enum class EntailDirection { explanation_premise, review_premise };

struct EntailResult {
    double percent = 0.0;  // 100 * factual / evaluated
    uint64_t evaluated = 0;
    uint64_t factual = 0;
    uint64_t unevaluated = 0;  // scorer failures, excluded from the denominator
};

// An explanation is factual when the max directional entailment probability
// against the item's train reviews reaches the threshold.
EntailResult entail_ratio(const std::vector<std::pair<std::string, std::string>>& item_and_text,
                          const Corpus& corpus, NliScorer& scorer, double threshold = 0.5,
                          EntailDirection direction = EntailDirection::explanation_premise);

double rmse(const std::vector<double>& predictions, const std::vector<double>& golds);

struct ExplanationRow {
    std::string user_id;
    std::string item_id;
    std::string text;
};

struct PredictionRow {
    std::string user_id;
    std::string item_id;
    double rhat;
};

struct EvalConfig {
    double entail_threshold = 0.5;
    EntailDirection direction = EntailDirection::explanation_premise;
    std::vector<size_t> entr_orders = {1, 2, 3};
};

struct EvalReport {
    std::optional<double> entail_pct;
    std::optional<double> d1;
    std::optional<double> d2;
    std::optional<double> entr_value;
    std::optional<double> usr_value;
    std::optional<double> rmse_value;
    uint64_t n_samples = 0;
    std::vector<std::string> warnings;
    std::string scorer_name;
    uint64_t entail_evaluated = 0;
    uint64_t entail_factual = 0;
    uint64_t entail_unevaluated = 0;
};

// Assembles every metric; golds for RMSE come from the corpus test records
// matching each prediction's (user, item). scorer == nullptr skips Entail.
EvalReport evaluate_run(const std::vector<ExplanationRow>& explanations,
                        const std::vector<PredictionRow>& predictions, const Corpus& corpus,
                        NliScorer* scorer, const EvalConfig& cfg);

std::string eval_report_json(const EvalReport& report);

std::vector<ExplanationRow> parse_explanations_jsonl(const std::string& content);
std::vector<PredictionRow> parse_predictions_csv(const std::string& content);
std::string predictions_csv(const std::vector<PredictionRow>& rows);

}  // namespace prag
