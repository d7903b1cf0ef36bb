#pragma once

#include <json.hpp>
#include <map>
#include <optional>
#include <string>

#include "vmsst/evalkit/metrics.hpp"

namespace vmsst::evalkit {

// Headline metrics, each scaled by 100.
struct EvalReport {
    std::optional<double> sts_english;
    std::optional<double> sts_crosslingual;
    std::optional<double> tatoeba_acc;
    std::optional<double> bucc_cosine_f1;
    std::optional<double> bucc_margin_f1;
    std::optional<double> retrieval_r1_primary;
    std::optional<double> retrieval_r1_multilingual;
    std::optional<double> overall_score;
};

// Mean of the six subtasks, with the two mining scores averaged into one.
// Throws ContractError naming the first missing field.
double overall_score(const EvalReport& report);

// Rounds half away from zero to one decimal, as tables are printed.
double round1(double value);

struct LanguageBreakdown {
    std::optional<double> tatoeba_acc;
    std::optional<double> sts_crosslingual;
    std::optional<double> retrieval_r1;
    std::optional<std::size_t> holdout;  // 1 when the language was never trained on
};

// Geometry of translation pairs in the bidirectional-accuracy set.
struct SeparationStats {
    double pair_cosine = 0;        // mean cos over aligned rows
    double nonpair_cosine = 0;     // mean cos over misaligned rows
    double background_cosine = 0;  // mean cos over all rows
    double gap() const { return pair_cosine - nonpair_cosine; }
};

SeparationStats separation_stats(const EmbeddingMatrix& src, const EmbeddingMatrix& tgt);

struct FullReport {
    EvalReport headline;
    std::optional<double> sts_english_spearman;
    std::optional<double> sts_crosslingual_spearman;
    std::map<std::size_t, LanguageBreakdown> per_language;
    std::optional<SeparationStats> separation;
    std::optional<double> hubness_skewness;
    nlohmann::json provenance = nlohmann::json::object();  // config hash, seed, checkpoint
};

struct EvalOptions {
    MarginOptions margin;
    std::size_t hubness_k = 4;
};

// Embeds every evaluation set of the corpus and scores all six subtasks.
// Throws ContractError naming any evaluation set that is empty.
FullReport evaluate(const model::Model<float>& model, const corpus::Corpus& corpus, const EvalOptions& options = {});

nlohmann::json to_json(const FullReport& report);
FullReport report_from_json(const nlohmann::json& j);
// Fixed-width table with one decimal per metric.
std::string format_text(const FullReport& report);

}  // namespace vmsst::evalkit
