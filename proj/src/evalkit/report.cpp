#include "vmsst/evalkit/report.hpp"

#include <cmath>
#include <cstdio>
#include <sstream>

#include "vmsst/numcore/errors.hpp"

namespace vmsst::evalkit {

namespace {

constexpr const char* headline_names[] = {"sts_english",          "sts_crosslingual",     "tatoeba_acc",
                                          "bucc_cosine_f1",       "bucc_margin_f1",       "retrieval_r1_primary",
                                          "retrieval_r1_multilingual"};

std::optional<double>* headline_field(EvalReport& r, std::size_t i) {
    std::optional<double>* fields[] = {&r.sts_english,    &r.sts_crosslingual,     &r.tatoeba_acc,
                                       &r.bucc_cosine_f1, &r.bucc_margin_f1,       &r.retrieval_r1_primary,
                                       &r.retrieval_r1_multilingual};
    return fields[i];
}

nlohmann::json opt(const std::optional<double>& v) { return v ? nlohmann::json(*v) : nlohmann::json(nullptr); }

std::optional<double> opt_from(const nlohmann::json& j, const char* key) {
    if (!j.contains(key) || j.at(key).is_null()) return std::nullopt;
    if (!j.at(key).is_number()) throw FormatError(std::string("report field ") + key + " is not a number");
    return j.at(key).get<double>();
}

void require_nonempty(std::size_t n, const char* set) {
    if (n == 0) throw ContractError(std::string("evaluation set '") + set + "' is empty");
}

std::vector<corpus::Sentence> side(const std::vector<corpus::ParallelPair>& pairs, bool first) {
    std::vector<corpus::Sentence> out;
    for (const auto& p : pairs) out.push_back(first ? p.a : p.b);
    return out;
}

struct StsScores {
    double pearson, spearman;
};

StsScores score_sts(const EmbeddingMatrix& a, const EmbeddingMatrix& b, std::span<const double> gold) {
    std::vector<double> predicted;
    for (std::size_t i = 0; i < a.rows; ++i) predicted.push_back(cosine(a.row(i), b.row(i)));
    return {pearson(predicted, gold), spearman(predicted, gold)};
}

std::vector<double> gold_scores(const std::vector<corpus::ParallelPair>& pairs, const char* set) {
    std::vector<double> out;
    for (const auto& p : pairs) {
        if (!p.gold_similarity) throw ContractError(std::string("evaluation set '") + set + "' lacks gold scores");
        out.push_back(*p.gold_similarity);
    }
    return out;
}

std::map<std::size_t, std::vector<std::size_t>> rows_by_language(const std::vector<corpus::Sentence>& sentences) {
    std::map<std::size_t, std::vector<std::size_t>> out;
    for (std::size_t i = 0; i < sentences.size(); ++i) out[static_cast<std::size_t>(sentences[i].language)].push_back(i);
    return out;
}

std::string fixed1(const std::optional<double>& v) {
    if (!v) return "-";
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.1f", round1(*v));
    return buf;
}

}  // namespace

double round1(double value) { return std::round(value * 10.0) / 10.0; }

double overall_score(const EvalReport& report) {
    EvalReport copy = report;
    for (std::size_t i = 0; i < 7; ++i) {
        if (!*headline_field(copy, i)) throw ContractError(std::string("overall score: missing ") + headline_names[i]);
    }
    const double bucc = (*report.bucc_cosine_f1 + *report.bucc_margin_f1) / 2.0;
    return (*report.sts_english + *report.sts_crosslingual + *report.tatoeba_acc + bucc +
            *report.retrieval_r1_primary + *report.retrieval_r1_multilingual) /
           6.0;
}

SeparationStats separation_stats(const EmbeddingMatrix& src, const EmbeddingMatrix& tgt) {
    if (src.rows != tgt.rows) throw AlignmentError("separation: row counts differ");
    if (src.rows < 2) throw ContractError("separation: need at least two pairs");
    const CosineMatrix c(src, tgt);
    double pair = 0, nonpair = 0;
    for (std::size_t i = 0; i < c.rows(); ++i) {
        for (std::size_t j = 0; j < c.cols(); ++j) (i == j ? pair : nonpair) += c(i, j);
    }
    const double n = static_cast<double>(src.rows);
    SeparationStats s;
    s.pair_cosine = pair / n;
    s.nonpair_cosine = nonpair / (n * (n - 1));
    s.background_cosine = (pair + nonpair) / (n * n);
    return s;
}

FullReport evaluate(const model::Model<float>& model, const corpus::Corpus& corpus, const EvalOptions& options) {
    const auto& vocab = corpus.vocab;
    auto embed = [&](const std::vector<corpus::Sentence>& s) { return embed_sentences(model, s, vocab); };
    FullReport report;
    auto& h = report.headline;

    require_nonempty(corpus.sts_monolingual.size(), "sts_monolingual");
    {
        const auto gold = gold_scores(corpus.sts_monolingual, "sts_monolingual");
        const auto s = score_sts(embed(side(corpus.sts_monolingual, true)), embed(side(corpus.sts_monolingual, false)),
                                 gold);
        h.sts_english = 100 * s.pearson;
        report.sts_english_spearman = 100 * s.spearman;
    }

    require_nonempty(corpus.sts_crosslingual.size(), "sts_crosslingual");
    {
        const auto gold = gold_scores(corpus.sts_crosslingual, "sts_crosslingual");
        const auto b_side = side(corpus.sts_crosslingual, false);
        const auto ea = embed(side(corpus.sts_crosslingual, true)), eb = embed(b_side);
        const auto s = score_sts(ea, eb, gold);
        h.sts_crosslingual = 100 * s.pearson;
        report.sts_crosslingual_spearman = 100 * s.spearman;
        for (const auto& [lang, rows] : rows_by_language(b_side)) {
            std::vector<double> g;
            for (auto r : rows) g.push_back(gold[r]);
            try {
                report.per_language[lang].sts_crosslingual = 100 * score_sts(ea.select(rows), eb.select(rows), g).pearson;
            } catch (const DegenerateDataError&) {
                // Too few or constant scores for this language; leave it unset.
            }
        }
    }

    require_nonempty(corpus.tatoeba.size(), "tatoeba");
    {
        const auto b_side = side(corpus.tatoeba, false);
        const auto ea = embed(side(corpus.tatoeba, true)), eb = embed(b_side);
        double sum = 0;
        const auto groups = rows_by_language(b_side);
        for (const auto& [lang, rows] : groups) {
            const double acc = tatoeba_accuracy(ea.select(rows), eb.select(rows)).mean;
            report.per_language[lang].tatoeba_acc = 100 * acc;
            sum += acc;
        }
        h.tatoeba_acc = 100 * sum / static_cast<double>(groups.size());
        if (ea.rows >= 2) report.separation = separation_stats(ea, eb);
    }

    require_nonempty(corpus.mining.gold.size(), "mining");
    {
        const auto s = embed(corpus.mining.source), t = embed(corpus.mining.target);
        h.bucc_cosine_f1 = 100 * mine_pairs(s, t, MiningMethod::cosine, corpus.mining.gold, options.margin).f1;
        h.bucc_margin_f1 = 100 * mine_pairs(s, t, MiningMethod::margin, corpus.mining.gold, options.margin).f1;
        if (t.rows > options.hubness_k) report.hubness_skewness = hubness(t, options.hubness_k).skewness;
    }

    require_nonempty(corpus.retrieval.kb.size(), "retrieval_kb");
    require_nonempty(corpus.retrieval.primary.queries.size(), "retrieval_primary");
    require_nonempty(corpus.retrieval.multilingual.queries.size(), "retrieval_multilingual");
    {
        const auto kb = embed(corpus.retrieval.kb);
        const auto& primary = corpus.retrieval.primary;
        h.retrieval_r1_primary = 100 * retrieval_r_at_1(embed(primary.queries), kb, primary.gold);
        const auto& multi = corpus.retrieval.multilingual;
        const auto eq = embed(multi.queries);
        h.retrieval_r1_multilingual = 100 * retrieval_r_at_1(eq, kb, multi.gold);
        for (const auto& [lang, rows] : rows_by_language(multi.queries)) {
            std::vector<std::size_t> g;
            for (auto r : rows) g.push_back(multi.gold[r]);
            report.per_language[lang].retrieval_r1 = 100 * retrieval_r_at_1(eq.select(rows), kb, g);
        }
    }

    for (auto& [lang, breakdown] : report.per_language) breakdown.holdout = corpus.spec.is_holdout(lang) ? 1 : 0;
    h.overall_score = overall_score(h);
    return report;
}

nlohmann::json to_json(const FullReport& report) {
    nlohmann::json metrics = nlohmann::json::object();
    EvalReport h = report.headline;
    for (std::size_t i = 0; i < 7; ++i) metrics[headline_names[i]] = opt(*headline_field(h, i));
    metrics["overall_score"] = opt(h.overall_score);

    nlohmann::json per_language = nlohmann::json::object();
    for (const auto& [lang, b] : report.per_language) {
        per_language[std::to_string(lang)] = {{"tatoeba_acc", opt(b.tatoeba_acc)},
                                              {"sts_crosslingual", opt(b.sts_crosslingual)},
                                              {"retrieval_r1", opt(b.retrieval_r1)},
                                              {"holdout", b.holdout ? nlohmann::json(*b.holdout == 1) : nullptr}};
    }

    nlohmann::json j = {{"metrics", metrics},
                        {"spearman",
                         {{"sts_english", opt(report.sts_english_spearman)},
                          {"sts_crosslingual", opt(report.sts_crosslingual_spearman)}}},
                        {"per_language", per_language},
                        {"hubness_skewness", opt(report.hubness_skewness)},
                        {"provenance", report.provenance}};
    if (report.separation) {
        j["separation"] = {{"pair_cosine", report.separation->pair_cosine},
                           {"nonpair_cosine", report.separation->nonpair_cosine},
                           {"background_cosine", report.separation->background_cosine},
                           {"gap", report.separation->gap()}};
    } else {
        j["separation"] = nullptr;
    }
    return j;
}

FullReport report_from_json(const nlohmann::json& j) {
    if (!j.is_object() || !j.contains("metrics") || !j.at("metrics").is_object()) {
        throw FormatError("report: missing 'metrics' object");
    }
    FullReport r;
    const auto& m = j.at("metrics");
    for (std::size_t i = 0; i < 7; ++i) *headline_field(r.headline, i) = opt_from(m, headline_names[i]);
    r.headline.overall_score = opt_from(m, "overall_score");
    if (j.contains("spearman") && j.at("spearman").is_object()) {
        r.sts_english_spearman = opt_from(j.at("spearman"), "sts_english");
        r.sts_crosslingual_spearman = opt_from(j.at("spearman"), "sts_crosslingual");
    }
    if (j.contains("per_language") && j.at("per_language").is_object()) {
        for (const auto& [key, v] : j.at("per_language").items()) {
            LanguageBreakdown b;
            b.tatoeba_acc = opt_from(v, "tatoeba_acc");
            b.sts_crosslingual = opt_from(v, "sts_crosslingual");
            b.retrieval_r1 = opt_from(v, "retrieval_r1");
            if (v.contains("holdout") && v.at("holdout").is_boolean()) b.holdout = v.at("holdout").get<bool>() ? 1 : 0;
            r.per_language[std::stoul(key)] = b;
        }
    }
    if (j.contains("separation") && j.at("separation").is_object()) {
        const auto& s = j.at("separation");
        r.separation = SeparationStats{s.at("pair_cosine").get<double>(), s.at("nonpair_cosine").get<double>(),
                                       s.at("background_cosine").get<double>()};
    }
    r.hubness_skewness = opt_from(j, "hubness_skewness");
    if (j.contains("provenance")) r.provenance = j.at("provenance");
    return r;
}

std::string format_text(const FullReport& report) {
    std::ostringstream out;
    EvalReport h = report.headline;
    char line[96];
    for (std::size_t i = 0; i < 7; ++i) {
        std::snprintf(line, sizeof line, "%-28s %8s\n", headline_names[i], fixed1(*headline_field(h, i)).c_str());
        out << line;
    }
    std::snprintf(line, sizeof line, "%-28s %8s\n", "overall_score", fixed1(h.overall_score).c_str());
    out << line;
    if (!report.per_language.empty()) {
        std::snprintf(line, sizeof line, "\n%-10s %8s %8s %8s\n", "language", "tatoeba", "sts-x", "r@1");
        out << line;
        for (const auto& [lang, b] : report.per_language) {
            std::snprintf(line, sizeof line, "%-10s %8s %8s %8s%s\n", std::to_string(lang).c_str(),
                          fixed1(b.tatoeba_acc).c_str(), fixed1(b.sts_crosslingual).c_str(),
                          fixed1(b.retrieval_r1).c_str(), b.holdout.value_or(0) ? "  (holdout)" : "");
            out << line;
        }
    }
    return out.str();
}

}  // namespace vmsst::evalkit
