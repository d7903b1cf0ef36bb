#pragma once

#include <cstdint>
#include <json.hpp>
#include <optional>
#include <string>
#include <vector>

#include "vmsst/corpus/vocabulary.hpp"

namespace vmsst::corpus {

struct CorpusSpec {
    std::size_t n_languages = 4;
    std::size_t n_concepts = 64;
    std::size_t min_sentence_len = 4;  // concepts per sentence
    std::size_t max_sentence_len = 10;
    std::size_t n_train_pairs = 20000;
    std::vector<std::size_t> pivot_languages{0, 1};
    double noise_rate = 0.1;             // filler insertion probability per position
    double permutation_strength = 0.3;   // bounded local reordering in [0, 1]
    std::vector<std::size_t> holdout_languages;
    std::size_t fillers_per_language = 8;
    std::uint64_t seed = 1;

    // Evaluation set sizes.
    std::size_t n_sts_pairs = 200;          // per STS set
    double sts_max_perturbation = 1.0;      // fraction of concepts that may be replaced
    std::size_t n_tatoeba_pairs = 200;      // per non-reference language
    std::size_t n_mining_gold = 150;
    std::size_t n_mining_distractors = 50;  // per side
    std::size_t n_retrieval_kb = 300;
    std::size_t n_retrieval_queries = 200;  // per query set

    // Throws ConfigError naming the offending field.
    void validate() const;
    std::vector<std::size_t> trainable_languages() const;
    bool is_holdout(std::size_t language) const;
    bool operator==(const CorpusSpec&) const = default;
};

void to_json(nlohmann::json& j, const CorpusSpec& s);
void from_json(const nlohmann::json& j, CorpusSpec& s);

// Per-language rendering rule. Surface ids index the corpus vocabulary.
struct SyntheticLanguage {
    std::size_t id = 0;
    std::vector<std::int32_t> concept_tokens;  // concept -> surface id (bijection)
    std::vector<std::int32_t> filler_tokens;
    bool reversed = false;
};

struct Sentence {
    std::int32_t language = 0;
    std::vector<std::string> tokens;
    bool operator==(const Sentence&) const = default;
};

struct ParallelPair {
    Sentence a;
    Sentence b;
    std::optional<double> gold_similarity;
    bool operator==(const ParallelPair&) const = default;
};

// Source and target pools with gold (source index, target index) alignments.
struct MiningSet {
    std::vector<Sentence> source;
    std::vector<Sentence> target;
    std::vector<std::pair<std::size_t, std::size_t>> gold;
};

// Queries carry the index of their single gold knowledge-base entry.
struct QuerySet {
    std::vector<Sentence> queries;
    std::vector<std::size_t> gold;
};

struct RetrievalSet {
    std::vector<Sentence> kb;
    QuerySet primary;       // pivot-language queries
    QuerySet multilingual;  // mixed-language queries
};

struct Corpus {
    CorpusSpec spec;
    Vocabulary vocab;
    std::vector<SyntheticLanguage> languages;
    std::vector<ParallelPair> train;
    std::vector<ParallelPair> sts_monolingual;   // both sides in language 0
    std::vector<ParallelPair> sts_crosslingual;  // language 0 vs another language
    std::vector<ParallelPair> tatoeba;           // language 0 vs every other language
    MiningSet mining;
    RetrievalSet retrieval;
};

// Vocabulary and language rules depend only on (n_languages, n_concepts,
// fillers_per_language, seed).
Vocabulary build_vocabulary(const CorpusSpec& spec);
std::vector<SyntheticLanguage> build_languages(const CorpusSpec& spec, const Vocabulary& vocab);

Corpus generate_corpus(const CorpusSpec& spec);

// Multiset Jaccard similarity scaled to [0, 5].
double concept_similarity(const std::vector<std::int32_t>& x, const std::vector<std::int32_t>& y);

// Surface block of a language: the language whose rendering owns `id`, or
// nullopt for reserved and language-start ids.
std::optional<std::size_t> surface_language(const CorpusSpec& spec, std::int32_t id);

}  // namespace vmsst::corpus
