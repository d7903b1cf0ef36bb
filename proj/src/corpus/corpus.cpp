#include "vmsst/corpus/corpus.hpp"

#include <algorithm>
#include <map>
#include <set>

#include "vmsst/numcore/errors.hpp"
#include "vmsst/numcore/random.hpp"
#include "vmsst/tokens.hpp"

namespace vmsst::corpus {

namespace {

void require(bool ok, const char* field, const std::string& why) {
    if (!ok) throw ConfigError(std::string("corpus.") + field + ": " + why);
}

bool contains(const std::vector<std::size_t>& set, std::size_t x) {
    return std::find(set.begin(), set.end(), x) != set.end();
}

// Independent streams per artifact, so resizing one set leaves the others as
// they were.
enum StreamTag : std::uint64_t { languages_tag = 1, sts_tag, tatoeba_tag, mining_tag, retrieval_tag, train_tag };

std::size_t uniform_index(num::Rng& rng, std::size_t n) {
    return std::uniform_int_distribution<std::size_t>(0, n - 1)(rng);
}

class Generator {
public:
    Generator(const CorpusSpec& spec, const std::vector<SyntheticLanguage>& languages, const Vocabulary& vocab)
        : spec_(spec), languages_(languages), vocab_(vocab) {}

    std::vector<std::int32_t> draw_concepts(num::Rng& rng) {
        const std::size_t len = spec_.min_sentence_len +
                                uniform_index(rng, spec_.max_sentence_len - spec_.min_sentence_len + 1);
        std::vector<std::int32_t> pool(spec_.n_concepts);
        for (std::size_t i = 0; i < pool.size(); ++i) pool[i] = static_cast<std::int32_t>(i);
        for (std::size_t i = 0; i < len; ++i) std::swap(pool[i], pool[i + uniform_index(rng, pool.size() - i)]);
        pool.resize(len);
        return pool;
    }

    // Evaluation sentences are unique across all evaluation sets.
    std::vector<std::int32_t> draw_eval_concepts(num::Rng& rng) {
        for (int attempt = 0; attempt < 1000; ++attempt) {
            auto c = draw_concepts(rng);
            if (eval_keys_.insert(key(c)).second) return c;
        }
        throw ConfigError("corpus: cannot draw enough distinct evaluation sentences; raise n_concepts or "
                          "shrink the evaluation sets");
    }

    std::vector<std::int32_t> draw_train_concepts(num::Rng& rng) {
        for (int attempt = 0; attempt < 1000; ++attempt) {
            auto c = draw_concepts(rng);
            if (!eval_keys_.count(key(c))) return c;
        }
        throw ConfigError("corpus: evaluation sets exhaust the concept space; raise n_concepts");
    }

    Sentence render(std::size_t language, const std::vector<std::int32_t>& concepts, num::Rng& rng) const {
        const auto& lang = languages_[language];
        std::vector<std::int32_t> ids;
        for (auto c : concepts) ids.push_back(lang.concept_tokens[static_cast<std::size_t>(c)]);
        if (lang.reversed) std::reverse(ids.begin(), ids.end());

        // Bounded local reordering: each token moves at most ~3 positions.
        if (spec_.permutation_strength > 0 && ids.size() > 1) {
            std::uniform_real_distribution<double> u(0.0, 1.0);
            std::vector<std::pair<double, std::int32_t>> keyed;
            for (std::size_t i = 0; i < ids.size(); ++i) {
                keyed.emplace_back(static_cast<double>(i) + 3.0 * spec_.permutation_strength * u(rng), ids[i]);
            }
            std::stable_sort(keyed.begin(), keyed.end(),
                             [](const auto& x, const auto& y) { return x.first < y.first; });
            for (std::size_t i = 0; i < ids.size(); ++i) ids[i] = keyed[i].second;
        }

        Sentence s;
        s.language = static_cast<std::int32_t>(language);
        std::bernoulli_distribution filler(spec_.noise_rate);
        for (auto id : ids) {
            if (spec_.noise_rate > 0 && filler(rng)) {
                s.tokens.push_back(vocab_.token(lang.filler_tokens[uniform_index(rng, lang.filler_tokens.size())]));
            }
            s.tokens.push_back(vocab_.token(id));
        }
        return s;
    }

    // Replaces up to sts_max_perturbation of the concepts by unused ones.
    std::vector<std::int32_t> perturb(const std::vector<std::int32_t>& concepts, num::Rng& rng) const {
        const auto max_replace = static_cast<std::size_t>(spec_.sts_max_perturbation * static_cast<double>(concepts.size()));
        std::size_t replace = uniform_index(rng, max_replace + 1);
        std::vector<std::int32_t> unused;
        for (std::size_t c = 0; c < spec_.n_concepts; ++c) {
            const auto ci = static_cast<std::int32_t>(c);
            if (std::find(concepts.begin(), concepts.end(), ci) == concepts.end()) unused.push_back(ci);
        }
        replace = std::min(replace, unused.size());
        std::vector<std::size_t> positions(concepts.size());
        for (std::size_t i = 0; i < positions.size(); ++i) positions[i] = i;
        std::shuffle(positions.begin(), positions.end(), rng);
        std::shuffle(unused.begin(), unused.end(), rng);
        auto out = concepts;
        for (std::size_t r = 0; r < replace; ++r) out[positions[r]] = unused[r];
        return out;
    }

private:
    static std::vector<std::int32_t> key(std::vector<std::int32_t> c) {
        std::sort(c.begin(), c.end());
        return c;
    }

    const CorpusSpec& spec_;
    const std::vector<SyntheticLanguage>& languages_;
    const Vocabulary& vocab_;
    std::set<std::vector<std::int32_t>> eval_keys_;
};

std::size_t block_size(const CorpusSpec& spec) { return spec.n_concepts + spec.fillers_per_language; }

std::int32_t block_start(const CorpusSpec& spec, std::size_t language) {
    return static_cast<std::int32_t>(static_cast<std::size_t>(tokens::reserved_count) + spec.n_languages +
                                     language * block_size(spec));
}

}  // namespace

void CorpusSpec::validate() const {
    require(n_languages >= 2, "n_languages", "must be at least 2");
    require(n_concepts >= 1, "n_concepts", "must be positive");
    require(min_sentence_len >= 1 && min_sentence_len <= max_sentence_len, "min_sentence_len",
            "must satisfy 1 <= min_sentence_len <= max_sentence_len");
    require(max_sentence_len <= n_concepts, "max_sentence_len",
            "exceeds n_concepts; concepts are drawn without replacement");
    require(n_train_pairs >= 1, "n_train_pairs", "must be at least 1");
    require(!pivot_languages.empty(), "pivot_languages", "must not be empty");
    std::set<std::size_t> seen;
    for (auto p : pivot_languages) {
        require(p < n_languages, "pivot_languages", "language " + std::to_string(p) + " does not exist");
        require(seen.insert(p).second, "pivot_languages", "duplicate language " + std::to_string(p));
    }
    seen.clear();
    for (auto h : holdout_languages) {
        require(h < n_languages, "holdout_languages", "language " + std::to_string(h) + " does not exist");
        require(!contains(pivot_languages, h), "holdout_languages",
                "language " + std::to_string(h) + " is also a pivot");
        require(seen.insert(h).second, "holdout_languages", "duplicate language " + std::to_string(h));
    }
    require(trainable_languages().size() >= 2, "holdout_languages", "fewer than two trainable languages remain");
    require(noise_rate >= 0.0 && noise_rate < 1.0, "noise_rate", "must lie in [0, 1)");
    require(noise_rate == 0.0 || fillers_per_language >= 1, "fillers_per_language",
            "must be positive when noise_rate > 0");
    require(permutation_strength >= 0.0 && permutation_strength <= 1.0, "permutation_strength", "must lie in [0, 1]");
    require(sts_max_perturbation >= 0.0 && sts_max_perturbation <= 1.0, "sts_max_perturbation",
            "must lie in [0, 1]");
    require(n_retrieval_kb >= 1, "n_retrieval_kb", "must be at least 1");
}

std::vector<std::size_t> CorpusSpec::trainable_languages() const {
    std::vector<std::size_t> out;
    for (std::size_t l = 0; l < n_languages; ++l) {
        if (!is_holdout(l)) out.push_back(l);
    }
    return out;
}

bool CorpusSpec::is_holdout(std::size_t language) const { return contains(holdout_languages, language); }

void to_json(nlohmann::json& j, const CorpusSpec& s) {
    j = nlohmann::json{{"n_languages", s.n_languages},
                       {"n_concepts", s.n_concepts},
                       {"min_sentence_len", s.min_sentence_len},
                       {"max_sentence_len", s.max_sentence_len},
                       {"n_train_pairs", s.n_train_pairs},
                       {"pivot_languages", s.pivot_languages},
                       {"noise_rate", s.noise_rate},
                       {"permutation_strength", s.permutation_strength},
                       {"holdout_languages", s.holdout_languages},
                       {"fillers_per_language", s.fillers_per_language},
                       {"seed", s.seed},
                       {"n_sts_pairs", s.n_sts_pairs},
                       {"sts_max_perturbation", s.sts_max_perturbation},
                       {"n_tatoeba_pairs", s.n_tatoeba_pairs},
                       {"n_mining_gold", s.n_mining_gold},
                       {"n_mining_distractors", s.n_mining_distractors},
                       {"n_retrieval_kb", s.n_retrieval_kb},
                       {"n_retrieval_queries", s.n_retrieval_queries}};
}

void from_json(const nlohmann::json& j, CorpusSpec& s) {
    auto read = [&](const char* key, auto& field) {
        if (j.contains(key)) j.at(key).get_to(field);
    };
    read("n_languages", s.n_languages);
    read("n_concepts", s.n_concepts);
    read("min_sentence_len", s.min_sentence_len);
    read("max_sentence_len", s.max_sentence_len);
    read("n_train_pairs", s.n_train_pairs);
    read("pivot_languages", s.pivot_languages);
    read("noise_rate", s.noise_rate);
    read("permutation_strength", s.permutation_strength);
    read("holdout_languages", s.holdout_languages);
    read("fillers_per_language", s.fillers_per_language);
    read("seed", s.seed);
    read("n_sts_pairs", s.n_sts_pairs);
    read("sts_max_perturbation", s.sts_max_perturbation);
    read("n_tatoeba_pairs", s.n_tatoeba_pairs);
    read("n_mining_gold", s.n_mining_gold);
    read("n_mining_distractors", s.n_mining_distractors);
    read("n_retrieval_kb", s.n_retrieval_kb);
    read("n_retrieval_queries", s.n_retrieval_queries);
}

Vocabulary build_vocabulary(const CorpusSpec& spec) {
    std::vector<std::string> tokens = Vocabulary::reserved();
    for (std::size_t l = 0; l < spec.n_languages; ++l) tokens.push_back(Vocabulary::language_token(l));
    for (std::size_t l = 0; l < spec.n_languages; ++l) {
        const std::string prefix = "l" + std::to_string(l);
        for (std::size_t c = 0; c < spec.n_concepts; ++c) tokens.push_back(prefix + "w" + std::to_string(c));
        for (std::size_t f = 0; f < spec.fillers_per_language; ++f) tokens.push_back(prefix + "f" + std::to_string(f));
    }
    return Vocabulary(std::move(tokens));
}

std::vector<SyntheticLanguage> build_languages(const CorpusSpec& spec, const Vocabulary& vocab) {
    if (vocab.size() != static_cast<std::size_t>(block_start(spec, spec.n_languages))) {
        throw VocabularyError("vocabulary does not match the corpus spec");
    }
    num::Rng rng(num::mix_seed(spec.seed, languages_tag));
    std::vector<SyntheticLanguage> out;
    for (std::size_t l = 0; l < spec.n_languages; ++l) {
        SyntheticLanguage lang;
        lang.id = l;
        const std::int32_t start = block_start(spec, l);
        lang.concept_tokens.resize(spec.n_concepts);
        for (std::size_t c = 0; c < spec.n_concepts; ++c) lang.concept_tokens[c] = start + static_cast<std::int32_t>(c);
        std::shuffle(lang.concept_tokens.begin(), lang.concept_tokens.end(), rng);
        for (std::size_t f = 0; f < spec.fillers_per_language; ++f) {
            lang.filler_tokens.push_back(start + static_cast<std::int32_t>(spec.n_concepts + f));
        }
        lang.reversed = std::bernoulli_distribution(0.5)(rng);
        out.push_back(std::move(lang));
    }
    return out;
}

std::optional<std::size_t> surface_language(const CorpusSpec& spec, std::int32_t id) {
    const std::int32_t first = block_start(spec, 0);
    if (id < first) return std::nullopt;
    const auto l = static_cast<std::size_t>(id - first) / block_size(spec);
    if (l >= spec.n_languages) return std::nullopt;
    return l;
}

double concept_similarity(const std::vector<std::int32_t>& x, const std::vector<std::int32_t>& y) {
    std::map<std::int32_t, std::pair<std::size_t, std::size_t>> counts;
    for (auto c : x) ++counts[c].first;
    for (auto c : y) ++counts[c].second;
    std::size_t overlap = 0, uni = 0;
    for (const auto& [c, n] : counts) {
        overlap += std::min(n.first, n.second);
        uni += std::max(n.first, n.second);
    }
    if (uni == 0) return 5.0;
    return 5.0 * static_cast<double>(overlap) / static_cast<double>(uni);
}

Corpus generate_corpus(const CorpusSpec& spec) {
    spec.validate();
    Corpus corpus;
    corpus.spec = spec;
    corpus.vocab = build_vocabulary(spec);
    corpus.languages = build_languages(spec, corpus.vocab);
    Generator gen(spec, corpus.languages, corpus.vocab);

    // Language 0 is the reference side of every evaluation set; the other
    // trainable languages supply the cross-lingual sides. Validation
    // guarantees two trainable languages, so this is never empty.
    std::vector<std::size_t> others;
    for (auto l : spec.trainable_languages()) {
        if (l != 0) others.push_back(l);
    }

    {
        num::Rng rng(num::mix_seed(spec.seed, sts_tag));
        for (std::size_t i = 0; i < spec.n_sts_pairs; ++i) {
            auto base = gen.draw_eval_concepts(rng);
            auto other = gen.perturb(base, rng);
            corpus.sts_monolingual.push_back({gen.render(0, base, rng), gen.render(0, other, rng),
                                              concept_similarity(base, other)});
        }
        for (std::size_t i = 0; i < spec.n_sts_pairs; ++i) {
            auto base = gen.draw_eval_concepts(rng);
            auto other = gen.perturb(base, rng);
            const std::size_t lang = others[i % others.size()];
            corpus.sts_crosslingual.push_back({gen.render(0, base, rng), gen.render(lang, other, rng),
                                               concept_similarity(base, other)});
        }
    }
    {
        num::Rng rng(num::mix_seed(spec.seed, tatoeba_tag));
        for (std::size_t l = 1; l < spec.n_languages; ++l) {
            for (std::size_t i = 0; i < spec.n_tatoeba_pairs; ++i) {
                auto c = gen.draw_eval_concepts(rng);
                corpus.tatoeba.push_back({gen.render(0, c, rng), gen.render(l, c, rng), std::nullopt});
            }
        }
    }
    {
        num::Rng rng(num::mix_seed(spec.seed, mining_tag));
        struct Entry {
            Sentence sentence;
            std::optional<std::size_t> gold;
        };
        std::vector<Entry> src, tgt;
        for (std::size_t i = 0; i < spec.n_mining_gold; ++i) {
            auto c = gen.draw_eval_concepts(rng);
            src.push_back({gen.render(others[i % others.size()], c, rng), i});
            tgt.push_back({gen.render(0, c, rng), i});
        }
        for (std::size_t i = 0; i < spec.n_mining_distractors; ++i) {
            auto cs = gen.draw_eval_concepts(rng);
            src.push_back({gen.render(others[i % others.size()], cs, rng), std::nullopt});
            auto ct = gen.draw_eval_concepts(rng);
            tgt.push_back({gen.render(0, ct, rng), std::nullopt});
        }
        std::shuffle(src.begin(), src.end(), rng);
        std::shuffle(tgt.begin(), tgt.end(), rng);
        std::vector<std::size_t> tgt_of_gold(spec.n_mining_gold);
        for (std::size_t j = 0; j < tgt.size(); ++j) {
            if (tgt[j].gold) tgt_of_gold[*tgt[j].gold] = j;
            corpus.mining.target.push_back(tgt[j].sentence);
        }
        for (std::size_t i = 0; i < src.size(); ++i) {
            if (src[i].gold) corpus.mining.gold.emplace_back(i, tgt_of_gold[*src[i].gold]);
            corpus.mining.source.push_back(src[i].sentence);
        }
    }
    {
        num::Rng rng(num::mix_seed(spec.seed, retrieval_tag));
        std::vector<std::vector<std::int32_t>> kb_concepts;
        for (std::size_t i = 0; i < spec.n_retrieval_kb; ++i) {
            kb_concepts.push_back(gen.draw_eval_concepts(rng));
            corpus.retrieval.kb.push_back(gen.render(0, kb_concepts.back(), rng));
        }
        std::size_t primary_language = others.front();
        for (auto p : spec.pivot_languages) {
            if (p != 0) {
                primary_language = p;
                break;
            }
        }
        auto fill = [&](QuerySet& set, bool mixed) {
            std::vector<std::size_t> order(spec.n_retrieval_kb);
            for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
            std::shuffle(order.begin(), order.end(), rng);
            for (std::size_t q = 0; q < spec.n_retrieval_queries; ++q) {
                const std::size_t target = order[q % order.size()];
                const std::size_t lang = mixed ? others[uniform_index(rng, others.size())] : primary_language;
                set.queries.push_back(gen.render(lang, kb_concepts[target], rng));
                set.gold.push_back(target);
            }
        };
        fill(corpus.retrieval.primary, false);
        fill(corpus.retrieval.multilingual, true);
    }
    {
        num::Rng rng(num::mix_seed(spec.seed, train_tag));
        const auto trainable = spec.trainable_languages();
        std::vector<std::size_t> pivots;
        for (auto p : spec.pivot_languages) pivots.push_back(p);
        for (std::size_t i = 0; i < spec.n_train_pairs; ++i) {
            const std::size_t pivot = pivots[uniform_index(rng, pivots.size())];
            std::size_t other;
            do {
                other = trainable[uniform_index(rng, trainable.size())];
            } while (other == pivot);
            auto c = gen.draw_train_concepts(rng);
            Sentence first = gen.render(pivot, c, rng), second = gen.render(other, c, rng);
            if (std::bernoulli_distribution(0.5)(rng)) std::swap(first, second);
            corpus.train.push_back({std::move(first), std::move(second), std::nullopt});
        }
    }
    return corpus;
}

}  // namespace vmsst::corpus
