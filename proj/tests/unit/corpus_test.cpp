#include <gtest/gtest.h>

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <map>
#include <set>
#include <sstream>

#include "vmsst/corpus/batching.hpp"
#include "vmsst/corpus/corpus.hpp"
#include "vmsst/corpus/io.hpp"
#include "vmsst/numcore/errors.hpp"
#include "vmsst/tokens.hpp"

namespace vc = vmsst::corpus;
namespace fs = std::filesystem;

namespace {

vc::CorpusSpec small_spec() {
    vc::CorpusSpec s;
    s.n_languages = 4;
    s.n_concepts = 32;
    s.min_sentence_len = 3;
    s.max_sentence_len = 7;
    s.n_train_pairs = 400;
    s.n_sts_pairs = 40;
    s.n_tatoeba_pairs = 30;
    s.n_mining_gold = 30;
    s.n_mining_distractors = 10;
    s.n_retrieval_kb = 50;
    s.n_retrieval_queries = 30;
    s.seed = 9;
    return s;
}

// Inverse of the per-language rendering, ignoring fillers; sorted.
std::vector<std::int32_t> concepts_of(const vc::Corpus& c, const vc::Sentence& s) {
    const auto& lang = c.languages.at(static_cast<std::size_t>(s.language));
    std::vector<std::int32_t> out;
    for (const auto& tok : s.tokens) {
        const auto id = c.vocab.id(tok);
        auto it = std::find(lang.concept_tokens.begin(), lang.concept_tokens.end(), id);
        if (it != lang.concept_tokens.end()) out.push_back(static_cast<std::int32_t>(it - lang.concept_tokens.begin()));
    }
    std::sort(out.begin(), out.end());
    return out;
}

std::string slurp(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    std::ostringstream s;
    s << in.rdbuf();
    return s.str();
}

fs::path scratch(const std::string& name) {
    auto p = fs::temp_directory_path() / ("vmsst_corpus_" + name);
    fs::remove_all(p);
    return p;
}

}  // namespace

TEST(CorpusSpec, Validation) {
    auto s = small_spec();
    s.max_sentence_len = 40;
    EXPECT_THROW(s.validate(), vmsst::ConfigError);
    s = small_spec();
    s.pivot_languages = {0, 7};
    EXPECT_THROW(s.validate(), vmsst::ConfigError);
    s = small_spec();
    s.holdout_languages = {1};
    try {
        s.validate();
        FAIL();
    } catch (const vmsst::ConfigError& e) {
        EXPECT_NE(std::string(e.what()).find("holdout_languages"), std::string::npos);
    }
    s = small_spec();
    s.n_train_pairs = 0;
    EXPECT_THROW(s.validate(), vmsst::ConfigError);
    s = small_spec();
    s.n_languages = 2;
    s.holdout_languages = {};
    s.pivot_languages = {0};
    EXPECT_NO_THROW(s.validate());
}

TEST(CorpusSpec, JsonRoundTrip) {
    auto s = small_spec();
    s.holdout_languages = {3};
    nlohmann::json j = s;
    EXPECT_EQ(j.get<vc::CorpusSpec>(), s);
}

TEST(Corpus, LanguagesHaveDisjointBijectiveSurfaceBlocks) {
    auto spec = small_spec();
    auto vocab = vc::build_vocabulary(spec);
    auto langs = vc::build_languages(spec, vocab);
    EXPECT_EQ(vocab.token(vmsst::tokens::language_start(2)), vc::Vocabulary::language_token(2));
    std::vector<std::set<std::int32_t>> surfaces(spec.n_languages);
    for (const auto& l : langs) {
        std::set<std::int32_t> concept_set(l.concept_tokens.begin(), l.concept_tokens.end());
        EXPECT_EQ(concept_set.size(), spec.n_concepts);
        for (auto id : l.concept_tokens) {
            EXPECT_EQ(vc::surface_language(spec, id), l.id);
            surfaces[l.id].insert(id);
        }
        for (auto id : l.filler_tokens) {
            EXPECT_EQ(vc::surface_language(spec, id), l.id);
            EXPECT_EQ(concept_set.count(id), 0u);
            surfaces[l.id].insert(id);
        }
    }
    for (std::size_t i = 0; i < surfaces.size(); ++i) {
        for (std::size_t j = i + 1; j < surfaces.size(); ++j) {
            std::vector<std::int32_t> both;
            std::set_intersection(surfaces[i].begin(), surfaces[i].end(), surfaces[j].begin(), surfaces[j].end(),
                                  std::back_inserter(both));
            EXPECT_TRUE(both.empty());
        }
    }
    EXPECT_FALSE(vc::surface_language(spec, vmsst::tokens::eos).has_value());
    EXPECT_FALSE(vc::surface_language(spec, vmsst::tokens::language_start(0)).has_value());
}

TEST(Corpus, RenderedTokensBelongToTheirLanguage) {
    auto c = vc::generate_corpus(small_spec());
    auto check = [&](const vc::Sentence& s) {
        for (const auto& tok : s.tokens) {
            ASSERT_EQ(vc::surface_language(c.spec, c.vocab.id(tok)), static_cast<std::size_t>(s.language));
        }
    };
    for (const auto& p : c.train) {
        check(p.a);
        check(p.b);
    }
    for (const auto& s : c.mining.source) check(s);
    for (const auto& s : c.retrieval.multilingual.queries) check(s);
}

TEST(Corpus, TrainPairsTouchAPivot) {
    auto c = vc::generate_corpus(small_spec());
    ASSERT_EQ(c.train.size(), 400u);
    std::set<std::int32_t> seen;
    for (const auto& p : c.train) {
        const bool a_pivot = p.a.language <= 1, b_pivot = p.b.language <= 1;
        EXPECT_TRUE(a_pivot || b_pivot);
        EXPECT_NE(p.a.language, p.b.language);
        EXPECT_EQ(concepts_of(c, p.a), concepts_of(c, p.b));
        EXPECT_FALSE(p.gold_similarity.has_value());
        seen.insert(p.a.language);
        seen.insert(p.b.language);
    }
    EXPECT_EQ(seen.size(), 4u);
}

TEST(Corpus, HoldoutLanguagesOnlyInEvaluation) {
    auto spec = small_spec();
    spec.holdout_languages = {3};
    auto c = vc::generate_corpus(spec);
    for (const auto& p : c.train) {
        EXPECT_NE(p.a.language, 3);
        EXPECT_NE(p.b.language, 3);
    }
    std::size_t holdout_tatoeba = 0;
    for (const auto& p : c.tatoeba) holdout_tatoeba += p.b.language == 3;
    EXPECT_EQ(holdout_tatoeba, spec.n_tatoeba_pairs);
}

TEST(Corpus, StsGoldIsConceptJaccard) {
    auto c = vc::generate_corpus(small_spec());
    bool saw_zero = false, saw_five = false, saw_partial = false;
    for (const auto* set : {&c.sts_monolingual, &c.sts_crosslingual}) {
        ASSERT_EQ(set->size(), 40u);
        for (const auto& p : *set) {
            ASSERT_TRUE(p.gold_similarity.has_value());
            const auto x = concepts_of(c, p.a), y = concepts_of(c, p.b);
            EXPECT_DOUBLE_EQ(*p.gold_similarity, vc::concept_similarity(x, y));
            const double g = *p.gold_similarity;
            if (g == 5.0) {
                saw_five = true;
                EXPECT_EQ(x, y);
            } else if (g == 0.0) {
                saw_zero = true;
                std::vector<std::int32_t> both;
                std::set_intersection(x.begin(), x.end(), y.begin(), y.end(), std::back_inserter(both));
                EXPECT_TRUE(both.empty());
            } else {
                saw_partial = true;
            }
        }
    }
    EXPECT_TRUE(saw_zero && saw_five && saw_partial);
    for (const auto& p : c.sts_monolingual) {
        EXPECT_EQ(p.a.language, 0);
        EXPECT_EQ(p.b.language, 0);
    }
    for (const auto& p : c.sts_crosslingual) EXPECT_NE(p.b.language, 0);
}

TEST(Corpus, UnperturbedStsPairsAreTranslations) {
    auto spec = small_spec();
    spec.sts_max_perturbation = 0.0;
    auto c = vc::generate_corpus(spec);
    for (const auto& p : c.sts_crosslingual) {
        EXPECT_EQ(*p.gold_similarity, 5.0);
        EXPECT_EQ(concepts_of(c, p.a), concepts_of(c, p.b));
    }
}

TEST(Corpus, ConceptSimilarityArithmetic) {
    EXPECT_NEAR(vc::concept_similarity({1, 2, 3, 4}, {1, 2, 7, 8}), 5.0 * 2.0 / 6.0, 1e-15);
    EXPECT_EQ(vc::concept_similarity({1, 2}, {2, 1}), 5.0);
    EXPECT_EQ(vc::concept_similarity({1, 2}, {3}), 0.0);
    EXPECT_NEAR(vc::concept_similarity({1, 1, 2}, {1, 2, 2}), 5.0 * 2.0 / 4.0, 1e-15);
}

TEST(Corpus, EvaluationSetsAreConsistentAndDisjointFromTraining) {
    auto c = vc::generate_corpus(small_spec());
    std::set<std::vector<std::int32_t>> train_keys;
    for (const auto& p : c.train) train_keys.insert(concepts_of(c, p.a));

    ASSERT_EQ(c.tatoeba.size(), 3u * 30u);
    for (const auto& p : c.tatoeba) {
        EXPECT_EQ(p.a.language, 0);
        EXPECT_EQ(concepts_of(c, p.a), concepts_of(c, p.b));
        EXPECT_EQ(train_keys.count(concepts_of(c, p.a)), 0u);
    }

    ASSERT_EQ(c.mining.source.size(), 40u);
    ASSERT_EQ(c.mining.target.size(), 40u);
    ASSERT_EQ(c.mining.gold.size(), 30u);
    std::set<std::size_t> gold_src, gold_tgt;
    for (auto [s, t] : c.mining.gold) {
        EXPECT_EQ(concepts_of(c, c.mining.source[s]), concepts_of(c, c.mining.target[t]));
        gold_src.insert(s);
        gold_tgt.insert(t);
    }
    EXPECT_EQ(gold_src.size(), 30u);
    EXPECT_EQ(gold_tgt.size(), 30u);
    for (const auto& s : c.mining.source) {
        EXPECT_NE(s.language, 0);
        EXPECT_EQ(train_keys.count(concepts_of(c, s)), 0u);
    }
    for (const auto& t : c.mining.target) EXPECT_EQ(t.language, 0);

    for (const auto* q : {&c.retrieval.primary, &c.retrieval.multilingual}) {
        ASSERT_EQ(q->queries.size(), 30u);
        for (std::size_t i = 0; i < q->queries.size(); ++i) {
            EXPECT_NE(q->queries[i].language, 0);
            EXPECT_EQ(concepts_of(c, q->queries[i]), concepts_of(c, c.retrieval.kb.at(q->gold[i])));
        }
    }
    for (const auto& s : c.retrieval.primary.queries) EXPECT_EQ(s.language, 1);
}

TEST(Corpus, GenerationIsDeterministic) {
    auto a = vc::generate_corpus(small_spec());
    auto b = vc::generate_corpus(small_spec());
    EXPECT_EQ(a.train, b.train);
    EXPECT_EQ(a.sts_crosslingual, b.sts_crosslingual);
    auto other = small_spec();
    other.seed = 10;
    EXPECT_NE(vc::generate_corpus(other).train, a.train);

    // Resizing the training set leaves evaluation sets untouched.
    auto bigger = small_spec();
    bigger.n_train_pairs = 800;
    auto c = vc::generate_corpus(bigger);
    EXPECT_EQ(c.tatoeba, a.tatoeba);
    EXPECT_EQ(c.mining.gold, a.mining.gold);
}

TEST(CorpusIo, WriteIsByteIdenticalAndRoundTrips) {
    auto c = vc::generate_corpus(small_spec());
    auto d1 = scratch("w1"), d2 = scratch("w2");
    vc::write_corpus(d1, c);
    vc::write_corpus(d2, vc::generate_corpus(small_spec()));
    for (const auto& entry : fs::directory_iterator(d1)) {
        EXPECT_EQ(slurp(entry.path()), slurp(d2 / entry.path().filename())) << entry.path();
    }
    auto back = vc::read_corpus(d1);
    EXPECT_EQ(back.spec, c.spec);
    EXPECT_EQ(back.vocab, c.vocab);
    EXPECT_EQ(back.train, c.train);
    EXPECT_EQ(back.sts_monolingual, c.sts_monolingual);
    EXPECT_EQ(back.sts_crosslingual, c.sts_crosslingual);
    EXPECT_EQ(back.tatoeba, c.tatoeba);
    EXPECT_EQ(back.mining.source, c.mining.source);
    EXPECT_EQ(back.mining.gold, c.mining.gold);
    EXPECT_EQ(back.retrieval.kb, c.retrieval.kb);
    EXPECT_EQ(back.retrieval.primary.gold, c.retrieval.primary.gold);
    EXPECT_EQ(back.retrieval.multilingual.queries, c.retrieval.multilingual.queries);
    fs::remove_all(d1);
    fs::remove_all(d2);
}

TEST(CorpusIo, MalformedFilesAreFormatErrors) {
    auto d = scratch("bad");
    fs::create_directories(d);
    std::ofstream(d / "pairs.tsv") << "0\tl0w1 l0w2\t1\n";
    EXPECT_THROW(vc::read_pairs(d / "pairs.tsv"), vmsst::FormatError);
    std::ofstream(d / "pairs2.tsv") << "x\tl0w1\t1\tl1w1\n";
    EXPECT_THROW(vc::read_pairs(d / "pairs2.tsv"), vmsst::FormatError);
    EXPECT_THROW(vc::read_pairs(d / "missing.tsv"), vmsst::FormatError);
    EXPECT_THROW(vc::read_corpus(d), vmsst::FormatError);
    fs::remove_all(d);
}

TEST(Tokenize, Contract) {
    auto vocab = vc::build_vocabulary(small_spec());
    std::vector<std::string> empty;
    EXPECT_EQ(vc::tokenize(empty, vocab, 32), (std::vector<std::int32_t>{vmsst::tokens::bos, vmsst::tokens::eos}));

    std::vector<std::string> long_text;
    for (int i = 0; i < 37; ++i) long_text.push_back("l1w" + std::to_string(i % 32));
    auto ids = vc::tokenize(long_text, vocab, 32);
    ASSERT_EQ(ids.size(), 32u);
    EXPECT_EQ(ids.front(), vmsst::tokens::bos);
    EXPECT_EQ(ids.back(), vmsst::tokens::eos);

    std::vector<std::string> text = {"l2w5", "l2f1", "l2w0"};
    auto round = vc::tokenize(text, vocab, 32);
    EXPECT_EQ(vc::detokenize(round, vocab), text);

    std::vector<std::string> unknown = {"l2w5", "zzz"};
    EXPECT_THROW(vc::tokenize(unknown, vocab, 32), vmsst::VocabularyError);
}

TEST(Vocabulary, FileRoundTrip) {
    auto vocab = vc::build_vocabulary(small_spec());
    auto d = scratch("vocab");
    fs::create_directories(d);
    vc::write_vocabulary(vocab, d / "v.txt");
    EXPECT_EQ(vc::read_vocabulary(d / "v.txt"), vocab);
    std::ofstream(d / "bad.txt") << "<pad>\n<s>\n";
    EXPECT_THROW(vc::read_vocabulary(d / "bad.txt"), vmsst::VocabularyError);
    fs::remove_all(d);
}

TEST(Batching, EpochVisitsEveryPairOnce) {
    auto c = vc::generate_corpus(small_spec());
    auto encoded = vc::encode_pairs(c.train, c.vocab, 32);
    vc::BatchStream stream(encoded, 64, 5);
    ASSERT_EQ(stream.batches_per_epoch(), 7u);
    for (std::size_t epoch = 0; epoch < 2; ++epoch) {
        std::vector<std::size_t> all;
        for (std::size_t i = 0; i < 7; ++i) {
            auto rows = stream.batch_rows(epoch * 7 + i);
            EXPECT_EQ(rows.size(), i < 6 ? 64u : 16u);
            all.insert(all.end(), rows.begin(), rows.end());
        }
        std::sort(all.begin(), all.end());
        for (std::size_t i = 0; i < all.size(); ++i) ASSERT_EQ(all[i], i);
    }
    EXPECT_NE(stream.batch_rows(0), stream.batch_rows(7));
}

TEST(Batching, DeterministicAndWellFormed) {
    auto c = vc::generate_corpus(small_spec());
    auto encoded = vc::encode_pairs(c.train, c.vocab, 32);
    auto first = vc::make_batches(encoded, 32, 11);
    auto second = vc::make_batches(encoded, 32, 11);
    ASSERT_EQ(first.size(), second.size());
    for (std::size_t i = 0; i < first.size(); ++i) {
        EXPECT_EQ(first[i].a.ids, second[i].a.ids);
        EXPECT_EQ(first[i].b.mask, second[i].b.mask);
        EXPECT_EQ(first[i].lang_b, second[i].lang_b);
        EXPECT_NO_THROW(first[i].validate(4, 32));
    }
    EXPECT_NE(vc::make_batches(encoded, 32, 12)[0].a.ids, first[0].a.ids);

    // Masks mark exactly the tokenized lengths.
    vc::BatchStream stream(encoded, 32, 11);
    auto rows = stream.batch_rows(0);
    const auto& b = first[0];
    for (std::size_t r = 0; r < rows.size(); ++r) {
        EXPECT_EQ(b.a.valid_count(r), encoded[rows[r]].a.size());
        EXPECT_EQ(b.b.valid_count(r), encoded[rows[r]].b.size());
    }
}

TEST(Batching, SingletonBatchesUseSideA) {
    auto c = vc::generate_corpus(small_spec());
    auto encoded = vc::encode_pairs(c.train, c.vocab, 32);
    vc::BatchStream stream(encoded, 1, 3);
    for (std::size_t i = 0; i < 10; ++i) {
        auto b = stream.batch(i);
        ASSERT_EQ(b.size(), 1u);
        EXPECT_EQ(b.sem_side[0], vmsst::model::Side::a);
    }
    auto pair = vc::make_pair_batch(std::span<const vc::EncodedPair>(encoded.data(), 5));
    EXPECT_EQ(pair.sem_side, vmsst::model::PairBatch::alternating_sides(5));
}
