#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <fstream>

#include "vmsst/model/archive.hpp"
#include "vmsst/model/model.hpp"
#include "vmsst/numcore/errors.hpp"
#include "vmsst/tokens.hpp"

namespace vm = vmsst::model;
namespace num = vmsst::num;
using vmsst::ConfigError;
using vmsst::ContractError;
using vmsst::FormatError;

namespace {

vm::ModelConfig tiny_config() {
    vm::ModelConfig c;
    c.vocab_size = 24;
    c.model_dim = 8;
    c.latent_dim = 4;
    c.n_enc_layers = 1;
    c.n_dec_layers = 1;
    c.n_heads = 2;
    c.ff_dim = 16;
    c.n_languages = 3;
    c.max_len = 8;
    return c;
}

vm::TokenBatch sample_batch() {
    std::vector<std::vector<std::int32_t>> seqs = {
        {1, 9, 12, 15, 2}, {1, 10, 11, 2}, {1, 20, 21, 22, 23, 2}};
    return vm::TokenBatch::from_sequences(seqs);
}

template <typename Real>
void zero_out(vm::ParameterSet<Real>& params, const std::string& prefix) {
    for (const auto& e : params.entries()) {
        if (e.name.rfind(prefix, 0) != 0) continue;
        auto t = e.tensor;
        for (Real& v : t.data()) v = Real(0);
    }
}

template <typename Real>
std::vector<Real> values(const num::Tensor<Real>& t) {
    return {t.data().begin(), t.data().end()};
}

void expect_finite(const num::Tensor<double>& t) {
    for (double v : t.data()) EXPECT_TRUE(std::isfinite(v));
}

}  // namespace

TEST(ModelConfig, ValidationNamesTheField) {
    auto c = tiny_config();
    c.n_heads = 3;
    try {
        c.validate();
        FAIL();
    } catch (const ConfigError& e) {
        EXPECT_NE(std::string(e.what()).find("n_heads"), std::string::npos);
    }
    c = tiny_config();
    c.max_len = 1;
    EXPECT_THROW(c.validate(), ConfigError);
    c = tiny_config();
    c.n_language_encoders = 4;
    EXPECT_THROW(c.validate(), ConfigError);
    c = tiny_config();
    c.latent_dim = 0;
    EXPECT_THROW(c.validate(), ConfigError);
}

TEST(ModelConfig, JsonRoundTrip) {
    auto c = tiny_config();
    c.factored_projection = true;
    c.n_language_encoders = 2;
    c.use_decoder_lang_emb = false;
    nlohmann::json j = c;
    EXPECT_EQ(j.get<vm::ModelConfig>(), c);
}

TEST(PairBatch, ValidateChecksInvariants) {
    vm::PairBatch p;
    p.a = sample_batch();
    p.b = sample_batch();
    p.lang_a = {0, 1, 2};
    p.lang_b = {1, 0, 0};
    p.sem_side = vm::PairBatch::alternating_sides(3);
    EXPECT_NO_THROW(p.validate(3, 8));
    EXPECT_THROW(p.validate(3, 4), ContractError);
    p.sem_side[1] = vm::Side::a;
    EXPECT_THROW(p.validate(3, 8), ContractError);
    p.sem_side = vm::PairBatch::alternating_sides(3);
    p.lang_b[2] = 3;
    EXPECT_THROW(p.validate(3, 8), ContractError);
    p.lang_b[2] = 0;
    std::fill_n(p.b.mask.begin() + p.b.len, p.b.len, 0);
    EXPECT_THROW(p.validate(3, 8), ContractError);
}

TEST(Model, ZeroHeadsGiveStandardPosterior) {
    vm::Model<double> m(tiny_config(), 3);
    zero_out(m.parameters(), "semantic_head");
    zero_out(m.parameters(), "language_head");
    auto batch = sample_batch();
    std::vector<std::int32_t> langs = {0, 1, 2};
    for (const auto& p : {m.encode_semantic(batch), m.encode_language(batch, langs)}) {
        for (double v : p.mu.data()) EXPECT_EQ(v, 0.0);
        for (double v : p.log_var.data()) EXPECT_EQ(v, 0.0);
    }
}

TEST(Model, PosteriorShapesAndFinite) {
    vm::Model<double> m(tiny_config(), 5);
    auto batch = sample_batch();
    std::vector<std::int32_t> langs = {2, 0, 1};
    auto sem = m.encode_semantic(batch);
    auto lang = m.encode_language(batch, langs);
    for (const auto* t : {&sem.mu, &sem.log_var, &lang.mu, &lang.log_var}) {
        EXPECT_EQ(t->shape(), (num::Shape{3, 4}));
        expect_finite(*t);
    }
}

TEST(Model, SemanticEncoderIgnoresLanguage) {
    // The semantic encoder never receives a language id, so the same tokens
    // tagged with any language give a bitwise identical posterior.
    vm::Model<double> m(tiny_config(), 7);
    auto batch = sample_batch();
    auto first = m.encode_semantic(batch);
    auto again = m.encode_semantic(batch);
    EXPECT_EQ(values(first.mu), values(again.mu));
    EXPECT_EQ(values(first.log_var), values(again.log_var));
    // The language encoder, in contrast, does depend on the id.
    std::vector<std::int32_t> l0 = {0, 0, 0}, l1 = {1, 1, 1};
    EXPECT_NE(values(m.encode_language(batch, l0).mu), values(m.encode_language(batch, l1).mu));
}

TEST(Model, NoEncoderLanguageEmbeddingMakesLanguageEncoderLanguageBlind) {
    auto c = tiny_config();
    c.use_encoder_lang_emb = false;
    vm::Model<double> m(c, 7);
    EXPECT_FALSE(m.parameters().contains("language_embedding"));
    auto batch = sample_batch();
    std::vector<std::int32_t> l0 = {0, 0, 0}, l2 = {2, 2, 2};
    EXPECT_EQ(values(m.encode_language(batch, l0).mu), values(m.encode_language(batch, l2).mu));
}

TEST(Model, UnknownLanguageIsConfigError) {
    vm::Model<double> m(tiny_config(), 1);
    auto batch = sample_batch();
    std::vector<std::int32_t> langs = {0, 3, 1};
    EXPECT_THROW(m.encode_language(batch, langs), ConfigError);
    auto z = num::Tensor<double>::zeros({3, 4});
    EXPECT_THROW(m.decode_logits(z, z, batch, langs), ConfigError);
}

TEST(Model, SeparateLanguageEncodersAreIndependent) {
    auto c = tiny_config();
    c.n_language_encoders = 2;
    vm::Model<double> m(c, 11);
    ASSERT_TRUE(m.parameters().contains("language_encoder1.layer0.attn.query.weight"));
    auto batch = sample_batch();
    // Languages 0 and 2 share encoder 0, language 1 uses encoder 1.
    std::vector<std::int32_t> langs = {0, 1, 2};
    auto before = m.encode_language(batch, langs);

    // Routing preserves rows: each row matches a single-row evaluation.
    std::vector<std::vector<std::int32_t>> seqs = {{1, 10, 11, 2}};
    std::vector<std::int32_t> one = {1};
    auto solo = m.encode_language(vm::TokenBatch::from_sequences(seqs), one);
    for (std::size_t j = 0; j < 4; ++j) EXPECT_NEAR(solo.mu.at(0, j), before.mu.at(1, j), 1e-12);

    zero_out(m.parameters(), "language_encoder1");
    zero_out(m.parameters(), "language_head1");
    auto after = m.encode_language(batch, langs);
    for (std::size_t j = 0; j < 4; ++j) {
        EXPECT_EQ(after.mu.at(0, j), before.mu.at(0, j));
        EXPECT_EQ(after.mu.at(2, j), before.mu.at(2, j));
        EXPECT_EQ(after.mu.at(1, j), 0.0);
    }
}

TEST(Model, SingleEncoderHasFewerParameters) {
    auto twin = tiny_config();
    auto single = tiny_config();
    single.single_encoder = true;
    vm::Model<double> a(twin, 1), b(single, 1);
    EXPECT_LT(b.parameters().element_count(), a.parameters().element_count());
    EXPECT_TRUE(b.parameters().contains("encoder.layer0.attn.query.weight"));
    EXPECT_TRUE(b.parameters().contains("language_head0.mu.weight"));
    auto batch = sample_batch();
    std::vector<std::int32_t> langs = {0, 1, 2};
    expect_finite(b.encode_language(batch, langs).mu);
}

TEST(Model, Reparameterize) {
    using T = num::Tensor<double>;
    vm::GaussianPosterior<double> p{T({1, 3}, {0.5, -1.0, 2.0}), T({1, 3}, {0.0, 0.0, 0.0})};
    auto z0 = vm::reparameterize(p, T::zeros({1, 3}));
    EXPECT_EQ(values(z0), values(p.mu));
    auto z1 = vm::reparameterize(p, T({1, 3}, {0.25, 1.0, -3.0}));
    EXPECT_DOUBLE_EQ(z1.data()[0], 0.75);
    EXPECT_DOUBLE_EQ(z1.data()[1], 0.0);
    EXPECT_DOUBLE_EQ(z1.data()[2], -1.0);
}

TEST(Model, ReparameterizeMonteCarloMean) {
    constexpr std::size_t n = 1000000;
    const double mu = 0.3, sigma = 1.5;
    using T = num::Tensor<double>;
    vm::GaussianPosterior<double> p{T::filled({n, 1}, mu), T::filled({n, 1}, std::log(sigma * sigma))};
    num::Rng rng(42);
    auto noise = num::standard_normal<double>(rng, n);
    auto z = vm::reparameterize(p, T({n, 1}, noise));
    double mean = 0;
    for (double v : z.data()) mean += v;
    mean /= static_cast<double>(n);
    EXPECT_LT(std::abs(mean - mu), 4 * sigma / std::sqrt(static_cast<double>(n)));
}

TEST(Model, LogVarIsClamped) {
    vm::Model<double> m(tiny_config(), 2);
    auto bias = m.parameters().get("semantic_head.log_var.bias");
    auto b = bias;
    b.data()[0] = 1e3;
    b.data()[1] = -1e3;
    auto p = m.encode_semantic(sample_batch());
    for (std::size_t r = 0; r < 3; ++r) {
        EXPECT_EQ(p.log_var.at(r, 0), vm::log_var_max);
        EXPECT_EQ(p.log_var.at(r, 1), vm::log_var_min);
        for (std::size_t j = 0; j < 4; ++j) {
            const double s = std::exp(0.5 * p.log_var.at(r, j));
            EXPECT_GE(s, std::exp(-5.0));
            EXPECT_LE(s, std::exp(5.0));
        }
    }
}

TEST(Model, DecoderLogitsShapeAndStartToken) {
    vm::Model<double> m(tiny_config(), 4);
    auto batch = sample_batch();
    std::vector<std::int32_t> langs = {0, 1, 2};
    num::Rng rng(1);
    auto z = num::Tensor<double>({3, 4}, num::standard_normal<double>(rng, 12));
    auto logits = m.decode_logits(z, z, batch, langs);
    EXPECT_EQ(logits.shape(), (num::Shape{3 * (batch.len - 1), 24}));
    expect_finite(logits);
    // The start token carries the target language.
    std::vector<std::int32_t> other = {1, 1, 2};
    auto changed = m.decode_logits(z, z, batch, other);
    EXPECT_NE(values(logits), values(changed));

    auto c = tiny_config();
    c.use_decoder_lang_emb = false;
    vm::Model<double> plain(c, 4);
    EXPECT_EQ(values(plain.decode_logits(z, z, batch, langs)), values(plain.decode_logits(z, z, batch, other)));
}

TEST(Model, AllZeroParametersGiveUniformLogits) {
    for (bool factored : {false, true}) {
        auto c = tiny_config();
        c.factored_projection = factored;
        vm::Model<double> m(c, 9);
        zero_out(m.parameters(), "");
        auto batch = sample_batch();
        std::vector<std::int32_t> langs = {0, 1, 2};
        auto z = num::Tensor<double>::filled({3, 4}, 0.7);
        auto logits = m.decode_logits(z, z, batch, langs);
        for (double v : logits.data()) EXPECT_EQ(v, 0.0);
        auto probs = num::softmax(logits, 1);
        for (double v : probs.data()) EXPECT_NEAR(v, 1.0 / 24.0, 1e-15);
    }
}

TEST(Model, ProjectionParameterCounts) {
    auto c = tiny_config();
    vm::Model<double> full(c, 1);
    c.factored_projection = true;
    vm::Model<double> factored(c, 1);
    const std::size_t d = 8, v = 24;
    EXPECT_EQ(full.projection_parameter_count(), 3 * d * v);
    EXPECT_EQ(factored.projection_parameter_count(), d * v + 3 * d * d);
    EXPECT_EQ(full.projection_parameter_count() - factored.projection_parameter_count(), 3 * d * v - (d * v + 3 * d * d));
}

TEST(Model, DecoderIsCausal) {
    for (std::size_t layers : {1u, 2u}) {
        for (bool factored : {false, true}) {
            auto c = tiny_config();
            c.n_dec_layers = layers;
            c.factored_projection = factored;
            vm::Model<double> m(c, 13 + layers);
            std::vector<std::vector<std::int32_t>> seqs = {{1, 9, 12, 15, 16, 17, 2}};
            auto base = vm::TokenBatch::from_sequences(seqs);
            std::vector<std::int32_t> langs = {1};
            num::Rng rng(layers);
            auto zs = num::Tensor<double>({1, 4}, num::standard_normal<double>(rng, 4));
            auto zl = num::Tensor<double>({1, 4}, num::standard_normal<double>(rng, 4));
            auto ref = m.decode_logits(zs, zl, base, langs);
            const std::size_t out_len = base.len - 1;
            // Input position t holds target token t for t >= 1.
            for (std::size_t t = 1; t < out_len; ++t) {
                auto perturbed = base;
                perturbed.ids[t] = 20;
                auto got = m.decode_logits(zs, zl, perturbed, langs);
                bool later_changed = false;
                for (std::size_t pos = 0; pos < out_len; ++pos) {
                    for (std::size_t v = 0; v < 24; ++v) {
                        const double a = ref.at(pos, v), b = got.at(pos, v);
                        if (pos < t) {
                            ASSERT_EQ(a, b) << "layers=" << layers << " t=" << t << " pos=" << pos;
                        } else if (a != b) {
                            later_changed = true;
                        }
                    }
                }
                EXPECT_TRUE(later_changed);
            }
        }
    }
}

TEST(Model, DecodeRejectsOverlongTargets) {
    auto c = tiny_config();
    vm::Model<double> m(c, 1);
    std::vector<std::vector<std::int32_t>> seqs = {std::vector<std::int32_t>(9, 10)};
    auto batch = vm::TokenBatch::from_sequences(seqs);
    std::vector<std::int32_t> langs = {0};
    auto z = num::Tensor<double>::zeros({1, 4});
    EXPECT_THROW(m.decode_logits(z, z, batch, langs), ContractError);
    EXPECT_THROW(m.encode_semantic(batch), ContractError);
}

TEST(Model, EmbedIsPosteriorMeanAndDeterministic) {
    vm::Model<double> m(tiny_config(), 21);
    auto batch = sample_batch();
    auto e1 = m.embed_sentences(batch);
    auto e2 = m.embed_sentences(batch);
    EXPECT_EQ(values(e1), values(e2));
    EXPECT_EQ(values(e1), values(m.encode_semantic(batch).mu));
}

TEST(Model, DecoderTargetsShiftByOne) {
    auto batch = sample_batch();
    auto t = vm::decoder_targets(batch);
    EXPECT_EQ(t.len, batch.len - 1);
    EXPECT_EQ(t.targets[0], 9);
    EXPECT_EQ(t.targets[3], vmsst::tokens::eos);
    EXPECT_EQ(t.mask[4], 0);
}

TEST(Archive, ModelRoundTripIsBitExact) {
    auto c = tiny_config();
    c.n_language_encoders = 2;
    vm::Model<float> m(c, 17);
    const auto path = std::filesystem::temp_directory_path() / "vmsst_model_roundtrip.ckpt";
    vm::save_model(m, path, {{"note", "x"}});
    auto loaded = vm::load_model(path);
    EXPECT_EQ(loaded.config(), c);
    ASSERT_EQ(loaded.parameters().size(), m.parameters().size());
    for (std::size_t i = 0; i < m.parameters().size(); ++i) {
        EXPECT_EQ(loaded.parameters().entries()[i].name, m.parameters().entries()[i].name);
    }
    auto batch = sample_batch();
    std::vector<std::int32_t> langs = {0, 1, 2};
    EXPECT_EQ(values(loaded.embed_sentences(batch)), values(m.embed_sentences(batch)));
    auto z = m.encode_language(batch, langs).mu;
    EXPECT_EQ(values(loaded.decode_logits(z, z, batch, langs)), values(m.decode_logits(z, z, batch, langs)));
    std::filesystem::remove(path);
}

TEST(Archive, CorruptionIsDetected) {
    vm::Archive a;
    a.manifest = {{"k", 1}};
    a.tensors.push_back({"w", {2, 2}, {1.f, 2.f, 3.f, 4.f}});
    const std::string bytes = vm::encode_archive(a);
    auto back = vm::decode_archive(bytes);
    ASSERT_NE(back.find("w"), nullptr);
    EXPECT_EQ(back.find("w")->values, a.tensors[0].values);
    EXPECT_EQ(back.manifest, a.manifest);

    std::string flipped = bytes;
    flipped[flipped.size() / 2] ^= 0x10;
    EXPECT_THROW(vm::decode_archive(flipped), FormatError);
    EXPECT_THROW(vm::decode_archive(bytes.substr(0, bytes.size() - 3)), FormatError);
    std::string magic = bytes;
    magic[5] = '2';
    EXPECT_THROW(vm::decode_archive(magic), FormatError);
}

TEST(Archive, ImportRejectsShapeMismatchWithoutPartialLoad) {
    vm::Model<double> m(tiny_config(), 1);
    vm::Archive a;
    vm::export_parameters(m.parameters(), a);
    for (auto& t : a.tensors) std::fill(t.values.begin(), t.values.end(), 0.5f);
    a.tensors.back().shape = {1};
    a.tensors.back().values = {0.5f};
    const auto before = values(m.parameters().entries().front().tensor);
    EXPECT_THROW(vm::import_parameters(m.parameters(), a), FormatError);
    EXPECT_EQ(values(m.parameters().entries().front().tensor), before);
}
