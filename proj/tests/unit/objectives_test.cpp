#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <numeric>

#include "vmsst/numcore/errors.hpp"
#include "vmsst/numcore/grad_check.hpp"
#include "vmsst/objectives/objectives.hpp"

namespace vm = vmsst::model;
namespace num = vmsst::num;
namespace ob = vmsst::objectives;
using T = num::Tensor<double>;

namespace {

vm::ModelConfig small_config() {
    vm::ModelConfig c;
    c.vocab_size = 16;
    c.model_dim = 8;
    c.latent_dim = 3;
    c.n_enc_layers = 1;
    c.n_dec_layers = 1;
    c.n_heads = 2;
    c.ff_dim = 12;
    c.n_languages = 3;
    c.max_len = 8;
    return c;
}

vm::TokenBatch padded(const std::vector<std::vector<std::int32_t>>& seqs, std::size_t len) {
    auto b = vm::TokenBatch::from_sequences(seqs);
    vm::TokenBatch out;
    out.batch = b.batch;
    out.len = len;
    out.ids.assign(b.batch * len, 0);
    out.mask.assign(b.batch * len, 0);
    for (std::size_t r = 0; r < b.batch; ++r) {
        std::copy_n(b.ids.begin() + r * b.len, b.len, out.ids.begin() + r * len);
        std::copy_n(b.mask.begin() + r * b.len, b.len, out.mask.begin() + r * len);
    }
    return out;
}

vm::PairBatch make_pairs(const std::vector<std::vector<std::int32_t>>& a, const std::vector<std::vector<std::int32_t>>& b,
                         std::vector<std::int32_t> lang_a, std::vector<std::int32_t> lang_b) {
    std::size_t len = 0;
    for (const auto& s : a) len = std::max(len, s.size());
    for (const auto& s : b) len = std::max(len, s.size());
    vm::PairBatch p;
    p.a = padded(a, len);
    p.b = padded(b, len);
    p.lang_a = std::move(lang_a);
    p.lang_b = std::move(lang_b);
    p.sem_side = vm::PairBatch::alternating_sides(a.size());
    return p;
}

vm::PairBatch sample_pairs() {
    return make_pairs({{1, 8, 9, 10, 2}, {1, 11, 12, 2}, {1, 13, 8, 2}, {1, 9, 9, 14, 15, 2}},
                      {{1, 12, 13, 2}, {1, 14, 15, 8, 2}, {1, 10, 11, 9, 2}, {1, 8, 2}},
                      {0, 0, 1, 0}, {1, 2, 2, 1});
}

ob::ObjectiveConfig config_for(ob::Objective kind, double lambda) {
    ob::ObjectiveConfig c;
    c.kind = kind;
    c.lambda = lambda;
    return c;
}

double brute_contrastive(const std::vector<std::vector<double>>& s, const std::vector<std::vector<double>>& t) {
    const std::size_t n = s.size();
    auto dot = [](const std::vector<double>& x, const std::vector<double>& y) {
        double acc = 0;
        for (std::size_t i = 0; i < x.size(); ++i) acc += x[i] * y[i];
        return acc;
    };
    double total = 0;
    for (std::size_t i = 0; i < n; ++i) {
        double row = 0, col = 0;
        for (std::size_t j = 0; j < n; ++j) {
            row += std::exp(dot(s[i], t[j]));
            col += std::exp(dot(t[i], s[j]));
        }
        total += std::log(std::exp(dot(s[i], t[i])) / row) + std::log(std::exp(dot(s[i], t[i])) / col);
    }
    return -total / (2.0 * static_cast<double>(n));
}

T one(double v) { return T(num::Shape{1, 1}, std::vector<double>{v}); }

T from_rows(const std::vector<std::vector<double>>& rows) {
    std::vector<double> flat;
    for (const auto& r : rows) flat.insert(flat.end(), r.begin(), r.end());
    return T({rows.size(), rows.front().size()}, flat);
}

}  // namespace

TEST(KlDiagGaussian, ClosedFormExamples) {
    EXPECT_EQ(ob::kl_diag_gaussian<double>({T({1, 2}, {0, 0}), T({1, 2}, {0, 0})}).item(), 0.0);
    EXPECT_DOUBLE_EQ(ob::kl_diag_gaussian<double>({one(1.0), one(0.0)}).item(), 0.5);
    const double expected = 0.5 * (4.0 - 1.0 - std::log(4.0));
    EXPECT_NEAR(ob::kl_diag_gaussian<double>({one(0.0), one(std::log(4.0))}).item(), expected, 1e-15);
    EXPECT_NEAR(expected, 0.80685, 1e-5);
    // Sum over dims, mean over rows.
    auto two = ob::kl_diag_gaussian<double>({T({2, 2}, {1, 1, 0, 0}), T({2, 2}, {0, 0, 0, 0})});
    EXPECT_DOUBLE_EQ(two.item(), 0.5);
}

TEST(KlDiagGaussian, NonNegativeAndZeroOnlyAtPrior) {
    for (double mu = -2; mu <= 2; mu += 0.25) {
        for (double lv = -3; lv <= 3; lv += 0.25) {
            const double kl = ob::kl_diag_gaussian<double>({one(mu), one(lv)}).item();
            EXPECT_GE(kl, 0.0);
            if (mu == 0.0 && lv == 0.0) {
                EXPECT_EQ(kl, 0.0);
            } else {
                EXPECT_GT(kl, 0.0) << mu << " " << lv;
            }
        }
    }
}

TEST(KlDiagGaussian, MatchesMonteCarlo) {
    num::Rng rng(5);
    for (auto [mu, lv] : {std::pair{1.0, 0.0}, std::pair{0.0, std::log(4.0)}, std::pair{-1.3, 0.7}}) {
        const double sigma = std::exp(0.5 * lv);
        constexpr std::size_t n = 1000000;
        auto eps = num::standard_normal<double>(rng, n);
        double mean = 0, sq = 0;
        for (double e : eps) {
            const double z = mu + sigma * e;
            const double log_ratio = -0.5 * e * e - 0.5 * lv + 0.5 * z * z;
            mean += log_ratio;
            sq += log_ratio * log_ratio;
        }
        mean /= n;
        const double se = std::sqrt((sq / n - mean * mean) / n);
        const double kl = ob::kl_diag_gaussian<double>({one(mu), one(lv)}).item();
        EXPECT_LT(std::abs(kl - mean), 4 * se);
    }
}

TEST(ReconstructionNll, UniformLogitsGiveLogV) {
    vm::DecoderTargets t{2, 3, {1, 2, 0, 4, 4, 3}, {1, 1, 0, 1, 1, 1}};
    auto loss = ob::reconstruction_nll(T::zeros({6, 7}), t);
    EXPECT_NEAR(loss.item(), std::log(7.0), 1e-15);
}

TEST(ReconstructionNll, ConfidentLogitsApproachZero) {
    vm::DecoderTargets t{1, 2, {3, 1}, {1, 1}};
    double previous = 1e9;
    for (double margin : {1.0, 5.0, 20.0, 60.0}) {
        T logits({2, 5});
        logits.data()[3] = margin;
        logits.data()[5 + 1] = margin;
        const double loss = ob::reconstruction_nll(logits, t).item();
        EXPECT_LT(loss, previous);
        previous = loss;
    }
    EXPECT_LT(previous, 1e-20);
}

TEST(ReconstructionNll, MatchesLogSoftmaxOracle) {
    num::Rng rng(3);
    // Two sequences of lengths 3 and 1; the per-sequence means are averaged.
    vm::DecoderTargets t{2, 3, {2, 0, 4, 1, 0, 0}, {1, 1, 1, 1, 0, 0}};
    T logits({6, 5}, num::standard_normal<double>(rng, 30));
    auto ls = num::log_softmax(logits);
    const double seq0 = -(ls.at(0, 2) + ls.at(1, 0) + ls.at(2, 4)) / 3.0;
    const double seq1 = -ls.at(3, 1);
    EXPECT_NEAR(ob::reconstruction_nll(logits, t).item(), 0.5 * (seq0 + seq1), 1e-10);
}

TEST(ReconstructionNll, AllMaskedSequenceThrows) {
    vm::DecoderTargets t{2, 2, {1, 1, 1, 1}, {1, 0, 0, 0}};
    EXPECT_THROW(ob::reconstruction_nll(T::zeros({4, 3}), t), vmsst::EmptySequenceError);
}

TEST(ContrastiveLoss, SingletonIsZero) {
    EXPECT_EQ(ob::contrastive_loss(T({1, 2}, {3.0, -1.0}), T({1, 2}, {0.5, 2.0})).item(), 0.0);
}

TEST(ContrastiveLoss, OrthonormalExample) {
    auto s = T({2, 2}, {1, 0, 0, 1});
    EXPECT_NEAR(ob::contrastive_loss(s, s).item(), std::log(1 + std::exp(-1.0)), 1e-15);
    EXPECT_NEAR(std::log(1 + std::exp(-1.0)), 0.31326, 1e-5);
}

TEST(ContrastiveLoss, MatchesBruteForce) {
    num::Rng rng(17);
    for (std::size_t b = 1; b <= 8; ++b) {
        std::vector<std::vector<double>> s(b), t(b);
        for (std::size_t i = 0; i < b; ++i) {
            s[i] = num::standard_normal<double>(rng, 5);
            t[i] = num::standard_normal<double>(rng, 5);
        }
        const double expected = brute_contrastive(s, t);
        EXPECT_NEAR(ob::contrastive_loss(from_rows(s), from_rows(t)).item(), expected, 1e-10 * std::abs(expected) + 1e-300);
    }
}

TEST(ContrastiveLoss, PermutationInvariant) {
    num::Rng rng(2);
    std::vector<std::vector<double>> s(6), t(6);
    for (std::size_t i = 0; i < 6; ++i) {
        s[i] = num::standard_normal<double>(rng, 4);
        t[i] = num::standard_normal<double>(rng, 4);
    }
    const double base = ob::contrastive_loss(from_rows(s), from_rows(t)).item();
    std::vector<std::size_t> perm = {3, 0, 5, 1, 4, 2};
    std::vector<std::vector<double>> ps, pt;
    for (auto i : perm) {
        ps.push_back(s[i]);
        pt.push_back(t[i]);
    }
    EXPECT_NEAR(ob::contrastive_loss(from_rows(ps), from_rows(pt)).item(), base, 1e-12);
}

TEST(ContrastiveLoss, DecreasesAsMatchedScoresDominate) {
    // Matched pairs share a direction, so growing a shared scale grows the
    // diagonal of the score matrix faster than the off-diagonal.
    num::Rng rng(8);
    std::vector<std::vector<double>> s(5);
    for (auto& row : s) {
        row = num::standard_normal<double>(rng, 6);
        double norm = 0;
        for (double v : row) norm += v * v;
        for (double& v : row) v /= std::sqrt(norm);
    }
    double previous = std::numeric_limits<double>::infinity();
    for (double scale : {0.5, 1.0, 2.0, 4.0, 8.0}) {
        auto m = num::scale(from_rows(s), scale);
        const double loss = ob::contrastive_loss(m, m).item();
        EXPECT_GE(loss, 0.0);
        EXPECT_LT(loss, previous);
        previous = loss;
    }
    EXPECT_LT(previous, 1e-3);
}

TEST(ContrastiveLoss, EmptyBatchThrows) {
    EXPECT_THROW(ob::contrastive_loss(T({0, 3}), T({0, 3})), vmsst::EmptySequenceError);
}

class ObjectiveTest : public ::testing::Test {
protected:
    vm::Model<double> model{small_config(), 31};
    vm::PairBatch batch = sample_pairs();
    ob::LatentNoise<double> noise = [] {
        num::Rng rng(77);
        return ob::LatentNoise<double>::draw(rng, 4, 3);
    }();

    ob::LossBreakdown run(ob::Objective kind, double lambda, double kl_weight,
                          ob::TranslationLanguage mode = ob::TranslationLanguage::target_posterior_mean) {
        auto c = config_for(kind, lambda);
        c.translation_language = mode;
        num::Rng rng(0);
        return ob::evaluate_with_noise(model, batch, c, kl_weight, noise, rng).parts;
    }
};

TEST_F(ObjectiveTest, VmsstTotalIsDocumentedCombination) {
    const double lambda = 0.1, klw = 0.37;
    auto p = run(ob::Objective::vmsst, lambda, klw);
    const double expected = p.translation_ab + p.translation_ba +
                            lambda * (p.recon_a + p.recon_b + klw * (p.kl_sem + p.kl_lang_a + p.kl_lang_b));
    EXPECT_NEAR(p.total, expected, 1e-10 * std::abs(expected));
    EXPECT_GT(p.kl_sem, 0.0);
    EXPECT_GT(p.kl_lang_a, 0.0);
    EXPECT_GT(p.kl_lang_b, 0.0);
    EXPECT_EQ(p.contrastive, 0.0);
}

TEST_F(ObjectiveTest, VmsstComponentsMatchIndependentComputation) {
    const double lambda = 0.25, klw = 0.5;
    auto p = run(ob::Objective::vmsst, lambda, klw);
    const std::size_t n = 4;

    auto sem_a = model.encode_semantic(batch.a), sem_b = model.encode_semantic(batch.b);
    auto lang_a = model.encode_language(batch.a, batch.lang_a), lang_b = model.encode_language(batch.b, batch.lang_b);
    auto ta = vm::decoder_targets(batch.a), tb = vm::decoder_targets(batch.b);

    const double tr_ab = ob::reconstruction_nll(model.decode_logits(sem_b.mu, lang_a.mu, batch.a, batch.lang_a), ta).item();
    const double tr_ba = ob::reconstruction_nll(model.decode_logits(sem_a.mu, lang_b.mu, batch.b, batch.lang_b), tb).item();

    // Semantic posterior from side a on even rows and side b on odd rows.
    T mu({n, 3}), lv({n, 3});
    for (std::size_t i = 0; i < n; ++i) {
        const auto& src = i % 2 == 0 ? sem_a : sem_b;
        for (std::size_t j = 0; j < 3; ++j) {
            mu.data()[i * 3 + j] = src.mu.at(i, j);
            lv.data()[i * 3 + j] = src.log_var.at(i, j);
        }
    }
    vm::GaussianPosterior<double> sem{mu, lv};
    auto z_sem = vm::reparameterize(sem, noise.semantic);
    auto z_la = vm::reparameterize(lang_a, num::slice_rows(noise.language, 0, n));
    auto z_lb = vm::reparameterize(lang_b, num::slice_rows(noise.language, n, n));
    const double recon_a = ob::reconstruction_nll(model.decode_logits(z_sem, z_la, batch.a, batch.lang_a), ta).item();
    const double recon_b = ob::reconstruction_nll(model.decode_logits(z_sem, z_lb, batch.b, batch.lang_b), tb).item();
    const double kl_sem = ob::kl_diag_gaussian(sem).item();
    const double kl_a = ob::kl_diag_gaussian(lang_a).item(), kl_b = ob::kl_diag_gaussian(lang_b).item();

    EXPECT_NEAR(p.translation_ab, tr_ab, 1e-10);
    EXPECT_NEAR(p.translation_ba, tr_ba, 1e-10);
    EXPECT_NEAR(p.recon_a, recon_a, 1e-10);
    EXPECT_NEAR(p.recon_b, recon_b, 1e-10);
    EXPECT_NEAR(p.kl_sem, kl_sem, 1e-10);
    EXPECT_NEAR(p.kl_lang_a, kl_a, 1e-10);
    EXPECT_NEAR(p.kl_lang_b, kl_b, 1e-10);
    EXPECT_NEAR(p.total, tr_ab + tr_ba + lambda * (recon_a + recon_b + klw * (kl_sem + kl_a + kl_b)), 1e-10);
}

TEST_F(ObjectiveTest, ZeroKlWeightLeavesOnlyReconstruction) {
    auto p = run(ob::Objective::vmsst, 1.0, 0.0);
    EXPECT_EQ(p.total, p.translation_ab + p.translation_ba + (p.recon_a + p.recon_b));
}

TEST_F(ObjectiveTest, DecomposesIntoBiTranslationPlusReconstruction) {
    auto v = run(ob::Objective::vmsst, 1.0, 0.0);
    auto bt = run(ob::Objective::bitranslation, 1.0, 0.0);
    EXPECT_NEAR(v.total, bt.total + v.recon_a + v.recon_b, 1e-12);
    EXPECT_NEAR(bt.total, bt.translation_ab + bt.translation_ba, 1e-15);
    EXPECT_EQ(bt.recon_a, 0.0);
    EXPECT_EQ(bt.kl_sem, 0.0);
    EXPECT_GT(bt.total, 0.0);
    // BiTranslation equals the translation part of VMSST.
    EXPECT_NEAR(bt.translation_ab, v.translation_ab, 1e-12);
    EXPECT_NEAR(bt.translation_ba, v.translation_ba, 1e-12);
}

TEST_F(ObjectiveTest, DeterministicWithoutNoise) {
    for (auto kind : {ob::Objective::bitranslation, ob::Objective::contrastive}) {
        num::Rng r1(1), r2(999);
        auto c = config_for(kind, 0.1);
        EXPECT_EQ(ob::evaluate(model, batch, c, 1.0, r1).parts.total, ob::evaluate(model, batch, c, 1.0, r2).parts.total);
    }
}

TEST_F(ObjectiveTest, VmsstContrastiveCombination) {
    auto plain = run(ob::Objective::contrastive, 0.0, 1.0);
    auto zero = run(ob::Objective::vmsst_contrastive, 0.0, 1.0);
    EXPECT_EQ(zero.total, plain.total);
    EXPECT_EQ(zero.contrastive, plain.contrastive);

    const double lambda = 0.0005, klw = 0.8;
    auto mixed = run(ob::Objective::vmsst_contrastive, lambda, klw);
    auto inner = run(ob::Objective::vmsst, 1.0, klw);
    EXPECT_NEAR(mixed.total, plain.contrastive + lambda * inner.total, 1e-10);
    EXPECT_NEAR(mixed.contrastive, plain.contrastive, 1e-15);
}

TEST_F(ObjectiveTest, ContrastiveUsesSemanticMeans) {
    auto p = run(ob::Objective::contrastive, 0.0, 1.0);
    auto s = model.encode_semantic(batch.a).mu, t = model.encode_semantic(batch.b).mu;
    EXPECT_NEAR(p.total, ob::contrastive_loss(s, t).item(), 1e-12);
}

TEST_F(ObjectiveTest, PriorMeanModeIgnoresLanguagePosterior) {
    auto base = run(ob::Objective::bitranslation, 1.0, 0.0, ob::TranslationLanguage::prior_mean);
    for (const auto& e : model.parameters().entries()) {
        if (e.name.rfind("language_", 0) != 0) continue;
        auto t = e.tensor;
        for (double& v : t.data()) v += 0.3;
    }
    auto changed = run(ob::Objective::bitranslation, 1.0, 0.0, ob::TranslationLanguage::prior_mean);
    EXPECT_EQ(base.total, changed.total);
    auto with_posterior = run(ob::Objective::bitranslation, 1.0, 0.0);
    EXPECT_NE(with_posterior.total, changed.total);
}

TEST_F(ObjectiveTest, TranslationGradientsReachBothEncoders) {
    num::Tape<double> tape;
    num::Rng rng(0);
    ob::LossResult<double> r;
    {
        num::Tape<double>::Recording rec(tape);
        r = ob::evaluate(model, batch, config_for(ob::Objective::bitranslation, 0.1), 1.0, rng);
    }
    tape.backward(r.loss);
    auto grad_norm = [&](const std::string& prefix) {
        double acc = 0;
        for (const auto& e : model.parameters().entries()) {
            if (e.name.rfind(prefix, 0) != 0 || !e.tensor.has_grad()) continue;
            for (double g : e.tensor.grad()) acc += g * g;
        }
        return acc;
    };
    EXPECT_GT(grad_norm("semantic_encoder"), 0.0);
    EXPECT_GT(grad_norm("semantic_head.mu"), 0.0);
    EXPECT_GT(grad_norm("language_encoder0"), 0.0);
    EXPECT_GT(grad_norm("language_head0.mu"), 0.0);
}

TEST_F(ObjectiveTest, PermutationEquivariant) {
    // Swapping rows of equal parity keeps the semantic side of every pair.
    const std::vector<std::size_t> perm = {2, 3, 0, 1};
    vm::PairBatch p = batch;
    auto sn = noise.semantic.clone(), ln = noise.language.clone();
    const std::size_t n = 4, len = batch.a.len;
    for (std::size_t i = 0; i < n; ++i) {
        const std::size_t src = perm[i];
        std::copy_n(batch.a.ids.begin() + src * len, len, p.a.ids.begin() + i * len);
        std::copy_n(batch.a.mask.begin() + src * len, len, p.a.mask.begin() + i * len);
        std::copy_n(batch.b.ids.begin() + src * len, len, p.b.ids.begin() + i * len);
        std::copy_n(batch.b.mask.begin() + src * len, len, p.b.mask.begin() + i * len);
        p.lang_a[i] = batch.lang_a[src];
        p.lang_b[i] = batch.lang_b[src];
        for (std::size_t j = 0; j < 3; ++j) {
            sn.data()[i * 3 + j] = noise.semantic.at(src, j);
            ln.data()[i * 3 + j] = noise.language.at(src, j);
            ln.data()[(n + i) * 3 + j] = noise.language.at(n + src, j);
        }
    }
    ob::LatentNoise<double> pn{sn, ln};
    for (auto kind : {ob::Objective::vmsst, ob::Objective::contrastive, ob::Objective::bitranslation,
                      ob::Objective::vmsst_contrastive}) {
        auto c = config_for(kind, 0.1);
        num::Rng r1(0), r2(0);
        const double base = ob::evaluate_with_noise(model, batch, c, 0.6, noise, r1).parts.total;
        const double permuted = ob::evaluate_with_noise(model, p, c, 0.6, pn, r2).parts.total;
        EXPECT_NEAR(base, permuted, 1e-12) << ob::to_string(kind);
    }
}

TEST_F(ObjectiveTest, RejectsInvalidInputs) {
    num::Rng rng(0);
    auto bad = batch;
    bad.sem_side[0] = vm::Side::b;
    EXPECT_THROW(ob::evaluate(model, bad, config_for(ob::Objective::vmsst, 0.1), 1.0, rng), vmsst::ContractError);
    EXPECT_THROW(ob::evaluate(model, batch, config_for(ob::Objective::vmsst, -1.0), 1.0, rng), vmsst::ConfigError);
    auto short_noise = ob::LatentNoise<double>::zeros(3, 3);
    EXPECT_THROW(ob::evaluate_with_noise(model, batch, config_for(ob::Objective::vmsst, 0.1), 1.0, short_noise, rng),
                 vmsst::DimensionError);
    EXPECT_THROW(ob::parse_objective("triplet"), vmsst::ConfigError);
    EXPECT_EQ(ob::parse_objective("vmsst_contrastive"), ob::Objective::vmsst_contrastive);
}

TEST_F(ObjectiveTest, GradientCheckAllObjectives) {
    std::vector<num::NamedTensor> params;
    for (const auto& e : model.parameters().entries()) params.push_back({e.name, e.tensor});
    num::GradCheckOptions opts;
    opts.tolerance = 1e-4;
    opts.abs_floor = 1e-6;
    for (auto kind : {ob::Objective::vmsst, ob::Objective::contrastive, ob::Objective::bitranslation,
                      ob::Objective::vmsst_contrastive}) {
        auto c = config_for(kind, kind == ob::Objective::vmsst_contrastive ? 0.5 : 0.1);
        auto report = num::grad_check(
            [&] {
                num::Rng rng(0);
                return ob::evaluate_with_noise(model, batch, c, 0.7, noise, rng).loss;
            },
            params, opts);
        EXPECT_TRUE(report.passed) << ob::to_string(kind) << " worst " << report.worst_parameter << "["
                                   << report.worst_index << "] rel " << report.max_rel_error;
    }
}
