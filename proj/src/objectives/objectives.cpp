#include "vmsst/objectives/objectives.hpp"

#include <cmath>

#include "vmsst/numcore/errors.hpp"

namespace vmsst::objectives {

using num::Tensor;

std::string to_string(Objective objective) {
    switch (objective) {
        case Objective::vmsst: return "vmsst";
        case Objective::contrastive: return "contrastive";
        case Objective::bitranslation: return "bitranslation";
        case Objective::vmsst_contrastive: return "vmsst_contrastive";
    }
    return "?";
}

Objective parse_objective(const std::string& name) {
    for (auto o : {Objective::vmsst, Objective::contrastive, Objective::bitranslation, Objective::vmsst_contrastive}) {
        if (to_string(o) == name) return o;
    }
    throw ConfigError("objective: unknown objective '" + name + "'");
}

std::string to_string(TranslationLanguage mode) {
    return mode == TranslationLanguage::prior_mean ? "prior_mean" : "target_posterior_mean";
}

TranslationLanguage parse_translation_language(const std::string& name) {
    if (name == "prior_mean") return TranslationLanguage::prior_mean;
    if (name == "target_posterior_mean") return TranslationLanguage::target_posterior_mean;
    throw ConfigError("objective.translation_language: unknown mode '" + name + "'");
}

template <typename Real>
LatentNoise<Real> LatentNoise<Real>::draw(num::Rng& rng, std::size_t batch, std::size_t latent_dim) {
    LatentNoise n;
    n.semantic = Tensor<Real>({batch, latent_dim}, num::standard_normal<Real>(rng, batch * latent_dim));
    n.language = Tensor<Real>({2 * batch, latent_dim}, num::standard_normal<Real>(rng, 2 * batch * latent_dim));
    return n;
}

template <typename Real>
LatentNoise<Real> LatentNoise<Real>::zeros(std::size_t batch, std::size_t latent_dim) {
    return {Tensor<Real>::zeros({batch, latent_dim}), Tensor<Real>::zeros({2 * batch, latent_dim})};
}

template <typename Real>
Tensor<Real> kl_diag_gaussian(const model::GaussianPosterior<Real>& p) {
    if (p.mu.shape() != p.log_var.shape() || p.mu.rank() != 2) {
        throw DimensionError("kl_diag_gaussian: mu " + num::shape_string(p.mu.shape()) + " vs log_var " +
                             num::shape_string(p.log_var.shape()));
    }
    if (p.mu.rows() == 0) throw EmptySequenceError("kl_diag_gaussian: no rows");
    auto terms = num::sub(num::add_scalar(num::add(num::mul(p.mu, p.mu), num::exp(p.log_var)), Real(-1)), p.log_var);
    return num::scale(num::sum(terms), Real(0.5) / static_cast<Real>(p.mu.rows()));
}

template <typename Real>
Tensor<Real> reconstruction_nll(const Tensor<Real>& logits, const model::DecoderTargets& targets) {
    if (targets.batch == 0) throw EmptySequenceError("reconstruction_nll: empty batch");
    std::vector<Real> weights(targets.targets.size(), Real(0));
    for (std::size_t b = 0; b < targets.batch; ++b) {
        std::size_t count = 0;
        for (std::size_t t = 0; t < targets.len; ++t) count += targets.mask[b * targets.len + t];
        if (count == 0) {
            throw EmptySequenceError("reconstruction_nll: sequence " + std::to_string(b) + " has no target token");
        }
        const Real w = Real(1) / (static_cast<Real>(count) * static_cast<Real>(targets.batch));
        for (std::size_t t = 0; t < targets.len; ++t) {
            if (targets.mask[b * targets.len + t]) weights[b * targets.len + t] = w;
        }
    }
    return num::cross_entropy(logits, std::span<const std::int32_t>(targets.targets),
                              std::span<const Real>(weights));
}

template <typename Real>
Tensor<Real> contrastive_loss(const Tensor<Real>& s, const Tensor<Real>& t) {
    if (s.rank() != 2 || s.shape() != t.shape()) {
        throw DimensionError("contrastive_loss: " + num::shape_string(s.shape()) + " vs " +
                             num::shape_string(t.shape()));
    }
    const std::size_t batch = s.rows();
    if (batch == 0) throw EmptySequenceError("contrastive_loss: empty batch");
    std::vector<std::int32_t> diagonal(batch);
    for (std::size_t i = 0; i < batch; ++i) diagonal[i] = static_cast<std::int32_t>(i);
    std::vector<Real> weights(batch, Real(1) / static_cast<Real>(2 * batch));
    auto scores = num::matmul(s, num::transpose(t));
    std::span<const std::int32_t> tg(diagonal);
    std::span<const Real> w(weights);
    return num::add(num::cross_entropy(scores, tg, w), num::cross_entropy(num::transpose(scores), tg, w));
}

namespace {

template <typename Real>
double value(const Tensor<Real>& t) {
    return static_cast<double>(t.item());
}

}  // namespace

template <typename Real>
LossResult<Real> evaluate_with_noise(const model::Model<Real>& model, const model::PairBatch& batch,
                                     const ObjectiveConfig& config, double kl_weight, const LatentNoise<Real>& noise,
                                     num::Rng& rng) {
    const auto& mc = model.config();
    batch.validate(mc.n_languages, mc.max_len);
    if (!(config.lambda >= 0.0) || !std::isfinite(config.lambda)) {
        throw ConfigError("objective.lambda: must be a finite non-negative number");
    }
    if (!(kl_weight >= 0.0) || !std::isfinite(kl_weight)) throw ContractError("kl_weight must be finite and >= 0");

    const std::size_t n = batch.size(), k = mc.latent_dim;
    const bool variational = config.kind == Objective::vmsst || config.kind == Objective::vmsst_contrastive;
    const bool translation = config.kind != Objective::contrastive;
    if (variational && (noise.semantic.shape() != num::Shape{n, k} || noise.language.shape() != num::Shape{2 * n, k})) {
        throw DimensionError("latent noise does not match a batch of " + std::to_string(n));
    }

    model::ForwardOptions opts{config.dropout, &rng};
    LossResult<Real> result;
    auto& parts = result.parts;
    parts.kl_weight = kl_weight;
    parts.lambda = config.lambda;

    // Rows 0..n-1 hold side a, rows n..2n-1 side b.
    const auto both = model::TokenBatch::stack(batch.a, batch.b);
    std::vector<std::int32_t> langs(batch.lang_a);
    langs.insert(langs.end(), batch.lang_b.begin(), batch.lang_b.end());

    const auto sem = model.encode_semantic(both, opts);
    const auto mu_a = num::slice_rows(sem.mu, 0, n), mu_b = num::slice_rows(sem.mu, n, n);

    Tensor<Real> contrastive;
    if (config.kind == Objective::contrastive || config.kind == Objective::vmsst_contrastive) {
        contrastive = contrastive_loss(mu_a, mu_b);
        parts.contrastive = value(contrastive);
    }
    if (!translation) {
        result.loss = contrastive;
        parts.total = parts.contrastive;
        return result;
    }

    const bool need_language = variational || config.translation_language == TranslationLanguage::target_posterior_mean;
    model::GaussianPosterior<Real> lang;
    if (need_language) lang = model.encode_language(both, langs, opts);

    // One decoder pass over up to four blocks of n rows: translations of a and
    // b from the other side's semantic mean, then ELBO reconstructions of a, b.
    std::vector<Tensor<Real>> z_sem{num::concat_rows(std::vector<Tensor<Real>>{mu_b, mu_a})};
    std::vector<Tensor<Real>> z_lang{config.translation_language == TranslationLanguage::prior_mean
                                         ? Tensor<Real>::zeros({2 * n, k})
                                         : lang.mu};
    auto targets = both;
    auto target_langs = langs;

    model::GaussianPosterior<Real> sem_side;
    if (variational) {
        std::vector<std::int32_t> pick(n);
        for (std::size_t i = 0; i < n; ++i) {
            pick[i] = static_cast<std::int32_t>(batch.sem_side[i] == model::Side::a ? i : n + i);
        }
        std::span<const std::int32_t> idx(pick);
        sem_side = {num::gather_rows(sem.mu, idx), num::gather_rows(sem.log_var, idx)};
        auto z_s = model::reparameterize(sem_side, noise.semantic);
        z_sem.push_back(num::concat_rows(std::vector<Tensor<Real>>{z_s, z_s}));
        z_lang.push_back(model::reparameterize(lang, noise.language));
        targets = model::TokenBatch::stack(both, both);
        target_langs.insert(target_langs.end(), langs.begin(), langs.end());
    }

    const auto logits = model.decode_logits(num::concat_rows(z_sem), num::concat_rows(z_lang), targets,
                                            target_langs, opts);
    const std::size_t block = n * (both.len - 1);
    const auto targets_a = model::decoder_targets(batch.a), targets_b = model::decoder_targets(batch.b);
    auto nll = [&](std::size_t index, const model::DecoderTargets& t) {
        return reconstruction_nll(num::slice_rows(logits, index * block, block), t);
    };

    auto tr_ab = nll(0, targets_a), tr_ba = nll(1, targets_b);
    parts.translation_ab = value(tr_ab);
    parts.translation_ba = value(tr_ba);
    auto objective = num::add(tr_ab, tr_ba);

    if (variational) {
        auto recon_a = nll(2, targets_a), recon_b = nll(3, targets_b);
        auto kl_sem = kl_diag_gaussian(sem_side);
        auto kl_a = kl_diag_gaussian<Real>({num::slice_rows(lang.mu, 0, n), num::slice_rows(lang.log_var, 0, n)});
        auto kl_b = kl_diag_gaussian<Real>({num::slice_rows(lang.mu, n, n), num::slice_rows(lang.log_var, n, n)});
        parts.recon_a = value(recon_a);
        parts.recon_b = value(recon_b);
        parts.kl_sem = value(kl_sem);
        parts.kl_lang_a = value(kl_a);
        parts.kl_lang_b = value(kl_b);

        auto kl = num::scale(num::add(num::add(kl_sem, kl_a), kl_b), static_cast<Real>(kl_weight));
        auto neg_elbo = num::add(num::add(recon_a, recon_b), kl);
        if (config.kind == Objective::vmsst) {
            objective = num::add(objective, num::scale(neg_elbo, static_cast<Real>(config.lambda)));
        } else {
            objective = num::add(contrastive, num::scale(num::add(objective, neg_elbo), static_cast<Real>(config.lambda)));
        }
    }
    result.loss = objective;
    parts.total = value(objective);
    return result;
}

template <typename Real>
LossResult<Real> evaluate(const model::Model<Real>& model, const model::PairBatch& batch,
                          const ObjectiveConfig& config, double kl_weight, num::Rng& rng) {
    const bool variational = config.kind == Objective::vmsst || config.kind == Objective::vmsst_contrastive;
    const auto noise = variational ? LatentNoise<Real>::draw(rng, batch.size(), model.config().latent_dim)
                                   : LatentNoise<Real>{};
    return evaluate_with_noise(model, batch, config, kl_weight, noise, rng);
}

#define VMSST_INSTANTIATE_OBJECTIVES(Real)                                                                     \
    template struct LatentNoise<Real>;                                                                         \
    template Tensor<Real> kl_diag_gaussian(const model::GaussianPosterior<Real>&);                             \
    template Tensor<Real> reconstruction_nll(const Tensor<Real>&, const model::DecoderTargets&);               \
    template Tensor<Real> contrastive_loss(const Tensor<Real>&, const Tensor<Real>&);                          \
    template LossResult<Real> evaluate(const model::Model<Real>&, const model::PairBatch&,                      \
                                       const ObjectiveConfig&, double, num::Rng&);                             \
    template LossResult<Real> evaluate_with_noise(const model::Model<Real>&, const model::PairBatch&,          \
                                                  const ObjectiveConfig&, double, const LatentNoise<Real>&,    \
                                                  num::Rng&);

VMSST_INSTANTIATE_OBJECTIVES(float)
VMSST_INSTANTIATE_OBJECTIVES(double)

}  // namespace vmsst::objectives
