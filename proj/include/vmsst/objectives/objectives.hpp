#pragma once

#include <string>

#include "vmsst/model/model.hpp"

namespace vmsst::objectives {

enum class Objective { vmsst, contrastive, bitranslation, vmsst_contrastive };

std::string to_string(Objective objective);
// Accepts "vmsst", "contrastive", "bitranslation", "vmsst_contrastive";
// throws ConfigError otherwise.
Objective parse_objective(const std::string& name);

// Language latent fed to the decoder in the translation terms.
enum class TranslationLanguage {
    target_posterior_mean,  // mu of the target sentence's language posterior
    prior_mean,             // zero vector, the mean of the N(0, I) prior
};

std::string to_string(TranslationLanguage mode);
TranslationLanguage parse_translation_language(const std::string& name);

struct ObjectiveConfig {
    Objective kind = Objective::vmsst;
    double lambda = 0.1;
    TranslationLanguage translation_language = TranslationLanguage::target_posterior_mean;
    double dropout = 0.0;
};

// Scalar summary of one loss evaluation. Every field is a batch mean.
struct LossBreakdown {
    double total = 0;
    double recon_a = 0, recon_b = 0;
    double kl_sem = 0, kl_lang_a = 0, kl_lang_b = 0;
    // translation_ab: NLL of sentence a decoded from mu_sem(b); ba symmetric.
    double translation_ab = 0, translation_ba = 0;
    double contrastive = 0;
    double kl_weight = 0;
    double lambda = 0;
};

template <typename Real>
struct LossResult {
    num::Tensor<Real> loss;  // scalar, recorded on the active tape
    LossBreakdown parts;
};

// Standard-normal draws for one VMSST evaluation: one row per semantic latent
// (B rows) and per language latent (2B rows: side a then side b).
template <typename Real>
struct LatentNoise {
    num::Tensor<Real> semantic;
    num::Tensor<Real> language;

    static LatentNoise draw(num::Rng& rng, std::size_t batch, std::size_t latent_dim);
    static LatentNoise zeros(std::size_t batch, std::size_t latent_dim);
};

// 1/2 sum_j (mu^2 + exp(lv) - 1 - lv), summed over latent dims, averaged over rows.
template <typename Real>
num::Tensor<Real> kl_diag_gaussian(const model::GaussianPosterior<Real>& p);

// Per-sequence mean token NLL, averaged over sequences. logits are
// [batch*len x V] in row-major sequence order.
template <typename Real>
num::Tensor<Real> reconstruction_nll(const num::Tensor<Real>& logits, const model::DecoderTargets& targets);

// -(1/2B) sum_i [log p(s_i | t_i) + log p(t_i | s_i)] over raw dot products.
template <typename Real>
num::Tensor<Real> contrastive_loss(const num::Tensor<Real>& s, const num::Tensor<Real>& t);

// Each objective validates the batch. `rng` drives dropout and, for the
// variational objectives, the latent noise (drawn before any dropout mask).
template <typename Real>
LossResult<Real> evaluate(const model::Model<Real>& model, const model::PairBatch& batch,
                          const ObjectiveConfig& config, double kl_weight, num::Rng& rng);

// Same as evaluate() with caller-supplied latent noise.
template <typename Real>
LossResult<Real> evaluate_with_noise(const model::Model<Real>& model, const model::PairBatch& batch,
                                     const ObjectiveConfig& config, double kl_weight, const LatentNoise<Real>& noise,
                                     num::Rng& rng);

}  // namespace vmsst::objectives
