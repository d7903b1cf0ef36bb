#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "vmsst/model/batch.hpp"
#include "vmsst/model/config.hpp"
#include "vmsst/model/parameters.hpp"
#include "vmsst/numcore/ops.hpp"

namespace vmsst::model {

// Diagonal Gaussian over the latent space, one row per sentence.
template <typename Real>
struct GaussianPosterior {
    num::Tensor<Real> mu;       // [B x k]
    num::Tensor<Real> log_var;  // [B x k], clamped to [-10, 10]
};

inline constexpr double log_var_min = -10.0;
inline constexpr double log_var_max = 10.0;

struct ForwardOptions {
    double dropout = 0.0;
    num::Rng* rng = nullptr;  // required when dropout > 0
};

// z = mu + exp(0.5 * log_var) * noise.
template <typename Real>
num::Tensor<Real> reparameterize(const GaussianPosterior<Real>& p, const num::Tensor<Real>& noise);

// Teacher-forcing view of a sentence batch: the decoder predicts positions
// 1..len-1 of each row from the prefix before them.
struct DecoderTargets {
    std::size_t batch = 0;
    std::size_t len = 0;  // source len - 1
    std::vector<std::int32_t> targets;
    std::vector<std::uint8_t> mask;
};
DecoderTargets decoder_targets(const TokenBatch& sentences);

// Twin-encoder / single-decoder model. The semantic encoder never sees a
// language id; language encoders add a language embedding to every token; the
// decoder has no cross-attention and is conditioned on [z_sem; z_lang] at
// every layer and in the logits.
template <typename Real>
class Model {
public:
    Model(ModelConfig config, std::uint64_t init_seed);

    const ModelConfig& config() const { return config_; }
    const ParameterSet<Real>& parameters() const { return params_; }
    ParameterSet<Real>& parameters() { return params_; }

    GaussianPosterior<Real> encode_semantic(const TokenBatch& tokens, const ForwardOptions& opts = {}) const;

    // lang_ids has one entry per row.
    GaussianPosterior<Real> encode_language(const TokenBatch& tokens, std::span<const std::int32_t> lang_ids,
                                            const ForwardOptions& opts = {}) const;

    // Logits [B*(len-1) x V] for reconstructing `target` (full BOS..EOS rows)
    // in language target_lang, given latents z_sem, z_lang [B x k].
    num::Tensor<Real> decode_logits(const num::Tensor<Real>& z_sem, const num::Tensor<Real>& z_lang,
                                    const TokenBatch& target, std::span<const std::int32_t> target_lang,
                                    const ForwardOptions& opts = {}) const;

    // Posterior mean of the semantic encoder; the sentence representation.
    num::Tensor<Real> embed_sentences(const TokenBatch& tokens) const;

    // Number of parameters in the output projection (full or factored).
    std::size_t projection_parameter_count() const;

private:
    struct Linear {
        num::Tensor<Real> weight;
        num::Tensor<Real> bias;  // undefined when the map has no bias
        num::Tensor<Real> operator()(const num::Tensor<Real>& x) const;
    };
    struct Norm {
        num::Tensor<Real> gamma;
        num::Tensor<Real> beta;
    };
    struct Block {
        Norm attn_norm;
        Linear query, key, value, out;
        Norm ff_norm;
        Linear ff_in, ff_out;
        // Decoder only: latent injection in place of cross-attention.
        Linear inject_semantic, inject_language;
    };
    struct Stack {
        num::Tensor<Real> position_embedding;
        std::vector<Block> blocks;
        Norm final_norm;
    };
    struct Heads {
        Linear mu, log_var;
    };

    Linear make_linear(const std::string& name, std::size_t in, std::size_t out, bool bias, num::Rng& rng);
    Norm make_norm(const std::string& name);
    Block make_block(const std::string& name, bool decoder, num::Rng& rng);
    Stack make_stack(const std::string& name, std::size_t layers, bool decoder, num::Rng& rng);
    num::Tensor<Real> make_embedding(const std::string& name, std::size_t rows, num::Rng& rng);

    num::Tensor<Real> run_encoder(const Stack& stack, const TokenBatch& tokens, const std::int32_t* lang_ids,
                                  const ForwardOptions& opts) const;
    num::Tensor<Real> feed_forward(const Block& block, const num::Tensor<Real>& x, const ForwardOptions& opts) const;
    num::Tensor<Real> self_attention(const Block& block, const num::Tensor<Real>& x, const num::Tensor<Real>& mask,
                                     std::size_t batch, bool causal, const ForwardOptions& opts) const;
    GaussianPosterior<Real> posterior(const Heads& heads, const num::Tensor<Real>& pooled) const;

    ModelConfig config_;
    ParameterSet<Real> params_;
    num::Tensor<Real> token_embedding_;
    num::Tensor<Real> language_embedding_;
    Stack semantic_encoder_;
    std::vector<Stack> language_encoders_;  // empty when single_encoder
    Heads semantic_heads_;
    std::vector<Heads> language_heads_;
    Stack decoder_;
    Linear logit_semantic_, logit_language_;
    num::Tensor<Real> output_factor_;  // [3d x d], factored projection only
    num::Tensor<Real> output_;         // [3d x V] or [d x V]
};

extern template class Model<float>;
extern template class Model<double>;

}  // namespace vmsst::model
