#pragma once

#include <cstddef>
#include <json.hpp>

namespace vmsst::model {

struct ModelConfig {
    std::size_t vocab_size = 0;
    std::size_t model_dim = 64;
    std::size_t latent_dim = 32;
    std::size_t n_enc_layers = 2;
    std::size_t n_dec_layers = 1;
    std::size_t n_heads = 4;
    std::size_t ff_dim = 256;
    std::size_t n_languages = 4;
    std::size_t max_len = 32;

    // Ablation switches.
    bool factored_projection = false;
    bool single_encoder = false;
    std::size_t n_language_encoders = 1;
    bool use_encoder_lang_emb = true;
    bool use_decoder_lang_emb = true;

    // Throws ConfigError naming the offending field.
    void validate() const;

    // Round-robin assignment of languages to language encoders.
    std::size_t language_encoder_for(std::size_t language) const { return language % n_language_encoders; }

    bool operator==(const ModelConfig&) const = default;
};

void to_json(nlohmann::json& j, const ModelConfig& c);
// Missing keys keep their defaults.
void from_json(const nlohmann::json& j, ModelConfig& c);

}  // namespace vmsst::model
