#include "vmsst/model/config.hpp"

#include <string>

#include "vmsst/numcore/errors.hpp"

namespace vmsst::model {

namespace {

void require(bool ok, const char* field, const std::string& why) {
    if (!ok) throw ConfigError(std::string("model.") + field + ": " + why);
}

}  // namespace

void ModelConfig::validate() const {
    require(vocab_size > 0, "vocab_size", "must be positive");
    require(model_dim > 0, "model_dim", "must be positive");
    require(n_heads > 0 && model_dim % n_heads == 0, "n_heads", "must divide model_dim");
    require(latent_dim >= 1, "latent_dim", "must be at least 1");
    require(ff_dim > 0, "ff_dim", "must be positive");
    require(n_enc_layers >= 1, "n_enc_layers", "must be at least 1");
    require(n_dec_layers >= 1, "n_dec_layers", "must be at least 1");
    require(max_len >= 2, "max_len", "must be at least 2");
    require(n_languages >= 2, "n_languages", "must be at least 2");
    require(n_language_encoders >= 1 && n_language_encoders <= n_languages, "n_language_encoders",
            "must lie in [1, n_languages]");
    require(!(single_encoder && n_language_encoders != 1), "single_encoder",
            "a shared encoder implies n_language_encoders == 1");
    require(vocab_size > static_cast<std::size_t>(4 + n_languages), "vocab_size",
            "must exceed the reserved and language-start tokens");
}

void to_json(nlohmann::json& j, const ModelConfig& c) {
    j = nlohmann::json{{"vocab_size", c.vocab_size},
                       {"model_dim", c.model_dim},
                       {"latent_dim", c.latent_dim},
                       {"n_enc_layers", c.n_enc_layers},
                       {"n_dec_layers", c.n_dec_layers},
                       {"n_heads", c.n_heads},
                       {"ff_dim", c.ff_dim},
                       {"n_languages", c.n_languages},
                       {"max_len", c.max_len},
                       {"factored_projection", c.factored_projection},
                       {"single_encoder", c.single_encoder},
                       {"n_language_encoders", c.n_language_encoders},
                       {"use_encoder_lang_emb", c.use_encoder_lang_emb},
                       {"use_decoder_lang_emb", c.use_decoder_lang_emb}};
}

void from_json(const nlohmann::json& j, ModelConfig& c) {
    auto read = [&](const char* key, auto& field) {
        if (j.contains(key)) j.at(key).get_to(field);
    };
    read("vocab_size", c.vocab_size);
    read("model_dim", c.model_dim);
    read("latent_dim", c.latent_dim);
    read("n_enc_layers", c.n_enc_layers);
    read("n_dec_layers", c.n_dec_layers);
    read("n_heads", c.n_heads);
    read("ff_dim", c.ff_dim);
    read("n_languages", c.n_languages);
    read("max_len", c.max_len);
    read("factored_projection", c.factored_projection);
    read("single_encoder", c.single_encoder);
    read("n_language_encoders", c.n_language_encoders);
    read("use_encoder_lang_emb", c.use_encoder_lang_emb);
    read("use_decoder_lang_emb", c.use_decoder_lang_emb);
}

}  // namespace vmsst::model
