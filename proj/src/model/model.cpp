#include "vmsst/model/model.hpp"

#include <cmath>
#include <string>

#include "vmsst/tokens.hpp"

namespace vmsst::model {

using num::Tensor;

template <typename Real>
Tensor<Real> ParameterSet<Real>::add(const std::string& name, num::Shape shape) {
    if (contains(name)) throw ContractError("duplicate parameter name " + name);
    index_.emplace(name, entries_.size());
    entries_.push_back({name, Tensor<Real>(std::move(shape), true)});
    return entries_.back().tensor;
}

template <typename Real>
const Tensor<Real>& ParameterSet<Real>::get(const std::string& name) const {
    auto it = index_.find(name);
    if (it == index_.end()) throw ContractError("unknown parameter " + name);
    return entries_[it->second].tensor;
}

template <typename Real>
std::size_t ParameterSet<Real>::element_count() const {
    std::size_t total = 0;
    for (const auto& e : entries_) total += e.tensor.size();
    return total;
}

template <typename Real>
void ParameterSet<Real>::zero_grad() {
    for (auto& e : entries_) e.tensor.zero_grad();
}

template class ParameterSet<float>;
template class ParameterSet<double>;

template <typename Real>
Tensor<Real> reparameterize(const GaussianPosterior<Real>& p, const Tensor<Real>& noise) {
    return num::add(p.mu, num::mul(num::exp(num::scale(p.log_var, Real(0.5))), noise));
}

template Tensor<float> reparameterize(const GaussianPosterior<float>&, const Tensor<float>&);
template Tensor<double> reparameterize(const GaussianPosterior<double>&, const Tensor<double>&);

DecoderTargets decoder_targets(const TokenBatch& sentences) {
    if (sentences.len < 2) throw ContractError("decoder targets need sequences of length >= 2");
    DecoderTargets out;
    out.batch = sentences.batch;
    out.len = sentences.len - 1;
    out.targets.resize(out.batch * out.len);
    out.mask.resize(out.batch * out.len);
    for (std::size_t b = 0; b < out.batch; ++b) {
        for (std::size_t t = 0; t < out.len; ++t) {
            out.targets[b * out.len + t] = sentences.ids[b * sentences.len + t + 1];
            out.mask[b * out.len + t] = sentences.mask[b * sentences.len + t + 1];
        }
    }
    return out;
}

namespace {

template <typename Real>
void fill_normal(Tensor<Real>& t, double stddev, num::Rng& rng) {
    std::normal_distribution<double> normal(0.0, stddev);
    for (Real& v : t.data()) v = static_cast<Real>(normal(rng));
}

template <typename Real>
Tensor<Real> mask_tensor(const std::vector<std::uint8_t>& mask, std::size_t batch, std::size_t len) {
    Tensor<Real> out({batch, len});
    for (std::size_t i = 0; i < mask.size(); ++i) out.data()[i] = mask[i];
    return out;
}

std::vector<std::int32_t> positions(std::size_t batch, std::size_t len) {
    std::vector<std::int32_t> pos(batch * len);
    for (std::size_t b = 0; b < batch; ++b)
        for (std::size_t t = 0; t < len; ++t) pos[b * len + t] = static_cast<std::int32_t>(t);
    return pos;
}

}  // namespace

template <typename Real>
Tensor<Real> Model<Real>::Linear::operator()(const Tensor<Real>& x) const {
    auto y = num::matmul(x, weight);
    return bias.defined() ? num::add_bias(y, bias) : y;
}

template <typename Real>
typename Model<Real>::Linear Model<Real>::make_linear(const std::string& name, std::size_t in, std::size_t out,
                                                      bool bias, num::Rng& rng) {
    Linear l;
    l.weight = params_.add(name + ".weight", {in, out});
    fill_normal(l.weight, 1.0 / std::sqrt(static_cast<double>(in)), rng);
    if (bias) l.bias = params_.add(name + ".bias", {out});
    return l;
}

template <typename Real>
typename Model<Real>::Norm Model<Real>::make_norm(const std::string& name) {
    Norm n;
    n.gamma = params_.add(name + ".gamma", {config_.model_dim});
    for (Real& g : n.gamma.data()) g = Real(1);
    n.beta = params_.add(name + ".beta", {config_.model_dim});
    return n;
}

template <typename Real>
Tensor<Real> Model<Real>::make_embedding(const std::string& name, std::size_t rows, num::Rng& rng) {
    auto t = params_.add(name, {rows, config_.model_dim});
    fill_normal(t, 0.1, rng);
    return t;
}

template <typename Real>
typename Model<Real>::Block Model<Real>::make_block(const std::string& name, bool decoder, num::Rng& rng) {
    const std::size_t d = config_.model_dim;
    Block b;
    b.attn_norm = make_norm(name + ".attn_norm");
    b.query = make_linear(name + ".attn.query", d, d, true, rng);
    b.key = make_linear(name + ".attn.key", d, d, true, rng);
    b.value = make_linear(name + ".attn.value", d, d, true, rng);
    b.out = make_linear(name + ".attn.out", d, d, true, rng);
    if (decoder) {
        b.inject_semantic = make_linear(name + ".inject_semantic", config_.latent_dim, d, true, rng);
        b.inject_language = make_linear(name + ".inject_language", config_.latent_dim, d, false, rng);
    }
    b.ff_norm = make_norm(name + ".ff_norm");
    b.ff_in = make_linear(name + ".ff.in", d, config_.ff_dim, true, rng);
    b.ff_out = make_linear(name + ".ff.out", config_.ff_dim, d, true, rng);
    return b;
}

template <typename Real>
typename Model<Real>::Stack Model<Real>::make_stack(const std::string& name, std::size_t layers, bool decoder,
                                                    num::Rng& rng) {
    Stack s;
    s.position_embedding = make_embedding(name + ".position_embedding", config_.max_len, rng);
    for (std::size_t l = 0; l < layers; ++l) {
        s.blocks.push_back(make_block(name + ".layer" + std::to_string(l), decoder, rng));
    }
    s.final_norm = make_norm(name + ".final_norm");
    return s;
}

template <typename Real>
Model<Real>::Model(ModelConfig config, std::uint64_t init_seed) : config_(std::move(config)) {
    config_.validate();
    num::Rng rng(init_seed);
    const std::size_t d = config_.model_dim, k = config_.latent_dim;

    token_embedding_ = make_embedding("token_embedding", config_.vocab_size, rng);
    if (config_.use_encoder_lang_emb) {
        language_embedding_ = make_embedding("language_embedding", config_.n_languages, rng);
    }
    const std::string sem_name = config_.single_encoder ? "encoder" : "semantic_encoder";
    semantic_encoder_ = make_stack(sem_name, config_.n_enc_layers, false, rng);
    semantic_heads_ = {make_linear("semantic_head.mu", d, k, true, rng),
                       make_linear("semantic_head.log_var", d, k, true, rng)};
    if (!config_.single_encoder) {
        for (std::size_t e = 0; e < config_.n_language_encoders; ++e) {
            language_encoders_.push_back(
                make_stack("language_encoder" + std::to_string(e), config_.n_enc_layers, false, rng));
        }
    }
    for (std::size_t e = 0; e < config_.n_language_encoders; ++e) {
        const std::string head = "language_head" + std::to_string(e);
        language_heads_.push_back({make_linear(head + ".mu", d, k, true, rng),
                                   make_linear(head + ".log_var", d, k, true, rng)});
    }
    decoder_ = make_stack("decoder", config_.n_dec_layers, true, rng);
    logit_semantic_ = make_linear("decoder.logit_semantic", k, d, true, rng);
    logit_language_ = make_linear("decoder.logit_language", k, d, true, rng);
    if (config_.factored_projection) {
        output_factor_ = params_.add("decoder.output_factor.weight", {3 * d, d});
        fill_normal(output_factor_, 1.0 / std::sqrt(3.0 * static_cast<double>(d)), rng);
        output_ = params_.add("decoder.output.weight", {d, config_.vocab_size});
        fill_normal(output_, 1.0 / std::sqrt(static_cast<double>(d)), rng);
    } else {
        output_ = params_.add("decoder.output.weight", {3 * d, config_.vocab_size});
        fill_normal(output_, 1.0 / std::sqrt(3.0 * static_cast<double>(d)), rng);
    }
}

template <typename Real>
std::size_t Model<Real>::projection_parameter_count() const {
    return output_.size() + (output_factor_.defined() ? output_factor_.size() : 0);
}

template <typename Real>
Tensor<Real> Model<Real>::self_attention(const Block& block, const Tensor<Real>& x, const Tensor<Real>& mask,
                                         std::size_t batch, bool causal, const ForwardOptions& opts) const {
    auto h = num::layer_norm(x, block.attn_norm.gamma, block.attn_norm.beta, Real(1e-5));
    num::AttentionSpec spec{batch, config_.n_heads, causal, opts.dropout};
    auto attended = num::attention(block.query(h), block.key(h), block.value(h), mask, spec, opts.rng);
    return block.out(attended);
}

template <typename Real>
Tensor<Real> Model<Real>::feed_forward(const Block& block, const Tensor<Real>& x, const ForwardOptions& opts) const {
    auto h = num::layer_norm(x, block.ff_norm.gamma, block.ff_norm.beta, Real(1e-5));
    auto a = num::gelu(block.ff_in(h));
    if (opts.dropout > 0.0) a = num::dropout(a, opts.dropout, *opts.rng);
    return block.ff_out(a);
}

template <typename Real>
Tensor<Real> Model<Real>::run_encoder(const Stack& stack, const TokenBatch& tokens, const std::int32_t* lang_ids,
                                      const ForwardOptions& opts) const {
    if (tokens.len > config_.max_len) {
        throw ContractError("sequence length " + std::to_string(tokens.len) + " exceeds max_len " +
                            std::to_string(config_.max_len));
    }
    const std::size_t batch = tokens.batch, len = tokens.len;
    auto pos = positions(batch, len);
    auto x = num::add(num::gather_rows(token_embedding_, std::span<const std::int32_t>(tokens.ids)),
                      num::gather_rows(stack.position_embedding, std::span<const std::int32_t>(pos)));
    if (lang_ids != nullptr && config_.use_encoder_lang_emb) {
        std::vector<std::int32_t> per_token(batch * len);
        for (std::size_t b = 0; b < batch; ++b) std::fill_n(per_token.begin() + b * len, len, lang_ids[b]);
        x = num::add(x, num::gather_rows(language_embedding_, std::span<const std::int32_t>(per_token)));
    }
    auto mask = mask_tensor<Real>(tokens.mask, batch, len);
    for (const auto& block : stack.blocks) {
        x = num::add(x, self_attention(block, x, mask, batch, false, opts));
        x = num::add(x, feed_forward(block, x, opts));
    }
    x = num::layer_norm(x, stack.final_norm.gamma, stack.final_norm.beta, Real(1e-5));
    return num::masked_mean_pool(x, mask);
}

template <typename Real>
GaussianPosterior<Real> Model<Real>::posterior(const Heads& heads, const Tensor<Real>& pooled) const {
    return {heads.mu(pooled), num::clamp(heads.log_var(pooled), Real(log_var_min), Real(log_var_max))};
}

template <typename Real>
GaussianPosterior<Real> Model<Real>::encode_semantic(const TokenBatch& tokens, const ForwardOptions& opts) const {
    return posterior(semantic_heads_, run_encoder(semantic_encoder_, tokens, nullptr, opts));
}

template <typename Real>
GaussianPosterior<Real> Model<Real>::encode_language(const TokenBatch& tokens, std::span<const std::int32_t> lang_ids,
                                                     const ForwardOptions& opts) const {
    if (lang_ids.size() != tokens.batch) {
        throw ContractError("encode_language: one language id per row required");
    }
    for (std::int32_t l : lang_ids) {
        if (l < 0 || static_cast<std::size_t>(l) >= config_.n_languages) {
            throw ConfigError("unknown language id " + std::to_string(l));
        }
    }
    auto stack_for = [&](std::size_t e) -> const Stack& {
        return config_.single_encoder ? semantic_encoder_ : language_encoders_[e];
    };
    if (config_.n_language_encoders == 1) {
        return posterior(language_heads_[0], run_encoder(stack_for(0), tokens, lang_ids.data(), opts));
    }

    // Route rows to their encoder, then restore the original row order.
    std::vector<Tensor<Real>> mus, log_vars;
    std::vector<std::int32_t> order(tokens.batch);
    std::int32_t next = 0;
    for (std::size_t e = 0; e < config_.n_language_encoders; ++e) {
        std::vector<std::vector<std::int32_t>> rows;
        std::vector<std::int32_t> langs;
        for (std::size_t b = 0; b < tokens.batch; ++b) {
            if (config_.language_encoder_for(static_cast<std::size_t>(lang_ids[b])) != e) continue;
            auto r = tokens.row(b);
            rows.emplace_back(r.begin(), r.begin() + static_cast<std::ptrdiff_t>(tokens.valid_count(b)));
            langs.push_back(lang_ids[b]);
            order[b] = next++;
        }
        if (rows.empty()) continue;
        auto group = TokenBatch::from_sequences(rows);
        auto p = posterior(language_heads_[e], run_encoder(stack_for(e), group, langs.data(), opts));
        mus.push_back(p.mu);
        log_vars.push_back(p.log_var);
    }
    auto mu = num::concat_rows(mus), log_var = num::concat_rows(log_vars);
    return {num::gather_rows(mu, std::span<const std::int32_t>(order)),
            num::gather_rows(log_var, std::span<const std::int32_t>(order))};
}

template <typename Real>
Tensor<Real> Model<Real>::decode_logits(const Tensor<Real>& z_sem, const Tensor<Real>& z_lang,
                                        const TokenBatch& target, std::span<const std::int32_t> target_lang,
                                        const ForwardOptions& opts) const {
    if (target.len > config_.max_len) {
        throw ContractError("target length " + std::to_string(target.len) + " exceeds max_len " +
                            std::to_string(config_.max_len));
    }
    const std::size_t batch = target.batch;
    if (z_sem.rows() != batch || z_lang.rows() != batch || target_lang.size() != batch) {
        throw DimensionError("decode_logits: latents / languages do not match batch of " + std::to_string(batch));
    }
    if (target.len < 2) throw ContractError("decode_logits: targets need at least two tokens");
    const std::size_t len = target.len - 1;

    // Teacher forcing: position 0 carries the start token, position t > 0 the
    // gold token t.
    std::vector<std::int32_t> inputs(batch * len);
    std::vector<std::uint8_t> in_mask(batch * len);
    for (std::size_t b = 0; b < batch; ++b) {
        const std::int32_t lang = target_lang[b];
        if (lang < 0 || static_cast<std::size_t>(lang) >= config_.n_languages) {
            throw ConfigError("unknown language id " + std::to_string(lang));
        }
        for (std::size_t t = 0; t < len; ++t) {
            inputs[b * len + t] = target.ids[b * target.len + t];
            in_mask[b * len + t] = target.mask[b * target.len + t];
        }
        inputs[b * len] = config_.use_decoder_lang_emb ? tokens::language_start(static_cast<std::size_t>(lang))
                                                       : tokens::bos;
        in_mask[b * len] = 1;
    }
    auto pos = positions(batch, len);
    auto x = num::add(num::gather_rows(token_embedding_, std::span<const std::int32_t>(inputs)),
                      num::gather_rows(decoder_.position_embedding, std::span<const std::int32_t>(pos)));
    auto mask = mask_tensor<Real>(in_mask, batch, len);
    for (const auto& block : decoder_.blocks) {
        x = num::add(x, self_attention(block, x, mask, batch, true, opts));
        auto injected = num::add(block.inject_semantic(z_sem), block.inject_language(z_lang));
        x = num::add(x, num::repeat_rows(injected, len));
        x = num::add(x, feed_forward(block, x, opts));
    }
    auto hidden = num::layer_norm(x, decoder_.final_norm.gamma, decoder_.final_norm.beta, Real(1e-5));

    // Projection of [hidden; map(z_sem); map(z_lang)], evaluated blockwise so
    // the per-sentence blocks are projected once per row instead of per token.
    const std::size_t d = config_.model_dim;
    const Tensor<Real>& first = config_.factored_projection ? output_factor_ : output_;
    auto per_sentence =
        num::add(num::matmul(logit_semantic_(z_sem), num::slice_rows(first, d, d)),
                 num::matmul(logit_language_(z_lang), num::slice_rows(first, 2 * d, d)));
    auto projected = num::add(num::matmul(hidden, num::slice_rows(first, 0, d)), num::repeat_rows(per_sentence, len));
    return config_.factored_projection ? num::matmul(projected, output_) : projected;
}

template <typename Real>
Tensor<Real> Model<Real>::embed_sentences(const TokenBatch& tokens) const {
    return encode_semantic(tokens).mu;
}

template class Model<float>;
template class Model<double>;

}  // namespace vmsst::model
