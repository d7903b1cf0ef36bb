#include "vmsst/trainer/trainer.hpp"

#include <charconv>
#include <cmath>
#include <sstream>

#include "vmsst/numcore/errors.hpp"
#include "vmsst/numcore/tape.hpp"

namespace vmsst::trainer {

namespace ob = objectives;

namespace {

void require(bool ok, const char* field, const std::string& why) {
    if (!ok) throw ConfigError(std::string("training.") + field + ": " + why);
}

std::string describe(const ob::LossBreakdown& p) {
    std::ostringstream s;
    s << "total=" << p.total << " recon_a=" << p.recon_a << " recon_b=" << p.recon_b << " kl_sem=" << p.kl_sem
      << " kl_lang_a=" << p.kl_lang_a << " kl_lang_b=" << p.kl_lang_b << " translation_ab=" << p.translation_ab
      << " translation_ba=" << p.translation_ba << " contrastive=" << p.contrastive;
    return s.str();
}

}  // namespace

void TrainingConfig::validate() const {
    require(steps >= 1, "steps", "must be at least 1");
    require(batch_size >= 1, "batch_size", "must be at least 1");
    require(peak_lr > 0 && std::isfinite(peak_lr), "peak_lr", "must be positive");
    require(warmup_steps >= 1, "warmup_steps", "must be at least 1");
    require(kl_anneal_steps >= 1, "kl_anneal_steps", "must be at least 1");
    require(lambda >= 0 && std::isfinite(lambda), "lambda", "must be finite and >= 0");
    require(!dropout || (*dropout >= 0 && *dropout < 1), "dropout", "must lie in [0, 1)");
    require(clip_norm > 0, "clip_norm", "must be positive");
}

double TrainingConfig::effective_dropout() const {
    if (dropout) return *dropout;
    return objective == ob::Objective::contrastive ? 0.1 : 0.0;
}

ob::ObjectiveConfig TrainingConfig::objective_config() const {
    return {objective, lambda, translation_language, effective_dropout()};
}

void to_json(nlohmann::json& j, const TrainingConfig& c) {
    j = nlohmann::json{{"objective", ob::to_string(c.objective)},
                       {"steps", c.steps},
                       {"batch_size", c.batch_size},
                       {"peak_lr", c.peak_lr},
                       {"warmup_steps", c.warmup_steps},
                       {"kl_anneal_steps", c.kl_anneal_steps},
                       {"lambda", c.lambda},
                       {"use_kl", c.use_kl},
                       {"translation_language", ob::to_string(c.translation_language)},
                       {"clip_norm", c.clip_norm},
                       {"seed", c.seed},
                       {"checkpoint_every", c.checkpoint_every},
                       {"eval_every", c.eval_every}};
    j["dropout"] = c.dropout ? nlohmann::json(*c.dropout) : nlohmann::json(nullptr);
}

void from_json(const nlohmann::json& j, TrainingConfig& c) {
    auto read = [&](const char* key, auto& field) {
        if (j.contains(key)) j.at(key).get_to(field);
    };
    if (j.contains("objective")) c.objective = ob::parse_objective(j.at("objective").get<std::string>());
    read("steps", c.steps);
    read("batch_size", c.batch_size);
    read("peak_lr", c.peak_lr);
    read("warmup_steps", c.warmup_steps);
    read("kl_anneal_steps", c.kl_anneal_steps);
    read("lambda", c.lambda);
    read("use_kl", c.use_kl);
    if (j.contains("translation_language")) {
        c.translation_language = ob::parse_translation_language(j.at("translation_language").get<std::string>());
    }
    read("clip_norm", c.clip_norm);
    read("seed", c.seed);
    read("checkpoint_every", c.checkpoint_every);
    read("eval_every", c.eval_every);
    if (j.contains("dropout")) {
        const auto& d = j.at("dropout");
        c.dropout = d.is_null() ? std::nullopt : std::optional<double>(d.get<double>());
    }
}

double lr_schedule(std::size_t step, double peak_lr, std::size_t warmup_steps) {
    if (step == 0) throw ContractError("lr_schedule: steps are numbered from 1");
    if (warmup_steps == 0) throw ContractError("lr_schedule: warmup_steps must be positive");
    const double s = static_cast<double>(step), w = static_cast<double>(warmup_steps);
    return peak_lr * std::min(s / w, std::sqrt(w / s));
}

double kl_anneal(std::size_t step, std::size_t horizon) {
    if (horizon == 0) throw ContractError("kl_anneal: horizon must be positive");
    if (step >= horizon) return 1.0;
    return static_cast<double>(step) / static_cast<double>(horizon);
}

double clip_gradients(model::ParameterSet<float>& params, double max_norm) {
    double sq = 0;
    for (const auto& e : params.entries()) {
        for (float g : e.tensor.grad()) sq += static_cast<double>(g) * g;
    }
    const double norm = std::sqrt(sq);
    if (!std::isfinite(norm)) throw NumericalError("gradient norm is not finite");
    if (norm > max_norm) {
        const auto scale = static_cast<float>(max_norm / norm);
        for (const auto& e : params.entries()) {
            if (!e.tensor.has_grad()) continue;
            for (float& g : e.tensor.grad_buffer()) g *= scale;
        }
    }
    return norm;
}

Adam::Adam(const model::ParameterSet<float>& params, AdamConfig config) : config_(config) {
    for (const auto& e : params.entries()) {
        m_.emplace_back(e.tensor.size(), 0.0f);
        v_.emplace_back(e.tensor.size(), 0.0f);
    }
}

void Adam::step(model::ParameterSet<float>& params, double lr) {
    if (params.size() != m_.size()) throw ContractError("Adam: parameter set changed since construction");
    ++updates_;
    const double t = static_cast<double>(updates_);
    const auto b1 = static_cast<float>(config_.beta1), b2 = static_cast<float>(config_.beta2);
    const auto c1 = static_cast<float>(1.0 / (1.0 - std::pow(config_.beta1, t)));
    const auto c2 = static_cast<float>(1.0 / (1.0 - std::pow(config_.beta2, t)));
    const auto rate = static_cast<float>(lr), eps = static_cast<float>(config_.epsilon);
    for (std::size_t p = 0; p < m_.size(); ++p) {
        auto tensor = params.entries()[p].tensor;
        auto value = tensor.data();
        auto grad = tensor.grad();
        auto& m = m_[p];
        auto& v = v_[p];
        for (std::size_t i = 0; i < value.size(); ++i) {
            const float g = grad.empty() ? 0.0f : grad[i];
            m[i] = b1 * m[i] + (1.0f - b1) * g;
            v[i] = b2 * v[i] + (1.0f - b2) * g * g;
            value[i] -= rate * (m[i] * c1) / (std::sqrt(v[i] * c2) + eps);
        }
    }
}

void Adam::save(model::Archive& archive, const model::ParameterSet<float>& params) const {
    for (std::size_t p = 0; p < m_.size(); ++p) {
        const auto& e = params.entries()[p];
        archive.tensors.push_back({"adam.m." + e.name, e.tensor.shape(), m_[p]});
        archive.tensors.push_back({"adam.v." + e.name, e.tensor.shape(), v_[p]});
    }
}

void Adam::load(const model::Archive& archive, const model::ParameterSet<float>& params, std::size_t updates) {
    std::vector<std::vector<float>> m, v;
    for (const auto& e : params.entries()) {
        for (auto [prefix, dst] : {std::pair{"adam.m.", &m}, std::pair{"adam.v.", &v}}) {
            const auto* t = archive.find(prefix + e.name);
            if (t == nullptr || t->shape != e.tensor.shape()) {
                throw FormatError("checkpoint lacks optimizer state " + std::string(prefix) + e.name);
            }
            dst->push_back(t->values);
        }
    }
    m_ = std::move(m);
    v_ = std::move(v);
    updates_ = updates;
}

std::uint64_t init_seed(std::uint64_t run_seed) { return num::mix_seed(run_seed, 0x1417); }

Trainer::Trainer(model::ModelConfig model_config, TrainingConfig config, std::vector<corpus::EncodedPair> pairs,
                 std::vector<std::string> vocab_tokens)
    : Trainer(model::Model<float>(std::move(model_config), init_seed(config.seed)), config, std::move(pairs),
              std::move(vocab_tokens)) {}

Trainer::Trainer(model::Model<float> model, TrainingConfig config, std::vector<corpus::EncodedPair> pairs,
                 std::vector<std::string> vocab_tokens)
    : model_(std::move(model)),
      config_(std::move(config)),
      stream_((config_.validate(), std::move(pairs)), config_.batch_size, config_.seed),
      adam_(model_.parameters()),
      vocab_tokens_(std::move(vocab_tokens)) {
    if (!vocab_tokens_.empty() && vocab_tokens_.size() != model_.config().vocab_size) {
        throw ConfigError("model.vocab_size: " + std::to_string(model_.config().vocab_size) +
                          " does not match the corpus vocabulary of " + std::to_string(vocab_tokens_.size()));
    }
}

Trainer Trainer::resume(const std::filesystem::path& checkpoint, std::vector<corpus::EncodedPair> pairs,
                        std::optional<std::size_t> total_steps) {
    const auto archive = model::read_archive(checkpoint);
    const auto& manifest = archive.manifest;
    for (const char* key : {"model", "training", "step"}) {
        if (!manifest.contains(key)) throw FormatError("checkpoint manifest lacks '" + std::string(key) + "'");
    }
    TrainingConfig config = manifest.at("training").get<TrainingConfig>();
    if (total_steps) config.steps = *total_steps;
    model::Model<float> model(manifest.at("model").get<model::ModelConfig>(), 0);
    model::import_parameters(model.parameters(), archive);
    std::vector<std::string> vocab;
    if (manifest.contains("vocab")) vocab = manifest.at("vocab").get<std::vector<std::string>>();
    Trainer trainer(std::move(model), config, std::move(pairs), std::move(vocab));
    trainer.step_ = manifest.at("step").get<std::size_t>();
    trainer.adam_.load(archive, trainer.model_.parameters(), trainer.step_);
    return trainer;
}

StepRecord Trainer::train_step() {
    const std::size_t step = step_ + 1;
    StepRecord record;
    record.step = step;
    record.lr = lr_schedule(step, config_.peak_lr, config_.warmup_steps);
    const double kl_weight = config_.use_kl ? kl_anneal(step, config_.kl_anneal_steps) : 0.0;

    auto batch = stream_.batch(step_);
    num::Rng rng(num::mix_seed(config_.seed, step));
    auto& params = model_.parameters();
    params.zero_grad();
    num::Tape<float> tape;
    ob::LossResult<float> result;
    try {
        {
            num::Tape<float>::Recording recording(tape);
            result = ob::evaluate(model_, batch, config_.objective_config(), kl_weight, rng);
        }
        record.parts = result.parts;
        if (!std::isfinite(result.parts.total)) throw NumericalError("loss is not finite");
        tape.backward(result.loss);
        clip_gradients(params, config_.clip_norm);
    } catch (const NumericalError& e) {
        std::string msg = "step " + std::to_string(step) + ": " + e.what();
        if (result.loss.defined()) msg += " [" + describe(result.parts) + "]";
        throw NumericalError(msg);
    }
    adam_.step(params, record.lr);
    params.zero_grad();
    step_ = step;
    return record;
}

void Trainer::save_checkpoint(const std::filesystem::path& path) const {
    model::Archive archive;
    archive.manifest["model"] = model_.config();
    archive.manifest["training"] = config_;
    archive.manifest["step"] = step_;
    archive.manifest["vocab"] = vocab_tokens_;
    model::export_parameters(model_.parameters(), archive);
    adam_.save(archive, model_.parameters());
    model::write_archive(archive, path);
}

std::string format_number(double value) {
    char buf[64];
    auto res = std::to_chars(buf, buf + sizeof(buf), value);
    return std::string(buf, res.ptr);
}

const char* LossLog::header() {
    return "step,lr,kl_weight,total,recon_a,recon_b,kl_sem,kl_lang_a,kl_lang_b,translation_ab,translation_ba,"
           "contrastive";
}

std::string LossLog::format(const StepRecord& r) {
    const auto& p = r.parts;
    std::string line = std::to_string(r.step);
    for (double v : {r.lr, p.kl_weight, p.total, p.recon_a, p.recon_b, p.kl_sem, p.kl_lang_a, p.kl_lang_b,
                     p.translation_ab, p.translation_ba, p.contrastive}) {
        line += ',';
        line += format_number(v);
    }
    return line;
}

LossLog::LossLog(const std::filesystem::path& path, std::optional<std::size_t> keep_through) {
    std::vector<std::string> kept;
    if (keep_through) {
        std::ifstream in(path);
        std::string line;
        std::getline(in, line);  // header
        while (std::getline(in, line)) {
            std::size_t step = 0;
            std::from_chars(line.data(), line.data() + line.size(), step);
            if (step >= 1 && step <= *keep_through) kept.push_back(line);
        }
    }
    out_.open(path, std::ios::binary | std::ios::trunc);
    if (!out_) throw FormatError("cannot open loss log " + path.string());
    out_ << header() << '\n';
    for (const auto& line : kept) out_ << line << '\n';
    out_.flush();
}

void LossLog::append(const StepRecord& record) {
    out_ << format(record) << '\n';
    out_.flush();
}

}  // namespace vmsst::trainer
