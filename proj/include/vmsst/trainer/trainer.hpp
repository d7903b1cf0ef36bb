#pragma once

#include <filesystem>
#include <fstream>
#include <functional>
#include <json.hpp>
#include <optional>
#include <vector>

#include "vmsst/corpus/batching.hpp"
#include "vmsst/model/archive.hpp"
#include "vmsst/objectives/objectives.hpp"

namespace vmsst::trainer {

struct TrainingConfig {
    objectives::Objective objective = objectives::Objective::vmsst;
    std::size_t steps = 5000;
    std::size_t batch_size = 64;
    double peak_lr = 1e-3;
    std::size_t warmup_steps = 4000;
    std::size_t kl_anneal_steps = 10000;
    double lambda = 0.1;
    std::optional<double> dropout;  // unset: 0.1 for contrastive, 0 otherwise
    bool use_kl = true;             // false: KL weight is 0 at every step
    objectives::TranslationLanguage translation_language = objectives::TranslationLanguage::target_posterior_mean;
    double clip_norm = 1.0;
    std::uint64_t seed = 1;
    std::size_t checkpoint_every = 1000;
    std::size_t eval_every = 0;

    void validate() const;
    double effective_dropout() const;
    objectives::ObjectiveConfig objective_config() const;
};

void to_json(nlohmann::json& j, const TrainingConfig& c);
void from_json(const nlohmann::json& j, TrainingConfig& c);

// peak_lr * min(step / warmup, sqrt(warmup / step)); step >= 1.
double lr_schedule(std::size_t step, double peak_lr, std::size_t warmup_steps);
// min(step / horizon, 1).
double kl_anneal(std::size_t step, std::size_t horizon);

// Scales all gradients so their global L2 norm is at most max_norm. Returns
// the norm before clipping.
double clip_gradients(model::ParameterSet<float>& params, double max_norm);

struct AdamConfig {
    double beta1 = 0.9;
    double beta2 = 0.98;
    double epsilon = 1e-9;
};

class Adam {
public:
    explicit Adam(const model::ParameterSet<float>& params, AdamConfig config = {});

    // Applies one update with the current gradients; parameters without a
    // gradient are treated as having zero gradient.
    void step(model::ParameterSet<float>& params, double lr);
    std::size_t updates() const { return updates_; }

    void save(model::Archive& archive, const model::ParameterSet<float>& params) const;
    void load(const model::Archive& archive, const model::ParameterSet<float>& params, std::size_t updates);

private:
    AdamConfig config_;
    std::vector<std::vector<float>> m_, v_;
    std::size_t updates_ = 0;
};

struct StepRecord {
    std::size_t step = 0;
    double lr = 0;
    objectives::LossBreakdown parts;
};

// Single-threaded trainer. Every source of randomness at step s is derived
// from (seed, s), and batch s is a pure function of (pairs, batch_size, seed),
// so a run resumed from a checkpoint continues exactly as the unbroken run.
class Trainer {
public:
    Trainer(model::ModelConfig model_config, TrainingConfig config, std::vector<corpus::EncodedPair> pairs,
            std::vector<std::string> vocab_tokens = {});

    static Trainer resume(const std::filesystem::path& checkpoint, std::vector<corpus::EncodedPair> pairs,
                          std::optional<std::size_t> total_steps = std::nullopt);

    // Runs one optimizer update. Throws NumericalError naming the step (and
    // the loss breakdown when available) on a non-finite loss or gradient.
    StepRecord train_step();

    const model::Model<float>& model() const { return model_; }
    model::Model<float>& model() { return model_; }
    const TrainingConfig& config() const { return config_; }
    std::size_t step() const { return step_; }
    const std::vector<std::string>& vocab_tokens() const { return vocab_tokens_; }

    void save_checkpoint(const std::filesystem::path& path) const;

private:
    Trainer(model::Model<float> model, TrainingConfig config, std::vector<corpus::EncodedPair> pairs,
            std::vector<std::string> vocab_tokens);

    model::Model<float> model_;
    TrainingConfig config_;
    corpus::BatchStream stream_;
    Adam adam_;
    std::vector<std::string> vocab_tokens_;
    std::size_t step_ = 0;
};

// Seed of the parameter initializer for a run seed.
std::uint64_t init_seed(std::uint64_t run_seed);

// step,lr,kl_weight,total,recon_a,recon_b,kl_sem,kl_lang_a,kl_lang_b,translation_ab,translation_ba,contrastive
class LossLog {
public:
    // Starts a fresh log, or, when resuming, keeps rows with step <= keep_through.
    LossLog(const std::filesystem::path& path, std::optional<std::size_t> keep_through = std::nullopt);
    void append(const StepRecord& record);

    static const char* header();
    static std::string format(const StepRecord& record);

private:
    std::ofstream out_;
};

// Shortest representation that round-trips.
std::string format_number(double value);

}  // namespace vmsst::trainer
