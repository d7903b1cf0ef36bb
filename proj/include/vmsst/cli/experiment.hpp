#pragma once

#include <filesystem>
#include <json.hpp>
#include <optional>
#include <string>
#include <vector>

#include "vmsst/corpus/corpus.hpp"
#include "vmsst/evalkit/report.hpp"
#include "vmsst/model/config.hpp"
#include "vmsst/trainer/trainer.hpp"

namespace vmsst::cli {

struct EvalSettings {
    std::size_t k_nn = 4;
    std::vector<std::string> mining_methods{"cosine", "margin"};
    bool margin_averaged = false;
    std::size_t hubness_k = 4;
    std::string report_path;  // empty: <report_dir>/report.json

    evalkit::EvalOptions options() const;
};

struct Paths {
    std::string corpus_dir = "corpus";
    std::string checkpoint_dir = "checkpoints";
    std::string report_dir = "reports";
};

// One document drives every command. Missing keys take defaults; unknown
// keys are rejected so a typo cannot silently fall back to a default.
struct ExperimentConfig {
    corpus::CorpusSpec corpus;
    model::ModelConfig model;
    trainer::TrainingConfig training;
    EvalSettings eval;
    Paths paths;

    // Cross-field checks on top of each section's own validation. A model
    // vocab_size of 0 means "take it from the corpus".
    void validate() const;
    // Model config with vocab_size resolved against the corpus vocabulary.
    model::ModelConfig resolved_model(std::size_t corpus_vocab_size) const;
    std::filesystem::path report_path() const;
};

void to_json(nlohmann::json& j, const ExperimentConfig& c);
void from_json(const nlohmann::json& j, ExperimentConfig& c);

// Defaults when `path` is empty. Throws ConfigError naming the field.
ExperimentConfig load_experiment(const std::optional<std::filesystem::path>& path);

// 16 hex digits of FNV-1a over the canonical JSON of the config.
std::string config_hash(const ExperimentConfig& c);
std::string fnv1a_hex(std::string_view bytes);

}  // namespace vmsst::cli
