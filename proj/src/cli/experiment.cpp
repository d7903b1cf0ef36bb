#include "vmsst/cli/experiment.hpp"

#include <cstdio>
#include <fstream>

#include "vmsst/numcore/errors.hpp"

namespace vmsst::cli {

namespace {

// Rejects keys absent from the default document of the section.
void check_keys(const nlohmann::json& j, const nlohmann::json& schema, const std::string& section) {
    if (!j.is_object()) throw ConfigError(section + ": expected an object");
    for (const auto& [key, value] : j.items()) {
        if (!schema.contains(key)) throw ConfigError(section + "." + key + ": unknown field");
    }
}

template <typename T>
void read_section(const nlohmann::json& j, const char* section, T& out) {
    if (!j.contains(section)) return;
    check_keys(j.at(section), nlohmann::json(T{}), section);
    try {
        out = j.at(section).get<T>();
    } catch (const nlohmann::json::exception& e) {
        throw ConfigError(std::string(section) + ": " + e.what());
    }
}

}  // namespace

evalkit::EvalOptions EvalSettings::options() const {
    evalkit::EvalOptions o;
    o.margin.k_nn = k_nn;
    o.margin.averaged = margin_averaged;
    o.hubness_k = hubness_k;
    return o;
}

void to_json(nlohmann::json& j, const EvalSettings& e) {
    j = {{"k_nn", e.k_nn},
         {"mining_methods", e.mining_methods},
         {"margin_averaged", e.margin_averaged},
         {"hubness_k", e.hubness_k},
         {"report_path", e.report_path}};
}

void from_json(const nlohmann::json& j, EvalSettings& e) {
    auto read = [&](const char* key, auto& field) {
        if (j.contains(key)) j.at(key).get_to(field);
    };
    read("k_nn", e.k_nn);
    read("mining_methods", e.mining_methods);
    read("margin_averaged", e.margin_averaged);
    read("hubness_k", e.hubness_k);
    read("report_path", e.report_path);
}

void to_json(nlohmann::json& j, const Paths& p) {
    j = {{"corpus_dir", p.corpus_dir}, {"checkpoint_dir", p.checkpoint_dir}, {"report_dir", p.report_dir}};
}

void from_json(const nlohmann::json& j, Paths& p) {
    auto read = [&](const char* key, auto& field) {
        if (j.contains(key)) j.at(key).get_to(field);
    };
    read("corpus_dir", p.corpus_dir);
    read("checkpoint_dir", p.checkpoint_dir);
    read("report_dir", p.report_dir);
}

void to_json(nlohmann::json& j, const ExperimentConfig& c) {
    j = {{"corpus", c.corpus}, {"model", c.model}, {"training", c.training}, {"eval", c.eval}, {"paths", c.paths}};
}

void from_json(const nlohmann::json& j, ExperimentConfig& c) {
    check_keys(j, nlohmann::json(ExperimentConfig{}), "config");
    read_section(j, "corpus", c.corpus);
    read_section(j, "model", c.model);
    read_section(j, "training", c.training);
    read_section(j, "eval", c.eval);
    read_section(j, "paths", c.paths);
}

void ExperimentConfig::validate() const {
    corpus.validate();
    training.validate();
    if (model.n_languages != corpus.n_languages) {
        throw ConfigError("model.n_languages: " + std::to_string(model.n_languages) + " does not match corpus.n_languages " +
                          std::to_string(corpus.n_languages));
    }
    const std::size_t vocab = build_vocabulary(corpus).size();
    resolved_model(vocab).validate();
    // BOS + the longest rendering + EOS must fit; fillers may lengthen a
    // sentence, and anything beyond max_len is truncated by the tokenizer.
    if (model.max_len < corpus.max_sentence_len + 2) {
        throw ConfigError("model.max_len: must be at least corpus.max_sentence_len + 2 = " +
                          std::to_string(corpus.max_sentence_len + 2));
    }
    if (eval.k_nn == 0) throw ConfigError("eval.k_nn: must be at least 1");
    if (eval.hubness_k == 0) throw ConfigError("eval.hubness_k: must be at least 1");
    if (eval.mining_methods.empty()) throw ConfigError("eval.mining_methods: must not be empty");
    for (const auto& m : eval.mining_methods) {
        try {
            evalkit::parse_mining_method(m);
        } catch (const ConfigError&) {
            throw ConfigError("eval.mining_methods: unknown method '" + m + "'");
        }
    }
    for (const auto* p : {&paths.corpus_dir, &paths.checkpoint_dir, &paths.report_dir}) {
        if (p->empty()) throw ConfigError("paths: directories must not be empty");
    }
}

model::ModelConfig ExperimentConfig::resolved_model(std::size_t corpus_vocab_size) const {
    auto m = model;
    if (m.vocab_size == 0) {
        m.vocab_size = corpus_vocab_size;
    } else if (m.vocab_size != corpus_vocab_size) {
        throw ConfigError("model.vocab_size: " + std::to_string(m.vocab_size) + " does not match the corpus vocabulary (" +
                          std::to_string(corpus_vocab_size) + "); use 0 to derive it");
    }
    return m;
}

std::filesystem::path ExperimentConfig::report_path() const {
    if (!eval.report_path.empty()) return eval.report_path;
    return std::filesystem::path(paths.report_dir) / "report.json";
}

ExperimentConfig load_experiment(const std::optional<std::filesystem::path>& path) {
    ExperimentConfig c;
    if (path) {
        std::ifstream in(*path);
        if (!in) throw ConfigError(path->string() + ": cannot open config");
        nlohmann::json j;
        try {
            j = nlohmann::json::parse(in);
        } catch (const nlohmann::json::parse_error& e) {
            throw ConfigError(path->string() + ": " + e.what());
        }
        c = j.get<ExperimentConfig>();
    }
    return c;
}

std::string fnv1a_hex(std::string_view bytes) {
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (unsigned char ch : bytes) {
        h ^= ch;
        h *= 0x100000001b3ULL;
    }
    char buf[17];
    std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
    return buf;
}

std::string config_hash(const ExperimentConfig& c) { return fnv1a_hex(nlohmann::json(c).dump()); }

}  // namespace vmsst::cli
