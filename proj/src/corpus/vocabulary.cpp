#include "vmsst/corpus/vocabulary.hpp"

#include <fstream>

#include "vmsst/numcore/errors.hpp"
#include "vmsst/tokens.hpp"

namespace vmsst::corpus {

const std::vector<std::string>& Vocabulary::reserved() {
    static const std::vector<std::string> names{"<pad>", "<s>", "</s>", "<unk>"};
    return names;
}

std::string Vocabulary::language_token(std::size_t language) { return "<lang" + std::to_string(language) + ">"; }

Vocabulary::Vocabulary(std::vector<std::string> tokens) : tokens_(std::move(tokens)) {
    const auto& res = reserved();
    if (tokens_.size() < res.size() || !std::equal(res.begin(), res.end(), tokens_.begin())) {
        throw VocabularyError("vocabulary must start with <pad> <s> </s> <unk>");
    }
    for (std::size_t i = 0; i < tokens_.size(); ++i) {
        if (tokens_[i].empty()) throw VocabularyError("empty token at line " + std::to_string(i + 1));
        if (!index_.emplace(tokens_[i], static_cast<std::int32_t>(i)).second) {
            throw VocabularyError("duplicate token '" + tokens_[i] + "'");
        }
    }
}

const std::string& Vocabulary::token(std::int32_t id) const {
    if (id < 0 || static_cast<std::size_t>(id) >= tokens_.size()) {
        throw VocabularyError("token id " + std::to_string(id) + " outside vocabulary of " +
                              std::to_string(tokens_.size()));
    }
    return tokens_[static_cast<std::size_t>(id)];
}

std::int32_t Vocabulary::id(const std::string& token) const {
    auto it = index_.find(token);
    if (it == index_.end()) throw VocabularyError("unknown token '" + token + "'");
    return it->second;
}

void write_vocabulary(const Vocabulary& vocab, const std::filesystem::path& path) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw FormatError("cannot open " + path.string() + " for writing");
    for (const auto& t : vocab.tokens()) out << t << '\n';
}

Vocabulary read_vocabulary(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw FormatError("cannot open vocabulary " + path.string());
    std::vector<std::string> tokens;
    for (std::string line; std::getline(in, line);) tokens.push_back(line);
    return Vocabulary(std::move(tokens));
}

std::vector<std::int32_t> tokenize(std::span<const std::string> text, const Vocabulary& vocab, std::size_t max_len) {
    if (max_len < 2) throw ContractError("tokenize: max_len must be at least 2");
    std::vector<std::int32_t> ids{tokens::bos};
    for (const auto& t : text) {
        const std::int32_t id = vocab.id(t);
        if (id < tokens::reserved_count) throw VocabularyError("reserved token '" + t + "' in sentence text");
        if (ids.size() + 1 < max_len) ids.push_back(id);
    }
    ids.push_back(tokens::eos);
    return ids;
}

std::vector<std::string> detokenize(std::span<const std::int32_t> ids, const Vocabulary& vocab) {
    std::vector<std::string> out;
    for (std::int32_t id : ids) {
        if (id < tokens::reserved_count) continue;
        out.push_back(vocab.token(id));
    }
    return out;
}

}  // namespace vmsst::corpus
