#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

namespace vmsst::corpus {

// Closed token inventory; the id of a token is its position.
class Vocabulary {
public:
    Vocabulary() = default;
    // The first entries must be the reserved tokens <pad> <s> </s> <unk>.
    explicit Vocabulary(std::vector<std::string> tokens);

    std::size_t size() const { return tokens_.size(); }
    const std::vector<std::string>& tokens() const { return tokens_; }
    const std::string& token(std::int32_t id) const;
    // Throws VocabularyError for tokens outside the vocabulary.
    std::int32_t id(const std::string& token) const;
    bool contains(const std::string& token) const { return index_.count(token) != 0; }

    bool operator==(const Vocabulary& other) const { return tokens_ == other.tokens_; }

    static const std::vector<std::string>& reserved();
    static std::string language_token(std::size_t language);

private:
    std::vector<std::string> tokens_;
    std::unordered_map<std::string, std::int32_t> index_;
};

void write_vocabulary(const Vocabulary& vocab, const std::filesystem::path& path);
Vocabulary read_vocabulary(const std::filesystem::path& path);

// [BOS] ids [EOS], truncated to max_len with EOS kept last.
std::vector<std::int32_t> tokenize(std::span<const std::string> text, const Vocabulary& vocab, std::size_t max_len);
std::vector<std::string> detokenize(std::span<const std::int32_t> ids, const Vocabulary& vocab);

}  // namespace vmsst::corpus
