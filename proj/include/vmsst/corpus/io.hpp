#pragma once

#include <filesystem>
#include <optional>
#include <vector>

#include "vmsst/corpus/corpus.hpp"

namespace vmsst::corpus {

// File names inside a generated corpus directory.
namespace files {
inline constexpr const char* manifest = "manifest.json";
inline constexpr const char* vocabulary = "vocab.txt";
inline constexpr const char* train = "train.tsv";
inline constexpr const char* sts_monolingual = "sts_monolingual.tsv";
inline constexpr const char* sts_crosslingual = "sts_crosslingual.tsv";
inline constexpr const char* tatoeba = "tatoeba.tsv";
inline constexpr const char* mining_source = "mining_source.tsv";
inline constexpr const char* mining_target = "mining_target.tsv";
inline constexpr const char* mining_gold = "mining_gold.tsv";
inline constexpr const char* retrieval_kb = "retrieval_kb.tsv";
inline constexpr const char* retrieval_primary = "retrieval_primary.tsv";
inline constexpr const char* retrieval_multilingual = "retrieval_multilingual.tsv";
}  // namespace files

// lang_a \t tokens_a \t lang_b \t tokens_b [\t gold_similarity]
void write_pairs(const std::filesystem::path& path, const std::vector<ParallelPair>& pairs);
std::vector<ParallelPair> read_pairs(const std::filesystem::path& path);

// lang \t tokens [\t gold kb index]
void write_sentences(const std::filesystem::path& path, const std::vector<Sentence>& sentences,
                     const std::vector<std::size_t>* gold = nullptr);
struct SentenceFile {
    std::vector<Sentence> sentences;
    std::optional<std::vector<std::size_t>> gold;
};
SentenceFile read_sentences(const std::filesystem::path& path);

// source_index \t target_index
void write_alignments(const std::filesystem::path& path, const std::vector<std::pair<std::size_t, std::size_t>>& gold);
std::vector<std::pair<std::size_t, std::size_t>> read_alignments(const std::filesystem::path& path);

// Writes every artifact plus a manifest holding the spec. Output bytes are a
// pure function of the corpus.
void write_corpus(const std::filesystem::path& dir, const Corpus& corpus);
// Reads back every artifact; `languages` is rebuilt from the spec.
Corpus read_corpus(const std::filesystem::path& dir);

}  // namespace vmsst::corpus
