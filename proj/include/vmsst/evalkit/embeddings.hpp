#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "vmsst/corpus/corpus.hpp"
#include "vmsst/model/model.hpp"

namespace vmsst::evalkit {

// Row-major float embeddings, one row per sentence.
struct EmbeddingMatrix {
    std::size_t rows = 0;
    std::size_t dim = 0;
    std::vector<float> data;
    std::optional<std::vector<std::string>> ids;

    EmbeddingMatrix() = default;
    EmbeddingMatrix(std::size_t rows, std::size_t dim, std::vector<float> data);

    std::span<const float> row(std::size_t i) const { return {data.data() + i * dim, dim}; }
    EmbeddingMatrix select(std::span<const std::size_t> indices) const;

    // Throws ContractError when empty or inconsistent, NumericalError on NaN.
    void validate() const;
    bool operator==(const EmbeddingMatrix&) const = default;
};

inline constexpr char vmsb_magic[4] = {'V', 'M', 'S', 'B'};

// Binary file: "VMSB", u32 count, u32 dim, count*dim little-endian f32.
// Row ids, when present, go to a sidecar `<path>.ids` with one id per line.
void write_vmsb(const std::filesystem::path& path, const EmbeddingMatrix& m);
EmbeddingMatrix read_vmsb(const std::filesystem::path& path);
std::filesystem::path ids_sidecar(const std::filesystem::path& path);

// Semantic posterior means. Each sentence is encoded on its own, so a row
// depends only on its sentence and never on what else is in the list.
EmbeddingMatrix embed_sentences(const model::Model<float>& model, const std::vector<corpus::Sentence>& sentences,
                                const corpus::Vocabulary& vocab);
EmbeddingMatrix embed_token_ids(const model::Model<float>& model,
                                const std::vector<std::vector<std::int32_t>>& sequences);

}  // namespace vmsst::evalkit
