#include "vmsst/evalkit/embeddings.hpp"

#include <bit>
#include <cmath>
#include <fstream>
#include <sstream>

#include "vmsst/numcore/errors.hpp"

namespace vmsst::evalkit {

namespace {

void put_u32(std::string& out, std::uint32_t v) {
    for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

std::uint32_t get_u32(const std::string& bytes, std::size_t pos) {
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(static_cast<unsigned char>(bytes[pos + i])) << (8 * i);
    return v;
}

}  // namespace

EmbeddingMatrix::EmbeddingMatrix(std::size_t rows_, std::size_t dim_, std::vector<float> data_)
    : rows(rows_), dim(dim_), data(std::move(data_)) {
    if (data.size() != rows * dim) throw ContractError("embedding data does not match rows x dim");
}

EmbeddingMatrix EmbeddingMatrix::select(std::span<const std::size_t> indices) const {
    EmbeddingMatrix out;
    out.rows = indices.size();
    out.dim = dim;
    out.data.reserve(indices.size() * dim);
    for (auto i : indices) {
        if (i >= rows) throw ContractError("embedding row index out of range");
        auto r = row(i);
        out.data.insert(out.data.end(), r.begin(), r.end());
    }
    if (ids) {
        out.ids.emplace();
        for (auto i : indices) out.ids->push_back((*ids)[i]);
    }
    return out;
}

void EmbeddingMatrix::validate() const {
    if (rows == 0 || dim == 0) throw ContractError("embedding matrix must have at least one row and column");
    if (data.size() != rows * dim) throw ContractError("embedding data does not match rows x dim");
    if (ids && ids->size() != rows) throw ContractError("embedding ids do not match the row count");
    for (std::size_t i = 0; i < data.size(); ++i) {
        if (std::isnan(data[i])) throw NumericalError("embedding row " + std::to_string(i / dim) + " contains NaN");
    }
}

std::filesystem::path ids_sidecar(const std::filesystem::path& path) {
    auto p = path;
    p += ".ids";
    return p;
}

void write_vmsb(const std::filesystem::path& path, const EmbeddingMatrix& m) {
    m.validate();
    std::string out(vmsb_magic, 4);
    put_u32(out, static_cast<std::uint32_t>(m.rows));
    put_u32(out, static_cast<std::uint32_t>(m.dim));
    out.reserve(out.size() + 4 * m.data.size());
    for (float v : m.data) put_u32(out, std::bit_cast<std::uint32_t>(v));
    std::ofstream f(path, std::ios::binary | std::ios::trunc);
    if (!f) throw FormatError(path.string() + ": cannot open for writing");
    f.write(out.data(), static_cast<std::streamsize>(out.size()));
    if (m.ids) {
        std::ofstream ids(ids_sidecar(path), std::ios::trunc);
        for (const auto& id : *m.ids) ids << id << '\n';
    }
}

EmbeddingMatrix read_vmsb(const std::filesystem::path& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw FormatError(path.string() + ": cannot open");
    std::ostringstream buf;
    buf << f.rdbuf();
    const std::string bytes = buf.str();
    if (bytes.size() < 12 || bytes.compare(0, 4, vmsb_magic, 4) != 0) {
        throw FormatError(path.string() + ": not an embedding file (bad magic)");
    }
    const std::size_t rows = get_u32(bytes, 4), dim = get_u32(bytes, 8);
    if (bytes.size() != 12 + 4 * rows * dim) {
        throw FormatError(path.string() + ": expected " + std::to_string(rows) + "x" + std::to_string(dim) +
                          " floats, file size disagrees");
    }
    std::vector<float> data(rows * dim);
    for (std::size_t i = 0; i < data.size(); ++i) data[i] = std::bit_cast<float>(get_u32(bytes, 12 + 4 * i));
    EmbeddingMatrix m(rows, dim, std::move(data));
    if (std::ifstream ids(ids_sidecar(path)); ids) {
        m.ids.emplace();
        for (std::string line; std::getline(ids, line);) m.ids->push_back(line);
        if (m.ids->size() != rows) throw FormatError(ids_sidecar(path).string() + ": row count disagrees");
    }
    try {
        m.validate();
    } catch (const Error& e) {
        throw FormatError(path.string() + ": " + e.what());
    }
    return m;
}

EmbeddingMatrix embed_token_ids(const model::Model<float>& model,
                                const std::vector<std::vector<std::int32_t>>& sequences) {
    if (sequences.empty()) throw ContractError("no sentences to embed");
    EmbeddingMatrix out;
    out.rows = sequences.size();
    out.dim = model.config().latent_dim;
    out.data.reserve(out.rows * out.dim);
    for (const auto& seq : sequences) {
        auto batch = model::TokenBatch::from_sequences(std::span(&seq, 1));
        auto mu = model.embed_sentences(batch);
        out.data.insert(out.data.end(), mu.data().begin(), mu.data().end());
    }
    return out;
}

EmbeddingMatrix embed_sentences(const model::Model<float>& model, const std::vector<corpus::Sentence>& sentences,
                                const corpus::Vocabulary& vocab) {
    std::vector<std::vector<std::int32_t>> ids;
    ids.reserve(sentences.size());
    for (const auto& s : sentences) ids.push_back(corpus::tokenize(s.tokens, vocab, model.config().max_len));
    return embed_token_ids(model, ids);
}

}  // namespace vmsst::evalkit
