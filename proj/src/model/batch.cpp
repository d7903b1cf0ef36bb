#include "vmsst/model/batch.hpp"

#include <algorithm>
#include <string>

#include "vmsst/numcore/errors.hpp"
#include "vmsst/tokens.hpp"

namespace vmsst::model {

std::size_t TokenBatch::valid_count(std::size_t b) const {
    std::size_t count = 0;
    for (std::size_t t = 0; t < len; ++t) count += mask[b * len + t];
    return count;
}

TokenBatch TokenBatch::from_sequences(std::span<const std::vector<std::int32_t>> sequences) {
    std::size_t len = 0;
    for (const auto& s : sequences) len = std::max(len, s.size());
    return from_sequences(sequences, len);
}

TokenBatch TokenBatch::from_sequences(std::span<const std::vector<std::int32_t>> sequences, std::size_t len) {
    TokenBatch out;
    out.batch = sequences.size();
    out.len = len;
    for (const auto& s : sequences) {
        if (s.size() > len) {
            throw ContractError("sequence of length " + std::to_string(s.size()) + " exceeds " + std::to_string(len));
        }
    }
    out.ids.assign(out.batch * out.len, tokens::pad);
    out.mask.assign(out.batch * out.len, 0);
    for (std::size_t b = 0; b < out.batch; ++b) {
        std::copy(sequences[b].begin(), sequences[b].end(), out.ids.begin() + b * out.len);
        std::fill_n(out.mask.begin() + b * out.len, sequences[b].size(), 1);
    }
    return out;
}

TokenBatch TokenBatch::stack(const TokenBatch& first, const TokenBatch& second) {
    TokenBatch out;
    out.batch = first.batch + second.batch;
    out.len = std::max(first.len, second.len);
    out.ids.assign(out.batch * out.len, tokens::pad);
    out.mask.assign(out.batch * out.len, 0);
    std::size_t row = 0;
    for (const TokenBatch* part : {&first, &second}) {
        for (std::size_t b = 0; b < part->batch; ++b, ++row) {
            std::copy_n(part->ids.begin() + b * part->len, part->len, out.ids.begin() + row * out.len);
            std::copy_n(part->mask.begin() + b * part->len, part->len, out.mask.begin() + row * out.len);
        }
    }
    return out;
}

std::vector<Side> PairBatch::alternating_sides(std::size_t count) {
    std::vector<Side> sides(count);
    for (std::size_t i = 0; i < count; ++i) sides[i] = (i % 2 == 0) ? Side::a : Side::b;
    return sides;
}

void PairBatch::validate(std::size_t n_languages, std::size_t max_len) const {
    const std::size_t n = size();
    if (b.batch != n || lang_a.size() != n || lang_b.size() != n || sem_side.size() != n) {
        throw ContractError("PairBatch: inconsistent row counts");
    }
    if (a.len != b.len) throw ContractError("PairBatch: sides must share one padded length");
    if (a.len > max_len) {
        throw ContractError("PairBatch: length " + std::to_string(a.len) + " exceeds max_len " +
                            std::to_string(max_len));
    }
    for (std::size_t i = 0; i < n; ++i) {
        if (a.valid_count(i) == 0 || b.valid_count(i) == 0) {
            throw ContractError("PairBatch: row " + std::to_string(i) + " has an empty side");
        }
        if (lang_a[i] < 0 || lang_b[i] < 0 || static_cast<std::size_t>(lang_a[i]) >= n_languages ||
            static_cast<std::size_t>(lang_b[i]) >= n_languages) {
            throw ContractError("PairBatch: language id out of range in row " + std::to_string(i));
        }
        if (sem_side[i] != (i % 2 == 0 ? Side::a : Side::b)) {
            throw ContractError("PairBatch: sem_side must alternate a, b, a, ...");
        }
    }
}

}  // namespace vmsst::model
