#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

namespace vmsst::model {

// Padded token ids [batch x len] with a {0,1} validity mask of the same shape.
struct TokenBatch {
    std::size_t batch = 0;
    std::size_t len = 0;
    std::vector<std::int32_t> ids;
    std::vector<std::uint8_t> mask;

    std::span<const std::int32_t> row(std::size_t b) const { return {ids.data() + b * len, len}; }
    std::size_t valid_count(std::size_t b) const;

    // Pads each sequence with tokens::pad up to the longest one.
    static TokenBatch from_sequences(std::span<const std::vector<std::int32_t>> sequences);
    // Pads to exactly `len`; throws ContractError if a sequence is longer.
    static TokenBatch from_sequences(std::span<const std::vector<std::int32_t>> sequences, std::size_t len);
    // Rows of `first` followed by rows of `second`, padded to a common length.
    static TokenBatch stack(const TokenBatch& first, const TokenBatch& second);
};

enum class Side : std::uint8_t { a, b };

// Parallel pairs; both sides share one padded length. sem_side[i] is the side
// whose sentence feeds the semantic encoder for the ELBO term.
struct PairBatch {
    TokenBatch a;
    TokenBatch b;
    std::vector<std::int32_t> lang_a;
    std::vector<std::int32_t> lang_b;
    std::vector<Side> sem_side;

    std::size_t size() const { return a.batch; }
    // Even rows feed side a, odd rows side b.
    static std::vector<Side> alternating_sides(std::size_t count);
    // Throws ContractError when a documented invariant does not hold.
    void validate(std::size_t n_languages, std::size_t max_len) const;
};

}  // namespace vmsst::model
