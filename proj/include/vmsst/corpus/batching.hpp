#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "vmsst/corpus/corpus.hpp"
#include "vmsst/model/batch.hpp"

namespace vmsst::corpus {

struct EncodedPair {
    std::vector<std::int32_t> a;
    std::vector<std::int32_t> b;
    std::int32_t lang_a = 0;
    std::int32_t lang_b = 0;
};

std::vector<std::int32_t> encode(const Sentence& sentence, const Vocabulary& vocab, std::size_t max_len);
std::vector<EncodedPair> encode_pairs(const std::vector<ParallelPair>& pairs, const Vocabulary& vocab,
                                      std::size_t max_len);

// Rows in order; both sides padded to one length; sem_side alternates a, b.
model::PairBatch make_pair_batch(std::span<const EncodedPair> rows);

// Infinite, deterministic batch stream: epoch e visits every pair exactly once
// in an order shuffled by (seed, e); the final batch of an epoch may be short.
// batch(i) depends only on (pairs, batch_size, seed, i).
class BatchStream {
public:
    BatchStream(std::vector<EncodedPair> pairs, std::size_t batch_size, std::uint64_t seed);

    std::size_t batches_per_epoch() const;
    model::PairBatch batch(std::size_t index);
    // Pair indices of batch `index`.
    std::vector<std::size_t> batch_rows(std::size_t index);

private:
    const std::vector<std::size_t>& order_for(std::size_t epoch);

    std::vector<EncodedPair> pairs_;
    std::size_t batch_size_;
    std::uint64_t seed_;
    std::size_t cached_epoch_ = static_cast<std::size_t>(-1);
    std::vector<std::size_t> order_;
};

// One epoch of batches.
std::vector<model::PairBatch> make_batches(const std::vector<EncodedPair>& pairs, std::size_t batch_size,
                                           std::uint64_t seed, std::size_t epoch = 0);

}  // namespace vmsst::corpus
