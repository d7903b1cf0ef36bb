#include "vmsst/corpus/batching.hpp"

#include <algorithm>
#include <numeric>

#include "vmsst/numcore/errors.hpp"
#include "vmsst/numcore/random.hpp"

namespace vmsst::corpus {

std::vector<std::int32_t> encode(const Sentence& sentence, const Vocabulary& vocab, std::size_t max_len) {
    return tokenize(sentence.tokens, vocab, max_len);
}

std::vector<EncodedPair> encode_pairs(const std::vector<ParallelPair>& pairs, const Vocabulary& vocab,
                                      std::size_t max_len) {
    std::vector<EncodedPair> out;
    out.reserve(pairs.size());
    for (const auto& p : pairs) {
        out.push_back({encode(p.a, vocab, max_len), encode(p.b, vocab, max_len), p.a.language, p.b.language});
    }
    return out;
}

model::PairBatch make_pair_batch(std::span<const EncodedPair> rows) {
    std::size_t len = 0;
    std::vector<std::vector<std::int32_t>> a, b;
    model::PairBatch batch;
    for (const auto& r : rows) {
        len = std::max({len, r.a.size(), r.b.size()});
        a.push_back(r.a);
        b.push_back(r.b);
        batch.lang_a.push_back(r.lang_a);
        batch.lang_b.push_back(r.lang_b);
    }
    batch.a = model::TokenBatch::from_sequences(a, len);
    batch.b = model::TokenBatch::from_sequences(b, len);
    batch.sem_side = model::PairBatch::alternating_sides(rows.size());
    return batch;
}

BatchStream::BatchStream(std::vector<EncodedPair> pairs, std::size_t batch_size, std::uint64_t seed)
    : pairs_(std::move(pairs)), batch_size_(batch_size), seed_(seed) {
    if (batch_size_ == 0) throw ConfigError("batch_size: must be at least 1");
    if (pairs_.empty()) throw ConfigError("training corpus is empty");
}

std::size_t BatchStream::batches_per_epoch() const { return (pairs_.size() + batch_size_ - 1) / batch_size_; }

const std::vector<std::size_t>& BatchStream::order_for(std::size_t epoch) {
    if (epoch != cached_epoch_) {
        order_.resize(pairs_.size());
        std::iota(order_.begin(), order_.end(), std::size_t{0});
        num::Rng rng(num::mix_seed(seed_, epoch));
        std::shuffle(order_.begin(), order_.end(), rng);
        cached_epoch_ = epoch;
    }
    return order_;
}

std::vector<std::size_t> BatchStream::batch_rows(std::size_t index) {
    const std::size_t per_epoch = batches_per_epoch();
    const auto& order = order_for(index / per_epoch);
    const std::size_t begin = (index % per_epoch) * batch_size_;
    const std::size_t end = std::min(begin + batch_size_, order.size());
    return {order.begin() + static_cast<std::ptrdiff_t>(begin), order.begin() + static_cast<std::ptrdiff_t>(end)};
}

model::PairBatch BatchStream::batch(std::size_t index) {
    std::vector<EncodedPair> rows;
    for (auto i : batch_rows(index)) rows.push_back(pairs_[i]);
    return make_pair_batch(rows);
}

std::vector<model::PairBatch> make_batches(const std::vector<EncodedPair>& pairs, std::size_t batch_size,
                                           std::uint64_t seed, std::size_t epoch) {
    BatchStream stream(pairs, batch_size, seed);
    std::vector<model::PairBatch> out;
    const std::size_t per_epoch = stream.batches_per_epoch();
    for (std::size_t i = 0; i < per_epoch; ++i) out.push_back(stream.batch(epoch * per_epoch + i));
    return out;
}

}  // namespace vmsst::corpus
