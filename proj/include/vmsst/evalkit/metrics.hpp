#pragma once

#include <limits>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "vmsst/evalkit/embeddings.hpp"

namespace vmsst::evalkit {

// u.v / sqrt(|u|^2 |v|^2), accumulated in double and clamped to [-1, 1].
// Throws DegenerateVectorError on a zero vector or a length mismatch.
double cosine(std::span<const float> u, std::span<const float> v);

// Dense cosine matrix; entry (i, j) is bitwise equal to cosine(a.row(i), b.row(j)).
class CosineMatrix {
public:
    CosineMatrix(const EmbeddingMatrix& a, const EmbeddingMatrix& b);
    double operator()(std::size_t i, std::size_t j) const { return values_[i * cols_ + j]; }
    std::size_t rows() const { return rows_; }
    std::size_t cols() const { return cols_; }
    CosineMatrix transposed() const;

private:
    CosineMatrix() = default;
    std::size_t rows_ = 0, cols_ = 0;
    std::vector<double> values_;
};

// Index of the largest value; the lowest index wins ties.
std::size_t argmax(std::span<const double> values);

double pearson(std::span<const double> x, std::span<const double> y);
std::vector<double> fractional_ranks(std::span<const double> x);
double spearman(std::span<const double> x, std::span<const double> y);

struct BidirectionalAccuracy {
    double forward = 0;   // src -> tgt
    double backward = 0;  // tgt -> src
    double mean = 0;
};

// Row i of src is aligned with row i of tgt.
BidirectionalAccuracy tatoeba_accuracy(const EmbeddingMatrix& src, const EmbeddingMatrix& tgt);

struct MarginOptions {
    std::size_t k_nn = 4;
    // Divide each neighbourhood sum by 2k (the averaged form). Off by default.
    bool averaged = false;
};

// Sum of the k largest values, added in descending order.
double top_k_sum(std::vector<double> values, std::size_t k);

double margin_score(std::size_t i, std::size_t j, const EmbeddingMatrix& source, const EmbeddingMatrix& target,
                    const MarginOptions& options = {});

// Precomputes neighbourhood sums so every margin(i, j) is O(1); each score is
// bitwise equal to margin_score(i, j, ...).
class MarginScorer {
public:
    MarginScorer(const EmbeddingMatrix& source, const EmbeddingMatrix& target, const MarginOptions& options = {});
    double operator()(std::size_t i, std::size_t j) const;
    const CosineMatrix& cosines() const { return cos_; }

private:
    CosineMatrix cos_;
    std::vector<double> source_sums_, target_sums_;
    std::size_t k_source_, k_target_;
    bool averaged_;
};

enum class MiningMethod { cosine, margin };
std::string to_string(MiningMethod m);
MiningMethod parse_mining_method(const std::string& name);

struct ThresholdResult {
    double threshold = std::numeric_limits<double>::infinity();
    double precision = 0;
    double recall = 0;
    double f1 = 0;
};

// Candidates with score >= threshold are accepted. Probes -inf, +inf and the
// midpoint of every pair of consecutive distinct scores; the highest threshold
// wins F1 ties. Recall is measured against `n_positive` when given, else
// against the number of positive labels.
ThresholdResult optimal_f1_threshold(std::span<const double> scores, const std::vector<bool>& labels,
                                     std::optional<std::size_t> n_positive = std::nullopt);

// Precision, recall and F1 of accepting every score >= threshold.
ThresholdResult f1_at_threshold(std::span<const double> scores, const std::vector<bool>& labels, double threshold,
                                std::optional<std::size_t> n_positive = std::nullopt);

struct MinedPair {
    std::size_t source = 0;
    std::size_t target = 0;
    double score = 0;
    bool gold = false;
    bool operator==(const MinedPair&) const = default;
};

struct MiningResult {
    std::vector<MinedPair> candidates;  // score descending, then source ascending
    double threshold = 0;
    double precision = 0;
    double recall = 0;
    double f1 = 0;
};

using Alignment = std::vector<std::pair<std::size_t, std::size_t>>;

MiningResult mine_pairs(const EmbeddingMatrix& source, const EmbeddingMatrix& target, MiningMethod method,
                        const Alignment& gold, const MarginOptions& options = {});

// Fraction of queries whose cosine-nearest kb row is gold[q].
double retrieval_r_at_1(const EmbeddingMatrix& queries, const EmbeddingMatrix& kb, std::span<const std::size_t> gold);

struct HubnessResult {
    std::vector<std::size_t> k_occurrence;  // N_k per row
    std::vector<std::size_t> histogram;     // histogram[c] = rows with N_k == c
    double skewness = 0;                    // moment coefficient m3 / m2^1.5; 0 when m2 == 0
};

HubnessResult hubness(const EmbeddingMatrix& e, std::size_t k_nn);

}  // namespace vmsst::evalkit
