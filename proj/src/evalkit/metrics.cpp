#include "vmsst/evalkit/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <set>

#include "vmsst/numcore/errors.hpp"

namespace vmsst::evalkit {

namespace {

double squared_norm(std::span<const float> u) {
    double s = 0;
    for (float x : u) s += static_cast<double>(x) * x;
    return s;
}

double dot(std::span<const float> u, std::span<const float> v) {
    double s = 0;
    for (std::size_t i = 0; i < u.size(); ++i) s += static_cast<double>(u[i]) * v[i];
    return s;
}

double cosine_from(double uv, double uu, double vv) {
    return std::clamp(uv / std::sqrt(uu * vv), -1.0, 1.0);
}

std::vector<double> row_norms(const EmbeddingMatrix& m) {
    m.validate();
    std::vector<double> out(m.rows);
    for (std::size_t i = 0; i < m.rows; ++i) {
        out[i] = squared_norm(m.row(i));
        if (out[i] == 0) throw DegenerateVectorError("embedding row " + std::to_string(i) + " is the zero vector");
    }
    return out;
}

std::vector<double> cosines_to(std::span<const float> u, const EmbeddingMatrix& m) {
    const double uu = squared_norm(u);
    if (uu == 0) throw DegenerateVectorError("cosine of a zero vector");
    std::vector<double> out(m.rows);
    for (std::size_t j = 0; j < m.rows; ++j) {
        const double vv = squared_norm(m.row(j));
        if (vv == 0) throw DegenerateVectorError("embedding row " + std::to_string(j) + " is the zero vector");
        out[j] = cosine_from(dot(u, m.row(j)), uu, vv);
    }
    return out;
}

void require_same_dim(const EmbeddingMatrix& a, const EmbeddingMatrix& b) {
    if (a.dim != b.dim) {
        throw DimensionError("embedding dims differ: " + std::to_string(a.dim) + " vs " + std::to_string(b.dim));
    }
}

double mean(std::span<const double> x) {
    double s = 0;
    for (double v : x) s += v;
    return s / static_cast<double>(x.size());
}

}  // namespace

double cosine(std::span<const float> u, std::span<const float> v) {
    if (u.size() != v.size()) throw DegenerateVectorError("cosine of vectors with different lengths");
    const double uu = squared_norm(u), vv = squared_norm(v);
    if (uu == 0 || vv == 0) throw DegenerateVectorError("cosine of a zero vector");
    return cosine_from(dot(u, v), uu, vv);
}

CosineMatrix::CosineMatrix(const EmbeddingMatrix& a, const EmbeddingMatrix& b) : rows_(a.rows), cols_(b.rows) {
    require_same_dim(a, b);
    const auto na = row_norms(a), nb = row_norms(b);
    values_.resize(rows_ * cols_);
    for (std::size_t i = 0; i < rows_; ++i) {
        for (std::size_t j = 0; j < cols_; ++j) values_[i * cols_ + j] = cosine_from(dot(a.row(i), b.row(j)), na[i], nb[j]);
    }
}

CosineMatrix CosineMatrix::transposed() const {
    CosineMatrix t;
    t.rows_ = cols_;
    t.cols_ = rows_;
    t.values_.resize(values_.size());
    for (std::size_t i = 0; i < rows_; ++i) {
        for (std::size_t j = 0; j < cols_; ++j) t.values_[j * rows_ + i] = values_[i * cols_ + j];
    }
    return t;
}

std::size_t argmax(std::span<const double> values) {
    if (values.empty()) throw ContractError("argmax of an empty range");
    std::size_t best = 0;
    for (std::size_t i = 1; i < values.size(); ++i) {
        if (values[i] > values[best]) best = i;
    }
    return best;
}

double pearson(std::span<const double> x, std::span<const double> y) {
    if (x.size() != y.size()) throw AlignmentError("pearson: inputs have different lengths");
    if (x.size() < 2) throw DegenerateDataError("pearson: need at least two points");
    const double mx = mean(x), my = mean(y);
    double sxy = 0, sxx = 0, syy = 0;
    for (std::size_t i = 0; i < x.size(); ++i) {
        sxy += (x[i] - mx) * (y[i] - my);
        sxx += (x[i] - mx) * (x[i] - mx);
        syy += (y[i] - my) * (y[i] - my);
    }
    if (sxx == 0 || syy == 0) throw DegenerateDataError("pearson: zero variance");
    return std::clamp(sxy / std::sqrt(sxx * syy), -1.0, 1.0);
}

std::vector<double> fractional_ranks(std::span<const double> x) {
    std::vector<std::size_t> order(x.size());
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return x[a] < x[b]; });
    std::vector<double> ranks(x.size());
    for (std::size_t i = 0; i < order.size();) {
        std::size_t j = i;
        while (j + 1 < order.size() && x[order[j + 1]] == x[order[i]]) ++j;
        const double r = (static_cast<double>(i) + static_cast<double>(j)) / 2.0 + 1.0;
        for (std::size_t t = i; t <= j; ++t) ranks[order[t]] = r;
        i = j + 1;
    }
    return ranks;
}

double spearman(std::span<const double> x, std::span<const double> y) {
    if (x.size() != y.size()) throw AlignmentError("spearman: inputs have different lengths");
    const auto rx = fractional_ranks(x), ry = fractional_ranks(y);
    return pearson(rx, ry);
}

BidirectionalAccuracy tatoeba_accuracy(const EmbeddingMatrix& src, const EmbeddingMatrix& tgt) {
    if (src.rows != tgt.rows) {
        throw AlignmentError("tatoeba: " + std::to_string(src.rows) + " source rows vs " + std::to_string(tgt.rows) +
                             " target rows");
    }
    const CosineMatrix c(src, tgt);
    std::size_t fwd = 0, bwd = 0;
    std::vector<double> buf(src.rows);
    for (std::size_t i = 0; i < src.rows; ++i) {
        for (std::size_t j = 0; j < tgt.rows; ++j) buf[j] = c(i, j);
        fwd += argmax(buf) == i;
    }
    for (std::size_t j = 0; j < tgt.rows; ++j) {
        for (std::size_t i = 0; i < src.rows; ++i) buf[i] = c(i, j);
        bwd += argmax(buf) == j;
    }
    const double n = static_cast<double>(src.rows);
    BidirectionalAccuracy r;
    r.forward = static_cast<double>(fwd) / n;
    r.backward = static_cast<double>(bwd) / n;
    r.mean = (r.forward + r.backward) / 2.0;
    return r;
}

double top_k_sum(std::vector<double> values, std::size_t k) {
    k = std::min(k, values.size());
    std::partial_sort(values.begin(), values.begin() + static_cast<std::ptrdiff_t>(k), values.end(),
                      std::greater<>());
    double s = 0;
    for (std::size_t i = 0; i < k; ++i) s += values[i];
    return s;
}

namespace {

double margin_from(double cos, double source_sum, std::size_t k_source, double target_sum, std::size_t k_target,
                   bool averaged) {
    const double denom = averaged ? source_sum / (2.0 * static_cast<double>(k_source)) +
                                        target_sum / (2.0 * static_cast<double>(k_target))
                                  : source_sum + target_sum;
    if (!(denom > 0)) {
        throw DegenerateGeometryError("margin denominator is not positive (" + std::to_string(denom) +
                                      "); neighbourhoods are anti-aligned");
    }
    return cos / denom;
}

void require_k(std::size_t k_nn) {
    if (k_nn == 0) throw ContractError("k_nn must be at least 1");
}

}  // namespace

double margin_score(std::size_t i, std::size_t j, const EmbeddingMatrix& source, const EmbeddingMatrix& target,
                    const MarginOptions& options) {
    require_k(options.k_nn);
    source.validate();
    target.validate();
    require_same_dim(source, target);
    if (i >= source.rows || j >= target.rows) throw ContractError("margin_score: index out of range");
    const std::size_t k_source = std::min(options.k_nn, target.rows), k_target = std::min(options.k_nn, source.rows);
    const double source_sum = top_k_sum(cosines_to(source.row(i), target), k_source);
    const double target_sum = top_k_sum(cosines_to(target.row(j), source), k_target);
    return margin_from(cosine(source.row(i), target.row(j)), source_sum, k_source, target_sum, k_target,
                       options.averaged);
}

MarginScorer::MarginScorer(const EmbeddingMatrix& source, const EmbeddingMatrix& target, const MarginOptions& options)
    : cos_(source, target),
      k_source_(std::min(options.k_nn, target.rows)),
      k_target_(std::min(options.k_nn, source.rows)),
      averaged_(options.averaged) {
    require_k(options.k_nn);
    std::vector<double> buf(target.rows);
    for (std::size_t i = 0; i < source.rows; ++i) {
        for (std::size_t j = 0; j < target.rows; ++j) buf[j] = cos_(i, j);
        source_sums_.push_back(top_k_sum(buf, k_source_));
    }
    buf.resize(source.rows);
    for (std::size_t j = 0; j < target.rows; ++j) {
        for (std::size_t i = 0; i < source.rows; ++i) buf[i] = cos_(i, j);
        target_sums_.push_back(top_k_sum(buf, k_target_));
    }
}

double MarginScorer::operator()(std::size_t i, std::size_t j) const {
    return margin_from(cos_(i, j), source_sums_[i], k_source_, target_sums_[j], k_target_, averaged_);
}

std::string to_string(MiningMethod m) { return m == MiningMethod::cosine ? "cosine" : "margin"; }

MiningMethod parse_mining_method(const std::string& name) {
    if (name == "cosine") return MiningMethod::cosine;
    if (name == "margin") return MiningMethod::margin;
    throw ConfigError("mining method: expected cosine or margin, got '" + name + "'");
}

ThresholdResult f1_at_threshold(std::span<const double> scores, const std::vector<bool>& labels, double threshold,
                                std::optional<std::size_t> n_positive) {
    if (scores.size() != labels.size()) throw AlignmentError("scores and labels have different lengths");
    const std::size_t positives =
        n_positive.value_or(static_cast<std::size_t>(std::count(labels.begin(), labels.end(), true)));
    std::size_t selected = 0, hits = 0;
    for (std::size_t i = 0; i < scores.size(); ++i) {
        if (scores[i] >= threshold) {
            ++selected;
            hits += labels[i];
        }
    }
    ThresholdResult r;
    r.threshold = threshold;
    r.precision = selected ? static_cast<double>(hits) / static_cast<double>(selected) : 0.0;
    r.recall = positives ? static_cast<double>(hits) / static_cast<double>(positives) : 0.0;
    r.f1 = r.precision + r.recall > 0 ? 2 * r.precision * r.recall / (r.precision + r.recall) : 0.0;
    return r;
}

ThresholdResult optimal_f1_threshold(std::span<const double> scores, const std::vector<bool>& labels,
                                     std::optional<std::size_t> n_positive) {
    if (scores.empty()) throw ContractError("optimal_f1_threshold: no candidates");
    if (scores.size() != labels.size()) throw AlignmentError("scores and labels have different lengths");
    const std::size_t positives =
        n_positive.value_or(static_cast<std::size_t>(std::count(labels.begin(), labels.end(), true)));

    // Group labels by distinct score, highest first, and sweep the threshold
    // downward so each probe adds one group.
    std::vector<std::size_t> order(scores.size());
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return scores[a] > scores[b]; });

    auto evaluate = [&](double threshold, std::size_t selected, std::size_t hits) {
        ThresholdResult r;
        r.threshold = threshold;
        r.precision = selected ? static_cast<double>(hits) / static_cast<double>(selected) : 0.0;
        r.recall = positives ? static_cast<double>(hits) / static_cast<double>(positives) : 0.0;
        r.f1 = r.precision + r.recall > 0 ? 2 * r.precision * r.recall / (r.precision + r.recall) : 0.0;
        return r;
    };

    ThresholdResult best = evaluate(std::numeric_limits<double>::infinity(), 0, 0);
    std::size_t selected = 0, hits = 0;
    for (std::size_t i = 0; i < order.size();) {
        const double s = scores[order[i]];
        std::size_t j = i;
        while (j < order.size() && scores[order[j]] == s) {
            hits += labels[order[j]];
            ++j;
        }
        selected = j;
        const double threshold =
            j < order.size() ? (s + scores[order[j]]) / 2.0 : -std::numeric_limits<double>::infinity();
        const auto r = evaluate(threshold, selected, hits);
        if (r.f1 > best.f1) best = r;
        i = j;
    }
    return best;
}

MiningResult mine_pairs(const EmbeddingMatrix& source, const EmbeddingMatrix& target, MiningMethod method,
                        const Alignment& gold, const MarginOptions& options) {
    if (gold.empty()) throw ContractError("mine_pairs: gold alignment is empty");
    std::set<std::pair<std::size_t, std::size_t>> gold_set;
    for (const auto& g : gold) {
        if (g.first >= source.rows || g.second >= target.rows) {
            throw ContractError("mine_pairs: gold pair (" + std::to_string(g.first) + ", " + std::to_string(g.second) +
                                ") is outside the matrices");
        }
        gold_set.insert(g);
    }

    const MarginScorer scorer(source, target, options);
    const auto& cos = scorer.cosines();
    MiningResult result;
    std::vector<double> row(target.rows);
    for (std::size_t i = 0; i < source.rows; ++i) {
        for (std::size_t j = 0; j < target.rows; ++j) row[j] = method == MiningMethod::cosine ? cos(i, j) : scorer(i, j);
        const std::size_t j = argmax(row);
        result.candidates.push_back({i, j, row[j], gold_set.count({i, j}) > 0});
    }
    std::stable_sort(result.candidates.begin(), result.candidates.end(),
                     [](const MinedPair& a, const MinedPair& b) { return a.score > b.score; });

    std::vector<double> scores;
    std::vector<bool> labels;
    for (const auto& c : result.candidates) {
        scores.push_back(c.score);
        labels.push_back(c.gold);
    }
    const auto t = optimal_f1_threshold(scores, labels, gold_set.size());
    result.threshold = t.threshold;
    result.precision = t.precision;
    result.recall = t.recall;
    result.f1 = t.f1;
    return result;
}

double retrieval_r_at_1(const EmbeddingMatrix& queries, const EmbeddingMatrix& kb, std::span<const std::size_t> gold) {
    if (kb.rows == 0) throw ContractError("retrieval: knowledge base is empty");
    if (gold.size() != queries.rows) throw AlignmentError("retrieval: one gold entry per query is required");
    for (auto g : gold) {
        if (g >= kb.rows) throw ContractError("retrieval: gold index " + std::to_string(g) + " is outside the kb");
    }
    const CosineMatrix c(queries, kb);
    std::vector<double> row(kb.rows);
    std::size_t hits = 0;
    for (std::size_t q = 0; q < queries.rows; ++q) {
        for (std::size_t j = 0; j < kb.rows; ++j) row[j] = c(q, j);
        hits += argmax(row) == gold[q];
    }
    return static_cast<double>(hits) / static_cast<double>(queries.rows);
}

HubnessResult hubness(const EmbeddingMatrix& e, std::size_t k_nn) {
    require_k(k_nn);
    if (e.rows <= k_nn) {
        throw ContractError("hubness: need more than k_nn=" + std::to_string(k_nn) + " rows, got " +
                            std::to_string(e.rows));
    }
    const CosineMatrix c(e, e);
    HubnessResult r;
    r.k_occurrence.assign(e.rows, 0);
    std::vector<std::size_t> others;
    for (std::size_t i = 0; i < e.rows; ++i) {
        others.clear();
        for (std::size_t j = 0; j < e.rows; ++j) {
            if (j != i) others.push_back(j);
        }
        std::partial_sort(others.begin(), others.begin() + static_cast<std::ptrdiff_t>(k_nn), others.end(),
                          [&](std::size_t a, std::size_t b) { return c(i, a) > c(i, b) || (c(i, a) == c(i, b) && a < b); });
        for (std::size_t t = 0; t < k_nn; ++t) ++r.k_occurrence[others[t]];
    }
    r.histogram.assign(*std::max_element(r.k_occurrence.begin(), r.k_occurrence.end()) + 1, 0);
    for (auto n : r.k_occurrence) ++r.histogram[n];

    std::vector<double> x(r.k_occurrence.begin(), r.k_occurrence.end());
    const double m = mean(x);
    double m2 = 0, m3 = 0;
    for (double v : x) {
        m2 += (v - m) * (v - m);
        m3 += (v - m) * (v - m) * (v - m);
    }
    m2 /= static_cast<double>(x.size());
    m3 /= static_cast<double>(x.size());
    r.skewness = m2 > 0 ? m3 / std::pow(m2, 1.5) : 0.0;
    return r;
}

}  // namespace vmsst::evalkit
