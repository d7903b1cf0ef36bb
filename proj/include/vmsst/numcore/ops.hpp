#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "vmsst/numcore/random.hpp"
#include "vmsst/numcore/tape.hpp"
#include "vmsst/numcore/tensor.hpp"

// Differentiable operations. Each records its backward rule on the active tape
// when at least one input requires a gradient. Matrices are rank-2 row-major;
// sequences of a batch are stored as [batch*len x dim] row blocks.
namespace vmsst::num {

// c = a . b for a [m x k], b [k x n].
template <typename Real>
Tensor<Real> matmul(const Tensor<Real>& a, const Tensor<Real>& b);

template <typename Real>
Tensor<Real> transpose(const Tensor<Real>& a);

template <typename Real>
Tensor<Real> add(const Tensor<Real>& a, const Tensor<Real>& b);

template <typename Real>
Tensor<Real> sub(const Tensor<Real>& a, const Tensor<Real>& b);

// Elementwise product.
template <typename Real>
Tensor<Real> mul(const Tensor<Real>& a, const Tensor<Real>& b);

template <typename Real>
Tensor<Real> scale(const Tensor<Real>& a, Real factor);

template <typename Real>
Tensor<Real> add_scalar(const Tensor<Real>& a, Real offset);

// x [m x n] + bias [n] broadcast over rows.
template <typename Real>
Tensor<Real> add_bias(const Tensor<Real>& x, const Tensor<Real>& bias);

// x [b x n] -> [b*times x n], row r*times+t is x[r].
template <typename Real>
Tensor<Real> repeat_rows(const Tensor<Real>& x, std::size_t times);

template <typename Real>
Tensor<Real> concat_rows(const std::vector<Tensor<Real>>& parts);

template <typename Real>
Tensor<Real> concat_cols(const std::vector<Tensor<Real>>& parts);

template <typename Real>
Tensor<Real> slice_rows(const Tensor<Real>& x, std::size_t begin, std::size_t count);

// out[i] = table[index[i]]; also serves as embedding lookup.
template <typename Real>
Tensor<Real> gather_rows(const Tensor<Real>& table, std::span<const std::int32_t> index);

template <typename Real>
Tensor<Real> gelu(const Tensor<Real>& x);

template <typename Real>
Tensor<Real> exp(const Tensor<Real>& x);

// Gradient is zero where the input lies outside [lo, hi].
template <typename Real>
Tensor<Real> clamp(const Tensor<Real>& x, Real lo, Real hi);

// Max-subtracted softmax along `axis` of a tensor of any rank.
template <typename Real>
Tensor<Real> softmax(const Tensor<Real>& x, std::size_t axis);

// Log-softmax along the last axis.
template <typename Real>
Tensor<Real> log_softmax(const Tensor<Real>& x);

// Normalizes over the last axis, then gamma * xhat + beta. eps >= 0.
template <typename Real>
Tensor<Real> layer_norm(const Tensor<Real>& x, const Tensor<Real>& gamma,
                        const Tensor<Real>& beta, Real eps);

// h [T x d] with mask [T] -> [d]; or h [B*T x d] with mask [B x T] -> [B x d].
// Throws EmptySequenceError when a sequence has no unmasked position.
template <typename Real>
Tensor<Real> masked_mean_pool(const Tensor<Real>& h, const Tensor<Real>& mask);

struct AttentionSpec {
    std::size_t batch = 1;
    std::size_t heads = 1;
    bool causal = false;
    double dropout = 0.0;  // applied to attention weights
};

// Multi-head scaled dot-product attention over q, k, v [B*T x d]. key_mask is
// [B x T] of {0,1}; masked keys receive zero weight. rng is only consulted when
// dropout > 0.
template <typename Real>
Tensor<Real> attention(const Tensor<Real>& q, const Tensor<Real>& k, const Tensor<Real>& v,
                       const Tensor<Real>& key_mask, const AttentionSpec& spec, Rng* rng);

// Sum over rows of weight[i] * -log softmax(logits[i])[target[i]]. Rows with
// zero weight are skipped. Fused for stability.
template <typename Real>
Tensor<Real> cross_entropy(const Tensor<Real>& logits, std::span<const std::int32_t> targets,
                           std::span<const Real> weights);

template <typename Real>
Tensor<Real> sum(const Tensor<Real>& x);

// Inverted dropout; identity when rate == 0.
template <typename Real>
Tensor<Real> dropout(const Tensor<Real>& x, double rate, Rng& rng);

}  // namespace vmsst::num
