#include "vmsst/numcore/ops.hpp"

#include <Eigen/Core>
#include <unsupported/Eigen/SpecialFunctions>
#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>
#include <string>

namespace vmsst::num {

namespace {

template <typename Real>
using RowMat = Eigen::Matrix<Real, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename Real>
using ArrayMap = Eigen::Map<Eigen::Array<Real, Eigen::Dynamic, 1>>;
template <typename Real>
using ConstArrayMap = Eigen::Map<const Eigen::Array<Real, Eigen::Dynamic, 1>>;

template <typename Real>
bool tracking(std::initializer_list<const Tensor<Real>*> inputs) {
    if (Tape<Real>::active() == nullptr) {
        return false;
    }
    return std::any_of(inputs.begin(), inputs.end(),
                       [](const Tensor<Real>* t) { return t->requires_grad(); });
}

template <typename Real>
void check_finite(const Tensor<Real>& t, const char* op) {
    // v * 0 is NaN exactly when v is not finite; the sum vectorizes.
    Real probe = 0;
    for (Real v : t.data()) probe += v * Real(0);
    if (probe != probe) throw NumericalError(std::string("non-finite value produced by ") + op);
}

template <typename Real, typename Rule>
Tensor<Real> finish(Tensor<Real> out, bool track, const char* op, Rule&& rule) {
    check_finite(out, op);
    if (track) {
        out.set_requires_grad(true);
        Tape<Real>::active()->push(std::forward<Rule>(rule));
    }
    return out;
}

template <typename Real>
void require_matrix(const Tensor<Real>& t, const char* op) {
    if (t.rank() != 2) {
        throw DimensionError(std::string(op) + " expects a matrix, got " + shape_string(t.shape()));
    }
}

template <typename Real>
void require_same_shape(const Tensor<Real>& a, const Tensor<Real>& b, const char* op) {
    if (a.shape() != b.shape()) {
        throw DimensionError(std::string(op) + ": shape mismatch " + shape_string(a.shape()) +
                             " vs " + shape_string(b.shape()));
    }
}

}  // namespace

template <typename Real>
Tensor<Real> matmul(const Tensor<Real>& a, const Tensor<Real>& b) {
    require_matrix(a, "matmul");
    require_matrix(b, "matmul");
    const std::size_t m = a.dim(0), k = a.dim(1), n = b.dim(1);
    if (b.dim(0) != k) {
        throw DimensionError("matmul: inner extents differ for " + shape_string(a.shape()) +
                             " . " + shape_string(b.shape()));
    }
    using Map = Eigen::Map<RowMat<Real>>;
    using CMap = Eigen::Map<const RowMat<Real>>;
    Tensor<Real> out({m, n});
    if (k > 0) {
        Map(out.data().data(), m, n).noalias() =
            CMap(a.data().data(), m, k) * CMap(b.data().data(), k, n);
    }
    return finish(out, tracking({&a, &b}), "matmul", [a, b, out, m, k, n]() mutable {
        if (!out.has_grad()) return;
        CMap g(out.grad().data(), m, n);
        if (a.requires_grad()) {
            Map(a.grad_buffer().data(), m, k).noalias() += g * CMap(b.data().data(), k, n).transpose();
        }
        if (b.requires_grad()) {
            Map(b.grad_buffer().data(), k, n).noalias() += CMap(a.data().data(), m, k).transpose() * g;
        }
    });
}

template <typename Real>
Tensor<Real> transpose(const Tensor<Real>& a) {
    require_matrix(a, "transpose");
    const std::size_t m = a.dim(0), n = a.dim(1);
    Tensor<Real> out({n, m});
    auto src = a.data();
    auto dst = out.data();
    for (std::size_t i = 0; i < m; ++i) {
        for (std::size_t j = 0; j < n; ++j) {
            dst[j * m + i] = src[i * n + j];
        }
    }
    return finish(out, tracking({&a}), "transpose", [a, out, m, n]() mutable {
        if (!out.has_grad()) return;
        auto g = out.grad();
        auto ga = a.grad_buffer();
        for (std::size_t i = 0; i < m; ++i) {
            for (std::size_t j = 0; j < n; ++j) {
                ga[i * n + j] += g[j * m + i];
            }
        }
    });
}

template <typename Real>
Tensor<Real> add(const Tensor<Real>& a, const Tensor<Real>& b) {
    require_same_shape(a, b, "add");
    Tensor<Real> out(a.shape());
    auto x = a.data(), y = b.data();
    auto z = out.data();
    for (std::size_t i = 0; i < z.size(); ++i) z[i] = x[i] + y[i];
    return finish(out, tracking({&a, &b}), "add", [a, b, out]() mutable {
        if (!out.has_grad()) return;
        auto g = out.grad();
        for (const Tensor<Real>* t : {&a, &b}) {
            if (!t->requires_grad()) continue;
            auto gt = t->grad_buffer();
            for (std::size_t i = 0; i < g.size(); ++i) gt[i] += g[i];
        }
    });
}

template <typename Real>
Tensor<Real> sub(const Tensor<Real>& a, const Tensor<Real>& b) {
    require_same_shape(a, b, "sub");
    Tensor<Real> out(a.shape());
    auto x = a.data(), y = b.data();
    auto z = out.data();
    for (std::size_t i = 0; i < z.size(); ++i) z[i] = x[i] - y[i];
    return finish(out, tracking({&a, &b}), "sub", [a, b, out]() mutable {
        if (!out.has_grad()) return;
        auto g = out.grad();
        if (a.requires_grad()) {
            auto ga = a.grad_buffer();
            for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
        }
        if (b.requires_grad()) {
            auto gb = b.grad_buffer();
            for (std::size_t i = 0; i < g.size(); ++i) gb[i] -= g[i];
        }
    });
}

template <typename Real>
Tensor<Real> mul(const Tensor<Real>& a, const Tensor<Real>& b) {
    require_same_shape(a, b, "mul");
    Tensor<Real> out(a.shape());
    auto x = a.data(), y = b.data();
    auto z = out.data();
    for (std::size_t i = 0; i < z.size(); ++i) z[i] = x[i] * y[i];
    return finish(out, tracking({&a, &b}), "mul", [a, b, out]() mutable {
        if (!out.has_grad()) return;
        auto g = out.grad();
        if (a.requires_grad()) {
            auto ga = a.grad_buffer();
            auto y = b.data();
            for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * y[i];
        }
        if (b.requires_grad()) {
            auto gb = b.grad_buffer();
            auto x = a.data();
            for (std::size_t i = 0; i < g.size(); ++i) gb[i] += g[i] * x[i];
        }
    });
}

template <typename Real>
Tensor<Real> scale(const Tensor<Real>& a, Real factor) {
    Tensor<Real> out(a.shape());
    auto x = a.data();
    auto z = out.data();
    for (std::size_t i = 0; i < z.size(); ++i) z[i] = x[i] * factor;
    return finish(out, tracking({&a}), "scale", [a, out, factor]() mutable {
        if (!out.has_grad()) return;
        auto g = out.grad();
        auto ga = a.grad_buffer();
        for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * factor;
    });
}

template <typename Real>
Tensor<Real> add_scalar(const Tensor<Real>& a, Real offset) {
    Tensor<Real> out(a.shape());
    auto x = a.data();
    auto z = out.data();
    for (std::size_t i = 0; i < z.size(); ++i) z[i] = x[i] + offset;
    return finish(out, tracking({&a}), "add_scalar", [a, out]() mutable {
        if (!out.has_grad()) return;
        auto g = out.grad();
        auto ga = a.grad_buffer();
        for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
    });
}

template <typename Real>
Tensor<Real> add_bias(const Tensor<Real>& x, const Tensor<Real>& bias) {
    require_matrix(x, "add_bias");
    const std::size_t m = x.dim(0), n = x.dim(1);
    if (bias.size() != n) {
        throw DimensionError("add_bias: bias " + shape_string(bias.shape()) + " does not match " +
                             shape_string(x.shape()));
    }
    Tensor<Real> out(x.shape());
    auto src = x.data(), b = bias.data();
    auto dst = out.data();
    for (std::size_t i = 0; i < m; ++i) {
        for (std::size_t j = 0; j < n; ++j) dst[i * n + j] = src[i * n + j] + b[j];
    }
    return finish(out, tracking({&x, &bias}), "add_bias", [x, bias, out, m, n]() mutable {
        if (!out.has_grad()) return;
        auto g = out.grad();
        if (x.requires_grad()) {
            auto gx = x.grad_buffer();
            for (std::size_t i = 0; i < g.size(); ++i) gx[i] += g[i];
        }
        if (bias.requires_grad()) {
            auto gb = bias.grad_buffer();
            for (std::size_t i = 0; i < m; ++i) {
                for (std::size_t j = 0; j < n; ++j) gb[j] += g[i * n + j];
            }
        }
    });
}

template <typename Real>
Tensor<Real> repeat_rows(const Tensor<Real>& x, std::size_t times) {
    require_matrix(x, "repeat_rows");
    const std::size_t b = x.dim(0), n = x.dim(1);
    Tensor<Real> out({b * times, n});
    auto src = x.data();
    auto dst = out.data();
    for (std::size_t r = 0; r < b; ++r) {
        for (std::size_t t = 0; t < times; ++t) {
            std::copy_n(src.begin() + r * n, n, dst.begin() + (r * times + t) * n);
        }
    }
    return finish(out, tracking({&x}), "repeat_rows", [x, out, b, n, times]() mutable {
        if (!out.has_grad()) return;
        auto g = out.grad();
        auto gx = x.grad_buffer();
        for (std::size_t r = 0; r < b; ++r) {
            for (std::size_t t = 0; t < times; ++t) {
                const Real* row = g.data() + (r * times + t) * n;
                for (std::size_t j = 0; j < n; ++j) gx[r * n + j] += row[j];
            }
        }
    });
}

template <typename Real>
Tensor<Real> concat_rows(const std::vector<Tensor<Real>>& parts) {
    if (parts.empty()) throw DimensionError("concat_rows: no inputs");
    const std::size_t n = parts.front().cols();
    std::size_t total = 0;
    bool track = false;
    for (const auto& p : parts) {
        require_matrix(p, "concat_rows");
        if (p.dim(1) != n) {
            throw DimensionError("concat_rows: column mismatch " + shape_string(parts.front().shape()) +
                                 " vs " + shape_string(p.shape()));
        }
        total += p.dim(0);
        track = track || tracking({&p});
    }
    Tensor<Real> out({total, n});
    auto dst = out.data();
    std::size_t offset = 0;
    for (const auto& p : parts) {
        std::copy(p.data().begin(), p.data().end(), dst.begin() + offset);
        offset += p.size();
    }
    return finish(out, track, "concat_rows", [parts, out]() mutable {
        if (!out.has_grad()) return;
        auto g = out.grad();
        std::size_t offset = 0;
        for (auto& p : parts) {
            if (p.requires_grad()) {
                auto gp = p.grad_buffer();
                for (std::size_t i = 0; i < gp.size(); ++i) gp[i] += g[offset + i];
            }
            offset += p.size();
        }
    });
}

template <typename Real>
Tensor<Real> concat_cols(const std::vector<Tensor<Real>>& parts) {
    if (parts.empty()) throw DimensionError("concat_cols: no inputs");
    const std::size_t m = parts.front().rows();
    std::size_t total = 0;
    bool track = false;
    for (const auto& p : parts) {
        require_matrix(p, "concat_cols");
        if (p.dim(0) != m) {
            throw DimensionError("concat_cols: row mismatch " + shape_string(parts.front().shape()) +
                                 " vs " + shape_string(p.shape()));
        }
        total += p.dim(1);
        track = track || tracking({&p});
    }
    Tensor<Real> out({m, total});
    auto dst = out.data();
    std::size_t offset = 0;
    for (const auto& p : parts) {
        const std::size_t w = p.dim(1);
        auto src = p.data();
        for (std::size_t i = 0; i < m; ++i) {
            std::copy_n(src.begin() + i * w, w, dst.begin() + i * total + offset);
        }
        offset += w;
    }
    return finish(out, track, "concat_cols", [parts, out, m, total]() mutable {
        if (!out.has_grad()) return;
        auto g = out.grad();
        std::size_t offset = 0;
        for (auto& p : parts) {
            const std::size_t w = p.dim(1);
            if (p.requires_grad()) {
                auto gp = p.grad_buffer();
                for (std::size_t i = 0; i < m; ++i) {
                    for (std::size_t j = 0; j < w; ++j) gp[i * w + j] += g[i * total + offset + j];
                }
            }
            offset += w;
        }
    });
}

template <typename Real>
Tensor<Real> slice_rows(const Tensor<Real>& x, std::size_t begin, std::size_t count) {
    require_matrix(x, "slice_rows");
    if (begin + count > x.dim(0)) {
        throw DimensionError("slice_rows: rows [" + std::to_string(begin) + ", " +
                             std::to_string(begin + count) + ") out of range for " +
                             shape_string(x.shape()));
    }
    const std::size_t n = x.dim(1);
    Tensor<Real> out({count, n});
    std::copy_n(x.data().begin() + begin * n, count * n, out.data().begin());
    return finish(out, tracking({&x}), "slice_rows", [x, out, begin, n]() mutable {
        if (!out.has_grad()) return;
        auto g = out.grad();
        auto gx = x.grad_buffer();
        for (std::size_t i = 0; i < g.size(); ++i) gx[begin * n + i] += g[i];
    });
}

template <typename Real>
Tensor<Real> gather_rows(const Tensor<Real>& table, std::span<const std::int32_t> index) {
    require_matrix(table, "gather_rows");
    const std::size_t rows = table.dim(0), n = table.dim(1);
    std::vector<std::int32_t> idx(index.begin(), index.end());
    Tensor<Real> out({idx.size(), n});
    auto src = table.data();
    auto dst = out.data();
    for (std::size_t i = 0; i < idx.size(); ++i) {
        if (idx[i] < 0 || static_cast<std::size_t>(idx[i]) >= rows) {
            throw ContractError("gather_rows: index " + std::to_string(idx[i]) +
                                " out of range for " + shape_string(table.shape()));
        }
        std::copy_n(src.begin() + static_cast<std::size_t>(idx[i]) * n, n, dst.begin() + i * n);
    }
    return finish(out, tracking({&table}), "gather_rows", [table, out, idx = std::move(idx), n]() mutable {
        if (!out.has_grad()) return;
        auto g = out.grad();
        auto gt = table.grad_buffer();
        for (std::size_t i = 0; i < idx.size(); ++i) {
            Real* row = gt.data() + static_cast<std::size_t>(idx[i]) * n;
            for (std::size_t j = 0; j < n; ++j) row[j] += g[i * n + j];
        }
    });
}

template <typename Real>
Tensor<Real> gelu(const Tensor<Real>& x) {
    Tensor<Real> out(x.shape());
    auto src = x.data();
    auto dst = out.data();
    const Real inv_sqrt2 = Real(1) / std::numbers::sqrt2_v<Real>;
    const auto n = static_cast<Eigen::Index>(dst.size());
    const ConstArrayMap<Real> xs(src.data(), n);
    ArrayMap<Real>(dst.data(), n) = Real(0.5) * xs * (Real(1) + (xs * inv_sqrt2).erf());
    return finish(out, tracking({&x}), "gelu", [x, out, inv_sqrt2]() mutable {
        if (!out.has_grad()) return;
        auto g = out.grad();
        auto gx = x.grad_buffer();
        auto src = x.data();
        const Real inv_sqrt_2pi = std::numbers::inv_sqrtpi_v<Real> * inv_sqrt2;
        const auto n = static_cast<Eigen::Index>(g.size());
        const ConstArrayMap<Real> xs(src.data(), n), gs(g.data(), n);
        const auto cdf = Real(0.5) * (Real(1) + (xs * inv_sqrt2).erf());
        const auto pdf = inv_sqrt_2pi * (Real(-0.5) * xs * xs).exp();
        ArrayMap<Real>(gx.data(), n) += gs * (cdf + xs * pdf);
    });
}

template <typename Real>
Tensor<Real> exp(const Tensor<Real>& x) {
    Tensor<Real> out(x.shape());
    auto src = x.data();
    auto dst = out.data();
    for (std::size_t i = 0; i < dst.size(); ++i) dst[i] = std::exp(src[i]);
    return finish(out, tracking({&x}), "exp", [x, out]() mutable {
        if (!out.has_grad()) return;
        auto g = out.grad();
        auto y = out.data();
        auto gx = x.grad_buffer();
        for (std::size_t i = 0; i < g.size(); ++i) gx[i] += g[i] * y[i];
    });
}

template <typename Real>
Tensor<Real> clamp(const Tensor<Real>& x, Real lo, Real hi) {
    if (lo > hi) throw ContractError("clamp: lower bound above upper bound");
    Tensor<Real> out(x.shape());
    auto src = x.data();
    auto dst = out.data();
    for (std::size_t i = 0; i < dst.size(); ++i) dst[i] = std::clamp(src[i], lo, hi);
    return finish(out, tracking({&x}), "clamp", [x, out, lo, hi]() mutable {
        if (!out.has_grad()) return;
        auto g = out.grad();
        auto src = x.data();
        auto gx = x.grad_buffer();
        for (std::size_t i = 0; i < g.size(); ++i) {
            if (src[i] >= lo && src[i] <= hi) gx[i] += g[i];
        }
    });
}

template <typename Real>
Tensor<Real> softmax(const Tensor<Real>& x, std::size_t axis) {
    const std::size_t n = x.dim(axis);
    if (n == 0) throw DimensionError("softmax over an empty axis");
    std::size_t outer = 1, inner = 1;
    for (std::size_t i = 0; i < axis; ++i) outer *= x.dim(i);
    for (std::size_t i = axis + 1; i < x.rank(); ++i) inner *= x.dim(i);

    Tensor<Real> out(x.shape());
    auto src = x.data();
    auto dst = out.data();
    for (std::size_t o = 0; o < outer; ++o) {
        for (std::size_t in = 0; in < inner; ++in) {
            const std::size_t base = o * n * inner + in;
            Real peak = src[base];
            for (std::size_t j = 1; j < n; ++j) peak = std::max(peak, src[base + j * inner]);
            Real total = 0;
            for (std::size_t j = 0; j < n; ++j) {
                const Real e = std::exp(src[base + j * inner] - peak);
                dst[base + j * inner] = e;
                total += e;
            }
            for (std::size_t j = 0; j < n; ++j) dst[base + j * inner] /= total;
        }
    }
    return finish(out, tracking({&x}), "softmax", [x, out, outer, inner, n]() mutable {
        if (!out.has_grad()) return;
        auto g = out.grad();
        auto y = out.data();
        auto gx = x.grad_buffer();
        for (std::size_t o = 0; o < outer; ++o) {
            for (std::size_t in = 0; in < inner; ++in) {
                const std::size_t base = o * n * inner + in;
                Real dot = 0;
                for (std::size_t j = 0; j < n; ++j) dot += g[base + j * inner] * y[base + j * inner];
                for (std::size_t j = 0; j < n; ++j) {
                    const std::size_t at = base + j * inner;
                    gx[at] += y[at] * (g[at] - dot);
                }
            }
        }
    });
}

template <typename Real>
Tensor<Real> log_softmax(const Tensor<Real>& x) {
    if (x.rank() == 0) throw DimensionError("log_softmax on a scalar");
    const std::size_t n = x.dim(x.rank() - 1);
    if (n == 0) throw DimensionError("log_softmax over an empty axis");
    const std::size_t rows = x.size() / n;
    Tensor<Real> out(x.shape());
    auto src = x.data();
    auto dst = out.data();
    for (std::size_t r = 0; r < rows; ++r) {
        const Real* row = src.data() + r * n;
        const Real peak = *std::max_element(row, row + n);
        Real total = 0;
        for (std::size_t j = 0; j < n; ++j) total += std::exp(row[j] - peak);
        const Real lse = peak + std::log(total);
        for (std::size_t j = 0; j < n; ++j) dst[r * n + j] = row[j] - lse;
    }
    return finish(out, tracking({&x}), "log_softmax", [x, out, rows, n]() mutable {
        if (!out.has_grad()) return;
        auto g = out.grad();
        auto y = out.data();
        auto gx = x.grad_buffer();
        for (std::size_t r = 0; r < rows; ++r) {
            Real total = 0;
            for (std::size_t j = 0; j < n; ++j) total += g[r * n + j];
            for (std::size_t j = 0; j < n; ++j) {
                gx[r * n + j] += g[r * n + j] - std::exp(y[r * n + j]) * total;
            }
        }
    });
}

template <typename Real>
Tensor<Real> layer_norm(const Tensor<Real>& x, const Tensor<Real>& gamma, const Tensor<Real>& beta,
                        Real eps) {
    if (eps < 0) throw ContractError("layer_norm: eps must be non-negative");
    if (x.rank() == 0) throw DimensionError("layer_norm on a scalar");
    const std::size_t d = x.dim(x.rank() - 1);
    if (d == 0) throw DimensionError("layer_norm over an empty axis");
    if (gamma.size() != d || beta.size() != d) {
        throw DimensionError("layer_norm: gamma " + shape_string(gamma.shape()) + " / beta " +
                             shape_string(beta.shape()) + " do not match " + shape_string(x.shape()));
    }
    const std::size_t rows = x.size() / d;
    Tensor<Real> out(x.shape());
    std::vector<Real> xhat(x.size());
    std::vector<Real> rstd(rows);
    auto src = x.data(), gm = gamma.data(), bt = beta.data();
    auto dst = out.data();
    for (std::size_t r = 0; r < rows; ++r) {
        const Real* row = src.data() + r * d;
        Real mean = 0;
        for (std::size_t j = 0; j < d; ++j) mean += row[j];
        mean /= static_cast<Real>(d);
        Real var = 0;
        for (std::size_t j = 0; j < d; ++j) var += (row[j] - mean) * (row[j] - mean);
        var /= static_cast<Real>(d);
        rstd[r] = Real(1) / std::sqrt(var + eps);
        for (std::size_t j = 0; j < d; ++j) {
            xhat[r * d + j] = (row[j] - mean) * rstd[r];
            dst[r * d + j] = gm[j] * xhat[r * d + j] + bt[j];
        }
    }
    return finish(out, tracking({&x, &gamma, &beta}), "layer_norm",
                  [x, gamma, beta, out, xhat = std::move(xhat), rstd = std::move(rstd), rows, d]() mutable {
                      if (!out.has_grad()) return;
                      auto g = out.grad();
                      auto gm = gamma.data();
                      if (gamma.requires_grad() || beta.requires_grad()) {
                          for (std::size_t r = 0; r < rows; ++r) {
                              for (std::size_t j = 0; j < d; ++j) {
                                  if (gamma.requires_grad()) gamma.grad_buffer()[j] += g[r * d + j] * xhat[r * d + j];
                                  if (beta.requires_grad()) beta.grad_buffer()[j] += g[r * d + j];
                              }
                          }
                      }
                      if (!x.requires_grad()) return;
                      auto gx = x.grad_buffer();
                      std::vector<Real> dxhat(d);
                      for (std::size_t r = 0; r < rows; ++r) {
                          Real mean_d = 0, mean_dx = 0;
                          for (std::size_t j = 0; j < d; ++j) {
                              dxhat[j] = g[r * d + j] * gm[j];
                              mean_d += dxhat[j];
                              mean_dx += dxhat[j] * xhat[r * d + j];
                          }
                          mean_d /= static_cast<Real>(d);
                          mean_dx /= static_cast<Real>(d);
                          for (std::size_t j = 0; j < d; ++j) {
                              gx[r * d + j] += rstd[r] * (dxhat[j] - mean_d - xhat[r * d + j] * mean_dx);
                          }
                      }
                  });
}

template <typename Real>
Tensor<Real> masked_mean_pool(const Tensor<Real>& h, const Tensor<Real>& mask) {
    require_matrix(h, "masked_mean_pool");
    const bool single = mask.rank() == 1;
    const std::size_t batch = single ? 1 : mask.rows();
    const std::size_t len = mask.cols();
    const std::size_t d = h.dim(1);
    if (mask.rank() > 2 || h.dim(0) != batch * len) {
        throw DimensionError("masked_mean_pool: hidden " + shape_string(h.shape()) +
                             " does not match mask " + shape_string(mask.shape()));
    }
    auto m = mask.data();
    std::vector<Real> inv_count(batch);
    for (std::size_t b = 0; b < batch; ++b) {
        Real count = 0;
        for (std::size_t t = 0; t < len; ++t) count += m[b * len + t];
        if (count <= 0) {
            throw EmptySequenceError("masked_mean_pool: sequence " + std::to_string(b) +
                                     " has no unmasked position");
        }
        inv_count[b] = Real(1) / count;
    }
    Tensor<Real> out(single ? Shape{d} : Shape{batch, d});
    auto src = h.data();
    auto dst = out.data();
    for (std::size_t b = 0; b < batch; ++b) {
        for (std::size_t t = 0; t < len; ++t) {
            const Real w = m[b * len + t];
            if (w == 0) continue;
            const Real* row = src.data() + (b * len + t) * d;
            for (std::size_t j = 0; j < d; ++j) dst[b * d + j] += w * row[j];
        }
        for (std::size_t j = 0; j < d; ++j) dst[b * d + j] *= inv_count[b];
    }
    return finish(out, tracking({&h}), "masked_mean_pool",
                  [h, mask, out, inv_count = std::move(inv_count), batch, len, d]() mutable {
                      if (!out.has_grad()) return;
                      auto g = out.grad();
                      auto m = mask.data();
                      auto gh = h.grad_buffer();
                      for (std::size_t b = 0; b < batch; ++b) {
                          for (std::size_t t = 0; t < len; ++t) {
                              const Real w = m[b * len + t] * inv_count[b];
                              if (w == 0) continue;
                              Real* row = gh.data() + (b * len + t) * d;
                              for (std::size_t j = 0; j < d; ++j) row[j] += w * g[b * d + j];
                          }
                      }
                  });
}

template <typename Real>
Tensor<Real> attention(const Tensor<Real>& q, const Tensor<Real>& k, const Tensor<Real>& v,
                       const Tensor<Real>& key_mask, const AttentionSpec& spec, Rng* rng) {
    require_matrix(q, "attention");
    require_same_shape(q, k, "attention");
    require_same_shape(q, v, "attention");
    const std::size_t batch = spec.batch;
    const std::size_t heads = spec.heads;
    const std::size_t d = q.dim(1);
    if (batch == 0 || heads == 0 || d % heads != 0 || q.dim(0) % batch != 0) {
        throw DimensionError("attention: " + shape_string(q.shape()) + " incompatible with batch " +
                             std::to_string(batch) + " and " + std::to_string(heads) + " heads");
    }
    const std::size_t len = q.dim(0) / batch;
    if (key_mask.size() != batch * len) {
        throw DimensionError("attention: key mask " + shape_string(key_mask.shape()) +
                             " does not cover " + std::to_string(batch) + "x" + std::to_string(len));
    }
    const bool use_dropout = spec.dropout > 0.0;
    if (use_dropout && rng == nullptr) throw ContractError("attention dropout needs an rng");
    const std::size_t hd = d / heads;
    const Real scale_factor = Real(1) / std::sqrt(static_cast<Real>(hd));
    const Real keep_scale = use_dropout ? Real(1) / Real(1 - spec.dropout) : Real(1);

    // probs holds the softmax weights; kept holds the post-dropout multipliers.
    std::vector<Real> probs(batch * heads * len * len, Real(0));
    std::vector<Real> kept;
    if (use_dropout) kept.assign(probs.size(), Real(0));
    std::bernoulli_distribution keep(1.0 - spec.dropout);

    auto Q = q.data(), K = k.data(), V = v.data(), M = key_mask.data();
    Tensor<Real> out(q.shape());
    auto O = out.data();
    std::vector<Real> scores(len);
    for (std::size_t b = 0; b < batch; ++b) {
        for (std::size_t h = 0; h < heads; ++h) {
            for (std::size_t i = 0; i < len; ++i) {
                const Real* qi = Q.data() + (b * len + i) * d + h * hd;
                Real peak = -std::numeric_limits<Real>::infinity();
                for (std::size_t j = 0; j < len; ++j) {
                    const bool allowed = M[b * len + j] != 0 && (!spec.causal || j <= i);
                    if (!allowed) {
                        scores[j] = -std::numeric_limits<Real>::infinity();
                        continue;
                    }
                    const Real* kj = K.data() + (b * len + j) * d + h * hd;
                    Real s = 0;
                    for (std::size_t c = 0; c < hd; ++c) s += qi[c] * kj[c];
                    scores[j] = s * scale_factor;
                    peak = std::max(peak, scores[j]);
                }
                Real* p = probs.data() + ((b * heads + h) * len + i) * len;
                if (peak == -std::numeric_limits<Real>::infinity()) continue;  // no visible key
                Real total = 0;
                for (std::size_t j = 0; j < len; ++j) {
                    p[j] = std::isinf(scores[j]) ? Real(0) : std::exp(scores[j] - peak);
                    total += p[j];
                }
                for (std::size_t j = 0; j < len; ++j) p[j] /= total;
                Real* kp = use_dropout ? kept.data() + ((b * heads + h) * len + i) * len : nullptr;
                Real* oi = O.data() + (b * len + i) * d + h * hd;
                for (std::size_t j = 0; j < len; ++j) {
                    Real w = p[j];
                    if (use_dropout) {
                        kp[j] = keep(*rng) ? keep_scale : Real(0);
                        w *= kp[j];
                    }
                    if (w == 0) continue;
                    const Real* vj = V.data() + (b * len + j) * d + h * hd;
                    for (std::size_t c = 0; c < hd; ++c) oi[c] += w * vj[c];
                }
            }
        }
    }
    return finish(out, tracking({&q, &k, &v}), "attention",
                  [q, k, v, out, probs = std::move(probs), kept = std::move(kept), batch, heads, len,
                   d, hd, scale_factor, use_dropout]() mutable {
                      if (!out.has_grad()) return;
                      auto G = out.grad();
                      auto Q = q.data(), K = k.data(), V = v.data();
                      std::span<Real> gq, gk, gv;
                      if (q.requires_grad()) gq = q.grad_buffer();
                      if (k.requires_grad()) gk = k.grad_buffer();
                      if (v.requires_grad()) gv = v.grad_buffer();
                      std::vector<Real> dp(len);
                      for (std::size_t b = 0; b < batch; ++b) {
                          for (std::size_t h = 0; h < heads; ++h) {
                              for (std::size_t i = 0; i < len; ++i) {
                                  const std::size_t row = ((b * heads + h) * len + i) * len;
                                  const Real* p = probs.data() + row;
                                  const Real* gi = G.data() + (b * len + i) * d + h * hd;
                                  Real dot = 0;
                                  for (std::size_t j = 0; j < len; ++j) {
                                      dp[j] = 0;
                                      if (p[j] == 0) continue;
                                      const Real mult = use_dropout ? kept[row + j] : Real(1);
                                      const Real* vj = V.data() + (b * len + j) * d + h * hd;
                                      Real s = 0;
                                      for (std::size_t c = 0; c < hd; ++c) s += gi[c] * vj[c];
                                      dp[j] = s * mult;
                                      dot += dp[j] * p[j];
                                      if (!gv.empty() && mult != 0) {
                                          Real* gvj = gv.data() + (b * len + j) * d + h * hd;
                                          const Real w = p[j] * mult;
                                          for (std::size_t c = 0; c < hd; ++c) gvj[c] += w * gi[c];
                                      }
                                  }
                                  if (gq.empty() && gk.empty()) continue;
                                  const Real* qi = Q.data() + (b * len + i) * d + h * hd;
                                  for (std::size_t j = 0; j < len; ++j) {
                                      if (p[j] == 0) continue;
                                      const Real ds = p[j] * (dp[j] - dot) * scale_factor;
                                      const Real* kj = K.data() + (b * len + j) * d + h * hd;
                                      if (!gq.empty()) {
                                          Real* gqi = gq.data() + (b * len + i) * d + h * hd;
                                          for (std::size_t c = 0; c < hd; ++c) gqi[c] += ds * kj[c];
                                      }
                                      if (!gk.empty()) {
                                          Real* gkj = gk.data() + (b * len + j) * d + h * hd;
                                          for (std::size_t c = 0; c < hd; ++c) gkj[c] += ds * qi[c];
                                      }
                                  }
                              }
                          }
                      }
                  });
}

template <typename Real>
Tensor<Real> cross_entropy(const Tensor<Real>& logits, std::span<const std::int32_t> targets,
                           std::span<const Real> weights) {
    require_matrix(logits, "cross_entropy");
    const std::size_t rows = logits.dim(0), vocab = logits.dim(1);
    if (targets.size() != rows || weights.size() != rows) {
        throw DimensionError("cross_entropy: " + std::to_string(targets.size()) + " targets / " +
                             std::to_string(weights.size()) + " weights for logits " +
                             shape_string(logits.shape()));
    }
    std::vector<std::int32_t> tgt(targets.begin(), targets.end());
    std::vector<Real> w(weights.begin(), weights.end());
    std::vector<Real> lse(rows, Real(0));
    auto x = logits.data();
    Real loss = 0;
    for (std::size_t r = 0; r < rows; ++r) {
        if (w[r] == 0) continue;
        if (tgt[r] < 0 || static_cast<std::size_t>(tgt[r]) >= vocab) {
            throw ContractError("cross_entropy: target " + std::to_string(tgt[r]) +
                                " outside vocabulary of " + std::to_string(vocab));
        }
        const Real* row = x.data() + r * vocab;
        const Real peak = *std::max_element(row, row + vocab);
        const Real total = (ConstArrayMap<Real>(row, static_cast<Eigen::Index>(vocab)) - peak).exp().sum();
        lse[r] = peak + std::log(total);
        loss += w[r] * (lse[r] - row[tgt[r]]);
    }
    Tensor<Real> out = Tensor<Real>::scalar(loss);
    return finish(out, tracking({&logits}), "cross_entropy",
                  [logits, out, tgt = std::move(tgt), w = std::move(w), lse = std::move(lse), rows,
                   vocab]() mutable {
                      if (!out.has_grad()) return;
                      const Real g = out.grad()[0];
                      auto x = logits.data();
                      auto gx = logits.grad_buffer();
                      for (std::size_t r = 0; r < rows; ++r) {
                          if (w[r] == 0) continue;
                          const Real coef = g * w[r];
                          const Real* row = x.data() + r * vocab;
                          Real* grow = gx.data() + r * vocab;
                          const auto n = static_cast<Eigen::Index>(vocab);
                          ArrayMap<Real>(grow, n) += coef * (ConstArrayMap<Real>(row, n) - lse[r]).exp();
                          grow[tgt[r]] -= coef;
                      }
                  });
}

template <typename Real>
Tensor<Real> sum(const Tensor<Real>& x) {
    Real total = 0;
    for (Real v : x.data()) total += v;
    Tensor<Real> out = Tensor<Real>::scalar(total);
    return finish(out, tracking({&x}), "sum", [x, out]() mutable {
        if (!out.has_grad()) return;
        const Real g = out.grad()[0];
        for (Real& gx : x.grad_buffer()) gx += g;
    });
}

template <typename Real>
Tensor<Real> dropout(const Tensor<Real>& x, double rate, Rng& rng) {
    if (rate < 0.0 || rate >= 1.0) throw ContractError("dropout rate must lie in [0, 1)");
    if (rate == 0.0) return x;
    std::bernoulli_distribution keep(1.0 - rate);
    const Real keep_scale = Real(1) / Real(1 - rate);
    Tensor<Real> multiplier(x.shape());
    for (Real& m : multiplier.data()) m = keep(rng) ? keep_scale : Real(0);
    return mul(x, multiplier);
}

#define VMSST_INSTANTIATE_OPS(Real)                                                                      \
    template Tensor<Real> matmul(const Tensor<Real>&, const Tensor<Real>&);                            \
    template Tensor<Real> transpose(const Tensor<Real>&);                                              \
    template Tensor<Real> add(const Tensor<Real>&, const Tensor<Real>&);                               \
    template Tensor<Real> sub(const Tensor<Real>&, const Tensor<Real>&);                               \
    template Tensor<Real> mul(const Tensor<Real>&, const Tensor<Real>&);                               \
    template Tensor<Real> scale(const Tensor<Real>&, Real);                                            \
    template Tensor<Real> add_scalar(const Tensor<Real>&, Real);                                       \
    template Tensor<Real> add_bias(const Tensor<Real>&, const Tensor<Real>&);                          \
    template Tensor<Real> repeat_rows(const Tensor<Real>&, std::size_t);                               \
    template Tensor<Real> concat_rows(const std::vector<Tensor<Real>>&);                               \
    template Tensor<Real> concat_cols(const std::vector<Tensor<Real>>&);                               \
    template Tensor<Real> slice_rows(const Tensor<Real>&, std::size_t, std::size_t);                   \
    template Tensor<Real> gather_rows(const Tensor<Real>&, std::span<const std::int32_t>);             \
    template Tensor<Real> gelu(const Tensor<Real>&);                                                   \
    template Tensor<Real> exp(const Tensor<Real>&);                                                    \
    template Tensor<Real> clamp(const Tensor<Real>&, Real, Real);                                      \
    template Tensor<Real> softmax(const Tensor<Real>&, std::size_t);                                   \
    template Tensor<Real> log_softmax(const Tensor<Real>&);                                            \
    template Tensor<Real> layer_norm(const Tensor<Real>&, const Tensor<Real>&, const Tensor<Real>&,    \
                                     Real);                                                            \
    template Tensor<Real> masked_mean_pool(const Tensor<Real>&, const Tensor<Real>&);                  \
    template Tensor<Real> attention(const Tensor<Real>&, const Tensor<Real>&, const Tensor<Real>&,     \
                                    const Tensor<Real>&, const AttentionSpec&, Rng*);                  \
    template Tensor<Real> cross_entropy(const Tensor<Real>&, std::span<const std::int32_t>,            \
                                        std::span<const Real>);                                        \
    template Tensor<Real> sum(const Tensor<Real>&);                                                    \
    template Tensor<Real> dropout(const Tensor<Real>&, double, Rng&);

VMSST_INSTANTIATE_OPS(float)
VMSST_INSTANTIATE_OPS(double)

#undef VMSST_INSTANTIATE_OPS

}  // namespace vmsst::num
