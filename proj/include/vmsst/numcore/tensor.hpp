#pragma once

#include <cstddef>
#include <functional>
#include <memory>
#include <new>
#include <span>
#include <string>
#include <vector>

#include "vmsst/numcore/errors.hpp"

namespace vmsst::num {

using Shape = std::vector<std::size_t>;

std::size_t shape_size(const Shape& shape);
std::string shape_string(const Shape& shape);

// Storage aligned to 64 bytes. Vectorized kernels peel a different number
// of scalar elements depending on the start address, which changes rounding;
// a fixed alignment keeps results independent of the allocator's history.
template <typename T>
struct AlignedAllocator {
    using value_type = T;
    static constexpr std::align_val_t alignment{64};

    AlignedAllocator() = default;
    template <typename U>
    AlignedAllocator(const AlignedAllocator<U>&) noexcept {}

    T* allocate(std::size_t n) { return static_cast<T*>(::operator new(n * sizeof(T), alignment)); }
    void deallocate(T* p, std::size_t) noexcept { ::operator delete(p, alignment); }
    template <typename U>
    bool operator==(const AlignedAllocator<U>&) const noexcept {
        return true;
    }
};

template <typename T>
using Buffer = std::vector<T, AlignedAllocator<T>>;

namespace detail {

template <typename Real>
struct Node {
    Shape shape;
    Buffer<Real> value;
    Buffer<Real> grad;  // empty until something flows into it
    bool requires_grad = false;
};

}  // namespace detail

// Dense row-major array handle. Copies share storage; use clone() for a deep
// copy. A tensor that requires_grad participates in the active tape.
template <typename Real>
class Tensor {
public:
    Tensor() = default;
    explicit Tensor(Shape shape, bool requires_grad = false);
    Tensor(Shape shape, std::vector<Real> values, bool requires_grad = false);

    static Tensor scalar(Real value);
    static Tensor zeros(Shape shape) { return Tensor(std::move(shape)); }
    static Tensor filled(Shape shape, Real value);

    bool defined() const { return node_ != nullptr; }
    const Shape& shape() const { return node_->shape; }
    std::size_t rank() const { return node_->shape.size(); }
    std::size_t dim(std::size_t axis) const;
    std::size_t size() const { return node_->value.size(); }
    // Rows/cols view a rank-2 tensor; a rank-1 tensor is one row.
    std::size_t rows() const;
    std::size_t cols() const;

    std::span<const Real> data() const { return node_->value; }
    std::span<Real> data() { return node_->value; }
    Real item() const;
    Real at(std::size_t row, std::size_t col) const { return node_->value[row * cols() + col]; }

    bool requires_grad() const { return node_->requires_grad; }
    void set_requires_grad(bool flag) { node_->requires_grad = flag; }

    bool has_grad() const { return !node_->grad.empty(); }
    // Empty span when no gradient has reached this tensor.
    std::span<const Real> grad() const { return node_->grad; }
    // Allocates a zero gradient on first use.
    std::span<Real> grad_buffer() const;
    void zero_grad() { node_->grad.clear(); }

    Tensor clone() const;
    Tensor reshaped(Shape shape) const;  // shares nothing; new leaf

    const detail::Node<Real>* node() const { return node_.get(); }

private:
    std::shared_ptr<detail::Node<Real>> node_;
};

extern template class Tensor<float>;
extern template class Tensor<double>;

}  // namespace vmsst::num
