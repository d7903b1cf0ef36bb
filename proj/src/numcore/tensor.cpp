#include "vmsst/numcore/tensor.hpp"

#include <numeric>
#include <sstream>

#include "vmsst/numcore/tape.hpp"

namespace vmsst::num {

std::size_t shape_size(const Shape& shape) {
    return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
}

std::string shape_string(const Shape& shape) {
    std::ostringstream out;
    out << '[';
    for (std::size_t i = 0; i < shape.size(); ++i) {
        out << (i ? "x" : "") << shape[i];
    }
    out << ']';
    return out.str();
}

template <typename Real>
Tensor<Real>::Tensor(Shape shape, bool requires_grad)
    : node_(std::make_shared<detail::Node<Real>>()) {
    node_->value.assign(shape_size(shape), Real{0});
    node_->shape = std::move(shape);
    node_->requires_grad = requires_grad;
}

template <typename Real>
Tensor<Real>::Tensor(Shape shape, std::vector<Real> values, bool requires_grad)
    : node_(std::make_shared<detail::Node<Real>>()) {
    if (shape_size(shape) != values.size()) {
        throw DimensionError("tensor shape " + shape_string(shape) + " does not hold " +
                             std::to_string(values.size()) + " values");
    }
    node_->shape = std::move(shape);
    node_->value.assign(values.begin(), values.end());
    node_->requires_grad = requires_grad;
}

template <typename Real>
Tensor<Real> Tensor<Real>::scalar(Real value) {
    return Tensor(Shape{}, std::vector<Real>{value});
}

template <typename Real>
Tensor<Real> Tensor<Real>::filled(Shape shape, Real value) {
    Tensor t(std::move(shape));
    std::fill(t.node_->value.begin(), t.node_->value.end(), value);
    return t;
}

template <typename Real>
std::size_t Tensor<Real>::dim(std::size_t axis) const {
    if (axis >= rank()) {
        throw DimensionError("axis " + std::to_string(axis) + " out of range for shape " +
                             shape_string(shape()));
    }
    return node_->shape[axis];
}

template <typename Real>
std::size_t Tensor<Real>::rows() const {
    switch (rank()) {
        case 0:
        case 1:
            return 1;
        case 2:
            return node_->shape[0];
        default:
            throw DimensionError("expected a matrix, got shape " + shape_string(shape()));
    }
}

template <typename Real>
std::size_t Tensor<Real>::cols() const {
    switch (rank()) {
        case 0:
            return 1;
        case 1:
            return node_->shape[0];
        case 2:
            return node_->shape[1];
        default:
            throw DimensionError("expected a matrix, got shape " + shape_string(shape()));
    }
}

template <typename Real>
Real Tensor<Real>::item() const {
    if (size() != 1) {
        throw DimensionError("item() on non-scalar shape " + shape_string(shape()));
    }
    return node_->value[0];
}

template <typename Real>
std::span<Real> Tensor<Real>::grad_buffer() const {
    if (node_->grad.empty()) {
        node_->grad.assign(node_->value.size(), Real{0});
    }
    return node_->grad;
}

template <typename Real>
Tensor<Real> Tensor<Real>::clone() const {
    Tensor copy(node_->shape, node_->requires_grad);
    copy.node_->value = node_->value;
    copy.node_->grad = node_->grad;
    return copy;
}

template <typename Real>
Tensor<Real> Tensor<Real>::reshaped(Shape shape) const {
    if (shape_size(shape) != size()) {
        throw DimensionError("cannot reshape " + shape_string(node_->shape) + " to " + shape_string(shape));
    }
    Tensor out(std::move(shape));
    out.node_->value = node_->value;
    return out;
}

template class Tensor<float>;
template class Tensor<double>;

template <typename Real>
void Tape<Real>::backward(Tensor<Real>& loss) {
    if (!loss.defined() || loss.size() != 1) {
        throw ContractError("backward requires a scalar loss, got shape " +
                            (loss.defined() ? shape_string(loss.shape()) : std::string("<undefined>")));
    }
    if (!loss.requires_grad()) {
        throw ContractError("backward on a loss that was not recorded on a tape");
    }
    loss.grad_buffer()[0] += Real{1};
    visits_ = 0;
    for (auto it = rules_.rbegin(); it != rules_.rend(); ++it) {
        (*it)();
        ++visits_;
    }
}

template class Tape<float>;
template class Tape<double>;

}  // namespace vmsst::num
