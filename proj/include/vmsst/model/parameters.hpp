#pragma once

#include <string>
#include <unordered_map>
#include <vector>

#include "vmsst/numcore/tensor.hpp"

namespace vmsst::model {

// Ordered, name-addressable collection of trainable tensors. Registration
// order is stable, so iteration order is identical across runs and loads.
template <typename Real>
class ParameterSet {
public:
    struct Entry {
        std::string name;
        num::Tensor<Real> tensor;
    };

    num::Tensor<Real> add(const std::string& name, num::Shape shape);

    bool contains(const std::string& name) const { return index_.count(name) != 0; }
    const num::Tensor<Real>& get(const std::string& name) const;

    const std::vector<Entry>& entries() const { return entries_; }
    std::size_t size() const { return entries_.size(); }
    std::size_t element_count() const;

    void zero_grad();

private:
    std::vector<Entry> entries_;
    std::unordered_map<std::string, std::size_t> index_;
};

extern template class ParameterSet<float>;
extern template class ParameterSet<double>;

}  // namespace vmsst::model
