#pragma once

#include <cstddef>
#include <functional>
#include <vector>

#include "vmsst/numcore/tensor.hpp"

namespace vmsst::num {

// Define-by-run record of differentiable operations. Operations executed while
// a Recording guard is alive append their backward rule in execution order,
// which is a topological order of the graph. The tape belongs to one thread.
template <typename Real>
class Tape {
public:
    class Recording {
    public:
        explicit Recording(Tape& tape) : previous_(active_) { active_ = &tape; }
        ~Recording() { active_ = previous_; }
        Recording(const Recording&) = delete;
        Recording& operator=(const Recording&) = delete;

    private:
        Tape* previous_;
    };

    Tape() = default;
    Tape(const Tape&) = delete;
    Tape& operator=(const Tape&) = delete;

    [[nodiscard]] Recording record() { return Recording(*this); }

    static Tape* active() { return active_; }

    void push(std::function<void()> rule) { rules_.push_back(std::move(rule)); }
    std::size_t size() const { return rules_.size(); }

    // Seeds d(loss)/d(loss) = 1 and replays every rule once, newest first.
    void backward(Tensor<Real>& loss);

    // Number of rules executed by the most recent backward().
    std::size_t visits() const { return visits_; }

    void clear() {
        rules_.clear();
        visits_ = 0;
    }

private:
    std::vector<std::function<void()>> rules_;
    std::size_t visits_ = 0;
    static inline thread_local Tape* active_ = nullptr;
};

extern template class Tape<float>;
extern template class Tape<double>;

}  // namespace vmsst::num
