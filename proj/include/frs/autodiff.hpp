#pragma once

#include <algorithm>
#include <functional>

#include "frs/tensor.hpp"

namespace frs {

// Reverse-mode tape. Ops append one record per executed operation; records
// run in reverse execution order, which is a valid reverse topological order
// because every input tensor exists before the op that consumes it.
// A tape is single-threaded: one tape per training step.
template <typename T>
class GradTape {
public:
    struct Record {
        const char* op;
        std::function<void()> backward;
    };

    void record(const char* op, std::function<void()> fn) {
        records_.push_back(Record{op, std::move(fn)});
    }

    size_t size() const { return records_.size(); }
    void clear() { records_.clear(); }

    // Seeds d(loss)/d(loss) = 1 and replays the tape. Backward rules only
    // touch gradient buffers, never forward values.
    void backward(Tensor<T>& loss) {
        if (loss.numel() != 1)
            throw ContractError("backward requires a scalar loss, got " + shape_str(loss.shape()));
        loss.grad_vec()[0] = T{1};
        for (auto it = records_.rbegin(); it != records_.rend(); ++it) it->backward();
    }

private:
    std::vector<Record> records_;
};

template <typename T>
inline GradTape<T>*& active_tape() {
    thread_local GradTape<T>* tape = nullptr;
    return tape;
}

template <typename T>
class TapeScope {
public:
    explicit TapeScope(GradTape<T>& tape) : saved_(active_tape<T>()) { active_tape<T>() = &tape; }
    ~TapeScope() { active_tape<T>() = saved_; }
    TapeScope(const TapeScope&) = delete;
    TapeScope& operator=(const TapeScope&) = delete;

private:
    GradTape<T>* saved_;
};

// Suspends recording (forward-only evaluation, gate computation, finite
// differences).
template <typename T>
class NoGradScope {
public:
    NoGradScope() : saved_(active_tape<T>()) { active_tape<T>() = nullptr; }
    ~NoGradScope() { active_tape<T>() = saved_; }
    NoGradScope(const NoGradScope&) = delete;
    NoGradScope& operator=(const NoGradScope&) = delete;

private:
    GradTape<T>* saved_;
};

namespace detail {

template <typename T>
inline bool wants_grad(std::initializer_list<const Tensor<T>*> inputs) {
    if (active_tape<T>() == nullptr) return false;
    for (const Tensor<T>* t : inputs)
        if (t && t->defined() && t->requires_grad()) return true;
    return false;
}

}  // namespace detail

// Compares tape gradients of a scalar-valued composite against central finite
// differences (f(x+h) - f(x-h)) / 2h, element by element over every input.
// Differences below the 1e-8 absolute floor count as zero. `coord_stride`
// optionally thins the coordinates checked per input (stride 1 = all).
template <typename T>
T backward_gradcheck(const std::function<Tensor<T>(std::vector<Tensor<T>>&)>& f,
                     std::vector<Tensor<T>>& inputs, T h = T(1e-5), int64_t coord_stride = 1) {
    constexpr T kAbsFloor = T(1e-8);
    for (auto& in : inputs) {
        in.set_requires_grad(true);
        in.zero_grad();
    }

    GradTape<T> tape;
    std::vector<std::vector<T>> analytic;
    {
        TapeScope<T> scope(tape);
        Tensor<T> y = f(inputs);
        if (y.numel() != 1)
            throw ContractError("backward_gradcheck requires a scalar-valued composite");
        tape.backward(y);
    }
    analytic.reserve(inputs.size());
    for (auto& in : inputs) {
        if (in.has_grad())
            analytic.emplace_back(in.grad_data(), in.grad_data() + in.numel());
        else
            analytic.emplace_back(static_cast<size_t>(in.numel()), T{0});
        in.zero_grad();
    }

    T max_rel = T{0};
    NoGradScope<T> no_grad;
    for (size_t i = 0; i < inputs.size(); ++i) {
        T* data = inputs[i].data();
        const int64_t n = inputs[i].numel();
        for (int64_t j = 0; j < n; j += std::max<int64_t>(1, coord_stride)) {
            const T saved = data[j];
            data[j] = saved + h;
            const T up = f(inputs).item();
            data[j] = saved - h;
            const T down = f(inputs).item();
            data[j] = saved;
            const T numeric = (up - down) / (T{2} * h);
            const T diff = std::abs(analytic[i][static_cast<size_t>(j)] - numeric);
            if (diff <= kAbsFloor) continue;
            const T denom = std::max(std::max(std::abs(analytic[i][static_cast<size_t>(j)]),
                                              std::abs(numeric)),
                                     kAbsFloor);
            max_rel = std::max(max_rel, diff / denom);
        }
    }
    return max_rel;
}

}  // namespace frs
