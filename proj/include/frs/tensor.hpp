#pragma once

#include <cmath>
#include <memory>
#include <type_traits>
#include <utility>

#include "frs/common.hpp"

namespace frs {

// Dense row-major tensor with shared storage. Copies alias the same buffer;
// ops allocate fresh outputs and never mutate their inputs. Gradient buffers
// live next to the data and are filled by tape replay.
template <typename T>
class Tensor {
    static_assert(std::is_floating_point_v<T>, "Tensor supports float/double");

    struct Impl {
        Shape shape;
        std::vector<T> data;
        std::vector<T> grad;  // empty until first accumulation
        bool requires_grad = false;
    };

public:
    Tensor() = default;

    explicit Tensor(Shape shape, T fill = T{0}) : impl_(std::make_shared<Impl>()) {
        validate_shape(shape);
        impl_->shape = std::move(shape);
        impl_->data.assign(static_cast<size_t>(shape_numel(impl_->shape)), fill);
    }

    static Tensor from_data(Shape shape, std::vector<T> values) {
        validate_shape(shape);
        if (shape_numel(shape) != static_cast<int64_t>(values.size()))
            throw DimensionError("tensor data length " + std::to_string(values.size()) +
                                 " does not match shape " + shape_str(shape));
        Tensor t;
        t.impl_ = std::make_shared<Impl>();
        t.impl_->shape = std::move(shape);
        t.impl_->data = std::move(values);
        return t;
    }

    bool defined() const { return impl_ != nullptr; }

    const Shape& shape() const { return impl_->shape; }
    int ndim() const { return static_cast<int>(impl_->shape.size()); }
    int dim(int axis) const {
        if (axis < 0) axis += ndim();
        return impl_->shape[static_cast<size_t>(axis)];
    }
    int64_t numel() const { return static_cast<int64_t>(impl_->data.size()); }

    const T* data() const { return impl_->data.data(); }
    T* data() { return impl_->data.data(); }
    const std::vector<T>& values() const { return impl_->data; }

    T item() const {
        if (numel() != 1) throw ContractError("item() requires a scalar tensor, got " + shape_str(shape()));
        return impl_->data[0];
    }

    bool requires_grad() const { return impl_ && impl_->requires_grad; }
    void set_requires_grad(bool v) { impl_->requires_grad = v; }

    bool has_grad() const { return impl_ && !impl_->grad.empty(); }
    // Allocates a zeroed gradient buffer on first use. Const-qualified on
    // purpose: gradients are a mutable side-channel of the shared storage,
    // written through tensors captured by backward closures.
    std::vector<T>& grad_vec() const {
        if (impl_->grad.empty()) impl_->grad.assign(impl_->data.size(), T{0});
        return impl_->grad;
    }
    const T* grad_data() const { return impl_->grad.data(); }
    void zero_grad() const {
        if (impl_) impl_->grad.clear();
    }

    bool same_storage(const Tensor& other) const { return impl_ == other.impl_; }
    const void* storage_id() const { return impl_.get(); }

    bool all_finite() const {
        for (T v : impl_->data)
            if (!std::isfinite(v)) return false;
        return true;
    }

private:
    static void validate_shape(const Shape& s) {
        for (int d : s)
            if (d <= 0) throw DimensionError("tensor extents must be positive, got " + shape_str(s));
    }

    std::shared_ptr<Impl> impl_;
};

}  // namespace frs
