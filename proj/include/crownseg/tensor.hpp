#pragma once

#include <cstddef>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "crownseg/error.hpp"

namespace crownseg {

using Shape = std::vector<std::size_t>;

std::size_t shape_numel(const Shape& shape);
std::string shape_string(const Shape& shape);

template <typename T>
struct TensorNode {
    Shape shape;
    std::vector<T> value;
    std::vector<T> grad; // empty until a gradient is accumulated
    bool requires_grad = false;

    std::vector<T>& ensure_grad() {
        if (grad.empty()) grad.assign(value.size(), T(0));
        return grad;
    }
};

// Dense n-dimensional array with shared ownership of its storage. Copies are
// shallow: two Tensor handles may refer to the same node, which is how the
// tape refers back to operation inputs and outputs. 4-D feature maps use the
// N x C x H x W layout.
template <typename T>
class Tensor {
public:
    using value_type = T;

    Tensor() = default;

    explicit Tensor(Shape shape, T fill = T(0), bool requires_grad = false);
    Tensor(Shape shape, std::vector<T> values, bool requires_grad = false);

    bool defined() const noexcept { return node_ != nullptr; }

    const Shape& shape() const { return node().shape; }
    std::size_t rank() const { return node().shape.size(); }
    std::size_t dim(std::size_t axis) const;
    std::size_t numel() const { return node().value.size(); }

    std::span<T> values() { return node().value; }
    std::span<const T> values() const { return node().value; }
    T& operator[](std::size_t i) { return node().value[i]; }
    const T& operator[](std::size_t i) const { return node().value[i]; }

    /// Element access for N x C x H x W tensors.
    T& at(std::size_t n, std::size_t c, std::size_t h, std::size_t w);
    const T& at(std::size_t n, std::size_t c, std::size_t h, std::size_t w) const;

    bool requires_grad() const { return node().requires_grad; }
    void set_requires_grad(bool flag);

    bool has_grad() const { return !node().grad.empty(); }
    std::span<const T> grad() const { return node().grad; }
    std::span<T> grad_mut() { return node().ensure_grad(); }
    void zero_grad();

    /// Deep copy with no gradient and requires_grad cleared.
    Tensor detached_clone() const;

    const std::shared_ptr<TensorNode<T>>& node_ptr() const { return node_; }
    static Tensor from_node(std::shared_ptr<TensorNode<T>> node);

private:
    TensorNode<T>& node() const {
        if (!node_) throw StateError("use of an undefined tensor");
        return *node_;
    }

    std::shared_ptr<TensorNode<T>> node_;
};

// Records differentiable operations in execution order so that a single
// reverse sweep yields parameter gradients. A tape is single use: once
// backward() has run it must be cleared before recording again.
template <typename T>
class Tape {
public:
    using NodePtr = std::shared_ptr<TensorNode<T>>;

    /// Appends one operation. The backward rule reads output->grad and
    /// accumulates into the grads of inputs that require them.
    void record(std::vector<NodePtr> inputs, NodePtr output, std::function<void()> backward_rule);

    /// Seeds d(loss)/d(loss) = 1 and visits every recorded operation once in
    /// reverse order. Operations whose output received no gradient are skipped.
    void backward(const Tensor<T>& loss);

    void clear();
    std::size_t size() const noexcept { return ops_.size(); }
    bool empty() const noexcept { return ops_.empty(); }

    /// Number of operations whose backward rule ran in the last backward().
    std::size_t visited() const noexcept { return visited_; }

private:
    struct Entry {
        std::vector<NodePtr> inputs;
        NodePtr output;
        std::function<void()> backward_rule;
    };

    std::vector<Entry> ops_;
    bool consumed_ = false;
    std::size_t visited_ = 0;
};

extern template class Tensor<float>;
extern template class Tensor<double>;
extern template class Tape<float>;
extern template class Tape<double>;

} // namespace crownseg
