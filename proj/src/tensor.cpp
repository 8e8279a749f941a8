#include "crownseg/tensor.hpp"

#include <algorithm>
#include <sstream>

namespace crownseg {

std::size_t shape_numel(const Shape& shape) {
    std::size_t n = 1;
    for (auto e : shape) n *= e;
    return n;
}

std::string shape_string(const Shape& shape) {
    std::ostringstream os;
    os << '[';
    for (std::size_t i = 0; i < shape.size(); ++i) {
        if (i) os << 'x';
        os << shape[i];
    }
    os << ']';
    return os.str();
}

namespace {

void check_shape(const Shape& shape) {
    if (shape.empty()) throw DimensionError("tensor shape must have at least one axis");
    for (auto e : shape)
        if (e == 0) throw DimensionError("tensor extents must be positive, got " + shape_string(shape));
}

} // namespace

template <typename T>
Tensor<T>::Tensor(Shape shape, T fill, bool requires_grad) {
    check_shape(shape);
    node_ = std::make_shared<TensorNode<T>>();
    node_->value.assign(shape_numel(shape), fill);
    node_->shape = std::move(shape);
    node_->requires_grad = requires_grad;
}

template <typename T>
Tensor<T>::Tensor(Shape shape, std::vector<T> values, bool requires_grad) {
    check_shape(shape);
    if (shape_numel(shape) != values.size())
        throw DimensionError("value count " + std::to_string(values.size()) + " does not match shape " +
                             shape_string(shape));
    node_ = std::make_shared<TensorNode<T>>();
    node_->shape = std::move(shape);
    node_->value = std::move(values);
    node_->requires_grad = requires_grad;
}

template <typename T>
std::size_t Tensor<T>::dim(std::size_t axis) const {
    const auto& s = node().shape;
    if (axis >= s.size()) throw DimensionError("axis out of range for shape " + shape_string(s));
    return s[axis];
}

template <typename T>
T& Tensor<T>::at(std::size_t n, std::size_t c, std::size_t h, std::size_t w) {
    const auto& s = node_->shape;
    return node_->value[((n * s[1] + c) * s[2] + h) * s[3] + w];
}

template <typename T>
const T& Tensor<T>::at(std::size_t n, std::size_t c, std::size_t h, std::size_t w) const {
    const auto& s = node_->shape;
    return node_->value[((n * s[1] + c) * s[2] + h) * s[3] + w];
}

template <typename T>
void Tensor<T>::set_requires_grad(bool flag) {
    node().requires_grad = flag;
    if (!flag) node().grad.clear();
}

template <typename T>
void Tensor<T>::zero_grad() {
    auto& n = node();
    if (n.grad.empty())
        n.grad.assign(n.value.size(), T(0));
    else
        std::fill(n.grad.begin(), n.grad.end(), T(0));
}

template <typename T>
Tensor<T> Tensor<T>::detached_clone() const {
    return Tensor(node().shape, node().value, false);
}

template <typename T>
Tensor<T> Tensor<T>::from_node(std::shared_ptr<TensorNode<T>> node) {
    Tensor t;
    t.node_ = std::move(node);
    return t;
}

template <typename T>
void Tape<T>::record(std::vector<NodePtr> inputs, NodePtr output, std::function<void()> backward_rule) {
    if (consumed_) throw StateError("tape already consumed by backward(); clear() before recording");
    ops_.push_back(Entry{std::move(inputs), std::move(output), std::move(backward_rule)});
}

template <typename T>
void Tape<T>::backward(const Tensor<T>& loss) {
    if (consumed_) throw StateError("backward() called twice on the same tape");
    if (ops_.empty()) throw StateError("backward() called before any forward operation was recorded");
    if (!loss.defined() || loss.numel() != 1) throw DimensionError("backward() needs a scalar loss");

    const auto& root = loss.node_ptr();
    const bool on_tape =
        std::any_of(ops_.begin(), ops_.end(), [&](const Entry& e) { return e.output == root; });
    if (!on_tape) throw StateError("loss tensor was not produced by an operation on this tape");

    root->ensure_grad()[0] = T(1);
    visited_ = 0;
    for (auto it = ops_.rbegin(); it != ops_.rend(); ++it) {
        if (it->output->grad.empty()) continue;
        it->backward_rule();
        ++visited_;
    }
    consumed_ = true;
}

template <typename T>
void Tape<T>::clear() {
    ops_.clear();
    consumed_ = false;
    visited_ = 0;
}

template class Tensor<float>;
template class Tensor<double>;
template class Tape<float>;
template class Tape<double>;

} // namespace crownseg
