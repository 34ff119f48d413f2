#include "lune/tensor.hpp"

#include "lune/error.hpp"

#include <algorithm>
#include <sstream>

namespace lune {

std::size_t shape_numel(const Shape& shape) {
    std::size_t n = 1;
    for (auto d : shape) n *= d;
    return n;
}

std::string shape_str(const Shape& shape) {
    std::ostringstream os;
    os << '[';
    for (std::size_t i = 0; i < shape.size(); ++i) {
        if (i) os << 'x';
        os << shape[i];
    }
    os << ']';
    return os.str();
}

Tensor Tensor::zeros(Shape shape, bool requires_grad) {
    return full(std::move(shape), 0.0, requires_grad);
}

Tensor Tensor::full(Shape shape, double value, bool requires_grad) {
    auto impl = std::make_shared<TensorImpl>();
    impl->data.assign(shape_numel(shape), value);
    impl->shape = std::move(shape);
    impl->requires_grad = requires_grad;
    return Tensor(std::move(impl));
}

Tensor Tensor::from(Shape shape, std::vector<double> values, bool requires_grad) {
    if (shape_numel(shape) != values.size()) {
        throw DimensionError("tensor shape " + shape_str(shape) + " holds " +
                             std::to_string(shape_numel(shape)) + " values, got " +
                             std::to_string(values.size()));
    }
    auto impl = std::make_shared<TensorImpl>();
    impl->shape = std::move(shape);
    impl->data = std::move(values);
    impl->requires_grad = requires_grad;
    return Tensor(std::move(impl));
}

Tensor Tensor::scalar(double value) { return from({1}, {value}); }

const Shape& Tensor::shape() const { return impl_->shape; }

std::size_t Tensor::dim(std::size_t axis) const {
    if (axis >= impl_->shape.size()) {
        throw DimensionError("axis " + std::to_string(axis) + " out of range for shape " +
                             shape_str(impl_->shape));
    }
    return impl_->shape[axis];
}

std::span<double> Tensor::data() { return impl_->data; }
std::span<const double> Tensor::data() const { return impl_->data; }

double Tensor::item() const {
    if (impl_->data.size() != 1) {
        throw ContractError("item() on non-scalar tensor " + shape_str(impl_->shape));
    }
    return impl_->data[0];
}

double Tensor::at(std::size_t i, std::size_t j) const {
    return impl_->data[i * impl_->shape.back() + j];
}

bool Tensor::requires_grad() const { return impl_->requires_grad; }

void Tensor::set_requires_grad(bool value) {
    if (value && impl_->frozen) throw StateError("cannot enable gradients on a frozen tensor");
    impl_->requires_grad = value;
}

void Tensor::freeze() {
    impl_->frozen = true;
    impl_->requires_grad = false;
    impl_->grad.clear();
}

bool Tensor::frozen() const { return impl_->frozen; }

bool Tensor::has_grad() const { return !impl_->grad.empty(); }

std::span<const double> Tensor::grad() const { return impl_->grad; }

std::span<double> Tensor::mutable_grad() {
    if (impl_->grad.empty()) impl_->grad.assign(impl_->data.size(), 0.0);
    return impl_->grad;
}

void Tensor::zero_grad() {
    if (!impl_->grad.empty()) std::fill(impl_->grad.begin(), impl_->grad.end(), 0.0);
}

void Tensor::clear_grad() { impl_->grad.clear(); }

Tensor Tensor::clone() const {
    auto impl = std::make_shared<TensorImpl>();
    impl->shape = impl_->shape;
    impl->data = impl_->data;
    return Tensor(std::move(impl));
}

Tensor Tensor::detach() const { return clone(); }

GradTape& GradTape::current() {
    thread_local GradTape tape;
    return tape;
}

void GradTape::clear() {
    for (auto& node : nodes_) node.output->tape_index = -1;
    nodes_.clear();
}

double* grad_sink(const std::shared_ptr<TensorImpl>& impl) {
    if (!impl->requires_grad || impl->frozen) return nullptr;
    if (impl->grad.empty()) impl->grad.assign(impl->data.size(), 0.0);
    return impl->grad.data();
}

Tensor record_op(Shape shape, std::vector<double> values, const std::vector<Tensor>& inputs,
                 std::function<void(const std::vector<double>&)> backward_fn) {
    auto impl = std::make_shared<TensorImpl>();
    impl->shape = std::move(shape);
    impl->data = std::move(values);

    auto& tape = GradTape::current();
    const bool needs_grad =
        tape.recording() && std::any_of(inputs.begin(), inputs.end(),
                                        [](const Tensor& t) { return t.requires_grad(); });
    if (needs_grad) {
        impl->requires_grad = true;
        impl->tape_index = static_cast<long>(tape.nodes_.size());
        GradTape::Node node;
        node.inputs.reserve(inputs.size());
        for (const auto& t : inputs) node.inputs.push_back(t.impl_ptr());
        node.output = impl;
        node.backward = std::move(backward_fn);
        tape.nodes_.push_back(std::move(node));
    }
    return Tensor(std::move(impl));
}

void backward(const Tensor& loss) {
    if (!loss.defined() || loss.numel() != 1) {
        throw ContractError("backward() needs a scalar loss, got shape " +
                            (loss.defined() ? shape_str(loss.shape()) : std::string("<undefined>")));
    }
    auto& tape = GradTape::current();
    const long start = loss.impl()->tape_index;
    if (start < 0 || start >= static_cast<long>(tape.nodes_.size()) ||
        tape.nodes_[static_cast<std::size_t>(start)].output.get() != loss.impl()) {
        throw ContractError("backward() loss is not on the active gradient tape");
    }
    loss.impl()->grad.assign(1, 1.0);
    for (long i = start; i >= 0; --i) {
        auto& node = tape.nodes_[static_cast<std::size_t>(i)];
        if (node.output->grad.empty()) continue;  // not an ancestor of the loss
        node.backward(node.output->grad);
    }
    tape.clear();
}

}  // namespace lune
