#pragma once

#include <cstddef>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <vector>

namespace lune {

using Shape = std::vector<std::size_t>;

std::size_t shape_numel(const Shape& shape);
std::string shape_str(const Shape& shape);

struct TensorImpl {
    Shape shape;
    std::vector<double> data;
    std::vector<double> grad;  // empty until a gradient flows in
    bool requires_grad = false;
    bool frozen = false;
    // Index of the producing node on the active tape, or -1 for leaves.
    long tape_index = -1;
};

// Shared handle to a dense row-major float64 array.
//
// Copying a Tensor aliases the same storage (parameters are held by handle in
// models and optimizers); use clone() for an independent copy.
class Tensor {
public:
    Tensor() = default;

    static Tensor zeros(Shape shape, bool requires_grad = false);
    static Tensor full(Shape shape, double value, bool requires_grad = false);
    static Tensor from(Shape shape, std::vector<double> values, bool requires_grad = false);
    static Tensor scalar(double value);

    bool defined() const noexcept { return impl_ != nullptr; }
    const Shape& shape() const;
    std::size_t dim(std::size_t axis) const;
    std::size_t rank() const { return shape().size(); }
    std::size_t numel() const { return data().size(); }

    std::span<double> data();
    std::span<const double> data() const;
    double item() const;
    double at(std::size_t i, std::size_t j) const;

    bool requires_grad() const;
    void set_requires_grad(bool value);

    // A frozen tensor never receives gradients and refuses optimizer updates.
    void freeze();
    bool frozen() const;

    bool has_grad() const;
    std::span<const double> grad() const;
    std::span<double> mutable_grad();  // allocates a zero buffer on first use
    void zero_grad();
    void clear_grad();

    Tensor clone() const;   // deep copy of data; no grad, no tape history
    Tensor detach() const;  // alias of clone() kept for readability at call sites

    TensorImpl* impl() const noexcept { return impl_.get(); }
    const std::shared_ptr<TensorImpl>& impl_ptr() const noexcept { return impl_; }

private:
    explicit Tensor(std::shared_ptr<TensorImpl> impl) : impl_(std::move(impl)) {}
    std::shared_ptr<TensorImpl> impl_;

    friend Tensor record_op(Shape, std::vector<double>, const std::vector<Tensor>&,
                            std::function<void(const std::vector<double>&)>);
};

// Ordered record of differentiable operations executed on this thread.
// Nodes are appended in execution order, so parents always precede children.
class GradTape {
public:
    struct Node {
        std::vector<std::shared_ptr<TensorImpl>> inputs;
        std::shared_ptr<TensorImpl> output;
        std::function<void(const std::vector<double>&)> backward;
    };

    static GradTape& current();

    bool recording() const noexcept { return enabled_ && no_grad_depth_ == 0; }
    std::size_t size() const noexcept { return nodes_.size(); }
    const std::vector<Node>& nodes() const noexcept { return nodes_; }

    void clear();

private:
    friend class NoGradGuard;
    friend Tensor record_op(Shape, std::vector<double>, const std::vector<Tensor>&,
                            std::function<void(const std::vector<double>&)>);
    friend void backward(const Tensor& loss);

    std::vector<Node> nodes_;
    bool enabled_ = true;
    int no_grad_depth_ = 0;
};

// Disables recording for the guard's lifetime (evaluation, decoding).
class NoGradGuard {
public:
    NoGradGuard() { ++GradTape::current().no_grad_depth_; }
    ~NoGradGuard() { --GradTape::current().no_grad_depth_; }
    NoGradGuard(const NoGradGuard&) = delete;
    NoGradGuard& operator=(const NoGradGuard&) = delete;
};

// Builds the output of a differentiable op. When any input requires grad and
// recording is on, the op is appended to the tape with `backward`, which
// receives the output gradient and accumulates into the inputs.
Tensor record_op(Shape shape, std::vector<double> values, const std::vector<Tensor>& inputs,
                 std::function<void(const std::vector<double>&)> backward);

// Gradient buffer of an op input, allocated on first use. Returns nullptr when
// the input does not take gradients.
double* grad_sink(const std::shared_ptr<TensorImpl>& impl);

// Reverse-mode sweep from a scalar loss. Populates grads of every
// requires_grad ancestor, then clears the tape.
void backward(const Tensor& loss);

}  // namespace lune
