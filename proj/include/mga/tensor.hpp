#pragma once

#include <cstddef>
#include <functional>
#include <initializer_list>
#include <memory>
#include <span>
#include <string>
#include <vector>

namespace mga {

using Shape = std::vector<std::size_t>;

std::size_t shape_numel(const Shape& shape);
std::string shape_str(const Shape& shape);

namespace detail {

/// One value in the computation graph. Leaves own parameters or inputs;
/// interior nodes remember their parents and how to push gradients back.
struct Node {
    Shape shape;
    std::vector<double> value;
    std::vector<double> grad; // empty until first accumulation
    bool requires_grad = false;
    const char* op = "leaf";
    std::vector<std::shared_ptr<Node>> parents;
    std::function<void(Node& self)> backward;

    std::vector<double>& ensure_grad() {
        if (grad.empty()) {
            grad.assign(value.size(), 0.0);
        }
        return grad;
    }
};

} // namespace detail

/// Dense row-major float64 tensor with reverse-mode differentiation.
///
/// A Tensor is a shared handle: copies alias the same node. Values are
/// immutable once an operation has produced them; only leaves expose
/// mutable storage (for parameter updates and test fixtures).
class Tensor {
public:
    Tensor() = default;

    static Tensor zeros(Shape shape, bool requires_grad = false);
    static Tensor full(Shape shape, double value, bool requires_grad = false);
    static Tensor from(Shape shape, std::vector<double> values, bool requires_grad = false);
    static Tensor scalar(double value, bool requires_grad = false);

    bool defined() const { return node_ != nullptr; }
    const Shape& shape() const;
    std::size_t rank() const { return shape().size(); }
    std::size_t dim(std::size_t axis) const;
    std::size_t numel() const;

    std::span<const double> data() const;
    /// Writable view of a leaf's values. Throws for interior nodes.
    std::span<double> mutable_data();
    std::vector<double> to_vector() const;

    double item() const;
    double at(std::initializer_list<std::size_t> index) const;

    bool requires_grad() const;
    bool has_grad() const;
    /// Gradient accumulated by backward(); zeros if nothing was accumulated.
    std::vector<double> grad() const;
    std::span<double> mutable_grad();
    void zero_grad();

    /// Reverse sweep from this scalar, accumulating into every upstream
    /// node that requires a gradient.
    void backward() const;

    /// Leaf copy of the current value, cut from the graph.
    Tensor detach(bool requires_grad = false) const;

    const char* op_name() const;
    detail::Node* node() const { return node_.get(); }
    const std::shared_ptr<detail::Node>& node_ptr() const { return node_; }

    explicit Tensor(std::shared_ptr<detail::Node> node) : node_(std::move(node)) {}

private:
    std::shared_ptr<detail::Node> node_;
};

/// While alive, new operations on this thread do not record graph edges.
class NoGradGuard {
public:
    NoGradGuard();
    ~NoGradGuard();
    NoGradGuard(const NoGradGuard&) = delete;
    NoGradGuard& operator=(const NoGradGuard&) = delete;

private:
    bool previous_;
};

bool grad_enabled();

namespace detail {

using BackwardFn = std::function<void(Node& self)>;

/// Builds an operation result. Validates that every value is finite and
/// attaches `backward` only when some parent requires a gradient.
Tensor make_result(const char* op, Shape shape, std::vector<double> value,
                   std::vector<Tensor> parents, BackwardFn backward);

} // namespace detail

} // namespace mga
