#pragma once

// Dense tensors with reverse-mode automatic differentiation.
//
// A Tensor is a shared handle to a graph node. Every differentiable op
// creates a new node that holds its forward value, its inputs, and a
// backward closure. Calling backward() linearizes the reachable nodes into
// a Tape ordered by creation sequence and replays it in reverse.

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <functional>
#include <memory>
#include <span>
#include <sstream>
#include <stdexcept>
#include <string>
#include <string_view>
#include <unordered_set>
#include <utility>
#include <vector>

namespace mebm {

using Shape = std::vector<std::size_t>;

inline std::size_t numel(const Shape& shape) {
    std::size_t n = 1;
    for (auto extent : shape) {
        n *= extent;
    }
    return n;
}

inline std::string to_string(const Shape& shape) {
    std::ostringstream out;
    out << '(';
    for (std::size_t i = 0; i < shape.size(); ++i) {
        out << (i ? ", " : "") << shape[i];
    }
    out << ')';
    return out.str();
}

/// Raised when a forward op produces NaN or Inf from its inputs.
class NonFiniteError : public std::domain_error {
public:
    using std::domain_error::domain_error;
};

template <class T>
struct Node {
    Shape shape;
    std::vector<T> value;
    std::vector<T> grad;  // empty until something accumulates into it
    bool requires_grad = false;
    bool is_leaf = true;
    std::uint64_t sequence = 0;
    std::string op = "leaf";
    std::vector<std::shared_ptr<Node>> inputs;
    std::function<void(Node&)> backward;

    T* grad_buffer() {
        if (grad.size() != value.size()) {
            grad.assign(value.size(), T{0});
        }
        return grad.data();
    }

    /// Gradient buffer of input i, or nullptr when that input is constant.
    T* input_grad(std::size_t i) {
        auto& in = inputs.at(i);
        return in->requires_grad ? in->grad_buffer() : nullptr;
    }
};

namespace detail {
inline std::uint64_t next_sequence() {
    static std::atomic<std::uint64_t> counter{0};
    return counter.fetch_add(1, std::memory_order_relaxed);
}
}  // namespace detail

template <class T>
class Tensor {
public:
    using value_type = T;
    using NodePtr = std::shared_ptr<Node<T>>;

    Tensor() = default;
    explicit Tensor(NodePtr node) : node_(std::move(node)) {}

    static Tensor from(Shape shape, std::vector<T> values, bool requires_grad = false) {
        if (numel(shape) != values.size()) {
            throw std::invalid_argument("Tensor::from: shape " + to_string(shape) + " holds " +
                                        std::to_string(numel(shape)) + " values, got " +
                                        std::to_string(values.size()));
        }
        for (auto extent : shape) {
            if (extent == 0) {
                throw std::invalid_argument("Tensor::from: zero extent in " + to_string(shape));
            }
        }
        auto node = std::make_shared<Node<T>>();
        node->shape = std::move(shape);
        node->value = std::move(values);
        node->requires_grad = requires_grad;
        node->sequence = detail::next_sequence();
        return Tensor(std::move(node));
    }

    static Tensor zeros(Shape shape, bool requires_grad = false) {
        const auto n = numel(shape);
        return from(std::move(shape), std::vector<T>(n, T{0}), requires_grad);
    }

    static Tensor full(Shape shape, T fill, bool requires_grad = false) {
        const auto n = numel(shape);
        return from(std::move(shape), std::vector<T>(n, fill), requires_grad);
    }

    static Tensor scalar(T v, bool requires_grad = false) {
        return from(Shape{}, std::vector<T>{v}, requires_grad);
    }

    bool defined() const noexcept { return static_cast<bool>(node_); }
    const Shape& shape() const { return node_->shape; }
    std::size_t rank() const { return node_->shape.size(); }
    std::size_t extent(std::size_t axis) const { return node_->shape.at(axis); }
    std::size_t size() const { return node_->value.size(); }
    std::span<const T> data() const { return node_->value; }
    T operator[](std::size_t i) const { return node_->value[i]; }
    bool requires_grad() const { return node_->requires_grad; }
    bool is_leaf() const { return node_->is_leaf; }
    const std::string& op() const { return node_->op; }

    T item() const {
        if (size() != 1) {
            throw std::invalid_argument("item() on tensor of shape " + to_string(shape()));
        }
        return node_->value[0];
    }

    bool has_grad() const { return !node_->grad.empty(); }
    std::span<const T> grad() const { return node_->grad; }

    /// Gradient as a same-shape constant tensor (zeros when never touched).
    Tensor grad_tensor() const {
        if (has_grad()) {
            return from(shape(), node_->grad);
        }
        return zeros(shape());
    }

    void zero_grad() { std::fill(node_->grad.begin(), node_->grad.end(), T{0}); }

    /// Writable values; only leaves may be mutated (parameters, inputs).
    std::span<T> mutable_data() {
        if (!node_->is_leaf) {
            throw std::logic_error("mutable_data() on non-leaf tensor produced by " + node_->op);
        }
        return node_->value;
    }

    std::span<T> mutable_grad() {
        node_->grad_buffer();
        return node_->grad;
    }

    void set_requires_grad(bool flag) {
        if (!node_->is_leaf) {
            throw std::logic_error("set_requires_grad() on non-leaf tensor");
        }
        node_->requires_grad = flag;
    }

    /// Constant leaf holding a copy of the values.
    Tensor detach() const { return from(shape(), node_->value); }

    Node<T>& node() const { return *node_; }
    const NodePtr& node_ptr() const { return node_; }

private:
    NodePtr node_;
};

template <class T>
void check_finite(std::string_view op, std::span<const T> values) {
    for (const T v : values) {
        if (!std::isfinite(v)) {
            throw NonFiniteError(std::string(op) + ": non-finite value in output");
        }
    }
}

/// Builds the output node of a differentiable op.
///
/// The backward closure receives the output node; it reads node.grad and
/// accumulates into node.input_grad(i). Inputs and closure are dropped
/// when no input requires a gradient.
template <class T>
Tensor<T> make_result(std::string_view op, Shape shape, std::vector<T> values,
                      std::vector<Tensor<T>> inputs, std::function<void(Node<T>&)> backward) {
    check_finite<T>(op, values);
    auto node = std::make_shared<Node<T>>();
    node->shape = std::move(shape);
    node->value = std::move(values);
    node->is_leaf = false;
    node->op = std::string(op);
    node->sequence = detail::next_sequence();
    for (const auto& in : inputs) {
        if (in.defined() && in.requires_grad()) {
            node->requires_grad = true;
        }
    }
    if (node->requires_grad) {
        node->inputs.reserve(inputs.size());
        for (auto& in : inputs) {
            node->inputs.push_back(in.node_ptr());
        }
        node->backward = std::move(backward);
    }
    return Tensor<T>(std::move(node));
}

/// Reverse-execution-order record of the ops reachable from a root.
template <class T>
class Tape {
public:
    static Tape record(const Tensor<T>& root) {
        Tape tape;
        if (!root.defined() || !root.requires_grad()) {
            return tape;
        }
        std::vector<Node<T>*> stack{&root.node()};
        std::unordered_set<Node<T>*> seen{&root.node()};
        while (!stack.empty()) {
            Node<T>* node = stack.back();
            stack.pop_back();
            if (node->is_leaf) {
                tape.leaves_.push_back(node);
                continue;
            }
            tape.ops_.push_back(node);
            for (auto& in : node->inputs) {
                if (in && in->requires_grad && seen.insert(in.get()).second) {
                    stack.push_back(in.get());
                }
            }
        }
        auto later_first = [](const Node<T>* a, const Node<T>* b) {
            return a->sequence > b->sequence;
        };
        std::sort(tape.ops_.begin(), tape.ops_.end(), later_first);
        std::sort(tape.leaves_.begin(), tape.leaves_.end(), later_first);
        return tape;
    }

    /// Non-leaf nodes, latest first.
    const std::vector<Node<T>*>& operations() const { return ops_; }
    /// requires_grad leaves reachable from the root.
    const std::vector<Node<T>*>& leaves() const { return leaves_; }

    void replay() const {
        for (Node<T>* node : ops_) {
            if (node->backward && !node->grad.empty()) {
                node->backward(*node);
            }
            std::vector<T>().swap(node->grad);
        }
    }

private:
    std::vector<Node<T>*> ops_;
    std::vector<Node<T>*> leaves_;
};

/// Accumulates d(loss)/d(leaf) into every requires_grad leaf.
///
/// Leaf gradients add up across calls until zero_grad(); intermediate
/// gradients are rebuilt from scratch each call.
template <class T>
void backward(const Tensor<T>& loss) {
    if (!loss.defined() || loss.size() != 1) {
        throw std::invalid_argument("backward: loss must be a scalar, got shape " +
                                    (loss.defined() ? to_string(loss.shape()) : "<undefined>"));
    }
    if (!loss.requires_grad()) {
        throw std::invalid_argument("backward: loss is not connected to any requires_grad leaf");
    }
    const auto tape = Tape<T>::record(loss);
    for (Node<T>* node : tape.operations()) {
        std::vector<T>().swap(node->grad);
    }
    loss.node().grad_buffer()[0] += T{1};
    tape.replay();
}

}  // namespace mebm
