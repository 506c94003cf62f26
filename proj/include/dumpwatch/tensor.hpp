#pragma once

#include <cstddef>
#include <functional>
#include <memory>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace dumpwatch {

using Shape = std::vector<std::size_t>;

std::size_t shape_numel(const Shape& shape);
std::string shape_string(const Shape& shape);

/**
 * Dense row-major array taking part in reverse-mode differentiation.
 *
 * A Tensor is a handle: copies share the same storage, so a gradient written
 * through one handle is visible through all of them. Use clone() for a deep
 * copy.
 */
template <typename T>
class BasicTensor {
public:
    BasicTensor() = default;
    explicit BasicTensor(Shape shape, T fill = T(0), bool requires_grad = false);
    BasicTensor(Shape shape, std::vector<T> values, bool requires_grad = false);

    static BasicTensor scalar(T value, bool requires_grad = false) {
        return BasicTensor(Shape{1}, std::vector<T>{value}, requires_grad);
    }

    bool defined() const { return static_cast<bool>(impl_); }
    const Shape& shape() const { return impl().shape; }
    std::size_t dim(std::size_t i) const { return impl().shape.at(i); }
    std::size_t rank() const { return impl().shape.size(); }
    std::size_t numel() const { return impl().values.size(); }

    std::span<T> values() { return impl().values; }
    std::span<const T> values() const { return impl().values; }
    T& operator[](std::size_t i) { return impl().values[i]; }
    const T& operator[](std::size_t i) const { return impl().values[i]; }
    T item() const;

    bool requires_grad() const { return impl().requires_grad; }
    void set_requires_grad(bool flag) { impl().requires_grad = flag; }

    bool has_grad() const { return !impl().grad.empty(); }
    /// Gradient buffer, allocated as zeros on first use. Like the values, it
    /// belongs to the shared storage, so a const handle can still write it.
    std::span<T> grad() const;
    void zero_grad() const;
    void clear_grad() const;

    BasicTensor clone() const;
    bool same_storage(const BasicTensor& other) const { return impl_ == other.impl_; }

private:
    struct Storage {
        Shape shape;
        std::vector<T> values;
        std::vector<T> grad;
        bool requires_grad = false;
    };

    Storage& impl();
    const Storage& impl() const;

    std::shared_ptr<Storage> impl_;
};

using Tensor = BasicTensor<float>;
using Tensor64 = BasicTensor<double>;

/**
 * Ordered record of the differentiable operations executed since the graph
 * was created. Nodes are appended in execution order, which is a valid
 * topological order for the backward sweep.
 *
 * An inference-mode graph records nothing; forward code can be shared between
 * training and prediction without paying for the tape.
 */
template <typename T>
class Graph {
public:
    enum class Mode { kRecord, kInference };

    struct Node {
        std::string op;
        std::vector<BasicTensor<T>> inputs;
        BasicTensor<T> output;
        std::function<void()> backward;
    };

    explicit Graph(Mode mode = Mode::kRecord) : mode_(mode) {}

    bool recording() const { return mode_ == Mode::kRecord; }

    /// True when any input needs a gradient and the graph is recording.
    bool wants(std::initializer_list<const BasicTensor<T>*> inputs) const;

    void record(std::string op, std::vector<BasicTensor<T>> inputs, BasicTensor<T> output,
                std::function<void()> backward);

    const std::vector<Node>& nodes() const { return nodes_; }
    std::size_t size() const { return nodes_.size(); }
    void clear() { nodes_.clear(); }

private:
    Mode mode_;
    std::vector<Node> nodes_;
};

/**
 * Populates gradients of every requires_grad tensor reachable from `loss`.
 * Intermediate gradients are recomputed from scratch; leaf gradients
 * accumulate across calls until zero_grad() or clear_grad().
 */
template <typename T>
void backward(Graph<T>& graph, const BasicTensor<T>& loss);

template <typename T>
void zero_grads(std::span<BasicTensor<T>> tensors);

}  // namespace dumpwatch
