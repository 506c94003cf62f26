#include "dumpwatch/tensor.hpp"

#include <algorithm>
#include <sstream>
#include <unordered_set>

namespace dumpwatch {

std::size_t shape_numel(const Shape& shape) {
    std::size_t n = 1;
    for (auto d : shape) n *= d;
    return n;
}

std::string shape_string(const Shape& shape) {
    std::ostringstream os;
    os << '[';
    for (std::size_t i = 0; i < shape.size(); ++i) os << (i ? "," : "") << shape[i];
    os << ']';
    return os.str();
}

template <typename T>
BasicTensor<T>::BasicTensor(Shape shape, T fill, bool requires_grad)
    : impl_(std::make_shared<Storage>()) {
    impl_->values.assign(shape_numel(shape), fill);
    impl_->shape = std::move(shape);
    impl_->requires_grad = requires_grad;
}

template <typename T>
BasicTensor<T>::BasicTensor(Shape shape, std::vector<T> values, bool requires_grad)
    : impl_(std::make_shared<Storage>()) {
    if (values.size() != shape_numel(shape)) {
        throw std::invalid_argument("tensor: " + std::to_string(values.size()) +
                                    " values do not fill shape " + shape_string(shape));
    }
    impl_->shape = std::move(shape);
    impl_->values = std::move(values);
    impl_->requires_grad = requires_grad;
}

template <typename T>
typename BasicTensor<T>::Storage& BasicTensor<T>::impl() {
    if (!impl_) throw std::logic_error("tensor: use of undefined tensor");
    return *impl_;
}

template <typename T>
const typename BasicTensor<T>::Storage& BasicTensor<T>::impl() const {
    if (!impl_) throw std::logic_error("tensor: use of undefined tensor");
    return *impl_;
}

template <typename T>
T BasicTensor<T>::item() const {
    if (numel() != 1) throw std::invalid_argument("tensor: item() on non-scalar " + shape_string(shape()));
    return impl().values[0];
}

template <typename T>
std::span<T> BasicTensor<T>::grad() const {
    if (!impl_) throw std::logic_error("tensor: use of undefined tensor");
    auto& s = *impl_;
    if (s.grad.empty()) s.grad.assign(s.values.size(), T(0));
    return s.grad;
}

template <typename T>
void BasicTensor<T>::zero_grad() const {
    if (!impl_) throw std::logic_error("tensor: use of undefined tensor");
    impl_->grad.assign(impl_->values.size(), T(0));
}

template <typename T>
void BasicTensor<T>::clear_grad() const {
    if (!impl_) throw std::logic_error("tensor: use of undefined tensor");
    impl_->grad.clear();
}

template <typename T>
BasicTensor<T> BasicTensor<T>::clone() const {
    BasicTensor out(shape(), std::vector<T>(values().begin(), values().end()), requires_grad());
    if (has_grad()) out.impl_->grad = impl().grad;
    return out;
}

template <typename T>
bool Graph<T>::wants(std::initializer_list<const BasicTensor<T>*> inputs) const {
    if (!recording()) return false;
    return std::any_of(inputs.begin(), inputs.end(),
                       [](const BasicTensor<T>* t) { return t->requires_grad(); });
}

template <typename T>
void Graph<T>::record(std::string op, std::vector<BasicTensor<T>> inputs, BasicTensor<T> output,
                      std::function<void()> backward_fn) {
    output.set_requires_grad(true);
    nodes_.push_back(Node{std::move(op), std::move(inputs), std::move(output), std::move(backward_fn)});
}

template <typename T>
void backward(Graph<T>& graph, const BasicTensor<T>& loss) {
    if (!loss.defined() || loss.numel() != 1) {
        throw std::invalid_argument("backward: loss must be a scalar tensor");
    }
    const auto& nodes = graph.nodes();
    auto producer = std::find_if(nodes.rbegin(), nodes.rend(),
                                 [&](const auto& n) { return n.output.same_storage(loss); });
    if (producer == nodes.rend()) {
        throw std::invalid_argument("backward: loss was not produced by this graph");
    }
    // Intermediates start from zero on every sweep; only leaves accumulate.
    for (const auto& node : nodes) node.output.zero_grad();
    loss.grad()[0] = T(1);
    const auto last = static_cast<std::size_t>(nodes.rend() - producer);
    for (std::size_t i = last; i-- > 0;) nodes[i].backward();
}

template <typename T>
void zero_grads(std::span<BasicTensor<T>> tensors) {
    for (auto& t : tensors) t.zero_grad();
}

template class BasicTensor<float>;
template class BasicTensor<double>;
template class Graph<float>;
template class Graph<double>;
template void backward(Graph<float>&, const BasicTensor<float>&);
template void backward(Graph<double>&, const BasicTensor<double>&);
template void zero_grads(std::span<BasicTensor<float>>);
template void zero_grads(std::span<BasicTensor<double>>);

}  // namespace dumpwatch
