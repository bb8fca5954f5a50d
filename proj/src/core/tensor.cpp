#include "core/tensor.hpp"

#include <algorithm>
#include <sstream>

namespace sscm {

std::size_t shape_numel(const Shape& shape)
{
    std::size_t n = 1;
    for (auto e : shape)
        n *= e;
    return n;
}

std::string shape_str(const Shape& shape)
{
    std::ostringstream os;
    os << '[';
    for (std::size_t i = 0; i < shape.size(); ++i)
        os << (i ? "," : "") << shape[i];
    os << ']';
    return os.str();
}

template <typename T>
Tensor<T>::Tensor(Shape shape, std::vector<T> data, bool requires_grad)
    : node_(std::make_shared<TensorNode<T>>())
{
    for (auto e : shape)
        if (e == 0)
            throw ShapeError("tensor extents must be positive, got " + shape_str(shape));
    if (shape_numel(shape) != data.size())
        throw ShapeError("shape " + shape_str(shape) + " does not match " + std::to_string(data.size()) +
                         " elements");
    node_->shape = std::move(shape);
    node_->data = std::move(data);
    node_->requires_grad = requires_grad;
}

template <typename T>
Tensor<T> Tensor<T>::zeros(Shape shape)
{
    auto n = shape_numel(shape);
    return Tensor(std::move(shape), std::vector<T>(n, T(0)));
}

template <typename T>
Tensor<T> Tensor<T>::full(Shape shape, T value)
{
    auto n = shape_numel(shape);
    return Tensor(std::move(shape), std::vector<T>(n, value));
}

template <typename T>
Tensor<T> Tensor<T>::scalar(T value)
{
    return Tensor(Shape{}, std::vector<T>{value});
}

template <typename T>
T Tensor<T>::item() const
{
    if (numel() != 1)
        throw ContractError("item() on tensor of shape " + shape_str(shape()));
    return node_->data[0];
}

template <typename T>
T Tensor<T>::at(std::initializer_list<std::size_t> index) const
{
    if (index.size() != ndim())
        throw ShapeError("index rank mismatch for shape " + shape_str(shape()));
    std::size_t flat = 0;
    std::size_t axis = 0;
    for (auto i : index) {
        if (i >= node_->shape[axis])
            throw ShapeError("index out of range for shape " + shape_str(shape()));
        flat = flat * node_->shape[axis] + i;
        ++axis;
    }
    return node_->data[flat];
}

template <typename T>
Tensor<T>& Tensor<T>::set_requires_grad(bool flag)
{
    node_->requires_grad = flag;
    return *this;
}

template <typename T>
Tensor<T> Tensor<T>::detach() const
{
    return Tensor(node_->shape, node_->data);
}

template <typename T>
void Tape<T>::record(const char* name, std::function<void()> backward)
{
    entries_.push_back({name, std::move(backward)});
}

template <typename T>
std::size_t Tape<T>::count(std::string_view op_name) const
{
    return static_cast<std::size_t>(
        std::count_if(entries_.begin(), entries_.end(), [&](const Entry& e) { return op_name == e.name; }));
}

namespace {
template <typename T>
Tape<T>*& tape_slot()
{
    thread_local Tape<T>* slot = nullptr;
    return slot;
}
} // namespace

template <typename T>
Tape<T>* active_tape()
{
    return tape_slot<T>();
}

template <typename T>
TapeScope<T>::TapeScope(Tape<T>& tape) : previous_(tape_slot<T>())
{
    tape_slot<T>() = &tape;
}

template <typename T>
TapeScope<T>::~TapeScope()
{
    tape_slot<T>() = previous_;
}

template <typename T>
NoGradScope<T>::NoGradScope() : previous_(tape_slot<T>())
{
    tape_slot<T>() = nullptr;
}

template <typename T>
NoGradScope<T>::~NoGradScope()
{
    tape_slot<T>() = previous_;
}

template <typename T>
void backward(const Tensor<T>& loss, const Tape<T>& tape)
{
    if (!loss.defined() || loss.numel() != 1)
        throw ContractError("backward() needs a scalar loss");
    if (!loss.requires_grad())
        throw ContractError("backward() on a loss that does not depend on any tracked tensor");
    loss.node()->ensure_grad()[0] += T(1);
    const auto& entries = tape.entries();
    for (auto it = entries.rbegin(); it != entries.rend(); ++it)
        it->backward();
}

template class Tensor<float>;
template class Tensor<double>;
template class Tape<float>;
template class Tape<double>;
template class TapeScope<float>;
template class TapeScope<double>;
template class NoGradScope<float>;
template class NoGradScope<double>;
template Tape<float>* active_tape<float>();
template Tape<double>* active_tape<double>();
template void backward<float>(const Tensor<float>&, const Tape<float>&);
template void backward<double>(const Tensor<double>&, const Tape<double>&);

} // namespace sscm
