#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "core/errors.hpp"

namespace sscm {

using Shape = std::vector<std::size_t>;

enum class DType : std::uint8_t { f32 = 0, f64 = 1 };

template <typename T>
struct dtype_of;
template <>
struct dtype_of<float> {
    static constexpr DType value = DType::f32;
};
template <>
struct dtype_of<double> {
    static constexpr DType value = DType::f64;
};

std::size_t shape_numel(const Shape& shape);
std::string shape_str(const Shape& shape);

template <typename T>
struct TensorNode {
    Shape shape;
    std::vector<T> data;
    std::vector<T> grad; // empty until a gradient reaches this node
    bool requires_grad = false;

    std::vector<T>& ensure_grad()
    {
        if (grad.empty())
            grad.assign(data.size(), T(0));
        return grad;
    }
};

/// Dense row-major array (last axis fastest) with an optional gradient slot.
///
/// A Tensor is a cheap handle; copies share the same node. Values are treated
/// as immutable once an op has consumed them, except for parameter updates the
/// optimiser performs between steps through mutable_data().
template <typename T>
class Tensor {
public:
    using value_type = T;
    static constexpr DType dtype = dtype_of<T>::value;

    Tensor() = default;
    Tensor(Shape shape, std::vector<T> data, bool requires_grad = false);

    static Tensor zeros(Shape shape);
    static Tensor full(Shape shape, T value);
    static Tensor scalar(T value);

    bool defined() const { return node_ != nullptr; }
    const Shape& shape() const { return node_->shape; }
    std::size_t ndim() const { return node_->shape.size(); }
    std::size_t dim(std::size_t axis) const { return node_->shape.at(axis); }
    std::size_t numel() const { return node_->data.size(); }

    std::span<const T> data() const { return node_->data; }
    std::span<T> mutable_data() { return node_->data; }
    T item() const;
    T at(std::initializer_list<std::size_t> index) const;

    bool requires_grad() const { return node_->requires_grad; }
    Tensor& set_requires_grad(bool flag);
    bool has_grad() const { return !node_->grad.empty(); }
    std::span<const T> grad() const { return node_->grad; }
    void zero_grad() { node_->grad.clear(); }

    /// Fresh tensor with copied data and no gradient tracking.
    Tensor detach() const;

    const std::shared_ptr<TensorNode<T>>& node() const { return node_; }

private:
    std::shared_ptr<TensorNode<T>> node_;
};

/// Ordered record of executed primitive ops. Entries appear in execution
/// order, so walking them backwards visits every op after all of its
/// consumers.
template <typename T>
class Tape {
public:
    struct Entry {
        const char* name;
        std::function<void()> backward;
    };

    void record(const char* name, std::function<void()> backward);
    std::size_t size() const { return entries_.size(); }
    const std::vector<Entry>& entries() const { return entries_; }
    std::size_t count(std::string_view op_name) const;
    bool contains(std::string_view op_name) const { return count(op_name) > 0; }
    void clear() { entries_.clear(); }

private:
    std::vector<Entry> entries_;
};

template <typename T>
Tape<T>* active_tape();

// Makes `tape` the recording target for the current thread.
template <typename T>
class TapeScope {
public:
    explicit TapeScope(Tape<T>& tape);
    ~TapeScope();
    TapeScope(const TapeScope&) = delete;
    TapeScope& operator=(const TapeScope&) = delete;

private:
    Tape<T>* previous_;
};

// Suspends recording for the current thread.
template <typename T>
class NoGradScope {
public:
    NoGradScope();
    ~NoGradScope();
    NoGradScope(const NoGradScope&) = delete;
    NoGradScope& operator=(const NoGradScope&) = delete;

private:
    Tape<T>* previous_;
};

/// Reverse sweep over `tape`, accumulating d(loss)/d(node) into every node
/// that requires a gradient. Throws ContractError unless loss has one element.
template <typename T>
void backward(const Tensor<T>& loss, const Tape<T>& tape);

} // namespace sscm
