#pragma once

#include <cstddef>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <vector>

namespace sattag {

using Shape = std::vector<std::size_t>;

std::size_t numel(const Shape& shape);
std::string to_string(const Shape& shape);

struct TensorStorage {
    Shape shape;
    std::vector<double> data;
    // Empty until the first gradient is accumulated into this tensor.
    std::vector<double> grad;
    bool requires_grad = false;

    std::vector<double>& ensure_grad();
};

// Dense row-major float64 array. Copies share storage; use clone() for a
// deep copy.
class Tensor {
public:
    Tensor() = default;
    explicit Tensor(Shape shape, double fill = 0.0);
    Tensor(Shape shape, std::vector<double> data);

    static Tensor scalar(double value);

    bool defined() const { return static_cast<bool>(storage_); }

    const Shape& shape() const { return storage_->shape; }
    std::size_t rank() const { return storage_->shape.size(); }
    std::size_t dim(std::size_t axis) const { return storage_->shape.at(axis); }
    std::size_t size() const { return storage_->data.size(); }

    std::span<double> data() { return storage_->data; }
    std::span<const double> data() const { return storage_->data; }
    double item() const;

    bool requires_grad() const { return storage_->requires_grad; }
    Tensor& set_requires_grad(bool value);

    bool has_grad() const { return !storage_->grad.empty(); }
    std::span<const double> grad() const { return storage_->grad; }
    std::span<double> grad_mut() { return storage_->ensure_grad(); }
    void zero_grad() { storage_->grad.clear(); }

    Tensor clone() const;
    Tensor detach() const;

    const std::shared_ptr<TensorStorage>& storage() const { return storage_; }

private:
    std::shared_ptr<TensorStorage> storage_;
};

// Records differentiable operations in execution order. Operations record
// into the tape made active by a Tape::Scope, and only when at least one
// input requires a gradient.
class Tape {
public:
    using BackwardFn = std::function<void()>;

    Tape() = default;
    Tape(const Tape&) = delete;
    Tape& operator=(const Tape&) = delete;
    ~Tape();

    void record(std::vector<std::shared_ptr<TensorStorage>> inputs,
                std::shared_ptr<TensorStorage> output,
                BackwardFn backward);

    std::size_t size() const { return entries_.size(); }
    void clear() { entries_.clear(); }

    // Runs every recorded backward rule in reverse order, then clears.
    void backward(const Tensor& loss);

    static Tape* active();

    class Scope {
    public:
        explicit Scope(Tape& tape);
        Scope(const Scope&) = delete;
        Scope& operator=(const Scope&) = delete;
        ~Scope();

    private:
        Tape* previous_;
    };

private:
    struct Entry {
        std::vector<std::shared_ptr<TensorStorage>> inputs;
        std::shared_ptr<TensorStorage> output;
        BackwardFn backward;
    };
    std::vector<Entry> entries_;
};

// Populates dLoss/dLeaf for every requires_grad tensor reachable on the
// tape. Gradients accumulate into existing grad buffers.
void backward(const Tensor& loss, Tape& tape);

}  // namespace sattag
