#include "sattag/tensor.hpp"

#include "sattag/errors.hpp"

#include <sstream>

namespace sattag {

namespace {
thread_local Tape* g_active_tape = nullptr;
}

std::size_t numel(const Shape& shape) {
    std::size_t n = 1;
    for (std::size_t d : shape) n *= d;
    return n;
}

std::string to_string(const Shape& shape) {
    std::ostringstream os;
    os << '[';
    for (std::size_t i = 0; i < shape.size(); ++i) {
        if (i) os << 'x';
        os << shape[i];
    }
    os << ']';
    return os.str();
}

std::vector<double>& TensorStorage::ensure_grad() {
    if (grad.empty()) grad.assign(data.size(), 0.0);
    return grad;
}

namespace {
void check_shape(const Shape& shape) {
    for (std::size_t d : shape) {
        if (d == 0) throw DimensionError("tensor shape " + to_string(shape) + " has a zero extent");
    }
}
}  // namespace

Tensor::Tensor(Shape shape, double fill) : storage_(std::make_shared<TensorStorage>()) {
    check_shape(shape);
    storage_->data.assign(numel(shape), fill);
    storage_->shape = std::move(shape);
}

Tensor::Tensor(Shape shape, std::vector<double> data) : storage_(std::make_shared<TensorStorage>()) {
    check_shape(shape);
    if (data.size() != numel(shape)) {
        throw DimensionError("data length " + std::to_string(data.size()) + " does not match shape " +
                             to_string(shape));
    }
    storage_->shape = std::move(shape);
    storage_->data = std::move(data);
}

Tensor Tensor::scalar(double value) { return Tensor(Shape{1}, std::vector<double>{value}); }

double Tensor::item() const {
    if (size() != 1) throw ContractError("item() on tensor of shape " + to_string(shape()));
    return storage_->data[0];
}

Tensor& Tensor::set_requires_grad(bool value) {
    storage_->requires_grad = value;
    return *this;
}

Tensor Tensor::clone() const {
    Tensor out(shape(), std::vector<double>(storage_->data));
    out.storage_->requires_grad = storage_->requires_grad;
    return out;
}

Tensor Tensor::detach() const { return Tensor(shape(), std::vector<double>(storage_->data)); }

Tape::~Tape() {
    if (g_active_tape == this) g_active_tape = nullptr;
}

void Tape::record(std::vector<std::shared_ptr<TensorStorage>> inputs,
                  std::shared_ptr<TensorStorage> output,
                  BackwardFn backward) {
    output->requires_grad = true;
    entries_.push_back(Entry{std::move(inputs), std::move(output), std::move(backward)});
}

void Tape::backward(const Tensor& loss) {
    if (!loss.defined() || loss.size() != 1) {
        throw ContractError("backward() requires a scalar loss, got shape " +
                            (loss.defined() ? to_string(loss.shape()) : std::string("<undefined>")));
    }
    auto& seed = loss.storage()->ensure_grad();
    seed[0] += 1.0;
    for (auto it = entries_.rbegin(); it != entries_.rend(); ++it) {
        if (it->output->grad.empty()) continue;
        it->backward();
    }
    entries_.clear();
}

Tape* Tape::active() { return g_active_tape; }

Tape::Scope::Scope(Tape& tape) : previous_(g_active_tape) { g_active_tape = &tape; }

Tape::Scope::~Scope() { g_active_tape = previous_; }

void backward(const Tensor& loss, Tape& tape) { tape.backward(loss); }

}  // namespace sattag
