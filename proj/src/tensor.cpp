#include "mscnet/tensor.hpp"

#include <cmath>
#include <sstream>

namespace mscnet {

size_t shape_numel(const Shape& shape) {
    size_t n = 1;
    for (size_t e : shape) n *= e;
    return n;
}

std::string shape_str(const Shape& shape) {
    std::ostringstream os;
    os << "[";
    for (size_t i = 0; i < shape.size(); ++i) {
        if (i) os << ",";
        os << shape[i];
    }
    os << "]";
    return os.str();
}

Tensor::Tensor(Shape shape, real fill, bool requires_grad) {
    if (shape.empty()) throw InvalidArgument("Tensor: empty shape");
    for (size_t e : shape) {
        if (e == 0) throw InvalidArgument("Tensor: zero extent in shape " + shape_str(shape));
    }
    d_ = std::make_shared<TensorData>();
    d_->shape = std::move(shape);
    d_->data.assign(shape_numel(d_->shape), fill);
    d_->requires_grad = requires_grad;
}

Tensor Tensor::scalar(real v) {
    Tensor t(Shape{1}, v);
    return t;
}

Tensor Tensor::from_data(Shape shape, std::vector<real> values) {
    Tensor t(shape);
    if (values.size() != t.numel()) {
        throw InvalidArgument("Tensor::from_data: " + std::to_string(values.size()) +
                              " values for shape " + shape_str(shape));
    }
    t.d_->data = std::move(values);
    return t;
}

Tensor Tensor::zeros_like(const Tensor& t) { return Tensor(t.shape()); }

real Tensor::item() const {
    if (numel() != 1) throw InvalidArgument("Tensor::item: tensor has " + std::to_string(numel()) + " elements");
    return d_->data[0];
}

void Tensor::ensure_grad() {
    if (d_->grad.empty()) d_->grad.assign(d_->data.size(), real(0));
}

void Tensor::zero_grad() { d_->grad.assign(d_->data.size(), real(0)); }

Tensor Tensor::grad_tensor() const {
    Tensor g(d_->shape);
    if (!d_->grad.empty()) g.d_->data = d_->grad;
    return g;
}

Tensor Tensor::clone() const {
    Tensor t(d_->shape);
    t.d_->data = d_->data;
    t.d_->requires_grad = d_->requires_grad;
    return t;
}

void check_finite(const Tensor& t, const char* op_name) {
    if (!finite_checks_enabled()) return;
    for (real v : t.values()) {
        if (!std::isfinite(v)) {
            throw NumericalError(std::string(op_name) + ": non-finite value in output");
        }
    }
}

namespace {
// Innermost entry is the active tape; nullptr entries disable taping.
thread_local std::vector<Tape*> g_tape_stack;
}  // namespace

Tape* Tape::current() {
    if (g_tape_stack.empty()) return nullptr;
    return g_tape_stack.back();
}

void Tape::run_backward() {
    for (auto it = steps_.rbegin(); it != steps_.rend(); ++it) (*it)();
    consumed_ = true;
}

TapeScope::TapeScope() { g_tape_stack.push_back(&tape_); }

TapeScope::~TapeScope() { g_tape_stack.pop_back(); }

NoGradGuard::NoGradGuard() { g_tape_stack.push_back(nullptr); }

NoGradGuard::~NoGradGuard() { g_tape_stack.pop_back(); }

void backward(const Tensor& loss) {
    Tape* tape = Tape::current();
    if (!tape) throw StateError("backward: no active tape");
    if (tape->consumed()) throw StateError("backward: tape already consumed");
    if (loss.numel() != 1) {
        throw InvalidArgument("backward: loss must be scalar, got shape " + shape_str(loss.shape()));
    }
    if (!loss.tracked()) throw StateError("backward: loss is not on the tape");
    Tensor seed = loss;
    seed.ensure_grad();
    seed.grad()[0] = real(1);
    tape->run_backward();
}

}  // namespace mscnet
