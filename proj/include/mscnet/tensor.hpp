#pragma once

#include <functional>
#include <memory>
#include <vector>

#include "mscnet/common.hpp"

namespace mscnet {

// Extents in canonical NCHW order for image tensors; scalars use {1}.
using Shape = std::vector<size_t>;

size_t shape_numel(const Shape& shape);
std::string shape_str(const Shape& shape);

struct TensorData {
    Shape shape;
    std::vector<real> data;
    std::vector<real> grad;      // empty until a backward pass needs it
    bool requires_grad = false;  // leaf flag (parameters, checked inputs)
    bool on_tape = false;        // produced by a recorded op in the current pass
};

// Dense tensor handle. Copies share storage (cheap to pass around); clone()
// makes a deep copy. All ops in ops.hpp allocate fresh outputs, so tensors
// produced by a forward pass never alias their inputs.
class Tensor {
public:
    Tensor() = default;
    explicit Tensor(Shape shape, real fill = 0, bool requires_grad = false);

    static Tensor scalar(real v);
    static Tensor from_data(Shape shape, std::vector<real> values);
    static Tensor zeros_like(const Tensor& t);

    bool defined() const { return static_cast<bool>(d_); }
    const Shape& shape() const { return d_->shape; }
    size_t rank() const { return d_->shape.size(); }
    size_t dim(size_t i) const { return d_->shape[i]; }
    size_t numel() const { return d_->data.size(); }

    real* data() { return d_->data.data(); }
    const real* data() const { return d_->data.data(); }
    std::vector<real>& values() { return d_->data; }
    const std::vector<real>& values() const { return d_->data; }

    real& operator[](size_t i) { return d_->data[i]; }
    real operator[](size_t i) const { return d_->data[i]; }

    // Rank-4 NCHW accessors.
    real& at(size_t n, size_t c, size_t h, size_t w) {
        const Shape& s = d_->shape;
        return d_->data[((n * s[1] + c) * s[2] + h) * s[3] + w];
    }
    real at(size_t n, size_t c, size_t h, size_t w) const {
        const Shape& s = d_->shape;
        return d_->data[((n * s[1] + c) * s[2] + h) * s[3] + w];
    }

    real item() const;

    bool requires_grad() const { return d_->requires_grad; }
    Tensor& set_requires_grad(bool on) {
        d_->requires_grad = on;
        return *this;
    }
    bool on_tape() const { return d_->on_tape; }
    void mark_on_tape() { d_->on_tape = true; }
    // True when a recorded op must propagate gradient into this tensor.
    bool tracked() const { return d_->requires_grad || d_->on_tape; }

    bool has_grad() const { return !d_->grad.empty(); }
    real* grad() { return d_->grad.data(); }
    const real* grad() const { return d_->grad.data(); }
    void ensure_grad();
    void zero_grad();
    Tensor grad_tensor() const;

    Tensor clone() const;

    std::shared_ptr<TensorData> ptr() const { return d_; }

private:
    std::shared_ptr<TensorData> d_;
};

// Throws NumericalError when finite checks are on and t holds NaN/Inf.
void check_finite(const Tensor& t, const char* op_name);

// Reverse-mode tape: ops append backward steps in execution order, which is
// a topological order by construction. backward() replays them in reverse
// exactly once; a consumed tape refuses a second backward.
class Tape {
public:
    void record(std::function<void()> step) { steps_.push_back(std::move(step)); }
    size_t size() const { return steps_.size(); }
    bool consumed() const { return consumed_; }
    void run_backward();

    static Tape* current();

private:
    friend class TapeScope;
    friend class NoGradGuard;
    std::vector<std::function<void()>> steps_;
    bool consumed_ = false;
};

// Makes a fresh tape current for one forward/backward pass (per thread).
class TapeScope {
public:
    TapeScope();
    ~TapeScope();
    TapeScope(const TapeScope&) = delete;
    TapeScope& operator=(const TapeScope&) = delete;
    Tape& tape() { return tape_; }

private:
    Tape tape_;
};

// Disables taping for the enclosed scope (inference, finite differences).
class NoGradGuard {
public:
    NoGradGuard();
    ~NoGradGuard();
    NoGradGuard(const NoGradGuard&) = delete;
    NoGradGuard& operator=(const NoGradGuard&) = delete;
};

// Seeds d(loss)/d(loss) = 1 and replays the current tape in reverse, filling
// grad on every tracked tensor reachable from the loss.
void backward(const Tensor& loss);

}  // namespace mscnet
