#pragma once

#include <functional>
#include <string>
#include <utility>
#include <vector>

#include "mscnet/ops.hpp"
#include "mscnet/tensor.hpp"

namespace mscnet {

// Flattened view of a module tree's state, in registration order. The order
// is fixed by construction, which makes weight files and parameter sweeps
// deterministic.
struct StateEntry {
    std::string name;
    Tensor tensor;
    bool learnable = false;
};

// Visitor over (qualified name, tensor, learnable).
using StateVisitor = std::function<void(const std::string&, const Tensor&, bool)>;

// Base for layers. Subclasses hold their tensors/children as ordinary members
// and register them in the constructor; registration both names the state and
// fixes its traversal order. Parameters get requires_grad, buffers (batchnorm
// running stats) do not.
class Module {
public:
    virtual ~Module() = default;
    Module() = default;
    Module(const Module&) = delete;
    Module& operator=(const Module&) = delete;

    void set_training(bool on);
    bool training() const { return training_; }

    void visit_state(const std::string& prefix, const StateVisitor& fn) const;

protected:
    Tensor register_param(const std::string& name, Tensor t);
    Tensor register_buffer(const std::string& name, Tensor t);
    void register_child(const std::string& name, Module& child);

private:
    std::vector<std::pair<std::string, Tensor>> params_;
    std::vector<std::pair<std::string, Tensor>> buffers_;
    std::vector<std::pair<std::string, Module*>> children_;
    bool training_ = true;
};

std::vector<StateEntry> collect_state(const Module& root, const std::string& prefix = "");
size_t count_learnable(const Module& root, const std::string& prefix = "");

// He-style fan-in initialization for convolution kernels. Values are rounded
// through f32 so a fresh model survives the 32-bit weight container without
// loss.
Tensor kaiming_conv_init(Rng& rng, const Shape& kernel_shape);

enum class Act { kNone, kRelu, kRelu6 };

class Conv2d : public Module {
public:
    Conv2d(Rng& rng, size_t in_ch, size_t out_ch, size_t kernel, size_t stride,
           std::pair<size_t, size_t> padding, size_t groups = 1, bool bias = true);
    // Asymmetric kernels (k x 1 / 1 x k) pick their own padding.
    Conv2d(Rng& rng, size_t in_ch, size_t out_ch, std::pair<size_t, size_t> kernel_hw,
           std::pair<size_t, size_t> padding, bool bias);

    Tensor forward(const Tensor& x) const;
    size_t out_channels() const { return weight_.dim(0); }

private:
    Tensor weight_;
    Tensor bias_;
    size_t stride_ = 1;
    std::pair<size_t, size_t> padding_{0, 0};
    size_t groups_ = 1;
};

class BatchNorm2d : public Module {
public:
    explicit BatchNorm2d(size_t channels);
    Tensor forward(const Tensor& x) const;

private:
    Tensor gamma_, beta_;
    // Running stats are mutated by forward in train mode; the tensors are
    // shared handles, so the const qualifier stays honest at the module level.
    Tensor running_mean_, running_var_;
};

// conv (bias-free) -> batchnorm -> activation, the workhorse block.
class ConvBnAct : public Module {
public:
    ConvBnAct(Rng& rng, size_t in_ch, size_t out_ch, size_t kernel, size_t stride, Act act,
              size_t groups = 1);
    Tensor forward(const Tensor& x) const;

private:
    Conv2d conv_;
    BatchNorm2d bn_;
    Act act_;
};

// Factorized k x k context branch: (k x 1 -> BN -> ReLU) -> (1 x k -> BN -> ReLU).
class AsymConvBlock : public Module {
public:
    AsymConvBlock(Rng& rng, size_t in_ch, size_t out_ch, size_t k);
    Tensor forward(const Tensor& x) const;

private:
    Conv2d vertical_, horizontal_;
    BatchNorm2d bn_v_, bn_h_;
};

}  // namespace mscnet
