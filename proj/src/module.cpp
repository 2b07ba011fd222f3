#include "mscnet/module.hpp"

#include <cmath>

namespace mscnet {

void Module::set_training(bool on) {
    training_ = on;
    for (auto& [name, child] : children_) {
        (void)name;
        child->set_training(on);
    }
}

void Module::visit_state(const std::string& prefix, const StateVisitor& fn) const {
    for (const auto& [name, t] : params_) fn(prefix + name, t, true);
    for (const auto& [name, t] : buffers_) fn(prefix + name, t, false);
    for (const auto& [name, child] : children_) child->visit_state(prefix + name + ".", fn);
}

Tensor Module::register_param(const std::string& name, Tensor t) {
    t.set_requires_grad(true);
    params_.emplace_back(name, t);
    return t;
}

Tensor Module::register_buffer(const std::string& name, Tensor t) {
    buffers_.emplace_back(name, t);
    return t;
}

void Module::register_child(const std::string& name, Module& child) {
    children_.emplace_back(name, &child);
}

std::vector<StateEntry> collect_state(const Module& root, const std::string& prefix) {
    std::vector<StateEntry> entries;
    root.visit_state(prefix, [&](const std::string& name, const Tensor& t, bool learnable) {
        entries.push_back({name, t, learnable});
    });
    return entries;
}

size_t count_learnable(const Module& root, const std::string& prefix) {
    size_t total = 0;
    root.visit_state(prefix, [&](const std::string&, const Tensor& t, bool learnable) {
        if (learnable) total += t.numel();
    });
    return total;
}

Tensor kaiming_conv_init(Rng& rng, const Shape& kernel_shape) {
    const size_t fan_in = kernel_shape[1] * kernel_shape[2] * kernel_shape[3];
    const double stddev = std::sqrt(2.0 / (double)fan_in);
    Tensor t(kernel_shape);
    for (size_t i = 0; i < t.numel(); ++i) t[i] = (real)(float)rng.normal(0.0, stddev);
    return t;
}

Conv2d::Conv2d(Rng& rng, size_t in_ch, size_t out_ch, size_t kernel, size_t stride,
               std::pair<size_t, size_t> padding, size_t groups, bool bias)
    : stride_(stride), padding_(padding), groups_(groups) {
    weight_ = register_param("weight", kaiming_conv_init(rng, {out_ch, in_ch / groups, kernel, kernel}));
    if (bias) bias_ = register_param("bias", Tensor(Shape{out_ch}));
}

Conv2d::Conv2d(Rng& rng, size_t in_ch, size_t out_ch, std::pair<size_t, size_t> kernel_hw,
               std::pair<size_t, size_t> padding, bool bias)
    : padding_(padding) {
    weight_ =
        register_param("weight", kaiming_conv_init(rng, {out_ch, in_ch, kernel_hw.first, kernel_hw.second}));
    if (bias) bias_ = register_param("bias", Tensor(Shape{out_ch}));
}

Tensor Conv2d::forward(const Tensor& x) const { return conv2d(x, weight_, bias_, stride_, padding_, groups_); }

BatchNorm2d::BatchNorm2d(size_t channels) {
    gamma_ = register_param("gamma", Tensor(Shape{channels}, real(1)));
    beta_ = register_param("beta", Tensor(Shape{channels}));
    running_mean_ = register_buffer("running_mean", Tensor(Shape{channels}));
    running_var_ = register_buffer("running_var", Tensor(Shape{channels}, real(1)));
}

Tensor BatchNorm2d::forward(const Tensor& x) const {
    Tensor rm = running_mean_;
    Tensor rv = running_var_;
    return batchnorm2d(x, gamma_, beta_, rm, rv, training());
}

ConvBnAct::ConvBnAct(Rng& rng, size_t in_ch, size_t out_ch, size_t kernel, size_t stride, Act act,
                     size_t groups)
    : conv_(rng, in_ch, out_ch, kernel, stride, {kernel / 2, kernel / 2}, groups, /*bias=*/false),
      bn_(out_ch),
      act_(act) {
    register_child("conv", conv_);
    register_child("bn", bn_);
}

Tensor ConvBnAct::forward(const Tensor& x) const {
    Tensor y = bn_.forward(conv_.forward(x));
    switch (act_) {
        case Act::kRelu: return relu(y);
        case Act::kRelu6: return relu6(y);
        case Act::kNone: return y;
    }
    return y;
}

AsymConvBlock::AsymConvBlock(Rng& rng, size_t in_ch, size_t out_ch, size_t k)
    : vertical_(rng, in_ch, out_ch, {k, 1}, {k / 2, 0}, /*bias=*/false),
      horizontal_(rng, out_ch, out_ch, {1, k}, {0, k / 2}, /*bias=*/false),
      bn_v_(out_ch),
      bn_h_(out_ch) {
    register_child("vertical", vertical_);
    register_child("bn_v", bn_v_);
    register_child("horizontal", horizontal_);
    register_child("bn_h", bn_h_);
}

Tensor AsymConvBlock::forward(const Tensor& x) const {
    Tensor y = relu(bn_v_.forward(vertical_.forward(x)));
    return relu(bn_h_.forward(horizontal_.forward(y)));
}

}  // namespace mscnet
