#include "sattag/errors.hpp"
#include "sattag/layers.hpp"

#include <array>
#include <cmath>

namespace sattag {

Tensor ParamRegistry::add_param(const std::string& name, Tensor t) {
    t.set_requires_grad(true);
    params_.push_back({name, t});
    return t;
}

Tensor ParamRegistry::uniform(const std::string& name, Shape shape, std::size_t fan_in) {
    const double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
    std::uniform_real_distribution<double> dist(-bound, bound);
    Tensor t(std::move(shape));
    for (double& v : t.data()) v = dist(rng_);
    return add_param(name, t);
}

Tensor ParamRegistry::normal(const std::string& name, Shape shape, double stddev) {
    std::normal_distribution<double> dist(0.0, stddev);
    Tensor t(std::move(shape));
    for (double& v : t.data()) v = dist(rng_);
    return add_param(name, t);
}

Tensor ParamRegistry::constant(const std::string& name, Shape shape, double value) {
    return add_param(name, Tensor(std::move(shape), value));
}

Tensor ParamRegistry::buffer(const std::string& name, Shape shape, double value) {
    Tensor t(std::move(shape), value);
    buffers_.push_back({name, t});
    return t;
}

Tensor maybe_dropout(const Tensor& x, double p, const RunMode& mode) {
    if (!mode.training || p <= 0.0) return x;
    if (mode.rng == nullptr) throw ContractError("training-mode dropout needs a random generator");
    return dropout(x, p, *mode.rng);
}

Linear Linear::make(ParamRegistry& reg, const std::string& prefix, std::size_t in, std::size_t out, bool with_bias) {
    Linear l;
    l.weight = reg.uniform(prefix + ".weight", {in, out}, in);
    if (with_bias) l.bias = reg.constant(prefix + ".bias", {out}, 0.0);
    return l;
}

Tensor Linear::operator()(const Tensor& x) const {
    const std::size_t in = in_features();
    if (x.shape().back() != in) {
        throw DimensionError("linear: expected last axis " + std::to_string(in) + ", got " + to_string(x.shape()));
    }
    Shape out_shape = x.shape();
    out_shape.back() = out_features();
    Tensor y = x.rank() == 2 ? matmul(x, weight) : reshape(matmul(reshape(x, {x.size() / in, in}), weight), out_shape);
    return bias.defined() ? add(y, bias) : y;
}

BatchNorm BatchNorm::make(ParamRegistry& reg, const std::string& prefix, std::size_t channels) {
    BatchNorm bn;
    bn.gamma = reg.constant(prefix + ".gamma", {channels}, 1.0);
    bn.beta = reg.constant(prefix + ".beta", {channels}, 0.0);
    bn.stats.running_mean = reg.buffer(prefix + ".running_mean", {channels}, 0.0);
    bn.stats.running_var = reg.buffer(prefix + ".running_var", {channels}, 1.0);
    return bn;
}

Tensor BatchNorm::operator()(const Tensor& x, bool training) { return batch_norm(x, gamma, beta, stats, training); }

LayerNorm LayerNorm::make(ParamRegistry& reg, const std::string& prefix, std::size_t width) {
    LayerNorm ln;
    ln.gamma = reg.constant(prefix + ".gamma", {width}, 1.0);
    ln.beta = reg.constant(prefix + ".beta", {width}, 0.0);
    return ln;
}

ConvBnRelu1d ConvBnRelu1d::make(ParamRegistry& reg, const std::string& prefix, std::size_t in, std::size_t out,
                                std::size_t kernel, std::size_t padding) {
    ConvBnRelu1d c;
    c.weight = reg.uniform(prefix + ".conv.weight", {out, in, kernel}, in * kernel);
    c.bn = BatchNorm::make(reg, prefix + ".bn", out);
    c.opts.padding = padding;
    return c;
}

Tensor ConvBnRelu1d::operator()(const Tensor& x, bool training) {
    return relu(bn(conv1d(x, weight, Tensor(), opts), training));
}

ConvBnRelu2d ConvBnRelu2d::make(ParamRegistry& reg, const std::string& prefix, std::size_t in, std::size_t out,
                                std::size_t kernel_freq, std::size_t kernel_time) {
    ConvBnRelu2d c;
    c.weight = reg.uniform(prefix + ".conv.weight", {out, in, kernel_freq, kernel_time}, in * kernel_freq * kernel_time);
    c.bn = BatchNorm::make(reg, prefix + ".bn", out);
    c.opts.pad_time = (kernel_time - 1) / 2;
    return c;
}

Tensor ConvBnRelu2d::operator()(const Tensor& x, bool training) {
    return relu(bn(conv2d(x, weight, Tensor(), opts), training));
}

MultiHeadAttention MultiHeadAttention::make(ParamRegistry& reg, const std::string& prefix, std::size_t d_model,
                                            std::size_t n_heads) {
    if (n_heads == 0 || d_model % n_heads != 0) {
        throw ConfigError("d_model " + std::to_string(d_model) + " is not divisible by n_heads " +
                          std::to_string(n_heads));
    }
    MultiHeadAttention m;
    m.w_q = Linear::make(reg, prefix + ".w_q", d_model, d_model, false);
    m.w_k = Linear::make(reg, prefix + ".w_k", d_model, d_model, false);
    m.w_v = Linear::make(reg, prefix + ".w_v", d_model, d_model, false);
    m.w_o = Linear::make(reg, prefix + ".w_o", d_model, d_model, true);
    m.n_heads = n_heads;
    return m;
}

namespace {

constexpr std::array<std::size_t, 4> kSwapMiddle = {0, 2, 1, 3};

// [B×S×d] -> [B·h×S×dk]
Tensor split_heads(const Tensor& x, std::size_t h) {
    const std::size_t b = x.dim(0), s = x.dim(1), d = x.dim(2), dk = d / h;
    return reshape(permute(reshape(x, {b, s, h, dk}), kSwapMiddle), {b * h, s, dk});
}

// [B·h×S×dk] -> [B×S×d]
Tensor merge_heads(const Tensor& x, std::size_t b, std::size_t h) {
    const std::size_t s = x.dim(1), dk = x.dim(2);
    return reshape(permute(reshape(x, {b, h, s, dk}), kSwapMiddle), {b, s, h * dk});
}

}  // namespace

AttentionOutput MultiHeadAttention::operator()(const Tensor& x, const AttentionOptions& opts,
                                               std::span<const double> cls_row) const {
    if (x.rank() != 3) throw DimensionError("attention: expected [B×S×d], got " + to_string(x.shape()));
    const std::size_t b = x.dim(0), s = x.dim(1), d = x.dim(2), h = n_heads;
    const Tensor q = split_heads(w_q(x), h);
    const Tensor k = split_heads(w_k(x), h);
    const Tensor v = split_heads(w_v(x), h);
    Tensor scores = matmul(q, transpose_last2(k));
    if (opts.apply_scale) scores = scale(scores, 1.0 / std::sqrt(static_cast<double>(d / h)));
    Tensor a = opts.apply_softmax ? softmax(scores, 2) : scores;
    if (!cls_row.empty()) {
        if (cls_row.size() != s && cls_row.size() != b * h * s) {
            throw DimensionError("attention override needs " + std::to_string(s) + " or " + std::to_string(b * h * s) +
                                 " values, got " + std::to_string(cls_row.size()));
        }
        a = override_row(a, 0, cls_row);
    }
    AttentionOutput out;
    out.output = w_o(merge_heads(matmul(a, v), b, h));
    out.attention = reshape(a, {b, h, s, s});
    return out;
}

EncoderLayer EncoderLayer::make(ParamRegistry& reg, const std::string& prefix, std::size_t d_model,
                                std::size_t n_heads, std::size_t ff_dim) {
    EncoderLayer e;
    e.attn = MultiHeadAttention::make(reg, prefix + ".attn", d_model, n_heads);
    e.norm1 = LayerNorm::make(reg, prefix + ".norm1", d_model);
    e.ff1 = Linear::make(reg, prefix + ".ff1", d_model, ff_dim, true);
    e.ff2 = Linear::make(reg, prefix + ".ff2", ff_dim, d_model, true);
    e.norm2 = LayerNorm::make(reg, prefix + ".norm2", d_model);
    return e;
}

AttentionOutput EncoderLayer::operator()(const Tensor& x, const RunMode& mode, const AttentionOptions& opts,
                                         std::span<const double> cls_row) const {
    AttentionOutput a = attn(x, opts, cls_row);
    const Tensor y = norm1(add(x, maybe_dropout(a.output, mode.dropout, mode)));
    const Tensor f = ff2(relu(ff1(y)));
    a.output = norm2(add(y, maybe_dropout(f, mode.dropout, mode)));
    return a;
}

}  // namespace sattag
