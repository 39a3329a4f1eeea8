#pragma once

#include "sattag/ops.hpp"
#include "sattag/tensor.hpp"

#include <cstdint>
#include <random>
#include <string>
#include <vector>

namespace sattag {

struct NamedTensor {
    std::string name;
    Tensor tensor;
};

// Creates parameters and buffers in a fixed order from one seeded stream,
// so the same seed always yields the same initialization.
class ParamRegistry {
public:
    explicit ParamRegistry(std::uint64_t seed) : rng_(seed) {}

    Tensor uniform(const std::string& name, Shape shape, std::size_t fan_in);
    Tensor normal(const std::string& name, Shape shape, double stddev);
    Tensor constant(const std::string& name, Shape shape, double value);
    Tensor buffer(const std::string& name, Shape shape, double value);

    std::vector<NamedTensor> take_params() { return std::move(params_); }
    std::vector<NamedTensor> take_buffers() { return std::move(buffers_); }

private:
    Tensor add_param(const std::string& name, Tensor t);

    std::mt19937_64 rng_;
    std::vector<NamedTensor> params_;
    std::vector<NamedTensor> buffers_;
};

// Per-call execution settings shared by every layer.
struct RunMode {
    bool training = false;
    double dropout = 0.0;
    std::mt19937_64* rng = nullptr;  // required when training with dropout > 0
};

Tensor maybe_dropout(const Tensor& x, double p, const RunMode& mode);

// y = x·W (+ b) over the last axis; x [… × in], W [in × out].
struct Linear {
    Tensor weight;
    Tensor bias;  // undefined when the layer has no bias

    static Linear make(ParamRegistry& reg, const std::string& prefix, std::size_t in, std::size_t out, bool with_bias);
    Tensor operator()(const Tensor& x) const;
    std::size_t in_features() const { return weight.dim(0); }
    std::size_t out_features() const { return weight.dim(1); }
};

struct BatchNorm {
    Tensor gamma;
    Tensor beta;
    BatchNormStats stats;

    static BatchNorm make(ParamRegistry& reg, const std::string& prefix, std::size_t channels);
    Tensor operator()(const Tensor& x, bool training);
};

struct LayerNorm {
    Tensor gamma;
    Tensor beta;

    static LayerNorm make(ParamRegistry& reg, const std::string& prefix, std::size_t width);
    Tensor operator()(const Tensor& x) const { return layer_norm(x, gamma, beta); }
};

// conv (no bias; batch norm supplies the shift) -> batch norm -> ReLU
struct ConvBnRelu1d {
    Tensor weight;  // [Cout × Cin × k]
    BatchNorm bn;
    Conv1dOptions opts;

    static ConvBnRelu1d make(ParamRegistry& reg, const std::string& prefix, std::size_t in, std::size_t out,
                             std::size_t kernel, std::size_t padding);
    Tensor operator()(const Tensor& x, bool training);
};

struct ConvBnRelu2d {
    Tensor weight;  // [Cout × Cin × f × t]
    BatchNorm bn;
    Conv2dOptions opts;

    static ConvBnRelu2d make(ParamRegistry& reg, const std::string& prefix, std::size_t in, std::size_t out,
                             std::size_t kernel_freq, std::size_t kernel_time);
    Tensor operator()(const Tensor& x, bool training);
};

struct AttentionOptions {
    bool apply_softmax = true;
    bool apply_scale = true;
};

struct AttentionOutput {
    Tensor output;     // [B × S × d_model]
    Tensor attention;  // [B × h × S × S]
};

// Q, K, V projections carry no bias; the output projection does.
struct MultiHeadAttention {
    Linear w_q, w_k, w_v, w_o;
    std::size_t n_heads = 1;

    static MultiHeadAttention make(ParamRegistry& reg, const std::string& prefix, std::size_t d_model,
                                   std::size_t n_heads);

    // cls_row, when non-empty, replaces query row 0 of every head's
    // attention matrix: S entries shared by all heads and batch items, or
    // B·h·S entries (one row per batch item and head).
    AttentionOutput operator()(const Tensor& x, const AttentionOptions& opts = {},
                               std::span<const double> cls_row = {}) const;
};

// Post-norm encoder block:
// x <- LN(x + drop(MHA(x))); x <- LN(x + drop(FF(x)))
struct EncoderLayer {
    MultiHeadAttention attn;
    LayerNorm norm1;
    Linear ff1;
    Linear ff2;
    LayerNorm norm2;

    static EncoderLayer make(ParamRegistry& reg, const std::string& prefix, std::size_t d_model,
                             std::size_t n_heads, std::size_t ff_dim);
    AttentionOutput operator()(const Tensor& x, const RunMode& mode, const AttentionOptions& opts = {},
                               std::span<const double> cls_row = {}) const;
};

}  // namespace sattag
