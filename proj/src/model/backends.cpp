#include "sattag/errors.hpp"
#include "sattag/model.hpp"

#include <array>

namespace sattag {

namespace {

constexpr std::size_t kCnnPChannels = 512;
constexpr std::size_t kCnnPKernel = 7;
constexpr std::size_t kCnnPResidualBlocks = 2;
constexpr double kCnnPDenseDropout = 0.5;
constexpr std::array<std::size_t, 5> kCnnLChannels = {256, 256, 256, 256, 512};
constexpr double kEmbeddingStd = 0.02;

constexpr std::array<std::size_t, 3> kChannelsFirst = {0, 2, 1};

// [B×C×T] -> [B×C]
Tensor global_max(const Tensor& x) { return reshape(max_pool(x, 2, x.dim(2), 1), {x.dim(0), x.dim(1)}); }

}  // namespace

CnnPBackend CnnPBackend::make(ParamRegistry& reg, const ModelConfig& cfg, std::size_t in_width) {
    const std::size_t c = cfg.channels(kCnnPChannels);
    const std::size_t pad = (kCnnPKernel - 1) / 2;
    CnnPBackend b;
    b.projection = ConvBnRelu1d::make(reg, "backend.projection", in_width, c, kCnnPKernel, pad);
    for (std::size_t i = 0; i < kCnnPResidualBlocks; ++i) {
        b.residual.push_back(ConvBnRelu1d::make(reg, "backend.residual." + std::to_string(i), c, c, kCnnPKernel, pad));
    }
    b.dense = Linear::make(reg, "backend.dense", c, c, false);
    b.dense_bn = BatchNorm::make(reg, "backend.dense_bn", c);
    b.classifier = Linear::make(reg, "backend.classifier", c, cfg.n_tags, true);
    return b;
}

Tensor CnnPBackend::operator()(const Tensor& f, const RunMode& mode) {
    Tensor y = projection(permute(f, kChannelsFirst), mode.training);
    for (auto& block : residual) y = add(y, block(y, mode.training));
    Tensor h = relu(dense_bn(dense(global_max(y)), mode.training));
    h = maybe_dropout(h, kCnnPDenseDropout, mode);
    return classifier(h);
}

CnnLBackend CnnLBackend::make(ParamRegistry& reg, const ModelConfig& cfg, std::size_t in_width) {
    CnnLBackend b;
    std::size_t in = in_width;
    for (std::size_t i = 0; i < kCnnLChannels.size(); ++i) {
        const std::size_t out = cfg.channels(kCnnLChannels[i]);
        b.layers.push_back(ConvBnRelu1d::make(reg, "backend.conv." + std::to_string(i), in, out, 3, 1));
        in = out;
    }
    b.classifier = Linear::make(reg, "backend.classifier", in, cfg.n_tags, true);
    return b;
}

std::vector<std::size_t> CnnLBackend::frame_trace(std::size_t frames) {
    std::vector<std::size_t> trace;
    bool pooling = true;
    for (std::size_t i = 0; i < kCnnLChannels.size(); ++i) {
        pooling = pooling && frames % 3 == 0;
        if (pooling) frames /= 3;
        trace.push_back(frames);
    }
    return trace;
}

Tensor CnnLBackend::operator()(const Tensor& f, bool training) {
    Tensor y = permute(f, kChannelsFirst);
    const auto trace = frame_trace(y.dim(2));
    for (std::size_t i = 0; i < layers.size(); ++i) {
        y = layers[i](y, training);
        if (trace[i] != y.dim(2)) y = max_pool(y, 2, 3, 3);
    }
    return classifier(global_max(y));
}

AttBackend AttBackend::make(ParamRegistry& reg, const ModelConfig& cfg, std::size_t in_width) {
    AttBackend b;
    const std::size_t d = cfg.d_model;
    b.projection = Linear::make(reg, "backend.projection", in_width, d, true);
    b.cls = reg.normal("backend.cls", {d}, kEmbeddingStd);
    b.positional = reg.normal("backend.positional", {cfg.frame_capacity() + 1, d}, kEmbeddingStd);
    for (std::size_t i = 0; i < cfg.n_att_layers; ++i) {
        b.layers.push_back(EncoderLayer::make(reg, "backend.layers." + std::to_string(i), d, cfg.n_heads,
                                              cfg.resolved_ff_dim()));
    }
    b.classifier = Linear::make(reg, "backend.classifier", d, cfg.n_tags, true);
    return b;
}

Tensor AttBackend::embed(const Tensor& f) const {
    const std::size_t b = f.dim(0), t = f.dim(1), d = cls.size();
    if (t + 1 > positional.dim(0)) {
        throw ConfigError("sequence of " + std::to_string(t) + " frames exceeds the positional table (" +
                          std::to_string(positional.dim(0) - 1) + " frames); raise model.max_frames");
    }
    const Tensor cls_rows = repeat_leading(reshape(cls, {1, d}), b);
    const std::array<Tensor, 2> parts = {cls_rows, projection(f)};
    return add(concat(parts, 1), slice(positional, 0, 0, t + 1));
}

ForwardResult AttBackend::operator()(const Tensor& f, const RunMode& mode, const ForwardOptions& opts) const {
    ForwardResult out;
    Tensor x = embed(f);
    for (std::size_t i = 0; i < layers.size(); ++i) {
        const bool last = i + 1 == layers.size();
        AttentionOutput r = layers[i](x, mode, opts.attention, last ? opts.last_layer_cls_row : std::span<const double>{});
        out.attention.push_back(r.attention);
        x = r.output;
    }
    const std::size_t b = x.dim(0), d = x.dim(2);
    out.logits = classifier(reshape(slice(x, 1, 0, 1), {b, d}));
    return out;
}

}  // namespace sattag
