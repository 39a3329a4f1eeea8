#include "sattag/dsp.hpp"
#include "sattag/errors.hpp"
#include "sattag/model.hpp"

#include <array>

namespace sattag {

namespace {

struct VerticalShape {
    std::size_t channels, freq, time;
};
struct HorizontalShape {
    std::size_t channels, time;
};

constexpr std::array<VerticalShape, 6> kVertical = {{{32, 38, 1}, {32, 86, 1}, {16, 38, 3},
                                                     {16, 86, 3}, {8, 38, 7},  {8, 86, 7}}};
constexpr std::array<HorizontalShape, 4> kHorizontal = {{{64, 33}, {32, 65}, {16, 129}, {8, 165}}};
constexpr std::array<std::size_t, 5> kRawChannels = {128, 128, 128, 256, 256};
constexpr std::size_t kRawContextChannels = 256;
constexpr std::size_t kRawContextKernel = 7;

constexpr std::array<std::size_t, 3> kChannelsLast = {0, 2, 1};

}  // namespace

SpecFrontend SpecFrontend::make(ParamRegistry& reg, const ModelConfig& cfg) {
    SpecFrontend f;
    for (std::size_t i = 0; i < kVertical.size(); ++i) {
        const auto& v = kVertical[i];
        f.vertical.push_back(ConvBnRelu2d::make(reg, "frontend.vertical." + std::to_string(i), 1,
                                                cfg.channels(v.channels), v.freq, v.time));
    }
    for (std::size_t i = 0; i < kHorizontal.size(); ++i) {
        const auto& h = kHorizontal[i];
        f.horizontal.push_back(ConvBnRelu1d::make(reg, "frontend.horizontal." + std::to_string(i), 1,
                                                  cfg.channels(h.channels), h.time, (h.time - 1) / 2));
    }
    return f;
}

std::size_t SpecFrontend::width() const {
    std::size_t d = 0;
    for (const auto& v : vertical) d += v.weight.dim(0);
    for (const auto& h : horizontal) d += h.weight.dim(0);
    return d;
}

Tensor SpecFrontend::operator()(const Tensor& x, bool training) {
    if (x.rank() != 4 || x.dim(1) != 1 || x.dim(2) != kMelBins) {
        throw DimensionError("spec front-end expects [B×1×" + std::to_string(kMelBins) + "×T], got " +
                             to_string(x.shape()));
    }
    const std::size_t b = x.dim(0), t = x.dim(3);
    std::vector<Tensor> parts;
    parts.reserve(vertical.size() + horizontal.size());
    for (auto& layer : vertical) {
        const Tensor y = layer(x, training);
        parts.push_back(reshape(max_pool(y, 2, y.dim(2), 1), {b, y.dim(1), t}));
    }
    const Tensor band_mean = reshape(avg_pool(x, 2, kMelBins, kMelBins), {b, 1, t});
    for (auto& layer : horizontal) parts.push_back(layer(band_mean, training));
    return permute(concat(parts, 1), kChannelsLast);
}

RawFrontend RawFrontend::make(ParamRegistry& reg, const ModelConfig& cfg) {
    RawFrontend f;
    std::size_t in = 1;
    for (std::size_t i = 0; i < kRawChannels.size(); ++i) {
        const std::size_t out = cfg.channels(kRawChannels[i]);
        f.layers.push_back(ConvBnRelu1d::make(reg, "frontend.conv." + std::to_string(i), in, out, 3, 1));
        in = out;
    }
    if (cfg.backend == Backend::Att) {
        f.context = ConvBnRelu1d::make(reg, "frontend.context", in, cfg.channels(kRawContextChannels),
                                       kRawContextKernel, (kRawContextKernel - 1) / 2);
    }
    return f;
}

std::size_t RawFrontend::width() const {
    return context ? context->weight.dim(0) : layers.back().weight.dim(0);
}

Tensor RawFrontend::operator()(const Tensor& x, bool training) {
    if (x.rank() != 3 || x.dim(1) != 1) {
        throw DimensionError("raw front-end expects [B×1×L], got " + to_string(x.shape()));
    }
    if (x.dim(2) < kRawFrameSamples) {
        throw DimensionError("raw front-end needs at least " + std::to_string(kRawFrameSamples) + " samples, got " +
                             std::to_string(x.dim(2)));
    }
    Tensor y = x;
    for (auto& layer : layers) y = max_pool(layer(y, training), 2, 3, 3);
    if (context) y = (*context)(y, training);
    return permute(y, kChannelsLast);
}

}  // namespace sattag
