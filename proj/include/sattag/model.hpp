#pragma once

#include "sattag/layers.hpp"

#include <memory>
#include <optional>
#include <span>
#include <string>
#include <vector>

namespace sattag {

enum class Frontend { Spec, Raw };
enum class Backend { CnnP, CnnL, Att };

const char* frontend_name(Frontend f);  // "spec" | "raw"
const char* backend_name(Backend b);    // "cnn_p" | "cnn_l" | "att"
Frontend parse_frontend(const std::string& s);
Backend parse_backend(const std::string& s);

// Samples per Raw front-end frame: five pools of 3.
inline constexpr std::size_t kRawFrameSamples = 243;

struct ModelConfig {
    Frontend frontend = Frontend::Spec;
    Backend backend = Backend::Att;
    std::size_t n_heads = 8;
    std::size_t n_att_layers = 2;
    std::size_t d_model = 256;
    std::size_t ff_dim = 0;  // 0 means 4·d_model
    std::size_t n_tags = 50;
    std::size_t input_frames = 256;
    std::size_t input_samples = 65610;
    // Longest front-end sequence the positional table must cover; 0 means
    // the configured input length. Raise it to score concatenated inputs.
    std::size_t max_frames = 0;
    double dropout = 0.1;
    double scale = 1.0;  // shrinks convolution channel counts

    std::size_t resolved_ff_dim() const { return ff_dim == 0 ? 4 * d_model : ff_dim; }
    // Front-end output length for the configured input.
    std::size_t frontend_frames() const;
    std::size_t frame_capacity() const;
    std::size_t channels(std::size_t full) const;
    std::string name() const;  // e.g. "Spec_Att"

    void validate() const;
};

struct ForwardOptions {
    bool training = false;
    std::mt19937_64* rng = nullptr;  // dropout masks; required when training
    AttentionOptions attention;
    // Query row 0 override for the last encoder layer (see MultiHeadAttention).
    std::span<const double> last_layer_cls_row;
};

struct ForwardResult {
    Tensor logits;                 // [B × n_tags]
    std::vector<Tensor> attention;  // per encoder layer, [B × h × S × S]
};

struct SpecFrontend {
    std::vector<ConvBnRelu2d> vertical;
    std::vector<ConvBnRelu1d> horizontal;

    static SpecFrontend make(ParamRegistry& reg, const ModelConfig& cfg);
    std::size_t width() const;
    Tensor operator()(const Tensor& x, bool training);  // [B×1×96×T] -> [B×T×D]
};

struct RawFrontend {
    std::vector<ConvBnRelu1d> layers;
    std::optional<ConvBnRelu1d> context;  // the extra 1×7 layer before Att

    static RawFrontend make(ParamRegistry& reg, const ModelConfig& cfg);
    std::size_t width() const;
    Tensor operator()(const Tensor& x, bool training);  // [B×1×L] -> [B×T×D]
};

struct CnnPBackend {
    ConvBnRelu1d projection;
    std::vector<ConvBnRelu1d> residual;
    Linear dense;
    BatchNorm dense_bn;
    Linear classifier;

    static CnnPBackend make(ParamRegistry& reg, const ModelConfig& cfg, std::size_t in_width);
    Tensor operator()(const Tensor& f, const RunMode& mode);
};

struct CnnLBackend {
    std::vector<ConvBnRelu1d> layers;
    Linear classifier;

    static CnnLBackend make(ParamRegistry& reg, const ModelConfig& cfg, std::size_t in_width);
    Tensor operator()(const Tensor& f, bool training);

    // Time extent after each of the five layers: pool by 3 while the extent
    // stays divisible by 3, then run unpooled.
    static std::vector<std::size_t> frame_trace(std::size_t frames);
};

struct AttBackend {
    Linear projection;
    Tensor cls;         // [d_model]
    Tensor positional;  // [capacity + 1 × d_model]
    std::vector<EncoderLayer> layers;
    Linear classifier;

    static AttBackend make(ParamRegistry& reg, const ModelConfig& cfg, std::size_t in_width);

    // Projected features with CLS prepended and positions added: [B×S×d].
    Tensor embed(const Tensor& f) const;
    ForwardResult operator()(const Tensor& f, const RunMode& mode, const ForwardOptions& opts) const;
};

class Model {
public:
    explicit Model(const ModelConfig& cfg, std::uint64_t seed = 0);
    // Layers share storage with the parameter table, so copies would alias.
    Model(const Model&) = delete;
    Model& operator=(const Model&) = delete;
    Model(Model&&) = default;
    Model& operator=(Model&&) = default;

    const ModelConfig& config() const { return cfg_; }

    ForwardResult forward(const Tensor& input, const ForwardOptions& opts = {});
    // Front-end output [B×T×D].
    Tensor features(const Tensor& input, bool training = false);

    std::vector<NamedTensor>& parameters() { return params_; }
    const std::vector<NamedTensor>& parameters() const { return params_; }
    // Batch-norm running statistics.
    std::vector<NamedTensor>& buffers() { return buffers_; }
    const std::vector<NamedTensor>& buffers() const { return buffers_; }
    std::vector<Tensor> parameter_tensors() const;
    Tensor parameter(const std::string& name) const;
    std::size_t parameter_count() const;

    const AttBackend& att() const;

private:
    ModelConfig cfg_;
    std::optional<SpecFrontend> spec_;
    std::optional<RawFrontend> raw_;
    std::optional<CnnPBackend> cnnp_;
    std::optional<CnnLBackend> cnnl_;
    std::optional<AttBackend> att_;
    std::vector<NamedTensor> params_;
    std::vector<NamedTensor> buffers_;
};

}  // namespace sattag
