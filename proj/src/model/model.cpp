#include "sattag/errors.hpp"
#include "sattag/model.hpp"

namespace sattag {

Model::Model(const ModelConfig& cfg, std::uint64_t seed) : cfg_(cfg) {
    cfg_.validate();
    ParamRegistry reg(seed);
    std::size_t width = 0;
    if (cfg_.frontend == Frontend::Spec) {
        spec_ = SpecFrontend::make(reg, cfg_);
        width = spec_->width();
    } else {
        raw_ = RawFrontend::make(reg, cfg_);
        width = raw_->width();
    }
    switch (cfg_.backend) {
        case Backend::CnnP: cnnp_ = CnnPBackend::make(reg, cfg_, width); break;
        case Backend::CnnL: cnnl_ = CnnLBackend::make(reg, cfg_, width); break;
        case Backend::Att: att_ = AttBackend::make(reg, cfg_, width); break;
    }
    params_ = reg.take_params();
    buffers_ = reg.take_buffers();
}

Tensor Model::features(const Tensor& input, bool training) {
    if (spec_) return (*spec_)(input, training);
    if (input.rank() == 3 && input.dim(2) != cfg_.input_samples) {
        throw DimensionError("raw input has " + std::to_string(input.dim(2)) + " samples, model expects " +
                             std::to_string(cfg_.input_samples));
    }
    return (*raw_)(input, training);
}

ForwardResult Model::forward(const Tensor& input, const ForwardOptions& opts) {
    const RunMode mode{opts.training, cfg_.dropout, opts.rng};
    const Tensor f = features(input, opts.training);
    if (att_) return (*att_)(f, mode, opts);
    if (!opts.last_layer_cls_row.empty()) throw ContractError("attention override needs the att backend");
    ForwardResult out;
    out.logits = cnnp_ ? (*cnnp_)(f, mode) : (*cnnl_)(f, opts.training);
    return out;
}

std::vector<Tensor> Model::parameter_tensors() const {
    std::vector<Tensor> out;
    out.reserve(params_.size());
    for (const auto& p : params_) out.push_back(p.tensor);
    return out;
}

Tensor Model::parameter(const std::string& name) const {
    for (const auto& p : params_) {
        if (p.name == name) return p.tensor;
    }
    throw ContractError("no parameter named '" + name + "'");
}

std::size_t Model::parameter_count() const {
    std::size_t n = 0;
    for (const auto& p : params_) n += p.tensor.size();
    return n;
}

const AttBackend& Model::att() const {
    if (!att_) throw ContractError(cfg_.name() + " has no attention back-end");
    return *att_;
}

}  // namespace sattag
