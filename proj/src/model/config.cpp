#include "sattag/errors.hpp"
#include "sattag/model.hpp"

#include <cmath>

namespace sattag {

const char* frontend_name(Frontend f) { return f == Frontend::Spec ? "spec" : "raw"; }

const char* backend_name(Backend b) {
    switch (b) {
        case Backend::CnnP: return "cnn_p";
        case Backend::CnnL: return "cnn_l";
        case Backend::Att: return "att";
    }
    return "?";
}

Frontend parse_frontend(const std::string& s) {
    if (s == "spec") return Frontend::Spec;
    if (s == "raw") return Frontend::Raw;
    throw ConfigError("unknown frontend '" + s + "' (expected spec or raw)");
}

Backend parse_backend(const std::string& s) {
    if (s == "cnn_p") return Backend::CnnP;
    if (s == "cnn_l") return Backend::CnnL;
    if (s == "att") return Backend::Att;
    throw ConfigError("unknown backend '" + s + "' (expected cnn_p, cnn_l or att)");
}

std::size_t ModelConfig::frontend_frames() const {
    if (frontend == Frontend::Spec) return input_frames;
    std::size_t n = input_samples;
    for (int i = 0; i < 5; ++i) n /= 3;
    return n;
}

std::size_t ModelConfig::frame_capacity() const { return std::max(max_frames, frontend_frames()); }

std::size_t ModelConfig::channels(std::size_t full) const {
    const auto c = static_cast<long long>(std::llround(static_cast<double>(full) * scale));
    return static_cast<std::size_t>(std::max(1LL, c));
}

std::string ModelConfig::name() const {
    std::string out = frontend == Frontend::Spec ? "Spec_" : "Raw_";
    switch (backend) {
        case Backend::CnnP: return out + "CNN_P";
        case Backend::CnnL: return out + "CNN_L";
        case Backend::Att: return out + "Att";
    }
    return out;
}

void ModelConfig::validate() const {
    if (backend == Backend::CnnL && frontend != Frontend::Raw) {
        throw ConfigError("backend cnn_l requires frontend raw");
    }
    if (backend == Backend::CnnP && frontend != Frontend::Spec) {
        throw ConfigError("backend cnn_p requires frontend spec");
    }
    if (!(scale > 0.0 && scale <= 1.0)) throw ConfigError("scale must lie in (0, 1]");
    if (!(dropout >= 0.0 && dropout < 1.0)) throw ConfigError("dropout must lie in [0, 1)");
    if (n_tags == 0) throw ConfigError("n_tags must be positive");
    if (frontend == Frontend::Spec && input_frames == 0) throw ConfigError("input_frames must be positive");
    if (frontend == Frontend::Raw && input_samples < kRawFrameSamples) {
        throw ConfigError("input_samples must be at least " + std::to_string(kRawFrameSamples) +
                          " (one front-end frame)");
    }
    if (backend == Backend::Att) {
        if (n_heads == 0 || d_model == 0) throw ConfigError("n_heads and d_model must be positive");
        if (d_model % n_heads != 0) {
            throw ConfigError("d_model " + std::to_string(d_model) + " is not divisible by n_heads " +
                              std::to_string(n_heads));
        }
        if (n_att_layers == 0) throw ConfigError("n_att_layers must be at least 1");
    }
}

}  // namespace sattag
