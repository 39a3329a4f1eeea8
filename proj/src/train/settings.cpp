#include "sattag/trainer.hpp"

#include <charconv>
#include <sstream>

namespace sattag {

namespace {

std::string fmt(double v) {
    char buf[32];
    const auto r = std::to_chars(buf, buf + sizeof buf, v);
    return std::string(buf, r.ptr);
}

template <typename T>
T parse_number(const std::string& key, const std::string& value) {
    T out{};
    const auto r = std::from_chars(value.data(), value.data() + value.size(), out);
    if (r.ec != std::errc() || r.ptr != value.data() + value.size()) {
        throw ConfigError(key + ": '" + value + "' is not a valid number");
    }
    return out;
}

bool parse_bool(const std::string& key, const std::string& value) {
    if (value == "true" || value == "1") return true;
    if (value == "false" || value == "0") return false;
    throw ConfigError(key + ": expected true or false, got '" + value + "'");
}

std::vector<int> parse_int_list(const std::string& key, const std::string& value) {
    std::vector<int> out;
    std::stringstream ss(value);
    std::string item;
    while (std::getline(ss, item, ',')) {
        if (!item.empty()) out.push_back(parse_number<int>(key, item));
    }
    return out;
}

}  // namespace

Metadata model_settings(const ModelConfig& c) {
    return {{"model.frontend", frontend_name(c.frontend)},
            {"model.backend", backend_name(c.backend)},
            {"model.n_heads", std::to_string(c.n_heads)},
            {"model.n_att_layers", std::to_string(c.n_att_layers)},
            {"model.d_model", std::to_string(c.d_model)},
            {"model.ff_dim", std::to_string(c.ff_dim)},
            {"model.n_tags", std::to_string(c.n_tags)},
            {"model.input_frames", std::to_string(c.input_frames)},
            {"model.input_samples", std::to_string(c.input_samples)},
            {"model.max_frames", std::to_string(c.max_frames)},
            {"model.dropout", fmt(c.dropout)},
            {"model.scale", fmt(c.scale)}};
}

Metadata train_settings(const TrainConfig& c) {
    std::string drops;
    for (std::size_t i = 0; i < c.lr_drop_epochs.size(); ++i) {
        drops += (i ? "," : "") + std::to_string(c.lr_drop_epochs[i]);
    }
    return {{"train.adam_epochs", std::to_string(c.adam_epochs)},
            {"train.total_epochs", std::to_string(c.total_epochs)},
            {"train.adam_lr", fmt(c.adam_lr)},
            {"train.beta1", fmt(c.beta1)},
            {"train.beta2", fmt(c.beta2)},
            {"train.sgd_lr", fmt(c.sgd_lr)},
            {"train.sgd_momentum", fmt(c.sgd_momentum)},
            {"train.nesterov", c.nesterov ? "true" : "false"},
            {"train.lr_drop_epochs", drops},
            {"train.lr_drop_factor", fmt(c.lr_drop_factor)},
            {"train.batch_size", std::to_string(c.batch_size)},
            {"train.seed", std::to_string(c.seed)}};
}

bool apply_model_setting(ModelConfig& c, const std::string& key, const std::string& v) {
    if (key == "model.frontend") c.frontend = parse_frontend(v);
    else if (key == "model.backend") c.backend = parse_backend(v);
    else if (key == "model.n_heads") c.n_heads = parse_number<std::size_t>(key, v);
    else if (key == "model.n_att_layers") c.n_att_layers = parse_number<std::size_t>(key, v);
    else if (key == "model.d_model") c.d_model = parse_number<std::size_t>(key, v);
    else if (key == "model.ff_dim") c.ff_dim = parse_number<std::size_t>(key, v);
    else if (key == "model.n_tags") c.n_tags = parse_number<std::size_t>(key, v);
    else if (key == "model.input_frames") c.input_frames = parse_number<std::size_t>(key, v);
    else if (key == "model.input_samples") c.input_samples = parse_number<std::size_t>(key, v);
    else if (key == "model.max_frames") c.max_frames = parse_number<std::size_t>(key, v);
    else if (key == "model.dropout") c.dropout = parse_number<double>(key, v);
    else if (key == "model.scale") c.scale = parse_number<double>(key, v);
    else return false;
    return true;
}

bool apply_train_setting(TrainConfig& c, const std::string& key, const std::string& v) {
    if (key == "train.adam_epochs") c.adam_epochs = parse_number<int>(key, v);
    else if (key == "train.total_epochs") c.total_epochs = parse_number<int>(key, v);
    else if (key == "train.adam_lr") c.adam_lr = parse_number<double>(key, v);
    else if (key == "train.beta1") c.beta1 = parse_number<double>(key, v);
    else if (key == "train.beta2") c.beta2 = parse_number<double>(key, v);
    else if (key == "train.sgd_lr") c.sgd_lr = parse_number<double>(key, v);
    else if (key == "train.sgd_momentum") c.sgd_momentum = parse_number<double>(key, v);
    else if (key == "train.nesterov") c.nesterov = parse_bool(key, v);
    else if (key == "train.lr_drop_epochs") c.lr_drop_epochs = parse_int_list(key, v);
    else if (key == "train.lr_drop_factor") c.lr_drop_factor = parse_number<double>(key, v);
    else if (key == "train.batch_size") c.batch_size = parse_number<std::size_t>(key, v);
    else if (key == "train.seed") c.seed = parse_number<std::uint64_t>(key, v);
    else return false;
    return true;
}

ModelConfig model_config_from(const Metadata& meta) {
    ModelConfig cfg;
    std::size_t seen = 0;
    for (const auto& [k, v] : meta) {
        if (k.rfind("model.", 0) != 0) continue;
        if (!apply_model_setting(cfg, k, v)) throw ConfigError("unknown model setting '" + k + "'");
        ++seen;
    }
    if (seen == 0) throw ConfigError("metadata carries no model.* settings");
    cfg.validate();
    return cfg;
}

}  // namespace sattag
