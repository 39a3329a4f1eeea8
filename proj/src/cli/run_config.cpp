#include "sattag/cli.hpp"

#include <fstream>
#include <sstream>

namespace sattag {

namespace {

std::string trim(const std::string& s) {
    const auto b = s.find_first_not_of(" \t\r");
    if (b == std::string::npos) return "";
    const auto e = s.find_last_not_of(" \t\r");
    return s.substr(b, e - b + 1);
}

bool apply_data_setting(DataConfig& d, const std::string& key, const std::string& v) {
    if (key == "data.annotations") d.annotations = v;
    else if (key == "data.audio_root") d.audio_root = v;
    else if (key == "data.train_list") d.train_list = v;
    else if (key == "data.valid_list") d.valid_list = v;
    else if (key == "data.test_list") d.test_list = v;
    else if (key == "data.cache_dir") d.cache_dir = v;
    else return false;
    return true;
}

}  // namespace

Metadata data_settings(const DataConfig& d) {
    return {{"data.annotations", d.annotations.string()}, {"data.audio_root", d.audio_root.string()},
            {"data.train_list", d.train_list.string()},   {"data.valid_list", d.valid_list.string()},
            {"data.test_list", d.test_list.string()},     {"data.cache_dir", d.cache_dir.string()}};
}

RunConfig parse_run_config(const std::string& text, const std::string& source) {
    RunConfig cfg;
    std::istringstream in(text);
    std::string line;
    for (std::size_t line_no = 1; std::getline(in, line); ++line_no) {
        const auto hash = line.find('#');
        if (hash != std::string::npos) line.resize(hash);
        line = trim(line);
        if (line.empty()) continue;
        const auto where = source + ":" + std::to_string(line_no) + ": ";
        const auto eq = line.find('=');
        if (eq == std::string::npos) throw ConfigError(where + "expected key=value, got '" + line + "'");
        const std::string key = trim(line.substr(0, eq)), value = trim(line.substr(eq + 1));
        if (!cfg.explicit_keys.insert(key).second) throw ConfigError(where + "duplicate key " + key);
        try {
            const bool known = apply_model_setting(cfg.model, key, value) ||
                               apply_train_setting(cfg.train, key, value) ||
                               apply_data_setting(cfg.data, key, value);
            if (!known) throw ConfigError("unknown key " + key);
        } catch (const ConfigError& e) {
            throw ConfigError(where + e.what());
        }
    }
    return cfg;
}

RunConfig load_run_config(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open config " + path.string());
    std::stringstream ss;
    ss << in.rdbuf();
    RunConfig cfg = parse_run_config(ss.str(), path.string());
    // Relative data paths resolve against the config file's directory.
    const auto base = path.parent_path();
    for (auto* p : {&cfg.data.annotations, &cfg.data.audio_root, &cfg.data.train_list, &cfg.data.valid_list,
                    &cfg.data.test_list, &cfg.data.cache_dir}) {
        if (!p->empty() && p->is_relative()) *p = base / *p;
    }
    return cfg;
}

std::string format_run_config(const RunConfig& cfg) {
    std::string out;
    for (const auto& set : {model_settings(cfg.model), train_settings(cfg.train), data_settings(cfg.data)}) {
        for (const auto& [k, v] : set) out += k + "=" + v + "\n";
    }
    return out;
}

}  // namespace sattag
