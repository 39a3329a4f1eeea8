#include "sattag/errors.hpp"
#include "sattag/interpret.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>

namespace sattag {

namespace {

void require_single_clip(const Tensor& input) {
    if (input.rank() < 3 || input.dim(0) != 1) {
        throw DimensionError("heat maps take one clip, got input " + to_string(input.shape()));
    }
}

void set_range(HeatMap& map) {
    if (map.scores.empty()) return;
    const auto [lo, hi] = std::minmax_element(map.scores.begin(), map.scores.end());
    map.render_min = *lo;
    map.render_max = *hi;
}

std::size_t tag_index(const std::string& tag, const std::vector<std::string>& tag_names) {
    const auto it = std::find(tag_names.begin(), tag_names.end(), tag);
    if (it != tag_names.end()) return static_cast<std::size_t>(it - tag_names.begin());
    std::string valid;
    for (const auto& n : tag_names) valid += (valid.empty() ? "" : ", ") + n;
    throw ConfigError("unknown tag '" + tag + "'; valid tags: " + valid);
}

// [T × n_tags] probabilities, row t-1 for a CLS row pinned on key t.
std::vector<std::vector<double>> pinned_probabilities(Model& model, const Tensor& input, ContributionRoute route) {
    const AttBackend& att = model.att();
    const Tensor f = model.features(input, false);
    const std::size_t t_len = f.dim(1), s = t_len + 1, n_tags = model.config().n_tags;
    std::vector<std::vector<double>> probs(t_len, std::vector<double>(n_tags));

    if (route == ContributionRoute::Rerun) {
        std::vector<double> one_hot(s, 0.0);
        ForwardOptions opts;
        for (std::size_t t = 1; t < s; ++t) {
            std::fill(one_hot.begin(), one_hot.end(), 0.0);
            one_hot[t] = 1.0;
            opts.last_layer_cls_row = one_hot;
            const Tensor p = sigmoid(att(f, RunMode{}, opts).logits);
            std::copy(p.data().begin(), p.data().end(), probs[t - 1].begin());
        }
        return probs;
    }

    Tensor x = att.embed(f);
    for (std::size_t i = 0; i + 1 < att.layers.size(); ++i) x = att.layers[i](x, RunMode{}).output;
    const EncoderLayer& last = att.layers.back();
    const std::size_t d = x.dim(2);
    // CLS attention output when pinned to key t: (x_t W_v) W_o + b_o.
    const Tensor pinned = reshape(slice(last.attn.w_o(last.attn.w_v(x)), 1, 1, t_len), {t_len, d});
    const Tensor cls_in = reshape(slice(x, 1, 0, 1), {d});
    const Tensor y = last.norm1(add(pinned, cls_in));
    const Tensor z = last.norm2(add(y, last.ff2(relu(last.ff1(y)))));
    const Tensor p = sigmoid(att.classifier(z));
    for (std::size_t t = 0; t < t_len; ++t) {
        std::copy_n(p.data().begin() + static_cast<long>(t * n_tags), n_tags, probs[t].begin());
    }
    return probs;
}

std::uint8_t to_byte(double unit) {
    return static_cast<std::uint8_t>(std::lround(std::clamp(unit, 0.0, 1.0) * 255.0));
}

}  // namespace

HeatMap attention_heat_map(Model& model, const Tensor& input) {
    require_single_clip(input);
    model.att();  // contract check before the forward pass
    const ForwardResult r = model.forward(input);
    const Tensor& a = r.attention.back();  // [1×h×S×S]
    const std::size_t h = a.dim(1), s = a.dim(2);
    HeatMap map;
    map.label = "attention";
    map.scores.assign(s - 1, 0.0);
    for (std::size_t head = 0; head < h; ++head) {
        const auto row = a.data().subspan(head * s * s, s);
        map.cls_self_mass += row[0];
        for (std::size_t t = 1; t < s; ++t) map.scores[t - 1] += row[t];
    }
    set_range(map);
    return map;
}

std::vector<HeatMap> tagwise_contributions(Model& model, const Tensor& input, const std::vector<std::string>& tags,
                                           const std::vector<std::string>& tag_names, ContributionRoute route) {
    require_single_clip(input);
    if (tag_names.size() != model.config().n_tags) {
        throw ConfigError(std::to_string(tag_names.size()) + " tag names for a model with " +
                          std::to_string(model.config().n_tags) + " outputs");
    }
    std::vector<std::size_t> index;
    for (const auto& tag : tags) index.push_back(tag_index(tag, tag_names));
    const auto probs = pinned_probabilities(model, input, route);
    std::vector<HeatMap> maps;
    for (std::size_t k = 0; k < tags.size(); ++k) {
        HeatMap map;
        map.label = tags[k];
        for (const auto& row : probs) map.scores.push_back(row[index[k]]);
        set_range(map);
        maps.push_back(std::move(map));
    }
    return maps;
}

HeatMap tagwise_contribution(Model& model, const Tensor& input, const std::string& tag,
                             const std::vector<std::string>& tag_names, ContributionRoute route) {
    return tagwise_contributions(model, input, {tag}, tag_names, route).front();
}

MelSpectrogram concat_inputs(const MelSpectrogram& a, const MelSpectrogram& b) {
    if (a.n_mels != b.n_mels) {
        throw DimensionError("cannot concatenate log-mels with " + std::to_string(a.n_mels) + " and " +
                             std::to_string(b.n_mels) + " bins");
    }
    MelSpectrogram out;
    out.n_mels = a.n_mels;
    out.frames = a.frames + b.frames;
    out.frame_hop_seconds = a.frame_hop_seconds;
    out.values.reserve(out.n_mels * out.frames);
    for (std::size_t m = 0; m < a.n_mels; ++m) {
        out.values.insert(out.values.end(), a.values.begin() + static_cast<long>(m * a.frames),
                          a.values.begin() + static_cast<long>((m + 1) * a.frames));
        out.values.insert(out.values.end(), b.values.begin() + static_cast<long>(m * b.frames),
                          b.values.begin() + static_cast<long>((m + 1) * b.frames));
    }
    return out;
}

Tensor spec_input(const MelSpectrogram& m) { return Tensor(Shape{1, 1, m.n_mels, m.frames}, m.values); }

Image render_heat_map_image(const HeatMap& map, const MelSpectrogram& spec, std::size_t strip_height) {
    if (map.scores.empty()) throw ContractError("cannot render an empty heat map");
    if (spec.frames == 0) throw ContractError("cannot render against an empty spectrogram");
    Image img;
    img.width = map.scores.size();
    img.height = spec.n_mels + strip_height;
    img.rgb.assign(img.width * img.height * 3, 0);

    const auto [slo, shi] = std::minmax_element(spec.values.begin(), spec.values.end());
    const double spec_span = *shi - *slo;
    const double heat_span = map.render_max - map.render_min;
    for (std::size_t x = 0; x < img.width; ++x) {
        const std::size_t frame = x * spec.frames / img.width;
        for (std::size_t row = 0; row < spec.n_mels; ++row) {
            const double v = spec.at(spec.n_mels - 1 - row, frame);
            const std::uint8_t g = to_byte(spec_span > 0.0 ? (v - *slo) / spec_span : 0.0);
            std::uint8_t* px = &img.rgb[(row * img.width + x) * 3];
            px[0] = px[1] = px[2] = g;
        }
        const std::uint8_t red = to_byte(heat_span > 0.0 ? (map.scores[x] - map.render_min) / heat_span : 1.0);
        for (std::size_t row = spec.n_mels; row < img.height; ++row) img.rgb[(row * img.width + x) * 3] = red;
    }
    return img;
}

std::vector<std::uint8_t> encode_ppm(const Image& image) {
    const std::string header = "P6\n" + std::to_string(image.width) + " " + std::to_string(image.height) + "\n255\n";
    std::vector<std::uint8_t> out(header.begin(), header.end());
    out.insert(out.end(), image.rgb.begin(), image.rgb.end());
    return out;
}

void write_scores_csv(const HeatMap& map, const std::filesystem::path& path) {
    std::ofstream out(path, std::ios::trunc);
    if (!out) throw IoError("cannot write " + path.string());
    out << "time_bin,score\n";
    char buf[40];
    for (std::size_t t = 0; t < map.scores.size(); ++t) {
        std::snprintf(buf, sizeof buf, "%.17g", map.scores[t]);
        out << t << ',' << buf << '\n';
    }
    if (!out) throw IoError("short write to " + path.string());
}

std::vector<double> read_scores_csv(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open " + path.string());
    std::string line;
    std::getline(in, line);
    if (line != "time_bin,score") throw IoError(path.string() + ": expected header time_bin,score");
    std::vector<double> scores;
    while (std::getline(in, line)) {
        const auto comma = line.find(',');
        if (comma == std::string::npos) throw IoError(path.string() + ": malformed row '" + line + "'");
        scores.push_back(std::stod(line.substr(comma + 1)));
    }
    return scores;
}

void render_heat_map(const HeatMap& map, const MelSpectrogram& spec, const std::filesystem::path& path) {
    const auto bytes = encode_ppm(render_heat_map_image(map, spec));
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot write " + path.string());
    out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw IoError("short write to " + path.string());
    auto csv = path;
    write_scores_csv(map, csv.replace_extension(".csv"));
}

}  // namespace sattag
