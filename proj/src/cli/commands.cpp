#include "sattag/cli.hpp"
#include "sattag/interpret.hpp"
#include "sattag/wav.hpp"

#include <CLI11.hpp>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <ostream>
#include <sstream>
#include <cctype>

namespace sattag {

namespace {

std::string fixed4(double v) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.4f", v);
    return buf;
}

std::string join(const std::vector<std::string>& items, const char* sep = ",") {
    std::string out;
    for (std::size_t i = 0; i < items.size(); ++i) out += (i ? sep : "") + items[i];
    return out;
}

std::vector<std::string> split_commas(const std::string& s) {
    std::vector<std::string> out;
    std::string item;
    std::istringstream in(s);
    while (std::getline(in, item, ',')) out.push_back(item);
    return out;
}

InputKind input_kind(const ModelConfig& m) { return m.frontend == Frontend::Spec ? InputKind::Spec : InputKind::Raw; }

std::size_t chunk_length(const ModelConfig& m) {
    return m.frontend == Frontend::Spec ? m.input_frames : m.input_samples;
}

struct LoadedData {
    ClipTable table;
};

LoadedData load_data(const DataConfig& data, std::ostream& out) {
    if (data.annotations.empty()) throw ConfigError("data.annotations is not set");
    const auto root = data.audio_root.empty() ? data.annotations.parent_path() : data.audio_root;
    LoadedData d{load_annotations(data.annotations, root)};
    if (!d.table.missing_audio.empty()) {
        throw IoError(std::to_string(d.table.missing_audio.size()) + " clips have no audio file, first: " +
                      d.table.missing_audio.front());
    }
    std::optional<SplitLists> lists;
    if (!data.train_list.empty() || !data.valid_list.empty() || !data.test_list.empty()) {
        SplitLists l;
        if (!data.train_list.empty()) l.train = read_id_list(data.train_list);
        if (!data.valid_list.empty()) l.valid = read_id_list(data.valid_list);
        if (!data.test_list.empty()) l.test = read_id_list(data.test_list);
        lists = std::move(l);
    }
    assign_splits(d.table, lists);
    if (d.table.dropped_untagged > 0) out << "dropped " << d.table.dropped_untagged << " untagged clips\n";
    return d;
}

FeatureSet split_features(const ClipTable& table, Split split, const ModelConfig& model, const DataConfig& data,
                          std::ostream& out) {
    std::optional<std::filesystem::path> cache;
    if (!data.cache_dir.empty() && model.frontend == Frontend::Spec) {
        std::filesystem::create_directories(data.cache_dir);
        cache = data.cache_dir;
    }
    FeatureSet set = build_features(table.in_split(split), input_kind(model), chunk_length(model), cache);
    if (set.skipped_short > 0) {
        out << "warning: skipped " << set.skipped_short << " " << split_name(split)
            << " clips shorter than one chunk\n";
    }
    return set;
}

DataConfig data_from(const Checkpoint& ckpt) {
    DataConfig d;
    const auto get = [&](const char* key) { return ckpt.find(key).value_or(""); };
    d.annotations = get("data.annotations");
    d.audio_root = get("data.audio_root");
    d.train_list = get("data.train_list");
    d.valid_list = get("data.valid_list");
    d.test_list = get("data.test_list");
    d.cache_dir = get("data.cache_dir");
    return d;
}

struct LoadedModel {
    Model model;
    std::vector<std::string> tags;
};

LoadedModel model_from(const Checkpoint& ckpt) {
    ModelConfig cfg;
    try {
        cfg = model_config_from(ckpt.meta);
    } catch (const ConfigError& e) {
        throw CheckpointError(CheckpointError::Kind::Incompatible, std::string("checkpoint model settings: ") + e.what());
    }
    LoadedModel lm{Model(cfg), split_commas(ckpt.find("data.tags").value_or(""))};
    if (lm.tags.size() != cfg.n_tags) {
        throw CheckpointError(CheckpointError::Kind::Incompatible,
                              "checkpoint lists " + std::to_string(lm.tags.size()) + " tag names for " +
                                  std::to_string(cfg.n_tags) + " outputs");
    }
    restore(lm.model, ckpt);
    return lm;
}

// ---- synth ----

struct SynthArgs {
    std::uint64_t seed = 0;
    std::size_t n_clips = 32;
    double duration = 4.2;
    std::string out;
};

int cmd_synth(const SynthArgs& a, std::ostream& out) {
    SynthSpec spec;
    spec.seed = a.seed;
    spec.n_clips = a.n_clips;
    spec.duration_seconds = a.duration;
    const SynthSummary s = synth_corpus(spec, a.out);
    out << "clips: " << s.n_clips << "\n";
    out << "annotations: " << s.csv_path.string() << "\n";
    const auto& names = synth_tag_names();
    for (std::size_t t = 0; t < names.size(); ++t) out << "tag " << names[t] << " " << s.tag_counts[t] << "\n";
    return kExitOk;
}

// ---- train ----

struct TrainArgs {
    std::string config;
    std::string out;
    std::string resume;
    int stop_after = 0;
};

int cmd_train(const TrainArgs& a, std::ostream& out) {
    RunConfig rc = load_run_config(a.config);
    const LoadedData data = load_data(rc.data, out);
    const auto& tags = data.table.tag_names;
    if (rc.explicit_keys.count("model.n_tags") && rc.model.n_tags != tags.size()) {
        throw ConfigError("model.n_tags = " + std::to_string(rc.model.n_tags) + " but the annotations carry " +
                          std::to_string(tags.size()) + " tags");
    }
    rc.model.n_tags = tags.size();
    rc.model.validate();
    rc.train.validate();

    const FeatureSet train_set = split_features(data.table, Split::Train, rc.model, rc.data, out);
    const FeatureSet valid_set = split_features(data.table, Split::Valid, rc.model, rc.data, out);
    Model model(rc.model, rc.train.seed);
    out << "model " << rc.model.name() << " heads=" << rc.model.n_heads << " layers=" << rc.model.n_att_layers
        << " d_model=" << rc.model.d_model << " params=" << model.parameter_count() << "\n";
    out << "clips train=" << train_set.size() << " valid=" << valid_set.size() << "\n";

    TrainOptions opts;
    opts.extra_metadata = data_settings(rc.data);
    opts.extra_metadata.emplace_back("data.tags", join(tags));
    if (!a.resume.empty()) {
        Checkpoint r = load_checkpoint(a.resume);
        const ModelConfig saved = model_from(r).model.config();
        if (model_settings(saved) != model_settings(rc.model)) {
            throw CheckpointError(CheckpointError::Kind::Incompatible, "resume checkpoint was written for a different model");
        }
        out << "resuming after epoch " << r.epoch << "\n";
        opts.resume = std::move(r);
    }
    if (a.stop_after > 0) opts.stop_after = a.stop_after;
    opts.hooks.on_epoch_end = [&](const EpochRecord& r, const Model&) {
        char buf[200];
        std::snprintf(buf, sizeof buf, "epoch %d phase=%s lr=%g train_loss=%.6f val_auroc=%.4f val_aupr=%.4f best=%d\n",
                      r.epoch, optimizer_name(r.phase), r.lr, r.train_loss, r.val_auroc, r.val_aupr, r.best_epoch);
        out << buf << std::flush;
    };

    const TrainResult res = train(model, train_set, valid_set, tags, rc.train, opts);
    const std::filesystem::path dir(a.out);
    std::filesystem::create_directories(dir);
    save_checkpoint(res.best, dir / "best.ckpt");
    save_checkpoint(res.last, dir / "final.ckpt");
    write_log_csv(dir / "log.csv", res.log, opts.resume.has_value());
    out << "best epoch " << res.best.best_epoch << " val_auroc=" << fixed4(res.best.best_val_auroc) << "\n";
    return kExitOk;
}

// ---- eval ----

struct EvalArgs {
    std::string checkpoint;
    std::string split = "test";
    std::string out;
};

int cmd_eval(const EvalArgs& a, std::ostream& out) {
    const Checkpoint ckpt = load_checkpoint(a.checkpoint);
    LoadedModel lm = model_from(ckpt);
    const Split split = parse_split(a.split);
    const DataConfig dc = data_from(ckpt);
    const LoadedData data = load_data(dc, out);
    if (data.table.tag_names != lm.tags) {
        throw CheckpointError(CheckpointError::Kind::Incompatible, "annotation tags do not match the checkpoint tags");
    }
    const FeatureSet set = split_features(data.table, split, lm.model.config(), dc, out);
    const std::size_t batch = static_cast<std::size_t>(std::stoul(ckpt.find("train.batch_size").value_or("16")));
    const EvalReport r = evaluate(lm.model, set, batch, lm.tags);

    out << "split " << split_name(split) << " clips=" << r.n_clips << "\n";
    out << "macro_auroc=" << fixed4(r.macro_auroc) << " macro_aupr=" << fixed4(r.macro_aupr) << "\n";

    std::vector<std::size_t> order(lm.tags.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    std::stable_sort(order.begin(), order.end(), [&](std::size_t x, std::size_t y) {
        const double ax = r.tag_auroc[x].value_or(-1.0), ay = r.tag_auroc[y].value_or(-1.0);
        return ax > ay;
    });
    std::filesystem::path csv = a.out;
    if (csv.empty()) {
        csv = std::filesystem::path(a.checkpoint).parent_path() / (std::string("eval_") + split_name(split) + ".csv");
    }
    std::ofstream f(csv, std::ios::trunc);
    if (!f) throw IoError("cannot write " + csv.string());
    f << "tag,auroc,aupr\n";
    const auto cell = [](const std::optional<double>& v) {
        if (!v) return std::string("nan");
        char buf[32];
        std::snprintf(buf, sizeof buf, "%.6f", *v);
        return std::string(buf);
    };
    for (std::size_t i : order) f << lm.tags[i] << ',' << cell(r.tag_auroc[i]) << ',' << cell(r.tag_aupr[i]) << '\n';
    if (!f) throw IoError("short write to " + csv.string());
    out << "per-tag metrics: " << csv.string() << "\n";
    return kExitOk;
}

// ---- visualize ----

struct VisualizeArgs {
    std::string checkpoint;
    std::string audio;
    std::string audio2;
    std::vector<std::string> tags;
    std::string out;
};

struct ClipView {
    Tensor input;
    MelSpectrogram display;
};

ClipView clip_view(const std::filesystem::path& path, const ModelConfig& cfg) {
    const AudioBuffer audio = resample(load_wav(path));
    if (cfg.frontend == Frontend::Spec) {
        const MelSpectrogram mel = log_mel(audio);
        if (mel.frames < cfg.input_frames) {
            throw ConfigError(path.string() + " yields " + std::to_string(mel.frames) + " frames, the model needs " +
                              std::to_string(cfg.input_frames));
        }
        const MelSpectrogram chunk = chunk_spec(mel, 0, cfg.input_frames);
        return {spec_input(chunk), chunk};
    }
    if (audio.samples.size() < cfg.input_samples) {
        throw ConfigError(path.string() + " holds " + std::to_string(audio.samples.size()) +
                          " samples, the model needs " + std::to_string(cfg.input_samples));
    }
    const AudioBuffer chunk = chunk_raw(audio, 0, cfg.input_samples);
    return {Tensor(Shape{1, 1, cfg.input_samples}, chunk.samples), log_mel(chunk)};
}

std::string file_safe(const std::string& tag) {
    std::string s = tag;
    for (char& c : s) {
        if (!std::isalnum(static_cast<unsigned char>(c)) && c != '-' && c != '_') c = '_';
    }
    return s;
}

int cmd_visualize(const VisualizeArgs& a, std::ostream& out) {
    const Checkpoint ckpt = load_checkpoint(a.checkpoint);
    LoadedModel lm = model_from(ckpt);
    const ModelConfig& cfg = lm.model.config();
    lm.model.att();  // attention back-end required
    for (const auto& tag : a.tags) {
        if (std::find(lm.tags.begin(), lm.tags.end(), tag) == lm.tags.end()) {
            throw ConfigError("unknown tag '" + tag + "'; valid tags: " + join(lm.tags, ", "));
        }
    }
    const std::filesystem::path dir(a.out);
    std::filesystem::create_directories(dir);

    ClipView view = clip_view(a.audio, cfg);
    if (!a.audio2.empty()) {
        if (cfg.frontend != Frontend::Spec) throw ConfigError("two-audio visualization needs a spec front-end model");
        const ClipView second = clip_view(a.audio2, cfg);
        if (cfg.frame_capacity() < 2 * cfg.input_frames) {
            throw ConfigError("concatenated input has " + std::to_string(2 * cfg.input_frames) +
                              " frames but the positional table holds " + std::to_string(cfg.frame_capacity()) +
                              "; train with model.max_frames >= " + std::to_string(2 * cfg.input_frames));
        }
        view.display = concat_inputs(view.display, second.display);
        view.input = spec_input(view.display);
    } else {
        const HeatMap map = attention_heat_map(lm.model, view.input);
        render_heat_map(map, view.display, dir / "attention.ppm");
        out << "attention " << (dir / "attention.ppm").string() << " bins=" << map.scores.size() << "\n";
    }
    const std::vector<HeatMap> maps = tagwise_contributions(lm.model, view.input, a.tags, lm.tags);
    for (const HeatMap& map : maps) {
        const auto path = dir / ("contribution_" + file_safe(map.label) + ".ppm");
        render_heat_map(map, view.display, path);
        out << "contribution " << map.label << " " << path.string() << " bins=" << map.scores.size() << "\n";
    }
    return kExitOk;
}

int exit_code_for(const std::exception& e) {
    if (dynamic_cast<const CheckpointError*>(&e)) return kExitCheckpoint;
    if (dynamic_cast<const NumericalError*>(&e)) return kExitNumerical;
    if (dynamic_cast<const IoError*>(&e) || dynamic_cast<const std::filesystem::filesystem_error*>(&e)) return kExitIo;
    return kExitUsage;
}

}  // namespace

int run_cli(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
    CLI::App app{"Music tagging with attention: synthesize, train, evaluate, visualize", "sattag"};
    app.require_subcommand(1);

    SynthArgs synth;
    auto* s = app.add_subcommand("synth", "Write a seeded synthetic corpus (WAV clips plus annotations.csv)");
    s->add_option("--seed", synth.seed, "Corpus seed")->capture_default_str();
    s->add_option("--n-clips", synth.n_clips, "Number of clips")->capture_default_str()->check(CLI::PositiveNumber);
    s->add_option("--duration", synth.duration, "Clip length in seconds")->capture_default_str()->check(CLI::PositiveNumber);
    s->add_option("--out", synth.out, "Output directory")->required();

    TrainArgs tr;
    auto* t = app.add_subcommand("train", "Train a model from a key=value run config");
    t->add_option("--config", tr.config, "Run config file (model.*, train.*, data.* keys)")->required();
    t->add_option("--out", tr.out, "Output directory for best.ckpt, final.ckpt and log.csv")->required();
    t->add_option("--resume", tr.resume, "Continue from a final.ckpt written by the same config");
    t->add_option("--stop-after", tr.stop_after, "Stop after this epoch (resumable)")->check(CLI::PositiveNumber);

    EvalArgs ev;
    auto* e = app.add_subcommand("eval", "Report macro and per-tag AUROC / AUPR for a split");
    e->add_option("--checkpoint", ev.checkpoint, "Checkpoint to evaluate")->required();
    e->add_option("--split", ev.split, "train, valid or test")->capture_default_str();
    e->add_option("--out", ev.out, "Per-tag CSV path (default: eval_<split>.csv next to the checkpoint)");

    VisualizeArgs vis;
    auto* v = app.add_subcommand("visualize", "Attention and tag-wise contribution heat maps");
    v->add_option("--checkpoint", vis.checkpoint, "Checkpoint of an attention model")->required();
    v->add_option("--audio", vis.audio, "WAV clip")->required();
    v->add_option("--audio2", vis.audio2, "Second WAV clip, concatenated after the first");
    v->add_option("--tag", vis.tags, "Tag for a contribution map (repeatable)");
    v->add_option("--out", vis.out, "Output directory")->required();

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& pe) {
        const int code = app.exit(pe, out, err);
        return code == 0 ? kExitOk : kExitUsage;
    }

    try {
        if (s->parsed()) return cmd_synth(synth, out);
        if (t->parsed()) return cmd_train(tr, out);
        if (e->parsed()) return cmd_eval(ev, out);
        return cmd_visualize(vis, out);
    } catch (const std::exception& ex) {
        err << "error: " << ex.what() << "\n";
        return exit_code_for(ex);
    }
}

}  // namespace sattag
