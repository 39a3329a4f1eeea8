#include "sattag/trainer.hpp"

#include <cmath>
#include <cstdio>
#include <fstream>
#include <limits>
#include <random>

namespace sattag {

void TrainConfig::validate() const {
    if (adam_epochs < 0) throw ConfigError("train.adam_epochs must be >= 0");
    if (adam_epochs >= total_epochs) {
        throw ConfigError("train.adam_epochs (" + std::to_string(adam_epochs) + ") must be below train.total_epochs (" +
                          std::to_string(total_epochs) + ")");
    }
    for (std::size_t i = 0; i < lr_drop_epochs.size(); ++i) {
        if (lr_drop_epochs[i] <= adam_epochs) {
            throw ConfigError("train.lr_drop_epochs entry " + std::to_string(lr_drop_epochs[i]) +
                              " falls inside the ADAM phase");
        }
        if (i > 0 && lr_drop_epochs[i] <= lr_drop_epochs[i - 1]) {
            throw ConfigError("train.lr_drop_epochs must be strictly increasing");
        }
    }
    if (!(adam_lr > 0.0) || !(sgd_lr > 0.0)) throw ConfigError("learning rates must be positive");
    if (!(lr_drop_factor > 0.0)) throw ConfigError("train.lr_drop_factor must be positive");
    if (!(beta1 >= 0.0 && beta1 < 1.0) || !(beta2 >= 0.0 && beta2 < 1.0)) {
        throw ConfigError("ADAM betas must lie in [0, 1)");
    }
    if (!(sgd_momentum >= 0.0 && sgd_momentum < 1.0)) throw ConfigError("train.sgd_momentum must lie in [0, 1)");
    if (batch_size == 0) throw ConfigError("train.batch_size must be positive");
}

OptimizerKind TrainConfig::phase(int epoch) const {
    return epoch <= adam_epochs ? OptimizerKind::Adam : OptimizerKind::Sgd;
}

double TrainConfig::learning_rate(int epoch) const {
    if (phase(epoch) == OptimizerKind::Adam) return adam_lr;
    double lr = sgd_lr;
    for (int d : lr_drop_epochs) {
        if (d < epoch) lr *= lr_drop_factor;
    }
    return lr;
}

bool TrainConfig::reloads_at(int epoch) const {
    if (adam_epochs > 0 && epoch == adam_epochs + 1) return true;
    for (int d : lr_drop_epochs) {
        if (epoch == d + 1) return true;
    }
    return false;
}

std::vector<std::vector<double>> predict_clips(Model& model, const FeatureSet& set, std::size_t batch_size) {
    const std::size_t n_tags = model.config().n_tags;
    std::vector<std::vector<double>> sums(set.size(), std::vector<double>(n_tags, 0.0));
    std::vector<std::size_t> chunks(set.size(), 0);
    BatchStream stream(set, batch_size, BatchMode::Eval, 0);
    Batch batch;
    while (stream.next(batch)) {
        const Tensor probs = sigmoid(model.forward(batch.input).logits);
        const auto p = probs.data();
        for (std::size_t i = 0; i < batch.clip_index.size(); ++i) {
            const std::size_t clip = batch.clip_index[i];
            for (std::size_t t = 0; t < n_tags; ++t) sums[clip][t] += p[i * n_tags + t];
            ++chunks[clip];
        }
    }
    for (std::size_t c = 0; c < sums.size(); ++c) {
        for (double& s : sums[c]) s /= static_cast<double>(chunks[c]);
    }
    return sums;
}

EvalReport evaluate(Model& model, const FeatureSet& set, std::size_t batch_size,
                    const std::vector<std::string>& tag_names) {
    if (set.size() == 0) throw ConfigError("cannot evaluate an empty split");
    if (tag_names.size() != model.config().n_tags) {
        throw ConfigError(std::to_string(tag_names.size()) + " tag names for a model with " +
                          std::to_string(model.config().n_tags) + " outputs");
    }
    return make_report(predict_clips(model, set, batch_size), set.labels, tag_names);
}

namespace {

struct EpochSeeds {
    std::uint64_t shuffle;
    std::uint64_t dropout;
};

// Derived from (seed, epoch) alone, so a resumed run draws the same numbers.
EpochSeeds epoch_seeds(std::uint64_t seed, int epoch) {
    std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                      static_cast<std::uint32_t>(epoch), 0x7A1Au};
    std::array<std::uint32_t, 4> words{};
    seq.generate(words.begin(), words.end());
    return {(std::uint64_t{words[0]} << 32) | words[1], (std::uint64_t{words[2]} << 32) | words[3]};
}

bool has_defined_tag(const FeatureSet& set) {
    for (std::size_t t = 0; t < set.n_tags(); ++t) {
        bool pos = false, neg = false;
        for (const auto& l : set.labels) (l[t] > 0.5 ? pos : neg) = true;
        if (pos && neg) return true;
    }
    return false;
}

}  // namespace

TrainResult train(Model& model, const FeatureSet& train_set, const FeatureSet& valid_set,
                  const std::vector<std::string>& tag_names, const TrainConfig& cfg, const TrainOptions& opts) {
    cfg.validate();
    if (train_set.size() == 0) throw ConfigError("training split is empty");
    if (valid_set.size() == 0) throw ConfigError("validation split is empty");
    if (!has_defined_tag(valid_set)) {
        throw ConfigError("validation split has no tag with both positive and negative clips; AUROC is undefined");
    }
    if (train_set.n_tags() != model.config().n_tags || valid_set.n_tags() != model.config().n_tags) {
        throw ConfigError("label width does not match model.n_tags = " + std::to_string(model.config().n_tags));
    }

    std::vector<Tensor> params = model.parameter_tensors();
    AdamState adam = AdamState::for_params(params, cfg.adam_lr, cfg.beta1, cfg.beta2);
    SgdState sgd = SgdState::for_params(params, cfg.sgd_lr, cfg.sgd_momentum, cfg.nesterov);
    std::optional<OptimizerKind> current;
    TensorTable best_params, best_buffers;
    int best_epoch = 0;
    double best_auroc = -std::numeric_limits<double>::infinity();
    int first = 1;

    if (opts.resume) {
        const Checkpoint& r = *opts.resume;
        restore(model, r);
        current = r.optimizer;
        if (r.optimizer == OptimizerKind::Adam) adam = r.adam;
        if (r.optimizer == OptimizerKind::Sgd) sgd = r.sgd;
        best_params = r.best_params;
        best_buffers = r.best_buffers;
        best_epoch = r.best_epoch;
        best_auroc = r.best_val_auroc;
        first = r.epoch + 1;
        if (best_params.empty() && first > 1) throw ConfigError("resume checkpoint carries no best-model snapshot");
    }
    const int last = opts.stop_after ? std::min(*opts.stop_after, cfg.total_epochs) : cfg.total_epochs;

    TrainResult result;
    int reached = first - 1;
    for (int epoch = first; epoch <= last; ++epoch) {
        EpochStart start{epoch, cfg.phase(epoch), cfg.learning_rate(epoch), std::nullopt};
        if (cfg.reloads_at(epoch) && best_epoch > 0) {
            best_params.restore_into(model.parameters());
            best_buffers.restore_into(model.buffers());
            sgd = SgdState::for_params(params, start.lr, cfg.sgd_momentum, cfg.nesterov);
            start.reloaded_from = best_epoch;
        } else if (start.phase == OptimizerKind::Sgd && current != OptimizerKind::Sgd) {
            sgd = SgdState::for_params(params, start.lr, cfg.sgd_momentum, cfg.nesterov);
        }
        (start.phase == OptimizerKind::Adam ? adam.lr : sgd.lr) = start.lr;
        current = start.phase;
        if (opts.hooks.on_epoch_start) opts.hooks.on_epoch_start(start, model);

        const EpochSeeds seeds = epoch_seeds(cfg.seed, epoch);
        BatchStream stream(train_set, cfg.batch_size, BatchMode::Train, seeds.shuffle);
        std::mt19937_64 dropout_rng(seeds.dropout);
        Batch batch;
        double loss_sum = 0.0;
        std::size_t seen = 0, step = 0;
        while (stream.next(batch)) {
            ++step;
            zero_grads(params);
            Tape tape;
            double loss_value = 0.0;
            {
                Tape::Scope scope(tape);
                ForwardOptions fo;
                fo.training = true;
                fo.rng = &dropout_rng;
                const Tensor loss = bce_loss(sigmoid(model.forward(batch.input, fo).logits), batch.labels);
                loss_value = loss.data()[0];
                if (!std::isfinite(loss_value)) {
                    throw NumericalError("non-finite training loss (" + std::to_string(loss_value) + ") at epoch " +
                                         std::to_string(epoch) + ", step " + std::to_string(step));
                }
                backward(loss, tape);
            }
            if (start.phase == OptimizerKind::Adam) {
                adam_step(params, adam);
            } else {
                sgd_step(params, sgd);
            }
            loss_sum += loss_value * static_cast<double>(batch.clip_index.size());
            seen += batch.clip_index.size();
        }

        EvalReport report = evaluate(model, valid_set, cfg.batch_size, tag_names);
        if (opts.hooks.on_validation) opts.hooks.on_validation(epoch, report);
        if (report.macro_auroc > best_auroc) {
            best_auroc = report.macro_auroc;
            best_epoch = epoch;
            best_params = TensorTable::capture(model.parameters());
            best_buffers = TensorTable::capture(model.buffers());
        }
        EpochRecord rec{epoch,        start.phase,       start.lr,   loss_sum / static_cast<double>(seen),
                        report.macro_auroc, report.macro_aupr, best_epoch, best_auroc};
        result.log.push_back(rec);
        if (opts.hooks.on_epoch_end) opts.hooks.on_epoch_end(rec, model);
        reached = epoch;
        if (opts.hooks.stop_early && opts.hooks.stop_early(rec, model)) break;
    }

    Metadata meta = model_settings(model.config());
    for (auto& kv : train_settings(cfg)) meta.push_back(std::move(kv));
    for (const auto& kv : opts.extra_metadata) meta.push_back(kv);

    result.last = snapshot(model);
    result.last.meta = meta;
    result.last.epoch = reached;
    result.last.best_epoch = best_epoch;
    result.last.best_val_auroc = best_auroc;
    result.last.optimizer = current;
    result.last.adam = adam;
    result.last.sgd = sgd;
    result.last.best_params = best_params;
    result.last.best_buffers = best_buffers;

    result.best.meta = meta;
    result.best.epoch = best_epoch;
    result.best.best_epoch = best_epoch;
    result.best.best_val_auroc = best_auroc;
    result.best.params = best_params;
    result.best.buffers = best_buffers;
    return result;
}

std::string log_csv_header() { return "epoch,phase,lr,train_loss,val_auroc,val_aupr"; }

std::string log_csv_row(const EpochRecord& r) {
    char buf[160];
    std::snprintf(buf, sizeof buf, "%d,%s,%.6g,%.8f,%.6f,%.6f", r.epoch, optimizer_name(r.phase), r.lr, r.train_loss,
                  r.val_auroc, r.val_aupr);
    return buf;
}

void write_log_csv(const std::filesystem::path& path, const std::vector<EpochRecord>& log, bool append) {
    const bool header = !append || !std::filesystem::exists(path) || std::filesystem::file_size(path) == 0;
    std::ofstream out(path, append ? std::ios::app : std::ios::trunc);
    if (!out) throw IoError("cannot write learning-curve log " + path.string());
    if (header) out << log_csv_header() << '\n';
    for (const auto& r : log) out << log_csv_row(r) << '\n';
    if (!out) throw IoError("short write to " + path.string());
}

}  // namespace sattag
