#pragma once

#include "sattag/checkpoint.hpp"
#include "sattag/data.hpp"
#include "sattag/metrics.hpp"
#include "sattag/model.hpp"

#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <vector>

namespace sattag {

struct TrainConfig {
    int adam_epochs = 60;
    int total_epochs = 120;
    double adam_lr = 1e-4;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double sgd_lr = 1e-4;
    double sgd_momentum = 0.9;
    bool nesterov = true;
    // A drop listed at epoch d applies from epoch d + 1 onward; the first
    // epoch at the new rate starts from the best parameters so far.
    std::vector<int> lr_drop_epochs = {80, 100};
    double lr_drop_factor = 0.1;
    std::size_t batch_size = 16;
    std::uint64_t seed = 0;

    void validate() const;
    OptimizerKind phase(int epoch) const;
    double learning_rate(int epoch) const;
    // True when the epoch begins by restoring the best checkpoint: the first
    // SGD epoch and the first epoch after each drop.
    bool reloads_at(int epoch) const;
};

struct EpochRecord {
    int epoch = 0;
    OptimizerKind phase = OptimizerKind::Adam;
    double lr = 0.0;
    double train_loss = 0.0;
    double val_auroc = 0.0;
    double val_aupr = 0.0;
    int best_epoch = 0;
    double best_val_auroc = 0.0;
};

struct EpochStart {
    int epoch = 0;
    OptimizerKind phase = OptimizerKind::Adam;
    double lr = 0.0;
    std::optional<int> reloaded_from;  // best epoch restored before this one
};

// Observation points for instrumented runs.
struct TrainHooks {
    std::function<void(const EpochStart&, const Model&)> on_epoch_start;
    // May rewrite the validation report before best-model selection.
    std::function<void(int epoch, EvalReport&)> on_validation;
    std::function<void(const EpochRecord&, const Model&)> on_epoch_end;
    // Returning true ends the run after this epoch, as if stop_after had hit.
    std::function<bool(const EpochRecord&, Model&)> stop_early;
};

struct TrainOptions {
    TrainHooks hooks;
    // Continue from a checkpoint written by a previous run of the same config.
    std::optional<Checkpoint> resume;
    // Stop after this epoch; the returned final checkpoint can be resumed.
    std::optional<int> stop_after;
    // Key/value pairs copied into every checkpoint (data paths, tag names).
    Metadata extra_metadata;
};

struct TrainResult {
    Checkpoint best;
    Checkpoint last;
    std::vector<EpochRecord> log;
};

// Per-clip sigmoid scores averaged over every non-overlapping chunk.
std::vector<std::vector<double>> predict_clips(Model& model, const FeatureSet& set, std::size_t batch_size);

EvalReport evaluate(Model& model, const FeatureSet& set, std::size_t batch_size,
                    const std::vector<std::string>& tag_names);

TrainResult train(Model& model, const FeatureSet& train_set, const FeatureSet& valid_set,
                  const std::vector<std::string>& tag_names, const TrainConfig& cfg, const TrainOptions& opts = {});

// Learning-curve CSV: epoch,phase,lr,train_loss,val_auroc,val_aupr
std::string log_csv_header();
std::string log_csv_row(const EpochRecord& r);
void write_log_csv(const std::filesystem::path& path, const std::vector<EpochRecord>& log, bool append = false);

// Flat key=value echoes shared by checkpoints and run-config files.
Metadata model_settings(const ModelConfig& cfg);
Metadata train_settings(const TrainConfig& cfg);
// False for a key outside the section; ConfigError for a malformed value.
bool apply_model_setting(ModelConfig& cfg, const std::string& key, const std::string& value);
bool apply_train_setting(TrainConfig& cfg, const std::string& key, const std::string& value);
ModelConfig model_config_from(const Metadata& meta);

}  // namespace sattag
