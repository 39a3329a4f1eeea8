#pragma once

#include "sattag/errors.hpp"
#include "sattag/layers.hpp"
#include "sattag/model.hpp"
#include "sattag/optim.hpp"

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <utility>
#include <vector>

namespace sattag {

inline constexpr std::uint32_t kCheckpointVersion = 1;

using Metadata = std::vector<std::pair<std::string, std::string>>;

enum class OptimizerKind { Adam, Sgd };
const char* optimizer_name(OptimizerKind k);  // "adam" | "sgd"

class CheckpointError : public Error {
public:
    enum class Kind { BadMagic, UnsupportedVersion, Truncated, ChecksumMismatch, Malformed, Incompatible };
    CheckpointError(Kind kind, const std::string& what) : Error(what), kind_(kind) {}
    Kind kind() const { return kind_; }

private:
    Kind kind_;
};

// Deep copies of named tensors.
struct TensorTable {
    std::vector<std::string> names;
    std::vector<Shape> shapes;
    std::vector<std::vector<double>> values;

    static TensorTable capture(const std::vector<NamedTensor>& tensors);
    // Names and shapes must match in order.
    void restore_into(std::vector<NamedTensor>& tensors) const;
    bool empty() const { return names.empty(); }
};

struct Checkpoint {
    std::uint32_t version = kCheckpointVersion;
    Metadata meta;
    int epoch = 0;
    int best_epoch = 0;
    double best_val_auroc = 0.0;
    TensorTable params;
    TensorTable buffers;
    std::optional<OptimizerKind> optimizer;
    AdamState adam;
    SgdState sgd;
    // Best-so-far snapshot carried by resumable checkpoints.
    TensorTable best_params;
    TensorTable best_buffers;

    std::optional<std::string> find(const std::string& key) const;
};

// Parameters and batch-norm statistics of a live model.
Checkpoint snapshot(const Model& model);
void restore(Model& model, const Checkpoint& ckpt);

// FNV-1a over parameter names, shapes and value bits.
std::uint64_t parameter_hash(const Model& model);
std::uint64_t parameter_hash(const TensorTable& table);

std::vector<std::uint8_t> encode_checkpoint(const Checkpoint& ckpt);
Checkpoint decode_checkpoint(const std::vector<std::uint8_t>& bytes);
void save_checkpoint(const Checkpoint& ckpt, const std::filesystem::path& path);
// IoError when the file cannot be read; CheckpointError for bad contents.
Checkpoint load_checkpoint(const std::filesystem::path& path);

}  // namespace sattag
