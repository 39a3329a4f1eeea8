#pragma once

#include "sattag/dsp.hpp"
#include "sattag/tensor.hpp"

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

namespace sattag {

enum class Split { Train, Valid, Test };

const char* split_name(Split s);
Split parse_split(const std::string& name);  // "train" | "valid" | "test"

struct Clip {
    std::string id;
    std::filesystem::path audio_path;
    std::vector<double> tags;  // 0/1 per tag
    Split split = Split::Train;
};

struct ClipTable {
    std::vector<std::string> tag_names;
    std::vector<Clip> clips;
    std::vector<std::size_t> tag_counts;
    std::size_t dropped_untagged = 0;
    std::vector<std::string> missing_audio;  // ids whose file does not exist

    std::size_t n_tags() const { return tag_names.size(); }
    std::vector<Clip> in_split(Split s) const;
};

// CSV header: clip_id,path,<tag>,<tag>,... with 0/1 tag cells. Relative
// paths resolve against audio_root. Rows with no tag set are dropped.
ClipTable load_annotations(const std::filesystem::path& csv_path, const std::filesystem::path& audio_root);

// 64-bit FNV-1a of the id bytes, mod 10: 0-7 train, 8 valid, 9 test.
Split hash_split(const std::string& id);

struct SplitLists {
    std::vector<std::string> train;
    std::vector<std::string> valid;
    std::vector<std::string> test;
};

// One id per line; blank lines and surrounding whitespace ignored.
std::vector<std::string> read_id_list(const std::filesystem::path& path);

// Explicit lists when given (clips absent from every list are removed),
// otherwise the hash rule.
void assign_splits(ClipTable& table, const std::optional<SplitLists>& lists = std::nullopt);

// ---- synthetic corpus ----

struct SynthSpec {
    std::uint64_t seed = 0;
    std::size_t n_clips = 32;
    double duration_seconds = 4.2;
};

// Fixed tag order of the synthetic corpus.
const std::vector<std::string>& synth_tag_names();

// Tag vector the generator assigns to clip i (independent of the seed).
std::vector<double> synth_clip_tags(std::size_t index);

struct SynthSummary {
    std::filesystem::path csv_path;
    std::size_t n_clips = 0;
    std::vector<std::size_t> tag_counts;
};

// Writes <root>/audio/clip_NNNN.wav and <root>/annotations.csv.
SynthSummary synth_corpus(const SynthSpec& spec, const std::filesystem::path& root);

// Samples of clip i, before 16-bit quantization.
std::vector<double> synth_clip_audio(const SynthSpec& spec, std::size_t index);

// ---- features and batches ----

enum class InputKind { Spec, Raw };

// Per-clip model inputs: log-mel [96 × frames] or raw samples.
struct FeatureSet {
    InputKind kind = InputKind::Spec;
    std::size_t chunk_length = kSpecChunkFrames;  // frames or samples
    std::vector<std::string> ids;
    std::vector<std::vector<double>> features;
    std::vector<std::size_t> lengths;  // frames or samples per clip
    std::vector<std::vector<double>> labels;
    std::size_t skipped_short = 0;

    std::size_t size() const { return ids.size(); }
    std::size_t n_tags() const { return labels.empty() ? 0 : labels.front().size(); }
};

// Loads, resamples and transforms every clip. Clips shorter than one chunk
// are skipped and counted. With a cache_dir, log-mels are read from / written
// to <cache_dir>/<id>.smel.
FeatureSet build_features(const std::vector<Clip>& clips, InputKind kind, std::size_t chunk_length,
                          const std::optional<std::filesystem::path>& cache_dir = std::nullopt);

// Single clip, no labels. Used by visualization.
std::vector<double> clip_features(const AudioBuffer& audio, InputKind kind, std::size_t* length);

enum class BatchMode { Train, Eval };

struct Batch {
    Tensor input;   // Spec: [B × 1 × 96 × L], Raw: [B × 1 × L]
    Tensor labels;  // [B × n_tags]
    std::vector<std::size_t> clip_index;
};

// Training: shuffled clip order, one uniformly placed chunk per clip.
// Evaluation: every non-overlapping chunk of each clip, in clip order.
class BatchStream {
public:
    BatchStream(const FeatureSet& set, std::size_t batch_size, BatchMode mode, std::uint64_t seed);

    bool next(Batch& out);
    std::size_t batch_count() const;
    std::size_t chunk_count() const { return plan_.size(); }

private:
    struct Item {
        std::size_t clip;
        std::size_t offset;
    };
    const FeatureSet* set_;
    std::size_t batch_size_;
    std::vector<Item> plan_;
    std::size_t cursor_ = 0;
};

// Copies one chunk of a clip into a [1 × 1 × 96 × L] or [1 × 1 × L] tensor.
Tensor chunk_tensor(const FeatureSet& set, std::size_t clip, std::size_t offset);

}  // namespace sattag
