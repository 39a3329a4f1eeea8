#include "sattag/data.hpp"
#include "sattag/errors.hpp"
#include "sattag/wav.hpp"

#include <algorithm>
#include <random>

namespace sattag {

std::vector<double> clip_features(const AudioBuffer& audio, InputKind kind, std::size_t* length) {
    const AudioBuffer mono = resample(audio);
    if (kind == InputKind::Raw) {
        *length = mono.samples.size();
        return mono.samples;
    }
    if (mono.samples.size() < kFftSize) {
        *length = 0;
        return {};
    }
    MelSpectrogram mel = log_mel(mono);
    *length = mel.frames;
    return std::move(mel.values);
}

FeatureSet build_features(const std::vector<Clip>& clips, InputKind kind, std::size_t chunk_length,
                          const std::optional<std::filesystem::path>& cache_dir) {
    if (chunk_length == 0) throw ConfigError("chunk length must be positive");
    FeatureSet set;
    set.kind = kind;
    set.chunk_length = chunk_length;
    if (cache_dir) std::filesystem::create_directories(*cache_dir);
    for (const Clip& clip : clips) {
        std::vector<double> values;
        std::size_t length = 0;
        const auto cache_path = cache_dir ? std::optional(*cache_dir / (clip.id + ".smel")) : std::nullopt;
        if (kind == InputKind::Spec && cache_path && std::filesystem::exists(*cache_path)) {
            MelSpectrogram mel = read_mel_cache(*cache_path);
            length = mel.frames;
            values = std::move(mel.values);
        } else {
            values = clip_features(load_wav(clip.audio_path), kind, &length);
            if (kind == InputKind::Spec && cache_path && length > 0) {
                MelSpectrogram mel;
                mel.frames = length;
                mel.values = values;
                write_mel_cache(mel, *cache_path);
            }
        }
        if (length < chunk_length) {
            ++set.skipped_short;
            continue;
        }
        set.ids.push_back(clip.id);
        set.features.push_back(std::move(values));
        set.lengths.push_back(length);
        set.labels.push_back(clip.tags);
    }
    return set;
}

namespace {

std::size_t row_width(const FeatureSet& set) { return set.kind == InputKind::Spec ? kMelBins : 1; }

void copy_chunk(const FeatureSet& set, std::size_t clip, std::size_t offset, double* dst) {
    const std::size_t len = set.chunk_length;
    const std::size_t rows = row_width(set);
    const std::size_t stride = set.lengths[clip];
    const double* src = set.features[clip].data();
    for (std::size_t r = 0; r < rows; ++r) std::copy_n(src + r * stride + offset, len, dst + r * len);
}

Shape chunk_shape(const FeatureSet& set, std::size_t batch) {
    if (set.kind == InputKind::Spec) return {batch, 1, kMelBins, set.chunk_length};
    return {batch, 1, set.chunk_length};
}

}  // namespace

Tensor chunk_tensor(const FeatureSet& set, std::size_t clip, std::size_t offset) {
    if (clip >= set.size()) throw ContractError("chunk_tensor: clip index out of range");
    if (offset + set.chunk_length > set.lengths[clip]) {
        throw ContractError("chunk_tensor: chunk of " + std::to_string(set.chunk_length) + " at offset " +
                            std::to_string(offset) + " exceeds clip length " + std::to_string(set.lengths[clip]));
    }
    Tensor t(chunk_shape(set, 1));
    copy_chunk(set, clip, offset, t.data().data());
    return t;
}

BatchStream::BatchStream(const FeatureSet& set, std::size_t batch_size, BatchMode mode, std::uint64_t seed)
    : set_(&set), batch_size_(batch_size) {
    if (batch_size == 0) throw ConfigError("batch size must be positive");
    if (mode == BatchMode::Train) {
        std::vector<std::size_t> order(set.size());
        for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
        std::mt19937_64 rng(seed);
        std::shuffle(order.begin(), order.end(), rng);
        for (std::size_t c : order) {
            std::uniform_int_distribution<std::size_t> pick(0, set.lengths[c] - set.chunk_length);
            plan_.push_back({c, pick(rng)});
        }
    } else {
        for (std::size_t c = 0; c < set.size(); ++c) {
            const std::size_t n = sattag::chunk_count(set.lengths[c], set.chunk_length);
            for (std::size_t k = 0; k < n; ++k) plan_.push_back({c, k * set.chunk_length});
        }
    }
}

std::size_t BatchStream::batch_count() const { return (plan_.size() + batch_size_ - 1) / batch_size_; }

bool BatchStream::next(Batch& out) {
    if (cursor_ >= plan_.size()) return false;
    const std::size_t b = std::min(batch_size_, plan_.size() - cursor_);
    const std::size_t per_item = row_width(*set_) * set_->chunk_length;
    const std::size_t n_tags = set_->n_tags();
    out.input = Tensor(chunk_shape(*set_, b));
    out.labels = Tensor(Shape{b, n_tags});
    out.clip_index.assign(b, 0);
    auto in = out.input.data();
    auto lab = out.labels.data();
    for (std::size_t i = 0; i < b; ++i) {
        const Item& item = plan_[cursor_ + i];
        copy_chunk(*set_, item.clip, item.offset, in.data() + i * per_item);
        std::copy(set_->labels[item.clip].begin(), set_->labels[item.clip].end(), lab.begin() + static_cast<std::ptrdiff_t>(i * n_tags));
        out.clip_index[i] = item.clip;
    }
    cursor_ += b;
    return true;
}

}  // namespace sattag
