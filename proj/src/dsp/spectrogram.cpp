#include "sattag/detail/byte_io.hpp"
#include "sattag/dsp.hpp"
#include "sattag/errors.hpp"

#include <fftw3.h>

#include <cmath>
#include <fstream>
#include <iterator>
#include <memory>
#include <mutex>
#include <numbers>

namespace sattag {

namespace {

// FFTW's planner is not thread-safe; execution on a private plan is.
std::mutex g_fftw_planner_mutex;

class RealFft {
public:
    RealFft() {
        in_ = static_cast<double*>(fftw_malloc(sizeof(double) * kFftSize));
        out_ = static_cast<fftw_complex*>(fftw_malloc(sizeof(fftw_complex) * kFftBins));
        std::lock_guard lock(g_fftw_planner_mutex);
        plan_ = fftw_plan_dft_r2c_1d(static_cast<int>(kFftSize), in_, out_, FFTW_ESTIMATE);
    }
    RealFft(const RealFft&) = delete;
    RealFft& operator=(const RealFft&) = delete;
    ~RealFft() {
        {
            std::lock_guard lock(g_fftw_planner_mutex);
            fftw_destroy_plan(plan_);
        }
        fftw_free(in_);
        fftw_free(out_);
    }

    double* input() { return in_; }
    const fftw_complex* output() const { return out_; }
    void execute() { fftw_execute(plan_); }

private:
    double* in_ = nullptr;
    fftw_complex* out_ = nullptr;
    fftw_plan plan_ = nullptr;
};

}  // namespace

AudioBuffer resample(const AudioBuffer& buffer, double target_rate) {
    if (target_rate <= 0.0) throw ContractError("resample: target rate must be positive");
    if (buffer.sample_rate <= 0.0) throw ContractError("resample: source rate must be positive");
    if (buffer.sample_rate == target_rate) return buffer;
    const std::size_t n = buffer.samples.size();
    const double ratio = buffer.sample_rate / target_rate;
    const auto out_len = static_cast<std::size_t>(std::floor(static_cast<double>(n) * target_rate / buffer.sample_rate));
    AudioBuffer out;
    out.sample_rate = target_rate;
    out.samples.resize(out_len);
    for (std::size_t i = 0; i < out_len; ++i) {
        const double pos = static_cast<double>(i) * ratio;
        const auto j = static_cast<std::size_t>(pos);
        const double frac = pos - static_cast<double>(j);
        const double a = buffer.samples[std::min(j, n - 1)];
        const double b = buffer.samples[std::min(j + 1, n - 1)];
        out.samples[i] = a + frac * (b - a);
    }
    return out;
}

const std::vector<double>& hann_window() {
    static const std::vector<double> window = [] {
        std::vector<double> w(kFftSize);
        for (std::size_t n = 0; n < kFftSize; ++n) {
            w[n] = 0.5 * (1.0 - std::cos(2.0 * std::numbers::pi * static_cast<double>(n) / static_cast<double>(kFftSize)));
        }
        return w;
    }();
    return window;
}

std::size_t stft_frame_count(std::size_t n_samples) {
    if (n_samples < kFftSize) return 0;
    return (n_samples - kFftSize) / kHopSize + 1;
}

ComplexSpectrogram stft(const AudioBuffer& buffer) {
    const std::size_t n = buffer.samples.size();
    if (n < kFftSize) {
        throw ContractError("stft: buffer of " + std::to_string(n) + " samples is shorter than the " +
                            std::to_string(kFftSize) + "-sample window");
    }
    ComplexSpectrogram out;
    out.frames = stft_frame_count(n);
    out.values.resize(out.bins * out.frames);
    const auto& window = hann_window();
    RealFft fft;
    for (std::size_t f = 0; f < out.frames; ++f) {
        const double* src = buffer.samples.data() + f * kHopSize;
        double* in = fft.input();
        for (std::size_t i = 0; i < kFftSize; ++i) in[i] = src[i] * window[i];
        fft.execute();
        const fftw_complex* spec = fft.output();
        for (std::size_t b = 0; b < out.bins; ++b) out.values[b * out.frames + f] = {spec[b][0], spec[b][1]};
    }
    return out;
}

double hz_to_mel(double hz) { return 2595.0 * std::log10(1.0 + hz / 700.0); }

double mel_to_hz(double mel) { return 700.0 * (std::pow(10.0, mel / 2595.0) - 1.0); }

std::vector<double> mel_edges_hz() {
    const std::size_t points = kMelBins + 2;
    const double top = hz_to_mel(kMelMaxHz);
    std::vector<double> edges(points);
    for (std::size_t i = 0; i < points; ++i) {
        edges[i] = mel_to_hz(top * static_cast<double>(i) / static_cast<double>(points - 1));
    }
    edges.front() = 0.0;
    edges.back() = kMelMaxHz;
    return edges;
}

const std::vector<double>& mel_filterbank() {
    static const std::vector<double> bank = [] {
        const auto edges = mel_edges_hz();
        std::vector<double> w(kMelBins * kFftBins, 0.0);
        for (std::size_t m = 0; m < kMelBins; ++m) {
            const double lo = edges[m], mid = edges[m + 1], hi = edges[m + 2];
            for (std::size_t k = 0; k < kFftBins; ++k) {
                const double f = static_cast<double>(k) * kSampleRate / static_cast<double>(kFftSize);
                const double rise = (f - lo) / (mid - lo);
                const double fall = (hi - f) / (hi - mid);
                w[m * kFftBins + k] = std::max(0.0, std::min(rise, fall));
            }
        }
        return w;
    }();
    return bank;
}

MelSpectrogram log_mel(const AudioBuffer& buffer) {
    const ComplexSpectrogram spec = stft(buffer);
    const auto& bank = mel_filterbank();
    std::vector<double> power(spec.values.size());
    for (std::size_t i = 0; i < power.size(); ++i) power[i] = std::norm(spec.values[i]);
    MelSpectrogram out;
    out.frames = spec.frames;
    out.values.assign(kMelBins * out.frames, 0.0);
    for (std::size_t m = 0; m < kMelBins; ++m) {
        double* row = out.values.data() + m * out.frames;
        for (std::size_t k = 0; k < kFftBins; ++k) {
            const double w = bank[m * kFftBins + k];
            if (w == 0.0) continue;
            const double* prow = power.data() + k * out.frames;
            for (std::size_t t = 0; t < out.frames; ++t) row[t] += w * prow[t];
        }
        for (std::size_t t = 0; t < out.frames; ++t) row[t] = std::log(row[t] + kLogFloor);
    }
    return out;
}

MelSpectrogram chunk_spec(const MelSpectrogram& spec, std::size_t offset, std::size_t length) {
    if (length == 0 || spec.frames < length || offset > spec.frames - length) {
        throw ContractError("chunk_spec: cannot take " + std::to_string(length) + " frames at offset " +
                            std::to_string(offset) + " from a " + std::to_string(spec.frames) + "-frame spectrogram");
    }
    MelSpectrogram out;
    out.n_mels = spec.n_mels;
    out.frames = length;
    out.frame_hop_seconds = spec.frame_hop_seconds;
    out.values.resize(spec.n_mels * length);
    for (std::size_t m = 0; m < spec.n_mels; ++m) {
        const auto src = spec.values.begin() + static_cast<std::ptrdiff_t>(m * spec.frames + offset);
        std::copy(src, src + static_cast<std::ptrdiff_t>(length),
                  out.values.begin() + static_cast<std::ptrdiff_t>(m * length));
    }
    return out;
}

AudioBuffer chunk_raw(const AudioBuffer& buffer, std::size_t offset, std::size_t length) {
    const std::size_t n = buffer.samples.size();
    if (length == 0 || n < length || offset > n - length) {
        throw ContractError("chunk_raw: cannot take " + std::to_string(length) + " samples at offset " +
                            std::to_string(offset) + " from a " + std::to_string(n) + "-sample buffer");
    }
    AudioBuffer out;
    out.sample_rate = buffer.sample_rate;
    out.samples.assign(buffer.samples.begin() + static_cast<std::ptrdiff_t>(offset),
                       buffer.samples.begin() + static_cast<std::ptrdiff_t>(offset + length));
    return out;
}

namespace {
constexpr char kMelMagic[4] = {'S', 'M', 'E', 'L'};
constexpr std::uint32_t kMelCacheVersion = 1;
}  // namespace

void write_mel_cache(const MelSpectrogram& spec, const std::filesystem::path& path) {
    detail::ByteWriter w;
    w.raw(std::string_view(kMelMagic, 4));
    w.u32(kMelCacheVersion);
    w.u32(static_cast<std::uint32_t>(spec.n_mels));
    w.u32(static_cast<std::uint32_t>(spec.frames));
    for (double v : spec.values) w.f64(v);
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot write spectrogram cache: " + path.string());
    out.write(reinterpret_cast<const char*>(w.bytes().data()), static_cast<std::streamsize>(w.bytes().size()));
    if (!out) throw IoError("failed writing spectrogram cache: " + path.string());
}

MelSpectrogram read_mel_cache(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open spectrogram cache: " + path.string());
    const std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    detail::ByteReader r(bytes.data(), bytes.size());
    try {
        if (r.raw(4) != std::string_view(kMelMagic, 4)) throw IoError(path.string() + ": not a spectrogram cache");
        const std::uint32_t version = r.u32();
        if (version != kMelCacheVersion) {
            throw IoError(path.string() + ": unsupported spectrogram cache version " + std::to_string(version));
        }
        MelSpectrogram spec;
        spec.n_mels = r.u32();
        spec.frames = r.u32();
        spec.values.resize(spec.n_mels * spec.frames);
        for (double& v : spec.values) v = r.f64();
        return spec;
    } catch (const detail::TruncatedInput&) {
        throw IoError(path.string() + ": truncated spectrogram cache");
    }
}

}  // namespace sattag
