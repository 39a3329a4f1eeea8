#pragma once

#include <complex>
#include <cstddef>
#include <filesystem>
#include <vector>

namespace sattag {

inline constexpr double kSampleRate = 16000.0;
inline constexpr std::size_t kFftSize = 512;
inline constexpr std::size_t kHopSize = 256;
inline constexpr std::size_t kFftBins = kFftSize / 2 + 1;
inline constexpr std::size_t kMelBins = 96;
inline constexpr double kMelMaxHz = 8000.0;
inline constexpr double kLogFloor = 1e-10;
inline constexpr std::size_t kSpecChunkFrames = 256;
inline constexpr std::size_t kRawChunkSamples = 65610;

struct AudioBuffer {
    std::vector<double> samples;
    double sample_rate = kSampleRate;
};

// Log-mel magnitudes, row-major [n_mels × frames].
struct MelSpectrogram {
    std::size_t n_mels = kMelBins;
    std::size_t frames = 0;
    std::vector<double> values;
    double frame_hop_seconds = static_cast<double>(kHopSize) / kSampleRate;

    double at(std::size_t mel, std::size_t frame) const { return values[mel * frames + frame]; }
};

// STFT bins, row-major [bins × frames].
struct ComplexSpectrogram {
    std::size_t bins = kFftBins;
    std::size_t frames = 0;
    std::vector<std::complex<double>> values;

    std::complex<double> at(std::size_t bin, std::size_t frame) const { return values[bin * frames + frame]; }
};

// Linear interpolation; output length floor(n * target / source).
AudioBuffer resample(const AudioBuffer& buffer, double target_rate = kSampleRate);

// Periodic Hann window of kFftSize samples.
const std::vector<double>& hann_window();

// 512-point frames, hop 256, no centering. Requires >= 512 samples.
ComplexSpectrogram stft(const AudioBuffer& buffer);
std::size_t stft_frame_count(std::size_t n_samples);

double hz_to_mel(double hz);
double mel_to_hz(double mel);

// Edge frequencies (Hz) of the triangular filters: kMelBins + 2 points
// equally spaced on the HTK mel scale over [0, kMelMaxHz].
std::vector<double> mel_edges_hz();

// Row-major [kMelBins × kFftBins] triangular filter weights.
const std::vector<double>& mel_filterbank();

// ln(mel-projected power + kLogFloor).
MelSpectrogram log_mel(const AudioBuffer& buffer);

MelSpectrogram chunk_spec(const MelSpectrogram& spec, std::size_t offset, std::size_t length = kSpecChunkFrames);
AudioBuffer chunk_raw(const AudioBuffer& buffer, std::size_t offset, std::size_t length = kRawChunkSamples);

// Number of non-overlapping chunks an evaluation pass takes from a source.
inline std::size_t chunk_count(std::size_t source_length, std::size_t chunk_length) {
    return source_length / chunk_length;
}

// Binary cache: "SMEL", u32 version, u32 rows, u32 cols, then row-major
// little-endian float64 values.
void write_mel_cache(const MelSpectrogram& spec, const std::filesystem::path& path);
MelSpectrogram read_mel_cache(const std::filesystem::path& path);

}  // namespace sattag
