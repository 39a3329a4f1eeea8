#pragma once

#include "sattag/dsp.hpp"
#include "sattag/errors.hpp"

#include <filesystem>
#include <span>

namespace sattag {

enum class WavErrorKind { MissingFile, MalformedHeader, UnsupportedCodec };

class WavError : public IoError {
public:
    WavError(WavErrorKind kind, const std::string& what) : IoError(what), kind_(kind) {}
    WavErrorKind kind() const { return kind_; }

private:
    WavErrorKind kind_;
};

// Reads PCM (8/16/24/32-bit integer) or 32-bit float WAV, averaging all
// channels to mono and scaling integers by 1/2^(bits-1).
AudioBuffer load_wav(const std::filesystem::path& path);

// Writes mono 16-bit PCM. Samples are clamped to [-1, 1] and rounded to
// the nearest integer step of 1/32768.
void write_wav16(const std::filesystem::path& path, std::span<const double> samples, double sample_rate);

}  // namespace sattag
