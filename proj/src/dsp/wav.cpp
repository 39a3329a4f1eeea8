#include "sattag/wav.hpp"

#include "sattag/detail/byte_io.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <iterator>

namespace sattag {

namespace {

constexpr std::uint16_t kFormatPcm = 1;
constexpr std::uint16_t kFormatFloat = 3;
constexpr std::uint16_t kFormatExtensible = 0xFFFE;

std::uint16_t read_u16(const std::uint8_t* p) { return static_cast<std::uint16_t>(p[0] | (p[1] << 8)); }
std::uint32_t read_u32(const std::uint8_t* p) {
    return static_cast<std::uint32_t>(p[0]) | (static_cast<std::uint32_t>(p[1]) << 8) |
           (static_cast<std::uint32_t>(p[2]) << 16) | (static_cast<std::uint32_t>(p[3]) << 24);
}

double decode_sample(const std::uint8_t* p, std::uint16_t format, std::uint16_t bits) {
    if (format == kFormatFloat) {
        float f = 0.0f;
        std::memcpy(&f, p, 4);
        return static_cast<double>(f);
    }
    switch (bits) {
        case 8:
            return (static_cast<double>(p[0]) - 128.0) / 128.0;
        case 16:
            return static_cast<double>(static_cast<std::int16_t>(read_u16(p))) / 32768.0;
        case 24: {
            std::int32_t v = static_cast<std::int32_t>(p[0] | (p[1] << 8) | (p[2] << 16));
            if (v & 0x800000) v -= 0x1000000;
            return static_cast<double>(v) / 8388608.0;
        }
        default:
            return static_cast<double>(static_cast<std::int32_t>(read_u32(p))) / 2147483648.0;
    }
}

}  // namespace

AudioBuffer load_wav(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw WavError(WavErrorKind::MissingFile, "cannot open WAV file: " + path.string());
    const std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    const auto malformed = [&](const std::string& why) {
        return WavError(WavErrorKind::MalformedHeader, path.string() + ": " + why);
    };
    if (bytes.size() < 12 || std::memcmp(bytes.data(), "RIFF", 4) != 0 || std::memcmp(bytes.data() + 8, "WAVE", 4) != 0) {
        throw malformed("missing RIFF/WAVE header");
    }
    std::uint16_t format = 0, channels = 0, bits = 0;
    std::uint32_t rate = 0;
    bool have_fmt = false;
    const std::uint8_t* data = nullptr;
    std::size_t data_size = 0;
    std::size_t pos = 12;
    while (pos + 8 <= bytes.size()) {
        const std::uint8_t* chunk = bytes.data() + pos;
        const std::size_t size = read_u32(chunk + 4);
        const std::size_t body = pos + 8;
        if (std::memcmp(chunk, "fmt ", 4) == 0) {
            if (size < 16 || body + 16 > bytes.size()) throw malformed("short fmt chunk");
            format = read_u16(bytes.data() + body);
            channels = read_u16(bytes.data() + body + 2);
            rate = read_u32(bytes.data() + body + 4);
            bits = read_u16(bytes.data() + body + 14);
            if (format == kFormatExtensible) {
                if (size < 26 || body + 26 > bytes.size()) throw malformed("short extensible fmt chunk");
                format = read_u16(bytes.data() + body + 24);
            }
            have_fmt = true;
        } else if (std::memcmp(chunk, "data", 4) == 0) {
            data = bytes.data() + body;
            // Streaming writers may leave a placeholder size; keep what exists.
            data_size = std::min(size, bytes.size() - body);
            break;
        }
        pos = body + size + (size & 1);
    }
    if (!have_fmt) throw malformed("no fmt chunk");
    if (data == nullptr) throw malformed("no data chunk");
    if (channels == 0 || rate == 0) throw malformed("zero channels or sample rate");
    const bool int_ok = format == kFormatPcm && (bits == 8 || bits == 16 || bits == 24 || bits == 32);
    const bool float_ok = format == kFormatFloat && bits == 32;
    if (!int_ok && !float_ok) {
        throw WavError(WavErrorKind::UnsupportedCodec, path.string() + ": unsupported codec (format " +
                                                           std::to_string(format) + ", " + std::to_string(bits) +
                                                           " bits)");
    }
    const std::size_t sample_bytes = bits / 8;
    const std::size_t frame_bytes = sample_bytes * channels;
    const std::size_t frames = data_size / frame_bytes;
    if (frames == 0) throw malformed("data chunk holds no samples");
    AudioBuffer out;
    out.sample_rate = static_cast<double>(rate);
    out.samples.resize(frames);
    for (std::size_t f = 0; f < frames; ++f) {
        double acc = 0.0;
        for (std::size_t c = 0; c < channels; ++c) acc += decode_sample(data + f * frame_bytes + c * sample_bytes, format, bits);
        out.samples[f] = acc / static_cast<double>(channels);
    }
    return out;
}

void write_wav16(const std::filesystem::path& path, std::span<const double> samples, double sample_rate) {
    detail::ByteWriter w;
    const auto n = static_cast<std::uint32_t>(samples.size());
    const auto rate = static_cast<std::uint32_t>(std::lround(sample_rate));
    w.raw("RIFF");
    w.u32(36 + 2 * n);
    w.raw("WAVEfmt ");
    w.u32(16);
    w.u16(kFormatPcm);
    w.u16(1);  // mono
    w.u32(rate);
    w.u32(rate * 2);
    w.u16(2);  // block align
    w.u16(16);
    w.raw("data");
    w.u32(2 * n);
    for (double s : samples) {
        const double c = std::clamp(s, -1.0, 1.0);
        const long q = std::clamp(std::lround(c * 32768.0), -32768L, 32767L);
        w.u16(static_cast<std::uint16_t>(static_cast<std::int16_t>(q)));
    }
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot write WAV file: " + path.string());
    out.write(reinterpret_cast<const char*>(w.bytes().data()), static_cast<std::streamsize>(w.bytes().size()));
    if (!out) throw IoError("failed writing WAV file: " + path.string());
}

}  // namespace sattag
