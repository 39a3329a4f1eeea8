#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include "sattag/dsp.hpp"
#include "sattag/errors.hpp"
#include "sattag/wav.hpp"
#include "support/temp_dir.hpp"

#include <cmath>
#include <complex>
#include <fstream>
#include <numbers>
#include <random>

using namespace sattag;
using sattag::testing::TempDir;

namespace {

AudioBuffer sine(double freq, double rate, std::size_t n, double amp = 0.5) {
    AudioBuffer b;
    b.sample_rate = rate;
    b.samples.resize(n);
    for (std::size_t i = 0; i < n; ++i) b.samples[i] = amp * std::sin(2.0 * std::numbers::pi * freq * static_cast<double>(i) / rate);
    return b;
}

AudioBuffer noise(std::size_t n, double sigma, std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> dist(0.0, sigma);
    AudioBuffer b;
    b.samples.resize(n);
    for (double& s : b.samples) s = dist(rng);
    return b;
}

// Textbook O(N^2) DFT magnitude of one Hann-windowed frame.
std::vector<double> naive_dft_magnitude(const std::vector<double>& x, std::size_t offset) {
    std::vector<double> mag(kFftBins);
    for (std::size_t k = 0; k < kFftBins; ++k) {
        std::complex<double> acc = 0.0;
        for (std::size_t n = 0; n < kFftSize; ++n) {
            const double w = 0.5 * (1.0 - std::cos(2.0 * std::numbers::pi * static_cast<double>(n) / 512.0));
            const double phase = -2.0 * std::numbers::pi * static_cast<double>(k * n) / 512.0;
            acc += w * x[offset + n] * std::complex<double>(std::cos(phase), std::sin(phase));
        }
        mag[k] = std::abs(acc);
    }
    return mag;
}

std::size_t argmax(const std::vector<double>& v) {
    return static_cast<std::size_t>(std::max_element(v.begin(), v.end()) - v.begin());
}

std::vector<double> frame_magnitude(const ComplexSpectrogram& s, std::size_t frame) {
    std::vector<double> m(s.bins);
    for (std::size_t b = 0; b < s.bins; ++b) m[b] = std::abs(s.at(b, frame));
    return m;
}

void write_bytes(const std::filesystem::path& p, const std::vector<std::uint8_t>& bytes) {
    std::ofstream out(p, std::ios::binary);
    out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
}

void put16(std::vector<std::uint8_t>& b, std::uint16_t v) {
    b.push_back(static_cast<std::uint8_t>(v & 0xFF));
    b.push_back(static_cast<std::uint8_t>(v >> 8));
}
void put32(std::vector<std::uint8_t>& b, std::uint32_t v) {
    for (int i = 0; i < 4; ++i) b.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}

std::vector<std::uint8_t> wav_bytes(std::uint16_t format, std::uint16_t channels, std::uint16_t bits,
                                    const std::vector<std::uint8_t>& payload) {
    std::vector<std::uint8_t> b;
    for (char c : std::string("RIFF")) b.push_back(static_cast<std::uint8_t>(c));
    put32(b, static_cast<std::uint32_t>(36 + payload.size()));
    for (char c : std::string("WAVEfmt ")) b.push_back(static_cast<std::uint8_t>(c));
    put32(b, 16);
    put16(b, format);
    put16(b, channels);
    put32(b, 16000);
    put32(b, 16000u * channels * bits / 8);
    put16(b, static_cast<std::uint16_t>(channels * bits / 8));
    put16(b, bits);
    for (char c : std::string("data")) b.push_back(static_cast<std::uint8_t>(c));
    put32(b, static_cast<std::uint32_t>(payload.size()));
    b.insert(b.end(), payload.begin(), payload.end());
    return b;
}

}  // namespace

TEST_CASE("wav decoding") {
    TempDir dir("wav");

    SUBCASE("16-bit full scale") {
        std::vector<std::uint8_t> payload;
        put16(payload, 32767);
        put16(payload, static_cast<std::uint16_t>(-32768));
        write_bytes(dir / "a.wav", wav_bytes(1, 1, 16, payload));
        const AudioBuffer a = load_wav(dir / "a.wav");
        REQUIRE(a.samples.size() == 2);
        CHECK(a.samples[0] == doctest::Approx(32767.0 / 32768.0).epsilon(1e-15));
        CHECK(a.samples[1] == -1.0);
        CHECK(a.sample_rate == 16000.0);
    }
    SUBCASE("silence") {
        write_bytes(dir / "s.wav", wav_bytes(1, 1, 16, std::vector<std::uint8_t>(200, 0)));
        const AudioBuffer a = load_wav(dir / "s.wav");
        CHECK(a.samples.size() == 100);
        for (double s : a.samples) CHECK(s == 0.0);
    }
    SUBCASE("stereo averages channels") {
        std::vector<std::uint8_t> payload;
        put16(payload, 16384);
        put16(payload, static_cast<std::uint16_t>(-16384));
        write_bytes(dir / "st.wav", wav_bytes(1, 2, 16, payload));
        const AudioBuffer a = load_wav(dir / "st.wav");
        REQUIRE(a.samples.size() == 1);
        CHECK(a.samples[0] == 0.0);
    }
    SUBCASE("8-bit, 24-bit and float") {
        write_bytes(dir / "u8.wav", wav_bytes(1, 1, 8, {0, 128, 255}));
        const AudioBuffer a = load_wav(dir / "u8.wav");
        CHECK(a.samples == std::vector<double>{-1.0, 0.0, 127.0 / 128.0});

        write_bytes(dir / "i24.wav", wav_bytes(1, 1, 24, {0x00, 0x00, 0x40, 0x00, 0x00, 0xC0}));
        const AudioBuffer b = load_wav(dir / "i24.wav");
        CHECK(b.samples == std::vector<double>{0.5, -0.5});

        std::vector<std::uint8_t> fp(4);
        const float v = 0.25f;
        std::memcpy(fp.data(), &v, 4);
        write_bytes(dir / "f32.wav", wav_bytes(3, 1, 32, fp));
        CHECK(load_wav(dir / "f32.wav").samples == std::vector<double>{0.25});
    }
    SUBCASE("write then read round-trips to 16-bit precision") {
        const AudioBuffer src = sine(440.0, 16000.0, 1000, 0.7);
        write_wav16(dir / "rt.wav", src.samples, 16000.0);
        const AudioBuffer back = load_wav(dir / "rt.wav");
        REQUIRE(back.samples.size() == src.samples.size());
        for (std::size_t i = 0; i < src.samples.size(); ++i) CHECK(std::abs(back.samples[i] - src.samples[i]) <= 0.5 / 32768.0 + 1e-15);
    }
}

TEST_CASE("wav errors carry distinct kinds") {
    TempDir dir("wav_err");
    const auto kind_of = [](const std::filesystem::path& p) {
        try {
            load_wav(p);
        } catch (const WavError& e) {
            return static_cast<int>(e.kind());
        }
        return -1;
    };
    CHECK(kind_of(dir / "absent.wav") == static_cast<int>(WavErrorKind::MissingFile));

    write_bytes(dir / "junk.wav", {'n', 'o', 'p', 'e'});
    CHECK(kind_of(dir / "junk.wav") == static_cast<int>(WavErrorKind::MalformedHeader));

    auto truncated = wav_bytes(1, 1, 16, {0, 0});
    truncated.resize(30);
    write_bytes(dir / "short.wav", truncated);
    CHECK(kind_of(dir / "short.wav") == static_cast<int>(WavErrorKind::MalformedHeader));

    write_bytes(dir / "alaw.wav", wav_bytes(6, 1, 8, {1, 2, 3}));
    CHECK(kind_of(dir / "alaw.wav") == static_cast<int>(WavErrorKind::UnsupportedCodec));

    write_bytes(dir / "f64.wav", wav_bytes(3, 1, 64, std::vector<std::uint8_t>(8, 0)));
    CHECK(kind_of(dir / "f64.wav") == static_cast<int>(WavErrorKind::UnsupportedCodec));

    CHECK_THROWS_AS(load_wav(dir / "absent.wav"), IoError);
}

TEST_CASE("resample") {
    const AudioBuffer same = sine(300.0, 16000.0, 777);
    CHECK(resample(same).samples == same.samples);

    AudioBuffer flat;
    flat.sample_rate = 44100.0;
    flat.samples.assign(4410, 0.3);
    const AudioBuffer r = resample(flat);
    CHECK(r.samples.size() == 1600);
    for (double s : r.samples) CHECK(s == doctest::Approx(0.3).epsilon(1e-15));

    AudioBuffer odd;
    odd.sample_rate = 22050.0;
    odd.samples.assign(1001, 0.0);
    CHECK(resample(odd).samples.size() == static_cast<std::size_t>(std::floor(1001.0 * 16000.0 / 22050.0)));

    const AudioBuffer hi = sine(1000.0, 32000.0, 4096);
    const AudioBuffer down = resample(hi);
    CHECK(down.sample_rate == 16000.0);
    REQUIRE(down.samples.size() == 2048);
    CHECK(argmax(naive_dft_magnitude(down.samples, 0)) == 32);

    CHECK_THROWS_AS(resample(same, 0.0), ContractError);
    CHECK_THROWS_AS(resample(same, -8000.0), ContractError);
}

TEST_CASE("stft") {
    SUBCASE("frame count and short input") {
        CHECK(stft_frame_count(512) == 1);
        CHECK(stft_frame_count(767) == 1);
        CHECK(stft_frame_count(768) == 2);
        CHECK(stft_frame_count(65792) == 256);
        AudioBuffer tiny;
        tiny.samples.assign(511, 0.1);
        CHECK_THROWS_AS(stft(tiny), ContractError);
    }
    SUBCASE("DC equals window sum") {
        AudioBuffer dc;
        dc.samples.assign(1024, 1.0);
        const ComplexSpectrogram s = stft(dc);
        CHECK(s.frames == 3);
        double window_sum = 0.0;
        for (double w : hann_window()) window_sum += w;
        CHECK(window_sum == doctest::Approx(256.0).epsilon(1e-14));
        for (std::size_t f = 0; f < s.frames; ++f) {
            CHECK(std::abs(s.at(0, f)) == doctest::Approx(256.0).epsilon(1e-12));
            CHECK(std::abs(s.at(1, f)) == doctest::Approx(128.0).epsilon(1e-12));
            for (std::size_t b = 2; b < s.bins; ++b) CHECK(std::abs(s.at(b, f)) < 1e-9);
        }
    }
    SUBCASE("zeros") {
        AudioBuffer z;
        z.samples.assign(2048, 0.0);
        for (const auto& c : stft(z).values) CHECK(c == std::complex<double>(0.0, 0.0));
    }
    SUBCASE("1 kHz sine peaks at bin 32 and matches the direct DFT") {
        const AudioBuffer s = sine(1000.0, 16000.0, 4096);
        const ComplexSpectrogram spec = stft(s);
        for (std::size_t f = 0; f < spec.frames; ++f) CHECK(argmax(frame_magnitude(spec, f)) == 32);
        const auto oracle = naive_dft_magnitude(s.samples, 3 * kHopSize);
        const auto got = frame_magnitude(spec, 3);
        for (std::size_t b = 0; b < kFftBins; ++b) CHECK(std::abs(got[b] - oracle[b]) < 1e-9);
    }
    SUBCASE("shift by one hop shifts frames by one") {
        const AudioBuffer x = noise(4096 + 256, 0.3, 11);
        AudioBuffer shifted;
        shifted.samples.assign(x.samples.begin() + 256, x.samples.end());
        const ComplexSpectrogram a = stft(x);
        const ComplexSpectrogram b = stft(shifted);
        REQUIRE(a.frames == b.frames + 1);
        double worst = 0.0;
        for (std::size_t f = 0; f < b.frames; ++f) {
            for (std::size_t k = 0; k < kFftBins; ++k) worst = std::max(worst, std::abs(a.at(k, f + 1) - b.at(k, f)));
        }
        CHECK(worst <= 1e-9);
    }
}

TEST_CASE("mel filterbank") {
    const auto edges = mel_edges_hz();
    REQUIRE(edges.size() == 98);
    CHECK(edges.front() == 0.0);
    CHECK(edges.back() == doctest::Approx(8000.0).epsilon(1e-12));
    // independent HTK edges from the closed form
    const double top = 2595.0 * std::log10(1.0 + 8000.0 / 700.0);
    for (std::size_t i = 0; i < edges.size(); ++i) {
        const double m = top * static_cast<double>(i) / 97.0;
        CHECK(edges[i] == doctest::Approx(700.0 * (std::pow(10.0, m / 2595.0) - 1.0)).epsilon(1e-10));
    }
    CHECK(hz_to_mel(1000.0) == doctest::Approx(999.9855).epsilon(1e-6));
    CHECK(mel_to_hz(hz_to_mel(4321.0)) == doctest::Approx(4321.0).epsilon(1e-12));

    const auto& bank = mel_filterbank();
    REQUIRE(bank.size() == 96 * 257);
    double prev_center = -1.0;
    for (std::size_t m = 0; m < 96; ++m) {
        CHECK(edges[m + 1] > prev_center);
        prev_center = edges[m + 1];
        const double* row = bank.data() + m * 257;
        std::size_t peak = 0;
        bool any = false;
        for (std::size_t k = 0; k < 257; ++k) {
            CHECK(row[k] >= 0.0);
            CHECK(row[k] <= 1.0);
            if (row[k] > row[peak]) peak = k;
            any = any || row[k] > 0.0;
        }
        CHECK(any);
        // unimodal: non-decreasing up to the peak, non-increasing after
        for (std::size_t k = 1; k <= peak; ++k) CHECK(row[k] >= row[k - 1]);
        for (std::size_t k = peak + 1; k < 257; ++k) CHECK(row[k] <= row[k - 1]);
    }
}

TEST_CASE("log mel") {
    SUBCASE("shape") {
        const MelSpectrogram m = log_mel(noise(65792, 0.1, 3));
        CHECK(m.n_mels == 96);
        CHECK(m.frames == 256);
        CHECK(m.values.size() == 96 * 256);
        CHECK(m.frame_hop_seconds == doctest::Approx(0.016));
        for (double v : m.values) CHECK(std::isfinite(v));
    }
    SUBCASE("silence is the floor") {
        AudioBuffer z;
        z.samples.assign(8192, 0.0);
        for (double v : log_mel(z).values) CHECK(v == std::log(1e-10));
    }
    SUBCASE("gain of two adds ln 4") {
        const AudioBuffer x = noise(16384, 0.5, 5);
        AudioBuffer y = x;
        for (double& s : y.samples) s *= 2.0;
        const MelSpectrogram a = log_mel(x);
        const MelSpectrogram b = log_mel(y);
        double worst = 0.0;
        for (std::size_t i = 0; i < a.values.size(); ++i) worst = std::max(worst, std::abs(b.values[i] - a.values[i] - std::log(4.0)));
        CHECK(worst <= 1e-9);
    }
    SUBCASE("monotone under gain") {
        const AudioBuffer x = sine(440.0, 16000.0, 8192, 0.01);
        const MelSpectrogram base = log_mel(x);
        for (double g : {1.0, 1.5, 3.0, 10.0}) {
            AudioBuffer y = x;
            for (double& s : y.samples) s *= g;
            const MelSpectrogram m = log_mel(y);
            for (std::size_t i = 0; i < m.values.size(); ++i) CHECK(m.values[i] >= base.values[i]);
        }
    }
    SUBCASE("stft errors propagate") {
        AudioBuffer tiny;
        tiny.samples.assign(100, 0.0);
        CHECK_THROWS_AS(log_mel(tiny), ContractError);
    }
}

TEST_CASE("chunking") {
    MelSpectrogram spec;
    spec.frames = 1024;
    spec.values.resize(96 * 1024);
    for (std::size_t i = 0; i < spec.values.size(); ++i) spec.values[i] = static_cast<double>(i);

    CHECK(chunk_count(spec.frames, kSpecChunkFrames) == 4);

    MelSpectrogram rebuilt;
    rebuilt.frames = 1024;
    rebuilt.values.resize(spec.values.size());
    for (std::size_t c = 0; c < 4; ++c) {
        const MelSpectrogram part = chunk_spec(spec, c * 256);
        REQUIRE(part.frames == 256);
        for (std::size_t m = 0; m < 96; ++m) {
            for (std::size_t t = 0; t < 256; ++t) rebuilt.values[m * 1024 + c * 256 + t] = part.at(m, t);
        }
    }
    CHECK(rebuilt.values == spec.values);

    const MelSpectrogram mid = chunk_spec(spec, 317, 100);
    for (std::size_t m = 0; m < 96; m += 7) {
        for (std::size_t t = 0; t < 100; t += 3) CHECK(mid.at(m, t) == spec.at(m, 317 + t));
    }
    CHECK(chunk_spec(spec, 0, 1024).values == spec.values);
    CHECK_THROWS_AS(chunk_spec(spec, 800), ContractError);

    AudioBuffer audio = noise(3 * kRawChunkSamples + 17, 0.2, 9);
    CHECK(chunk_count(audio.samples.size(), kRawChunkSamples) == 3);
    std::vector<double> joined;
    for (std::size_t c = 0; c < 3; ++c) {
        const AudioBuffer part = chunk_raw(audio, c * kRawChunkSamples);
        CHECK(part.samples.size() == kRawChunkSamples);
        joined.insert(joined.end(), part.samples.begin(), part.samples.end());
    }
    CHECK(std::equal(joined.begin(), joined.end(), audio.samples.begin()));

    AudioBuffer short_audio = noise(1000, 0.1, 1);
    try {
        chunk_raw(short_audio, 0);
        FAIL("expected a contract error");
    } catch (const ContractError& e) {
        const std::string what = e.what();
        CHECK(what.find("65610") != std::string::npos);
        CHECK(what.find("1000") != std::string::npos);
    }
}

TEST_CASE("mel cache round trip") {
    TempDir dir("mel");
    const MelSpectrogram m = log_mel(noise(4096, 0.2, 2));
    write_mel_cache(m, dir / "m.bin");
    const MelSpectrogram back = read_mel_cache(dir / "m.bin");
    CHECK(back.n_mels == 96);
    CHECK(back.frames == m.frames);
    CHECK(back.values == m.values);
    CHECK(std::filesystem::file_size(dir / "m.bin") == 16 + 8 * m.values.size());

    std::filesystem::resize_file(dir / "m.bin", 40);
    CHECK_THROWS_AS(read_mel_cache(dir / "m.bin"), IoError);
    CHECK_THROWS_AS(read_mel_cache(dir / "missing.bin"), IoError);
}
