#include "sattag/data.hpp"
#include "sattag/errors.hpp"
#include "sattag/wav.hpp"

#include <cmath>
#include <cstdio>
#include <fstream>
#include <numbers>
#include <random>

namespace sattag {

namespace {

enum TagIndex : std::size_t { kTone = 0, kNoise, kBeats, kQuiet, kLoud, kFlute, kPiano, kTagCount };

constexpr std::size_t kSourceKinds[4] = {kTone, kNoise, kFlute, kPiano};
constexpr double kQuietRms = 0.02;
constexpr double kLoudRms = 0.4;
constexpr double kPlainRms = 0.12;
constexpr double kTwoPi = 2.0 * std::numbers::pi;

struct Recipe {
    std::size_t primary;
    std::optional<std::size_t> secondary;
    bool beats;
    int level;  // 0 quiet, 1 loud, 2 plain
};

Recipe recipe_for(std::size_t i) {
    Recipe r;
    r.primary = kSourceKinds[i % 4];
    if ((i / 8) % 2 == 1) r.secondary = kSourceKinds[(i + 2) % 4];
    r.beats = (i / 4) % 2 == 1;
    // Every source meets every level within each block of 12 or more clips.
    r.level = static_cast<int>((i + i / 4) % 3);
    return r;
}

double rms(const std::vector<double>& x) {
    double acc = 0.0;
    for (double v : x) acc += v * v;
    return std::sqrt(acc / static_cast<double>(x.size()));
}

void normalize_rms(std::vector<double>& x, double target) {
    const double r = rms(x);
    if (r > 0.0) {
        for (double& v : x) v *= target / r;
    }
}

std::vector<double> pure_tone(std::size_t n, std::mt19937_64& rng) {
    const double f = std::uniform_real_distribution<double>(220.0, 880.0)(rng);
    const double phase = std::uniform_real_distribution<double>(0.0, kTwoPi)(rng);
    std::vector<double> x(n);
    for (std::size_t i = 0; i < n; ++i) x[i] = std::sin(kTwoPi * f * static_cast<double>(i) / kSampleRate + phase);
    return x;
}

// White noise through an RBJ constant-peak bandpass biquad.
std::vector<double> band_noise(std::size_t n, std::mt19937_64& rng) {
    const double fc = std::uniform_real_distribution<double>(1500.0, 4500.0)(rng);
    const double q = 1.5;
    const double w0 = kTwoPi * fc / kSampleRate;
    const double alpha = std::sin(w0) / (2.0 * q);
    const double a0 = 1.0 + alpha;
    const double b0 = alpha / a0, b2 = -alpha / a0;
    const double a1 = -2.0 * std::cos(w0) / a0, a2 = (1.0 - alpha) / a0;
    std::normal_distribution<double> gauss(0.0, 1.0);
    std::vector<double> x(n);
    double x1 = 0, x2 = 0, y1 = 0, y2 = 0;
    for (std::size_t i = 0; i < n; ++i) {
        const double in = gauss(rng);
        const double y = b0 * in + b2 * x2 - a1 * y1 - a2 * y2;
        x2 = x1;
        x1 = in;
        y2 = y1;
        y1 = y;
        x[i] = y;
    }
    return x;
}

// Sustained harmonic stack with vibrato and a slow swell.
std::vector<double> flute_like(std::size_t n, std::mt19937_64& rng) {
    const double f0 = std::uniform_real_distribution<double>(300.0, 700.0)(rng);
    const double vib = std::uniform_real_distribution<double>(4.0, 6.0)(rng);
    std::vector<double> x(n);
    double phase = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        const double t = static_cast<double>(i) / kSampleRate;
        const double f = f0 * (1.0 + 0.006 * std::sin(kTwoPi * vib * t));
        phase += kTwoPi * f / kSampleRate;
        const double env = 1.0 - std::exp(-t / 0.15);
        double s = 0.0;
        for (int k = 1; k <= 4; ++k) s += std::sin(k * phase) / (k * k);
        x[i] = env * s;
    }
    return x;
}

// Retriggered harmonic stack with fast exponential decay.
std::vector<double> piano_like(std::size_t n, std::mt19937_64& rng) {
    const double f0 = std::uniform_real_distribution<double>(110.0, 440.0)(rng);
    const double period = std::uniform_real_distribution<double>(0.3, 0.5)(rng);
    std::vector<double> x(n);
    for (std::size_t i = 0; i < n; ++i) {
        const double t = static_cast<double>(i) / kSampleRate;
        const double local = std::fmod(t, period);
        const double env = std::exp(-local / 0.12);
        double s = 0.0;
        for (int k = 1; k <= 8; ++k) s += std::sin(kTwoPi * k * f0 * t) / k;
        x[i] = env * s;
    }
    return x;
}

// Kick drum (decaying low sine) plus a short noise click on every beat.
std::vector<double> kick_track(std::size_t n, std::mt19937_64& rng) {
    const double bpm = std::uniform_real_distribution<double>(100.0, 140.0)(rng);
    const double f_kick = std::uniform_real_distribution<double>(50.0, 70.0)(rng);
    const double period = 60.0 / bpm;
    std::normal_distribution<double> gauss(0.0, 1.0);
    std::vector<double> x(n);
    for (std::size_t i = 0; i < n; ++i) {
        const double local = std::fmod(static_cast<double>(i) / kSampleRate, period);
        x[i] = std::exp(-local / 0.08) * std::sin(kTwoPi * f_kick * local) + 0.5 * std::exp(-local / 0.004) * gauss(rng);
    }
    return x;
}

std::vector<double> source(std::size_t kind, std::size_t n, std::mt19937_64& rng) {
    switch (kind) {
        case kTone: return pure_tone(n, rng);
        case kNoise: return band_noise(n, rng);
        case kFlute: return flute_like(n, rng);
        default: return piano_like(n, rng);
    }
}

std::mt19937_64 clip_rng(std::uint64_t seed, std::size_t index) {
    std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                      static_cast<std::uint32_t>(index), 0x5EEDu};
    return std::mt19937_64(seq);
}

}  // namespace

const std::vector<std::string>& synth_tag_names() {
    static const std::vector<std::string> names{"tone", "noise", "beats", "quiet", "loud", "flute", "piano"};
    return names;
}

std::vector<double> synth_clip_tags(std::size_t index) {
    const Recipe r = recipe_for(index);
    std::vector<double> tags(kTagCount, 0.0);
    tags[r.primary] = 1.0;
    if (r.secondary) tags[*r.secondary] = 1.0;
    if (r.beats) tags[kBeats] = 1.0;
    if (r.level == 0) tags[kQuiet] = 1.0;
    if (r.level == 1) tags[kLoud] = 1.0;
    return tags;
}

std::vector<double> synth_clip_audio(const SynthSpec& spec, std::size_t index) {
    if (spec.duration_seconds <= 0.0) throw ConfigError("synthetic clip duration must be positive");
    const auto n = static_cast<std::size_t>(std::llround(spec.duration_seconds * kSampleRate));
    const Recipe r = recipe_for(index);
    auto rng = clip_rng(spec.seed, index);

    std::vector<double> x = source(r.primary, n, rng);
    normalize_rms(x, 1.0);
    if (r.secondary) {
        std::vector<double> y = source(*r.secondary, n, rng);
        normalize_rms(y, 0.7);
        for (std::size_t i = 0; i < n; ++i) x[i] += y[i];
    }
    if (r.beats) {
        std::vector<double> k = kick_track(n, rng);
        normalize_rms(k, 0.8);
        for (std::size_t i = 0; i < n; ++i) x[i] += k[i];
    }
    const double target = r.level == 0 ? kQuietRms : r.level == 1 ? kLoudRms : kPlainRms;
    // Hard clipping at full scale eats level, so push the gain until the
    // clipped signal reaches the target.
    normalize_rms(x, target);
    for (int iter = 0; iter < 20; ++iter) {
        std::vector<double> clipped = x;
        for (double& v : clipped) v = std::clamp(v, -1.0, 1.0);
        const double got = rms(clipped);
        if (got >= target * 0.999) {
            x = std::move(clipped);
            break;
        }
        for (double& v : x) v *= target / got;
        if (iter == 19) x = std::move(clipped);
    }
    for (double& v : x) v = std::clamp(v, -1.0, 1.0);
    return x;
}

SynthSummary synth_corpus(const SynthSpec& spec, const std::filesystem::path& root) {
    if (spec.n_clips == 0) throw ConfigError("synthetic corpus needs at least one clip");
    std::error_code ec;
    std::filesystem::create_directories(root / "audio", ec);
    if (ec) throw IoError("cannot create corpus directory " + (root / "audio").string() + ": " + ec.message());

    SynthSummary summary;
    summary.csv_path = root / "annotations.csv";
    summary.n_clips = spec.n_clips;
    summary.tag_counts.assign(kTagCount, 0);

    std::ofstream csv(summary.csv_path, std::ios::trunc);
    if (!csv) throw IoError("cannot write " + summary.csv_path.string());
    csv << "clip_id,path";
    for (const auto& name : synth_tag_names()) csv << ',' << name;
    csv << '\n';

    for (std::size_t i = 0; i < spec.n_clips; ++i) {
        char id[32];
        std::snprintf(id, sizeof id, "clip_%04zu", i);
        const std::string rel = std::string("audio/") + id + ".wav";
        write_wav16(root / rel, synth_clip_audio(spec, i), kSampleRate);
        const auto tags = synth_clip_tags(i);
        csv << id << ',' << rel;
        for (std::size_t t = 0; t < tags.size(); ++t) {
            csv << ',' << (tags[t] > 0.5 ? 1 : 0);
            summary.tag_counts[t] += tags[t] > 0.5 ? 1 : 0;
        }
        csv << '\n';
    }
    if (!csv) throw IoError("failed writing " + summary.csv_path.string());
    return summary;
}

}  // namespace sattag
