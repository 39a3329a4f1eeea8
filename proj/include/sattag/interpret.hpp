#pragma once

#include "sattag/dsp.hpp"
#include "sattag/model.hpp"

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

namespace sattag {

// One score per input time bin (CLS excluded).
struct HeatMap {
    std::string label;  // tag name or "attention"
    std::vector<double> scores;
    // Head-summed CLS-to-CLS attention; attention maps only.
    double cls_self_mass = 0.0;
    // Range mapped onto the rendered strip.
    double render_min = 0.0;
    double render_max = 0.0;
};

// Last encoder layer, heads summed, CLS query row over the non-CLS keys.
// Input is a single clip: [1×1×96×T] or [1×1×L]. Att back-end only.
HeatMap attention_heat_map(Model& model, const Tensor& input);

enum class ContributionRoute {
    // Full rerun of the last layer per time step with the CLS attention row
    // forced one-hot.
    Rerun,
    // Same quantity from the closed form: a one-hot CLS row makes the CLS
    // attention output equal to the projected value row at t, so only the
    // CLS position's norm / feed-forward / classifier path is recomputed.
    ClsPath,
};

// Probability of each requested tag with the last layer's CLS attention
// pinned to each time step in turn, identically across heads.
std::vector<HeatMap> tagwise_contributions(Model& model, const Tensor& input, const std::vector<std::string>& tags,
                                           const std::vector<std::string>& tag_names,
                                           ContributionRoute route = ContributionRoute::ClsPath);
HeatMap tagwise_contribution(Model& model, const Tensor& input, const std::string& tag,
                             const std::vector<std::string>& tag_names,
                             ContributionRoute route = ContributionRoute::ClsPath);

// Time-axis concatenation of two log-mels with equal bin counts.
MelSpectrogram concat_inputs(const MelSpectrogram& a, const MelSpectrogram& b);
// [1×1×n_mels×frames]
Tensor spec_input(const MelSpectrogram& m);

inline constexpr std::size_t kHeatStripHeight = 16;

struct Image {
    std::size_t width = 0;
    std::size_t height = 0;
    std::vector<std::uint8_t> rgb;
};

// Spectrogram band on top (grayscale, low bins at the bottom), heat strip
// below in red. Columns follow the heat map; the spectrogram is sampled to
// match when its frame count differs.
Image render_heat_map_image(const HeatMap& map, const MelSpectrogram& spec,
                            std::size_t strip_height = kHeatStripHeight);
std::vector<std::uint8_t> encode_ppm(const Image& image);

// Writes <path> as PPM P6 and the raw scores next to it as <stem>.csv.
void render_heat_map(const HeatMap& map, const MelSpectrogram& spec, const std::filesystem::path& path);
void write_scores_csv(const HeatMap& map, const std::filesystem::path& path);
std::vector<double> read_scores_csv(const std::filesystem::path& path);

}  // namespace sattag
