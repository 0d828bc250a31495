#pragma once

#include <filesystem>
#include <vector>

#include "toad/corpus.hpp"

namespace toad {

// Values below this count as absent when selecting the tokens at a pixel.
inline constexpr double kSupportThreshold = 1e-8;

// round-half-up of dim * factor, never below 1.
int scaled_dim(int dim, double factor);

// Channel-wise bilinear interpolation with corner-aligned sampling. The output
// is not renormalized.
SoftTokenMap bilinear_resize(const SoftTokenMap& map, int target_h, int target_w);

// Resize, keep only the highest-ranked tokens with support at each pixel, then
// softmax across channels.
SoftTokenMap hierarchical_downsample(const SoftTokenMap& onehot, const TokenAlphabet& alphabet,
                                     double factor);

// Per-pixel softmax over channels.
SoftTokenMap channel_softmax(const SoftTokenMap& map);

struct ScaleSchedule {
    std::vector<double> factors;  // lowest scale first, last is 1.0

    int coarsest_index() const { return 0; }
    int size() const { return static_cast<int>(factors.size()); }
    void validate() const;
};

struct ScalePolicy {
    enum class Kind { fixed, automatic };

    Kind kind = Kind::fixed;
    std::vector<double> factors{0.5, 0.75, 0.88, 1.0};
    double max_step_ratio = 0.75;  // automatic: consecutive factors differ by at least this ratio

    static ScalePolicy platformer_default() { return {}; }
    static ScalePolicy kart_default();
    static ScalePolicy automatic() { return {Kind::automatic, {}, 0.75}; }
};

ScaleSchedule compute_scales(const LevelGrid& level, int receptive_field, const ScalePolicy& policy);

struct ScalePyramid {
    ScaleSchedule schedule;
    std::vector<SoftTokenMap> maps;  // aligned with schedule.factors
};

ScalePyramid build_pyramid(const LevelGrid& level, const TokenAlphabet& alphabet,
                           const ScaleSchedule& schedule);

// Writes scale_<i>.txt (argmax decoded) per scale and manifest.json.
void dump_pyramid(const ScalePyramid& pyramid, const TokenAlphabet& alphabet,
                  const std::filesystem::path& dir);

}  // namespace toad
