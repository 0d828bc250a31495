#pragma once

// Running a trained cascade: arbitrary-size generation and token-map injection.

#include <cstdint>
#include <optional>
#include <utility>
#include <vector>

#include "toad/gan.hpp"

namespace toad {

struct InjectionSpec {
    enum class Blend { replace_channel, replace_all };

    int scale_index = 0;  // injected right after this scale's generator
    int token = 0;        // replace_channel: alphabet index of the injected token
    // replace_channel: binary mask (non-zero = on). replace_all: a token grid.
    LevelGrid map;
    Blend blend = Blend::replace_channel;
};

struct GenerationRequest {
    int target_w = 0;
    std::optional<int> target_h;  // defaults to the training height
    double temperature = 1.0;
    std::uint64_t rng_seed = 0;
    std::optional<InjectionSpec> injection;
};

struct GenerationResult {
    LevelGrid grid;
    SoftTokenMap map;
};

// Per-scale (h, w) for a full-size target, coarsest first.
std::vector<std::pair<int, int>> cascade_dims(const CascadeModel& model, int target_h, int target_w);

GenerationResult generate(const CascadeModel& model, const GenerationRequest& req);
GenerationResult generate_with_injection(const CascadeModel& model, const GenerationRequest& req);

// Applies an injection to an intermediate 1 x C x H x W map in place.
void apply_injection(nn::Tensor<float>& map, const InjectionSpec& spec, int channels);

// Full-scale pixels whose value may depend on the injected region; every other pixel is
// bit-identical with and without the injection under the same seed.
LevelGrid influence_mask(const CascadeModel& model, int target_h, int target_w, const InjectionSpec& spec);

// Bilinearly upsamples a binary mask and thresholds it at 0.5.
LevelGrid upsample_mask(const LevelGrid& mask, int h, int w);

// |A n B| / |A u B| of two binary grids; 1 when both are empty.
double mask_iou(const LevelGrid& a, const LevelGrid& b);

LevelGrid token_mask(const LevelGrid& grid, int token);

}  // namespace toad
