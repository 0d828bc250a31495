#include "toad/cascade.hpp"

#include <algorithm>
#include <cmath>

#include "toad/errors.hpp"

namespace toad {

using nn::Tensor;

std::vector<std::pair<int, int>> cascade_dims(const CascadeModel& model, int target_h, int target_w) {
    std::vector<std::pair<int, int>> dims;
    const int rf = model.net.receptive_field();
    for (double f : model.schedule.factors) {
        const int h = scaled_dim(target_h, f);
        const int w = scaled_dim(target_w, f);
        if (h < rf || w < rf)
            throw ShapeTooSmall("a " + std::to_string(target_h) + "x" + std::to_string(target_w) +
                                " target gives a " + std::to_string(h) + "x" + std::to_string(w) +
                                " map at scale factor " + std::to_string(f) + ", below the receptive field " +
                                std::to_string(rf));
        dims.emplace_back(h, w);
    }
    return dims;
}

namespace {

void check_request(const CascadeModel& model, const GenerationRequest& req) {
    if (!model.trained()) throw UntrainedModel("the cascade has untrained scales");
    if (!(req.temperature >= 0.0)) throw Error("temperature must be non-negative");
    if (req.target_w < 1 || (req.target_h && *req.target_h < 1)) throw ShapeTooSmall("target dims must be positive");
}

bool matches_training(const CascadeModel& model, const std::vector<std::pair<int, int>>& dims) {
    for (std::size_t k = 0; k < dims.size(); ++k)
        if (dims[k].first != model.scales[k].height || dims[k].second != model.scales[k].width) return false;
    return true;
}

GenerationResult run(const CascadeModel& model, const GenerationRequest& req, const InjectionSpec* injection) {
    check_request(model, req);
    const int target_h = req.target_h.value_or(model.train_height);
    const auto dims = cascade_dims(model, target_h, req.target_w);
    const int channels = model.channels();
    const int pad = model.net.padding();

    if (injection) {
        if (injection->scale_index < 0 || injection->scale_index >= static_cast<int>(dims.size()))
            throw Error("injection scale " + std::to_string(injection->scale_index) + " is outside the cascade");
        const auto [eh, ew] = dims[static_cast<std::size_t>(injection->scale_index)];
        if (injection->map.height() != eh || injection->map.width() != ew)
            throw MaskShapeMismatch(eh, ew, injection->map.height(), injection->map.width());
    }

    // Zero temperature follows the reconstruction path: fixed noise at the coarsest scale
    // when the dims match training, no noise anywhere else.
    const bool reconstruction = req.temperature == 0.0 && matches_training(model, dims);
    std::mt19937_64 rng(req.rng_seed);
    Tensor<float> out;
    for (std::size_t k = 0; k < dims.size(); ++k) {
        const auto [h, w] = dims[k];
        const auto& scale = model.scales[k];
        const Tensor<float> prev = k == 0 ? Tensor<float>(nn::Shape{1, channels, h, w}) : nn::resize_bilinear(out, h, w);
        Tensor<float> z;
        if (reconstruction)
            z = k == 0 ? scale.reconstruction_noise : Tensor<float>(prev.shape());
        else
            z = sample_noise(channels, h, w, scale.noise_amp * req.temperature, rng);
        out = generator_forward(scale, prev, z, pad);
        if (injection && static_cast<int>(k) == injection->scale_index) apply_injection(out, *injection, channels);
    }
    SoftTokenMap map = channel_softmax(to_map(out));
    LevelGrid grid = decode_argmax(map);
    return {std::move(grid), std::move(map)};
}

}  // namespace

GenerationResult generate(const CascadeModel& model, const GenerationRequest& req) {
    return run(model, req, req.injection ? &*req.injection : nullptr);
}

GenerationResult generate_with_injection(const CascadeModel& model, const GenerationRequest& req) {
    if (!req.injection) throw Error("request carries no injection");
    return run(model, req, &*req.injection);
}

void apply_injection(Tensor<float>& map, const InjectionSpec& spec, int channels) {
    const auto s = map.shape();
    if (spec.map.height() != s.h || spec.map.width() != s.w)
        throw MaskShapeMismatch(s.h, s.w, spec.map.height(), spec.map.width());

    if (spec.blend == InjectionSpec::Blend::replace_all) {
        for (int r = 0; r < s.h; ++r)
            for (int c = 0; c < s.w; ++c) {
                const int t = spec.map.at(r, c);
                if (t < 0 || t >= channels) throw Error("injected grid holds a token outside the alphabet");
                for (int ch = 0; ch < channels; ++ch) map(0, ch, r, c) = ch == t ? 1.0f : 0.0f;
            }
        return;
    }

    if (spec.token < 0 || spec.token >= channels) throw Error("injected token outside the alphabet");
    float m = 0.0f;
    for (float v : map.span()) m = std::max(m, std::abs(v));
    m = std::max(m, 1e-6f);
    for (int r = 0; r < s.h; ++r)
        for (int c = 0; c < s.w; ++c) {
            if (spec.map.at(r, c) == 0) continue;
            map(0, spec.token, r, c) = m;
            float competing = 0.0f;
            for (int ch = 0; ch < channels; ++ch)
                if (ch != spec.token) competing = std::max(competing, map(0, ch, r, c));
            // Competitors keep their relative order but stay well below the injected value.
            if (competing > 0.0f) {
                const float shrink = std::min(1.0f, 0.5f * m / competing);
                for (int ch = 0; ch < channels; ++ch)
                    if (ch != spec.token) map(0, ch, r, c) *= shrink;
            }
        }
}

namespace {

std::vector<std::pair<int, int>> tap_range(int src, int dst) {
    // Source index range [lo, hi] read by each destination index.
    std::vector<std::pair<int, int>> out(static_cast<std::size_t>(dst));
    for (int i = 0; i < dst; ++i) {
        if (dst == 1 || src == 1 || src == dst) {
            const int j = src == dst ? i : 0;
            out[static_cast<std::size_t>(i)] = {j, j};
            continue;
        }
        const double pos = static_cast<double>(i) * (src - 1) / (dst - 1);
        const int lo = std::clamp(static_cast<int>(std::floor(pos)), 0, src - 1);
        out[static_cast<std::size_t>(i)] = {lo, std::min(lo + 1, src - 1)};
    }
    return out;
}

LevelGrid dilate(const LevelGrid& g, int radius) {
    LevelGrid out(g.height(), g.width());
    for (int r = 0; r < g.height(); ++r)
        for (int c = 0; c < g.width(); ++c) {
            if (!g.at(r, c)) continue;
            for (int y = std::max(0, r - radius); y <= std::min(g.height() - 1, r + radius); ++y)
                for (int x = std::max(0, c - radius); x <= std::min(g.width() - 1, c + radius); ++x) out.at(y, x) = 1;
        }
    return out;
}

}  // namespace

LevelGrid influence_mask(const CascadeModel& model, int target_h, int target_w, const InjectionSpec& spec) {
    const auto dims = cascade_dims(model, target_h, target_w);
    const auto k0 = static_cast<std::size_t>(spec.scale_index);
    if (k0 >= dims.size()) throw Error("injection scale outside the cascade");
    LevelGrid changed(dims[k0].first, dims[k0].second);
    if (spec.map.height() != changed.height() || spec.map.width() != changed.width())
        throw MaskShapeMismatch(changed.height(), changed.width(), spec.map.height(), spec.map.width());
    for (int r = 0; r < changed.height(); ++r)
        for (int c = 0; c < changed.width(); ++c)
            changed.at(r, c) = spec.blend == InjectionSpec::Blend::replace_all || spec.map.at(r, c) != 0;
    // replace_channel rescales by the global maximum, but only at masked pixels.
    for (std::size_t k = k0 + 1; k < dims.size(); ++k) {
        const auto [h, w] = dims[k];
        const auto rows = tap_range(changed.height(), h);
        const auto cols = tap_range(changed.width(), w);
        LevelGrid up(h, w);
        for (int r = 0; r < h; ++r)
            for (int c = 0; c < w; ++c) {
                const auto [r0, r1] = rows[static_cast<std::size_t>(r)];
                const auto [c0, c1] = cols[static_cast<std::size_t>(c)];
                up.at(r, c) = changed.at(r0, c0) || changed.at(r0, c1) || changed.at(r1, c0) || changed.at(r1, c1);
            }
        changed = dilate(up, model.net.padding());
    }
    return changed;
}

LevelGrid upsample_mask(const LevelGrid& mask, int h, int w) {
    SoftTokenMap m(1, mask.height(), mask.width());
    for (int r = 0; r < mask.height(); ++r)
        for (int c = 0; c < mask.width(); ++c) m.at(0, r, c) = mask.at(r, c) != 0 ? 1.0 : 0.0;
    const auto up = bilinear_resize(m, h, w);
    LevelGrid out(h, w);
    for (int r = 0; r < h; ++r)
        for (int c = 0; c < w; ++c) out.at(r, c) = up.at(0, r, c) >= 0.5 ? 1 : 0;
    return out;
}

double mask_iou(const LevelGrid& a, const LevelGrid& b) {
    if (a.height() != b.height() || a.width() != b.width()) throw ShapeMismatch("masks differ in size");
    long inter = 0;
    long uni = 0;
    for (std::size_t i = 0; i < a.cells().size(); ++i) {
        const bool x = a.cells()[i] != 0;
        const bool y = b.cells()[i] != 0;
        inter += x && y;
        uni += x || y;
    }
    return uni == 0 ? 1.0 : static_cast<double>(inter) / static_cast<double>(uni);
}

LevelGrid token_mask(const LevelGrid& grid, int token) {
    LevelGrid out(grid.height(), grid.width());
    for (int r = 0; r < grid.height(); ++r)
        for (int c = 0; c < grid.width(); ++c) out.at(r, c) = grid.at(r, c) == token ? 1 : 0;
    return out;
}

}  // namespace toad
