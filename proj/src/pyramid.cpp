#include "toad/pyramid.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>

#include <nlohmann/json.hpp>

#include "toad/errors.hpp"

namespace toad {

int scaled_dim(int dim, double factor) {
    // The epsilon keeps exact products such as 16 * 0.5 from landing just below .5.
    const auto v = static_cast<int>(std::floor(dim * factor + 0.5 + 1e-9));
    return std::max(v, 1);
}

namespace {

struct Tap {
    int lo;
    int hi;
    double frac;  // weight of hi
};

std::vector<Tap> corner_aligned_taps(int src, int dst) {
    std::vector<Tap> taps(static_cast<std::size_t>(dst));
    for (int i = 0; i < dst; ++i) {
        if (dst == 1 || src == 1) {
            taps[static_cast<std::size_t>(i)] = {0, 0, 0.0};
            continue;
        }
        const double pos = static_cast<double>(i) * (src - 1) / (dst - 1);
        int lo = static_cast<int>(std::floor(pos));
        lo = std::clamp(lo, 0, src - 1);
        const int hi = std::min(lo + 1, src - 1);
        taps[static_cast<std::size_t>(i)] = {lo, hi, pos - lo};
    }
    return taps;
}

}  // namespace

SoftTokenMap bilinear_resize(const SoftTokenMap& map, int target_h, int target_w) {
    if (target_h < 1 || target_w < 1) throw Error("resize target must be at least 1x1");
    if (target_h == map.height() && target_w == map.width()) return map;

    const auto rows = corner_aligned_taps(map.height(), target_h);
    const auto cols = corner_aligned_taps(map.width(), target_w);
    SoftTokenMap out(map.channels(), target_h, target_w);
    for (int c = 0; c < map.channels(); ++c) {
        for (int i = 0; i < target_h; ++i) {
            const auto& ry = rows[static_cast<std::size_t>(i)];
            for (int j = 0; j < target_w; ++j) {
                const auto& rx = cols[static_cast<std::size_t>(j)];
                const double top = map.at(c, ry.lo, rx.lo) * (1.0 - rx.frac) + map.at(c, ry.lo, rx.hi) * rx.frac;
                const double bottom = map.at(c, ry.hi, rx.lo) * (1.0 - rx.frac) + map.at(c, ry.hi, rx.hi) * rx.frac;
                out.at(c, i, j) = top * (1.0 - ry.frac) + bottom * ry.frac;
            }
        }
    }
    return out;
}

SoftTokenMap channel_softmax(const SoftTokenMap& map) {
    SoftTokenMap out(map.channels(), map.height(), map.width());
    for (int h = 0; h < map.height(); ++h) {
        for (int w = 0; w < map.width(); ++w) {
            double peak = map.at(0, h, w);
            for (int c = 1; c < map.channels(); ++c) peak = std::max(peak, map.at(c, h, w));
            double total = 0.0;
            for (int c = 0; c < map.channels(); ++c) {
                const double e = std::exp(map.at(c, h, w) - peak);
                out.at(c, h, w) = e;
                total += e;
            }
            for (int c = 0; c < map.channels(); ++c) out.at(c, h, w) /= total;
        }
    }
    return out;
}

SoftTokenMap hierarchical_downsample(const SoftTokenMap& onehot, const TokenAlphabet& alphabet,
                                     double factor) {
    if (!(factor > 0.0 && factor <= 1.0)) throw Error("downsample factor must be in (0, 1]");
    if (onehot.channels() != alphabet.size())
        throw ShapeMismatch("map has " + std::to_string(onehot.channels()) + " channels but the alphabet has " +
                            std::to_string(alphabet.size()) + " tokens");

    auto resized = bilinear_resize(onehot, scaled_dim(onehot.height(), factor), scaled_dim(onehot.width(), factor));
    for (int h = 0; h < resized.height(); ++h) {
        for (int w = 0; w < resized.width(); ++w) {
            int top_rank = -1;
            for (int c = 0; c < resized.channels(); ++c)
                if (resized.at(c, h, w) > kSupportThreshold) top_rank = std::max(top_rank, alphabet.rank(c));
            if (top_rank < 0)
                throw EmptySupport("no token has support at (" + std::to_string(h) + ", " + std::to_string(w) + ")");
            for (int c = 0; c < resized.channels(); ++c)
                if (!(resized.at(c, h, w) > kSupportThreshold && alphabet.rank(c) == top_rank)) resized.at(c, h, w) = 0.0;
        }
    }
    return channel_softmax(resized);
}

void ScaleSchedule::validate() const {
    if (factors.empty()) throw Error("scale schedule is empty");
    for (std::size_t i = 0; i < factors.size(); ++i) {
        if (!(factors[i] > 0.0 && factors[i] <= 1.0)) throw Error("scale factors must lie in (0, 1]");
        if (i > 0 && !(factors[i] > factors[i - 1])) throw Error("scale factors must be strictly increasing");
    }
    if (factors.back() != 1.0) throw Error("the last scale factor must be exactly 1.0");
}

ScalePolicy ScalePolicy::kart_default() {
    return {Kind::fixed, {0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9, 1.0}, 0.75};
}

ScaleSchedule compute_scales(const LevelGrid& level, int receptive_field, const ScalePolicy& policy) {
    if (receptive_field < 1) throw Error("receptive field must be at least 1");
    const int height = level.height();
    if (policy.kind == ScalePolicy::Kind::fixed) {
        ScaleSchedule schedule{policy.factors};
        schedule.validate();
        return schedule;
    }

    if (height < receptive_field)
        throw LevelTooSmall("level height " + std::to_string(height) + " is below the receptive field " +
                            std::to_string(receptive_field));
    // Coarsest height: half the level, kept within [rf, 2 rf] so the
    // receptive field covers at least half of it.
    const int coarse = std::min({std::max((height + 1) / 2, receptive_field), 2 * receptive_field, height});
    const double lowest = static_cast<double>(coarse) / height;
    if (lowest >= 1.0) return ScaleSchedule{{1.0}};

    const double ratio = policy.max_step_ratio;
    if (!(ratio > 0.0 && ratio < 1.0)) throw Error("automatic scale ratio must be in (0, 1)");
    const int steps = static_cast<int>(std::ceil(std::log(lowest) / std::log(ratio) - 1e-12));
    ScaleSchedule schedule;
    for (int k = 0; k <= steps; ++k) {
        const double f = std::pow(lowest, static_cast<double>(steps - k) / steps);
        schedule.factors.push_back(k == steps ? 1.0 : f);
    }
    schedule.validate();
    return schedule;
}

ScalePyramid build_pyramid(const LevelGrid& level, const TokenAlphabet& alphabet, const ScaleSchedule& schedule) {
    schedule.validate();
    const auto onehot = encode_onehot(level, alphabet);
    ScalePyramid pyramid{schedule, {}};
    pyramid.maps.reserve(schedule.factors.size());
    for (double f : schedule.factors) pyramid.maps.push_back(hierarchical_downsample(onehot, alphabet, f));
    return pyramid;
}

void dump_pyramid(const ScalePyramid& pyramid, const TokenAlphabet& alphabet, const std::filesystem::path& dir) {
    std::filesystem::create_directories(dir);
    nlohmann::json manifest{{"factors", pyramid.schedule.factors}, {"scales", nlohmann::json::array()}};
    for (std::size_t i = 0; i < pyramid.maps.size(); ++i) {
        const auto& m = pyramid.maps[i];
        const auto name = "scale_" + std::to_string(i) + ".txt";
        std::ofstream(dir / name) << render_level(decode_argmax(m), alphabet);
        manifest["scales"].push_back(
            {{"index", i}, {"factor", pyramid.schedule.factors[i]}, {"height", m.height()}, {"width", m.width()}, {"file", name}});
    }
    manifest["alphabet"] = alphabet.to_json();
    std::ofstream(dir / "manifest.json") << manifest.dump(2) << '\n';
}

}  // namespace toad
