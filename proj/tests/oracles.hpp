#pragma once

// Reference implementations written independently of the library code paths.
// They favour directness over speed.

#include <cmath>
#include <map>
#include <vector>

#include "toad/corpus.hpp"

namespace oracle {

// Bilinear resize as an explicit tent-kernel sum over every source pixel.
inline std::vector<std::vector<std::vector<double>>> tent_resize(const toad::SoftTokenMap& src, int out_h, int out_w) {
    const int h = src.height();
    const int w = src.width();
    std::vector<std::vector<std::vector<double>>> out(
        static_cast<std::size_t>(src.channels()),
        std::vector<std::vector<double>>(static_cast<std::size_t>(out_h), std::vector<double>(static_cast<std::size_t>(out_w), 0.0)));
    for (int i = 0; i < out_h; ++i) {
        const double y = out_h > 1 ? i * double(h - 1) / double(out_h - 1) : 0.0;
        for (int j = 0; j < out_w; ++j) {
            const double x = out_w > 1 ? j * double(w - 1) / double(out_w - 1) : 0.0;
            for (int s = 0; s < h; ++s) {
                const double wy = std::max(0.0, 1.0 - std::abs(y - s));
                if (wy == 0.0) continue;
                for (int t = 0; t < w; ++t) {
                    const double wx = std::max(0.0, 1.0 - std::abs(x - t));
                    if (wx == 0.0) continue;
                    for (int c = 0; c < src.channels(); ++c)
                        out[static_cast<std::size_t>(c)][static_cast<std::size_t>(i)][static_cast<std::size_t>(j)] +=
                            wy * wx * src.at(c, s, t);
                }
            }
        }
    }
    return out;
}

// resize -> keep highest-ranked supported tokens -> softmax.
inline toad::SoftTokenMap downsample(const toad::LevelGrid& grid, const toad::TokenAlphabet& alphabet, int out_h,
                                     int out_w) {
    const int channels = alphabet.size();
    toad::SoftTokenMap onehot(channels, grid.height(), grid.width());
    for (int r = 0; r < grid.height(); ++r)
        for (int c = 0; c < grid.width(); ++c) onehot.at(grid.at(r, c), r, c) = 1.0;
    auto resized = tent_resize(onehot, out_h, out_w);
    toad::SoftTokenMap out(channels, out_h, out_w);
    for (int i = 0; i < out_h; ++i) {
        for (int j = 0; j < out_w; ++j) {
            int best = -1;
            for (int c = 0; c < channels; ++c)
                if (resized[c][i][j] > 1e-8 && alphabet.rank(c) > best) best = alphabet.rank(c);
            std::vector<double> kept(static_cast<std::size_t>(channels), 0.0);
            for (int c = 0; c < channels; ++c)
                if (resized[c][i][j] > 1e-8 && alphabet.rank(c) == best) kept[static_cast<std::size_t>(c)] = resized[c][i][j];
            double z = 0.0;
            for (double v : kept) z += std::exp(v);
            for (int c = 0; c < channels; ++c) out.at(c, i, j) = std::exp(kept[static_cast<std::size_t>(c)]) / z;
        }
    }
    return out;
}

// Smoothed, weighted KL between two explicit count tables.
inline double smoothed_kl(const std::map<std::string, double>& p_counts, const std::map<std::string, double>& q_counts,
                          double w, double eps) {
    std::map<std::string, std::pair<double, double>> table;
    for (const auto& [k, v] : p_counts) table[k].first = v;
    for (const auto& [k, v] : q_counts) table[k].second = v;
    double p_total = 0.0;
    double q_total = 0.0;
    for (const auto& [k, pq] : table) {
        p_total += pq.first;
        q_total += pq.second;
    }
    const double n = static_cast<double>(table.size());
    double forward = 0.0;
    double backward = 0.0;
    for (const auto& [k, pq] : table) {
        const double p = (pq.first + eps) / (p_total + eps * n);
        const double q = (pq.second + eps) / (q_total + eps * n);
        forward += p * std::log(p / q);
        backward += q * std::log(q / p);
    }
    return w * forward + (1.0 - w) * backward;
}

}  // namespace oracle
